"""Command-line interface.

Subcommands: phantom, project, reconstruct, pipeline, align, misalign,
metrics. Exit codes: 0 success, 1 partial batch failure, 2 configuration
error. Pipeline settings resolve as defaults < config file < flags.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from cbctsim.errors import CbctsimError, ConfigError
from cbctsim.fdk import fdk_reconstruct, normalization_constant
from cbctsim.geometry import make_circular_trajectory, parse_key_values
from cbctsim.metrics import dice, psnr, rmse
from cbctsim.nifti import read_nifti, write_nifti
from cbctsim.phantom import load_specs, rasterize, shepp_logan_3d
from cbctsim.pipeline import (PipelineConfig, run_batch, run_misalign)
from cbctsim.projector import (forward_project, hu_to_attenuation,
                               load_projections, save_projections)
from cbctsim.resample import align_to_grid
from cbctsim.volume import GridSpec, LabelVolume


def _fmt(value: float) -> str:
    if value == float("inf"):
        return "inf"
    return f"{value:.6g}"


def _add_geometry_flags(p: argparse.ArgumentParser):
    p.add_argument("--n-projections", type=int, default=None)
    p.add_argument("--sad-mm", type=float, default=None)
    p.add_argument("--sdd-mm", type=float, default=None)
    p.add_argument("--det-pixels", type=int, nargs=2, metavar=("NU", "NV"), default=None)
    p.add_argument("--det-pitch-mm", type=float, nargs=2, metavar=("PU", "PV"), default=None)
    p.add_argument("--det-offset-mm", type=float, nargs=2, metavar=("OU", "OV"), default=None)


def _add_grid_flags(p: argparse.ArgumentParser):
    p.add_argument("--grid-dims", type=int, nargs=3, metavar=("NX", "NY", "NZ"), required=True)
    p.add_argument("--grid-spacing", type=float, nargs=3, metavar=("SX", "SY", "SZ"), required=True)
    p.add_argument("--grid-center", type=float, nargs=3, metavar=("CX", "CY", "CZ"),
                   default=[0.0, 0.0, 0.0])


def _geometry_from_args(args, n_p):
    kwargs = {}
    if args.sad_mm is not None:
        kwargs["sad"] = args.sad_mm
    if args.sdd_mm is not None:
        kwargs["sdd"] = args.sdd_mm
    if args.det_pixels is not None:
        kwargs["det_pixels"] = tuple(args.det_pixels)
    if args.det_pitch_mm is not None:
        kwargs["det_pitch"] = tuple(args.det_pitch_mm)
    if args.det_offset_mm is not None:
        kwargs["det_offset"] = tuple(args.det_offset_mm)
    return make_circular_trajectory(n_p, **kwargs)


def _cmd_phantom(args) -> int:
    if args.specs:
        specs = load_specs(args.specs)
    else:
        specs = shepp_logan_3d(radius_mm=args.radius_mm, density_scale=args.density_scale)
    grid = GridSpec.centered(args.grid_center, args.grid_dims, args.grid_spacing)
    write_nifti(rasterize(specs, grid), args.output)
    return 0


def _cmd_project(args) -> int:
    vol = read_nifti(args.input, as_labels=False)
    if args.hu:
        vol = hu_to_attenuation(vol, args.mu_water)
    if args.n_projections is None:
        raise ConfigError("project requires --n-projections")
    geom = _geometry_from_args(args, args.n_projections)
    center = np.asarray(args.center) if args.center else None
    stack = forward_project(vol, geom, isocenter=center)
    save_projections(stack, args.output)
    return 0


def _cmd_reconstruct(args) -> int:
    stack = load_projections(args.input)
    grid = GridSpec.centered(args.grid_center, args.grid_dims, args.grid_spacing)
    vol = fdk_reconstruct(stack, grid)
    write_nifti(vol, args.output)
    report = [
        f"n_projections={stack.geom.n_angles}",
        "grid_dims=" + " ".join(str(d) for d in grid.dims),
        "grid_spacing_mm=" + " ".join(repr(s) for s in grid.spacing),
        "kernel=ram-lak",
        f"normalization_constant={normalization_constant(stack.geom)!r}",
    ]
    Path(str(args.output) + ".report.txt").write_text("\n".join(report) + "\n")
    return 0


_PIPELINE_CONFIG_KEYS = {
    "quality_levels": lambda s: tuple(int(v) for v in s.replace(",", " ").split()),
    "extent_mm": lambda s: tuple(float(v) for v in s.replace(",", " ").split()),
    "voxel_mm": lambda s: tuple(float(v) for v in s.replace(",", " ").split()),
    "sad_mm": float,
    "sdd_mm": float,
    "det_nu": int,
    "det_nv": int,
    "pitch_u_mm": float,
    "pitch_v_mm": float,
    "offset_u_mm": float,
    "offset_v_mm": float,
    "mu_water": float,
    "centering": str,
    "seed": int,
}


def _pipeline_config(args) -> PipelineConfig:
    cfg: dict = {}
    if args.config:
        kv = parse_key_values(Path(args.config).read_text())
        unknown = set(kv) - set(_PIPELINE_CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        parsed = {k: _PIPELINE_CONFIG_KEYS[k](v) for k, v in kv.items()}
        cfg.update(parsed)

    det_nu = cfg.pop("det_nu", None)
    det_nv = cfg.pop("det_nv", None)
    pitch_u = cfg.pop("pitch_u_mm", None)
    pitch_v = cfg.pop("pitch_v_mm", None)
    off_u = cfg.pop("offset_u_mm", None)
    off_v = cfg.pop("offset_v_mm", None)

    kwargs = {}
    if "quality_levels" in cfg:
        kwargs["quality_levels"] = cfg["quality_levels"]
    if "extent_mm" in cfg:
        kwargs["recon_extent_mm"] = cfg["extent_mm"]
    if "voxel_mm" in cfg:
        kwargs["recon_voxel_mm"] = cfg["voxel_mm"]
    for key in ("sad_mm", "sdd_mm", "mu_water", "centering", "seed"):
        if key in cfg:
            kwargs[key] = cfg[key]
    if det_nu is not None and det_nv is not None:
        kwargs["det_pixels"] = (det_nu, det_nv)
    if pitch_u is not None and pitch_v is not None:
        kwargs["det_pitch_mm"] = (pitch_u, pitch_v)
    if off_u is not None and off_v is not None:
        kwargs["det_offset_mm"] = (off_u, off_v)

    # flags override the config file
    if args.quality_levels:
        kwargs["quality_levels"] = tuple(args.quality_levels)
    if args.extent_mm:
        kwargs["recon_extent_mm"] = tuple(args.extent_mm)
    if args.voxel_mm:
        kwargs["recon_voxel_mm"] = tuple(args.voxel_mm)
    if args.sad_mm is not None:
        kwargs["sad_mm"] = args.sad_mm
    if args.sdd_mm is not None:
        kwargs["sdd_mm"] = args.sdd_mm
    if args.det_pixels is not None:
        kwargs["det_pixels"] = tuple(args.det_pixels)
    if args.det_pitch_mm is not None:
        kwargs["det_pitch_mm"] = tuple(args.det_pitch_mm)
    if args.det_offset_mm is not None:
        kwargs["det_offset_mm"] = tuple(args.det_offset_mm)
    if args.mu_water is not None:
        kwargs["mu_water"] = args.mu_water
    if args.centering is not None:
        kwargs["centering"] = args.centering
    if args.seed is not None:
        kwargs["seed"] = args.seed
    if args.raw_attenuation:
        kwargs["input_is_hu"] = False
    kwargs["output_dir"] = args.output_dir
    return PipelineConfig(**kwargs)


def _cmd_pipeline(args) -> int:
    config = _pipeline_config(args)
    masks = args.mask or []
    if masks and len(masks) != len(args.ct):
        raise ConfigError("--mask must be given once per --ct (or not at all)")
    pairs = [(ct, masks[i] if masks else None) for i, ct in enumerate(args.ct)]
    result = run_batch(pairs, config)
    for ct, err in result.failed.items():
        print(f"FAILED {ct}\n{err}", file=sys.stderr)
    return 0 if result.ok else 1


def _cmd_align(args) -> int:
    ct = read_nifti(args.ct, as_labels=False)
    mask = read_nifti(args.mask, as_labels=True)
    ref = read_nifti(args.reference, as_labels=False)
    ct_aligned, mask_aligned = align_to_grid(ct, mask, ref.grid)
    write_nifti(ct_aligned, args.output_ct)
    write_nifti(mask_aligned, args.output_mask)
    return 0


def _cmd_misalign(args) -> int:
    run_misalign(args.ct, args.mask, args.alpha, args.mode, args.seed,
                 args.output_dir,
                 max_scale=args.max_scale,
                 max_rotation_deg=args.max_rotation_deg,
                 max_translation_mm=args.max_translation_mm,
                 max_elastic_mm=args.max_elastic_mm)
    return 0


def _cmd_metrics(args) -> int:
    a = read_nifti(args.a)
    b = read_nifti(args.b)
    lines = []
    if isinstance(a, LabelVolume) and isinstance(b, LabelVolume):
        for label in args.labels:
            lines.append(f"dice_{label}={_fmt(dice(a, b, label))}")
    else:
        a = read_nifti(args.a, as_labels=False)
        b = read_nifti(args.b, as_labels=False)
        err = rmse(a, b)
        lines.append(f"rmse={_fmt(err)}")
        data_range = args.data_range
        if data_range is None:
            data_range = float(a.data.max() - a.data.min()) or 1.0
        lines.append(f"psnr={_fmt(psnr(a, b, data_range))}")
    print("\n".join(lines))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cbctsim",
                                     description="Synthetic CBCT simulation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="rasterize an analytic ellipsoid phantom")
    p.add_argument("--output", required=True)
    p.add_argument("--specs", help="phantom spec file (cx cy cz ax ay az rot_deg density per line)")
    p.add_argument("--radius-mm", type=float, default=100.0)
    p.add_argument("--density-scale", type=float, default=1.0)
    p.add_argument("--grid-dims", type=int, nargs=3, default=[128, 128, 128])
    p.add_argument("--grid-spacing", type=float, nargs=3, default=[2.0, 2.0, 2.0])
    p.add_argument("--grid-center", type=float, nargs=3, default=[0.0, 0.0, 0.0])
    p.set_defaults(func=_cmd_phantom)

    p = sub.add_parser("project", help="forward-project a volume into DRR line integrals")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--center", type=float, nargs=3, default=None,
                   help="rotation axis center, mm (default: volume center)")
    p.add_argument("--hu", action="store_true", help="input is in HU; convert to attenuation")
    p.add_argument("--mu-water", type=float, default=0.02)
    _add_geometry_flags(p)
    p.set_defaults(func=_cmd_project)

    p = sub.add_parser("reconstruct", help="FDK-reconstruct a projection stack")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    _add_grid_flags(p)
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("pipeline", help="run the full generation pipeline")
    p.add_argument("--ct", action="append", required=True)
    p.add_argument("--mask", action="append")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--quality-levels", type=int, nargs="+")
    p.add_argument("--extent-mm", type=float, nargs=3)
    p.add_argument("--voxel-mm", type=float, nargs=3)
    p.add_argument("--mu-water", type=float)
    p.add_argument("--centering", choices=["liver_cog", "volume_center"])
    p.add_argument("--seed", type=int)
    p.add_argument("--raw-attenuation", action="store_true",
                   help="input volumes are attenuation (mm^-1), skip HU conversion")
    _add_geometry_flags(p)
    p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("align", help="resample CT + mask onto a reference grid")
    p.add_argument("--ct", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--output-ct", required=True)
    p.add_argument("--output-mask", required=True)
    p.set_defaults(func=_cmd_align)

    p = sub.add_parser("misalign", help="apply random affine/elastic misalignment")
    p.add_argument("--ct", required=True)
    p.add_argument("--mask")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--mode", choices=["affine", "elastic"], default="affine")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--max-scale", type=float, default=0.10)
    p.add_argument("--max-rotation-deg", type=float, default=10.0)
    p.add_argument("--max-translation-mm", type=float, default=10.0)
    p.add_argument("--max-elastic-mm", type=float, default=10.0)
    p.set_defaults(func=_cmd_misalign)

    p = sub.add_parser("metrics", help="compare two volumes")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--labels", type=int, nargs="+", default=[1, 2])
    p.add_argument("--data-range", type=float, default=None)
    p.set_defaults(func=_cmd_metrics)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except CbctsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
