"""CBCT dataset generation pipeline.

Per input CT (+ optional mask): pick a reconstruction center (liver
center of gravity or volume middle), convert HU to attenuation, simulate
DRRs per quality level with its own equidistant full-turn trajectory,
reconstruct with FDK onto the configured grid around the center, and
resample CT + mask onto that grid. A JSON manifest records outputs,
checksums and the effective configuration. CBCT voxel values are linear
attenuation (mm^-1); the manifest records mu_water for conversion.
"""

from __future__ import annotations

import hashlib
import json
import traceback
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

import cbctsim
from cbctsim.errors import ConfigError, EmptyMaskError
from cbctsim.fdk import (DEFAULT_RECON_EXTENT_MM, DEFAULT_RECON_VOXEL_MM,
                         default_recon_grid, fdk_reconstruct, normalization_constant)
from cbctsim.geometry import (DEFAULT_DET_PITCH_MM, DEFAULT_DET_PIXELS,
                              DEFAULT_SAD_MM, DEFAULT_SDD_MM, make_circular_trajectory)
from cbctsim.nifti import read_nifti, write_nifti
from cbctsim.projector import DEFAULT_MU_WATER_MM, forward_project, hu_to_attenuation
from cbctsim.resample import (DEFAULT_CONTROL_DIMS, DEFAULT_MAX_ELASTIC_MM,
                              DEFAULT_MAX_ROTATION_DEG, DEFAULT_MAX_SCALE,
                              DEFAULT_MAX_TRANSLATION_MM, align_to_grid,
                              random_affine, random_elastic, save_displacement_field,
                              save_transform, warp)
from cbctsim.volume import LabelVolume, Volume3, center_of_gravity

DEFAULT_QUALITY_LEVELS = (490, 256, 128, 64, 32)

CENTER_LIVER_COG = "liver_cog"
CENTER_VOLUME = "volume_center"


@dataclass(frozen=True)
class PipelineConfig:
    quality_levels: tuple[int, ...] = DEFAULT_QUALITY_LEVELS
    recon_extent_mm: tuple[float, float, float] = DEFAULT_RECON_EXTENT_MM
    recon_voxel_mm: tuple[float, float, float] = DEFAULT_RECON_VOXEL_MM
    sad_mm: float = DEFAULT_SAD_MM
    sdd_mm: float = DEFAULT_SDD_MM
    det_pixels: tuple[int, int] = DEFAULT_DET_PIXELS
    det_pitch_mm: tuple[float, float] = DEFAULT_DET_PITCH_MM
    det_offset_mm: tuple[float, float] = (0.0, 0.0)
    mu_water: float = DEFAULT_MU_WATER_MM
    centering: str = CENTER_LIVER_COG
    output_dir: str = "."
    seed: int = 0
    input_is_hu: bool = True

    def __post_init__(self):
        levels = tuple(int(n) for n in self.quality_levels)
        if len(set(levels)) != len(levels) or any(n < 1 for n in levels):
            raise ConfigError(f"quality levels must be distinct and >= 1, got {levels}")
        if min(self.recon_extent_mm) <= 0 or min(self.recon_voxel_mm) <= 0:
            raise ConfigError("reconstruction extents and voxel sizes must be positive")
        if self.centering not in (CENTER_LIVER_COG, CENTER_VOLUME):
            raise ConfigError(f"unknown centering mode {self.centering!r}")
        object.__setattr__(self, "quality_levels", levels)


def compute_center(ct: Volume3, mask: LabelVolume | None, mode: str) -> np.ndarray:
    """Reconstruction center: liver COG (label 1) or the grid's middle."""
    if mode == CENTER_VOLUME:
        return ct.grid.world_center
    if mode == CENTER_LIVER_COG:
        if mask is None:
            raise ConfigError("liver_cog centering requires a mask")
        try:
            return center_of_gravity(mask, 1)
        except EmptyMaskError as exc:
            raise ConfigError("liver_cog centering requires label 1 in the mask") from exc
    raise ConfigError(f"unknown centering mode {mode!r}")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _stem(path: Path) -> str:
    name = path.name
    for suffix in (".nii.gz", ".nii"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return path.stem


def run_pipeline(ct_path, mask_path, config: PipelineConfig) -> Path:
    """Generate all quality levels for one input volume; returns the manifest path."""
    ct_path = Path(ct_path)
    ct = read_nifti(ct_path, as_labels=False)
    mask = None
    if mask_path is not None:
        mask = read_nifti(Path(mask_path), as_labels=True)

    center = compute_center(ct, mask, config.centering)
    grid = default_recon_grid(center, config.recon_extent_mm, config.recon_voxel_mm)
    mu = hu_to_attenuation(ct, config.mu_water) if config.input_is_hu else ct

    out_dir = Path(config.output_dir) / _stem(ct_path)
    out_dir.mkdir(parents=True, exist_ok=True)

    outputs: list[Path] = []
    recon_info = []
    # levels are not mutually nested, so each gets its own equidistant trajectory
    for n_p in config.quality_levels:
        geom = make_circular_trajectory(
            n_p, sad=config.sad_mm, sdd=config.sdd_mm,
            det_pixels=config.det_pixels, det_pitch=config.det_pitch_mm,
            det_offset=config.det_offset_mm)
        stack = forward_project(mu, geom, isocenter=center)
        cbct = fdk_reconstruct(stack, grid, isocenter=center)
        path = out_dir / f"cbct_{n_p}.nii.gz"
        write_nifti(cbct, path)
        outputs.append(path)
        recon_info.append({
            "n_projections": n_p,
            "grid_dims": list(grid.dims),
            "grid_spacing_mm": list(grid.spacing),
            "kernel": "ram-lak",
            "normalization_constant": normalization_constant(geom),
        })

    ct_aligned_path = out_dir / "ct_aligned.nii.gz"
    if mask is not None:
        ct_aligned, mask_aligned = align_to_grid(ct, mask, grid)
        mask_aligned_path = out_dir / "mask_aligned.nii.gz"
        write_nifti(mask_aligned, mask_aligned_path)
        outputs.append(mask_aligned_path)
    else:
        from cbctsim.resample import resample_linear
        ct_aligned = resample_linear(ct, grid)
    write_nifti(ct_aligned, ct_aligned_path)
    outputs.append(ct_aligned_path)

    manifest = {
        "tool": "cbctsim",
        "version": cbctsim.__version__,
        "input": {"ct": str(ct_path), "mask": str(mask_path) if mask_path else None},
        "config": asdict(config),
        "center_mm": [float(c) for c in center],
        "reconstructions": recon_info,
        "outputs": [{"name": p.name, "sha256": _sha256(p)} for p in sorted(outputs)],
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path


@dataclass
class BatchResult:
    succeeded: list[str] = field(default_factory=list)
    failed: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failed


def run_batch(pairs, config: PipelineConfig) -> BatchResult:
    """Run the pipeline over (ct_path, mask_path) pairs; failures are isolated."""
    result = BatchResult()
    for ct_path, mask_path in pairs:
        try:
            run_pipeline(ct_path, mask_path, config)
            result.succeeded.append(str(ct_path))
        except Exception:
            result.failed[str(ct_path)] = traceback.format_exc(limit=5)
    return result


MISALIGN_AFFINE = "affine"
MISALIGN_ELASTIC = "elastic"


def run_misalign(ct_path, mask_path, alpha_a: float, mode: str, seed: int,
                 output_dir,
                 max_scale: float = DEFAULT_MAX_SCALE,
                 max_rotation_deg: float = DEFAULT_MAX_ROTATION_DEG,
                 max_translation_mm: float = DEFAULT_MAX_TRANSLATION_MM,
                 max_elastic_mm: float = DEFAULT_MAX_ELASTIC_MM,
                 control_dims=DEFAULT_CONTROL_DIMS) -> list[Path]:
    """Apply random misalignment to a CT + mask pair; writes volumes and
    the serialized transform (and field in elastic mode)."""
    if mode not in (MISALIGN_AFFINE, MISALIGN_ELASTIC):
        raise ConfigError(f"unknown misalignment mode {mode!r}")
    ct = read_nifti(ct_path, as_labels=False)
    mask = read_nifti(mask_path, as_labels=True) if mask_path else None

    center = ct.grid.world_center
    t = random_affine(alpha_a, seed, max_scale=max_scale,
                      max_rotation_deg=max_rotation_deg,
                      max_translation_mm=max_translation_mm, center=center)
    fld = None
    if mode == MISALIGN_ELASTIC:
        # field box covers the volume's physical bounding box
        origin = np.asarray(ct.origin) - 0.5 * np.asarray(ct.spacing)
        extent = np.asarray(ct.dims) * np.asarray(ct.spacing)
        fld = random_elastic(alpha_a, seed + 1, max_disp_mm=max_elastic_mm,
                             control_dims=control_dims,
                             origin=tuple(origin), extent=tuple(extent))

    out_dir = Path(output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    ct_out = out_dir / "ct_misaligned.nii.gz"
    write_nifti(warp(ct, fld, t), ct_out)
    written.append(ct_out)
    if mask is not None:
        mask_out = out_dir / "mask_misaligned.nii.gz"
        write_nifti(warp(mask, fld, t), mask_out)
        written.append(mask_out)

    t_path = out_dir / "transform.txt"
    save_transform(t, t_path)
    written.append(t_path)
    if fld is not None:
        f_path = out_dir / "field.nii.gz"
        save_displacement_field(fld, f_path)
        written.append(f_path)
        written.append(Path(str(f_path) + ".field.txt"))
    return written
