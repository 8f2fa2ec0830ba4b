"""World-space affine transforms, resampling, and random misalignment.

Resampling is target-driven: for each target voxel center x (world mm)
the source is sampled at the inverse-transformed location, trilinearly
for intensity volumes and nearest-neighbor for label volumes. Random
misalignment follows the alignment-strength convention: a single
parameter alpha_a in [0, 1] scales the maximum magnitude of scaling,
rotation, translation and elastic displacement.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import map_coordinates

from cbctsim.errors import ParameterError, TransformError
from cbctsim.nifti import read_nifti_nd, write_nifti_nd
from cbctsim.rng import SplitMix64
from cbctsim.volume import GridSpec, LabelVolume, Volume3

# Misalignment bounds at full strength (alpha_a = 1); all configurable.
DEFAULT_MAX_SCALE = 0.10        # fractional, per axis
DEFAULT_MAX_ROTATION_DEG = 10.0
DEFAULT_MAX_TRANSLATION_MM = 10.0
DEFAULT_MAX_ELASTIC_MM = 10.0
DEFAULT_CONTROL_DIMS = (5, 5, 5)

_CHUNK_VOXELS = 1 << 21  # resampling works in slabs to bound memory


@dataclass(frozen=True)
class AffineTransform:
    """4x4 homogeneous world-space map (mm), last row (0, 0, 0, 1)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise TransformError(f"transform matrix must be 4x4, got {m.shape}")
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0]):
            raise TransformError("last row of an affine transform must be (0, 0, 0, 1)")
        if abs(np.linalg.det(m[:3, :3])) <= 1e-12:
            raise TransformError("transform is singular")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.eye(4))

    @classmethod
    def from_parts(cls, linear: np.ndarray, translation) -> "AffineTransform":
        m = np.eye(4)
        m[:3, :3] = linear
        m[:3, 3] = translation
        return cls(m)

    def inverse(self) -> "AffineTransform":
        return AffineTransform(np.linalg.inv(self.matrix))

    def compose(self, other: "AffineTransform") -> "AffineTransform":
        """self after other: (self @ other)(x) = self(other(x))."""
        return AffineTransform(self.matrix @ other.matrix)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = pts @ self.matrix[:3, :3].T + self.matrix[:3, 3]
        return out.reshape(np.shape(points))

    def serialize(self) -> str:
        """16 whitespace-separated decimals, row-major."""
        return " ".join(repr(float(v)) for v in self.matrix.reshape(16))

    @classmethod
    def deserialize(cls, text: str) -> "AffineTransform":
        vals = [float(tok) for tok in text.split()]
        if len(vals) != 16:
            raise TransformError(f"expected 16 numbers, got {len(vals)}")
        return cls(np.array(vals, dtype=np.float64).reshape(4, 4))


@dataclass(frozen=True)
class DisplacementField:
    """Trilinear control-point displacement field over a physical box.

    ``control_disp`` has shape (cx, cy, cz, 3) in mm; control point
    (i, j, k) sits at origin + (i, j, k) / (dims - 1) * extent. Boundary
    control points carry zero displacement so the field vanishes at the
    box faces.
    """

    control_disp: np.ndarray
    origin: tuple[float, float, float]
    extent: tuple[float, float, float]

    def __post_init__(self):
        disp = np.asarray(self.control_disp, dtype=np.float64)
        if disp.ndim != 4 or disp.shape[3] != 3 or min(disp.shape[:3]) < 2:
            raise ParameterError(
                f"control displacements must have shape (cx>=2, cy>=2, cz>=2, 3), got {disp.shape}")
        object.__setattr__(self, "control_disp", disp)
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "extent", tuple(float(v) for v in self.extent))
        if min(self.extent) <= 0:
            raise ParameterError(f"field extent must be positive, got {self.extent}")

    @property
    def control_dims(self) -> tuple[int, int, int]:
        return self.control_disp.shape[:3]

    def sample(self, points: np.ndarray) -> np.ndarray:
        """Displacement (mm) at world points, shape (N, 3); clamped at the box."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        dims = np.asarray(self.control_dims, dtype=np.float64)
        rel = (pts - self.origin) / self.extent * (dims - 1.0)
        coords = np.clip(rel, 0.0, dims - 1.0).T
        out = np.empty((pts.shape[0], 3))
        for c in range(3):
            out[:, c] = map_coordinates(self.control_disp[..., c], coords, order=1, mode="nearest")
        return out.reshape(np.shape(points))


def _target_world_points(grid: GridSpec, z0: int, z1: int) -> np.ndarray:
    nx, ny, _ = grid.dims
    ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(z0, z1), indexing="ij")
    idx = np.stack([ix, iy, iz], axis=-1).reshape(-1, 3)
    return grid.voxel_to_world(idx)


def _resample(src, grid: GridSpec, t: AffineTransform, order: int, cval: float,
              field: DisplacementField | None = None) -> np.ndarray:
    inv = t.inverse()
    nx, ny, nz = grid.dims
    out = np.empty((nx, ny, nz), dtype=src.data.dtype)
    step = max(1, _CHUNK_VOXELS // (nx * ny))
    for z0 in range(0, nz, step):
        z1 = min(z0 + step, nz)
        world = _target_world_points(grid, z0, z1)
        sample = inv.apply(world)
        if field is not None:
            sample = sample + field.sample(world)
        coords = src.grid.world_to_voxel(sample).T
        vals = map_coordinates(src.data, coords, order=order, mode="constant", cval=cval)
        out[:, :, z0:z1] = vals.reshape(nx, ny, z1 - z0)
    return out


def _as_grid(target_grid) -> GridSpec:
    if isinstance(target_grid, GridSpec):
        return target_grid
    return GridSpec.like(target_grid)


def resample_linear(src: Volume3, target_grid, t: AffineTransform | None = None,
                    fill=None) -> Volume3:
    """Trilinear resampling of ``src`` onto ``target_grid`` through ``t``.

    Samples outside the source take ``fill`` (default: source minimum, an
    air/background stand-in).
    """
    grid = _as_grid(target_grid)
    t = t or AffineTransform.identity()
    cval = float(src.data.min()) if fill is None else float(fill)
    return Volume3(_resample(src, grid, t, order=1, cval=cval), grid)


def resample_nearest(src: LabelVolume, target_grid, t: AffineTransform | None = None) -> LabelVolume:
    """Nearest-neighbor resampling of a label volume; outside maps to 0."""
    grid = _as_grid(target_grid)
    t = t or AffineTransform.identity()
    return LabelVolume(_resample(src, grid, t, order=0, cval=0.0), grid)


def align_to_grid(ct: Volume3, mask: LabelVolume, cbct) -> tuple[Volume3, LabelVolume]:
    """Resample CT (linear) and mask (nearest) onto the CBCT grid.

    The simulation keeps world coordinates consistent, so the alignment
    transform is the world-space identity.
    """
    grid = _as_grid(cbct)
    return resample_linear(ct, grid), resample_nearest(mask, grid)


def _check_alpha(alpha_a: float):
    if not 0.0 <= alpha_a <= 1.0:
        raise ParameterError(f"alpha_a must be in [0, 1], got {alpha_a}")


def random_affine(alpha_a: float, seed: int,
                  max_scale: float = DEFAULT_MAX_SCALE,
                  max_rotation_deg: float = DEFAULT_MAX_ROTATION_DEG,
                  max_translation_mm: float = DEFAULT_MAX_TRANSLATION_MM,
                  center=(0.0, 0.0, 0.0)) -> AffineTransform:
    """Random scale -> rotate -> translate about ``center``, strength alpha_a.

    Per-axis scales ~ U(1 +- alpha_a * max_scale), per-axis rotations
    ~ U(+- alpha_a * max_rotation_deg), translations ~ U(+- alpha_a *
    max_translation_mm). Deterministic in ``seed`` across platforms.
    """
    _check_alpha(alpha_a)
    gen = SplitMix64(seed)
    ds = alpha_a * max_scale
    scales = [gen.uniform(1.0 - ds, 1.0 + ds) for _ in range(3)]
    dr = np.radians(alpha_a * max_rotation_deg)
    rx, ry, rz = (gen.uniform(-dr, dr) for _ in range(3))
    dt = alpha_a * max_translation_mm
    trans = np.array([gen.uniform(-dt, dt) for _ in range(3)])
    if alpha_a == 0.0:
        return AffineTransform.identity()

    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    r_x = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    r_y = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    r_z = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    linear = r_z @ r_y @ r_x @ np.diag(scales)
    center = np.asarray(center, dtype=np.float64)
    translation = trans + center - linear @ center
    return AffineTransform.from_parts(linear, translation)


def random_elastic(alpha_a: float, seed: int,
                   max_disp_mm: float = DEFAULT_MAX_ELASTIC_MM,
                   control_dims=DEFAULT_CONTROL_DIMS,
                   origin=(0.0, 0.0, 0.0),
                   extent=(100.0, 100.0, 100.0)) -> DisplacementField:
    """Random control-point displacements ~ U(+- alpha_a * max_disp_mm).

    Boundary control points are clamped to zero so the field vanishes at
    the box faces. Deterministic in ``seed``.
    """
    _check_alpha(alpha_a)
    cx, cy, cz = (int(c) for c in control_dims)
    if min(cx, cy, cz) < 2:
        raise ParameterError(f"control dims must be >= 2 per axis, got {control_dims}")
    gen = SplitMix64(seed)
    bound = alpha_a * max_disp_mm
    disp = np.empty((cx, cy, cz, 3), dtype=np.float64)
    for i in range(cx):
        for j in range(cy):
            for k in range(cz):
                for c in range(3):
                    disp[i, j, k, c] = gen.uniform(-bound, bound)
    disp[0, :, :, :] = 0.0
    disp[-1, :, :, :] = 0.0
    disp[:, 0, :, :] = 0.0
    disp[:, -1, :, :] = 0.0
    disp[:, :, 0, :] = 0.0
    disp[:, :, -1, :] = 0.0
    return DisplacementField(disp, tuple(origin), tuple(extent))


def warp(src, field: DisplacementField | None, t: AffineTransform | None = None):
    """Resample through an affine plus additive displacement field.

    Sample location per target voxel x: t^-1(x) + field(x). Linear
    interpolation for Volume3, nearest for LabelVolume; output keeps the
    source grid.
    """
    t = t or AffineTransform.identity()
    grid = GridSpec.like(src)
    if isinstance(src, LabelVolume):
        return LabelVolume(_resample(src, grid, t, order=0, cval=0.0, field=field), grid)
    cval = float(src.data.min())
    return Volume3(_resample(src, grid, t, order=1, cval=cval, field=field), grid)


# -- serialization ---------------------------------------------------------

def save_transform(t: AffineTransform, path) -> None:
    Path(path).write_text(t.serialize() + "\n")


def load_transform(path) -> AffineTransform:
    return AffineTransform.deserialize(Path(path).read_text())


def save_displacement_field(field: DisplacementField, path) -> None:
    """Control displacements as a 5-D NIfTI vector image plus a sidecar."""
    cx, cy, cz = field.control_dims
    data = field.control_disp.reshape(cx, cy, cz, 1, 3).astype(np.float32)
    step = np.asarray(field.extent) / (np.asarray(field.control_dims) - 1.0)
    affine = np.zeros((3, 4))
    affine[:3, :3] = np.diag(step)
    affine[:3, 3] = field.origin
    write_nifti_nd(data, tuple(step), affine, path)
    sidecar = Path(str(path) + ".field.txt")
    lines = [
        f"control_dims={cx} {cy} {cz}",
        "origin=" + " ".join(repr(v) for v in field.origin),
        "extent=" + " ".join(repr(v) for v in field.extent),
    ]
    sidecar.write_text("\n".join(lines) + "\n")


def load_displacement_field(path) -> DisplacementField:
    data, _, _ = read_nifti_nd(path)
    kv = {}
    for line in Path(str(path) + ".field.txt").read_text().splitlines():
        key, _, value = line.partition("=")
        kv[key.strip()] = value.strip()
    origin = tuple(float(v) for v in kv["origin"].split())
    extent = tuple(float(v) for v in kv["extent"].split())
    disp = np.asarray(data, dtype=np.float64)
    if disp.ndim == 5:
        disp = disp[:, :, :, 0, :]
    return DisplacementField(disp, origin, extent)
