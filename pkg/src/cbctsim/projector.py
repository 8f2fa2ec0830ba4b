"""Siddon ray-traced forward projection (DRR generation).

Line integrals are exact radiological paths: each ray accumulates
voxel value times the Euclidean length of its intersection with that
voxel, found by walking the parametric axis-crossing lists of the grid
(Siddon's method in its incremental form). Accumulation is float64 per
ray; stacks store float32.

The projector requires axis-aligned volumes (identity direction); the
pipeline resamples oblique inputs first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit, prange

from cbctsim.errors import OrientationError, ParameterError
from cbctsim.geometry import ConeBeamGeometry, Ray, geometry_to_config, load_geometry
from cbctsim.nifti import read_nifti_nd, write_nifti_nd
from cbctsim.volume import GridSpec, Volume3

DEFAULT_MU_WATER_MM = 0.02  # linear attenuation of water, mm^-1, monochromatic model


@dataclass(frozen=True)
class ProjectionStack:
    """Per-angle detector images of attenuation line integrals.

    ``data`` has layout [angle][v][u], float32, dimensionless (mm^-1 * mm).
    """

    geom: ConeBeamGeometry
    data: np.ndarray

    def __post_init__(self):
        nu, nv = self.geom.det_pixels
        data = np.asarray(self.data, dtype=np.float32)
        expected = (self.geom.n_angles, nv, nu)
        if data.shape != expected:
            raise ParameterError(f"stack shape {data.shape} != (n_angles, nv, nu) {expected}")
        if not np.isfinite(data).all():
            raise ParameterError("projection stack contains non-finite values")
        object.__setattr__(self, "data", data)


def hu_to_attenuation(ct: Volume3, mu_water: float = DEFAULT_MU_WATER_MM) -> Volume3:
    """Convert Hounsfield units to linear attenuation, mu = mu_water * (1 + HU/1000).

    Negative results (below-air values) are clamped to zero.
    """
    if mu_water <= 0:
        raise ParameterError(f"mu_water must be > 0, got {mu_water}")
    mu = mu_water * (1.0 + ct.data.astype(np.float64) / 1000.0)
    np.clip(mu, 0.0, None, out=mu)
    return Volume3(mu.astype(np.float32), ct.grid)


@njit(cache=True)
def _trace(data, ox, oy, oz, dx, dy, dz, sx, sy, sz, rx, ry, rz):
    """Radiological path of one ray (t >= 0) through an axis-aligned grid."""
    nx, ny, nz = data.shape
    bx0 = ox - 0.5 * dx
    by0 = oy - 0.5 * dy
    bz0 = oz - 0.5 * dz

    tmin = 0.0
    tmax = np.inf
    # slab entry/exit per axis; rays parallel to a slab must start inside it
    if rx != 0.0:
        t1 = (bx0 - sx) / rx
        t2 = (bx0 + nx * dx - sx) / rx
        lo = min(t1, t2)
        hi = max(t1, t2)
        tmin = max(tmin, lo)
        tmax = min(tmax, hi)
    elif sx < bx0 or sx >= bx0 + nx * dx:
        return 0.0
    if ry != 0.0:
        t1 = (by0 - sy) / ry
        t2 = (by0 + ny * dy - sy) / ry
        lo = min(t1, t2)
        hi = max(t1, t2)
        tmin = max(tmin, lo)
        tmax = min(tmax, hi)
    elif sy < by0 or sy >= by0 + ny * dy:
        return 0.0
    if rz != 0.0:
        t1 = (bz0 - sz) / rz
        t2 = (bz0 + nz * dz - sz) / rz
        lo = min(t1, t2)
        hi = max(t1, t2)
        tmin = max(tmin, lo)
        tmax = min(tmax, hi)
    elif sz < bz0 or sz >= bz0 + nz * dz:
        return 0.0
    if tmax <= tmin:
        return 0.0

    # voxel containing the entry point; half-open intervals give boundary
    # hits to the larger-index voxel
    px = sx + tmin * rx
    py = sy + tmin * ry
    pz = sz + tmin * rz
    ix = int(math.floor((px - bx0) / dx))
    iy = int(math.floor((py - by0) / dy))
    iz = int(math.floor((pz - bz0) / dz))
    if ix < 0:
        ix = 0
    elif ix > nx - 1:
        ix = nx - 1
    if iy < 0:
        iy = 0
    elif iy > ny - 1:
        iy = ny - 1
    if iz < 0:
        iz = 0
    elif iz > nz - 1:
        iz = nz - 1

    if rx > 0.0:
        step_x = 1
        tx = (bx0 + (ix + 1) * dx - sx) / rx
        dtx = dx / rx
    elif rx < 0.0:
        step_x = -1
        tx = (bx0 + ix * dx - sx) / rx
        dtx = -dx / rx
    else:
        step_x = 0
        tx = np.inf
        dtx = np.inf
    if ry > 0.0:
        step_y = 1
        ty = (by0 + (iy + 1) * dy - sy) / ry
        dty = dy / ry
    elif ry < 0.0:
        step_y = -1
        ty = (by0 + iy * dy - sy) / ry
        dty = -dy / ry
    else:
        step_y = 0
        ty = np.inf
        dty = np.inf
    if rz > 0.0:
        step_z = 1
        tz = (bz0 + (iz + 1) * dz - sz) / rz
        dtz = dz / rz
    elif rz < 0.0:
        step_z = -1
        tz = (bz0 + iz * dz - sz) / rz
        dtz = -dz / rz
    else:
        step_z = 0
        tz = np.inf
        dtz = np.inf

    acc = 0.0
    t = tmin
    while t < tmax:
        tn = tx
        if ty < tn:
            tn = ty
        if tz < tn:
            tn = tz
        if tn > tmax:
            tn = tmax
        if tn > t:
            acc += (tn - t) * data[ix, iy, iz]
        t = tn
        if t >= tmax:
            break
        if tx <= ty and tx <= tz:
            ix += step_x
            tx += dtx
            if ix < 0 or ix >= nx:
                break
        elif ty <= tz:
            iy += step_y
            ty += dty
            if iy < 0 or iy >= ny:
                break
        else:
            iz += step_z
            tz += dtz
            if iz < 0 or iz >= nz:
                break
    return acc


@njit(cache=True, parallel=True)
def _forward_kernel(data, ox, oy, oz, dx, dy, dz,
                    cosb, sinb, sad, sdd, nu, nv, pu, pv, off_u, off_v,
                    cx, cy, cz, out):
    na = cosb.shape[0]
    total = na * nv * nu
    for idx in prange(total):
        a = idx // (nv * nu)
        rem = idx - a * nv * nu
        iv = rem // nu
        iu = rem - iv * nu
        cb = cosb[a]
        sb = sinb[a]
        u = (iu - 0.5 * (nu - 1)) * pu + off_u
        v = (iv - 0.5 * (nv - 1)) * pv + off_v
        sx = cx + sad * cb
        sy = cy + sad * sb
        sz = cz
        # detector pixel position: center - sdd*s_hat + u*t_hat + v*z_hat
        px = sx - sdd * cb - u * sb
        py = sy - sdd * sb + u * cb
        pz = cz + v
        rx = px - sx
        ry = py - sy
        rz = pz - sz
        norm = math.sqrt(rx * rx + ry * ry + rz * rz)
        rx /= norm
        ry /= norm
        rz /= norm
        out[a, iv, iu] = np.float32(
            _trace(data, ox, oy, oz, dx, dy, dz, sx, sy, sz, rx, ry, rz))


def _require_axis_aligned(grid: GridSpec):
    if not grid.is_axis_aligned():
        raise OrientationError("projector requires an axis-aligned (identity direction) volume")


def siddon_trace(ray: Ray, vol: Volume3) -> float:
    """Exact line integral of ``vol`` along ``ray`` (0 when the ray misses)."""
    _require_axis_aligned(vol.grid)
    ox, oy, oz = vol.origin
    dx, dy, dz = vol.spacing
    return float(_trace(vol.data, ox, oy, oz, dx, dy, dz,
                        ray.source[0], ray.source[1], ray.source[2],
                        ray.direction[0], ray.direction[1], ray.direction[2]))


def forward_project(vol: Volume3, geom: ConeBeamGeometry,
                    isocenter=None) -> ProjectionStack:
    """Project ``vol`` (attenuation, mm^-1) into a stack of DRR line integrals.

    The rotation axis is world z through ``isocenter`` (default: the
    volume's world center). Deterministic regardless of thread count.
    """
    _require_axis_aligned(vol.grid)
    if isocenter is None:
        isocenter = vol.grid.world_center
    isocenter = np.asarray(isocenter, dtype=np.float64).reshape(3)
    nu, nv = geom.det_pixels
    out = np.empty((geom.n_angles, nv, nu), dtype=np.float32)
    cosb = np.cos(geom.angles)
    sinb = np.sin(geom.angles)
    ox, oy, oz = vol.origin
    dx, dy, dz = vol.spacing
    _forward_kernel(vol.data, ox, oy, oz, dx, dy, dz,
                    cosb, sinb, geom.sad, geom.sdd, nu, nv,
                    geom.det_pitch[0], geom.det_pitch[1],
                    geom.det_offset[0], geom.det_offset[1],
                    isocenter[0], isocenter[1], isocenter[2], out)
    return ProjectionStack(geom, out)


def to_intensity(stack: ProjectionStack, i0: float) -> ProjectionStack:
    """Beer-Lambert intensities I = i0 * exp(-p); for DRR display only."""
    if i0 <= 0:
        raise ParameterError(f"i0 must be > 0, got {i0}")
    return ProjectionStack(stack.geom, (i0 * np.exp(-stack.data.astype(np.float64))).astype(np.float32))


def _sidecar_path(path) -> Path:
    path = Path(path)
    name = path.name
    for suffix in (".nii.gz", ".nii"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
            break
    return path.with_name(name + ".geom.txt")


def save_projections(stack: ProjectionStack, path) -> None:
    """Persist a stack as NIfTI with dims (nu, nv, n_angles) plus a geometry sidecar."""
    pitch_u, pitch_v = stack.geom.det_pitch
    affine = np.zeros((3, 4), dtype=np.float64)
    affine[0, 0] = pitch_u
    affine[1, 1] = pitch_v
    affine[2, 2] = 1.0
    write_nifti_nd(np.ascontiguousarray(stack.data.T), (pitch_u, pitch_v, 1.0), affine, path)
    _sidecar_path(path).write_text(geometry_to_config(stack.geom))


def load_projections(path) -> ProjectionStack:
    data, _, _ = read_nifti_nd(path)
    geom = load_geometry(_sidecar_path(path))
    return ProjectionStack(geom, np.ascontiguousarray(data.astype(np.float32).T))
