"""Shared test helpers: independent oracles and phantom builders."""

import os

# allow multi-thread determinism checks even on single-core runners;
# must be set before numba is first imported
os.environ.setdefault("NUMBA_NUM_THREADS", "4")

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from cbctsim.volume import GridSpec, Volume3


def grid_bounds(vol):
    """Physical slab bounds (lo, hi) of the voxel grid, mm."""
    lo = np.asarray(vol.origin) - 0.5 * np.asarray(vol.spacing)
    hi = lo + np.asarray(vol.dims) * np.asarray(vol.spacing)
    return lo, hi


def ray_grid_interval(vol, source, direction):
    """Entry/exit parameters (t >= 0) of a ray through the grid slab, or None."""
    lo, hi = grid_bounds(vol)
    tmin, tmax = 0.0, np.inf
    for ax in range(3):
        if direction[ax] != 0.0:
            t1 = (lo[ax] - source[ax]) / direction[ax]
            t2 = (hi[ax] - source[ax]) / direction[ax]
            tmin = max(tmin, min(t1, t2))
            tmax = min(tmax, max(t1, t2))
        elif not (lo[ax] <= source[ax] < hi[ax]):
            return None
    if tmax <= tmin:
        return None
    return tmin, tmax


def march_integral(vol, source, direction, step=1e-3):
    """Ray-marching reference: midpoint sampling with nearest-voxel lookup."""
    interval = ray_grid_interval(vol, np.asarray(source, float), np.asarray(direction, float))
    if interval is None:
        return 0.0
    tmin, tmax = interval
    n = max(1, int(np.ceil((tmax - tmin) / step)))
    h = (tmax - tmin) / n
    ts = tmin + (np.arange(n) + 0.5) * h
    pts = np.asarray(source, float) + ts[:, None] * np.asarray(direction, float)
    lo, _ = grid_bounds(vol)
    idx = np.floor((pts - lo) / np.asarray(vol.spacing)).astype(np.int64)
    idx = np.clip(idx, 0, np.asarray(vol.dims) - 1)
    vals = vol.data[idx[:, 0], idx[:, 1], idx[:, 2]].astype(np.float64)
    return float(vals.sum() * h)


def smooth_random_volume(rng, dims=(16, 16, 16), origin=(-8.0, -8.0, -8.0),
                         sigma=1.5):
    """Smooth nonnegative random volume; keeps the marching oracle's
    voxel-boundary rounding error far below the comparison tolerance."""
    data = gaussian_filter(rng.uniform(0.0, 1.0, dims), sigma=sigma)
    data -= data.min()
    return Volume3.from_array(data.astype(np.float32), origin=origin)


def make_sphere_volume(radius_mm=40.0, mu=0.02, dims=(64, 64, 64), voxel_mm=2.0,
                       center=(0.0, 0.0, 0.0)):
    """Homogeneous sphere rasterized at voxel centers, grid centered on it."""
    grid = GridSpec.centered(center, dims, (voxel_mm,) * 3)
    ix, iy, iz = np.meshgrid(*(np.arange(d) for d in dims), indexing="ij")
    pts = grid.voxel_to_world(np.stack([ix, iy, iz], axis=-1).reshape(-1, 3))
    r = np.linalg.norm(pts - np.asarray(center, float), axis=1).reshape(dims)
    return Volume3(((r <= radius_mm) * mu).astype(np.float32), grid), r


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
