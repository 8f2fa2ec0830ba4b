"""Volume comparison metrics: RMSE, PSNR, Dice."""

from __future__ import annotations

import math

import numpy as np

from cbctsim.errors import ParameterError, ShapeError
from cbctsim.volume import LabelVolume, Volume3


def _check_grids(a, b):
    if not a.grid.same_grid(b.grid):
        raise ShapeError("metric inputs must share the same grid")


def rmse(a: Volume3, b: Volume3) -> float:
    """Root-mean-square voxel difference (64-bit accumulation)."""
    _check_grids(a, b)
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    return float(np.sqrt(np.mean(diff * diff)))


def psnr(a: Volume3, b: Volume3, data_range: float) -> float:
    """Peak signal-to-noise ratio in dB; inf for identical volumes."""
    if data_range <= 0:
        raise ParameterError(f"data_range must be > 0, got {data_range}")
    err = rmse(a, b)
    if err == 0.0:
        return math.inf
    return 20.0 * math.log10(data_range) - 20.0 * math.log10(err)


def dice(a: LabelVolume, b: LabelVolume, label: int) -> float:
    """Dice overlap 2|A&B| / (|A|+|B|) for one label; 1.0 when both empty."""
    _check_grids(a, b)
    mask_a = a.data == label
    mask_b = b.data == label
    denom = int(mask_a.sum()) + int(mask_b.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(mask_a, mask_b).sum()) / denom
