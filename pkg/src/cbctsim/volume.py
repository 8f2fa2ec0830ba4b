"""Volumes with physical geometry: the carrier type for CT, CBCT and masks.

Conventions:
  * voxel data is indexed ``data[x, y, z]`` with shape ``(nx, ny, nz)``;
    the flat on-disk layout is x-fastest (``ravel(order="F")``).
  * ``spacing`` is mm per voxel, ``origin`` the world position (mm) of the
    center of voxel (0, 0, 0), ``direction`` the orthonormal voxel-to-world
    axis matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cbctsim.errors import EmptyMaskError, ShapeError

_ORTHO_TOL = 1e-6


def _as_triple(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64).reshape(3)
    return a


def _check_geometry(dims, spacing, direction):
    if any(d < 1 for d in dims):
        raise ShapeError(f"all dims must be >= 1, got {tuple(dims)}")
    if np.any(spacing <= 0):
        raise ShapeError(f"all spacing components must be > 0, got {tuple(spacing)}")
    if direction.shape != (3, 3):
        raise ShapeError("direction must be a 3x3 matrix")
    err = np.abs(direction.T @ direction - np.eye(3)).max()
    if err >= _ORTHO_TOL:
        raise ShapeError(f"direction is not orthonormal (max deviation {err:.2e})")


@dataclass(frozen=True)
class GridSpec:
    """Sampling grid (dims + spacing + origin + direction) without data."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    direction: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "direction", np.asarray(self.direction, dtype=np.float64))
        _check_geometry(self.dims, np.asarray(self.spacing), self.direction)

    @classmethod
    def like(cls, vol: "Volume3 | LabelVolume") -> "GridSpec":
        return cls(vol.dims, vol.spacing, vol.origin, vol.direction.copy())

    @classmethod
    def centered(cls, center, dims, spacing) -> "GridSpec":
        """Axis-aligned grid whose geometric center sits at ``center`` (mm)."""
        center = _as_triple(center)
        dims = tuple(int(d) for d in dims)
        spacing = _as_triple(spacing)
        origin = center - (np.asarray(dims, dtype=np.float64) - 1.0) / 2.0 * spacing
        return cls(dims, tuple(spacing), tuple(origin))

    @property
    def affine(self) -> np.ndarray:
        """4x4 voxel-index to world-mm map."""
        a = np.eye(4)
        a[:3, :3] = self.direction @ np.diag(self.spacing)
        a[:3, 3] = self.origin
        return a

    @property
    def world_center(self) -> np.ndarray:
        idx = (np.asarray(self.dims, dtype=np.float64) - 1.0) / 2.0
        return self.voxel_to_world(idx)

    def voxel_to_world(self, index) -> np.ndarray:
        index = np.asarray(index, dtype=np.float64)
        return np.asarray(self.origin) + (self.direction @ (index * np.asarray(self.spacing)).T).T

    def world_to_voxel(self, point) -> np.ndarray:
        point = np.asarray(point, dtype=np.float64)
        local = (self.direction.T @ (point - np.asarray(self.origin)).T).T
        return local / np.asarray(self.spacing)

    def is_axis_aligned(self, tol: float = 1e-9) -> bool:
        return bool(np.abs(self.direction - np.eye(3)).max() < tol)

    def same_grid(self, other: "GridSpec", tol: float = 1e-6) -> bool:
        return (
            self.dims == other.dims
            and np.allclose(self.spacing, other.spacing, atol=tol)
            and np.allclose(self.origin, other.origin, atol=tol)
            and np.allclose(self.direction, other.direction, atol=tol)
        )


class _SpatialVolume:
    """Shared geometry behaviour of Volume3 and LabelVolume."""

    data: np.ndarray
    grid: GridSpec

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.grid.dims

    @property
    def spacing(self) -> tuple[float, float, float]:
        return self.grid.spacing

    @property
    def origin(self) -> tuple[float, float, float]:
        return self.grid.origin

    @property
    def direction(self) -> np.ndarray:
        return self.grid.direction

    @property
    def affine(self) -> np.ndarray:
        return self.grid.affine


@dataclass(frozen=True)
class Volume3(_SpatialVolume):
    """Dense float32 scalar volume with physical placement."""

    data: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise ShapeError(f"volume data must be 3-D, got {data.ndim}-D")
        if data.shape != self.grid.dims:
            raise ShapeError(f"data shape {data.shape} != grid dims {self.grid.dims}")
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, data, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0),
                   direction=None) -> "Volume3":
        data = np.asarray(data, dtype=np.float32)
        grid = GridSpec(data.shape, spacing, origin,
                        np.eye(3) if direction is None else direction)
        return cls(data, grid)


@dataclass(frozen=True)
class LabelVolume(_SpatialVolume):
    """Dense uint8 label volume: 0 background, 1 liver, 2 tumor."""

    data: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.uint8)
        if data.ndim != 3:
            raise ShapeError(f"label data must be 3-D, got {data.ndim}-D")
        if data.shape != self.grid.dims:
            raise ShapeError(f"data shape {data.shape} != grid dims {self.grid.dims}")
        if data.max(initial=0) > 2:
            raise ShapeError("label values must be in {0, 1, 2}")
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, data, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0),
                   direction=None) -> "LabelVolume":
        data = np.asarray(data, dtype=np.uint8)
        grid = GridSpec(data.shape, spacing, origin,
                        np.eye(3) if direction is None else direction)
        return cls(data, grid)


def voxel_to_world(volume, index) -> np.ndarray:
    """World coordinate (mm) of a possibly fractional voxel index."""
    return volume.grid.voxel_to_world(index)


def center_of_gravity(mask: LabelVolume, label: int) -> np.ndarray:
    """Unweighted mean world coordinate of all voxels equal to ``label``."""
    idx = np.argwhere(mask.data == label)
    if idx.size == 0:
        raise EmptyMaskError(f"no voxel carries label {label}")
    return mask.grid.voxel_to_world(idx).mean(axis=0)
