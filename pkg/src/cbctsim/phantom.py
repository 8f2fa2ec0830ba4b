"""Analytic ellipsoid phantoms with closed-form line integrals.

Ellipsoids add their densities where they overlap (Shepp-Logan
convention), so both the rasterizer and the analytic ray integral are
sums over the ellipsoid list. The rasterizer evaluates containment at
voxel centers only; agreement with ray-traced projections improves as
the voxel size shrinks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from cbctsim.geometry import Ray
from cbctsim.volume import GridSpec, Volume3


@dataclass(frozen=True)
class EllipsoidSpec:
    center: tuple[float, float, float]        # mm
    semi_axes: tuple[float, float, float]     # mm
    z_rotation: float = 0.0                   # radians, about world z
    density: float = 1.0                      # additive attenuation, mm^-1

    def __post_init__(self):
        if min(self.semi_axes) <= 0:
            raise ValueError(f"semi-axes must be positive, got {self.semi_axes}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "semi_axes", tuple(float(a) for a in self.semi_axes))

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.z_rotation), math.sin(self.z_rotation)
        return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean containment for an (N, 3) array of world points."""
        local = (self.rotation() @ (np.atleast_2d(points) - self.center).T).T
        scaled = local / self.semi_axes
        return (scaled ** 2).sum(axis=1) <= 1.0


def rasterize(specs, grid: GridSpec) -> Volume3:
    """Sum of ellipsoid densities at each voxel center."""
    nx, ny, nz = grid.dims
    out = np.zeros((nx, ny, nz), dtype=np.float64)
    if specs:
        ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
        idx = np.stack([ix, iy, iz], axis=-1).reshape(-1, 3)
        points = grid.voxel_to_world(idx)
        flat = out.reshape(-1)
        for spec in specs:
            flat[spec.contains(points)] += spec.density
    return Volume3(out.astype(np.float32), grid)


def _chord_length(spec: EllipsoidSpec, ray: Ray) -> float:
    """Length (mm) of the part of the ray with t >= 0 inside the ellipsoid."""
    p = (spec.rotation() @ (ray.source - np.asarray(spec.center))) / spec.semi_axes
    d = (spec.rotation() @ ray.direction) / spec.semi_axes
    a = float(d @ d)
    b = 2.0 * float(p @ d)
    c = float(p @ p) - 1.0
    disc = b * b - 4.0 * a * c
    if disc <= 0.0 or a == 0.0:
        return 0.0
    sq = math.sqrt(disc)
    t1 = (-b - sq) / (2.0 * a)
    t2 = (-b + sq) / (2.0 * a)
    lo = max(min(t1, t2), 0.0)
    hi = max(t1, t2)
    return max(hi - lo, 0.0)


def analytic_line_integral(specs, ray: Ray) -> float:
    """Closed-form line integral: sum of density * chord length per ellipsoid."""
    return sum(spec.density * _chord_length(spec, ray) for spec in specs)


# Modified 3-D Shepp-Logan head phantom: ten ellipsoids in the unit ball,
# columns (density, semi-axes abc, center xyz, z-rotation deg). This table
# is the project's fixed reference for tests.
_SHEPP_LOGAN_3D = [
    (1.00, 0.6900, 0.9200, 0.810, 0.00, 0.000, 0.000, 0.0),
    (-0.80, 0.6624, 0.8740, 0.780, 0.00, -0.0184, 0.000, 0.0),
    (-0.20, 0.1100, 0.3100, 0.220, 0.22, 0.000, 0.000, -18.0),
    (-0.20, 0.1600, 0.4100, 0.280, -0.22, 0.000, 0.000, 18.0),
    (0.10, 0.2100, 0.2500, 0.410, 0.00, 0.350, -0.150, 0.0),
    (0.10, 0.0460, 0.0460, 0.050, 0.00, 0.100, 0.250, 0.0),
    (0.10, 0.0460, 0.0460, 0.050, 0.00, -0.100, 0.250, 0.0),
    (0.10, 0.0460, 0.0230, 0.050, -0.08, -0.605, 0.000, 0.0),
    (0.20, 0.0230, 0.0230, 0.020, 0.00, -0.606, 0.000, 0.0),
    (-0.20, 0.0230, 0.0460, 0.020, 0.06, -0.605, 0.000, 0.0),
]


def shepp_logan_3d(radius_mm: float = 100.0, density_scale: float = 1.0) -> list[EllipsoidSpec]:
    """The 10-ellipsoid 3-D Shepp-Logan phantom scaled to a physical radius."""
    specs = []
    for rho, ax, ay, az, cx, cy, cz, rot_deg in _SHEPP_LOGAN_3D:
        specs.append(EllipsoidSpec(
            center=(cx * radius_mm, cy * radius_mm, cz * radius_mm),
            semi_axes=(ax * radius_mm, ay * radius_mm, az * radius_mm),
            z_rotation=math.radians(rot_deg),
            density=rho * density_scale,
        ))
    return specs


def save_specs(specs, path) -> None:
    """One line per ellipsoid: cx cy cz ax ay az rot_deg density."""
    lines = []
    for s in specs:
        vals = (*s.center, *s.semi_axes, math.degrees(s.z_rotation), s.density)
        lines.append(" ".join(repr(float(v)) for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def load_specs(path) -> list[EllipsoidSpec]:
    specs = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        vals = [float(tok) for tok in line.split()]
        if len(vals) != 8:
            raise ValueError(f"expected 8 numbers per phantom line, got {len(vals)}")
        specs.append(EllipsoidSpec(center=tuple(vals[0:3]), semi_axes=tuple(vals[3:6]),
                                   z_rotation=math.radians(vals[6]), density=vals[7]))
    return specs
