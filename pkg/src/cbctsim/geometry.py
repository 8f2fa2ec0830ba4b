"""Circular full-fan cone-beam acquisition geometry.

Scanner frame: the rotation axis is world z through the isocenter
(origin of the scanner frame, axis height z = 0). At angle 0 the source
sits on the +x axis at distance sad; rotation is counterclockwise seen
from +z. The flat-panel detector is orthogonal to the source-axis line
at distance sdd from the source; its u axis is the in-plane tangent,
its v axis is parallel to z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cbctsim.errors import FormatError, GeometryError

DEFAULT_SAD_MM = 785.0
DEFAULT_SDD_MM = 1300.0
DEFAULT_DET_PIXELS = (512, 512)
DEFAULT_DET_PITCH_MM = (0.75, 0.75)


@dataclass(frozen=True)
class Ray:
    """Half-line from ``source`` (mm) along unit ``direction``."""

    source: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        src = np.asarray(self.source, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-9:
            raise GeometryError(f"ray direction must be unit length, |d| = {n}")
        object.__setattr__(self, "source", src)
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class ConeBeamGeometry:
    sad: float                      # source to rotation axis, mm
    sdd: float                      # source to detector, mm
    det_pixels: tuple[int, int]     # (nu, nv)
    det_pitch: tuple[float, float]  # mm per pixel along u, v
    angles: np.ndarray              # radians, strictly increasing in [0, 2*pi)
    det_offset: tuple[float, float] = (0.0, 0.0)  # detector center offset, mm

    def __post_init__(self):
        if not 0 < self.sad < self.sdd:
            raise GeometryError(f"need 0 < sad < sdd, got sad={self.sad}, sdd={self.sdd}")
        nu, nv = self.det_pixels
        if nu < 1 or nv < 1:
            raise GeometryError(f"det_pixels must be >= 1, got {self.det_pixels}")
        if min(self.det_pitch) <= 0:
            raise GeometryError(f"det_pitch must be > 0, got {self.det_pitch}")
        angles = np.asarray(self.angles, dtype=np.float64).reshape(-1)
        if angles.size == 0:
            raise GeometryError("at least one projection angle is required")
        if np.any(np.diff(angles) <= 0) or angles[0] < 0 or angles[-1] >= 2 * math.pi:
            raise GeometryError("angles must be strictly increasing within [0, 2*pi)")
        object.__setattr__(self, "det_pixels", (int(nu), int(nv)))
        object.__setattr__(self, "det_pitch", (float(self.det_pitch[0]), float(self.det_pitch[1])))
        object.__setattr__(self, "det_offset", (float(self.det_offset[0]), float(self.det_offset[1])))
        object.__setattr__(self, "angles", angles)

    @property
    def n_angles(self) -> int:
        return int(self.angles.size)

    def pixel_coords(self, u_index, v_index):
        """Physical detector coordinates (mm from the principal ray) of pixel centers."""
        nu, nv = self.det_pixels
        u = (np.asarray(u_index, dtype=np.float64) - (nu - 1) / 2.0) * self.det_pitch[0] + self.det_offset[0]
        v = (np.asarray(v_index, dtype=np.float64) - (nv - 1) / 2.0) * self.det_pitch[1] + self.det_offset[1]
        return u, v

    def source_position(self, angle_index: int) -> np.ndarray:
        beta = float(self.angles[angle_index])
        return np.array([self.sad * math.cos(beta), self.sad * math.sin(beta), 0.0])


def make_circular_trajectory(n_p: int,
                             sad: float = DEFAULT_SAD_MM,
                             sdd: float = DEFAULT_SDD_MM,
                             det_pixels=DEFAULT_DET_PIXELS,
                             det_pitch=DEFAULT_DET_PITCH_MM,
                             det_offset=(0.0, 0.0)) -> ConeBeamGeometry:
    """Geometry with n_p angles equidistant over a full 360-degree turn."""
    if n_p < 1:
        raise GeometryError(f"n_p must be >= 1, got {n_p}")
    angles = 2.0 * math.pi * np.arange(n_p, dtype=np.float64) / n_p
    return ConeBeamGeometry(float(sad), float(sdd), tuple(det_pixels),
                            tuple(det_pitch), angles, tuple(det_offset))


def ray_for_pixel(geom: ConeBeamGeometry, angle_index: int, u: float, v: float) -> Ray:
    """Ray from the source through detector pixel coordinate (u, v).

    (u, v) are fractional pixel coordinates measured from the detector
    center; the physical position is u * pitch + offset per axis. The
    returned ray lives in the scanner frame (isocenter at the origin).
    """
    if not 0 <= angle_index < geom.n_angles:
        raise IndexError(f"angle_index {angle_index} out of range [0, {geom.n_angles})")
    beta = float(geom.angles[angle_index])
    cb, sb = math.cos(beta), math.sin(beta)
    s_hat = np.array([cb, sb, 0.0])          # isocenter -> source
    t_hat = np.array([-sb, cb, 0.0])         # detector u axis
    pu = u * geom.det_pitch[0] + geom.det_offset[0]
    pv = v * geom.det_pitch[1] + geom.det_offset[1]
    source = geom.sad * s_hat
    det_center = source - geom.sdd * s_hat
    pixel = det_center + pu * t_hat + pv * np.array([0.0, 0.0, 1.0])
    d = pixel - source
    return Ray(source, d / np.linalg.norm(d))


# -- plain-text key-value serialization ------------------------------------

_CONFIG_KEYS = ("sad_mm", "sdd_mm", "det_nu", "det_nv", "pitch_u_mm",
                "pitch_v_mm", "n_projections", "offset_u_mm", "offset_v_mm")


def geometry_to_config(geom: ConeBeamGeometry) -> str:
    """Serialize an equidistant-trajectory geometry as key=value lines."""
    lines = [
        f"sad_mm={geom.sad!r}",
        f"sdd_mm={geom.sdd!r}",
        f"det_nu={geom.det_pixels[0]}",
        f"det_nv={geom.det_pixels[1]}",
        f"pitch_u_mm={geom.det_pitch[0]!r}",
        f"pitch_v_mm={geom.det_pitch[1]!r}",
        f"n_projections={geom.n_angles}",
        f"offset_u_mm={geom.det_offset[0]!r}",
        f"offset_v_mm={geom.det_offset[1]!r}",
    ]
    return "\n".join(lines) + "\n"


def parse_key_values(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def geometry_from_config(text: str) -> ConeBeamGeometry:
    kv = parse_key_values(text)
    missing = [k for k in _CONFIG_KEYS[:7] if k not in kv]
    if missing:
        raise FormatError(f"geometry config missing keys: {missing}")
    return make_circular_trajectory(
        int(kv["n_projections"]),
        sad=float(kv["sad_mm"]),
        sdd=float(kv["sdd_mm"]),
        det_pixels=(int(kv["det_nu"]), int(kv["det_nv"])),
        det_pitch=(float(kv["pitch_u_mm"]), float(kv["pitch_v_mm"])),
        det_offset=(float(kv.get("offset_u_mm", 0.0)), float(kv.get("offset_v_mm", 0.0))),
    )


def save_geometry(geom: ConeBeamGeometry, path) -> None:
    Path(path).write_text(geometry_to_config(geom))


def load_geometry(path) -> ConeBeamGeometry:
    return geometry_from_config(Path(path).read_text())
