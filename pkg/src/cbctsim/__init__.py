"""Synthetic cone-beam CT toolkit.

Simulates CBCT acquisitions from CT volumes: Siddon ray-traced forward
projection, FDK filtered back-projection at configurable undersampling
levels, CT/mask alignment onto the reconstruction grid, and random
affine/elastic misalignment. Analytic ellipsoid phantoms and volume
metrics support verification.
"""

from cbctsim.volume import Volume3, LabelVolume, GridSpec
from cbctsim.geometry import ConeBeamGeometry, Ray, make_circular_trajectory
from cbctsim.projector import ProjectionStack, forward_project, hu_to_attenuation
from cbctsim.fdk import fdk_reconstruct
from cbctsim.resample import AffineTransform, DisplacementField

__version__ = "0.1.0"

__all__ = [
    "Volume3",
    "LabelVolume",
    "GridSpec",
    "ConeBeamGeometry",
    "Ray",
    "make_circular_trajectory",
    "ProjectionStack",
    "forward_project",
    "hu_to_attenuation",
    "fdk_reconstruct",
    "AffineTransform",
    "DisplacementField",
    "__version__",
]
