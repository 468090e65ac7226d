"""Compressive dual-arm spectral imaging: aperture design, acquisition
simulation, sparse feature fusion and pixel classification."""
from .aperture import ApertureDesign, design_dual_apertures
from .datamodel import (
    ConfigurationError,
    DimensionError,
    FilterBank,
    LabelMap,
    PatternCube,
    SpectralCube,
    ValidationError,
)
from .operators import DifferenceOperator, SparseProjection, WaveletOperator, build_projection
from .sensing import MeasurementSet, simulate
from .solver import FusionConfig, FusionReport, fuse

__all__ = [
    "ApertureDesign",
    "ConfigurationError",
    "DifferenceOperator",
    "DimensionError",
    "FilterBank",
    "FusionConfig",
    "FusionReport",
    "LabelMap",
    "MeasurementSet",
    "PatternCube",
    "SparseProjection",
    "SpectralCube",
    "ValidationError",
    "WaveletOperator",
    "build_projection",
    "design_dual_apertures",
    "fuse",
    "simulate",
]
__version__ = "0.1.0"
