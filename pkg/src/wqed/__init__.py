"""Photon transport through inhomogeneously broadened emitter ensembles in a waveguide."""

from .errors import (
    BadBinCount,
    ConfigError,
    IncompatibleOffsets,
    NumericalError,
    SizeLimit,
    WqedError,
)
from .spectral import HoleSpec, SpectralLine, apply_hole_burn, response
from .ensemble import EnsembleSpec, BinnedLayout, build_bins, build_cqed_layout, sample_frequencies
from .modes import collective_modes, continuum_modes, coupling_matrix, perturbative_modes

__version__ = "0.1.0"

__all__ = [
    "BadBinCount",
    "BinnedLayout",
    "ConfigError",
    "EnsembleSpec",
    "HoleSpec",
    "IncompatibleOffsets",
    "NumericalError",
    "SizeLimit",
    "SpectralLine",
    "WqedError",
    "apply_hole_burn",
    "build_bins",
    "build_cqed_layout",
    "collective_modes",
    "continuum_modes",
    "coupling_matrix",
    "perturbative_modes",
    "response",
    "sample_frequencies",
]
