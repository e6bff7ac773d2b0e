"""Metastability of sequential quantum channels: spectra, metastable manifolds and measurement trajectories."""

__version__ = "0.1.0"

from .channels import (
    QuantumChannel,
    ValidityReport,
    apply,
    channel_from_joint_unitary,
    channel_from_kraus,
    compose,
    validate,
)
from .estimator import MetastabilityAnalyzer
from .manifold import (
    FixedPointStructure,
    MetastableManifold,
    commutant_projections,
    ems_candidates,
    ems_qubit,
    fixed_point_space,
    metastable_coefficients,
    mm_projector,
)
from .models import ConditionalMaps, RimSpec, SpinSystem, rim_channel
from .spectral import MetastableRegion, SpectralData, classify_spectrum, spectral_decompose
from .trajectories import EnsembleResult, Histogram, TrajectoryRecord, run_ensemble, sample_trajectory

__all__ = [
    "ConditionalMaps",
    "EnsembleResult",
    "FixedPointStructure",
    "Histogram",
    "MetastabilityAnalyzer",
    "MetastableManifold",
    "MetastableRegion",
    "QuantumChannel",
    "RimSpec",
    "SpectralData",
    "SpinSystem",
    "TrajectoryRecord",
    "ValidityReport",
    "apply",
    "channel_from_joint_unitary",
    "channel_from_kraus",
    "classify_spectrum",
    "commutant_projections",
    "compose",
    "ems_candidates",
    "ems_qubit",
    "fixed_point_space",
    "metastable_coefficients",
    "mm_projector",
    "rim_channel",
    "run_ensemble",
    "sample_trajectory",
    "spectral_decompose",
    "validate",
]
