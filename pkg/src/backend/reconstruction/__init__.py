"""Potential reconstruction from measurement data and the stability sweep"""
from .reconstruction import (
    DifferenceField, OperatorPair, ProbeSettings, ReconstructionConfig, ReconstructionResult,
    illumination_source, prepare_operators, reconstruct_potential, recover_difference_field,
)
from .stability import (
    FamilyProbe, LinearResponse, PotentialPair, StabilityTable, SweepRow, SweepSetup, bump_family,
    fit_double_log, linear_response, stability_sweep, threshold_epsilon,
)

__all__ = [
    "DifferenceField", "OperatorPair", "ProbeSettings", "ReconstructionConfig",
    "ReconstructionResult", "illumination_source", "prepare_operators", "reconstruct_potential",
    "recover_difference_field", "FamilyProbe", "LinearResponse", "PotentialPair", "StabilityTable",
    "SweepRow", "SweepSetup", "bump_family", "fit_double_log", "linear_response", "stability_sweep",
    "threshold_epsilon",
]
