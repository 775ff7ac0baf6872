"""Geometric optics probes: cutoffs, amplitude transport, probe sources and decay checks"""
from .bump import PlateauBump, smooth_step
from .geometric_optics import (
    DecayReport, DecayRow, GOProbe, LowerBoundResult, build_probe, build_source, lazy_source,
    phase_residual, probe_localization, probe_lower_bound, probe_margin, probe_response, remainder_check,
    source_sobolev_norm,
)

__all__ = [
    "PlateauBump", "smooth_step", "DecayReport", "DecayRow", "GOProbe", "LowerBoundResult",
    "build_probe", "build_source", "lazy_source", "phase_residual", "probe_localization", "probe_lower_bound",
    "probe_margin", "probe_response", "remainder_check", "source_sobolev_norm",
]
