"""Semidefinite programming and polytopic gain-scheduled H-infinity synthesis."""

from .hinf import (
    GeneralizedPlant,
    PerformanceWeights,
    StabilityCertificate,
    VertexControllerSet,
    closed_loop_matrices,
    closed_loop_vertices,
    generalized_plant,
    load_controller,
    quadratic_stability_certificate,
    sampled_hinf_norm,
    save_controller,
    save_gamma_log,
    scheduled_gain,
    synthesize_polytopic_hinf,
    synthesize_vertices,
)
from .sdp import SdpOptions, SdpProblem, SdpSolution, solve_sdp

__all__ = [
    "SdpOptions",
    "SdpProblem",
    "SdpSolution",
    "solve_sdp",
    "GeneralizedPlant",
    "PerformanceWeights",
    "StabilityCertificate",
    "VertexControllerSet",
    "closed_loop_matrices",
    "closed_loop_vertices",
    "generalized_plant",
    "load_controller",
    "quadratic_stability_certificate",
    "sampled_hinf_norm",
    "save_controller",
    "save_gamma_log",
    "scheduled_gain",
    "synthesize_polytopic_hinf",
    "synthesize_vertices",
]
