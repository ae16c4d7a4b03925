"""Scheduling-parameter polytopes and the operations the controller needs."""

from .core import (
    BOX_KINDS,
    ParamPolytope,
    barycentric,
    bounding_box,
    contains,
    general_polytope,
    gray_bits,
    hull_vertex_filter,
    load_polytope,
    pca_box,
    polytope_volume,
    project,
    save_polytope,
    violation,
)
from .optimize import GAParams, demo_cloud, hull_volume, optimize_polytope

__all__ = [
    "BOX_KINDS",
    "GAParams",
    "ParamPolytope",
    "barycentric",
    "bounding_box",
    "contains",
    "demo_cloud",
    "general_polytope",
    "gray_bits",
    "hull_volume",
    "hull_vertex_filter",
    "load_polytope",
    "optimize_polytope",
    "pca_box",
    "polytope_volume",
    "project",
    "save_polytope",
    "violation",
]
