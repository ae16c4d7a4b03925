"""Scheduling-parameter polytopes: boxes, PCA boxes, general vertex sets."""

from __future__ import annotations

import hashlib
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import io
from ..errors import DimensionError, DimensionTooLarge, OutsideDomain
from .lp import chebyshev_residual, min_norm_weights, project_weights

logger = logging.getLogger(__name__)

__all__ = [
    "ParamPolytope",
    "BOX_KINDS",
    "cloud_digest",
    "gray_bits",
    "bounding_box",
    "pca_box",
    "general_polytope",
    "hull_vertex_filter",
    "contains",
    "violation",
    "polytope_volume",
    "barycentric",
    "project",
    "save_polytope",
    "load_polytope",
]

BOX_KINDS = ("box", "pca_box")
KINDS = ("box", "pca_box", "optimized", "general")
MAX_BOX_DIM = 20


def cloud_digest(P: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(P, dtype=float).tobytes()).hexdigest()[:16]


def gray_bits(r: int) -> np.ndarray:
    """``(2**r, r)`` 0/1 matrix; row ``m`` is the Gray code of ``m`` (bit ``a`` = axis ``a``)."""
    m = np.arange(2**r)
    g = m ^ (m >> 1)
    return ((g[:, None] >> np.arange(r)) & 1).astype(float)


@dataclass(frozen=True, eq=False)
class ParamPolytope:
    """Vertex description of ``W`` in parameter space.

    For box kinds the box is axis aligned in the frame ``y = U_pc^T rho``
    with bounds ``lower <= y <= upper``; ``vertices`` are always stored in
    the original ``rho`` coordinates (columns, Gray-code order for boxes).
    """

    vertices: np.ndarray
    kind: str
    U_pc: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown polytope kind {self.kind!r}")
        V = np.array(self.vertices, dtype=float)
        if V.ndim != 2:
            raise DimensionError("vertices must be an r x N_v matrix")
        V.setflags(write=False)
        object.__setattr__(self, "vertices", V)
        r = V.shape[0]
        if self.kind in BOX_KINDS:
            if self.lower is None or self.upper is None:
                raise ValueError("box kinds need lower/upper bounds")
            if V.shape[1] != 2**r:
                raise DimensionError(f"a box in R^{r} has {2**r} vertices, got {V.shape[1]}")
        U = np.eye(r) if self.U_pc is None else np.array(self.U_pc, dtype=float)
        if U.shape != (r, r):
            raise DimensionError("U_pc must be r x r")
        for name, val in (("U_pc", U), ("lower", self.lower), ("upper", self.upper)):
            if val is not None:
                arr = np.array(val, dtype=float)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)
        object.__setattr__(self, "provenance", dict(self.provenance))

    @property
    def r(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[1]

    @property
    def is_box(self) -> bool:
        return self.kind in BOX_KINDS

    @property
    def fallback(self) -> bool:
        return bool(self.provenance.get("fallback", False))

    def frame(self, rho) -> np.ndarray:
        return self.U_pc.T @ np.asarray(rho, dtype=float)


# Construction ================================================================
def _box_from_bounds(lower, upper, U, kind, provenance) -> ParamPolytope:
    r = len(lower)
    bits = gray_bits(r)
    frame_vertices = lower[:, None] + bits.T * (upper - lower)[:, None]
    return ParamPolytope(U @ frame_vertices, kind, U_pc=U, lower=lower, upper=upper, provenance=provenance)


def _box_bounds(Y: np.ndarray, margin: float) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = Y.min(axis=1), Y.max(axis=1)
    rng = hi - lo
    lo = lo - margin * rng
    hi = hi + margin * rng
    delta = max(1e-6, 1e-3 * rng.max(initial=0.0))
    degenerate = rng < delta
    lo[degenerate] -= delta
    hi[degenerate] += delta
    return lo, hi


def bounding_box(P, margin: float = 0.0, *, seed: int | None = None) -> ParamPolytope:
    """Axis-aligned box around the columns of ``P`` (``2**r`` vertices).

    Each side is widened by ``margin`` times the coordinate range; axes whose
    range is below ``delta = max(1e-6, 1e-3 * max range)`` are widened by
    ``delta`` on both sides instead.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    r, N = P.shape
    if N < 1:
        raise ValueError("point cloud is empty")
    if r > MAX_BOX_DIM:
        raise DimensionTooLarge(f"bounding box in R^{r} would have 2^{r} vertices")
    lo, hi = _box_bounds(P, margin)
    prov = {"digest": cloud_digest(P), "n_points": N, "margin": margin, "seed": seed}
    return _box_from_bounds(lo, hi, np.eye(r), "box", prov)


def _sign_normalize(U: np.ndarray) -> np.ndarray:
    pivots = U[np.argmax(np.abs(U), axis=0), np.arange(U.shape[1])]
    return U * np.where(pivots < 0, -1.0, 1.0)


def pca_box(P, A_list=None, margin: float = 0.0, *, seed: int | None = None):
    """Bounding box in principal-component coordinates.

    Returns ``(polytope, A_pc)`` where ``A_pc[i] = sum_j U[j, i] A_list[j]``
    are the coefficient matrices for the rotated parameter ``U^T rho``
    (``None`` when ``A_list`` is not given).
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    r, N = P.shape
    if N < 1:
        raise ValueError("point cloud is empty")
    if r > MAX_BOX_DIM:
        raise DimensionTooLarge(f"bounding box in R^{r} would have 2^{r} vertices")
    cov = np.cov(P) if N > 1 else np.zeros((r, r))
    cov = np.atleast_2d(cov)
    if not np.any(cov):
        warnings.warn("zero-variance point cloud; using the identity rotation", RuntimeWarning, stacklevel=2)
        U = np.eye(r)
    else:
        evals, evecs = np.linalg.eigh(cov)
        U = _sign_normalize(evecs[:, np.argsort(evals, kind="stable")[::-1]])
    lo, hi = _box_bounds(U.T @ P, margin)
    prov = {"digest": cloud_digest(P), "n_points": N, "margin": margin, "seed": seed}
    W = _box_from_bounds(lo, hi, U, "pca_box", prov)
    A_pc = None
    if A_list is not None:
        A = np.asarray(A_list, dtype=float)
        if A.shape[0] != r:
            raise DimensionError(f"need {r} coefficient matrices, got {A.shape[0]}")
        A_pc = np.tensordot(U.T, A, axes=1)
    return W, A_pc


def general_polytope(vertices, kind: str = "general", provenance: dict | None = None) -> ParamPolytope:
    return ParamPolytope(np.atleast_2d(np.asarray(vertices, dtype=float)), kind, provenance=provenance or {})


def _hull_tol(P: np.ndarray) -> float:
    return 1e-9 * max(1.0, np.abs(P).max(initial=0.0))


def hull_vertex_filter(P) -> np.ndarray:
    """Indices of the columns of ``P`` that are vertices of ``conv(P)``.

    A point is a vertex iff it is not in the hull of the remaining points
    (one LP per point).  Exact duplicates are represented by their first
    occurrence.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    r, N = P.shape
    if N == 0:
        return np.zeros(0, dtype=int)
    _, first = np.unique(P.T, axis=0, return_index=True)
    first = np.sort(first)
    if first.size == 1:
        return first
    Pu = P[:, first]
    tol = _hull_tol(P)
    keep = []
    for m in range(Pu.shape[1]):
        others = np.delete(Pu, m, axis=1)
        t, _ = chebyshev_residual(others, Pu[:, m])
        if t > tol:
            keep.append(first[m])
    return np.array(keep, dtype=int)


# Queries =====================================================================
def violation(W: ParamPolytope, rho) -> float:
    """Sup-norm distance of ``rho`` from ``W`` (box kinds: measured in the box frame)."""
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (W.r,):
        raise DimensionError(f"parameter must have shape ({W.r},)")
    if W.is_box:
        y = W.frame(rho)
        return float(max(0.0, np.max(W.lower - y), np.max(y - W.upper)))
    t, _ = chebyshev_residual(W.vertices, rho)
    return t


def contains(W: ParamPolytope, rho, tol: float = 1e-9) -> bool:
    """``True`` iff some convex combination of vertices is within ``tol`` of ``rho`` (sup norm)."""
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (W.r,):
        raise DimensionError(f"parameter must have shape ({W.r},)")
    if W.kind == "box":
        return bool(np.all(rho >= W.lower - tol) and np.all(rho <= W.upper + tol))
    t, _ = chebyshev_residual(W.vertices, rho)
    return t <= tol


def polytope_volume(W: ParamPolytope, n_samples: int = 4000, seed: int = 0) -> tuple[float, float]:
    """Volume of ``W`` and its standard error.

    Boxes are exact.  Other polytopes use Monte Carlo: the hit fraction in the
    polytope's own bounding box times that box's volume.
    """
    if W.is_box:
        return float(np.prod(W.upper - W.lower)), 0.0
    if n_samples < 1000:
        raise ValueError("Monte Carlo volume needs n_samples >= 1000")
    lo, hi = W.vertices.min(axis=1), W.vertices.max(axis=1)
    vol_bb = float(np.prod(hi - lo))
    if vol_bb == 0.0:
        return 0.0, 0.0
    rng = np.random.default_rng(seed)
    X = lo[:, None] + (hi - lo)[:, None] * rng.random((W.r, n_samples))
    hits = sum(contains(W, X[:, s], tol=0.0 + _hull_tol(W.vertices)) for s in range(n_samples))
    f = hits / n_samples
    return f * vol_bb, vol_bb * float(np.sqrt(f * (1.0 - f) / n_samples))


def _box_weights(W: ParamPolytope, rho: np.ndarray) -> np.ndarray:
    y = W.frame(rho)
    s = np.clip((y - W.lower) / (W.upper - W.lower), 0.0, 1.0)
    bits = gray_bits(W.r)
    return np.prod(np.where(bits > 0, s, 1.0 - s), axis=1)


def barycentric(W: ParamPolytope, rho, tol: float = 1e-9) -> np.ndarray:
    """Convex weights ``lam`` with ``W.vertices @ lam = rho``.

    Boxes use the multilinear (tensor-product) weights; general polytopes the
    minimum-norm weights.  Raises :class:`OutsideDomain` when ``rho`` is
    farther than ``tol`` from ``W``.
    """
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (W.r,):
        raise DimensionError(f"parameter must have shape ({W.r},)")
    if W.is_box:
        v = violation(W, rho)
        if v > tol:
            raise OutsideDomain(f"parameter outside the box by {v:.3g}", v)
        return _box_weights(W, rho)
    t, lam0 = chebyshev_residual(W.vertices, rho)
    if t > tol:
        raise OutsideDomain(f"parameter outside the polytope by {t:.3g}", t)
    return min_norm_weights(W.vertices, rho, lam0)


def project(W: ParamPolytope, rho) -> np.ndarray:
    """Point of ``W`` closest to ``rho`` (exact clipping for boxes, NNLS otherwise)."""
    rho = np.asarray(rho, dtype=float)
    if W.is_box:
        y = np.clip(W.frame(rho), W.lower, W.upper)
        return W.U_pc @ y
    lam = project_weights(W.vertices, rho)
    return W.vertices @ lam


# Serialization ===============================================================
def save_polytope(W: ParamPolytope, path) -> Path:
    data = {
        "kind": W.kind,
        "r": W.r,
        "n_vertices": W.n_vertices,
        "vertices": W.vertices.tolist(),  # row-major r x N_v
        "U_pc": W.U_pc.tolist(),
        "lower": None if W.lower is None else W.lower.tolist(),
        "upper": None if W.upper is None else W.upper.tolist(),
        "provenance": W.provenance,
    }
    return io.write_json(path, data)


def load_polytope(path) -> ParamPolytope:
    d = io.read_json(path)
    return ParamPolytope(
        np.array(d["vertices"], dtype=float).reshape(d["r"], d["n_vertices"]),
        d["kind"],
        U_pc=np.array(d["U_pc"], dtype=float),
        lower=None if d.get("lower") is None else np.array(d["lower"]),
        upper=None if d.get("upper") is None else np.array(d["upper"]),
        provenance=d.get("provenance", {}),
    )
