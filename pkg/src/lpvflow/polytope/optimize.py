"""Optimized enclosing polytopes with fewer vertices than the bounding box.

Starting from the hull vertices of the data, ``n_k`` extra points are added
and evolved by a genetic algorithm so that the hull of data and added points
has small volume and few vertices.  The scalarised fitness is

    vol(hull) / vol(bbox) + beta * n_vertices(hull) / 2**r.

Fitness evaluation runs on qhull (through :mod:`scipy.spatial`); the
returned polytope is then re-derived with the LP vertex filter and
containment checks.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from ..errors import OptimizationFailed
from .core import (
    ParamPolytope,
    _hull_tol,
    bounding_box,
    cloud_digest,
    contains,
    hull_vertex_filter,
)

logger = logging.getLogger(__name__)

__all__ = ["GAParams", "optimize_polytope", "demo_cloud", "hull_volume"]


@dataclass(frozen=True)
class GAParams:
    population: int = 40
    generations: int = 200
    mutation_scale: float = 0.05
    beta: float = 1.0
    tournament: int = 3
    elite: int = 2
    crossover_rate: float = 0.7


def hull_volume(points: np.ndarray) -> float:
    """Exact volume of ``conv(points)`` for column points (0 when degenerate)."""
    try:
        return float(ConvexHull(points.T).volume)
    except (QhullError, ValueError):
        return 0.0


class _Fitness:
    """Fitness of candidate point sets on data normalised to the unit box."""

    def __init__(self, data_vertices: np.ndarray, beta: float, n_exact: int):
        self.D = data_vertices  # (h, r) rows
        self.r = data_vertices.shape[1]
        self.beta = beta
        self.n_exact = n_exact

    def __call__(self, cand: np.ndarray) -> tuple[float, float, int]:
        """Return ``(fitness, volume, vertex count)`` for candidate rows ``cand``."""
        r = self.r
        try:
            hull = ConvexHull(cand)
        except (QhullError, ValueError):
            return np.inf, np.inf, 0
        eq = hull.equations
        slack = self.D @ eq[:, :-1].T + eq[:, -1]
        outside = self.D[slack.max(axis=1) > 1e-10]
        if outside.shape[0] == 0:
            vol, nv = hull.volume, len(hull.vertices)
        elif outside.shape[0] <= self.n_exact:
            try:
                h2 = ConvexHull(np.vstack([cand, outside]))
            except (QhullError, ValueError):
                return np.inf, np.inf, 0
            vol, nv = h2.volume, len(h2.vertices)
        else:
            # too many uncovered data vertices for an exact hull: volume of the
            # candidate hull and every uncovered point counted as a vertex
            vol, nv = hull.volume, len(hull.vertices) + outside.shape[0]
        return vol + self.beta * nv / 2**r, vol, nv


def _farthest_subset(D: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    idx = [int(rng.integers(D.shape[0]))]
    dist = np.linalg.norm(D - D[idx[0]], axis=1)
    for _ in range(1, m):
        j = int(np.argmax(dist))
        idx.append(j)
        dist = np.minimum(dist, np.linalg.norm(D - D[j], axis=1))
    return D[idx]


def _initial_population(D: np.ndarray, n_k: int, size: int, rng: np.random.Generator) -> list[np.ndarray]:
    r = D.shape[1]
    centre = 0.5 * (D.min(axis=0) + D.max(axis=0))
    pop = []
    for s in range(size):
        mode = s % 3
        if mode == 0 and D.shape[0] >= n_k:
            base = _farthest_subset(D, n_k, rng)
            scale = 1.0 + 0.6 * rng.random()
            pop.append(centre + scale * (base - centre))
        elif mode == 1:
            # scaled simplex-like spread around the centre
            dirs = rng.normal(size=(n_k, r))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            pop.append(centre + (0.6 + 0.8 * rng.random()) * dirs * np.sqrt(r))
        else:
            pop.append(rng.uniform(-0.25, 1.25, size=(n_k, r)))
    return pop


def _tournament(fit: np.ndarray, k: int, rng: np.random.Generator) -> int:
    idx = rng.integers(len(fit), size=k)
    return int(idx[np.argmin(fit[idx])])


def optimize_polytope(
    P,
    n_k: int,
    ga: GAParams | None = None,
    seed: int = 0,
    *,
    allow_fallback: bool = True,
) -> ParamPolytope:
    """Evolve ``n_k`` added vertices; return the best polytope found.

    The result underbids the bounding box strictly in volume and in vertex
    count; otherwise the bounding box is returned with
    ``provenance['fallback'] = True`` (or :class:`OptimizationFailed` is
    raised when ``allow_fallback`` is false).
    """
    ga = ga or GAParams()
    P = np.atleast_2d(np.asarray(P, dtype=float))
    r, N = P.shape
    rng = np.random.default_rng(seed)
    bbox = bounding_box(P, 0.0, seed=seed)
    lo, hi = bbox.lower, bbox.upper
    span = hi - lo
    vol_bb = float(np.prod(span))

    hull_idx = hull_vertex_filter(P)
    Dn = ((P[:, hull_idx] - lo[:, None]) / span[:, None]).T  # normalised data vertices (rows)
    fitness = _Fitness(Dn, ga.beta, n_exact=max(2 * n_k, 12))

    pop = _initial_population(Dn, n_k, ga.population, rng)
    scores = np.array([fitness(c)[0] for c in pop])
    sigma = ga.mutation_scale  # data range is 1 on every normalised axis
    for _gen in range(ga.generations):
        order = np.argsort(scores, kind="stable")
        new = [pop[i].copy() for i in order[: ga.elite]]
        while len(new) < ga.population:
            a = pop[_tournament(scores, ga.tournament, rng)]
            b = pop[_tournament(scores, ga.tournament, rng)]
            if rng.random() < ga.crossover_rate:
                mask = rng.random(n_k) < 0.5
                child = np.where(mask[:, None], a, b)
            else:
                child = a.copy()
            # mutate a random subset of points (at least one)
            hit = rng.random(n_k) < 1.0 / n_k
            hit[rng.integers(n_k)] = True
            child = child + hit[:, None] * rng.normal(0.0, sigma, size=(n_k, r))
            new.append(child)
        pop = new
        scores = np.array([fitness(c)[0] for c in pop])

    best = pop[int(np.argmin(scores))]
    _, _, nv_fit = fitness(best)
    cand = lo[:, None] + span[:, None] * best.T
    union = np.hstack([P[:, hull_idx], cand])
    keep = hull_vertex_filter(union)
    V = union[:, keep]
    vol = hull_volume(V)
    tol = _hull_tol(P)
    ok = (
        np.isfinite(scores.min())
        and V.shape[1] < 2**r
        and vol < vol_bb * (1.0 - 1e-9)
        and all(contains(ParamPolytope(V, "optimized"), P[:, j], tol) for j in range(N))
    )
    prov = {
        "digest": cloud_digest(P),
        "n_points": N,
        "seed": seed,
        "n_k": n_k,
        "ga": asdict(ga),
        "hull_volume": vol,
        "bbox_volume": vol_bb,
        "fitness": float(scores.min()),
        "fallback": False,
    }
    logger.info("optimized polytope: %d vertices (fitness count %d), volume ratio %.4f", V.shape[1], nv_fit, vol / vol_bb)
    if ok:
        return ParamPolytope(V, "optimized", provenance=prov)
    if not allow_fallback:
        raise OptimizationFailed(
            f"GA result does not underbid the bounding box ({V.shape[1]} vertices, volume ratio {vol / vol_bb:.3f})"
        )
    prov["fallback"] = True
    logger.info("falling back to the bounding box")
    return ParamPolytope(bbox.vertices, "box", U_pc=bbox.U_pc, lower=bbox.lower, upper=bbox.upper, provenance=prov)


def demo_cloud(r: int = 3, n_points: int = 417, seed: int = 0, noise: float = 0.02) -> np.ndarray:
    """Limit-cycle-like cloud: harmonic pairs with decaying amplitude plus noise.

    Mimics the leading POD coefficients of a periodic wake, where modes come
    in (cos, sin) pairs of successive harmonics.
    """
    rng = np.random.default_rng(seed)
    theta = np.linspace(0.0, 2.0 * np.pi, n_points, endpoint=False)
    rows = []
    for a in range(r):
        h = a // 2 + 1
        amp = 1.0 / h**1.2
        rows.append(amp * (np.cos(h * theta) if a % 2 == 0 else np.sin(h * theta)))
    P = np.array(rows)
    return P + noise * rng.normal(size=P.shape)
