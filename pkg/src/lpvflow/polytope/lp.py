"""Small dense LP/QP kernels used for hull membership and barycentric weights.

Problems here have at most a few hundred columns and a dozen rows, so a
tableau simplex with Bland's anti-cycling rule is both adequate and fully
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

__all__ = ["LPResult", "simplex", "chebyshev_residual", "min_norm_weights", "project_weights"]

_PIVOT_TOL = 1e-11


@dataclass
class LPResult:
    status: str  # "optimal" | "infeasible" | "unbounded" | "iteration_limit"
    x: np.ndarray | None
    fun: float
    iterations: int


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    col_vals = T[:, col].copy()
    col_vals[row] = 0.0
    T -= np.outer(col_vals, T[row])


def _run(T: np.ndarray, basis: list[int], ncols: int, max_iter: int) -> tuple[str, int]:
    """Bland-rule simplex on tableau ``T`` whose last row holds reduced costs."""
    m = T.shape[0] - 1
    it = 0
    while it < max_iter:
        cost = T[-1, :ncols]
        scale = max(1.0, np.abs(cost).max(initial=0.0))
        enter = np.flatnonzero(cost < -_PIVOT_TOL * scale)
        if enter.size == 0:
            return "optimal", it
        col = int(enter[0])
        column = T[:m, col]
        pos = column > _PIVOT_TOL
        if not pos.any():
            return "unbounded", it
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / column[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + 1e-12 * max(1.0, abs(best)))
        row = int(min(ties, key=lambda i: basis[i]))
        _pivot(T, row, col)
        basis[row] = col
        it += 1
    return "iteration_limit", it


def simplex(c, A_eq, b_eq, *, max_iter: int = 5000) -> LPResult:
    """Minimise ``c @ x`` subject to ``A_eq x = b_eq``, ``x >= 0`` (two-phase)."""
    c = np.asarray(c, dtype=float)
    A = np.array(A_eq, dtype=float)
    b = np.array(b_eq, dtype=float)
    m, n = A.shape
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0

    # phase 1 with one artificial per row
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n : n + m] = np.eye(m)
    T[:m, -1] = b
    T[-1, :n] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()
    basis = list(range(n, n + m))
    status, it1 = _run(T, basis, n + m, max_iter)
    if status == "iteration_limit":
        return LPResult(status, None, np.nan, it1)
    infeas = -T[-1, -1]
    if infeas > 1e-9 * max(1.0, np.abs(b).max(initial=0.0)):
        return LPResult("infeasible", None, np.nan, it1)

    # drive artificials out of the basis; drop redundant rows
    keep = []
    for i in range(m):
        if basis[i] >= n:
            cand = np.flatnonzero(np.abs(T[i, :n]) > _PIVOT_TOL)
            if cand.size:
                _pivot(T, i, int(cand[0]))
                basis[i] = int(cand[0])
                keep.append(i)
        else:
            keep.append(i)
    T = np.vstack([T[keep][:, list(range(n)) + [T.shape[1] - 1]], np.zeros((1, n + 1))])
    basis = [basis[i] for i in keep]
    m2 = len(keep)

    # phase 2
    T[-1, :n] = c
    for i, j in enumerate(basis):
        if c[j] != 0.0:
            T[-1] -= c[j] * T[i]
    status, it2 = _run(T, basis, n, max_iter - it1)
    if status != "optimal":
        return LPResult(status, None, np.nan, it1 + it2)
    x = np.zeros(n)
    for i, j in enumerate(basis):
        x[j] = T[i, -1]
    x[x < 0] = 0.0
    del m2
    return LPResult("optimal", x, float(c @ x), it1 + it2)


def chebyshev_residual(W: np.ndarray, rho: np.ndarray) -> tuple[float, np.ndarray]:
    """Solve ``min t`` s.t. ``|W lam - rho|_inf <= t``, ``lam >= 0``, ``sum lam = 1``.

    Returns ``(t, lam)``; ``t`` is the sup-norm distance from ``rho`` to the
    convex hull of the columns of ``W``.
    """
    W = np.asarray(W, dtype=float)
    rho = np.asarray(rho, dtype=float)
    r, N = W.shape
    # variables: lam (N), t, s_plus (r), s_minus (r)
    nv = N + 1 + 2 * r
    A = np.zeros((2 * r + 1, nv))
    A[:r, :N] = W
    A[:r, N] = -1.0
    A[:r, N + 1 : N + 1 + r] = np.eye(r)
    A[r : 2 * r, :N] = -W
    A[r : 2 * r, N] = -1.0
    A[r : 2 * r, N + 1 + r :] = np.eye(r)
    A[-1, :N] = 1.0
    b = np.concatenate([rho, -rho, [1.0]])
    c = np.zeros(nv)
    c[N] = 1.0
    res = simplex(c, A, b)
    if res.status != "optimal":  # pragma: no cover - the LP is always feasible and bounded
        raise RuntimeError(f"membership LP failed: {res.status}")
    lam = res.x[:N]
    return max(float(np.abs(W @ lam - rho).max(initial=0.0)), 0.0), lam


def min_norm_weights(W: np.ndarray, rho: np.ndarray, lam0: np.ndarray, *, max_iter: int | None = None) -> np.ndarray:
    """Minimum-Euclidean-norm ``lam >= 0`` with ``W lam = rho`` and ``sum lam = 1``.

    Primal active-set method started from the feasible point ``lam0``.  Steps
    stay in the null space of the equality constraints, so the residual of
    ``lam0`` is preserved.
    """
    W = np.asarray(W, dtype=float)
    r, N = W.shape
    E = np.vstack([W, np.ones((1, N))])
    lam = np.array(lam0, dtype=float)
    lam[lam < 0] = 0.0
    active = lam <= 1e-15
    lam[active] = 0.0
    max_iter = max_iter or 20 * N + 50
    for _ in range(max_iter):
        free = ~active
        EF = E[:, free]
        # projection of -lam_F onto null(E_F)
        y, *_ = np.linalg.lstsq(EF.T, lam[free], rcond=None)
        step_F = -(lam[free] - EF.T @ y)
        if np.abs(step_F).max(initial=0.0) <= 1e-14 * max(1.0, np.abs(lam).max()):
            mult = -(E.T @ y)
            mult[free] = 0.0
            worst = int(np.argmin(np.where(active, mult, np.inf)))
            if not active.any() or mult[worst] >= -1e-12:
                return lam
            active[worst] = False
            continue
        step = np.zeros(N)
        step[free] = step_F
        blocking = free & (step < 0)
        alpha = 1.0
        hit = -1
        if blocking.any():
            idx = np.flatnonzero(blocking)
            ratios = -lam[idx] / step[idx]
            j = int(np.argmin(ratios))
            if ratios[j] < 1.0:
                alpha, hit = float(ratios[j]), int(idx[j])
        lam = lam + alpha * step
        if hit >= 0:
            lam[hit] = 0.0
            active[hit] = True
        lam[lam < 0] = 0.0
    return lam


def project_weights(W: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Weights of the (near) Euclidean projection of ``rho`` onto ``conv(W)``.

    Nonnegative least squares with a heavily weighted sum-to-one row; the
    result is renormalised so ``W @ lam`` lies exactly in the hull.
    """
    W = np.asarray(W, dtype=float)
    scale = max(1.0, np.abs(W).max(initial=0.0), np.abs(rho).max(initial=0.0))
    M = 1e4 * scale
    A = np.vstack([W, M * np.ones((1, W.shape[1]))])
    b = np.concatenate([rho, [M]])
    lam, _ = nnls(A, b, maxiter=50 * W.shape[1])
    total = lam.sum()
    if total <= 0:
        lam = np.full(W.shape[1], 1.0 / W.shape[1])
    else:
        lam = lam / total
    return lam
