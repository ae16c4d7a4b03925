"""Dense semidefinite programs solved by a logarithmic-barrier Newton method.

Problems are stated with matrix-valued *variables* and *constraints* given
as affine callables::

    prob = SdpProblem()
    prob.sym("X", 3)
    prob.add(lambda v: A.T @ v["X"] + v["X"] @ A, "<")   # A^T X + X A < 0
    prob.add(lambda v: v["X"], ">")                       # X > 0
    sol = solve_sdp(prob)

Each callable is sampled once per coordinate to obtain its affine
coefficients.  Feasibility is decided by the phase-1 problem

    min s   s.t.  F_j(z) <= s I  for all j,   |z| <= radius,

stopping as soon as ``s`` certifies the requested strictness margin, or
declaring infeasibility when the barrier duality bound proves that margin
unattainable inside the ball.  An optional objective (linear plus a
Frobenius-norm penalty on selected variables) is then minimised in phase 2.
Every accepted point is re-verified by dense eigenvalue computations.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from ..errors import IterationLimit, NumericalBreakdown

logger = logging.getLogger(__name__)

__all__ = ["SdpProblem", "SdpOptions", "SdpSolution", "solve_sdp", "MAX_MATRIX", "MAX_CONSTRAINTS"]

MAX_MATRIX = 40
MAX_CONSTRAINTS = 70
_SQRT2 = np.sqrt(2.0)


@dataclass
class _Var:
    name: str
    kind: str  # "sym" | "full" | "scalar"
    shape: tuple[int, int]
    offset: int = 0

    @property
    def size(self) -> int:
        if self.kind == "sym":
            d = self.shape[0]
            return d * (d + 1) // 2
        if self.kind == "full":
            return self.shape[0] * self.shape[1]
        return 1


@dataclass
class _Constraint:
    fn: Callable[[dict], np.ndarray]
    sign: float  # +1 for "< 0", -1 for "> 0"
    name: str


class SdpProblem:
    """Container for variables, matrix inequalities and an optional objective."""

    def __init__(self):
        self._vars: list[_Var] = []
        self._cons: list[_Constraint] = []
        self._objective: Callable[[dict], float] | None = None
        self._penalised: tuple[str, ...] = ()
        self._compiled = None

    # declarations ---------------------------------------------------------
    def _declare(self, var: _Var) -> str:
        if any(v.name == var.name for v in self._vars):
            raise ValueError(f"variable {var.name!r} already declared")
        var.offset = sum(v.size for v in self._vars)
        self._vars.append(var)
        self._compiled = None
        return var.name

    def sym(self, name: str, n: int) -> str:
        return self._declare(_Var(name, "sym", (n, n)))

    def full(self, name: str, rows: int, cols: int) -> str:
        return self._declare(_Var(name, "full", (rows, cols)))

    def scalar(self, name: str) -> str:
        return self._declare(_Var(name, "scalar", (1, 1)))

    def add(self, fn: Callable[[dict], np.ndarray], sense: str = "<", name: str | None = None) -> None:
        """Require ``fn(values) < 0`` (``sense='<'``) or ``> 0`` (``'>'``)."""
        if sense not in ("<", ">"):
            raise ValueError("sense must be '<' or '>'")
        self._cons.append(_Constraint(fn, 1.0 if sense == "<" else -1.0, name or f"c{len(self._cons)}"))
        self._compiled = None

    def minimize(self, linear: Callable[[dict], float] | None = None, frobenius: tuple[str, ...] = ()) -> None:
        """Objective ``linear(values) + 0.5 * sum ||V||_F^2`` over the ``frobenius`` variables."""
        self._objective = linear
        self._penalised = tuple(frobenius)
        self._compiled = None

    @property
    def n_coordinates(self) -> int:
        return sum(v.size for v in self._vars)

    @property
    def variables(self) -> list[str]:
        return [v.name for v in self._vars]

    # coordinates ------------------------------------------------------------
    def decode(self, z: np.ndarray) -> dict:
        out = {}
        for v in self._vars:
            seg = z[v.offset : v.offset + v.size]
            if v.kind == "scalar":
                out[v.name] = float(seg[0])
            elif v.kind == "full":
                out[v.name] = seg.reshape(v.shape)
            else:
                d = v.shape[0]
                M = np.zeros((d, d))
                iu = np.triu_indices(d)
                vals = seg.copy()
                off = iu[0] != iu[1]
                vals[off] /= _SQRT2
                M[iu] = vals
                M[(iu[1], iu[0])] = vals
                out[v.name] = M
        return out

    def encode(self, values: dict) -> np.ndarray:
        """Coordinates of ``values``; variables missing from ``values`` are zero."""
        z = np.zeros(self.n_coordinates)
        for v in self._vars:
            if v.name not in values:
                continue
            val = values[v.name]
            if v.kind == "scalar":
                z[v.offset] = float(val)
            elif v.kind == "full":
                z[v.offset : v.offset + v.size] = np.asarray(val, dtype=float).ravel()
            else:
                M = np.asarray(val, dtype=float)
                iu = np.triu_indices(v.shape[0])
                seg = M[iu].copy()
                seg[iu[0] != iu[1]] *= _SQRT2
                z[v.offset : v.offset + v.size] = seg
        return z

    def compile(self):
        """Sample every callable to obtain ``F_j(z) = F_j0 + sum_i z_i F_ji`` (sign-adjusted to ``< 0``)."""
        if self._compiled is not None:
            return self._compiled
        m = self.n_coordinates
        zero = self.decode(np.zeros(m))
        unit = [self.decode(np.eye(1, m, i).ravel()) for i in range(m)]
        blocks = []
        for con in self._cons:
            F0 = np.atleast_2d(np.asarray(con.fn(zero), dtype=float))
            d = F0.shape[0]
            if F0.shape != (d, d):
                raise ValueError(f"constraint {con.name!r} is not square")
            Fi = np.empty((m, d, d))
            for i in range(m):
                Fi[i] = np.atleast_2d(np.asarray(con.fn(unit[i]), dtype=float)) - F0
            F0 = con.sign * 0.5 * (F0 + F0.T)
            Fi = con.sign * 0.5 * (Fi + Fi.transpose(0, 2, 1))
            blocks.append((con.name, F0, Fi))
        c0, c = 0.0, np.zeros(m)
        if self._objective is not None:
            c0 = float(self._objective(zero))
            c = np.array([float(self._objective(u)) - c0 for u in unit])
        qmask = np.zeros(m, dtype=bool)
        for v in self._vars:
            if v.name in self._penalised:
                qmask[v.offset : v.offset + v.size] = True
        self._compiled = (blocks, c0, c, qmask)
        return self._compiled

    def coordinates_of(self, name: str) -> slice:
        for v in self._vars:
            if v.name == name:
                return slice(v.offset, v.offset + v.size)
        raise KeyError(name)


@dataclass
class SdpOptions:
    margin: float = 1e-8
    """Accepted solutions satisfy ``lambda_max(F_j) <= -margin`` for every constraint."""
    target: float | None = None
    """Phase-1 stopping level for ``-s``; defaults to ``10 * margin``."""
    radius: float = 1e6
    mu: float = 10.0
    max_newton: int = 600
    gap_tol: float = 1e-7
    maximize_margin: bool = False
    """Run phase 1 to optimality (the most interior point) instead of stopping at ``target``."""
    max_matrix: int = MAX_MATRIX
    max_constraints: int = MAX_CONSTRAINTS


@dataclass
class SdpSolution:
    status: str  # "feasible" | "optimal" | "infeasible"
    values: dict | None
    margin: float
    """Largest eigenvalue over all sign-adjusted constraints (negative when strict)."""
    iterations: int
    seconds: float
    objective: float | None = None
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status in ("feasible", "optimal")


# barrier machinery ===========================================================
class _Barrier:
    """``-sum log det(G_j0 + sum_i y_i G_ji) - log(R^2 - |y[:nz]|^2)``."""

    def __init__(self, G0s, Gis, nz: int, radius: float):
        self.G0s, self.Gis, self.nz, self.R2 = G0s, Gis, nz, radius**2

    def value(self, y) -> float:
        tot = 0.0
        for G0, Gi in zip(self.G0s, self.Gis):
            M = G0 + np.tensordot(y, Gi, axes=1)
            try:
                L = np.linalg.cholesky(M)
            except np.linalg.LinAlgError:
                return np.inf
            tot -= 2.0 * np.log(np.diag(L)).sum()
        slack = self.R2 - y[: self.nz] @ y[: self.nz]
        if slack <= 0:
            return np.inf
        return tot - np.log(slack)

    def derivatives(self, y):
        n = y.size
        g = np.zeros(n)
        H = np.zeros((n, n))
        for G0, Gi in zip(self.G0s, self.Gis):
            M = G0 + np.tensordot(y, Gi, axes=1)
            L = np.linalg.cholesky(M)
            Linv = sla.solve_triangular(L, np.eye(L.shape[0]), lower=True)
            T = Linv @ Gi @ Linv.T
            g -= np.einsum("ijj->i", T)
            flat = T.reshape(n, -1)
            H += flat @ flat.T
        zz = y[: self.nz]
        slack = self.R2 - zz @ zz
        g[: self.nz] += 2.0 * zz / slack
        H[: self.nz, : self.nz] += 2.0 * np.eye(self.nz) / slack + 4.0 * np.outer(zz, zz) / slack**2
        return g, H

    @property
    def degree(self) -> int:
        return sum(G0.shape[0] for G0 in self.G0s) + 1


def _newton_direction(H, g):
    try:
        cf = sla.cho_factor(H, check_finite=False)
        return -sla.cho_solve(cf, g, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        reg = 1e-12 * max(1.0, np.abs(np.diag(H)).max())
        try:
            cf = sla.cho_factor(H + reg * np.eye(len(g)), check_finite=False)
            return -sla.cho_solve(cf, g, check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            raise NumericalBreakdown("singular Newton system") from None


def _center(barrier: _Barrier, y, t, c, qmask, budget, stop=None):
    """Damped Newton on ``t (c y + 0.5 |y_q|^2) + barrier(y)``.

    Returns ``(y, used, state)`` with ``state`` one of ``"centered"``,
    ``"stopped"`` (the ``stop`` predicate fired), ``"stalled"`` (no further
    decrease at working precision) or ``"budget"``.
    """
    used = 0
    flat = 0

    def f(yy):
        b = barrier.value(yy)
        return t * (c @ yy + 0.5 * (yy[qmask] @ yy[qmask])) + b

    fy = f(y)
    while used < budget:
        gb, Hb = barrier.derivatives(y)
        g = t * (c + np.where(qmask, y, 0.0)) + gb
        H = Hb + t * np.diag(qmask.astype(float))
        dy = _newton_direction(H, g)
        dec = -g @ dy
        used += 1
        if not np.isfinite(dec):
            raise NumericalBreakdown("non-finite Newton decrement")
        if dec < 0:
            dy, dec = -g / max(np.abs(np.diag(H)).max(), 1e-300), g @ g / max(np.abs(np.diag(H)).max(), 1e-300)
        if dec * 0.5 <= 1e-9:
            return y, used, "centered"
        alpha = 1.0
        while True:
            y_new = y + alpha * dy
            f_new = f(y_new)
            if np.isfinite(f_new) and f_new <= fy - 0.25 * alpha * dec:
                break
            alpha *= 0.5
            if alpha < 1e-14:
                # a tiny decrement is lost in the rounding of f: close enough
                return y, used, "centered" if dec <= 1e-5 else "stalled"
        # progress below rounding level of f for several steps in a row
        flat = flat + 1 if fy - f_new <= 1e-13 * max(1.0, abs(fy)) else 0
        y, fy = y_new, f_new
        if stop is not None and stop(y):
            return y, used, "stopped"
        if flat >= 5:
            return y, used, "centered" if dec <= 1e-5 else "stalled"
    return y, used, "budget"


def _max_eig(blocks, z) -> float:
    worst = -np.inf
    for _, F0, Fi in blocks:
        M = F0 + np.tensordot(z, Fi, axes=1)
        worst = max(worst, float(np.linalg.eigvalsh(0.5 * (M + M.T)).max()))
    return worst


def solve_sdp(prob: SdpProblem, opts: SdpOptions | None = None, fixed: dict | None = None, start: dict | None = None) -> SdpSolution:
    """Find a strictly feasible point (and minimise the objective, if any).

    ``fixed`` pins variables (e.g. a performance level) to given values.
    Returns an :class:`SdpSolution` with status ``feasible``/``optimal`` or
    ``infeasible``; raises :class:`IterationLimit` when neither can be
    established within the Newton budget.
    """
    opts = opts or SdpOptions()
    t_start = time.process_time()
    blocks_all, c0, c_all, qmask_all = prob.compile()
    if any(F0.shape[0] > opts.max_matrix for _, F0, _ in blocks_all) or len(blocks_all) > opts.max_constraints:
        raise ValueError(f"problem exceeds the dense solver caps ({opts.max_matrix}x{opts.max_matrix}, {opts.max_constraints} constraints)")
    m_all = prob.n_coordinates

    # fold fixed coordinates into the constant terms
    free = np.ones(m_all, dtype=bool)
    z_fixed = np.zeros(m_all)
    for name, val in (fixed or {}).items():
        sl = prob.coordinates_of(name)
        free[sl] = False
        z_fixed[sl] = prob.encode({name: val})[sl]
    blocks = [(nm, F0 + np.tensordot(z_fixed, Fi, axes=1), Fi[free]) for nm, F0, Fi in blocks_all]
    c = c_all[free]
    qmask = qmask_all[free]
    m = int(free.sum())

    def full_z(zf):
        z = z_fixed.copy()
        z[free] = zf
        return z

    margin = opts.margin
    target = opts.target if opts.target is not None else 10.0 * margin
    z = np.zeros(m) if start is None else prob.encode(start)[free]
    if z @ z >= opts.radius**2:
        z = np.zeros(m)

    # phase 1 ----------------------------------------------------------------
    s0 = _max_eig(blocks, z)
    used = 0
    if s0 > -target or opts.maximize_margin:
        G0s = [-F0 for _, F0, _ in blocks]
        Gis = [np.concatenate([-Fi, np.eye(F0.shape[0])[None]], axis=0) for _, F0, Fi in blocks]
        barrier = _Barrier(G0s, Gis, m, opts.radius)
        y = np.concatenate([z, [s0 + max(1.0, 0.1 * abs(s0))]])
        cvec = np.zeros(m + 1)
        cvec[-1] = 1.0
        qm = np.zeros(m + 1, dtype=bool)
        t = 1.0 / max(1.0, abs(s0))
        found = False
        stop = None if opts.maximize_margin else (lambda yy: yy[-1] <= -target)
        while used < opts.max_newton:
            y, n_used, state = _center(barrier, y, t, cvec, qm, opts.max_newton - used, stop=stop)
            used += n_used
            gap = barrier.degree / t
            if opts.maximize_margin and y[-1] <= -target:
                if gap <= opts.gap_tol * max(1.0, abs(y[-1])) or state == "stalled":
                    found = True
                    break
                t *= opts.mu
                continue
            if state == "stopped" or y[-1] <= -target:
                found = True
                break
            lower = y[-1] - gap
            if lower > -target:
                secs = time.process_time() - t_start
                return SdpSolution("infeasible", None, float(y[-1]), used, secs, info={"s": float(y[-1]), "s_lower": float(lower)})
            if state == "stalled":
                raise IterationLimit(f"phase 1 stalled at working precision (s={y[-1]:.3e}, bound {lower:.3e})")
            t *= opts.mu
        if not found and opts.maximize_margin and y[-1] <= -target:
            found = True
        if not found:
            raise IterationLimit(f"phase 1 undecided after {used} Newton steps (s={y[-1]:.3e})")
        z = y[:-1]

    verified = _max_eig(blocks, z)
    if verified > -margin:
        raise NumericalBreakdown(f"phase-1 point fails verification (max eigenvalue {verified:.3e})")

    status, objective = "feasible", None
    if c.any() or qmask.any():
        # phase 2: keep a strict margin while minimising the objective
        p2_margin = max(margin, 0.5 * target) if verified <= -max(margin, 0.5 * target) * 1.01 else margin
        G0s = [-(F0 + p2_margin * np.eye(F0.shape[0])) for _, F0, _ in blocks]
        Gis = [-Fi for _, _, Fi in blocks]
        barrier = _Barrier(G0s, Gis, m, opts.radius)
        if not np.isfinite(barrier.value(z)):
            p2_margin = 0.5 * (-verified + margin) if -verified > margin else margin
            G0s = [-(F0 + p2_margin * np.eye(F0.shape[0])) for _, F0, _ in blocks]
            barrier = _Barrier(G0s, Gis, m, opts.radius)
        obj = lambda zz: float(c @ zz + 0.5 * zz[qmask] @ zz[qmask]) + c0  # noqa: E731
        scale = max(1.0, abs(obj(z)))
        t = barrier.degree / scale
        while used < opts.max_newton:
            z, n_used, state = _center(barrier, z, t, c, qmask, opts.max_newton - used)
            used += n_used
            if state == "stalled" or barrier.degree / t <= opts.gap_tol * max(1.0, abs(obj(z))):
                break
            t *= opts.mu
        verified = _max_eig(blocks, z)
        if verified > -margin:
            raise NumericalBreakdown(f"phase-2 point fails verification (max eigenvalue {verified:.3e})")
        status, objective = "optimal", obj(z)

    secs = time.process_time() - t_start
    return SdpSolution(status, prob.decode(full_z(z)), verified, used, secs, objective)
