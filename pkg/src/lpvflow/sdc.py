"""Quadratic control-affine systems in state-dependent-coefficient form.

A :class:`QuadraticSystem` describes

    x' = A0 x + q(x, x) + B u,        y = C x,

with the quadratic term stored as a sparse order-3 tensor ``Q`` so that
``q(x, x)_i = sum_{j,l} Q[i, j, l] x_j x_l``.  The SDC coefficient is

    A(v) = A0 + L(v),     L(v)[i, l] = sum_j Q[i, j, l] v_j,

so that ``A(x) x`` reproduces the full right-hand side.  Entries are kept in
the canonical form ``j <= l`` (the smaller state index is the coefficient
argument); any other split of the same quadratic form is folded onto it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.optimize
import scipy.sparse as sp

from . import io
from .errors import DimensionError, EquilibriumError, UnknownBenchmark

logger = logging.getLogger(__name__)

__all__ = [
    "QuadraticSystem",
    "canonical_tensor",
    "quadratic_rhs",
    "sdc_coefficient",
    "coefficient_operator",
    "rhs_jacobian",
    "shift_system",
    "find_equilibrium",
    "make_benchmark",
    "BENCHMARKS",
    "save_system",
    "load_system",
]


def canonical_tensor(idx, vals, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Fold a quadratic tensor onto ``j <= l``, sum duplicates, sort by (i, j, l)."""
    idx = np.asarray(idx, dtype=np.int64).reshape(-1, 3)
    vals = np.asarray(vals, dtype=float).ravel()
    if len(idx) != len(vals):
        raise DimensionError("tensor index and value arrays differ in length")
    if len(idx) and (idx.min() < 0 or idx.max() >= n):
        raise DimensionError(f"tensor index out of range for n={n}")
    i, j, l = idx.T
    lo, hi = np.minimum(j, l), np.maximum(j, l)
    key = (i * n + lo) * n + hi
    uniq, inv = np.unique(key, return_inverse=True)
    summed = np.zeros(len(uniq))
    np.add.at(summed, inv, vals)
    keep = summed != 0.0
    uniq, summed = uniq[keep], summed[keep]
    out = np.column_stack([uniq // (n * n), (uniq // n) % n, uniq % n]).astype(np.int64)
    return out.reshape(-1, 3), summed


@dataclass(frozen=True, eq=False)
class QuadraticSystem:
    """Full-order plant shifted so that its working point is the origin.

    Parameters
    ----------
    A0 : (n, n) array
        Linear part about the equilibrium.
    Q_idx, Q_val : (nnz, 3) int array, (nnz,) array
        Canonical sparse quadratic tensor, see :func:`canonical_tensor`.
    B : (n, p) array
    C : (q, n) array
    x_ss : (n,) array
        Equilibrium in the original (unshifted) coordinates.
    """

    A0: np.ndarray
    Q_idx: np.ndarray
    Q_val: np.ndarray
    B: np.ndarray
    C: np.ndarray
    x_ss: np.ndarray
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        A0 = np.array(self.A0, dtype=float)
        B = np.array(self.B, dtype=float)
        C = np.array(self.C, dtype=float)
        if A0.ndim != 2 or A0.shape[0] != A0.shape[1]:
            raise DimensionError(f"A0 must be square, got {A0.shape}")
        n = A0.shape[0]
        if B.ndim == 1:
            B = B.reshape(n, -1)
        if C.ndim == 1:
            C = C.reshape(-1, n)
        if B.shape[0] != n or C.shape[1] != n:
            raise DimensionError(f"B {B.shape} / C {C.shape} inconsistent with n={n}")
        x_ss = np.array(self.x_ss, dtype=float).ravel()
        if x_ss.shape != (n,):
            raise DimensionError("x_ss must have length n")
        idx, val = canonical_tensor(self.Q_idx, self.Q_val, n)
        for name, arr in (("A0", A0), ("B", B), ("C", C), ("x_ss", x_ss), ("Q_idx", idx), ("Q_val", val)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "params", dict(self.params))

    @property
    def n(self) -> int:
        return self.A0.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]

    @property
    def q(self) -> int:
        return self.C.shape[0]

    @property
    def nnz(self) -> int:
        return len(self.Q_val)

    def dense_tensor(self) -> np.ndarray:
        T = np.zeros((self.n, self.n, self.n))
        i, j, l = self.Q_idx.T
        T[i, j, l] = self.Q_val
        return T


def _check_vec(v, n: int, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise DimensionError(f"{what} must have shape ({n},), got {v.shape}")
    return v


def quadratic_term(sys: QuadraticSystem, x: np.ndarray) -> np.ndarray:
    i, j, l = sys.Q_idx.T
    return np.bincount(i, weights=sys.Q_val * x[j] * x[l], minlength=sys.n)


def quadratic_rhs(sys: QuadraticSystem, x, u=None) -> np.ndarray:
    """Evaluate ``A0 x + q(x, x) + B u``."""
    x = _check_vec(x, sys.n, "x")
    out = sys.A0 @ x + quadratic_term(sys, x)
    if u is not None:
        out = out + sys.B @ _check_vec(np.atleast_1d(u), sys.p, "u")
    return out


def coefficient_operator(sys: QuadraticSystem, v) -> sp.csr_matrix:
    """Sparse ``L(v)`` (the coefficient part without ``A0``)."""
    v = _check_vec(v, sys.n, "v")
    i, j, l = sys.Q_idx.T
    return sp.csr_matrix((sys.Q_val * v[j], (i, l)), shape=(sys.n, sys.n))


def sdc_coefficient(sys: QuadraticSystem, v) -> np.ndarray:
    """Dense SDC matrix ``A0 + L(v)``."""
    return sys.A0 + coefficient_operator(sys, v).toarray()


def rhs_jacobian(sys: QuadraticSystem, x) -> np.ndarray:
    """Jacobian of :func:`quadratic_rhs` with respect to ``x``."""
    x = _check_vec(x, sys.n, "x")
    i, j, l = sys.Q_idx.T
    J = sys.A0.copy()
    np.add.at(J, (i, l), sys.Q_val * x[j])
    np.add.at(J, (i, j), sys.Q_val * x[l])
    return J


def shift_system(sys: QuadraticSystem, x_eq, *, check: bool = True) -> QuadraticSystem:
    """Re-express ``sys`` about the point ``x_eq`` (given in ``sys`` coordinates).

    The quadratic tensor is unchanged; the linear part becomes the Jacobian at
    ``x_eq``.  With ``check`` the residual ``f(x_eq)`` must vanish.
    """
    x_eq = _check_vec(x_eq, sys.n, "x_eq")
    if check:
        res = quadratic_rhs(sys, x_eq)
        scale = max(1.0, np.abs(sys.A0 @ x_eq).max(initial=0.0), np.abs(quadratic_term(sys, x_eq)).max(initial=0.0))
        if np.abs(res).max(initial=0.0) > 1e-9 * scale:
            raise EquilibriumError(f"point is not an equilibrium, residual {np.abs(res).max():.3e}")
    return QuadraticSystem(
        A0=rhs_jacobian(sys, x_eq),
        Q_idx=sys.Q_idx,
        Q_val=sys.Q_val,
        B=sys.B,
        C=sys.C,
        x_ss=sys.x_ss + x_eq,
        name=sys.name,
        params=sys.params,
    )


def find_equilibrium(sys: QuadraticSystem, x_guess=None, *, tol: float = 1e-12, maxiter: int = 200) -> np.ndarray:
    """Newton solve of ``f(x) = 0`` with zero input."""
    x0 = np.zeros(sys.n) if x_guess is None else _check_vec(x_guess, sys.n, "x_guess")
    sol = scipy.optimize.root(
        lambda x: quadratic_rhs(sys, x),
        x0,
        jac=lambda x: rhs_jacobian(sys, x),
        method="hybr",
        options={"xtol": tol, "maxfev": maxiter * (sys.n + 1)},
    )
    res = np.abs(quadratic_rhs(sys, sol.x)).max(initial=0.0)
    if not sol.success or not np.isfinite(res) or res > 1e-8 * max(1.0, np.abs(sol.x).max(initial=0.0)):
        raise EquilibriumError(f"steady-state solve did not converge: {sol.message} (residual {res:.3e})")
    # snap numerically-zero equilibria to exact zero so the shift is exact
    x = sol.x.copy()
    x[np.abs(x) < 1e-14] = 0.0
    return x


# Benchmarks ==================================================================
def _lorenz(sigma: float = 10.0, rho: float = 28.0, beta: float = 8.0 / 3.0, equilibrium: str = "origin", shift: bool = True):
    A0 = np.array([[-sigma, sigma, 0.0], [rho, -1.0, 0.0], [0.0, 0.0, -beta]])
    # y' gets -x z, z' gets +x y; x is the coefficient argument in both
    idx = [(1, 0, 2), (2, 0, 1)]
    vals = [-1.0, 1.0]
    params = dict(sigma=sigma, rho=rho, beta=beta, equilibrium=equilibrium, shift=shift)
    raw = QuadraticSystem(A0, idx, vals, B=np.eye(3)[:, :1], C=np.eye(3), x_ss=np.zeros(3), name="lorenz", params=params)
    if not shift:
        return raw
    guesses = {"origin": None}
    if rho > 1:
        c = np.sqrt(beta * (rho - 1.0))
        guesses["positive"] = np.array([c, c, rho - 1.0])
        guesses["negative"] = np.array([-c, -c, rho - 1.0])
    if equilibrium not in guesses:
        raise EquilibriumError(f"no Lorenz equilibrium named {equilibrium!r} for rho={rho}")
    x_eq = find_equilibrium(raw, guesses[equilibrium])
    return shift_system(raw, x_eq)


def _bump(xi: np.ndarray, a: float, b: float) -> np.ndarray:
    """Parabolic profile on (a, b), peak 1 at the midpoint, zero outside."""
    m, w = 0.5 * (a + b), 0.5 * (b - a)
    return np.clip(1.0 - ((xi - m) / w) ** 2, 0.0, None)


def _burgers(
    n: int = 32,
    nu: float = 0.05,
    mu: float = 0.0,
    convection: float = 1.0,
    actuators: tuple = ((0.15, 0.35), (0.55, 0.75)),
    windows: tuple = (0.25, 0.5, 0.75),
    window_width: float = 0.1,
    stagger: tuple = (0.0, 0.05),
):
    """Viscous Burgers on (0, 1) with homogeneous Dirichlet boundaries.

    The convection term uses the skew-symmetric split
    ``(x x_xi) ~ (x * D x + D(x * x)) / 3`` with the central difference ``D``,
    which conserves the discrete energy, so with ``mu = 0`` the semi-discrete
    system is dissipative.
    """
    n = int(n)
    if n < 3:
        raise ValueError("burgers needs n >= 3 interior nodes")
    h = 1.0 / (n + 1)
    xi = h * np.arange(1, n + 1)
    A0 = (nu / h**2) * (np.diag(-2.0 * np.ones(n)) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1))
    A0 += mu * np.eye(n)
    c = convection / (6.0 * h)
    idx, vals = [], []
    for i in range(n):
        if i + 1 < n:
            idx += [(i, i, i + 1), (i, i + 1, i + 1)]
            vals += [-c, -c]
        if i - 1 >= 0:
            idx += [(i, i - 1, i), (i, i - 1, i - 1)]
            vals += [c, c]
    B = np.column_stack([_bump(xi, a, b) for a, b in actuators])
    rows = []
    for off in stagger:
        for ctr in windows:
            mask = np.abs(xi - (ctr + off)) <= 0.5 * window_width + 1e-12
            if not mask.any():
                raise ValueError(f"output window at {ctr + off} contains no grid node")
            rows.append(mask / mask.sum())
    C = np.array(rows)
    params = dict(n=n, nu=nu, mu=mu, convection=convection, actuators=[list(a) for a in actuators],
                  windows=list(windows), window_width=window_width, stagger=list(stagger))
    raw = QuadraticSystem(A0, idx, vals, B=B, C=C, x_ss=np.zeros(n), name="burgers", params=params)
    return shift_system(raw, find_equilibrium(raw))


BENCHMARKS = {"burgers": _burgers, "lorenz": _lorenz}


def make_benchmark(name: str, params: dict | None = None, **kwargs) -> QuadraticSystem:
    """Build a desk-scale benchmark plant, shifted about its steady state.

    ``burgers`` accepts ``n, nu, mu, convection, actuators, windows,
    window_width, stagger``; ``lorenz`` accepts ``sigma, rho, beta,
    equilibrium ('origin' | 'positive' | 'negative'), shift``.
    """
    try:
        factory = BENCHMARKS[name]
    except KeyError:
        raise UnknownBenchmark(f"unknown benchmark {name!r}; available: {sorted(BENCHMARKS)}") from None
    kw = dict(params or {})
    kw.update(kwargs)
    return factory(**kw)


# Serialization ===============================================================
def save_system(sys: QuadraticSystem, directory) -> dict:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    io.write_mtx(d / "A0.mtx", sys.A0)
    io.write_mtx(d / "B.mtx", sys.B)
    io.write_mtx(d / "C.mtx", sys.C)
    io.write_coo3(d / "Q.txt", sys.Q_idx, sys.Q_val, (sys.n, sys.n, sys.n))
    manifest = {
        "type": "QuadraticSystem",
        "name": sys.name,
        "params": sys.params,
        "n": sys.n,
        "p": sys.p,
        "q": sys.q,
        "x_ss": sys.x_ss,
        "files": {"A0": "A0.mtx", "B": "B.mtx", "C": "C.mtx", "Q": "Q.txt"},
    }
    io.write_json(d / "manifest.json", manifest)
    return manifest


def load_system(directory) -> QuadraticSystem:
    d = Path(directory)
    man = io.read_json(d / "manifest.json")
    idx, vals, _ = io.read_coo3(d / man["files"]["Q"])
    return QuadraticSystem(
        A0=io.read_mtx(d / man["files"]["A0"]),
        Q_idx=idx,
        Q_val=vals,
        B=io.read_mtx(d / man["files"]["B"]),
        C=io.read_mtx(d / man["files"]["C"]),
        x_ss=np.array(man["x_ss"], dtype=float),
        name=man.get("name", "custom"),
        params=man.get("params", {}),
    )
