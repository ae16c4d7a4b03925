"""Time integration, input signals and snapshot collection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Union

import numpy as np
from scipy.integrate import solve_ivp

from . import io
from .errors import DimensionError, IntegrationError
from .pod import AffineLpvModel, lpv_jacobian, lpv_rhs
from .sdc import QuadraticSystem, quadratic_rhs, rhs_jacobian

logger = logging.getLogger(__name__)

__all__ = [
    "SignalSpec",
    "signal_value",
    "Trajectory",
    "integrate",
    "snapshot_matrix",
    "save_trajectory",
    "load_trajectory",
    "DEFAULT_TOL",
    "IMPLICIT_METHODS",
    "EXPLICIT_METHODS",
]

DEFAULT_TOL = (1e-8, 1e-10)
IMPLICIT_METHODS = ("Radau", "BDF")
EXPLICIT_METHODS = ("RK45", "DOP853")

Model = Union[QuadraticSystem, AffineLpvModel]


@dataclass(frozen=True)
class SignalSpec:
    """Open-loop input signal.

    ``fading`` holds ``amplitude`` at ``t = 0`` and blends smoothly to zero at
    ``t_fade`` with a Hermite smoothstep of the given ``smoothness`` (1 is the
    cubic, continuously differentiable blend; 2 the quintic one).
    """

    kind: str = "zero"
    amplitude: tuple = (1.0,)
    t_fade: float = 2.0
    smoothness: int = 1

    def __post_init__(self):
        if self.kind not in ("zero", "step", "fading"):
            raise ValueError(f"unknown signal kind {self.kind!r}")
        amp = tuple(float(a) for a in np.atleast_1d(self.amplitude))
        object.__setattr__(self, "amplitude", amp)
        if self.kind == "fading" and self.t_fade <= 0:
            raise ValueError("t_fade must be positive")
        if self.smoothness not in (1, 2):
            raise ValueError("smoothness must be 1 or 2")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "amplitude": list(self.amplitude), "t_fade": self.t_fade, "smoothness": self.smoothness}


def _blend(s: float, order: int) -> float:
    s = min(max(s, 0.0), 1.0)
    if order == 1:
        return 1.0 - s * s * (3.0 - 2.0 * s)
    return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s * s)


def signal_value(sig: SignalSpec, t: float, p: int | None = None) -> np.ndarray:
    """Value of ``sig`` at time ``t``; scalar amplitudes broadcast to ``p`` channels."""
    amp = np.array(sig.amplitude)
    if p is not None and amp.size == 1:
        amp = np.full(p, amp[0])
    if sig.kind == "zero":
        return np.zeros_like(amp)
    if sig.kind == "step":
        return amp.copy()
    if t >= sig.t_fade:
        return np.zeros_like(amp)
    return amp * _blend(t / sig.t_fade, sig.smoothness)


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    inputs: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        N = t.size
        if N and np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        for name in ("states", "outputs", "inputs"):
            M = np.asarray(getattr(self, name), dtype=float)
            if M.ndim != 2 or M.shape[1] != N:
                raise DimensionError(f"{name} must have one column per time instant")
            object.__setattr__(self, name, M)
        object.__setattr__(self, "times", t)

    def __len__(self) -> int:
        return self.times.size


def _rhs_and_jac(model: Model):
    if isinstance(model, QuadraticSystem):
        return (lambda x, u: quadratic_rhs(model, x, u)), (lambda x: rhs_jacobian(model, x)), model.C, model.p, model.n
    if isinstance(model, AffineLpvModel):
        return (lambda z, u: lpv_rhs(model, z, u)), (lambda z: lpv_jacobian(model, z)), model.Cbar, model.p, model.k
    raise TypeError(f"cannot integrate a {type(model).__name__}")


class _Blowup(Exception):
    def __init__(self, t):
        self.t = t


def integrate(
    model: Model,
    x0,
    input: SignalSpec | Callable | None = None,
    t_span: tuple[float, float] = (0.0, 5.0),
    n_out: int = 417,
    tol: tuple[float, float] = DEFAULT_TOL,
    method: str = "Radau",
) -> Trajectory:
    """Integrate ``model`` and sample the solution at ``n_out`` equispaced times.

    ``input`` is a :class:`SignalSpec`, a feedback callable ``u(t, x)`` or
    ``None`` for zero input.  Adaptive error control uses ``tol = (rtol,
    atol)``; implicit methods receive the analytic Jacobian (of the open-loop
    part when a feedback callable is used).
    """
    t0, t1 = map(float, t_span)
    if not t1 > t0:
        raise ValueError("t_span must satisfy t1 > t0")
    if n_out < 2:
        raise ValueError("n_out must be at least 2")
    f, jac, C, p, dim = _rhs_and_jac(model)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (dim,):
        raise DimensionError(f"x0 must have shape ({dim},), got {x0.shape}")

    if input is None:
        input = SignalSpec("zero", (0.0,) * p)
    if isinstance(input, SignalSpec):
        sig = input
        u_of = lambda t, x: signal_value(sig, t, p)  # noqa: E731
    elif callable(input):
        u_of = input
    else:
        raise TypeError("input must be a SignalSpec, a callable or None")

    def rhs(t, x):
        dx = f(x, u_of(t, x))
        if not np.all(np.isfinite(dx)):
            raise _Blowup(t)
        return dx

    times = np.linspace(t0, t1, n_out)
    kwargs = {}
    if method in IMPLICIT_METHODS:
        kwargs["jac"] = lambda t, x: jac(x)
    elif method not in EXPLICIT_METHODS:
        raise ValueError(f"unknown integrator {method!r}")
    rtol, atol = tol
    try:
        sol = solve_ivp(rhs, (t0, t1), x0, method=method, t_eval=times, rtol=rtol, atol=atol, **kwargs)
    except _Blowup as exc:
        raise IntegrationError(f"non-finite state derivative at t={exc.t:.6g}", exc.t) from None
    if sol.status != 0 or sol.y.shape[1] != n_out or not np.all(np.isfinite(sol.y)):
        t_last = float(sol.t[-1]) if sol.t.size else t0
        raise IntegrationError(f"integration failed: {sol.message}", t_last)
    X = sol.y
    U = np.column_stack([np.atleast_1d(u_of(t, x)) for t, x in zip(times, X.T)]) if n_out else np.zeros((p, 0))
    meta = {"integrator": method, "rtol": rtol, "atol": atol, "nfev": int(sol.nfev), "model": type(model).__name__}
    return Trajectory(times, X, C @ X, U, meta)


def snapshot_matrix(traj: Trajectory) -> np.ndarray:
    """Shifted states as columns (the equilibrium is already the origin)."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    return np.array(traj.states, copy=True)


def save_trajectory(traj: Trajectory, path, *, state_prefix: str = "x") -> Path:
    """CSV (time, states, outputs, inputs) plus a JSON sidecar with metadata."""
    path = Path(path)
    n, q, p = traj.states.shape[0], traj.outputs.shape[0], traj.inputs.shape[0]
    header = ["t"] + [f"{state_prefix}{i}" for i in range(n)] + [f"y{i}" for i in range(q)] + [f"u{i}" for i in range(p)]
    data = np.column_stack([traj.times, traj.states.T, traj.outputs.T, traj.inputs.T])
    io.write_csv_matrix(path, data, header)
    io.write_json(path.with_suffix(".json"), {"n": n, "q": q, "p": p, "N": len(traj), "state_prefix": state_prefix, "meta": traj.meta})
    return path


def load_trajectory(path) -> Trajectory:
    path = Path(path)
    side = io.read_json(path.with_suffix(".json"))
    data, _ = io.read_csv_matrix(path, header=True)
    n, q, p = side["n"], side["q"], side["p"]
    t = data[:, 0]
    X = data[:, 1 : 1 + n].T
    Y = data[:, 1 + n : 1 + n + q].T
    U = data[:, 1 + n + q : 1 + n + q + p].T
    return Trajectory(t, X, Y, U, side.get("meta", {}))
