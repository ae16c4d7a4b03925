"""Closed-loop simulation under the scheduled vertex controller.

The plant (full quadratic system or a reduced LPV model) is coupled with the
full-order controller

    xk' = Ak(lam) xk + Bk(lam) y,     u = Ck(lam) xk + Dk(lam) y,

where ``lam`` are the barycentric weights of the scheduling parameter
``rho = V_r^T x`` in the polytope.  A disturbance ``d`` enters through the
actuators as ``B (u + W_d d)``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp

from . import io
from .errors import DimensionError, IntegrationError, ParameterExit
from .lmi.hinf import VertexControllerSet, scheduled_gain
from .pod import AffineLpvModel, lpv_jacobian, lpv_rhs
from .polytope import ParamPolytope, barycentric, project, violation
from .sdc import QuadraticSystem, quadratic_rhs, rhs_jacobian
from .trajectory import DEFAULT_TOL, IMPLICIT_METHODS, SignalSpec, Trajectory, signal_value

logger = logging.getLogger(__name__)

__all__ = [
    "ClosedLoopResult",
    "EXIT_POLICIES",
    "simulate_closed_loop",
    "scheduling_weights",
    "replay_control",
    "phase_portrait",
    "portrait_range_metrics",
    "save_closed_loop",
    "save_portrait",
]

EXIT_POLICIES = ("hard_error", "project")
EXIT_TOL = 1e-9


@dataclass(eq=False)
class ClosedLoopResult:
    plant_traj: Trajectory
    """States ``x``, outputs ``y`` and control inputs ``u``."""
    controller_traj: Trajectory
    """Controller states ``xk``, outputs ``u`` and inputs ``y``."""
    rho_traj: np.ndarray
    disturbance: np.ndarray
    exit_events: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)


class _Plant:
    """Uniform access to the plant right-hand side, Jacobian and scheduling map."""

    def __init__(self, plant, model: AffineLpvModel):
        self.plant = plant
        if isinstance(plant, QuadraticSystem):
            if plant.n != model.n:
                raise DimensionError(f"plant has n={plant.n}, model basis has n={model.n}")
            self.dim, self.B, self.C = plant.n, plant.B, plant.C
            self.f = lambda x, u: quadratic_rhs(plant, x, u)
            self.jac = lambda x: rhs_jacobian(plant, x)
            self.sched = np.array(model.V_r.T)
        elif isinstance(plant, AffineLpvModel):
            if plant.n != model.n:
                raise DimensionError("plant and controller models live on different grids")
            self.dim, self.B, self.C = plant.k, plant.Bbar, plant.Cbar
            self.f = lambda z, u: lpv_rhs(plant, z, u)
            self.jac = lambda z: lpv_jacobian(plant, z)
            # rho = V_r^T (decoded state)
            self.sched = model.V_r.T @ plant.V_k
        else:
            raise TypeError(f"unsupported plant type {type(plant).__name__}")
        if self.B.shape[1] != model.p or self.C.shape[0] != model.q:
            raise DimensionError("plant inputs/outputs do not match the controller model")

    def rho(self, x):
        return self.sched @ x


def scheduling_weights(W: ParamPolytope, rho, policy: str = "hard_error") -> np.ndarray:
    """Barycentric weights of ``rho``; outside points are projected first.

    With ``policy='hard_error'`` the projection is only a numerical fallback
    for integrator stage evaluations past the exit event.
    """
    if violation(W, rho) > EXIT_TOL:
        rho = project(W, rho)
    return barycentric(W, rho, tol=max(EXIT_TOL, 1e-7))


def replay_control(ctrl: VertexControllerSet, W: ParamPolytope, rho, y, xk, policy: str = "hard_error") -> np.ndarray:
    """Control signal from stored ``(rho, y, xk)`` samples (columns)."""
    rho, y, xk = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (rho, y, xk))
    out = []
    for j in range(rho.shape[1]):
        lam = scheduling_weights(W, rho[:, j], policy)
        _, _, Ck, Dk = scheduled_gain(ctrl, lam)
        out.append(Ck @ xk[:, j] + Dk @ y[:, j])
    return np.array(out).T


def _violation_intervals(up: np.ndarray, down: np.ndarray, t0: float, t1: float, inside0: bool):
    """Pair upward and downward crossings into ``[(t_enter, t_leave), ...]``."""
    marks = sorted([(t, +1) for t in up] + [(t, -1) for t in down])
    intervals, start = [], (None if inside0 else t0)
    for t, kind in marks:
        if kind > 0 and start is None:
            start = t
        elif kind < 0 and start is not None:
            intervals.append((start, t))
            start = None
    if start is not None:
        intervals.append((start, t1))
    return intervals


def simulate_closed_loop(
    plant,
    model: AffineLpvModel,
    W: ParamPolytope,
    ctrl: VertexControllerSet,
    disturbance: SignalSpec | None = None,
    x0=None,
    t_span: tuple[float, float] = (0.0, 12.0),
    exit_policy: str = "hard_error",
    n_out: int = 601,
    tol: tuple[float, float] = DEFAULT_TOL,
    method: str = "Radau",
) -> ClosedLoopResult:
    """Simulate the plant under the scheduled controller.

    With ``exit_policy='hard_error'`` the run stops when ``rho`` leaves ``W``
    and :class:`ParameterExit` is raised carrying the partial result; with
    ``'project'`` the parameter is projected onto ``W`` and every violation
    interval is logged once in ``exit_events``.
    """
    if exit_policy not in EXIT_POLICIES:
        raise ValueError(f"exit_policy must be one of {EXIT_POLICIES}")
    if W.r != model.r or ctrl.n_vertices != W.n_vertices:
        raise DimensionError("controller, polytope and model are inconsistent")
    if ctrl.order != model.k:
        raise DimensionError(f"controller order {ctrl.order} differs from model order {model.k}")
    P = _Plant(plant, model)
    n, kc = P.dim, ctrl.order
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    if x0.shape != (n,):
        raise DimensionError(f"x0 must have shape ({n},)")
    p = model.p
    disturbance = disturbance or SignalSpec("zero", (0.0,) * p)
    w_d = float(ctrl.weights.get("w_d", 1.0))
    t0, t1 = map(float, t_span)

    def gains(x):
        return scheduled_gain(ctrl, scheduling_weights(W, P.rho(x), exit_policy))

    def rhs(t, s):
        x, xk = s[:n], s[n:]
        Ak, Bk, Ck, Dk = gains(x)
        y = P.C @ x
        u = Ck @ xk + Dk @ y
        d = signal_value(disturbance, t, p)
        out = np.concatenate([P.f(x, u + w_d * d), Ak @ xk + Bk @ y])
        if not np.all(np.isfinite(out)):
            raise IntegrationError(f"non-finite closed-loop derivative at t={t:.6g}", t)
        return out

    def jac(t, s):
        # frozen-weight Jacobian (dlam/dx neglected)
        x = s[:n]
        Ak, Bk, Ck, Dk = gains(x)
        J = np.zeros((n + kc, n + kc))
        J[:n, :n] = P.jac(x) + P.B @ Dk @ P.C
        J[:n, n:] = P.B @ Ck
        J[n:, :n] = Bk @ P.C
        J[n:, n:] = Ak
        return J

    def exit_event(t, s):
        return violation(W, P.rho(s[:n])) - EXIT_TOL

    s0 = np.concatenate([x0, np.zeros(kc)])
    v0 = violation(W, P.rho(x0))
    times = np.linspace(t0, t1, n_out)
    events, exit_events = [], []
    if exit_policy == "hard_error":
        if v0 > EXIT_TOL:
            res = _assemble(P, W, ctrl, disturbance, times[:1], s0[:, None], exit_policy, n, w_d)
            res.exit_events.append({"time": t0, "violation": float(v0), "action": "hard_error"})
            raise ParameterExit(t0, v0, res)
        exit_event.terminal = True
        exit_event.direction = 1
        events = [exit_event]
    else:
        up = lambda t, s: exit_event(t, s)  # noqa: E731
        up.direction = 1
        down = lambda t, s: exit_event(t, s)  # noqa: E731
        down.direction = -1
        events = [up, down]

    kwargs = {"jac": jac} if method in IMPLICIT_METHODS else {}
    rtol, atol = tol
    sol = solve_ivp(rhs, (t0, t1), s0, method=method, t_eval=times, events=events, rtol=rtol, atol=atol, dense_output=exit_policy == "project", **kwargs)
    if sol.status == -1 or not np.all(np.isfinite(sol.y)):
        t_last = float(sol.t[-1]) if sol.t.size else t0
        raise IntegrationError(f"closed-loop integration failed: {sol.message}", t_last)

    if exit_policy == "hard_error" and sol.status == 1:
        t_exit = float(sol.t_events[0][0])
        s_exit = sol.y_events[0][0]
        keep = sol.t < t_exit
        T = np.append(sol.t[keep], t_exit)
        S = np.column_stack([sol.y[:, keep], s_exit])
        res = _assemble(P, W, ctrl, disturbance, T, S, exit_policy, n, w_d)
        mag = float(violation(W, P.rho(s_exit[:n])))
        res.exit_events.append({"time": t_exit, "violation": mag, "action": "hard_error"})
        logger.info("parameter exit at t=%.4g", t_exit)
        raise ParameterExit(t_exit, mag, res)

    res = _assemble(P, W, ctrl, disturbance, sol.t, sol.y, exit_policy, n, w_d)
    if exit_policy == "project":
        ups, downs = sol.t_events[0], sol.t_events[1]
        for ta, tb in _violation_intervals(ups, downs, t0, t1, v0 <= EXIT_TOL):
            grid = np.linspace(ta, tb, 21)
            mag = max(violation(W, P.rho(sol.sol(t)[:n])) for t in grid)
            exit_events.append({"time": float(ta), "end": float(tb), "violation": float(mag), "action": "project"})
        res.exit_events.extend(exit_events)
        if exit_events:
            logger.info("parameter left the polytope %d time(s); projected", len(exit_events))
    return res


def _assemble(P: _Plant, W, ctrl, disturbance, T, S, policy, n, w_d) -> ClosedLoopResult:
    X, XK = S[:n], S[n:]
    Y = P.C @ X
    R = P.sched @ X
    U = replay_control(ctrl, W, R, Y, XK, policy) if T.size else np.zeros((P.B.shape[1], 0))
    D = np.column_stack([signal_value(disturbance, t, P.B.shape[1]) for t in T]) if T.size else np.zeros((P.B.shape[1], 0))
    plant_traj = Trajectory(T, X, Y, U, {"role": "plant"})
    ctrl_traj = Trajectory(T, XK, U, Y, {"role": "controller"})
    ynorm = np.linalg.norm(Y, axis=0)
    metrics = {
        "t_end": float(T[-1]),
        "max_output_norm": float(ynorm.max()),
        "final_output_norm": float(ynorm[-1]),
        "max_state_norm": float(np.linalg.norm(X, axis=0).max()),
        "max_control_norm": float(np.linalg.norm(U, axis=0).max()) if U.size else 0.0,
        "settling_time": _settling_time(T, ynorm),
        "disturbance_gain_w_d": w_d,
    }
    return ClosedLoopResult(plant_traj, ctrl_traj, R, D, [], metrics)


def _settling_time(T: np.ndarray, ynorm: np.ndarray, frac: float = 1e-2) -> float | None:
    """First time after which ``|y|`` stays below ``frac * max |y|``."""
    peak = ynorm.max()
    if peak == 0:
        return float(T[0])
    above = np.flatnonzero(ynorm > frac * peak)
    if above.size == 0:
        return float(T[0])
    last = above[-1]
    return float(T[last + 1]) if last + 1 < T.size else None


# portraits ===================================================================
def phase_portrait(traj: Trajectory, pair: tuple[int, int], n_points: int = 500) -> np.ndarray:
    """``n_points`` pairs ``(y_a, y_b)`` at equidistant instants over the trajectory window."""
    a, b = pair
    q = traj.outputs.shape[0]
    for i in (a, b):
        if not 0 <= i < q:
            raise IndexError(f"output index {i} out of range for q={q}")
    if n_points < 1:
        raise ValueError("n_points must be positive")
    T = traj.times
    ts = np.linspace(T[0], T[-1], n_points)
    return np.column_stack([np.interp(ts, T, traj.outputs[a]), np.interp(ts, T, traj.outputs[b])])


def portrait_range_metrics(reference, candidate) -> dict:
    """Range coverage of ``candidate`` relative to ``reference`` (rows are points)."""
    ref = np.atleast_2d(np.asarray(reference, dtype=float))
    cand = np.atleast_2d(np.asarray(candidate, dtype=float))
    if ref.size == 0 or cand.size == 0:
        raise ValueError("point lists must be nonempty")
    if ref.shape[1] != cand.shape[1]:
        raise DimensionError("point lists have different dimensions")
    rmin, rmax = ref.min(axis=0), ref.max(axis=0)
    cmin, cmax = cand.min(axis=0), cand.max(axis=0)
    rspan = rmax - rmin
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rspan > 0, (cmax - cmin) / rspan, np.where(cmax - cmin > 0, np.inf, 1.0))
    d = cand.shape[1]
    corners = np.array(np.meshgrid(*[[cmin[i], cmax[i]] for i in range(d)], indexing="ij")).reshape(d, -1).T
    dist = np.linalg.norm(corners - np.clip(corners, rmin, rmax), axis=1).max()
    return {
        "reference_min": rmin.tolist(),
        "reference_max": rmax.tolist(),
        "candidate_min": cmin.tolist(),
        "candidate_max": cmax.tolist(),
        "range_ratio": ratio.tolist(),
        "corner_distance": float(dist),
    }


# export ======================================================================
def save_portrait(path, points, names=("y_a", "y_b")) -> Path:
    return io.write_csv_matrix(path, np.asarray(points, dtype=float), list(names))


def save_closed_loop(res: ClosedLoopResult, directory, prefix: str = "closedloop") -> dict:
    """Trajectory CSVs, an exit-event log (JSON lines) and a metrics JSON file."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = {}
    T = res.plant_traj
    q, p = T.outputs.shape[0], T.inputs.shape[0]
    header = ["t"] + [f"y{i}" for i in range(q)] + [f"u{i}" for i in range(p)] + [f"rho{i}" for i in range(res.rho_traj.shape[0])]
    data = np.column_stack([T.times, T.outputs.T, T.inputs.T, res.rho_traj.T])
    files["outputs"] = io.write_csv_matrix(d / f"{prefix}_outputs.csv", data, header).name
    files["states"] = io.write_csv_matrix(
        d / f"{prefix}_states.csv",
        np.column_stack([T.times, T.states.T, res.controller_traj.states.T]),
        ["t"] + [f"x{i}" for i in range(T.states.shape[0])] + [f"xk{i}" for i in range(res.controller_traj.states.shape[0])],
    ).name
    ev = d / f"{prefix}_exits.jsonl"
    ev.write_text("".join(json.dumps(e, sort_keys=True) + "\n" for e in res.exit_events))
    files["exits"] = ev.name
    files["metrics"] = io.write_json(d / f"{prefix}_metrics.json", res.metrics).name
    return files
