"""Polytopic gain-scheduled H-infinity synthesis.

The generalized plant at vertex ``i`` is

    x' = A_i x + B1 d + B2 u,        B1 = W_d Bbar,  B2 = Bbar
    z  = C1 x + D12 u,               C1 = [W_y Cbar; 0],  D12 = [0; W_u I]
    y  = C2 x,                       C2 = Cbar

Only ``A`` depends on the scheduling parameter.  Solvability is tested with
the projected bounded-real inequalities in the common variables ``(R, S)``;
full-order vertex controllers are then recovered from the closed-loop
Lyapunov matrix built from ``(R, S)``, choosing the minimum-Frobenius-norm
solution.  The online controller is the convex combination of the vertex
controllers with barycentric weights.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .. import io
from ..errors import IterationLimit, NumericalBreakdown, SynthesisInfeasible, WeightError
from ..polytope import ParamPolytope
from .sdp import SdpOptions, SdpProblem, solve_sdp

logger = logging.getLogger(__name__)

__all__ = [
    "PerformanceWeights",
    "GeneralizedPlant",
    "VertexControllerSet",
    "StabilityCertificate",
    "generalized_plant",
    "synthesize_polytopic_hinf",
    "synthesize_vertices",
    "closed_loop_matrices",
    "closed_loop_vertices",
    "quadratic_stability_certificate",
    "scheduled_gain",
    "sampled_hinf_norm",
    "save_controller",
    "load_controller",
    "save_gamma_log",
]

GAMMA_START = 1.0
LYAPUNOV_BOUND = 1e3
GAMMA_MAX = 1e6
GAMMA_MIN = 1e-6
BISECT_WIDTH = 1e-2


@dataclass(frozen=True)
class PerformanceWeights:
    w_d: float = 1.0
    w_y: float = 1.0
    w_u: float = 0.1

    def __post_init__(self):
        if min(self.w_d, self.w_y, self.w_u) <= 0:
            raise ValueError("performance weights must be positive")


@dataclass(frozen=True, eq=False)
class GeneralizedPlant:
    A: np.ndarray  # (N_v, k, k)
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    D12: np.ndarray
    C2: np.ndarray

    @property
    def k(self) -> int:
        return self.A.shape[1]

    @property
    def p(self) -> int:
        return self.B2.shape[1]

    @property
    def q(self) -> int:
        return self.C2.shape[0]


def generalized_plant(A_list, Bbar, Cbar, weights: PerformanceWeights | None = None) -> GeneralizedPlant:
    w = weights or PerformanceWeights()
    A = np.array(A_list, dtype=float)
    if A.ndim == 2:
        A = A[None]
    Bbar = np.atleast_2d(np.asarray(Bbar, dtype=float))
    Cbar = np.atleast_2d(np.asarray(Cbar, dtype=float))
    k, p, q = A.shape[1], Bbar.shape[1], Cbar.shape[0]
    C1 = np.vstack([w.w_y * Cbar, np.zeros((p, k))])
    D12 = np.vstack([np.zeros((q, p)), w.w_u * np.eye(p)])
    return GeneralizedPlant(A, w.w_d * Bbar, Bbar, C1, D12, Cbar)


@dataclass(frozen=True, eq=False)
class VertexControllerSet:
    """Full-order vertex controllers ``u = Dk y + Ck xk``, ``xk' = Ak xk + Bk y``."""

    vertices: np.ndarray  # r x N_v, parameter-space vertices of the polytope
    kind: str
    Ak: np.ndarray  # (N_v, k, k)
    Bk: np.ndarray  # (N_v, k, q)
    Ck: np.ndarray  # (N_v, p, k)
    Dk: np.ndarray  # (N_v, p, q)
    gamma: float
    lyapunov: np.ndarray  # 2k x 2k
    weights: dict
    log: list = field(default_factory=list)
    stagnation: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def n_vertices(self) -> int:
        return self.Ak.shape[0]

    @property
    def order(self) -> int:
        return self.Ak.shape[1]

    def theta(self, i: int) -> np.ndarray:
        """Stacked gain ``[[Dk, Ck], [Bk, Ak]]`` of vertex ``i``."""
        return np.block([[self.Dk[i], self.Ck[i]], [self.Bk[i], self.Ak[i]]])


@dataclass
class StabilityCertificate:
    status: str  # "certified" | "failure"
    X: np.ndarray | None
    margin: float
    """Largest eigenvalue of ``A_i^T X + X A_i`` over the vertices (with ``lambda_min(X) = 1``)."""
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "certified"


# LMI assembly ================================================================
def _projected_problem(plant: GeneralizedPlant, A_unique: np.ndarray, bound: float | None = None) -> SdpProblem:
    k, p = plant.k, plant.p
    B1, B2, C1, D12, C2 = plant.B1, plant.B2, plant.C1, plant.D12, plant.C2
    nz, nd = C1.shape[0], B1.shape[1]
    D11 = np.zeros((nz, nd))
    N_R = sla.null_space(np.hstack([B2.T, D12.T]))
    N_S = sla.null_space(np.hstack([C2, np.zeros((C2.shape[0], nd))]))
    if N_S.size == 0:
        N_S = np.zeros((k + nd, 0))
    ER = sla.block_diag(N_R, np.eye(nd))
    ES = sla.block_diag(N_S, np.eye(nz))
    Iz, Id = np.eye(nz), np.eye(nd)

    prob = SdpProblem()
    prob.sym("R", k)
    prob.sym("S", k)
    prob.scalar("gamma")
    for i, A in enumerate(A_unique):

        def lmi_r(v, A=A):
            R, g = v["R"], v["gamma"]
            M = np.block(
                [
                    [A @ R + R @ A.T, R @ C1.T, B1],
                    [C1 @ R, -g * Iz, D11],
                    [B1.T, D11.T, -g * Id],
                ]
            )
            return ER.T @ M @ ER

        def lmi_s(v, A=A):
            S, g = v["S"], v["gamma"]
            M = np.block(
                [
                    [A.T @ S + S @ A, S @ B1, C1.T],
                    [B1.T @ S, -g * Id, D11.T],
                    [C1, D11, -g * Iz],
                ]
            )
            return ES.T @ M @ ES

        prob.add(lmi_r, "<", f"R{i}")
        if N_S.shape[1] > 0:
            prob.add(lmi_s, "<", f"S{i}")
        else:
            prob.add(lambda v: -v["gamma"] * Id, "<", f"S{i}")
    prob.add(lambda v: np.block([[v["R"], np.eye(k)], [np.eye(k), v["S"]]]), ">", "coupling")
    if bound is not None:
        prob.add(lambda v: v["R"] - bound * np.eye(k), "<", "R_bound")
        prob.add(lambda v: v["S"] - bound * np.eye(k), "<", "S_bound")
    del p
    return prob


def closed_loop_matrices(plant: GeneralizedPlant, A: np.ndarray, theta: np.ndarray):
    """``(A_cl, B_cl, C_cl, D_cl)`` of the plant with vertex matrix ``A`` and gain ``theta``."""
    k = plant.k
    Bt = sla.block_diag(plant.B2, np.eye(k))
    Ct = sla.block_diag(plant.C2, np.eye(k))
    A0 = sla.block_diag(A, np.zeros((k, k)))
    A_cl = A0 + Bt @ theta @ Ct
    B_cl = np.vstack([plant.B1, np.zeros((k, plant.B1.shape[1]))])
    D12t = np.hstack([plant.D12, np.zeros((plant.D12.shape[0], k))])
    C_cl = np.hstack([plant.C1, np.zeros((plant.C1.shape[0], k))]) + D12t @ theta @ Ct
    D_cl = np.zeros((plant.C1.shape[0], plant.B1.shape[1]))
    return A_cl, B_cl, C_cl, D_cl


def _lyapunov_from_rs(R: np.ndarray, S: np.ndarray) -> np.ndarray:
    k = R.shape[0]
    U, sv, Vt = np.linalg.svd(np.eye(k) - S @ R)
    if sv.min() <= 1e-14 * max(1.0, sv.max()):
        raise NumericalBreakdown("I - S R is singular; cannot complete the Lyapunov matrix")
    N = U * np.sqrt(sv)
    M = Vt.T * np.sqrt(sv)
    Pi_x = np.block([[np.eye(k), S], [np.zeros((k, k)), N.T]])
    Pi_y = np.block([[R, np.eye(k)], [M.T, np.zeros((k, k))]])
    X = np.linalg.solve(Pi_y.T, Pi_x.T).T
    return 0.5 * (X + X.T)


def _brl_problem(plant: GeneralizedPlant, A: np.ndarray, X: np.ndarray, gamma: float) -> SdpProblem:
    k, p, q = plant.k, plant.p, plant.q
    nz, nd = plant.C1.shape[0], plant.B1.shape[1]
    prob = SdpProblem()
    prob.full("Theta", p + k, q + k)

    def brl(v):
        A_cl, B_cl, C_cl, D_cl = closed_loop_matrices(plant, A, v["Theta"])
        return np.block(
            [
                [A_cl.T @ X + X @ A_cl, X @ B_cl, C_cl.T],
                [B_cl.T @ X, -gamma * np.eye(nd), D_cl.T],
                [C_cl, D_cl, -gamma * np.eye(nz)],
            ]
        )

    prob.add(brl, "<", "brl")
    prob.minimize(frobenius=("Theta",))
    return prob


def _dedupe(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    uniq, inverse = [], []
    for Ai in A:
        for j, U in enumerate(uniq):
            if np.array_equal(U, Ai):
                inverse.append(j)
                break
        else:
            uniq.append(Ai)
            inverse.append(len(uniq) - 1)
    return np.array(uniq), np.array(inverse, dtype=int)


# synthesis ===================================================================
def _test_gamma(prob, gamma, opts, log, phase):
    t0 = time.process_time()
    try:
        sol = solve_sdp(prob, opts, fixed={"gamma": gamma})
        status = sol.status
        iters = sol.iterations
    except (IterationLimit, NumericalBreakdown) as exc:
        sol, status, iters = None, type(exc).__name__, -1
    secs = time.process_time() - t0
    log.append({"gamma": float(gamma), "status": status, "iterations": iters, "seconds": secs, "phase": phase})
    logger.info("gamma=%.6g: %s (%d Newton steps, %.2fs)", gamma, status, iters, secs)
    return sol, status


def synthesize_vertices(
    plant: GeneralizedPlant,
    gamma="minimize",
    opts: SdpOptions | None = None,
    bound: float | None = LYAPUNOV_BOUND,
) -> dict:
    """Solve the vertex LMIs and reconstruct one controller per vertex.

    ``bound`` caps ``R`` and ``S`` (``R, S <= bound I``); without it the most
    interior pair drifts to huge, ill-conditioned Lyapunov matrices.
    Returns a dict with ``theta`` (N_v stacked gains), ``gamma``, ``lyapunov``,
    ``R``, ``S``, ``log`` and ``stagnation``.
    """
    opts = opts or SdpOptions()
    A_unique, inverse = _dedupe(plant.A)
    prob = _projected_problem(plant, A_unique, bound)
    log: list[dict] = []
    stagnation = False

    if gamma == "minimize":
        g = GAMMA_START
        sol, status = _test_gamma(prob, g, opts, log, "bracket")
        stagnation |= status not in ("feasible", "infeasible")
        if sol is not None and sol.ok:
            hi, best = g, sol
            lo = None
            while lo is None:
                g = hi / 4.0
                if g < GAMMA_MIN:
                    lo = 0.0
                    break
                sol, status = _test_gamma(prob, g, opts, log, "bracket")
                stagnation |= status not in ("feasible", "infeasible")
                if sol is not None and sol.ok:
                    hi, best = g, sol
                else:
                    lo = g
        else:
            lo, best = g, None
            while best is None:
                g = lo * 4.0
                if g > GAMMA_MAX:
                    raise SynthesisInfeasible(f"no feasible performance level up to {GAMMA_MAX:g}", GAMMA_MAX)
                sol, status = _test_gamma(prob, g, opts, log, "bracket")
                stagnation |= status not in ("feasible", "infeasible")
                if sol is not None and sol.ok:
                    hi, best = g, sol
                else:
                    lo = g
        while hi - lo > BISECT_WIDTH * hi:
            g = 0.5 * (lo + hi)
            sol, status = _test_gamma(prob, g, opts, log, "bisect")
            stagnation |= status not in ("feasible", "infeasible")
            if sol is not None and sol.ok:
                hi, best = g, sol
            else:
                lo = g
        g_star = hi
    else:
        g_star = float(gamma)
        best, status = _test_gamma(prob, g_star, opts, log, "fixed")
        if best is None or not best.ok:
            raise SynthesisInfeasible(f"vertex LMIs infeasible at gamma={g_star:g} ({status})", g_star)

    # re-solve at the certified level for the most interior (R, S): a barely
    # feasible pair leaves the controller reconstruction ill-conditioned
    centred_opts = replace(opts, maximize_margin=True)
    try:
        sol = solve_sdp(prob, centred_opts, fixed={"gamma": g_star})
        if sol.ok:
            best = sol
    except (IterationLimit, NumericalBreakdown) as exc:
        logger.info("centred re-solve failed (%s); using the bisection point", exc)
    R, S = best.values["R"], best.values["S"]
    X = _lyapunov_from_rs(R, S)
    if np.linalg.eigvalsh(X).min() < 1e-8:
        raise NumericalBreakdown("closed-loop Lyapunov matrix is not positive definite")

    thetas_u = []
    for i, A in enumerate(A_unique):
        t0 = time.process_time()
        sol = solve_sdp(_brl_problem(plant, A, X, g_star), opts)
        if not sol.ok:
            raise SynthesisInfeasible(f"controller reconstruction failed at vertex {i} ({sol.status})", g_star)
        log.append(
            {"gamma": g_star, "status": f"vertex{i}", "iterations": sol.iterations, "seconds": time.process_time() - t0, "phase": "reconstruct"}
        )
        thetas_u.append(sol.values["Theta"])
    thetas = np.array([thetas_u[j] for j in inverse])
    return {"theta": thetas, "gamma": g_star, "lyapunov": X, "R": R, "S": S, "log": log, "stagnation": bool(stagnation)}


def synthesize_polytopic_hinf(
    model,
    W: ParamPolytope,
    weights: PerformanceWeights | None = None,
    gamma="minimize",
    opts: SdpOptions | None = None,
    bound: float | None = LYAPUNOV_BOUND,
) -> VertexControllerSet:
    """Gain-scheduled controller for ``model`` over the parameter polytope ``W``.

    ``gamma`` is ``"minimize"`` (bisection to relative width 1e-2) or a fixed
    level; a fixed level that is infeasible raises
    :class:`SynthesisInfeasible`.  Failures of the inner solver during
    bisection count as infeasible and set ``stagnation``.
    """
    weights = weights or PerformanceWeights()
    if W.r != model.r:
        raise ValueError(f"polytope lives in R^{W.r} but the model has r={model.r}")
    A_list = np.array([model.A_of(W.vertices[:, i]) for i in range(W.n_vertices)])
    plant = generalized_plant(A_list, model.Bbar, model.Cbar, weights)
    t0 = time.process_time()
    res = synthesize_vertices(plant, gamma, opts, bound)
    secs = time.process_time() - t0
    k, p, q = plant.k, plant.p, plant.q
    th = res["theta"]
    ctrl = VertexControllerSet(
        vertices=np.array(W.vertices),
        kind=W.kind,
        Ak=th[:, p:, q:],
        Bk=th[:, p:, :q],
        Ck=th[:, :p, q:],
        Dk=th[:, :p, :q],
        gamma=float(res["gamma"]),
        lyapunov=res["lyapunov"],
        weights=asdict(weights),
        log=res["log"],
        stagnation=res["stagnation"],
        meta={"cpu_seconds": secs, "k": k, "p": p, "q": q, "n_vertices": W.n_vertices, "bound": bound},
    )
    logger.info("synthesis over %d vertices: gamma*=%.6g in %.1fs", W.n_vertices, ctrl.gamma, secs)
    return ctrl


def closed_loop_vertices(model, ctrl: VertexControllerSet):
    """Closed-loop ``(A_cl, B_cl, C_cl, D_cl)`` at every polytope vertex."""
    A_list = np.array([model.A_of(ctrl.vertices[:, i]) for i in range(ctrl.n_vertices)])
    plant = generalized_plant(A_list, model.Bbar, model.Cbar, PerformanceWeights(**ctrl.weights))
    return [closed_loop_matrices(plant, A_list[i], ctrl.theta(i)) for i in range(ctrl.n_vertices)]


# certification and scheduling ================================================
def quadratic_stability_certificate(closed_vertices, opts: SdpOptions | None = None) -> StabilityCertificate:
    """Common ``X`` with ``A_i^T X + X A_i < 0`` for all ``i``, scaled to ``lambda_min(X) = 1``.

    The scale is fixed by requiring ``X >= I``, which makes infeasibility
    certifiable (the homogeneous problem has optimal value exactly zero).
    """
    As = [np.asarray(A, dtype=float) for A in closed_vertices]
    if not As:
        raise ValueError("no vertices given")
    n = As[0].shape[0]
    if any(A.shape != (n, n) for A in As):
        raise ValueError("closed-loop matrices must be square and of equal size")
    As, _ = _dedupe(np.array(As))
    prob = SdpProblem()
    prob.sym("X", n)
    for i, A in enumerate(As):
        prob.add(lambda v, A=A: A.T @ v["X"] + v["X"] @ A, "<", f"lyap{i}")
    prob.add(lambda v: v["X"] - np.eye(n), ">", "scale")
    try:
        sol = solve_sdp(prob, opts, start={"X": 2.0 * np.eye(n)})
    except (IterationLimit, NumericalBreakdown) as exc:
        return StabilityCertificate("failure", None, np.nan, {"reason": str(exc)})
    if not sol.ok:
        return StabilityCertificate("failure", None, float(sol.margin), dict(sol.info))
    X = sol.values["X"]
    X = X / np.linalg.eigvalsh(X).min()
    margin = max(float(np.linalg.eigvalsh(A.T @ X + X @ A).max()) for A in As)
    if margin >= 0:
        return StabilityCertificate("failure", None, margin, {"reason": "rescaled certificate fails verification"})
    return StabilityCertificate("certified", X, margin, {"iterations": sol.iterations})


def scheduled_gain(ctrl: VertexControllerSet, lam) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Convex blend ``(Ak, Bk, Ck, Dk) = sum_i lam_i (Ak_i, Bk_i, Ck_i, Dk_i)``."""
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (ctrl.n_vertices,):
        raise WeightError(f"expected {ctrl.n_vertices} weights, got shape {lam.shape}")
    if not np.all(np.isfinite(lam)) or lam.min() < -1e-10 or abs(lam.sum() - 1.0) > 1e-10:
        raise WeightError("weights must be nonnegative and sum to one")
    blend = lambda T: np.tensordot(lam, T, axes=1)  # noqa: E731
    return blend(ctrl.Ak), blend(ctrl.Bk), blend(ctrl.Ck), blend(ctrl.Dk)


def sampled_hinf_norm(A, B, C, D, n_freq: int = 400, w_range: tuple[float, float] | None = None) -> tuple[float, float]:
    """Peak of ``sigma_max(C (jw - A)^-1 B + D)`` over log-spaced frequencies.

    Returns ``(norm, w_peak)``; ``inf`` when ``A`` is not Hurwitz.  The
    default range spans three decades beyond the smallest and largest pole
    magnitudes.
    """
    A = np.atleast_2d(A)
    ev = np.linalg.eigvals(A)
    if ev.real.max() >= 0:
        return np.inf, np.nan
    if w_range is None:
        mag = np.abs(ev)
        mag = mag[mag > 0]
        lo = mag.min() if mag.size else 1.0
        hi = mag.max() if mag.size else 1.0
        w_range = (lo * 1e-3, hi * 1e3)
    ws = np.logspace(np.log10(w_range[0]), np.log10(w_range[1]), n_freq)
    I = np.eye(A.shape[0])
    best, w_best = -np.inf, np.nan
    for w in ws:
        G = C @ np.linalg.solve(1j * w * I - A, B) + D
        s = np.linalg.svd(G, compute_uv=False)[0]
        if s > best:
            best, w_best = s, w
    return float(best), float(w_best)


# serialization ===============================================================
def save_controller(ctrl: VertexControllerSet, directory) -> dict:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = {}
    for i in range(ctrl.n_vertices):
        for name in ("Ak", "Bk", "Ck", "Dk"):
            fn = f"{name}_{i}.mtx"
            io.write_mtx(d / fn, getattr(ctrl, name)[i])
            files[f"{name}_{i}"] = fn
    io.write_mtx(d / "lyapunov.mtx", ctrl.lyapunov)
    io.write_mtx(d / "vertices.mtx", ctrl.vertices)
    manifest = {
        "kind": ctrl.kind,
        "n_vertices": ctrl.n_vertices,
        "order": ctrl.order,
        "gamma": ctrl.gamma,
        "weights": ctrl.weights,
        "stagnation": ctrl.stagnation,
        "files": files,
        "meta": {k: v for k, v in ctrl.meta.items() if k != "cpu_seconds"},
    }
    io.write_json(d / "controller.json", manifest)
    return manifest


def load_controller(directory) -> VertexControllerSet:
    d = Path(directory)
    m = io.read_json(d / "controller.json")
    mats = {name: np.array([io.read_mtx(d / f"{name}_{i}.mtx") for i in range(m["n_vertices"])]) for name in ("Ak", "Bk", "Ck", "Dk")}
    return VertexControllerSet(
        vertices=io.read_mtx(d / "vertices.mtx"),
        kind=m["kind"],
        gamma=float(m["gamma"]),
        lyapunov=io.read_mtx(d / "lyapunov.mtx"),
        weights=m["weights"],
        stagnation=bool(m["stagnation"]),
        meta=m.get("meta", {}),
        **mats,
    )


def save_gamma_log(ctrl: VertexControllerSet, path) -> Path:
    """CSV of ``(gamma, feasible, iterations, cpu_seconds)`` for every tested level."""
    rows = [[e["gamma"], 1.0 if e["status"] == "feasible" else 0.0, e["iterations"], e["seconds"]] for e in ctrl.log if e["phase"] != "reconstruct"]
    return io.write_csv_matrix(path, np.array(rows, dtype=float).reshape(-1, 4), ["gamma", "feasible", "iterations", "cpu_seconds"])
