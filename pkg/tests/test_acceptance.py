"""Acceptance suite: one test per criterion, each reporting PASS/FAIL in the summary."""

import time

import numpy as np
import pytest

from lpvflow.closedloop import simulate_closed_loop
from lpvflow.config import PipelineConfig
from lpvflow.errors import IterationLimit, NumericalBreakdown, ParameterExit
from lpvflow.io import read_csv_matrix, read_json
from lpvflow.lmi import (
    SdpProblem,
    closed_loop_vertices,
    load_controller,
    quadratic_stability_certificate,
    sampled_hinf_norm,
    solve_sdp,
    synthesize_polytopic_hinf,
)
from lpvflow.pipeline import deterministic_digests, run_pipeline
from lpvflow.pod import PodBasis, build_affine_lpv, load_model, lti_model, pod_basis, projection_error
from lpvflow.polytope import (
    GAParams,
    barycentric,
    bounding_box,
    contains,
    demo_cloud,
    general_polytope,
    optimize_polytope,
    pca_box,
    polytope_volume,
)
from lpvflow.sdc import make_benchmark, quadratic_rhs, sdc_coefficient
from lpvflow.trajectory import integrate

from conftest import FADING, record_criterion

pytestmark = pytest.mark.slow

THREE_KINDS = {"polytope": {"kinds": ["box", "pca_box", "optimized"]}}


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    """Two full runs (all three polytope kinds) with the same seed."""
    runs = []
    for label in ("a", "b"):
        out = tmp_path_factory.mktemp(f"pipeline_{label}")
        cfg = PipelineConfig.from_dict({**THREE_KINDS, "out": str(out)})
        t0 = time.perf_counter()
        manifest = run_pipeline(cfg)
        runs.append({"out": out, "manifest": manifest, "seconds": time.perf_counter() - t0, "cfg": cfg})
    return runs


@pytest.fixture(scope="module")
def optimized_demo():
    P = demo_cloud()
    t0 = time.perf_counter()
    W = optimize_polytope(P, 6, GAParams(), seed=0)
    return P, W, time.perf_counter() - t0


def test_criterion_01_exact_embedding():
    t0 = time.perf_counter()
    sys = make_benchmark("burgers", n=32, nu=0.05)
    model = build_affine_lpv(sys, PodBasis.identity(32), 32, 32)
    full = integrate(sys, np.zeros(32), FADING, (0.0, 5.0), 417)
    lpv = integrate(model, np.zeros(32), FADING, (0.0, 5.0), 417)
    scale = np.abs(full.states).max()
    err = np.abs(lpv.states - full.states).max() / scale
    secs = time.perf_counter() - t0
    ok = err <= 1e-6 and secs < 30.0 and len(lpv) == 417
    record_criterion(1, ok, f"max relative state error {err:.2e} (<= 1e-6), {secs:.1f}s (< 30s)")
    assert ok


def test_criterion_02_sdc_consistency(rng):
    worst = {}
    for name, sys in (("burgers", make_benchmark("burgers", n=64)), ("lorenz", make_benchmark("lorenz"))):
        w = 0.0
        for _ in range(100):
            x = rng.normal(size=sys.n) * 3.0
            u = rng.normal(size=sys.p)
            f = quadratic_rhs(sys, x, u)
            g = sdc_coefficient(sys, x) @ x + sys.B @ u
            w = max(w, np.abs(f - g).max() / np.abs(f).max())
        worst[name] = w
    ok = all(v <= 1e-13 for v in worst.values())
    record_criterion(2, ok, "worst relative mismatch " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (<= 1e-13)")
    assert ok


def test_criterion_03_pod_identity(burgers32_snapshots):
    S = burgers32_snapshots.states
    rel, orth = [], []
    for k in (2, 4, 8):
        B = pod_basis(S, k)
        tail = float(np.sum(B.singular_values[k:] ** 2))
        rel.append(abs(projection_error(S, B.V) - tail) / tail)
        orth.append(np.abs(B.V.T @ B.V - np.eye(k)).max())
    ok = max(rel) <= 1e-8 and max(orth) <= 1e-10
    record_criterion(3, ok, f"tail-sum mismatch {max(rel):.1e} (<= 1e-8), orthonormality {max(orth):.1e} (<= 1e-10)")
    assert ok


def test_criterion_04_reparametrization(unstable_setup, rng):
    model, P = unstable_setup["model"], unstable_setup["P"]
    A = model.Abar[1:]
    W, A_pc = pca_box(P, A)
    worst = 0.0
    for _ in range(50):
        rho = rng.normal(size=model.r) * np.abs(P).max(axis=1)
        rho_pc = W.U_pc.T @ rho
        diff = np.tensordot(rho, A, axes=1) - np.tensordot(rho_pc, A_pc, axes=1)
        worst = max(worst, np.abs(diff).max())
    ok = worst <= 1e-10
    record_criterion(4, ok, f"max entry mismatch {worst:.1e} (<= 1e-10)")
    assert ok


def test_criterion_05_optimized_polytope(optimized_demo):
    P, W, secs = optimized_demo
    inside = np.mean([contains(W, p) for p in P.T])
    vol, se = polytope_volume(W, 4000, seed=0)
    box_vol = polytope_volume(bounding_box(P))[0]
    dominated = box_vol - vol >= 3.0 * se and se > 0
    # adversarial clouds that fill their bounding box: corners plus interior samples
    rng = np.random.default_rng(7)
    fallback_ok = True
    for r in (2, 3):
        corners = np.array(np.meshgrid(*[[0.0, 1.0]] * r)).reshape(r, -1)
        cloud = np.hstack([corners, rng.random((r, 60))])
        Wf = optimize_polytope(cloud, 4, GAParams(population=20, generations=40), seed=1)
        fallback_ok &= Wf.fallback and Wf.kind == "box" and all(contains(Wf, p) for p in cloud.T)
    ok = inside == 1.0 and W.n_vertices <= 7 and not W.fallback and dominated and fallback_ok and secs < 120.0
    record_criterion(
        5,
        ok,
        f"{W.n_vertices} vertices (<= 7), containment {inside:.0%}, volume {vol:.3f} +- {se:.3f} vs box {box_vol:.3f}, "
        f"fallback contract {'holds' if fallback_ok else 'violated'}, GA {secs:.1f}s (< 120s)",
    )
    assert ok


def test_criterion_06_barycentric(optimized_demo, rng):
    worst = {"neg": 0.0, "sum": 0.0, "res": 0.0, "unit": 0.0}
    polys = []
    for r in range(1, 7):
        polys.append(bounding_box(rng.normal(size=(r, 40)), 0.1))
        polys.append(pca_box(rng.normal(size=(r, 40)), margin=0.1)[0])
    polys.append(optimized_demo[1])
    for W in polys:
        for _ in range(200):
            if W.is_box:
                rho = W.U_pc @ (W.lower + rng.random(W.r) * (W.upper - W.lower))
            else:
                rho = W.vertices @ rng.dirichlet(np.ones(W.n_vertices))
            lam = barycentric(W, rho)
            worst["neg"] = max(worst["neg"], -lam.min())
            worst["sum"] = max(worst["sum"], abs(lam.sum() - 1.0))
            worst["res"] = max(worst["res"], np.abs(W.vertices @ lam - rho).max())
        for i in range(W.n_vertices):
            worst["unit"] = max(worst["unit"], np.abs(barycentric(W, W.vertices[:, i]) - np.eye(W.n_vertices)[i]).max())
    ok = worst["neg"] <= 1e-10 and worst["sum"] <= 1e-10 and worst["res"] <= 1e-8 and worst["unit"] <= 1e-8
    record_criterion(
        6,
        ok,
        f"min lambda {-worst['neg']:.1e}, |sum-1| {worst['sum']:.1e}, residual {worst['res']:.1e}, vertex deviation {worst['unit']:.1e}",
    )
    assert ok


def _lyapunov_lmi(A):
    n = A.shape[0]
    prob = SdpProblem()
    prob.sym("X", n)
    prob.add(lambda v: A.T @ v["X"] + v["X"] @ A, "<", "lyap")
    prob.add(lambda v: v["X"] - np.eye(n), ">", "scale")
    return prob


def test_criterion_07_sdp_correctness():
    rng = np.random.default_rng(2024)
    verified, false_cert, worst = 0, 0, -np.inf
    for trial in range(40):
        n = int(rng.integers(1, 11))
        A = rng.normal(size=(n, n))
        stable = trial < 20
        target = -0.1 - rng.random() if stable else 0.05 + rng.random()
        A = A - (np.linalg.eigvals(A).real.max() - target) * np.eye(n)
        try:
            sol = solve_sdp(_lyapunov_lmi(A))
            X = sol.values["X"] if sol.ok else None
        except (IterationLimit, NumericalBreakdown):
            X = None
        if X is None:
            continue
        # independent recheck
        res = np.linalg.eigvalsh(A.T @ X + X @ A).max()
        pos = np.linalg.eigvalsh(X).min()
        good = res <= -1e-8 and pos > 0
        if stable and good:
            verified += 1
            worst = max(worst, res)
        if not stable:
            false_cert += 1
    ok = verified == 20 and false_cert == 0
    record_criterion(7, ok, f"stable verified {verified}/20 (worst residual eig {worst:.2e}), false certificates {false_cert}/20")
    assert ok


def test_criterion_08_lti_reduction():
    m = lti_model([[0.0, 1.0], [2.0, -1.0]], [[0.0], [1.0]], [[1.0, 0.0]])
    ctrl = synthesize_polytopic_hinf(m, general_polytope(np.zeros((1, 1))))
    A, B, C, D = closed_loop_vertices(m, ctrl)[0]
    norm, w = sampled_hinf_norm(A, B, C, D, n_freq=400)
    ratio = norm / ctrl.gamma
    ok = 0.9 <= ratio <= 1.0 + 1e-9
    record_criterion(8, ok, f"gamma* {ctrl.gamma:.5g}, sampled norm {norm:.5g} (ratio {ratio:.4f}, within 10%)")
    assert ok


def test_criterion_09_quadratic_stability(unstable_setup, pipeline_runs):
    cases = [("burgers box", unstable_setup["model"], unstable_setup["ctrl"])]
    out = pipeline_runs[0]["out"]
    model = load_model(out / "model")
    for kind in THREE_KINDS["polytope"]["kinds"]:
        cases.append((f"pipeline {kind}", model, load_controller(out / "synth" / kind)))
    lti = lti_model([[0.0, 1.0], [2.0, -1.0]], [[0.0], [1.0]], [[1.0, 0.0]])
    cases.append(("lti", lti, synthesize_polytopic_hinf(lti, general_polytope(np.zeros((1, 1))))))
    margins = {}
    for name, mdl, ctrl in cases:
        cert = quadratic_stability_certificate([c[0] for c in closed_loop_vertices(mdl, ctrl)])
        margins[name] = cert.margin if cert.ok else np.nan
    ok = all(np.isfinite(v) and v < -1e-8 for v in margins.values())
    record_criterion(9, ok, "certificate margins " + ", ".join(f"{k} {v:.2e}" for k, v in margins.items()))
    assert ok


def test_criterion_10_stabilization(pipeline_runs):
    run = pipeline_runs[0]
    out = run["out"]
    summary = read_json(out / "closedloop" / "disturbance_summary.json")
    ctrl = load_controller(out / "synth" / "box")
    data, header = read_csv_matrix(out / "closedloop" / "disturbance_outputs.csv", header=True)
    ycols = [i for i, h in enumerate(header) if h.startswith("y")]
    ynorm = np.linalg.norm(data[:, ycols], axis=1)
    if "open_loop_blowup_time" in summary:
        t_exceed = summary["open_loop_blowup_time"]
    else:
        ol, _ = read_csv_matrix(out / "closedloop" / "disturbance_openloop.csv", header=True)
        above = np.flatnonzero(np.linalg.norm(ol[:, 1:], axis=1) > 10.0)
        t_exceed = float(ol[above[0], 0]) if above.size else np.inf
    ok = (
        ctrl.n_vertices == 8
        and t_exceed < 12.0
        and summary["status"] == "completed"
        and ynorm.max() <= 1.0
        and ynorm[-1] <= 1e-2
        and data[-1, 0] == 12.0
        and run["seconds"] < 300.0
    )
    record_criterion(
        10,
        ok,
        f"open loop |y| > 10 at t={t_exceed:.2f}; closed loop max |y| {ynorm.max():.2e} (<= 1), |y(12)| {ynorm[-1]:.1e} (<= 1e-2); "
        f"pipeline {run['seconds']:.0f}s (< 300s)",
    )
    assert ok


def test_criterion_11_cross_model(unstable_setup):
    s = unstable_setup
    plant = build_affine_lpv(s["sys"], s["basis"], 6, 12)
    res = simulate_closed_loop(plant, s["model"], s["W"], s["ctrl"], FADING, t_span=(0.0, 12.0), exit_policy="project")
    ynorm = np.linalg.norm(res.plant_traj.outputs, axis=0)
    ok = res.metrics["t_end"] == 12.0 and np.all(np.isfinite(ynorm)) and ynorm.max() <= 1.0 and not res.exit_events
    record_criterion(
        11, ok, f"r=6/k=12 plant under the r=3 controller: max |y| {ynorm.max():.2e}, |y(12)| {ynorm[-1]:.1e}, exit intervals {len(res.exit_events)}"
    )
    assert ok


def test_criterion_12_parameter_exit(unstable_setup):
    s = unstable_setup
    S = s["snaps"].states
    x0 = 3.0 * S[:, int(np.argmax(np.linalg.norm(S, axis=0)))]
    raised = None
    try:
        simulate_closed_loop(s["sys"], s["model"], s["W"], s["ctrl"], None, x0=x0, t_span=(0.0, 12.0), exit_policy="hard_error")
    except ParameterExit as exc:
        raised = exc
    ok = raised is not None and np.isfinite(raised.time) and raised.result.exit_events[0]["time"] == raised.time
    detail = f"ParameterExit at t={raised.time:.3g} (violation {raised.magnitude:.3g})" if raised else "no ParameterExit raised"
    record_criterion(12, ok, detail)
    assert ok


def test_criterion_13_gamma_vs_cpu_report(pipeline_runs):
    out = pipeline_runs[0]["out"]
    lines = (out / "report" / "gamma_vs_cpu.csv").read_text().splitlines()
    header, rows = lines[0].split(","), [ln.split(",") for ln in lines[1:]]
    table = {r[0]: (float(r[header.index("gamma")]), float(r[header.index("cpu_seconds")])) for r in rows}
    text = (out / "report" / "summary.txt").read_text()
    box_best = table["box"][0] <= min(g for g, _ in table.values()) * (1.0 + 1e-2)
    flagged = "FLAG: bounding box does not attain" in text
    stated = "bounding box attains the smallest gamma*" in text
    ok = (
        set(table) == {"box", "pca_box", "optimized"}
        and all(np.isfinite(g) and np.isfinite(c) for g, c in table.values())
        and ((box_best and stated) or (not box_best and flagged))
    )
    record_criterion(
        13,
        ok,
        "; ".join(f"{k} gamma* {g:.4g} cpu {c:.1f}s" for k, (g, c) in table.items())
        + ("; box smallest" if box_best else "; deviation flagged"),
    )
    assert ok


def test_criterion_14_determinism(pipeline_runs):
    a, b = (deterministic_digests(r["manifest"]) for r in pipeline_runs)
    differing = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
    ok = bool(a) and not differing
    record_criterion(14, ok, f"{len(a)} deterministic artifacts, {len(differing)} differ" + (f": {differing[:5]}" if differing else ""))
    assert ok
