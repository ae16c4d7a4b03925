"""Stage orchestration with a digest manifest.

Stages run in the fixed order ``simulate, pod, reduce, polytope, synth,
closedloop, report``.  Each stage reads its inputs from the artifact
directory (so stages can be re-run alone) and registers every file it
writes in ``manifest.json`` together with a SHA-256 digest and a flag
telling whether the content is deterministic (CPU timings are not).
"""

from __future__ import annotations

import logging
import time
from pathlib import Path

import numpy as np

from . import io
from .closedloop import phase_portrait, save_closed_loop, save_portrait, simulate_closed_loop
from .config import STAGES, PipelineConfig, ScenarioConfig, SignalConfig, stage_seed
from .errors import ConfigError, EmptyReport, IntegrationError, LpvFlowError, ParameterExit, StageDependencyError
from .lmi import (
    PerformanceWeights,
    SdpOptions,
    closed_loop_vertices,
    load_controller,
    quadratic_stability_certificate,
    sampled_hinf_norm,
    save_controller,
    save_gamma_log,
    synthesize_polytopic_hinf,
)
from .pod import PodBasis, build_affine_lpv, load_model, pod_basis, save_model
from .polytope import (
    GAParams,
    bounding_box,
    contains,
    load_polytope,
    optimize_polytope,
    pca_box,
    polytope_volume,
    save_polytope,
)
from .sdc import load_system, make_benchmark, save_system
from .trajectory import SignalSpec, Trajectory, integrate, load_trajectory, save_trajectory

logger = logging.getLogger(__name__)

__all__ = ["run_pipeline", "load_manifest", "verify_manifest", "deterministic_digests", "MANIFEST"]

MANIFEST = "manifest.json"
GAMMA_TIE = 1e-2  # bisection resolution: gamma values this close are ties


def _signal(sc: SignalConfig) -> SignalSpec:
    return SignalSpec(sc.kind, tuple(sc.amplitude), sc.t_fade, sc.smoothness)


class _Run:
    def __init__(self, cfg: PipelineConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.manifest = load_manifest(out) if (out / MANIFEST).exists() else {"artifacts": {}, "stages": {}}
        self.stage = None

    # artifact bookkeeping -------------------------------------------------------
    def begin(self, stage: str) -> None:
        self.stage = stage
        self.manifest["artifacts"] = {k: v for k, v in self.manifest["artifacts"].items() if v["stage"] != stage}
        self.manifest["stages"].pop(stage, None)

    def register(self, path: Path, deterministic: bool = True) -> None:
        path = Path(path)
        paths = sorted(p for p in path.rglob("*") if p.is_file()) if path.is_dir() else [path]
        for p in paths:
            rel = p.relative_to(self.out).as_posix()
            self.manifest["artifacts"][rel] = {"sha256": io.file_digest(p), "stage": self.stage, "deterministic": deterministic}

    def finish(self, info: dict | None = None) -> None:
        self.manifest["stages"][self.stage] = info or {}
        self.save()

    def save(self) -> None:
        self.manifest["config"] = self.cfg.to_dict()
        io.write_json(self.out / MANIFEST, self.manifest)

    def need(self, rel: str, producer: str) -> Path:
        p = self.out / rel
        if rel not in self.manifest["artifacts"] or not p.exists():
            raise StageDependencyError(f"stage {self.stage!r} needs {rel!r}; run stage {producer!r} first")
        return p

    def has(self, rel: str) -> bool:
        return rel in self.manifest["artifacts"] and (self.out / rel).exists()

    # loaders ---------------------------------------------------------------------
    def system(self):
        self.need("system/manifest.json", "simulate")
        return load_system(self.out / "system")

    def snapshots(self) -> Trajectory:
        return load_trajectory(self.need("snapshots.csv", "simulate"))

    def basis(self) -> PodBasis:
        V = io.read_mtx(self.need("pod/V.mtx", "pod"))
        s, _ = io.read_csv_matrix(self.need("pod/singular_values.csv", "pod"), header=True)
        return PodBasis(V, s[:, 0])

    def model(self):
        self.need("model/manifest.json", "reduce")
        return load_model(self.out / "model")

    def polytope(self, kind: str):
        return load_polytope(self.need(f"polytope/{kind}.json", "polytope"))

    def controller(self, kind: str):
        self.need(f"synth/{kind}/controller.json", "synth")
        return load_controller(self.out / "synth" / kind)


# stages ==========================================================================
def _stage_simulate(run: _Run) -> dict:
    cfg = run.cfg
    sys = make_benchmark(cfg.benchmark.name, dict(cfg.benchmark.params))
    save_system(sys, run.out / "system")
    run.register(run.out / "system")
    snap = cfg.snapshots
    traj = integrate(sys, np.zeros(sys.n), _signal(snap.input), tuple(snap.t_span), snap.n_out, (snap.rtol, snap.atol), snap.method)
    meta_free = Trajectory(traj.times, traj.states, traj.outputs, traj.inputs, {k: v for k, v in traj.meta.items() if k != "nfev"})
    save_trajectory(meta_free, run.out / "snapshots.csv")
    run.register(run.out / "snapshots.csv")
    run.register(run.out / "snapshots.json")
    return {"n": sys.n, "p": sys.p, "q": sys.q, "n_snapshots": len(traj)}


def _stage_pod(run: _Run) -> dict:
    S = run.snapshots().states
    basis = pod_basis(S, run.cfg.k_max)
    (run.out / "pod").mkdir(exist_ok=True)
    io.write_mtx(run.out / "pod" / "V.mtx", basis.V)
    io.write_csv_matrix(run.out / "pod" / "singular_values.csv", basis.singular_values[:, None], ["sigma"])
    run.register(run.out / "pod")
    return {"k": basis.k, "rank_deficient": basis.rank_deficient}


def _stage_reduce(run: _Run) -> dict:
    red = run.cfg.reduction
    model = build_affine_lpv(run.system(), run.basis(), red.r, red.k)
    save_model(model, run.out / "model")
    run.register(run.out / "model")
    return {"k": model.k, "r": model.r, "n_matrices": model.r + 1}


def _stage_polytope(run: _Run) -> dict:
    cfg = run.cfg.polytope
    model = run.model()
    S = run.snapshots().states
    P = model.V_r.T @ S
    seed = stage_seed(run.cfg.seed, "polytope")
    (run.out / "polytope").mkdir(exist_ok=True)
    summary = {}
    for kind in cfg.kinds:
        if kind == "box":
            W = bounding_box(P, cfg.margin, seed=seed)
        elif kind == "pca_box":
            W, _ = pca_box(P, None, cfg.margin, seed=seed)
        else:
            ga = GAParams(**vars(cfg.ga))
            W = optimize_polytope(P, cfg.n_k, ga, seed=seed)
        save_polytope(W, run.out / "polytope" / f"{kind}.json")
        vol, se = polytope_volume(W, cfg.volume_samples, seed=stage_seed(run.cfg.seed, f"volume/{kind}"))
        inside = sum(contains(W, P[:, j]) for j in range(P.shape[1]))
        summary[kind] = {
            "n_vertices": W.n_vertices,
            "volume": vol,
            "volume_se": se,
            "containment": inside / P.shape[1],
            "fallback": W.fallback,
            "stored_kind": W.kind,
        }
    io.write_json(run.out / "polytope" / "summary.json", summary)
    run.register(run.out / "polytope")
    return summary


def _stage_synth(run: _Run) -> dict:
    scfg = run.cfg.synthesis
    model = run.model()
    weights = PerformanceWeights(scfg.w_d, scfg.w_y, scfg.w_u)
    opts = SdpOptions(margin=scfg.margin, max_newton=scfg.max_newton)
    out = run.out / "synth"
    out.mkdir(exist_ok=True)
    info = {}
    for kind in run.cfg.polytope.kinds:
        W = run.polytope(kind)
        t0 = time.process_time()
        ctrl = synthesize_polytopic_hinf(model, W, weights, scfg.gamma, opts, scfg.lyapunov_bound)
        cpu = time.process_time() - t0
        save_controller(ctrl, out / kind)
        run.register(out / kind)
        cls = closed_loop_vertices(model, ctrl)
        cert = quadratic_stability_certificate([c[0] for c in cls], opts)
        norms = [sampled_hinf_norm(*c)[0] for c in cls]
        summary = {
            "kind": kind,
            "n_vertices": ctrl.n_vertices,
            "gamma": ctrl.gamma,
            "stagnation": ctrl.stagnation,
            "certificate": cert.status,
            "certificate_margin": cert.margin,
            "max_vertex_norm": max(norms),
            "gamma_bounds_vertex_norms": bool(max(norms) <= ctrl.gamma),
            "tested_levels": len([e for e in ctrl.log if e["phase"] != "reconstruct"]),
        }
        io.write_json(out / f"summary_{kind}.json", summary)
        run.register(out / f"summary_{kind}.json")
        save_gamma_log(ctrl, out / f"gamma_log_{kind}.csv")
        run.register(out / f"gamma_log_{kind}.csv", deterministic=False)
        io.write_json(out / f"timing_{kind}.json", {"cpu_seconds": cpu})
        run.register(out / f"timing_{kind}.json", deterministic=False)
        info[kind] = {"gamma": ctrl.gamma, "certificate": cert.status}
    return info


def _initial_state(sc: ScenarioConfig, S: np.ndarray, basis_V: np.ndarray | None) -> np.ndarray:
    if sc.x0 == "zero":
        x = np.zeros(S.shape[0])
    else:
        x = sc.x0_scale * S[:, int(np.argmax(np.linalg.norm(S, axis=0)))]
    return x if basis_V is None else basis_V.T @ x


def _stage_closedloop(run: _Run) -> dict:
    sys = run.system()
    model = run.model()
    S = run.snapshots().states
    out = run.out / "closedloop"
    out.mkdir(exist_ok=True)
    info = {}
    basis = None
    for sc in run.cfg.scenarios:
        W = run.polytope(sc.controller)
        ctrl = run.controller(sc.controller)
        if sc.plant == "full":
            plant, V = sys, None
        else:
            basis = basis or run.basis()
            plant = build_affine_lpv(sys, basis, sc.plant_r, sc.plant_k)
            V = plant.V_k
        x0 = _initial_state(sc, S, V)
        dist = _signal(sc.disturbance)
        status = "completed"
        try:
            res = simulate_closed_loop(plant, model, W, ctrl, dist, x0, tuple(sc.t_span), sc.exit_policy, sc.n_out)
        except ParameterExit as exc:
            res, status = exc.result, "parameter_exit"
        files = save_closed_loop(res, out, sc.name)
        entry = {"status": status, "exit_events": len(res.exit_events), **res.metrics}
        if sc.open_loop:
            try:
                ol = integrate(plant, x0, dist, tuple(sc.t_span), sc.n_out)
                yn = np.linalg.norm(ol.outputs, axis=0)
                io.write_csv_matrix(
                    out / f"{sc.name}_openloop.csv",
                    np.column_stack([ol.times, ol.outputs.T]),
                    ["t"] + [f"y{i}" for i in range(ol.outputs.shape[0])],
                )
                entry["open_loop_max_output_norm"] = float(yn.max())
                entry["open_loop_final_output_norm"] = float(yn[-1])
            except IntegrationError as exc:
                entry["open_loop_blowup_time"] = exc.t_last
        io.write_json(out / f"{sc.name}_summary.json", entry)
        info[sc.name] = {"status": status, "files": sorted(files.values())}
    run.register(out)
    return info


def _stage_report(run: _Run) -> dict:
    kinds = [k for k in run.cfg.polytope.kinds if run.has(f"synth/summary_{k}.json")]
    rcfg = run.cfg.report
    have_cl = run.has(f"closedloop/{rcfg.scenario}_outputs.csv")
    if not kinds and not have_cl:
        raise EmptyReport("no synthesis or closed-loop artifacts to report")
    out = run.out / "report"
    out.mkdir(exist_ok=True)
    lines = ["lpvflow report", ""]
    info: dict = {}
    if kinds:
        rows = []
        for kind in kinds:
            s = io.read_json(run.out / "synth" / f"summary_{kind}.json")
            cpu = io.read_json(run.out / "synth" / f"timing_{kind}.json")["cpu_seconds"] if run.has(f"synth/timing_{kind}.json") else float("nan")
            rows.append((kind, s["n_vertices"], s["gamma"], cpu, s["stagnation"], s["certificate"]))
        with (out / "gamma_vs_cpu.csv").open("w", newline="") as fh:
            fh.write("kind,n_vertices,gamma,cpu_seconds,stagnation,certificate\n")
            for kind, nv, g, cpu, stag, cert in rows:
                fh.write(f"{kind},{nv},{io.fmt(g)},{io.fmt(cpu)},{int(stag)},{cert}\n")
        run.register(out / "gamma_vs_cpu.csv", deterministic=False)
        gammas = {r[0]: r[2] for r in rows}
        g_min = min(gammas.values())
        if "box" in gammas and len(gammas) > 1:
            box_best = gammas["box"] <= g_min * (1.0 + GAMMA_TIE)
            info["box_smallest_gamma"] = box_best
            lines.append(
                "bounding box attains the smallest gamma*" if box_best else "FLAG: bounding box does not attain the smallest gamma*"
            )
        lines.append("")
        lines.append(f"{'kind':<10} {'vertices':>8} {'gamma*':>12} {'certificate':>12}")
        for kind, nv, g, _, _, cert in rows:
            lines.append(f"{kind:<10} {nv:>8d} {g:>12.6g} {cert:>12}")
        lines.append("")
        info["gamma"] = gammas
    if run.has("polytope/summary.json"):
        poly = io.read_json(run.out / "polytope" / "summary.json")
        lines.append(f"{'kind':<10} {'vertices':>8} {'volume':>12} {'std.err':>10} {'contained':>10} {'fallback':>9}")
        for kind, s in poly.items():
            lines.append(
                f"{kind:<10} {s['n_vertices']:>8d} {s['volume']:>12.6g} {s['volume_se']:>10.3g} {s['containment']:>10.4f} {str(s['fallback']):>9}"
            )
        lines.append("")
    if have_cl:
        data, header = io.read_csv_matrix(run.out / "closedloop" / f"{rcfg.scenario}_outputs.csv", header=True)
        ycols = [i for i, h in enumerate(header) if h.startswith("y")]
        traj = Trajectory(data[:, 0], data[:, ycols].T, data[:, ycols].T, np.zeros((0, data.shape[0])))
        portraits = []
        for a, b in rcfg.portrait_pairs:
            pts = phase_portrait(traj, (a, b), rcfg.n_points)
            name = f"portrait_{rcfg.scenario}_y{a}_y{b}.csv"
            save_portrait(out / name, pts, (f"y{a}", f"y{b}"))
            run.register(out / name)
            portraits.append(name)
        info["portraits"] = portraits
        cl = io.read_json(run.out / "closedloop" / f"{rcfg.scenario}_summary.json")
        lines.append(f"scenario {rcfg.scenario}: {cl['status']}, max |y| = {cl['max_output_norm']:.4g}, final |y| = {cl['final_output_norm']:.4g}")
        if "open_loop_max_output_norm" in cl:
            lines.append(f"open loop: max |y| = {cl['open_loop_max_output_norm']:.4g}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    run.register(out / "summary.txt")
    return info


_STAGE_FUNCS = {
    "simulate": _stage_simulate,
    "pod": _stage_pod,
    "reduce": _stage_reduce,
    "polytope": _stage_polytope,
    "synth": _stage_synth,
    "closedloop": _stage_closedloop,
    "report": _stage_report,
}


def run_pipeline(cfg: PipelineConfig, stages=None, out=None) -> dict:
    """Run ``stages`` (default: all) and return the manifest.

    Errors propagate with the failing stage recorded in ``exc.stage``.
    """
    stages = list(STAGES) if stages is None else list(stages)
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise ConfigError(f"unknown stage(s) {unknown}; choose from {STAGES}")
    outdir = Path(out if out is not None else cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    run = _Run(cfg, outdir)
    for name in STAGES:
        if name not in stages:
            continue
        logger.info("stage %s", name)
        run.begin(name)
        try:
            info = _STAGE_FUNCS[name](run)
        except LpvFlowError as exc:
            exc.stage = name
            raise
        run.finish(info)
    run.save()
    return run.manifest


def load_manifest(out) -> dict:
    return io.read_json(Path(out) / MANIFEST)


def verify_manifest(out) -> list[str]:
    """Artifacts whose current digest differs from the manifest (or that are missing)."""
    out = Path(out)
    man = load_manifest(out)
    bad = []
    for rel, entry in man["artifacts"].items():
        p = out / rel
        if not p.exists() or io.file_digest(p) != entry["sha256"]:
            bad.append(rel)
    return bad


def deterministic_digests(manifest: dict) -> dict:
    return {rel: e["sha256"] for rel, e in manifest["artifacts"].items() if e["deterministic"]}
