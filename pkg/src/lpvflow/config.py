"""Pipeline configuration: nested dataclasses with YAML round-tripping."""

from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError

__all__ = [
    "BenchmarkConfig",
    "SnapshotConfig",
    "ReductionConfig",
    "PolytopeConfig",
    "SynthesisConfig",
    "ScenarioConfig",
    "ReportConfig",
    "PipelineConfig",
    "load_config",
    "dump_config",
    "template",
    "stage_seed",
    "POLYTOPE_KINDS",
    "STAGES",
]

STAGES = ("simulate", "pod", "reduce", "polytope", "synth", "closedloop", "report")
POLYTOPE_KINDS = ("box", "pca_box", "optimized")


@dataclass
class BenchmarkConfig:
    name: str = "burgers"
    params: dict = field(default_factory=lambda: {"n": 64, "nu": 0.05, "mu": 1.0, "convection": 0.1})


@dataclass
class SignalConfig:
    kind: str = "fading"
    amplitude: list = field(default_factory=lambda: [1.0])
    t_fade: float = 2.0
    smoothness: int = 1


@dataclass
class SnapshotConfig:
    t_span: list = field(default_factory=lambda: [0.0, 5.0])
    n_out: int = 417
    input: SignalConfig = field(default_factory=SignalConfig)
    method: str = "Radau"
    rtol: float = 1e-8
    atol: float = 1e-10


@dataclass
class ReductionConfig:
    k: int = 10
    r: int = 3


@dataclass
class GAConfig:
    population: int = 40
    generations: int = 200
    mutation_scale: float = 0.05
    beta: float = 1.0
    tournament: int = 3
    elite: int = 2
    crossover_rate: float = 0.7


@dataclass
class PolytopeConfig:
    kinds: list = field(default_factory=lambda: ["box"])
    margin: float = 0.2
    n_k: int = 6
    ga: GAConfig = field(default_factory=GAConfig)
    volume_samples: int = 4000


@dataclass
class SynthesisConfig:
    w_d: float = 1.0
    w_y: float = 1.0
    w_u: float = 0.1
    gamma: str | float = "minimize"
    lyapunov_bound: float = 1e3
    margin: float = 1e-8
    max_newton: int = 600


@dataclass
class ScenarioConfig:
    name: str = "disturbance"
    controller: str = "box"
    plant: str = "full"
    """``full`` or ``reduced`` (then ``plant_k``/``plant_r`` select the reduced plant)."""
    plant_k: int = 0
    plant_r: int = 0
    disturbance: SignalConfig = field(default_factory=SignalConfig)
    x0: str = "zero"
    """``zero`` or ``snapshot_max`` (largest snapshot state times ``x0_scale``)."""
    x0_scale: float = 1.0
    t_span: list = field(default_factory=lambda: [0.0, 12.0])
    n_out: int = 601
    exit_policy: str = "hard_error"
    open_loop: bool = True


@dataclass
class ReportConfig:
    scenario: str = "disturbance"
    portrait_pairs: list = field(default_factory=lambda: [[1, 4], [0, 4]])
    n_points: int = 500


@dataclass
class PipelineConfig:
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    snapshots: SnapshotConfig = field(default_factory=SnapshotConfig)
    reduction: ReductionConfig = field(default_factory=ReductionConfig)
    polytope: PolytopeConfig = field(default_factory=PolytopeConfig)
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    scenarios: list = field(default_factory=lambda: [ScenarioConfig()])
    report: ReportConfig = field(default_factory=ReportConfig)
    seed: int = 0
    out: str = "lpvflow_out"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        red = self.reduction
        if not (isinstance(red.k, int) and isinstance(red.r, int)) or not red.k >= red.r >= 1:
            raise ConfigError(f"reduction needs k >= r >= 1 (got k={red.k}, r={red.r})")
        for kind in self.polytope.kinds:
            if kind not in POLYTOPE_KINDS:
                raise ConfigError(f"unknown polytope kind {kind!r}; choose from {POLYTOPE_KINDS}")
        if self.polytope.margin < 0:
            raise ConfigError("polytope margin must be nonnegative")
        if len(self.snapshots.t_span) != 2 or not self.snapshots.t_span[1] > self.snapshots.t_span[0]:
            raise ConfigError("snapshots.t_span must be [t0, t1] with t1 > t0")
        if self.snapshots.n_out < 2:
            raise ConfigError("snapshots.n_out must be at least 2")
        g = self.synthesis.gamma
        if not (g == "minimize" or (isinstance(g, (int, float)) and g > 0)):
            raise ConfigError("synthesis.gamma must be 'minimize' or a positive number")
        names = [s.name for s in self.scenarios]
        if len(set(names)) != len(names):
            raise ConfigError("scenario names must be unique")
        for s in self.scenarios:
            if s.controller not in self.polytope.kinds:
                raise ConfigError(f"scenario {s.name!r} uses controller {s.controller!r} that is not synthesised")
            if s.plant not in ("full", "reduced"):
                raise ConfigError(f"scenario {s.name!r}: plant must be 'full' or 'reduced'")
            if s.plant == "reduced" and not s.plant_k >= s.plant_r >= red.r:
                raise ConfigError(f"scenario {s.name!r}: reduced plant needs plant_k >= plant_r >= r")
            if s.exit_policy not in ("hard_error", "project"):
                raise ConfigError(f"scenario {s.name!r}: unknown exit policy {s.exit_policy!r}")
            if s.x0 not in ("zero", "snapshot_max"):
                raise ConfigError(f"scenario {s.name!r}: x0 must be 'zero' or 'snapshot_max'")
        if self.scenarios and self.report.scenario not in names:
            raise ConfigError(f"report scenario {self.report.scenario!r} is not configured")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict | None) -> PipelineConfig:
        return _build(cls, data or {}, "")

    @property
    def k_max(self) -> int:
        return max([self.reduction.k] + [s.plant_k for s in self.scenarios if s.plant == "reduced"])


_NESTED = {
    ("PipelineConfig", "benchmark"): BenchmarkConfig,
    ("PipelineConfig", "snapshots"): SnapshotConfig,
    ("PipelineConfig", "reduction"): ReductionConfig,
    ("PipelineConfig", "polytope"): PolytopeConfig,
    ("PipelineConfig", "synthesis"): SynthesisConfig,
    ("PipelineConfig", "report"): ReportConfig,
    ("SnapshotConfig", "input"): SignalConfig,
    ("PolytopeConfig", "ga"): GAConfig,
    ("ScenarioConfig", "disturbance"): SignalConfig,
}


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, val in data.items():
        sub = _NESTED.get((cls.__name__, name))
        path = f"{where}.{name}" if where else name
        if sub is not None:
            kwargs[name] = _build(sub, val, path)
        elif cls is PipelineConfig and name == "scenarios":
            if not isinstance(val, list):
                raise ConfigError("scenarios: expected a list")
            kwargs[name] = [_build(ScenarioConfig, s, f"scenarios[{i}]") for i, s in enumerate(val)]
        else:
            kwargs[name] = val
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None


def load_config(path) -> PipelineConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return PipelineConfig.from_dict(data)


def dump_config(cfg: PipelineConfig, path=None) -> str:
    text = yaml.safe_dump(cfg.to_dict(), sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text


def stage_seed(seed: int, label: str) -> int:
    """Per-stage seed derived from the master seed and a fixed label."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(label.encode())])
    return int(ss.generate_state(1)[0])


_TEMPLATE = """\
# lpvflow pipeline configuration; every value below is the default.
benchmark:
  name: burgers            # burgers | lorenz
  params:                  # burgers: n, nu, mu (destabilising reaction), convection
    n: 64
    nu: 0.05
    mu: 1.0
    convection: 0.1
snapshots:
  t_span: [0.0, 5.0]       # integration window for snapshot generation
  n_out: 417               # equispaced snapshots
  input:                   # test input on all channels
    kind: fading           # zero | step | fading
    amplitude: [1.0]       # one value broadcasts to every channel
    t_fade: 2.0            # fading input is zero from here on
    smoothness: 1          # 1 cubic, 2 quintic blend
  method: Radau            # Radau | BDF (implicit), RK45 | DOP853 (explicit)
  rtol: 1.0e-08
  atol: 1.0e-10
reduction:
  k: 10                    # reduced state dimension
  r: 3                     # scheduling parameter dimension (r <= k)
polytope:
  kinds: [box]             # any of box, pca_box, optimized
  margin: 0.2              # relative enlargement of box kinds
  n_k: 6                   # added vertices of the optimized polytope
  ga:                      # genetic algorithm settings
    population: 40
    generations: 200
    mutation_scale: 0.05
    beta: 1.0              # weight of the vertex count in the fitness
    tournament: 3
    elite: 2
    crossover_rate: 0.7
  volume_samples: 4000     # Monte Carlo samples for non-box volumes
synthesis:
  w_d: 1.0                 # disturbance weight
  w_y: 1.0                 # output weight in the performance channel
  w_u: 0.1                 # control weight in the performance channel
  gamma: minimize          # minimize (bisection) or a fixed level
  lyapunov_bound: 1000.0   # R, S <= bound * I
  margin: 1.0e-08          # strictness margin of every LMI
  max_newton: 600          # Newton steps per SDP
scenarios:
- name: disturbance
  controller: box          # polytope kind whose controller is used
  plant: full              # full | reduced
  plant_k: 0               # reduced plant order (plant: reduced)
  plant_r: 0               # reduced plant parameter dimension
  disturbance:
    kind: fading
    amplitude: [1.0]
    t_fade: 2.0
    smoothness: 1
  x0: zero                 # zero | snapshot_max
  x0_scale: 1.0
  t_span: [0.0, 12.0]
  n_out: 601
  exit_policy: hard_error  # hard_error | project
  open_loop: true          # also simulate the uncontrolled plant
report:
  scenario: disturbance    # scenario used for phase portraits
  portrait_pairs: [[1, 4], [0, 4]]
  n_points: 500
seed: 0                    # master seed; stage seeds derive from it
out: lpvflow_out           # artifact directory
"""


def template() -> str:
    """Commented configuration file holding the defaults."""
    return _TEMPLATE
