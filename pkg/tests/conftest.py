import numpy as np
import pytest

from lpvflow.lmi import synthesize_polytopic_hinf
from lpvflow.pod import build_affine_lpv, pod_basis
from lpvflow.polytope import bounding_box
from lpvflow.sdc import make_benchmark
from lpvflow.trajectory import SignalSpec, integrate

UNSTABLE_BURGERS = {"n": 64, "nu": 0.05, "mu": 1.0, "convection": 0.1}
FADING = SignalSpec("fading", (1.0,), t_fade=2.0)

_ACCEPTANCE: dict = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    _ACCEPTANCE[number] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def burgers32():
    return make_benchmark("burgers", n=32, nu=0.05)


@pytest.fixture(scope="session")
def lorenz():
    return make_benchmark("lorenz")


@pytest.fixture(scope="session")
def burgers32_snapshots(burgers32):
    return integrate(burgers32, np.zeros(32), FADING, (0.0, 5.0), 417)


@pytest.fixture(scope="session")
def unstable_setup():
    """Unstable Burgers, k=10, r=3, bounding box with 8 vertices and its controller."""
    sys = make_benchmark("burgers", UNSTABLE_BURGERS)
    snaps = integrate(sys, np.zeros(sys.n), FADING, (0.0, 5.0), 417)
    basis = pod_basis(snaps.states, 12)
    model = build_affine_lpv(sys, basis, 3, 10)
    P = model.V_r.T @ snaps.states
    W = bounding_box(P, margin=0.2)
    ctrl = synthesize_polytopic_hinf(model, W)
    return {"sys": sys, "snaps": snaps, "basis": basis, "model": model, "P": P, "W": W, "ctrl": ctrl}
