import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lpvflow.errors import SynthesisInfeasible, WeightError
from lpvflow.lmi import (
    PerformanceWeights,
    closed_loop_vertices,
    generalized_plant,
    load_controller,
    quadratic_stability_certificate,
    sampled_hinf_norm,
    save_controller,
    save_gamma_log,
    scheduled_gain,
    synthesize_polytopic_hinf,
)
from lpvflow.io import read_csv_matrix
from lpvflow.pod import AffineLpvModel, lti_model
from lpvflow.polytope import bounding_box, general_polytope

PLANT2 = ([[0.0, 1.0], [2.0, -1.0]], [[0.0], [1.0]], [[1.0, 0.0]])


@pytest.fixture(scope="module")
def lti_ctrl():
    m = lti_model(*PLANT2)
    return m, synthesize_polytopic_hinf(m, general_polytope(np.zeros((1, 1))))


@pytest.fixture(scope="module")
def lpv_setup():
    # two-state plant whose damping is scheduled by rho in [-1, 1]
    Abar = np.array([[[0.0, 1.0], [1.0, -1.0]], [[0.0, 0.0], [0.5, 0.3]]])
    V = np.eye(2)
    m = AffineLpvModel(Abar, [[0.0], [1.0]], [[1.0, 0.0]], V[:, :1], V)
    W = bounding_box(np.array([[-1.0, 1.0]]))
    return m, W, synthesize_polytopic_hinf(m, W)


def test_generalized_plant_structure():
    gp = generalized_plant([np.eye(2)], np.ones((2, 1)), np.ones((1, 2)), PerformanceWeights(2.0, 3.0, 0.5))
    np.testing.assert_array_equal(gp.B1, 2.0 * np.ones((2, 1)))
    np.testing.assert_array_equal(gp.C1, [[3.0, 3.0], [0.0, 0.0]])
    np.testing.assert_array_equal(gp.D12, [[0.0], [0.5]])


def test_weights_validation():
    with pytest.raises(ValueError):
        PerformanceWeights(w_u=0.0)


def test_lti_gamma_matches_frequency_norm(lti_ctrl):
    m, ctrl = lti_ctrl
    A, B, C, D = closed_loop_vertices(m, ctrl)[0]
    norm, _ = sampled_hinf_norm(A, B, C, D)
    assert norm <= ctrl.gamma * (1 + 1e-6)
    assert norm >= 0.9 * ctrl.gamma


def test_sampled_norm_first_order_oracle():
    # 1/(s + 2): peak 0.5 at w -> 0
    norm, _ = sampled_hinf_norm([[-2.0]], [[1.0]], [[1.0]], [[0.0]])
    assert norm == pytest.approx(0.5, rel=1e-5)
    assert sampled_hinf_norm([[1.0]], [[1.0]], [[1.0]], [[0.0]])[0] == np.inf


def test_degenerate_polytope_gives_identical_controllers(lti_ctrl):
    m, single = lti_ctrl
    W = general_polytope(np.array([[0.0, 1.0, 2.0]]))
    ctrl = synthesize_polytopic_hinf(m, W)
    for i in range(1, 3):
        for name in ("Ak", "Bk", "Ck", "Dk"):
            assert np.array_equal(getattr(ctrl, name)[i], getattr(ctrl, name)[0])
    assert ctrl.gamma == pytest.approx(single.gamma, rel=1e-12)


def test_vertex_norms_below_gamma(lpv_setup):
    m, W, ctrl = lpv_setup
    for A, B, C, D in closed_loop_vertices(m, ctrl):
        assert sampled_hinf_norm(A, B, C, D)[0] <= ctrl.gamma * (1 + 1e-6)


def test_common_lyapunov_certifies(lpv_setup):
    m, W, ctrl = lpv_setup
    A_cl = [v[0] for v in closed_loop_vertices(m, ctrl)]
    cert = quadratic_stability_certificate(A_cl)
    assert cert.ok and cert.margin < -1e-8
    X = ctrl.lyapunov
    assert np.linalg.eigvalsh(X).min() > 0
    for A in A_cl:
        assert np.linalg.eigvalsh(A.T @ X + X @ A).max() < 0


@settings(max_examples=30, deadline=None)
@given(a=st.floats(0.0, 1.0))
def test_scheduled_gain_is_convex_blend(lpv_setup, a):
    _, _, ctrl = lpv_setup
    lam = np.array([1.0 - a, a])
    Ak, Bk, Ck, Dk = scheduled_gain(ctrl, lam)
    np.testing.assert_allclose(Ak, (1 - a) * ctrl.Ak[0] + a * ctrl.Ak[1], atol=1e-12)
    np.testing.assert_allclose(Dk, (1 - a) * ctrl.Dk[0] + a * ctrl.Dk[1], atol=1e-12)


def test_scheduled_gain_at_vertex_is_vertex_controller(lpv_setup):
    _, _, ctrl = lpv_setup
    for i in range(ctrl.n_vertices):
        Ak, Bk, Ck, Dk = scheduled_gain(ctrl, np.eye(ctrl.n_vertices)[i])
        assert np.array_equal(Ak, ctrl.Ak[i]) and np.array_equal(Dk, ctrl.Dk[i])


def test_scheduled_gain_rejects_bad_weights(lpv_setup):
    _, _, ctrl = lpv_setup
    for lam in ([0.5, 0.6], [1.5, -0.5], [1.0], [np.nan, 1.0]):
        with pytest.raises(WeightError):
            scheduled_gain(ctrl, np.array(lam))


def test_fixed_gamma_infeasible_raises(lpv_setup):
    m, W, ctrl = lpv_setup
    with pytest.raises(SynthesisInfeasible):
        synthesize_polytopic_hinf(m, W, gamma=0.5 * ctrl.gamma)


def test_fixed_gamma_feasible(lpv_setup):
    m, W, ctrl = lpv_setup
    c2 = synthesize_polytopic_hinf(m, W, gamma=2.0 * ctrl.gamma)
    assert c2.gamma == 2.0 * ctrl.gamma


def test_bisection_log(lpv_setup, tmp_path):
    _, _, ctrl = lpv_setup
    tested = [e for e in ctrl.log if e["phase"] in ("bracket", "bisect")]
    feas = [e["gamma"] for e in tested if e["status"] == "feasible"]
    infeas = [e["gamma"] for e in tested if e["status"] != "feasible"]
    assert min(feas) == ctrl.gamma
    assert max(infeas) < ctrl.gamma and ctrl.gamma - max(infeas) <= 1e-2 * ctrl.gamma
    save_gamma_log(ctrl, tmp_path / "g.csv")
    data, names = read_csv_matrix(tmp_path / "g.csv")
    assert names == ["gamma", "feasible", "iterations", "cpu_seconds"] and data.shape[0] == len(tested)


def test_controller_roundtrip(lpv_setup, tmp_path):
    _, _, ctrl = lpv_setup
    save_controller(ctrl, tmp_path / "c")
    back = load_controller(tmp_path / "c")
    for name in ("Ak", "Bk", "Ck", "Dk", "lyapunov", "vertices"):
        assert np.array_equal(getattr(back, name), getattr(ctrl, name))
    assert back.gamma == ctrl.gamma and back.kind == ctrl.kind


def test_polytope_dimension_mismatch(lpv_setup):
    m, _, _ = lpv_setup
    with pytest.raises(ValueError):
        synthesize_polytopic_hinf(m, bounding_box(np.zeros((2, 2)) + np.arange(2)))
