import numpy as np
import pytest

from lpvflow.errors import DimensionError, IntegrationError
from lpvflow.pod import lti_model
from lpvflow.sdc import QuadraticSystem, make_benchmark
from lpvflow.trajectory import SignalSpec, integrate, load_trajectory, save_trajectory, signal_value, snapshot_matrix


def test_scalar_decay_matches_exponential():
    model = lti_model([[-1.0]], [[0.0]], [[1.0]])
    traj = integrate(model, np.array([1.0]), None, (0.0, 1.0), 11)
    np.testing.assert_allclose(traj.states[0], np.exp(-traj.times), rtol=1e-7)
    assert abs(traj.states[0, -1] - np.exp(-1.0)) <= 1e-7


@pytest.mark.parametrize("method", ["Radau", "BDF", "RK45", "DOP853"])
def test_methods_agree_on_linear_oscillator(method):
    model = lti_model([[0.0, 1.0], [-1.0, 0.0]], np.zeros((2, 1)), np.eye(2))
    traj = integrate(model, np.array([1.0, 0.0]), None, (0.0, 2.0), 21, method=method)
    np.testing.assert_allclose(traj.states[0], np.cos(traj.times), atol=1e-6)


def test_snapshot_count_and_shapes(burgers32_snapshots):
    traj = burgers32_snapshots
    assert len(traj) == 417
    assert traj.states.shape == (32, 417) and traj.outputs.shape == (6, 417) and traj.inputs.shape == (2, 417)
    np.testing.assert_allclose(traj.times[[0, -1]], [0.0, 5.0])
    assert snapshot_matrix(traj).shape == (32, 417)


def test_energy_decays_for_stable_unforced_burgers(rng):
    sys = make_benchmark("burgers", n=24, nu=0.05, mu=0.0)
    x0 = rng.normal(size=24)
    traj = integrate(sys, x0, None, (0.0, 2.0), 41)
    energy = np.sum(traj.states**2, axis=0)
    assert np.all(np.diff(energy) <= 1e-10 * energy[0])


def test_signals():
    fade = SignalSpec("fading", (2.0,), t_fade=2.0)
    np.testing.assert_allclose(signal_value(fade, 0.0), [2.0])
    np.testing.assert_allclose(signal_value(fade, 1.0), [1.0])
    np.testing.assert_allclose(signal_value(fade, 2.0), [0.0])
    np.testing.assert_allclose(signal_value(fade, 3.0, p=3), [0.0, 0.0, 0.0])
    np.testing.assert_allclose(signal_value(SignalSpec("step", (1.5,)), 7.0, p=2), [1.5, 1.5])
    q = SignalSpec("fading", (1.0,), t_fade=1.0, smoothness=2)
    assert signal_value(q, 0.5)[0] == pytest.approx(0.5)
    eps = 1e-6
    slope = (signal_value(fade, 2.0 - eps)[0] - signal_value(fade, 2.0)[0]) / eps
    assert abs(slope) < 1e-4


def test_signal_validation():
    with pytest.raises(ValueError):
        SignalSpec("chirp")
    with pytest.raises(ValueError):
        SignalSpec("fading", t_fade=0.0)


def test_feedback_callable():
    model = lti_model([[0.0]], [[1.0]], [[1.0]])
    traj = integrate(model, np.array([1.0]), lambda t, x: -2.0 * x, (0.0, 1.0), 5)
    np.testing.assert_allclose(traj.states[0], np.exp(-2.0 * traj.times), rtol=1e-7)


def test_blowup_raises_integration_error():
    sys = QuadraticSystem(np.zeros((1, 1)), [[0, 0, 0]], [1.0], np.zeros((1, 1)), np.eye(1), np.zeros(1))
    with pytest.raises(IntegrationError) as err:
        integrate(sys, np.array([1.0]), None, (0.0, 2.0), 5)
    assert err.value.t_last is not None and err.value.t_last <= 1.0 + 1e-6


def test_bad_initial_state(burgers32):
    with pytest.raises(DimensionError):
        integrate(burgers32, np.zeros(3))


def test_trajectory_roundtrip(tmp_path, burgers32_snapshots):
    save_trajectory(burgers32_snapshots, tmp_path / "s.csv")
    back = load_trajectory(tmp_path / "s.csv")
    for name in ("times", "states", "outputs", "inputs"):
        assert np.array_equal(getattr(back, name), getattr(burgers32_snapshots, name))


def test_deterministic(burgers32):
    a = integrate(burgers32, np.zeros(32), SignalSpec("fading", (1.0,)), (0.0, 1.0), 21)
    b = integrate(burgers32, np.zeros(32), SignalSpec("fading", (1.0,)), (0.0, 1.0), 21)
    assert np.array_equal(a.states, b.states)
