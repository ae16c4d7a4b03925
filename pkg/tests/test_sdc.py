import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lpvflow.errors import DimensionError, UnknownBenchmark
from lpvflow.sdc import (
    QuadraticSystem,
    canonical_tensor,
    find_equilibrium,
    load_system,
    make_benchmark,
    quadratic_rhs,
    rhs_jacobian,
    save_system,
    sdc_coefficient,
    shift_system,
)


def lorenz_rhs_oracle(x, sigma=10.0, rho=28.0, beta=8.0 / 3.0):
    return np.array([sigma * (x[1] - x[0]), x[0] * (rho - x[2]) - x[1], x[0] * x[1] - beta * x[2]])


def dense_rhs_oracle(sys, x, u):
    T = sys.dense_tensor()
    return sys.A0 @ x + np.einsum("ijl,j,l->i", T, x, x) + sys.B @ u


def test_origin_is_equilibrium(burgers32, lorenz):
    for sys in (burgers32, lorenz):
        assert np.all(quadratic_rhs(sys, np.zeros(sys.n), np.zeros(sys.p)) == 0.0)


def test_lorenz_hand_value():
    sys = make_benchmark("lorenz", shift=False)
    np.testing.assert_allclose(quadratic_rhs(sys, np.ones(3), np.zeros(1)), [0.0, 26.0, -5.0 / 3.0], rtol=0, atol=1e-14)


def test_lorenz_matches_formula_at_random_points(rng):
    sys = make_benchmark("lorenz", shift=False)
    for _ in range(20):
        x = rng.normal(size=3) * 10
        np.testing.assert_allclose(quadratic_rhs(sys, x), lorenz_rhs_oracle(x), rtol=1e-13, atol=1e-12)


def test_lorenz_structure(lorenz):
    assert (lorenz.n, lorenz.p, lorenz.q) == (3, 1, 3)
    assert lorenz.nnz == 2
    np.testing.assert_array_equal(lorenz.B, np.eye(3)[:, :1])
    np.testing.assert_array_equal(lorenz.C, np.eye(3))


def test_lorenz_coefficient_at_ones(lorenz):
    L = sdc_coefficient(lorenz, np.ones(3)) - lorenz.A0
    expected = np.zeros((3, 3))
    expected[1, 2] = -1.0
    expected[2, 1] = 1.0
    np.testing.assert_array_equal(L, expected)


def test_coefficient_at_zero_is_A0(burgers32):
    np.testing.assert_array_equal(sdc_coefficient(burgers32, np.zeros(32)), burgers32.A0)


def test_coefficient_linear(burgers32, rng):
    v, w = rng.normal(size=(2, 32))
    a, b = 0.7, -1.3
    A0 = burgers32.A0
    lhs = sdc_coefficient(burgers32, a * v + b * w) - A0
    rhs = a * (sdc_coefficient(burgers32, v) - A0) + b * (sdc_coefficient(burgers32, w) - A0)
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-13 * np.abs(rhs).max())


@settings(max_examples=30, deadline=None)
@given(
    v=arrays(float, 12, elements=st.floats(-5, 5)),
    w=arrays(float, 12, elements=st.floats(-5, 5)),
    s=st.floats(-3, 3),
)
def test_coefficient_bilinear(v, w, s):
    sys = make_benchmark("burgers", n=12)
    Lvw = lambda a, b: sdc_coefficient(sys, a) @ b - sys.A0 @ b  # noqa: E731
    scale = 1.0 + np.abs(v).max() * np.abs(w).max() * sys.nnz
    np.testing.assert_allclose(Lvw(s * v, w), s * Lvw(v, w), atol=1e-12 * scale * (1 + abs(s)))
    np.testing.assert_allclose(Lvw(v, s * w), s * Lvw(v, w), atol=1e-12 * scale * (1 + abs(s)))
    np.testing.assert_allclose(Lvw(v + w, w), Lvw(v, w) + Lvw(w, w), atol=1e-12 * scale)


def test_sdc_consistency_and_dense_oracle(burgers32, rng):
    for _ in range(100):
        x = rng.normal(size=32)
        u = rng.normal(size=2)
        f = quadratic_rhs(burgers32, x, u)
        g = sdc_coefficient(burgers32, x) @ x + burgers32.B @ u
        np.testing.assert_allclose(f, g, rtol=1e-13, atol=1e-13 * np.abs(f).max())
        np.testing.assert_allclose(f, dense_rhs_oracle(burgers32, x, u), rtol=1e-13, atol=1e-13 * np.abs(f).max())


def test_rhs_deterministic(burgers32, rng):
    x = rng.normal(size=32)
    assert np.array_equal(quadratic_rhs(burgers32, x), quadratic_rhs(burgers32, x))


def test_burgers_stencil_oracle():
    n, nu = 32, 0.05
    sys = make_benchmark("burgers", n=n, nu=nu, mu=0.0)
    h = 1.0 / (n + 1)
    ref = np.zeros((n, n))
    for i in range(n):
        ref[i, i] = -2.0 * nu / h**2
        if i > 0:
            ref[i, i - 1] = nu / h**2
        if i < n - 1:
            ref[i, i + 1] = nu / h**2
    # the zero state is the steady state, so shifting leaves A0 unchanged
    np.testing.assert_allclose(sys.A0, ref, rtol=1e-14)
    assert sys.q == 6 and sys.p == 2
    assert np.linalg.matrix_rank(sys.C) == 6


def test_burgers_reaction_shifts_spectrum():
    base = make_benchmark("burgers", n=16, mu=0.0)
    react = make_benchmark("burgers", n=16, mu=1.0)
    np.testing.assert_allclose(react.A0 - base.A0, np.eye(16), atol=1e-12)


def test_burgers_convection_skew(burgers32, rng):
    # the quadratic term conserves energy: x . q(x, x) = 0
    for _ in range(10):
        x = rng.normal(size=32)
        qx = quadratic_rhs(burgers32, x) - burgers32.A0 @ x
        assert abs(x @ qx) <= 1e-12 * np.abs(qx).max() * np.abs(x).max() * 32


def test_unknown_benchmark():
    with pytest.raises(UnknownBenchmark):
        make_benchmark("navierstokes")


def test_dimension_errors(burgers32):
    with pytest.raises(DimensionError):
        quadratic_rhs(burgers32, np.zeros(31))
    with pytest.raises(DimensionError):
        quadratic_rhs(burgers32, np.zeros(32), np.zeros(3))
    with pytest.raises(DimensionError):
        sdc_coefficient(burgers32, np.zeros(5))


def test_canonical_tensor_folds_and_sums():
    idx, val = canonical_tensor([(0, 2, 1), (0, 1, 2), (1, 0, 0)], [1.0, 2.0, 3.0], 3)
    np.testing.assert_array_equal(idx, [[0, 1, 2], [1, 0, 0]])
    np.testing.assert_array_equal(val, [3.0, 3.0])


def test_jacobian_finite_difference(burgers32, rng):
    x = rng.normal(size=32)
    J = rhs_jacobian(burgers32, x)
    eps = 1e-6
    Jfd = np.column_stack([(quadratic_rhs(burgers32, x + eps * e) - quadratic_rhs(burgers32, x - eps * e)) / (2 * eps) for e in np.eye(32)])
    np.testing.assert_allclose(J, Jfd, atol=1e-6 * np.abs(J).max())


def test_shift_about_lorenz_equilibrium():
    raw = make_benchmark("lorenz", shift=False)
    x_eq = find_equilibrium(raw, np.array([8.0, 8.0, 27.0]))
    np.testing.assert_allclose(quadratic_rhs(raw, x_eq), 0.0, atol=1e-9)
    shifted = shift_system(raw, x_eq)
    for x in np.random.default_rng(1).normal(size=(5, 3)):
        np.testing.assert_allclose(quadratic_rhs(shifted, x), quadratic_rhs(raw, x + x_eq), atol=1e-10)
    pos = make_benchmark("lorenz", equilibrium="positive")
    np.testing.assert_allclose(pos.x_ss, x_eq, atol=1e-9)


def test_save_load_roundtrip(tmp_path, burgers32):
    save_system(burgers32, tmp_path / "sys")
    back = load_system(tmp_path / "sys")
    for name in ("A0", "B", "C", "x_ss", "Q_idx", "Q_val"):
        np.testing.assert_array_equal(getattr(back, name), getattr(burgers32, name))
    assert back.name == "burgers"


def test_system_is_immutable(burgers32):
    with pytest.raises(ValueError):
        burgers32.A0[0, 0] = 1.0


def test_quadratic_system_rejects_bad_shapes():
    with pytest.raises(DimensionError):
        QuadraticSystem(np.zeros((2, 3)), [], [], np.zeros((2, 1)), np.zeros((1, 2)), np.zeros(2))
