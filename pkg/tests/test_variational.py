import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bilinsde import (
    adjoint_flow,
    controlled_response,
    jacobian_flow,
    make_galerkin_nse2d,
    make_linear,
    make_triad,
    second_variation,
    simulate,
)
from bilinsde.errors import GridError
from bilinsde.variational import jacobian_growth_bound, trapezoid_weights


def resim(model, U0, traj):
    return simulate(model, U0, traj.T, traj.dt, traj.scheme, noise=traj.noise).states[-1]


@pytest.fixture(scope="module")
def triad_traj():
    return simulate(make_triad(), np.array([0.5, -0.3, 0.2]), 1.0, 0.01, seed=7, stream_id=1)


def test_identity_on_empty_interval(triad_traj):
    np.testing.assert_array_equal(jacobian_flow(triad_traj, 30, 30).matrix, np.eye(3))
    np.testing.assert_array_equal(adjoint_flow(triad_traj, 30, 30).matrix, np.eye(3))


def test_linear_jacobian_is_matrix_power():
    m = make_linear(2)
    traj = simulate(m, np.zeros(2), 1.0, 0.01, seed=0)
    J = jacobian_flow(traj, 0, 100).matrix
    np.testing.assert_allclose(J, (1 / 1.01) ** 100 * np.eye(2), rtol=1e-13)
    assert abs(J[0, 0] - math.exp(-1)) < 0.01 * math.exp(-1)


def test_linear_symmetric_adjoint_equals_forward():
    m = make_linear(2, A=np.array([[2.0, 0.5], [0.5, 1.0]]))
    traj = simulate(m, np.zeros(2), 1.0, 0.01, seed=0)
    np.testing.assert_allclose(jacobian_flow(traj, 0, 100).matrix, adjoint_flow(traj, 0, 100).matrix,
                               rtol=1e-13)


@pytest.mark.parametrize("model_name", ["triad", "nse_K1"])
@pytest.mark.parametrize("scheme", ["semi_implicit", "explicit_em"])
def test_jacobian_against_finite_difference(model_name, scheme):
    model = make_triad() if model_name == "triad" else make_galerkin_nse2d(1)
    r = np.random.default_rng(4)
    U0 = r.normal(size=model.dim) * 0.5
    traj = simulate(model, U0, 1.0, 0.01, scheme, seed=2)
    eps = 1e-5
    J = jacobian_flow(traj, 0, traj.steps)
    for _ in range(3):
        xi = r.normal(size=model.dim)
        xi /= np.linalg.norm(xi)
        fd = (resim(model, U0 + eps * xi, traj) - traj.states[-1]) / eps
        assert np.linalg.norm(fd - J.apply(xi)) <= 1e-3 * np.linalg.norm(J.apply(xi))


@given(st.integers(0, 2**32 - 1))
def test_duality(seed):
    r = np.random.default_rng(seed)
    traj = simulate(make_triad(), r.normal(size=3), 0.5, 0.01, seed=seed % 1000)
    s = int(r.integers(0, 50))
    t = int(r.integers(s, 51))
    xi, eta = r.normal(size=(2, 3))
    J, Jt = jacobian_flow(traj, s, t), adjoint_flow(traj, s, t)
    gap = abs(J.apply(xi) @ eta - xi @ Jt.apply(eta))
    assert gap <= 1e-12 * np.linalg.norm(xi) * np.linalg.norm(eta) * max(1.0, np.linalg.norm(J.matrix))


def test_composition(triad_traj, rng):
    M = triad_traj.steps
    for _ in range(5):
        s = int(rng.integers(1, M))
        whole = jacobian_flow(triad_traj, 0, M)
        parts = jacobian_flow(triad_traj, 0, s).then(jacobian_flow(triad_traj, s, M))
        np.testing.assert_allclose(parts.matrix, whole.matrix, rtol=1e-13, atol=1e-15)


def test_flow_index_checks(triad_traj):
    with pytest.raises(IndexError):
        jacobian_flow(triad_traj, 10, 5)
    with pytest.raises(ValueError):
        jacobian_flow(triad_traj, 0, 5).then(jacobian_flow(triad_traj, 6, 9))


def test_gronwall_bound():
    for seed in range(5):
        traj = simulate(make_triad(), np.array([2.0, -1.0, 1.0]), 2.0, 0.01, seed=seed)
        J = jacobian_flow(traj, 0, traj.steps).matrix
        assert math.log(np.linalg.norm(J, 2)) <= jacobian_growth_bound(traj) + 1e-12


def test_second_variation_linear_zero():
    traj = simulate(make_linear(2), np.zeros(2), 1.0, 0.01)
    assert not np.any(second_variation(traj, 0, 100, [1.0, 0.0], [0.0, 1.0]))


def test_second_variation_symmetric(triad_traj, rng):
    a, b = rng.normal(size=(2, 3))
    x = second_variation(triad_traj, 0, triad_traj.steps, a, b)
    y = second_variation(triad_traj, 0, triad_traj.steps, b, a)
    assert np.linalg.norm(x - y) <= 1e-12 * np.linalg.norm(x)


@pytest.mark.parametrize("scheme", ["semi_implicit", "explicit_em"])
def test_second_variation_mixed_difference(scheme, rng):
    model = make_triad()
    U0 = np.array([0.5, -0.3, 0.2])
    traj = simulate(model, U0, 1.0, 0.01, scheme, seed=7)
    a, b = rng.normal(size=(2, 3))
    eps = 1e-4
    fd = (resim(model, U0 + eps * (a + b), traj) - resim(model, U0 + eps * a, traj)
          - resim(model, U0 + eps * b, traj) + traj.states[-1]) / eps**2
    j2 = second_variation(traj, 0, traj.steps, a, b)
    assert np.linalg.norm(fd - j2) <= 1e-2 * np.linalg.norm(j2)


def test_controlled_response_zero_and_pure_integration():
    m = make_linear(2, A=np.zeros((2, 2)))
    traj = simulate(m, np.zeros(2), 2.0, 0.01)
    v = np.zeros((201, 2))
    assert not np.any(controlled_response(traj, v))
    c = np.array([0.7, -1.2])
    np.testing.assert_allclose(controlled_response(traj, np.tile(c, (201, 1))), 2.0 * c, rtol=1e-13)


def test_controlled_response_direct_sum(triad_traj, rng):
    M = triad_traj.steps
    v = rng.normal(size=(M + 1, 2))
    w = trapezoid_weights(M, triad_traj.dt)
    sigma = triad_traj.model.sigma
    direct = sum(w[m] * jacobian_flow(triad_traj, m, M).apply(sigma @ v[m]) for m in range(M + 1))
    assert np.linalg.norm(controlled_response(triad_traj, v) - direct) <= 1e-10


def test_controlled_response_shape_check(triad_traj):
    with pytest.raises(GridError):
        controlled_response(triad_traj, np.zeros((triad_traj.steps, 2)))


def test_trapezoid_weights():
    w = trapezoid_weights(4, 0.5)
    np.testing.assert_array_equal(w, [0.25, 0.5, 0.5, 0.5, 0.25])
    assert w.sum() == 2.0
