import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bilinsde import (
    CapacityError,
    PolyVectorField,
    build_V_ladder,
    build_W_ladder,
    check_hormander_at_point,
    lie_bracket,
    make_galerkin_nse2d,
    make_linear,
    make_triad,
    span_dimension,
)
from bilinsde.brackets import check_hormander_at_point_detail


def fd_jacobian(f, U, h=1e-6):
    N = len(U)
    cols = [(f(U + h * e) - f(U - h * e)) / (2 * h) for e in np.eye(N)]
    return np.stack(cols, axis=1)


def random_field(rng, N, degree):
    parts = {m: rng.normal(size=(N,) * (m + 1)) for m in range(degree + 1)}
    return PolyVectorField(N, parts)


def brute_W_span(model, n_max):
    """Un-deduplicated ladder: keeps every bracket, ranks the union."""
    sig = [model.sigma[:, j] for j in range(model.noise_dim)]
    level = list(sig)
    dims = [span_dimension(level)]
    for _ in range(n_max):
        level = level + [model.bilinear(p, s) + model.bilinear(s, p) for p in level for s in sig]
        dims.append(span_dimension(level))
    return dims


def test_span_dimension_examples():
    e = np.eye(3)
    assert span_dimension([e[0], e[0]]) == 1
    assert span_dimension([e[0], e[1], -2 * e[2]]) == 3
    assert span_dimension([e[0], e[0] + 1e-14 * e[1]], tol=1e-8) == 1
    assert span_dimension([]) == 0


def test_self_bracket_and_constants(rng):
    G = random_field(rng, 3, 2)
    assert lie_bracket(G, G).is_zero()
    a = PolyVectorField.constant(rng.normal(size=3))
    b = PolyVectorField.constant(rng.normal(size=3))
    assert lie_bracket(a, b).is_zero()


def test_constant_with_quadratic(triad, rng):
    s = rng.normal(size=3)
    G = PolyVectorField.constant(s)
    H = PolyVectorField.quadratic(triad.dense_B())
    br = lie_bracket(G, H)
    assert br.degree == 1
    for _ in range(10):
        U = rng.normal(size=3)
        np.testing.assert_allclose(br(U), triad.bilinear(s, U) + triad.bilinear(U, s), atol=1e-12)


def test_bracket_matches_numerical_derivatives(rng):
    G, H = random_field(rng, 3, 2), random_field(rng, 3, 1)
    br = lie_bracket(G, H)
    for _ in range(5):
        U = rng.normal(size=3)
        expect = fd_jacobian(H, U) @ G(U) - fd_jacobian(G, U) @ H(U)
        np.testing.assert_allclose(br(U), expect, rtol=1e-6, atol=1e-6)


def test_jacobian_of_field(rng):
    G = random_field(rng, 3, 3)
    U = rng.normal(size=3)
    np.testing.assert_allclose(G.jacobian(U), fd_jacobian(G, U), rtol=1e-6, atol=1e-6)


def test_bracket_antisymmetry_and_bilinearity(rng):
    F, G, H = (random_field(rng, 3, 1) for _ in range(3))
    a, b = 1.7, -0.4
    lhs = lie_bracket(F.scale(a) + G.scale(b), H)
    rhs = lie_bracket(F, H).scale(a) + lie_bracket(G, H).scale(b)
    swap = lie_bracket(H, F) + lie_bracket(F, H)
    for U in rng.normal(size=(100, 3)):
        ref = max(1.0, np.linalg.norm(rhs(U)))
        assert np.linalg.norm(lhs(U) - rhs(U)) <= 1e-10 * ref
        assert np.linalg.norm(swap(U)) <= 1e-10 * max(1.0, np.linalg.norm(lie_bracket(F, H)(U)))


@given(st.integers(0, 2**32 - 1))
def test_jacobi_identity(seed):
    r = np.random.default_rng(seed)
    F, G, H = random_field(r, 2, 1), random_field(r, 2, 1), random_field(r, 2, 0)
    J = lie_bracket(F, lie_bracket(G, H)) + lie_bracket(G, lie_bracket(H, F)) + lie_bracket(H, lie_bracket(F, G))
    for U in r.normal(size=(5, 2)):
        scale = 1.0 + sum(np.linalg.norm(x(U)) for x in (F, G, H)) ** 3
        assert np.linalg.norm(J(U)) <= 1e-10 * scale


def test_degree_cap_overflow(rng):
    G = random_field(rng, 2, 3)
    H = PolyVectorField(2, {2: rng.normal(size=(2, 2, 2))}, degree_cap=3)
    G3 = PolyVectorField(2, dict(G.parts), degree_cap=3)
    with pytest.raises(CapacityError):
        lie_bracket(G3, H)


def test_W_ladder_triad_examples(triad, triad_e1):
    lad = build_W_ladder(triad, 10)
    assert lad.spanning_level == 1
    assert lad.span_dim == [2, 3]
    np.testing.assert_allclose(
        triad.bilinear([1, 0, 0], [0, 1, 0]) + triad.bilinear([0, 1, 0], [1, 0, 0]), [0, 0, -2]
    )
    lad1 = build_W_ladder(triad_e1, 10)
    assert lad1.spanning_level is None
    assert all(d == 1 for d in lad1.span_dim)
    assert lad1.stabilized_at == 1


def test_W_ladder_full_forcing():
    assert build_W_ladder(make_linear(4), 5).spanning_level == 0


@pytest.mark.parametrize("forced", [((1, 0), (1, 1)), ((1, 0), (2, 1)), ((1, 0),), ((1, 1), (2, 0))])
def test_W_ladder_against_brute_force(forced):
    m = make_galerkin_nse2d(2, forced_modes=forced)
    lad = build_W_ladder(m, 4)
    brute = brute_W_span(m, min(4, len(lad.span_dim) - 1))
    assert lad.span_dim[: len(brute)] == brute


def test_W_ladder_monotone_and_stable():
    m = make_galerkin_nse2d(2)
    lad = build_W_ladder(m, 12)
    assert all(a <= b for a, b in zip(lad.span_dim, lad.span_dim[1:]))
    assert lad.stabilized_at is not None
    longer = build_W_ladder(m, 20)
    assert longer.span_dim == lad.span_dim


def test_nse_regression_values():
    # frozen: box truncation, forcing on (1,0) and (1,1)
    assert build_W_ladder(make_galerkin_nse2d(2), 12).span_dim[-1] == 22
    assert build_W_ladder(make_galerkin_nse2d(3), 12).spanning_level == 8
    assert build_W_ladder(make_galerkin_nse2d(2, forced_modes=((1, 0), (2, 1))), 12).spanning_level == 7


def test_V_ladder_level0_constants(triad):
    lad = build_V_ladder(triad, 0)
    assert lad.span_dim[0] == 2
    assert all(f.degree == 0 for f in lad.levels[0])


def test_V_ladder_linear_model():
    A = np.diag([1.0, 2.0, 3.0])
    m = make_linear(3, A=A, sigma=np.ones((3, 1)))
    lad = build_V_ladder(m, 6)
    for flds in lad.levels:
        assert all(f.degree == 0 for f in flds)
    # Krylov space of diag(1,2,3) from (1,1,1) is everything
    assert lad.span_dim[-1] == 3
    sig = PolyVectorField.constant(np.ones(3))
    F = PolyVectorField.drift(m)
    np.testing.assert_allclose(lie_bracket(sig, F)(np.zeros(3)), -A @ np.ones(3))


def test_bracket_with_constant_is_directional(triad, rng):
    E = random_field(rng, 3, 2)
    s = rng.normal(size=3)
    br = lie_bracket(E, PolyVectorField.constant(s))
    U = rng.normal(size=3)
    np.testing.assert_allclose(br(U), -E.jacobian(U) @ s, atol=1e-10)


@pytest.mark.parametrize("model", [make_triad(), make_triad(forced_axes=(1,)), make_galerkin_nse2d(1)])
def test_V_ladder_sign_invariance(model):
    a = build_V_ladder(model, 4, drift_sign=1.0)
    b = build_V_ladder(model, 4, drift_sign=-1.0)
    assert a.span_dim == b.span_dim


def test_check_at_point():
    assert check_hormander_at_point(make_triad(), np.zeros(3)) == (3, True)
    m = make_linear(3, sigma=np.eye(3)[:, :1])
    for U in np.random.default_rng(0).normal(size=(3, 3)):
        assert check_hormander_at_point(m, U) == (1, False)
    full = check_hormander_at_point_detail(make_linear(3), np.ones(3))
    assert full.spanning and full.level == 0


def test_degenerate_triad_never_spans():
    # with only e1 forced, (U2, U3) obeys a homogeneous linear equation driven by U1
    m = make_triad(forced_axes=(1,))
    assert check_hormander_at_point(m, np.array([1.0, 0.0, 0.0]), n_max=4) == (1, False)
    assert check_hormander_at_point(m, np.array([0.3, 0.5, -0.7]), n_max=4) == (2, False)


def test_capacity_error_when_undecided():
    m = make_triad(forced_axes=(1,))
    with pytest.raises(CapacityError):
        check_hormander_at_point(m, np.array([1.0, 0.0, 0.0]), n_max=8, degree_cap=4)


def test_rows_format(triad):
    rows = build_W_ladder(triad, 3).rows()
    assert rows == [(0, 2, 2), (1, 1, 3)]


def test_levels_are_nested():
    lad = build_V_ladder(make_triad(), 3)
    for a, b in itertools.pairwise(lad.levels):
        assert len(a) <= len(b)
