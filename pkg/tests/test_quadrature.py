import math

import numpy as np
import pytest

from lipext.geometry import SimplexMesh
from lipext.quadrature import (
    QuadratureSpec,
    ball_potential,
    cross_integral,
    pair_integral,
    simplex_rule,
)
from lipext.sobolev import ScalarField, oracle_power


def _unit_interval(n):
    x = np.linspace(0.0, 1.0, n + 1)
    V = np.stack([x, np.zeros_like(x)], 1)
    S = np.stack([np.arange(n), np.arange(1, n + 1)], 1)
    return V, S


@pytest.mark.parametrize("k,order", [(1, 2), (1, 5), (2, 3), (2, 6)])
def test_simplex_rule_integrates_polynomials(k, order):
    bary, w = simplex_rule(k, order)
    assert w.sum() == pytest.approx(1.0)
    assert np.allclose(bary.sum(axis=1), 1.0)
    # degree 2*order-1 monomial in the last barycentric coordinate
    deg = 2 * order - 1
    exact = math.factorial(deg) * math.factorial(k) / math.factorial(deg + k)
    assert np.dot(w, bary[:, -1] ** deg) == pytest.approx(exact, rel=1e-12)


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
@pytest.mark.parametrize("n", [1, 7])
def test_linear_field_on_interval_matches_closed_form(s, n):
    V, S = _unit_interval(n)
    res = pair_integral(V[S], S, V[S][:, :, 0], s, 2.0)
    exact = 2.0 / ((2 - 2 * s) * (3 - 2 * s))
    assert res.value == pytest.approx(exact, rel=1e-5)


def test_pair_integral_is_additive_over_separated_pieces():
    V, S = _unit_interval(12)
    U = np.sin(3 * V[:, 0])[S]
    A, B = slice(0, 5), slice(7, 12)
    whole = np.r_[0:5, 7:12]
    s, p = 0.6, 2.0
    pa = pair_integral(V[S][A], S[A], U[A], s, p).value
    pb = pair_integral(V[S][B], S[B], U[B], s, p).value
    cross = cross_integral(V[S][A], U[A], V[S][B], U[B], s, p).value
    total = pair_integral(V[S][whole], S[whole], U[whole], s, p).value
    assert total == pytest.approx(pa + pb + 2 * cross, rel=1e-10)


def test_constant_field_has_zero_seminorm():
    V, S = _unit_interval(5)
    res = pair_integral(V[S], S, np.full(S.shape, 3.0), 0.5, 2.0)
    assert res.value == 0.0


def test_stacked_fields_match_single_calls():
    V, S = _unit_interval(6)
    U1, U2 = V[S][:, :, 0], np.cos(V[S][:, :, 0])
    both = pair_integral(V[S], S, np.stack([U1, U2], -1), 0.4, 3.0)
    for i, U in enumerate((U1, U2)):
        assert both.value[i] == pair_integral(V[S], S, U, 0.4, 3.0).value


def test_workers_do_not_change_the_result():
    V, S = _unit_interval(70)
    U = np.exp(V[:, 0])[S]
    one = pair_integral(V[S], S, U, 0.5, 2.0, QuadratureSpec(workers=1))
    many = pair_integral(V[S], S, U, 0.5, 2.0, QuadratureSpec(workers=4))
    assert one.value == many.value and one.error == many.error


def test_thin_triangles_agree_with_brute_force():
    # a strip of needles: thin pairs are bisected rather than split uniformly
    n = 6
    x = np.linspace(0, 1, n + 1)
    V = np.concatenate([np.stack([x, np.zeros_like(x)], 1), np.stack([x, np.full_like(x, 0.04)], 1)])
    S = np.array([[i, i + 1, n + 1 + i] for i in range(n)] + [[i + 1, n + 2 + i, n + 1 + i] for i in range(n)])
    mesh = SimplexMesh(V, S)
    vals = V[:, 0] + 2 * V[:, 1]
    res = pair_integral(mesh.coords, S, vals[S], 0.5, 2.0)
    ref = oracle_power(ScalarField(mesh, vals), s=0.5, resolution=8000)
    assert res.value == pytest.approx(ref, rel=0.03)


@pytest.mark.parametrize("bad", [dict(far_order=1), dict(near_refinement=1), dict(separation_ratio=0.5),
                                 dict(workers=0)])
def test_quadrature_spec_validation(bad):
    with pytest.raises(ValueError):
        QuadratureSpec(**bad)


@pytest.mark.parametrize("s,p", [(0.0, 2.0), (1.0, 2.0), (0.5, 0.5)])
def test_invalid_parameters_rejected(s, p):
    V, S = _unit_interval(2)
    with pytest.raises(ValueError):
        pair_integral(V[S], S, V[S][:, :, 0], s, p)


@pytest.mark.parametrize("beta", [-1.0, 0.0, 0.5])
def test_segment_potential_closed_form(beta):
    seg = np.array([[[-1.0, 0.0], [1.0, 0.0]]])
    near, far = ball_potential(np.zeros((1, 2)), seg, beta, eps=0.5)
    assert near[0] == pytest.approx(2 * 0.5 ** (1 - beta) / (1 - beta), rel=1e-10)
    assert near[0] + far[0] == pytest.approx(2 / (1 - beta), rel=1e-10)


@pytest.mark.parametrize("beta", [0.0, 1.0, 1.5])
def test_triangle_potential_disk_closed_form(beta):
    sq = np.array([[-1, -1, 0], [1, -1, 0], [1, 1, 0], [-1, 1, 0]], float)
    tris = sq[np.array([[0, 1, 2], [0, 2, 3]])]
    eps = 0.6
    near, far = ball_potential(np.zeros((1, 3)), tris, beta, eps=eps)
    assert near[0] == pytest.approx(2 * math.pi * eps ** (2 - beta) / (2 - beta), rel=1e-9)
    if beta == 0.0:
        assert near[0] + far[0] == pytest.approx(4.0, rel=1e-10)


def test_potential_exponent_must_be_integrable():
    seg = np.array([[[0.0, 0.0], [1.0, 0.0]]])
    with pytest.raises(ValueError):
        ball_potential(np.zeros((1, 2)), seg, 1.0)


@pytest.mark.parametrize("beta", [0.5, 1.5])
def test_triangle_potential_above_the_plane(beta):
    sq = np.array([[-1, -1, 0], [1, -1, 0], [1, 1, 0], [-1, 1, 0]], float)
    tris = sq[np.array([[0, 1, 2], [0, 2, 3]])]
    h, eps = 0.3, 0.7
    near, _ = ball_potential(np.array([[0.0, 0.0, h]]), tris, beta, eps=eps)
    q = (2 - beta) / 2
    exact = 2 * math.pi * (eps ** (2 * q) - h ** (2 * q)) / (2 * q)
    assert near[0] == pytest.approx(exact, rel=1e-9)
