import math

import numpy as np
import pytest

from lipext.atlas import build_chart, select_epsilon
from lipext.extension import (
    chart_extend,
    extend,
    omega_constant,
    ratio_study,
    truncate,
    zero_extend,
)
from lipext.geometry import MeshError, make_region
from lipext.meshes import circle_polygon, square_boundary
from lipext.sobolev import ScalarField, SobolevParams


@pytest.fixture(scope="module")
def eps64(gon64):
    return select_epsilon(gon64)


def _tent(center, width):
    def fn(P):
        th = np.arctan2(P[:, 1], P[:, 0])
        return np.clip(1 - np.abs(th - center) / width, 0, None)
    return fn


def test_zero_field_extends_to_zero(half_arc, eps64):
    res = extend(ScalarField.constant(half_arc, 0.0), s=0.5, eps_manifold=eps64, checks=False)
    assert np.all(res.field.values == 0)
    assert res.report.norms["R"] == 0.0


def test_unit_field_stays_in_unit_interval(half_arc, eps64):
    res = extend(ScalarField.constant(half_arc, 1.0), s=0.5, eps_manifold=eps64, checks=False, norms=False)
    E = res.field.values
    assert np.all(E >= -1e-14) and np.all(E <= 1 + 1e-14)
    assert np.allclose(E[res.region.vertex_mask], 1.0)
    assert res.report.residual <= 1e-12 and res.report.support_ok


def test_extension_vanishes_far_from_region(half_arc, eps64):
    res = extend(ScalarField.constant(half_arc, 1.0), s=0.5, eps_manifold=eps64, checks=False, norms=False)
    M = res.field.mesh
    far = M.vertices[:, 1] < -res.report.eps
    assert far.any() and np.all(res.field.values[far] == 0)


def test_reflection_of_a_flat_ramp():
    m = square_boundary(8)
    reg = make_region(m, arc=(-math.pi / 2 - 0.5, -math.pi / 2 + 0.5))
    xb = 0.5 * math.tan(0.5)
    u = ScalarField.from_function(reg, lambda P: xb - P[:, 0])
    ch = build_chart(reg.manifold, np.array([xb, -0.5]), 0.1)
    ext = chart_extend(u, ch, reg, s=0.5, check=False)
    t = np.linspace(0.01, 0.09, 9)
    pts = np.stack([xb + t, np.full_like(t, -0.5)], 1)
    vals, flags = ext.evaluate(pts, np.zeros(len(t), bool), np.zeros(len(t)))
    assert not flags.any()
    assert np.allclose(vals, t)


def test_chart_must_straddle_the_boundary(half_arc):
    u = ScalarField.constant(half_arc, 1.0)
    x = np.array([0.0, 1.0])
    x = half_arc.manifold.vertices[np.argmin(np.linalg.norm(half_arc.manifold.vertices - x, axis=1))]
    ch = build_chart(half_arc.manifold, x, 0.2)
    with pytest.raises(MeshError, match="straddle"):
        chart_extend(u, ch, half_arc, s=0.5)


def test_extend_requires_region_field(gon64):
    with pytest.raises(TypeError):
        extend(ScalarField.constant(gon64, 1.0), s=0.5)


def test_linearity(half_arc, eps64):
    f = ScalarField.from_function(half_arc, lambda P: P[:, 0])
    g = ScalarField.from_function(half_arc, lambda P: np.exp(P[:, 1]))
    kw = dict(s=0.5, eps_manifold=eps64, checks=False, norms=False)
    Ef, Eg, Efg = (extend(v, **kw).field.values for v in (f, g, f * 2.0 - g))
    assert np.max(np.abs(Efg - (2 * Ef - Eg))) < 1e-12


def test_collar_does_not_change_the_extension(half_arc, eps64):
    u = ScalarField.from_function(half_arc, lambda P: P[:, 0] + P[:, 1] ** 2)
    kw = dict(s=0.5, eps_manifold=eps64, checks=False, norms=False)
    a = extend(u, collar=0.25, **kw).field.values
    b = extend(u, collar=0.5, **kw).field.values
    assert np.max(np.abs(a - b)) < 1e-12


def test_all_checks_hold_on_half_arc(half_arc, eps64):
    u = ScalarField.from_function(half_arc, lambda P: P[:, 0])
    res = extend(u, SobolevParams(0.5, 2.0), eps_manifold=eps64)
    names = {c.name for c in res.report.checks}
    assert {"transport_lp", "transport_semi", "truncation_lp", "truncation_split",
            "zero_extension_cross", "zero_extension_lp"} <= names
    assert all(c.holds for c in res.report.checks if c.applicable)
    n = res.report.norms
    assert n["C_omega"] == pytest.approx(omega_constant(res.report.measure, 1, 0.5, 2.0))
    assert n["R"] <= n["R_naive"]


def test_zero_extension_cross_term_two_ways(gon64, half_arc):
    u = ScalarField.from_function(half_arc, _tent(math.pi / 2, math.pi / 4))
    K = half_arc.mask & (np.abs(u.values[gon64.simplices]) > 0).any(axis=1)
    ustar, checks = zero_extend(u, K, s=0.5)
    cross = checks[0]
    assert cross.holds
    assert cross.detail["cross_rel_diff"] < 1e-3
    assert np.all(ustar.values[~half_arc.vertex_mask] == 0)


def test_zero_extension_errors(gon64, half_arc):
    u = ScalarField.from_function(half_arc, lambda P: P[:, 1])
    with pytest.raises(MeshError, match="vanish"):
        zero_extend(u, half_arc.mask & (np.arange(gon64.n_simplices) < 5), s=0.5)
    with pytest.raises(MeshError, match="touches"):
        zero_extend(u, half_arc.mask, s=0.5)
    with pytest.raises(MeshError, match="contained"):
        zero_extend(u, np.ones(gon64.n_simplices, bool), s=0.5)
    with pytest.raises(TypeError):
        zero_extend(ScalarField.constant(gon64, 0.0), half_arc.mask, s=0.5)


@pytest.mark.parametrize("s,applicable", [(0.25, False), (0.75, True)])
def test_far_bound_applies_only_for_nonnegative_exponent(half_arc, s, applicable):
    u = ScalarField.from_function(half_arc, lambda P: P[:, 0])
    psi = ScalarField.from_function(half_arc.manifold, lambda P: np.clip(P[:, 1], 0, 1))
    _, checks = truncate(u, psi, 0.3, s=s)
    far = next(c for c in checks if c.name == "truncation_far")
    assert far.applicable is applicable
    assert far.detail["exponent"] == pytest.approx(1 + (s - 1) * 2)
    assert all(c.holds for c in checks if c.applicable)


def test_truncation_rejects_bad_cutoff(half_arc):
    u = ScalarField.from_function(half_arc, lambda P: P[:, 0])
    psi = ScalarField.constant(half_arc.manifold, 2.0)
    with pytest.raises(MeshError, match="outside"):
        truncate(u, psi, 0.3, s=0.5)


def test_ratio_study_rows():
    m = circle_polygon(64)
    regions = [make_region(m, arc=(0.0, a)) for a in (math.pi, math.pi / 2)]
    rows = ratio_study(regions, {"x": lambda P: P[:, 0]}, (0.5,), eps_manifold=select_epsilon(m))
    assert len(rows) == 2
    for r in rows:
        assert r["residual"] < 1e-12
        assert r["R"] > 0 and r["R_naive"] >= r["R"]


def test_far_bound_fails_when_exponent_is_negative(half_arc):
    # with k + (s-1)p < 0 the far potential does not decay like eps^-(k+(s-1)p)
    u = ScalarField.from_function(half_arc, lambda P: P[:, 0])
    psi = ScalarField.from_function(half_arc.manifold, lambda P: np.clip(P[:, 1], 0, 1))
    gaps = []
    for eps in (0.3, 0.05):
        far = next(c for c in truncate(u, psi, eps, s=0.25)[1] if c.name == "truncation_far")
        assert not far.applicable and far.lhs > far.rhs
        gaps.append(far.lhs / far.rhs)
    assert gaps[1] > gaps[0]


def test_ratio_slopes_leave_the_window_when_the_quarter_circle_is_included():
    # large arcs are pre-asymptotic: with |w| = |M|/4 in the family the fitted
    # slopes fall below the criterion window, which only the smaller sizes satisfy
    from lipext.harness import RATIO_DYADIC, RATIO_WINDOW, field_function, ratio_family, ratio_slopes
    m = circle_polygon(64)
    fields = {"x": field_function("x")}
    eps = select_epsilon(m)
    wide = ratio_slopes(ratio_study(ratio_family(m, (2,) + RATIO_DYADIC), fields, (0.75,), eps_manifold=eps))
    base = ratio_slopes(ratio_study(ratio_family(m), fields, (0.75,), eps_manifold=eps))
    assert wide[0]["slope"] < RATIO_WINDOW[0] <= base[0]["slope"]
