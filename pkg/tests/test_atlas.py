import math

import numpy as np
import pytest

from lipext.atlas import (
    build_chart,
    build_cover,
    estimate_constants,
    fit_slopes,
    partition_of_unity,
    pl_lipschitz,
    select_epsilon,
    verify_inclusions,
)
from lipext.geometry import MeshError, dilate, make_region
from lipext.meshes import circle_polygon, cube_surface, dumbbell_polygon, icosphere, square_boundary


@pytest.mark.parametrize("mesh,eps", [(circle_polygon(64), 0.3), (square_boundary(8), 0.3),
                                      (icosphere(2), 0.5), (cube_surface(2), 0.4)])
def test_chart_constants_and_inclusions(mesh, eps):
    x = mesh.vertices[0]
    ch = build_chart(mesh, x, eps)
    assert ch.k == mesh.k
    assert ch.L >= 1 - 1e-12 and ch.L_hat >= 1 - 1e-12
    assert ch.J > 0 and ch.J_hat > 0
    rep = verify_inclusions(ch)
    assert rep.inner_ok and rep.outer_ok


def test_flat_chart_is_an_isometry():
    m = square_boundary(4)
    ch = build_chart(m, np.array([0.5, 0.0]), 0.2)
    assert ch.L == pytest.approx(1.0) and ch.L_hat == pytest.approx(1.0)
    assert ch.J == pytest.approx(1.0) and ch.J_hat == pytest.approx(1.0)


def test_chart_maps_round_trip():
    m = icosphere(2)
    ch = build_chart(m, m.vertices[3], 0.5)
    u = ch.param.vertices[::7] * 0.5
    back = ch.inverse(ch.forward(u))
    assert np.allclose(back, u, atol=1e-9)


def test_transfer_reproduces_linear_functions():
    m = cube_surface(2)
    ch = build_chart(m, m.vertices[5], 0.4)
    f = m.vertices @ np.array([0.3, -1.0, 2.0])
    assert np.allclose(ch.transfer(f), ch.patch.vertices @ np.array([0.3, -1.0, 2.0]))


def test_raw_constants_are_scale_free():
    m = circle_polygon(32)
    a = build_chart(m, m.vertices[0], 0.4)
    b = build_chart(dilate(m, 5.0), 5.0 * m.vertices[0], 2.0)
    for key in ("L", "L_hat", "J", "J_hat"):
        assert getattr(a, key) == pytest.approx(getattr(b, key), rel=1e-10)


def test_chart_errors():
    m = circle_polygon(16)
    with pytest.raises(ValueError):
        build_chart(m, m.vertices[0], 0.0)
    with pytest.raises(MeshError, match="does not lie"):
        build_chart(m, np.array([0.2, 0.1]), 0.3)


def test_select_epsilon_resolves_the_neck():
    m = dumbbell_polygon(gap=0.1)
    eps = select_epsilon(m)
    assert eps < 0.1
    with pytest.raises(MeshError):
        build_chart(m, np.array([0.0, 0.05]), 0.5)


def test_estimate_constants_takes_suprema():
    m = icosphere(2)
    charts = [build_chart(m, m.vertices[i], 0.5) for i in (0, 10, 20)]
    c = estimate_constants(charts)
    assert c.L == max(ch.L for ch in charts) and c.n_charts == 3
    with pytest.raises(ValueError):
        estimate_constants([])


def test_fit_slopes_on_power_laws():
    rows = [{"measure": a, "L": 3 * a ** 0.5, "J": a ** -1.0} for a in (1.0, 2.0, 8.0)]
    s = fit_slopes(rows, keys=("L", "J"))
    assert s["L"] == pytest.approx(0.5) and s["J"] == pytest.approx(-1.0)


@pytest.mark.parametrize("region_kw", [
    ("gon", dict(arc=(0.0, math.pi))),
    ("sphere", dict(cap=(np.array([0.0, 0.0, 1.0]), 1.2))),
])
def test_partition_of_unity(region_kw):
    name, kw = region_kw
    m = circle_polygon(64) if name == "gon" else icosphere(2)
    reg = make_region(m, **kw)
    eps = 0.3 if name == "gon" else 0.5
    cover = build_cover(reg, eps)
    assert cover.min_sum >= 0.25 * (1 - 1e-12)
    pou = partition_of_unity(cover)
    psi = np.stack([f.values for f in pou.fields])
    assert (psi >= 0).all() and (psi <= 1 + 1e-12).all()
    on = reg.vertex_mask
    assert np.allclose(psi[:, on].sum(axis=0), 1.0)
    # the interior cutoff vanishes on the boundary and off the region
    assert np.all(psi[0, reg.boundary_vertices] == 0)
    assert np.all(psi[0, ~on] == 0)
    assert np.all(pou.lipschitz >= 0)


def test_cover_errors():
    reg = make_region(circle_polygon(16), arc=(0.0, 1.0))
    with pytest.raises(ValueError):
        build_cover(reg, -1.0)


def test_pl_lipschitz_of_linear_function():
    m = icosphere(3)
    f = m.vertices @ np.array([0.0, 0.0, 2.0])
    L = pl_lipschitz(m, f)
    assert 1.9 < L <= 2.0 + 1e-9
