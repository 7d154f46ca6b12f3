import math

import numpy as np
import pytest

from lipext.geometry import (
    MeshError,
    SimplexMesh,
    SimplicialManifold,
    dilate,
    dist_to_set,
    load_mesh,
    make_region,
    measure,
    refine,
    region_from_mask,
    save_mesh,
    set_distance,
)
from lipext.meshes import circle_polygon, cube_surface, dumbbell_polygon, icosphere, square_boundary


def test_builtin_measures():
    assert measure(circle_polygon(6)) == pytest.approx(6.0)
    assert measure(square_boundary(3)) == pytest.approx(4.0)
    assert measure(cube_surface(1)) == pytest.approx(6.0)
    area = measure(icosphere(3))
    assert 4 * math.pi * 0.98 < area < 4 * math.pi


def test_builtin_meshes_are_closed_and_consistent():
    for m in (circle_polygon(10), square_boundary(2), icosphere(1), cube_surface(1), dumbbell_polygon()):
        assert isinstance(m, SimplicialManifold)
        if m.k == 2:
            # every edge used once in each direction
            s = m.simplices
            directed = {(int(a), int(b)) for a, b in np.concatenate([s[:, [0, 1]], s[:, [1, 2]], s[:, [2, 0]]])}
            assert all((b, a) in directed for a, b in directed)


def test_open_polyline_rejected():
    V = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    with pytest.raises(MeshError, match="open"):
        SimplicialManifold(V, [[0, 1], [1, 2]])


def test_degenerate_simplex_names_element():
    V = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(MeshError) as info:
        SimplicialManifold(V, [[0, 1], [1, 2], [2, 3], [3, 0]])
    assert info.value.index == 1


def test_self_intersection_detected():
    V = np.array([[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(MeshError, match="self-intersection"):
        SimplicialManifold(V, [[0, 1], [1, 2], [2, 3], [3, 0]])


def test_disconnected_mesh_rejected():
    a = circle_polygon(4).vertices
    V = np.concatenate([a, a + 5])
    S = [[0, 1], [1, 2], [2, 3], [3, 0], [4, 5], [5, 6], [6, 7], [7, 4]]
    with pytest.raises(MeshError, match="not connected"):
        SimplicialManifold(V, S)


def test_missing_vertex_reference():
    with pytest.raises(MeshError, match="missing vertex"):
        SimplexMesh(np.zeros((2, 2)), [[0, 2]])


def test_refine_preserves_geometry_and_values():
    m = icosphere(1)
    r, info = refine(m)
    assert r.n_simplices == 4 * m.n_simplices
    assert measure(r) == pytest.approx(measure(m))
    f = m.vertices @ np.array([1.0, -2.0, 0.5])
    assert np.allclose(info.transfer(f), r.vertices @ np.array([1.0, -2.0, 0.5]))


def test_dilate_scales_measure_and_rejects_nonpositive():
    m = cube_surface(1)
    assert measure(dilate(m, 3.0)) == pytest.approx(9 * measure(m))
    with pytest.raises(ValueError):
        dilate(m, 0.0)


def test_arc_region_measure_and_boundary():
    m = circle_polygon(64)
    reg = make_region(m, arc=(0.0, math.pi))
    assert measure(reg) == pytest.approx(measure(m) / 2)
    assert len(reg.boundary_points) == 2
    assert measure(reg.complement()) == pytest.approx(measure(m) / 2)


def test_arc_cut_inside_a_segment():
    m = circle_polygon(8)
    reg = make_region(m, arc=(0.1, 1.0))
    ang = np.arctan2(reg.boundary_points[:, 1], reg.boundary_points[:, 0])
    assert np.allclose(np.sort(ang), [0.1, 1.0])


def test_cap_boundary_lies_on_sphere():
    m = icosphere(2)
    c, r = np.array([0.0, 0.0, 1.0]), 1.2
    reg = make_region(m, cap=(c, r))
    d = np.linalg.norm(reg.boundary_points - c, axis=1)
    assert np.allclose(d, r)
    assert len(reg.boundary) == 1
    inside = np.linalg.norm(reg.manifold.centroids[reg.mask] - c, axis=1)
    assert (inside < r).all()


@pytest.mark.parametrize("kw,match", [
    (dict(arc=(1.0, 1.0)), "empty"),
    (dict(arc=(0.0, 7.0)), "whole manifold"),
])
def test_bad_arc_selectors(kw, match):
    with pytest.raises(MeshError, match=match):
        make_region(circle_polygon(12), **kw)


def test_region_from_mask_validation():
    m = circle_polygon(12)
    with pytest.raises(MeshError, match="empty"):
        region_from_mask(m, np.zeros(12, bool))
    with pytest.raises(MeshError, match="whole manifold"):
        region_from_mask(m, np.ones(12, bool))
    mask = np.zeros(12, bool)
    mask[[0, 1, 5, 6]] = True
    with pytest.raises(MeshError, match="disconnected"):
        region_from_mask(m, mask)


def test_exactly_one_selector():
    with pytest.raises(ValueError):
        make_region(circle_polygon(8))


def test_distances_between_point_sets_and_meshes():
    m = square_boundary(4)
    d = dist_to_set(np.array([[0.0, 0.0], [2.0, 0.0]]), m)
    assert np.allclose(d, [0.5, 1.5])
    assert set_distance(m, dilate(m, 3.0)) == pytest.approx(1.0)


@pytest.mark.parametrize("mesh", [circle_polygon(9), icosphere(1)])
def test_mesh_round_trip(tmp_path, mesh):
    path = tmp_path / ("m.obj" if mesh.k == 2 else "m.csv")
    save_mesh(mesh, path)
    back = load_mesh(path)
    assert back.n_simplices == mesh.n_simplices
    assert measure(back) == pytest.approx(measure(mesh), rel=1e-14)


def test_obj_parse_error_names_line(tmp_path):
    path = tmp_path / "bad.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 x\n")
    with pytest.raises(MeshError, match="line|element 4"):
        load_mesh(path)
