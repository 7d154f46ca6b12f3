"""
Embedded simplicial manifolds and regions on them.

A manifold here is a closed, connected polyline loop in the plane (k=1, n=2)
or a closed triangle mesh in 3-space (k=2, n=3).  Regions are open connected
subsets selected on a manifold; selectors that cut through simplices produce a
conforming refinement of the manifold so a region is always a union of whole
simplices of ``region.manifold``.

Examples
--------
>>> from lipext.meshes import circle_polygon
>>> m = circle_polygon(64)
>>> half = make_region(m, arc=(0.0, np.pi))
>>> bool(np.isclose(measure(half), 0.5 * m.total_measure))
True
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import factorial
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import pdist

__all__ = [
    "MeshError",
    "SimplexMesh",
    "SimplicialManifold",
    "Region",
    "load_mesh",
    "save_mesh",
    "measure",
    "euclidean_distance",
    "point_simplex_distance",
    "dist_to_set",
    "set_distance",
    "dilate",
    "make_region",
    "region_from_mask",
    "refine",
    "refine_segments",
]

DEGENERACY_TOL = 1e-12
SNAP_TOL = 1e-6


class MeshError(ValueError):
    """Invalid mesh or region; ``index`` names the offending element if known."""

    def __init__(self, message, index=None):
        if index is not None:
            message = f"{message} (element {index})"
        super().__init__(message)
        self.index = index


def simplex_volumes(coords):
    """k-volumes of simplices given as an ``(m, k+1, n)`` coordinate array."""
    coords = np.asarray(coords, dtype=float)
    k = coords.shape[1] - 1
    if k == 0:
        return np.ones(coords.shape[0])
    E = coords[:, 1:, :] - coords[:, :1, :]
    if k == 1:
        return np.linalg.norm(E[:, 0], axis=-1)
    G = np.einsum("mik,mjk->mij", E, E)
    det = np.clip(np.linalg.det(G), 0.0, None)
    return np.sqrt(det) / factorial(k)


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class SimplexMesh:
    """A bag of k-simplices embedded in n-space; no topological requirements.

    Used directly for chart patches and their planar pull-backs, and as the
    base of :class:`SimplicialManifold`.
    """

    def __init__(self, vertices, simplices):
        vertices = np.asarray(vertices, dtype=float)
        simplices = np.asarray(simplices, dtype=np.int64)
        if vertices.ndim != 2:
            raise MeshError("vertices must be a 2-d array")
        if simplices.ndim != 2 or simplices.shape[1] < 2:
            raise MeshError("simplices must be an (m, k+1) array with k >= 1")
        if simplices.size and (simplices.min() < 0 or simplices.max() >= len(vertices)):
            raise MeshError("simplex references a missing vertex")
        self.vertices = _readonly(vertices)
        self.simplices = _readonly(simplices)

    @property
    def ambient_dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def intrinsic_dim(self) -> int:
        return self.simplices.shape[1] - 1

    n = ambient_dim
    k = intrinsic_dim

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_simplices(self) -> int:
        return len(self.simplices)

    def __repr__(self):
        return (f"{type(self).__name__}(n={self.n}, k={self.k}, "
                f"vertices={self.n_vertices}, simplices={self.n_simplices})")

    @cached_property
    def coords(self):
        return _readonly(self.vertices[self.simplices])

    @cached_property
    def volumes(self):
        return _readonly(simplex_volumes(self.coords))

    @property
    def total_measure(self) -> float:
        return float(np.sum(self.volumes))

    @cached_property
    def centroids(self):
        return _readonly(self.coords.mean(axis=1))

    @cached_property
    def simplex_diameters(self):
        c = self.coords
        d = np.zeros(len(c))
        for i in range(c.shape[1]):
            for j in range(i + 1, c.shape[1]):
                d = np.maximum(d, np.linalg.norm(c[:, i] - c[:, j], axis=-1))
        return _readonly(d)

    @cached_property
    def mesh_size(self) -> float:
        return float(self.simplex_diameters.max())

    @cached_property
    def bbox_diameter(self) -> float:
        used = self.vertices[np.unique(self.simplices)]
        return float(np.linalg.norm(used.max(axis=0) - used.min(axis=0)))

    @cached_property
    def diameter(self) -> float:
        """Largest distance between two points of the mesh."""
        pts = self.vertices[np.unique(self.simplices)]
        if len(pts) > 2000:
            try:
                pts = pts[ConvexHull(pts).vertices]
            except QhullError:
                pass
        if len(pts) < 2:
            return 0.0
        return float(pdist(pts).max())

    @cached_property
    def edges(self):
        """Unique undirected edges ``(e, 2)`` with sorted endpoints."""
        s = self.simplices
        if self.k == 1:
            e = np.sort(s, axis=1)
        else:
            e = np.concatenate([s[:, [0, 1]], s[:, [1, 2]], s[:, [2, 0]]])
            e = np.sort(e, axis=1)
        return _readonly(np.unique(e, axis=0))

    @cached_property
    def faces(self):
        """((k-1)-faces, incidence): face keys and an (m, k+1) face index per simplex.

        For k=1 faces are vertices; for k=2 they are edges.  ``incidence[i, j]``
        is the face opposite local vertex ``j`` of simplex ``i``.
        """
        s = self.simplices
        if self.k == 1:
            keys = np.unique(s)
            inc = np.searchsorted(keys, s[:, ::-1])
            return _readonly(keys[:, None]), _readonly(inc)
        opp = np.stack([np.sort(s[:, [1, 2]], axis=1),
                        np.sort(s[:, [2, 0]], axis=1),
                        np.sort(s[:, [0, 1]], axis=1)], axis=1)
        keys, inv = np.unique(opp.reshape(-1, 2), axis=0, return_inverse=True)
        return _readonly(keys), _readonly(inv.reshape(-1, 3))

    @cached_property
    def face_counts(self):
        _, inc = self.faces
        return _readonly(np.bincount(inc.ravel(), minlength=len(self.faces[0])))

    @cached_property
    def adjacency(self):
        """Sparse simplex-to-simplex adjacency through shared (k-1)-faces."""
        _, inc = self.faces
        ns = self.n_simplices
        rows = np.repeat(np.arange(ns), inc.shape[1])
        F = sparse.csr_matrix((np.ones(rows.size), (rows, inc.ravel())),
                              shape=(ns, int(inc.max()) + 1 if inc.size else 0))
        A = (F @ F.T).tocsr()
        A.setdiag(0)
        A.eliminate_zeros()
        return A

    @cached_property
    def vertex_simplex(self):
        """Sparse vertex-to-simplex incidence ``(n_vertices, n_simplices)``."""
        s = self.simplices
        rows = s.ravel()
        cols = np.repeat(np.arange(len(s)), s.shape[1])
        return sparse.csr_matrix((np.ones(rows.size), (rows, cols)),
                                 shape=(self.n_vertices, len(s)))

    def subset(self, simplex_ids):
        """Mesh of the given simplices, sharing this mesh's vertex numbering."""
        return SimplexMesh(self.vertices, self.simplices[np.asarray(simplex_ids)])

    def scaled(self, lam):
        return type(self)._unchecked(self.vertices * lam, self.simplices)

    @classmethod
    def _unchecked(cls, vertices, simplices):
        obj = cls.__new__(cls)
        SimplexMesh.__init__(obj, vertices, simplices)
        return obj


class SimplicialManifold(SimplexMesh):
    """Closed, connected, non-degenerate embedded simplicial k-manifold.

    Parameters
    ----------
    vertices : (nv, n) array
    simplices : (ns, k+1) int array
        Triangles (k=2) must be consistently oriented; they are reoriented if
        possible.
    check_embedding : bool or None
        Pairwise self-intersection test.  ``None`` runs it only for meshes with
        at most 4000 simplices.
    """

    def __init__(self, vertices, simplices, check_embedding=None):
        super().__init__(vertices, simplices)
        n, k = self.n, self.k
        if n not in (2, 3) or k not in (1, 2) or k >= n:
            raise MeshError(f"unsupported dimensions n={n}, k={k}")
        self._check_nondegenerate()
        self._check_closed()
        self._check_connected()
        self._orient()
        if check_embedding is None:
            check_embedding = self.n_simplices <= 4000
        if check_embedding:
            self._check_embedded()

    def _check_nondegenerate(self):
        scale = self.bbox_diameter
        bad = np.flatnonzero(self.volumes <= DEGENERACY_TOL * scale ** self.k)
        if bad.size:
            raise MeshError("degenerate simplex", int(bad[0]))

    def _check_closed(self):
        counts = self.face_counts
        bad = np.flatnonzero(counts != 2)
        if bad.size:
            raise MeshError("non-manifold/open mesh: face not shared by exactly "
                            "two simplices", int(bad[0]))

    def _check_connected(self):
        ncomp, _ = csgraph.connected_components(self.adjacency, directed=False)
        if ncomp != 1:
            raise MeshError(f"mesh is not connected ({ncomp} components)")

    def _orient(self):
        s = np.array(self.simplices)
        if self.k == 1:
            # every vertex must be the head of one segment and the tail of another
            order = _orient_loop(s)
            if order is None:
                raise MeshError("polyline is not a single closed loop")
            s = order
        else:
            s = _orient_triangles(s)
        self.simplices = _readonly(s)
        self.__dict__.pop("coords", None)

    def _check_embedded(self):
        if self.k == 1:
            i, j = _segment_intersections(self.coords, self.simplices)
        else:
            i, j = _triangle_intersections(self.coords, self.simplices)
        if i is not None:
            raise MeshError(f"self-intersection between simplices {i} and {j}", i)

    def scaled(self, lam):
        return SimplicialManifold._unchecked(self.vertices * lam, self.simplices)


def _orient_loop(s):
    nxt = {}
    for a, b in s:
        nxt.setdefault(int(a), []).append(int(b))
        nxt.setdefault(int(b), []).append(int(a))
    if any(len(v) != 2 for v in nxt.values()):
        return None
    start = int(s[0, 0])
    out = [(start, int(s[0, 1]))]
    prev, cur = start, int(s[0, 1])
    while cur != start:
        a, b = nxt[cur]
        nb = b if a == prev else a
        out.append((cur, nb))
        prev, cur = cur, nb
        if len(out) > len(s):
            return None
    if len(out) != len(s):
        return None
    return np.array(out, dtype=np.int64)


def _orient_triangles(s):
    """Flip triangles so that every interior edge is traversed both ways."""
    ns = len(s)
    directed = {}
    for t in range(ns):
        for a, b in ((0, 1), (1, 2), (2, 0)):
            key = (min(s[t, a], s[t, b]), max(s[t, a], s[t, b]))
            directed.setdefault(key, []).append(t)
    flip = np.full(ns, -1)
    flip[0] = 0
    stack = [0]
    s = s.copy()
    while stack:
        t = stack.pop()
        for a, b in ((0, 1), (1, 2), (2, 0)):
            u, v = s[t, a], s[t, b]
            for o in directed[(min(u, v), max(u, v))]:
                if o == t:
                    continue
                # neighbour o must contain the edge as (v, u)
                tri = list(s[o])
                iu, iv = tri.index(u), tri.index(v)
                same = (iv - iu) % 3 == 1
                if flip[o] == -1:
                    if same:
                        s[o] = s[o][[0, 2, 1]]
                    flip[o] = int(same)
                    stack.append(o)
                elif same:
                    raise MeshError("mesh is not orientable", int(o))
    return s


def _segment_intersections(coords, simplices):
    a, b = coords[:, 0], coords[:, 1]
    m = len(coords)
    if m > 20000:
        return None, None

    def orient(p, q, r):
        return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - \
               (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])

    for start in range(0, m, 512):
        i = np.arange(start, min(m, start + 512))[:, None]
        j = np.arange(m)[None, :]
        I, J = np.broadcast_arrays(i, j)
        sel = J > I
        share = (simplices[I][..., :, None] == simplices[J][..., None, :]).any(axis=(-1, -2))
        sel &= ~share
        I, J = I[sel], J[sel]
        if not I.size:
            continue
        p1, p2, q1, q2 = a[I], b[I], a[J], b[J]
        d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
        d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
        hit = (d1 * d2 <= 0) & (d3 * d4 <= 0)
        # collinear segments need a projection overlap test
        col = (d1 == 0) & (d2 == 0)
        if col.any():
            e = p2[col] - p1[col]
            t = np.stack([np.einsum("ij,ij->i", q1[col] - p1[col], e),
                          np.einsum("ij,ij->i", q2[col] - p1[col], e)], 1)
            L = np.einsum("ij,ij->i", e, e)
            hit[col] = (t.max(1) >= 0) & (t.min(1) <= L)
        if hit.any():
            h = np.flatnonzero(hit)[0]
            return int(I[h]), int(J[h])
    return None, None


def _seg_tri_hit(p, q, T):
    """Möller–Trumbore segment/triangle test, vectorised over rows."""
    d = q - p
    e1 = T[:, 1] - T[:, 0]
    e2 = T[:, 2] - T[:, 0]
    h = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, h)
    ok = np.abs(det) > 1e-14 * (np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1)
                                 * np.linalg.norm(d, axis=1))
    det = np.where(ok, det, 1.0)
    f = 1.0 / det
    sv = p - T[:, 0]
    u = f * np.einsum("ij,ij->i", sv, h)
    qv = np.cross(sv, e1)
    v = f * np.einsum("ij,ij->i", d, qv)
    t = f * np.einsum("ij,ij->i", e2, qv)
    return ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t >= 0) & (t <= 1)


def _triangle_intersections(coords, simplices):
    lo, hi = coords.min(axis=1), coords.max(axis=1)
    m = len(coords)
    tol = 1e-12 * float(np.linalg.norm(hi.max(0) - lo.min(0)))
    for start in range(0, m, 256):
        i = np.arange(start, min(m, start + 256))[:, None]
        j = np.arange(m)[None, :]
        I, J = np.broadcast_arrays(i, j)
        sel = (J > I) & np.all(lo[I] <= hi[J] + tol, axis=-1) & np.all(lo[J] <= hi[I] + tol, axis=-1)
        I, J = I[sel], J[sel]
        if not I.size:
            continue
        share = (simplices[I][:, :, None] == simplices[J][:, None, :]).any(axis=(1, 2))
        I, J = I[~share], J[~share]
        if not I.size:
            continue
        hit = np.zeros(len(I), dtype=bool)
        for X, Y in ((I, J), (J, I)):
            for a, b in ((0, 1), (1, 2), (2, 0)):
                hit |= _seg_tri_hit(coords[X, a], coords[X, b], coords[Y])
        if hit.any():
            h = np.flatnonzero(hit)[0]
            return int(I[h]), int(J[h])
    return None, None


# ---------------------------------------------------------------------------
# regions

@dataclass(frozen=True, eq=False)
class Region:
    """Open connected subset of a manifold, as a union of whole simplices.

    Attributes
    ----------
    manifold : SimplicialManifold
        The (possibly refined) manifold the region conforms to.
    mask : (ns,) bool array
        Membership per simplex.
    boundary : tuple of int arrays
        k=1: one array holding the boundary vertex indices.  k=2: one ordered,
        closed vertex loop per boundary component.
    """

    manifold: SimplicialManifold
    mask: np.ndarray
    boundary: tuple

    @property
    def k(self):
        return self.manifold.k

    @property
    def n(self):
        return self.manifold.n

    @cached_property
    def simplex_ids(self):
        return _readonly(np.flatnonzero(self.mask))

    @cached_property
    def mesh(self) -> SimplexMesh:
        return self.manifold.subset(self.simplex_ids)

    @cached_property
    def vertex_ids(self):
        return _readonly(np.unique(self.manifold.simplices[self.mask]))

    @cached_property
    def vertex_mask(self):
        vm = np.zeros(self.manifold.n_vertices, dtype=bool)
        vm[self.vertex_ids] = True
        return _readonly(vm)

    @property
    def boundary_vertices(self):
        if not self.boundary:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate(self.boundary))

    @property
    def boundary_points(self):
        return self.manifold.vertices[self.boundary_vertices]

    @cached_property
    def boundary_segments(self):
        """(m, 2, n) boundary segment coordinates (k=2 only; empty for k=1)."""
        if self.k == 1 or not self.boundary:
            return np.zeros((0, 2, self.n))
        segs = [np.stack([loop, np.roll(loop, -1)], axis=1) for loop in self.boundary]
        return self.manifold.vertices[np.concatenate(segs)]

    @property
    def boundary_length(self) -> float:
        s = self.boundary_segments
        return float(np.linalg.norm(s[:, 1] - s[:, 0], axis=-1).sum())

    def complement(self):
        return Region(self.manifold, ~self.mask, self.boundary)

    def dilate(self, lam):
        return Region(dilate(self.manifold, lam), self.mask, self.boundary)

    def refined(self, levels=1):
        m, mask = self.manifold, self.mask
        for _ in range(levels):
            m, info = refine(m)
            mask = mask[info.parent_simplex]
        return region_from_mask(m, mask)

    def __repr__(self):
        return (f"Region(k={self.k}, simplices={int(self.mask.sum())}/"
                f"{len(self.mask)}, measure={measure(self):.6g})")


def measure(region) -> float:
    """k-dimensional Hausdorff measure of a region, manifold, or simplex mesh."""
    if isinstance(region, Region):
        return float(np.sum(region.manifold.volumes[region.mask]))
    return region.total_measure


def euclidean_distance(x, y):
    """Ambient straight-line distance; broadcasts over leading axes."""
    return np.linalg.norm(np.asarray(x, float) - np.asarray(y, float), axis=-1)


def _point_segment_dist(P, A, B):
    """Distances ``(q, m)`` from points ``P (q, n)`` to segments ``A, B (m, n)``."""
    e = B - A
    L2 = np.einsum("ij,ij->i", e, e)
    w = P[:, None, :] - A[None, :, :]
    t = np.clip(np.einsum("qmj,mj->qm", w, e) / np.where(L2 > 0, L2, 1.0), 0.0, 1.0)
    d = w - t[..., None] * e[None]
    return np.linalg.norm(d, axis=-1)


def _point_triangle_dist(P, T):
    A, B, C = T[:, 0], T[:, 1], T[:, 2]
    e1, e2 = B - A, C - A
    nrm = np.cross(e1, e2)
    nn = np.einsum("ij,ij->i", nrm, nrm)
    w = P[:, None, :] - A[None]
    # barycentric coordinates of the plane projection
    d11 = np.einsum("ij,ij->i", e1, e1)
    d12 = np.einsum("ij,ij->i", e1, e2)
    d22 = np.einsum("ij,ij->i", e2, e2)
    w1 = np.einsum("qmj,mj->qm", w, e1)
    w2 = np.einsum("qmj,mj->qm", w, e2)
    den = d11 * d22 - d12 ** 2
    v = (d22 * w1 - d12 * w2) / den
    u = (d11 * w2 - d12 * w1) / den
    inside = (v >= 0) & (u >= 0) & (u + v <= 1)
    plane = np.abs(np.einsum("qmj,mj->qm", w, nrm)) / np.sqrt(nn)
    edge = np.minimum(np.minimum(_point_segment_dist(P, A, B), _point_segment_dist(P, B, C)),
                      _point_segment_dist(P, C, A))
    return np.where(inside, plane, edge)


def point_simplex_distance(points, coords):
    """Distance matrix ``(q, m)`` from points to simplices ``(m, k+1, n)``.

    Exact for points, segments (any n) and triangles in 3-space.
    """
    P = np.atleast_2d(np.asarray(points, float))
    coords = np.asarray(coords, float)
    kk = coords.shape[1] - 1
    if kk == 0:
        return np.linalg.norm(P[:, None, :] - coords[None, :, 0, :], axis=-1)
    if kk == 1:
        return _point_segment_dist(P, coords[:, 0], coords[:, 1])
    if coords.shape[2] == 2:
        coords = np.concatenate([coords, np.zeros(coords.shape[:2] + (1,))], axis=2)
        P = np.concatenate([P, np.zeros((len(P), 1))], axis=1)
    return _point_triangle_dist(P, coords)


def _boundary_coords(region):
    if region.k == 1:
        return region.boundary_points[:, None, :]
    return region.boundary_segments


def dist_to_set(x, target, chunk=2048):
    """Minimum ambient distance from point(s) ``x`` to ``target``.

    ``target`` is a :class:`Region` (its simplices), a :class:`SimplexMesh`, or
    the string-tagged boundary ``(region, "boundary")``.
    """
    if isinstance(target, tuple) and len(target) == 2 and target[1] == "boundary":
        coords = _boundary_coords(target[0])
    elif isinstance(target, Region):
        coords = target.mesh.coords
    elif isinstance(target, SimplexMesh):
        coords = target.coords
    else:
        coords = np.asarray(target, float)
    if len(coords) == 0:
        raise MeshError("empty target set")
    P = np.atleast_2d(np.asarray(x, float))
    out = np.empty(len(P))
    for s in range(0, len(P), chunk):
        best = np.full(min(chunk, len(P) - s), np.inf)
        for t in range(0, len(coords), chunk):
            d = point_simplex_distance(P[s:s + chunk], coords[t:t + chunk])
            best = np.minimum(best, d.min(axis=1))
        out[s:s + chunk] = best
    return out if np.ndim(x) > 1 else float(out[0])


def _segment_segment_dist(P0, P1, Q0, Q1):
    """Row-wise distance between segments [P0,P1] and [Q0,Q1] (any n)."""
    d1, d2, r = P1 - P0, Q1 - Q0, P0 - Q0
    a = np.einsum("ij,ij->i", d1, d1)
    e = np.einsum("ij,ij->i", d2, d2)
    f = np.einsum("ij,ij->i", d2, r)
    c = np.einsum("ij,ij->i", d1, r)
    b = np.einsum("ij,ij->i", d1, d2)
    den = a * e - b * b
    s = np.where(den > 1e-300, np.clip((b * f - c * e) / np.where(den > 1e-300, den, 1), 0, 1), 0.0)
    t = (b * s + f) / e
    s = np.where(t < 0, np.clip(-c / a, 0, 1), np.where(t > 1, np.clip((b - c) / a, 0, 1), s))
    t = np.clip(t, 0, 1)
    return np.linalg.norm(P0 + s[:, None] * d1 - Q0 - t[:, None] * d2, axis=-1)


def set_distance(first, second, chunk=256):
    """Minimum distance between the simplices of two meshes/regions.

    Exact for segments and for disjoint triangles; simplices sharing a vertex
    give 0.
    """
    A = first.mesh if isinstance(first, Region) else first
    B = second.mesh if isinstance(second, Region) else second
    ca, cb = A.coords, B.coords
    if not len(ca) or not len(cb):
        raise MeshError("empty target set")
    best = np.inf
    k = ca.shape[1] - 1
    if A.vertices is B.vertices:
        sa, sb = A.simplices, B.simplices
    else:
        sa = sb = None
    for s in range(0, len(ca), chunk):
        X = ca[s:s + chunk]
        I, J = np.meshgrid(np.arange(len(X)), np.arange(len(cb)), indexing="ij")
        I, J = I.ravel(), J.ravel()
        if sa is not None:
            shared = (sa[s:s + chunk][I][:, :, None] == sb[J][:, None, :]).any(axis=(1, 2))
            if shared.any():
                return 0.0
        pa, pb = X[I], cb[J]
        cand = []
        edges = [(0, 1)] if k == 1 else [(0, 1), (1, 2), (2, 0)]
        for a0, a1 in edges:
            for b0, b1 in edges:
                cand.append(_segment_segment_dist(pa[:, a0], pa[:, a1], pb[:, b0], pb[:, b1]))
        if k == 2:
            for v in range(3):
                cand.append(_pt_tri_rowwise(pa[:, v], pb))
                cand.append(_pt_tri_rowwise(pb[:, v], pa))
        best = min(best, float(np.min(cand)))
    return best


def _pt_tri_rowwise(P, T):
    """Row-wise point/triangle distance (P[i] to T[i])."""
    out = np.empty(len(P))
    for s in range(0, len(P), 4096):
        p, t = P[s:s + 4096], T[s:s + 4096]
        A, B, C = t[:, 0], t[:, 1], t[:, 2]
        e1, e2 = B - A, C - A
        w = p - A
        d11 = np.einsum("ij,ij->i", e1, e1)
        d12 = np.einsum("ij,ij->i", e1, e2)
        d22 = np.einsum("ij,ij->i", e2, e2)
        w1 = np.einsum("ij,ij->i", w, e1)
        w2 = np.einsum("ij,ij->i", w, e2)
        den = d11 * d22 - d12 ** 2
        v = (d22 * w1 - d12 * w2) / den
        u = (d11 * w2 - d12 * w1) / den
        inside = (v >= 0) & (u >= 0) & (u + v <= 1)
        proj = A + v[:, None] * e1 + u[:, None] * e2
        dp = np.linalg.norm(p - proj, axis=1)
        de = np.minimum.reduce([_segment_segment_dist(p, p, A, B), _segment_segment_dist(p, p, B, C),
                                _segment_segment_dist(p, p, C, A)])
        out[s:s + 4096] = np.where(inside, dp, de)
    return out


def dilate(m, lam):
    """Scale every vertex by ``lam`` about the origin."""
    if not lam > 0:
        raise ValueError(f"dilation factor must be positive, got {lam}")
    if isinstance(m, Region):
        return m.dilate(lam)
    return m.scaled(float(lam))


def load_mesh(path, format=None) -> SimplicialManifold:
    """Read an OBJ triangle mesh (``v``/``f`` lines) or a closed polyline CSV."""
    path = Path(path)
    if format is None:
        format = "obj" if path.suffix.lower() == ".obj" else "polyline-csv"
    text = path.read_text()
    if format == "obj":
        verts, faces = [], []
        for lineno, line in enumerate(text.splitlines(), 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    verts.append([float(x) for x in parts[1:4]])
                elif parts[0] == "f":
                    idx = [int(p.split("/")[0]) for p in parts[1:]]
                    if len(idx) != 3:
                        raise MeshError("only triangular faces are supported", lineno)
                    faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
            except (ValueError, IndexError) as err:
                if isinstance(err, MeshError):
                    raise
                raise MeshError(f"parse failure: {err}", lineno) from err
        if not verts or not faces:
            raise MeshError("OBJ file has no vertices or faces")
        return SimplicialManifold(np.array(verts), np.array(faces))
    if format == "polyline-csv":
        pts = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                x, y = (float(v) for v in line.split(","))
            except ValueError as err:
                raise MeshError(f"parse failure: {err}", lineno) from err
            pts.append((x, y))
        nv = len(pts)
        if nv < 3:
            raise MeshError("polyline needs at least 3 vertices")
        seg = np.stack([np.arange(nv), (np.arange(nv) + 1) % nv], axis=1)
        return SimplicialManifold(np.array(pts), seg)
    raise MeshError(f"unknown mesh format {format!r}")


def save_mesh(m, path, format=None):
    path = Path(path)
    if format is None:
        format = "obj" if m.k == 2 else "polyline-csv"
    if format == "obj":
        lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in m.vertices.tolist()]
        lines += ["f " + " ".join(str(i + 1) for i in t) for t in m.simplices]
    else:
        order = m.simplices[:, 0]
        lines = [f"{x!r},{y!r}" for x, y in m.vertices[order].tolist()]
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# refinement and conforming cuts

@dataclass(frozen=True)
class RefinementInfo:
    """Parent vertices of a refined mesh.

    ``vertex_parents[i] = (a, b)`` means new vertex ``i`` sits at the midpoint
    (or, for :func:`refine_segments`, at ``weights[i]``) of old vertices ``a`` and
    ``b``; original vertices keep their index and have ``a == b``.
    """

    vertex_parents: np.ndarray
    weights: np.ndarray
    parent_simplex: np.ndarray

    def transfer(self, values):
        """Carry vertex values to the refined mesh (exact for PL fields)."""
        v = np.asarray(values, float)
        a, b = self.vertex_parents[:, 0], self.vertex_parents[:, 1]
        return (1 - self.weights) * v[a] + self.weights * v[b]


def refine(m):
    """One uniform dyadic refinement: segments split in two, triangles in four.

    Original vertices keep their indices.  Returns ``(mesh, RefinementInfo)``.
    """
    s = m.simplices
    nv = m.n_vertices
    if m.k == 1:
        mids = nv + np.arange(len(s))
        new_s = np.empty((2 * len(s), 2), dtype=np.int64)
        new_s[0::2] = np.stack([s[:, 0], mids], 1)
        new_s[1::2] = np.stack([mids, s[:, 1]], 1)
        parents = np.concatenate([np.stack([np.arange(nv)] * 2, 1), s])
        psimp = np.repeat(np.arange(len(s)), 2)
    else:
        E = m.edges
        lookup = {(int(a), int(b)): nv + i for i, (a, b) in enumerate(E)}

        def mid(a, b):
            return np.array([lookup[(min(x, y), max(x, y))] for x, y in zip(a, b)])

        m01, m12, m20 = mid(s[:, 0], s[:, 1]), mid(s[:, 1], s[:, 2]), mid(s[:, 2], s[:, 0])
        new_s = np.stack([
            np.stack([s[:, 0], m01, m20], 1),
            np.stack([m01, s[:, 1], m12], 1),
            np.stack([m20, m12, s[:, 2]], 1),
            np.stack([m01, m12, m20], 1),
        ], axis=1).reshape(-1, 3)
        parents = np.concatenate([np.stack([np.arange(nv)] * 2, 1), E])
        psimp = np.repeat(np.arange(len(s)), 4)
    w = np.where(parents[:, 0] == parents[:, 1], 0.0, 0.5)
    verts = np.concatenate([m.vertices, 0.5 * (m.vertices[parents[nv:, 0]] + m.vertices[parents[nv:, 1]])])
    cls = type(m)
    return cls._unchecked(verts, new_s), RefinementInfo(parents, w, psimp)


def refine_segments(m, pieces):
    """Split segment ``i`` of a polyline into ``pieces[i]`` equal parts."""
    if m.k != 1:
        raise MeshError("refine_segments needs a polyline")
    pieces = np.maximum(1, np.asarray(pieces, dtype=np.int64))
    nv = m.n_vertices
    verts = [m.vertices]
    parents = [np.stack([np.arange(nv)] * 2, 1)]
    weights = [np.zeros(nv)]
    new_s, psimp = [], []
    nxt = nv
    for i, (a, b) in enumerate(m.simplices):
        p = int(pieces[i])
        t = np.arange(1, p) / p
        ids = np.arange(nxt, nxt + p - 1)
        nxt += p - 1
        verts.append(m.vertices[a] + t[:, None] * (m.vertices[b] - m.vertices[a]))
        parents.append(np.tile([a, b], (p - 1, 1)))
        weights.append(t)
        chain = np.concatenate([[a], ids, [b]])
        new_s.append(np.stack([chain[:-1], chain[1:]], 1))
        psimp.append(np.full(p, i))
    info = RefinementInfo(np.concatenate(parents), np.concatenate(weights), np.concatenate(psimp))
    return type(m)._unchecked(np.concatenate(verts), np.concatenate(new_s)), info


def _cut(m, f_fn, root_fn):
    """Split simplices of ``m`` along the zero set of ``f_fn``.

    ``root_fn(A, B)`` returns the crossing parameter on each edge ``A -> B``
    whose endpoint values have opposite signs.  Returns the conforming mesh,
    a per-simplex inside flag (``f < 0``), and the RefinementInfo.
    """
    V = m.vertices
    nv = len(V)
    f = np.asarray(f_fn(V), float)
    scale = m.mesh_size
    f = np.where(np.abs(f) <= 1e-12 * scale, 0.0, f)
    E = m.edges
    for _ in range(3):
        cross = f[E[:, 0]] * f[E[:, 1]] < 0
        t = np.full(len(E), np.nan)
        if cross.any():
            t[cross] = root_fn(V[E[cross, 0]], V[E[cross, 1]])
        snap_a = cross & (t < SNAP_TOL)
        snap_b = cross & (t > 1 - SNAP_TOL)
        if not (snap_a.any() or snap_b.any()):
            break
        f[E[snap_a, 0]] = 0.0
        f[E[snap_b, 1]] = 0.0
    cross = f[E[:, 0]] * f[E[:, 1]] < 0
    new_ids = nv + np.cumsum(cross) - 1
    edge_vertex = {(int(a), int(b)): int(new_ids[i]) for i, (a, b) in enumerate(E) if cross[i]}
    tt = t[cross]
    new_pts = V[E[cross, 0]] + tt[:, None] * (V[E[cross, 1]] - V[E[cross, 0]])
    verts = np.concatenate([V, new_pts])
    fv = np.concatenate([f, np.zeros(len(new_pts))])
    parents = np.concatenate([np.stack([np.arange(nv)] * 2, 1), E[cross]])
    weights = np.concatenate([np.zeros(nv), tt])

    def ev(a, b):
        return edge_vertex.get((min(a, b), max(a, b)))

    out, inside, psimp = [], [], []

    def side(ids):
        vals = fv[ids]
        if vals.min() < 0 and vals.max() <= 0:
            return True
        if vals.max() > 0 and vals.min() >= 0:
            return False
        return float(f_fn(verts[ids].mean(axis=0)[None])[0]) < 0

    for si, simp in enumerate(m.simplices):
        simp = [int(x) for x in simp]
        pieces = []
        if m.k == 1:
            a, b = simp
            c = ev(a, b)
            if c is None:
                pieces = [([a, b], side([a, b]))]
            else:
                pieces = [([a, c], fv[a] < 0), ([c, b], fv[b] < 0)]
        else:
            cut_pts = [ev(simp[i], simp[(i + 1) % 3]) for i in range(3)]
            if all(c is None for c in cut_pts):
                pieces = [(simp, side(simp))]
            else:
                lo, hi = [], []
                for i in range(3):
                    a = simp[i]
                    if fv[a] <= 0:
                        lo.append(a)
                    if fv[a] >= 0:
                        hi.append(a)
                    c = cut_pts[i]
                    if c is not None:
                        lo.append(c)
                        hi.append(c)
                # the piece's side is the side of the polygon it came from
                for poly, flag in ((lo, True), (hi, False)):
                    for j in range(1, len(poly) - 1):
                        pieces.append(([poly[0], poly[j], poly[j + 1]], flag))
        for piece, flag in pieces:
            out.append(piece)
            inside.append(bool(flag))
            psimp.append(si)
    cut = type(m)._unchecked(verts, np.array(out, dtype=np.int64))
    vols = cut.volumes
    if np.any(vols <= DEGENERACY_TOL * m.bbox_diameter ** m.k):
        bad = int(np.flatnonzero(vols <= DEGENERACY_TOL * m.bbox_diameter ** m.k)[0])
        raise MeshError("cut produced a degenerate simplex", bad)
    info = RefinementInfo(parents, weights, np.array(psimp))
    return cut, np.array(inside), info


def _components(m, mask):
    ids = np.flatnonzero(mask)
    A = m.adjacency[ids][:, ids]
    return csgraph.connected_components(A, directed=False)


def region_from_mask(m, mask, validate=True) -> Region:
    """Build a :class:`Region` from a simplex mask, extracting its boundary."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (m.n_simplices,):
        raise MeshError("mask length does not match the simplex count")
    if validate:
        if not mask.any():
            raise MeshError("empty selection")
        if mask.all():
            raise MeshError("selection covers the whole manifold (no boundary)")
        ncomp, _ = _components(m, mask)
        if ncomp != 1:
            raise MeshError(f"disconnected selection ({ncomp} components)")
    s = m.simplices
    if m.k == 1:
        inside_v = np.bincount(s[mask].ravel(), minlength=m.n_vertices)
        outside_v = np.bincount(s[~mask].ravel(), minlength=m.n_vertices)
        bnd = np.flatnonzero((inside_v > 0) & (outside_v > 0))
        boundary = (bnd,) if bnd.size else ()
    else:
        directed = np.concatenate([s[mask][:, [0, 1]], s[mask][:, [1, 2]], s[mask][:, [2, 0]]])
        und = {}
        for a, b in directed:
            key = (min(a, b), max(a, b))
            und[key] = und.get(key, 0) + 1
        nxt = {}
        for a, b in directed:
            if und[(min(a, b), max(a, b))] == 1:
                nxt[int(a)] = int(b)
        loops = []
        seen = set()
        for start in sorted(nxt):
            if start in seen:
                continue
            loop = [start]
            seen.add(start)
            cur = nxt[start]
            while cur != start:
                if cur in seen or cur not in nxt:
                    raise MeshError("region boundary is not a set of simple loops", cur)
                loop.append(cur)
                seen.add(cur)
                cur = nxt[cur]
            loops.append(np.array(loop, dtype=np.int64))
        boundary = tuple(loops)
    return Region(m, _readonly(mask), boundary)


def make_region(m, *, arc=None, cap=None, simplices=None) -> Region:
    """Select a region by angle range, ball cap, or simplex ids.

    Parameters
    ----------
    arc : (theta0, theta1)
        Counter-clockwise polar angle range (radians) on a planar polyline that
        is star-shaped about the origin.
    cap : (center, radius)
        Points of the manifold strictly within Euclidean distance ``radius`` of
        ``center``.  Cut points lie exactly on the sphere.
    simplices : sequence of int
        Explicit simplex ids.

    The returned region's manifold is a conforming refinement of ``m`` when the
    selector cuts simplices.
    """
    given = [x is not None for x in (arc, cap, simplices)]
    if sum(given) != 1:
        raise ValueError("give exactly one of arc=, cap=, simplices=")
    if simplices is not None:
        mask = np.zeros(m.n_simplices, dtype=bool)
        mask[np.asarray(simplices, dtype=np.int64)] = True
        return region_from_mask(m, mask)
    if arc is not None:
        if m.k != 1 or m.n != 2:
            raise MeshError("arc selector needs a planar polyline")
        t0, t1 = float(arc[0]), float(arc[1])
        width = t1 - t0
        if not width > 0:
            raise MeshError("empty angle range")
        if width >= 2 * np.pi:
            raise MeshError("angle range covers the whole manifold (no boundary)")
        mc = m
        for theta in (t0, t1):
            mc = _cut_ray(mc, theta)

        def rel(p):
            return np.mod(np.arctan2(p[:, 1], p[:, 0]) - t0, 2 * np.pi)

        mask = rel(mc.centroids) < width
        return region_from_mask(mc, mask)
    center, radius = cap
    center = np.asarray(center, float)
    radius = float(radius)
    if not radius > 0:
        raise MeshError("cap radius must be positive")

    def f_fn(P):
        return np.linalg.norm(P - center, axis=-1) - radius

    mc, inside, _ = _cut(m, f_fn, lambda A, B: _sphere_root(A, B, center, radius))
    return region_from_mask(mc, inside)


def _sphere_root(A, B, c, r):
    d = B - A
    w = A - c
    a = np.einsum("ij,ij->i", d, d)
    b = 2 * np.einsum("ij,ij->i", d, w)
    cc = np.einsum("ij,ij->i", w, w) - r * r
    disc = np.sqrt(np.clip(b * b - 4 * a * cc, 0, None))
    t1 = (-b - disc) / (2 * a)
    t2 = (-b + disc) / (2 * a)
    # exactly one root lies in [0, 1] because the endpoint signs differ
    return np.where((t1 >= 0) & (t1 <= 1), t1, t2)


def _cut_ray(m, theta):
    d = np.array([np.cos(theta), np.sin(theta)])
    nrm = np.array([-d[1], d[0]])

    def f_fn(P):
        return P @ nrm

    def root(A, B):
        fa, fb = A @ nrm, B @ nrm
        return fa / (fa - fb)

    # only edges whose crossing lies on the positive ray count
    V = m.vertices
    s = m.simplices
    fa, fb = V[s[:, 0]] @ nrm, V[s[:, 1]] @ nrm
    with np.errstate(invalid="ignore", divide="ignore"):
        t = fa / (fa - fb)
    P = V[s[:, 0]] + t[:, None] * (V[s[:, 1]] - V[s[:, 0]])
    on_ray = (fa * fb <= 0) & (P @ d > 0) & ~((fa == 0) & (fb == 0))
    hits = np.flatnonzero(on_ray)
    pts = P[hits]
    if len(hits) == 0:
        raise MeshError(f"ray at angle {theta} misses the polyline")
    if len(hits) > 1:
        uniq = np.unique(np.round(pts / m.mesh_size, 9), axis=0)
        if len(uniq) > 1:
            raise MeshError("arc selector needs a polyline star-shaped about the origin")
    seg = int(hits[0])
    tt = float(t[seg])
    if tt <= SNAP_TOL or tt >= 1 - SNAP_TOL or len(hits) > 1:
        return m
    a, b = (int(x) for x in s[seg])
    V2 = np.concatenate([V, pts[:1]])
    c = len(V)
    s2 = np.concatenate([s[:seg], [[a, c], [c, b]], s[seg + 1:]])
    return SimplicialManifold._unchecked(V2, s2)
