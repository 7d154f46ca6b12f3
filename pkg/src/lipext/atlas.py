"""
Uniform chart systems on PL manifolds.

Charts are arc-length parameterizations (k=1) or projections onto the
least-squares plane through the chart centre (k=2).  Parameter coordinates can
be expressed in a reference unit (``scale``): a chart built with ``scale=lam``
on ``dilate(M, lam)`` is the map ``u -> lam * t(u)`` over the reference domain,
which is what the dilation study needs.

Every constant is computed twice: per simplex from the affine pieces, and as
a sampled pairwise distance ratio.  The reported value is the larger one.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .geometry import (
    MeshError,
    Region,
    SimplexMesh,
    _cut,
    _segment_intersections,
    _sphere_root,
    dist_to_set,
    point_simplex_distance,
    refine,
)
from .sobolev import ScalarField, _barycentric
from .quadrature import simplex_rule

__all__ = [
    "Chart",
    "ChartConstants",
    "InclusionReport",
    "BoundaryCover",
    "PartitionOfUnity",
    "build_chart",
    "select_epsilon",
    "estimate_constants",
    "verify_inclusions",
    "scaling_study",
    "fit_slopes",
    "build_cover",
    "partition_of_unity",
    "write_chart_csv",
    "GRAPH_SLOPE_MAX",
]

GRAPH_SLOPE_MAX = 10.0
ON_MANIFOLD_TOL = 1e-9
RIM_SAMPLES = 8
# interpolation weights below this are round-off
ORIGIN_WEIGHT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Chart:
    """Bi-Lipschitz parameterization of ``B(center, radius) ∩ M``.

    ``patch`` (ambient) and ``param`` (k-space) share their simplex list, so a
    field given by values at patch vertices is PL on both.  ``origin_ids`` and
    ``origin_weights`` express each patch vertex as a combination of vertices
    of the manifold, and ``source`` names the manifold simplex each patch
    simplex lies in.
    """

    center: np.ndarray
    radius: float
    patch: SimplexMesh
    param: SimplexMesh
    source: np.ndarray
    origin_ids: np.ndarray
    origin_weights: np.ndarray
    rim: np.ndarray
    basis: np.ndarray | None
    scale: float
    L: float
    L_hat: float
    J: float
    J_hat: float
    L_exact: float
    L_hat_exact: float
    L_sampled: float
    L_hat_sampled: float
    jacobians: np.ndarray

    @property
    def k(self):
        return self.param.n

    def transfer(self, values):
        """Vertex values on the manifold -> values at patch vertices."""
        v = np.asarray(values, float)[self.origin_ids]
        w = np.where(np.abs(self.origin_weights) > ORIGIN_WEIGHT_TOL, self.origin_weights, 0.0)
        w = w / w.sum(axis=1, keepdims=True)
        # values off the field's domain may be NaN where the weight vanishes
        return np.sum(np.where(w != 0, v * w, 0.0), axis=1)

    def inverse(self, points):
        """Parameter coordinates of points of the patch."""
        Y = np.atleast_2d(np.asarray(points, float))
        if self.basis is not None:
            return (Y - self.center) @ self.basis.T / self.scale
        coords = self.patch.coords
        d = point_simplex_distance(Y, coords)
        best = np.argmin(d, axis=1)
        bary = _barycentric(Y, coords[best])
        tau = self.param.vertices[self.param.simplices[best], 0]
        return np.sum(bary * tau, axis=1)[:, None]

    def locate(self, u, tol=1e-9):
        """(simplex, barycentric) of parameter points; simplex -1 when outside."""
        U = np.atleast_2d(np.asarray(u, float))
        coords = self.param.coords
        simp = np.full(len(U), -1)
        bary = np.zeros((len(U), self.k + 1))
        for lo in range(0, len(U), 256):
            P = U[lo:lo + 256]
            B = _all_barycentric(P, coords)
            score = B.min(axis=2)
            j = np.argmax(score, axis=1)
            ok = score[np.arange(len(P)), j] >= -tol
            simp[lo:lo + 256] = np.where(ok, j, -1)
            bary[lo:lo + 256] = B[np.arange(len(P)), j]
        return simp, bary

    def forward(self, u):
        """Ambient points ``t(u)`` for parameter points inside the domain."""
        simp, bary = self.locate(u)
        if np.any(simp < 0):
            raise MeshError("parameter point outside the chart domain", int(np.flatnonzero(simp < 0)[0]))
        return np.einsum("qv,qvn->qn", bary, self.patch.coords[simp])

    def row(self):
        return {"center": " ".join(f"{c:.17g}" for c in self.center), "eps": self.radius,
                "L": self.L, "L_hat": self.L_hat, "J": self.J, "J_hat": self.J_hat,
                "L_exact": self.L_exact, "L_hat_exact": self.L_hat_exact,
                "L_sampled": self.L_sampled, "L_hat_sampled": self.L_hat_sampled}


def _all_barycentric(P, coords):
    """Barycentric coordinates ``(q, m, k+1)`` of every point in every simplex."""
    k = coords.shape[1] - 1
    if k == 1:
        a, b = coords[:, 0, 0], coords[:, 1, 0]
        t = (P[:, :1] - a[None]) / (b - a)[None]
        return np.stack([1 - t, t], axis=2)
    E = coords[:, 1:] - coords[:, :1]
    inv = np.linalg.inv(np.transpose(E, (0, 2, 1)))
    r = P[:, None, :] - coords[None, :, 0]
    lam = np.einsum("mij,qmj->qmi", inv, r)
    return np.concatenate([1 - lam.sum(axis=2, keepdims=True), lam], axis=2)


# ---------------------------------------------------------------------------
# chart construction

def build_chart(m, x, eps, scale=1.0, max_samples=400):
    """Chart of ``B(x, eps) ∩ m`` centred at the point ``x`` of ``m``.

    Raises :class:`MeshError` naming the failing simplex of ``m`` when the
    patch is disconnected, folds under projection, or is too steep.
    """
    x = np.asarray(x, float)
    eps = float(eps)
    if not eps > 0:
        raise ValueError("chart radius must be positive")
    if not scale > 0:
        raise ValueError("chart scale must be positive")
    d = point_simplex_distance(x, m.coords)[0]
    if d.min() > ON_MANIFOLD_TOL * m.bbox_diameter:
        raise MeshError("chart centre does not lie on the manifold")
    if m.k == 1:
        return _chart_polyline(m, x, eps, scale, d, max_samples)
    return _chart_surface(m, x, eps, scale, d, max_samples)


def _chart_polyline(m, x, eps, scale, d, max_samples):
    V, S = m.vertices, m.simplices
    nv = m.n_vertices
    succ = np.full(nv, -1)
    pred = np.full(nv, -1)
    succ[S[:, 0]] = S[:, 1]
    pred[S[:, 1]] = S[:, 0]
    i0 = int(np.argmin(d))
    a0, b0 = (int(v) for v in S[i0])
    e = V[b0] - V[a0]
    t0 = float(np.clip((x - V[a0]) @ e / (e @ e), 0.0, 1.0))
    if t0 <= 1e-12:
        centre = a0
    elif t0 >= 1 - 1e-12:
        centre = b0
    else:
        centre = None
    if centre is not None:
        x = V[centre].copy()
        fwd, bwd = int(succ[centre]), int(pred[centre])
    else:
        fwd, bwd = b0, a0

    def walk(vid, step):
        inside, prev = [], x
        seen = {centre}
        while True:
            q = V[vid]
            if np.linalg.norm(q - x) >= eps:
                t = float(_sphere_root(prev[None], q[None], x, eps)[0])
                return inside, prev + t * (q - prev)
            if vid in seen:
                raise MeshError("the chart ball contains the whole manifold", i0)
            seen.add(vid)
            inside.append(vid)
            prev, vid = q, int(step[vid])

    f_in, f_exit = walk(fwd, succ)
    b_in, b_exit = walk(bwd, pred)
    if set(f_in) & set(b_in):
        raise MeshError("the chart ball contains the whole manifold", i0)
    mid = [x] if centre is None else [V[centre]]
    P = np.array([b_exit] + [V[v] for v in reversed(b_in)] + mid + [V[v] for v in f_in] + [f_exit])
    nb = len(b_in) + 1
    seglen = np.linalg.norm(np.diff(P, axis=0), axis=1)
    keep = np.concatenate([[True], seglen > 1e-14 * eps])
    if not keep[nb]:
        keep[nb], keep[nb - 1] = True, False
    tau = np.concatenate([[0.0], np.cumsum(seglen)])
    tau = tau - tau[nb]
    P, tau = P[keep], tau[keep]
    n_pts = len(P)
    simp = np.stack([np.arange(n_pts - 1), np.arange(1, n_pts)], axis=1)
    src = np.array([_segment_source(m, P[i], P[i + 1]) for i in range(n_pts - 1)])
    others = np.setdiff1d(np.arange(m.n_simplices), src)
    if len(others):
        dd = point_simplex_distance(x, m.coords[others])[0]
        if dd.min() < eps * (1 - 1e-12):
            raise MeshError("disconnected patch: the ball meets the manifold twice",
                            int(others[np.argmin(dd)]))
    owner = np.concatenate([src, src[-1:]])
    owner[1:-1] = src[:-1]
    oid, ow = _segment_origins(m, owner, P)
    patch = SimplexMesh(P, simp)
    param = SimplexMesh(tau[:, None] / scale, simp)
    rim = np.array([0, n_pts - 1])
    # arc length is a unit-speed parameterization on every segment
    jac = np.full(len(simp), float(scale))
    samples = np.unique(np.concatenate([tau, np.linspace(tau[0], tau[-1], 257), [0.0]]))
    samples = _thin(samples, max_samples, keep=[0, len(samples) - 1])
    Y = _polyline_points(P, tau, samples)
    chord, arc = _pair_distances(Y, samples[:, None])
    L_s = scale * float(np.max(chord / arc))
    Lh_s = float(np.max(arc / chord)) / scale
    return Chart(center=x, radius=eps, patch=patch, param=param, source=src,
                 origin_ids=oid, origin_weights=ow, rim=rim, basis=None, scale=float(scale),
                 L=max(float(scale), L_s), L_hat=max(1.0 / scale, Lh_s), J=float(scale),
                 J_hat=1.0 / scale, L_exact=float(scale), L_hat_exact=1.0 / scale, L_sampled=L_s,
                 L_hat_sampled=Lh_s, jacobians=jac)


def _segment_origins(m, owner, P):
    T = m.coords[owner]
    e = T[:, 1] - T[:, 0]
    t = np.clip(np.einsum("ij,ij->i", P - T[:, 0], e) / np.einsum("ij,ij->i", e, e), 0, 1)
    t = np.where(t < 1e-14, 0.0, np.where(t > 1 - 1e-14, 1.0, t))
    return m.simplices[owner], np.stack([1 - t, t], axis=1)


def _segment_source(m, p, q):
    mid = 0.5 * (p + q)
    return int(np.argmin(point_simplex_distance(mid, m.coords)[0]))


def _polyline_points(P, tau, t):
    return np.stack([np.interp(t, tau, P[:, j]) for j in range(P.shape[1])], axis=1)


def _thin(a, limit, keep=()):
    if len(a) <= limit:
        return a
    idx = np.unique(np.concatenate([np.linspace(0, len(a) - 1, limit).round().astype(int),
                                    np.asarray(keep, int)]))
    return a[idx]


def _pair_distances(Y, U):
    i, j = np.triu_indices(len(Y), 1)
    dy = np.linalg.norm(Y[i] - Y[j], axis=1)
    du = np.linalg.norm(U[i] - U[j], axis=1)
    ok = (dy > 0) & (du > 0)
    return dy[ok], du[ok]


def _chart_surface(m, x, eps, scale, d, max_samples):
    cand = np.flatnonzero(d < eps)
    sub = SimplexMesh._unchecked(m.vertices, m.simplices[cand])
    parent = cand.copy()
    for _ in range(8):
        if sub.mesh_size <= eps / 4:
            break
        sub, info = refine(sub)
        parent = parent[info.parent_simplex]

    def f_fn(P):
        return np.linalg.norm(P - x, axis=-1) - eps

    cut, inside, info = _cut(sub, f_fn, lambda A, B: _sphere_root(A, B, x, eps))
    pieces = np.flatnonzero(inside)
    tri = cut.simplices[pieces]
    src = parent[info.parent_simplex[pieces]]
    comp = _piece_components(tri)
    home = int(np.argmin(point_simplex_distance(x, cut.vertices[tri])[0]))
    if np.any(comp != comp[home]):
        raise MeshError("disconnected patch: the ball meets the manifold twice",
                        int(src[np.flatnonzero(comp != comp[home])[0]]))
    used, tri = np.unique(tri, return_inverse=True)
    tri = tri.reshape(-1, 3)
    P = cut.vertices[used]
    patch = SimplexMesh(P, tri)
    loops = _boundary_loops(tri)
    n_edges = len(np.unique(np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), 1), axis=0))
    if len(loops) != 1 or len(P) - n_edges + len(tri) != 1:
        raise MeshError("patch is not a topological disk", int(src[0]))
    # plane direction from the centred second moment of the patch, placed
    # through x and oriented with the patch
    area = patch.volumes
    cen = np.einsum("m,mn->n", area, patch.centroids) / area.sum()
    A = patch.coords - cen
    ssum = A.sum(axis=1)
    M2 = np.einsum("m,mvi,mvj->ij", area / 12, A, A) + np.einsum("m,mi,mj->ij", area / 12, ssum, ssum)
    _, vec = np.linalg.eigh(M2)
    nrm = vec[:, 0]
    A = patch.coords - x
    tn = np.cross(A[:, 1] - A[:, 0], A[:, 2] - A[:, 0])
    if tn.sum(axis=0) @ nrm < 0:
        nrm = -nrm
    e1 = vec[:, 2]
    e2 = np.cross(nrm, e1)
    basis = np.stack([e1, e2])
    Q = (P - x) @ basis.T
    unit = tn / np.linalg.norm(tn, axis=1, keepdims=True)
    c = unit @ nrm
    if np.any(c <= 1e-12):
        raise MeshError("projection fold-over", int(src[np.argmin(c)]))
    slope = np.sqrt(np.clip(1 - c * c, 0, None)) / c
    if slope.max() > GRAPH_SLOPE_MAX:
        raise MeshError("gradient bound exceeded", int(src[np.argmax(slope)]))
    loop = loops[0]
    bsegs = np.stack([loop, np.roll(loop, -1)], 1)
    hit = _segment_intersections(Q[bsegs], bsegs)
    if hit[0] is not None:
        raise MeshError("projected patch boundary self-intersects", int(src[0]))
    # per-simplex affine maps param -> patch
    E3 = np.transpose(patch.coords[:, 1:] - patch.coords[:, :1], (0, 2, 1))
    Qc = Q[tri]
    E2 = np.transpose(Qc[:, 1:] - Qc[:, :1], (0, 2, 1))
    Amap = E3 @ np.linalg.inv(E2)
    sv = np.linalg.svd(Amap, compute_uv=False)
    L_x = float(sv[:, 0].max()) * scale
    Lh_x = float((1 / sv[:, 1]).max()) / scale
    jac = sv[:, 0] * sv[:, 1] * scale ** 2
    J = float(jac.max())
    J_hat = float((1 / jac).max())
    # sampled ratios over vertices, centroids and exact rim points
    rim_pts = _rim_points(patch, loop, x, eps)
    Ys = [x[None], _thin(P, max_samples), _thin(patch.centroids, max_samples // 2), _thin(rim_pts, max_samples // 2)]
    Y = np.concatenate(Ys)
    Us = (Y - x) @ basis.T
    dy, du = _pair_distances(Y, Us)
    L_s = float(np.max(dy / du)) * scale
    Lh_s = float(np.max(du / dy)) / scale
    rim = np.unique(loop)
    oid, ow = _origins(m, src, patch)
    return Chart(center=x, radius=eps, patch=patch, param=SimplexMesh(Q / scale, tri), source=src,
                 origin_ids=oid, origin_weights=ow, rim=rim, basis=basis, scale=float(scale),
                 L=max(L_x, L_s), L_hat=max(Lh_x, Lh_s), J=J, J_hat=J_hat,
                 L_exact=L_x, L_hat_exact=Lh_x, L_sampled=L_s, L_hat_sampled=Lh_s, jacobians=jac)


def _origins(m, src, patch):
    """Barycentric weights of each patch vertex in a manifold triangle."""
    nv = patch.n_vertices
    owner = np.full(nv, -1)
    owner[patch.simplices.ravel()] = np.repeat(src, 3)
    T = m.coords[owner]
    w = _barycentric(patch.vertices, T)
    w = np.where(np.abs(w) < 1e-14, 0.0, w)
    return m.simplices[owner], w


def _piece_components(tri):
    e = np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1)
    _, inv = np.unique(e, axis=0, return_inverse=True)
    inv = inv.ravel()
    owner = np.tile(np.arange(len(tri)), 3)
    F = sparse.csr_matrix((np.ones(len(inv)), (owner, inv)))
    A = F @ F.T
    _, lab = csgraph.connected_components(A, directed=False)
    return lab


def _boundary_loops(tri):
    directed = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    key = np.sort(directed, axis=1)
    _, inv, cnt = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    bd = directed[cnt[inv.ravel()] == 1]
    nxt = {}
    for a, b in bd:
        if int(a) in nxt:
            return [None, None]
        nxt[int(a)] = int(b)
    loops, seen = [], set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop, cur = [start], nxt[start]
        seen.add(start)
        while cur != start:
            if cur in seen or cur not in nxt:
                return [None, None]
            loop.append(cur)
            seen.add(cur)
            cur = nxt[cur]
        loops.append(np.array(loop))
    return loops


def _rim_points(patch, loop, x, eps):
    """Points of the exact sphere/manifold intersection between rim vertices."""
    V = patch.vertices
    tri = patch.simplices
    edge_owner = {}
    for t, (a, b, c) in enumerate(tri):
        for p, q in ((a, b), (b, c), (c, a)):
            edge_owner[(int(p), int(q))] = t
    out = [V[loop]]
    t = np.linspace(0, 1, RIM_SAMPLES + 1)[1:-1]
    for a, b in zip(loop, np.roll(loop, -1)):
        T = patch.coords[edge_owner[(int(a), int(b))]]
        nrm = np.cross(T[1] - T[0], T[2] - T[0])
        nrm /= np.linalg.norm(nrm)
        c0 = x - ((x - T[0]) @ nrm) * nrm
        rho = np.sqrt(max(eps * eps - float(np.sum((x - c0) ** 2)), 0.0))
        w = (1 - t)[:, None] * (V[a] - c0) + t[:, None] * (V[b] - c0)
        ln = np.linalg.norm(w, axis=1, keepdims=True)
        out.append(c0 + rho * w / np.where(ln > 0, ln, 1))
    return np.concatenate(out)


# ---------------------------------------------------------------------------
# epsilon selection and constants

def select_epsilon(m, j_max=20):
    """Largest ``diam(m) * 2**-j`` for which a chart exists at every vertex."""
    diam = m.diameter
    used = np.unique(m.simplices)
    for j in range(1, j_max + 1):
        eps = diam * 2.0 ** -j
        try:
            for v in used:
                build_chart(m, m.vertices[v], eps, max_samples=64)
        except MeshError:
            continue
        return eps
    raise MeshError("manifold too irregular at mesh scale")


@dataclass(frozen=True)
class ChartConstants:
    """Suprema of the per-chart constants over a chart family."""

    L: float
    L_hat: float
    J: float
    J_hat: float
    n_charts: int = 0

    def row(self):
        return {"L": self.L, "L_hat": self.L_hat, "J": self.J, "J_hat": self.J_hat,
                "n_charts": self.n_charts}


def estimate_constants(charts) -> ChartConstants:
    charts = list(charts)
    if not charts:
        raise ValueError("no charts given")
    return ChartConstants(L=max(c.L for c in charts), L_hat=max(c.L_hat for c in charts),
                          J=max(c.J for c in charts), J_hat=max(c.J_hat for c in charts),
                          n_charts=len(charts))


@dataclass(frozen=True)
class InclusionReport:
    inner_ok: bool
    outer_ok: bool
    inner_margin: float
    outer_margin: float


def _domain_boundary(chart):
    """Parameter points on the boundary of the exact chart domain."""
    if chart.basis is None:
        return chart.param.vertices[chart.rim]
    loop = _boundary_loops(chart.patch.simplices)[0]
    pts = _rim_points(chart.patch, loop, chart.center, chart.radius)
    return chart.inverse(pts)


def verify_inclusions(chart, L=None, L_hat=None) -> InclusionReport:
    """Check ``B(0, eps/L) ⊆ U ⊆ B(0, eps*L_hat)`` on boundary samples of U."""
    L = chart.L if L is None else float(L)
    L_hat = chart.L_hat if L_hat is None else float(L_hat)
    r = np.linalg.norm(_domain_boundary(chart), axis=1)
    tol = 1e-12 * chart.radius * max(L_hat, 1 / L)
    inner = float(r.min() - chart.radius / L)
    outer = float(chart.radius * L_hat - r.max())
    return InclusionReport(inner >= -tol, outer >= -tol, inner, outer)


# ---------------------------------------------------------------------------
# dilation study

def scaling_study(m, region, lambdas, eps=None, centers=None):
    """Chart constants over the dilation family ``dilate(m, lam)``.

    Charts sit at the boundary points of ``region`` (or at ``centers``) with
    radius ``lam * eps``.  ``normalized`` rows use the reference-domain
    convention ``t_lam = lam * t``; ``raw`` rows rebuild native charts, whose
    constants are scale-free.  Also reported: the factor ``lam_ref`` that
    rescales the dilated region to unit measure.
    """
    from .geometry import dilate, measure

    if eps is None:
        eps = select_epsilon(m)
    if centers is None:
        centers = region.boundary_points
        if region.k == 2:
            centers = _thin(centers, 8)
    centers = np.atleast_2d(np.asarray(centers, float))
    base = region.manifold
    rows = []
    for lam in lambdas:
        if not lam > 0:
            raise ValueError(f"dilation factor must be positive, got {lam}")
        ml = dilate(base, lam)
        area = measure(Region(ml, region.mask, region.boundary))
        try:
            norm = [build_chart(ml, lam * c, lam * eps, scale=lam) for c in centers]
            raw = [build_chart(ml, lam * c, lam * eps) for c in centers]
        except MeshError as err:
            raise MeshError(f"chart build failed at lambda={lam}: {err}", err.index) from err
        cn, cr = estimate_constants(norm), estimate_constants(raw)
        incl = [verify_inclusions(c) for c in norm + raw]
        rows.append({"lambda": float(lam), "measure": area, "L": cn.L, "L_hat": cn.L_hat,
                     "J": cn.J, "J_hat": cn.J_hat, "raw_L": cr.L, "raw_L_hat": cr.L_hat,
                     "raw_J": cr.J, "raw_J_hat": cr.J_hat,
                     "lam_ref": area ** (-1.0 / region.k),
                     "min_inner_margin": min(r.inner_margin for r in incl),
                     "min_outer_margin": min(r.outer_margin for r in incl),
                     "inclusions_ok": all(r.inner_ok and r.outer_ok for r in incl)})
    return rows


def fit_slopes(rows, keys=("L", "L_hat", "J", "J_hat"), x="measure"):
    """Least-squares slopes of log(row[key]) against log(row[x])."""
    lx = np.log([r[x] for r in rows])
    out = {}
    for key in keys:
        ly = np.log([r[key] for r in rows])
        out[key] = float(np.polyfit(lx, ly, 1)[0])
    return out


# ---------------------------------------------------------------------------
# boundary cover and partition of unity

NORMALIZATION_FLOOR = 0.25


@dataclass(frozen=True, eq=False)
class BoundaryCover:
    """Balls ``B(x_i, eps)`` centred on the boundary plus the interior patch.

    ``collar`` is the width, as a fraction of ``eps``, of the boundary strip
    where the interior bump vanishes.
    """

    region: Region
    eps: float
    centers: np.ndarray
    collar: float = 0.25
    min_sum: float = field(default=np.nan)

    @property
    def n_balls(self):
        return len(self.centers)

    def bumps(self, points, in_region):
        """Unnormalized bumps ``(N+1, q)``: row 0 is the interior bump."""
        P = np.atleast_2d(np.asarray(points, float))
        out = np.empty((self.n_balls + 1, len(P)))
        dist = dist_to_set(P, (self.region, "boundary"))
        c = self.collar * self.eps
        out[0] = np.where(in_region, np.clip(dist / c - 1.0, 0.0, 1.0), 0.0)
        r = np.linalg.norm(P[None, :, :] - self.centers[:, None, :], axis=2)
        out[1:] = np.maximum(0.0, 1.0 - r / self.eps)
        return out

    def cutoffs(self, points, in_region):
        d = self.bumps(points, in_region)
        return d / np.maximum(d.sum(axis=0), NORMALIZATION_FLOOR)


def _boundary_samples(region, spacing):
    pts = []
    for loop in region.boundary:
        P = region.manifold.vertices[loop]
        Q = np.roll(P, -1, axis=0)
        for a, b in zip(P, Q):
            n = max(1, int(np.ceil(np.linalg.norm(b - a) / spacing)))
            t = np.arange(n)[:, None] / n
            pts.append(a + t * (b - a))
    return np.concatenate(pts)


def _closure_nodes(region, order=3):
    m = region.manifold
    ids = region.simplex_ids
    bary, _ = simplex_rule(m.k, order)
    X = m.coords[ids]
    q = np.einsum("qv,mvn->mqn", bary, X).reshape(-1, m.n)
    return np.concatenate([m.vertices[region.vertex_ids], q])


def build_cover(region, eps, collar=0.25):
    """Boundary cover of ``region`` by ``eps``-balls centred on an ``eps/4``-net."""
    eps = float(eps)
    if not eps > 0:
        raise ValueError("cover radius must be positive")
    if not region.boundary:
        raise MeshError("region has no boundary")
    if region.k == 1:
        centers = region.boundary_points.copy()
    else:
        S = _boundary_samples(region, eps / 32)
        target = 7 * eps / 32
        chosen = [0]
        dmin = np.linalg.norm(S - S[0], axis=1)
        while dmin.max() > target:
            j = int(np.argmax(dmin))
            chosen.append(j)
            dmin = np.minimum(dmin, np.linalg.norm(S - S[j], axis=1))
        centers = S[np.array(chosen)]
    cover = BoundaryCover(region, eps, centers, collar)
    nodes = _closure_nodes(region)
    total = cover.bumps(nodes, np.ones(len(nodes), bool)).sum(axis=0)
    bad = np.flatnonzero(total < NORMALIZATION_FLOOR * (1 - 1e-12))
    if bad.size:
        raise MeshError(f"covering check failed at node {nodes[bad[0]].tolist()} "
                        f"(bump sum {total[bad[0]]:.3g})", int(bad[0]))
    return BoundaryCover(region, eps, centers, collar, float(total.min()))


@dataclass(frozen=True, eq=False)
class PartitionOfUnity:
    """Cutoffs ``psi_0..psi_N`` as PL fields on the whole manifold."""

    cover: BoundaryCover
    fields: list
    lipschitz: np.ndarray

    def __len__(self):
        return len(self.fields)


def partition_of_unity(cover, mesh=None, in_region=None) -> PartitionOfUnity:
    """Cutoffs sampled at the vertices of ``mesh`` (default: the region's manifold).

    ``in_region`` flags the vertices of ``mesh`` lying in the closure of the
    region; it defaults to the region's own vertex mask.
    """
    region = cover.region
    mesh = region.manifold if mesh is None else mesh
    if in_region is None:
        if mesh is not region.manifold:
            raise ValueError("in_region is required for a mesh other than the region's")
        in_region = region.vertex_mask
    psi = cover.cutoffs(mesh.vertices, np.asarray(in_region, bool))
    fields = [ScalarField(mesh, row) for row in psi]
    lips = np.array([pl_lipschitz(mesh, row) for row in psi])
    return PartitionOfUnity(cover, fields, lips)


def pl_lipschitz(mesh, values):
    """Lipschitz constant of a PL field w.r.t. ambient distance.

    Maximum of the exact per-simplex gradient norm and the vertex-pair
    difference quotients (the latter matter where the manifold folds back).
    """
    v = np.asarray(values, float)
    X = mesh.coords
    E = X[:, 1:] - X[:, :1]
    dv = v[mesh.simplices[:, 1:]] - v[mesh.simplices[:, :1]]
    G = np.einsum("mik,mjk->mij", E, E)
    coef = np.linalg.solve(G, dv[..., None])[..., 0]
    grad = np.einsum("mi,mik->mk", coef, E)
    best = float(np.linalg.norm(grad, axis=1).max())
    used = np.unique(mesh.simplices)
    live = used[v[used] != 0]
    if len(live) == 0:
        return best
    P = mesh.vertices
    for lo in range(0, len(live), 512):
        a = live[lo:lo + 512]
        r = np.linalg.norm(P[a][:, None] - P[used][None], axis=2)
        q = np.abs(v[a][:, None] - v[used][None])
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(r > 0, q / r, 0.0)
        best = max(best, float(ratio.max()))
    return best


def write_chart_csv(charts, path, margins=True):
    """One diagnostic row per chart."""
    rows = []
    for c in charts:
        r = c.row()
        if margins:
            inc = verify_inclusions(c)
            r.update(inner_margin=inc.inner_margin, outer_margin=inc.outer_margin)
        rows.append(r)
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
