"""
Zero extension, truncation, chart extension by reflection, and the composite
extension operator from a region to the whole manifold.

Each building block returns the extended field together with
:class:`LemmaCheck` records: the two sides of the inequality it is supposed
to satisfy, evaluated with measured constants and the quadrature error
estimate as margin.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .atlas import GRAPH_SLOPE_MAX, build_chart, build_cover, pl_lipschitz, select_epsilon
from .geometry import (
    MeshError,
    Region,
    SimplexMesh,
    measure,
    refine,
    refine_segments,
    region_from_mask,
    set_distance,
)
from .quadrature import ball_potential, cross_integral, pair_integral, simplex_rule
from .sobolev import ScalarField, SobolevParams, domain_parts, lp_power

__all__ = [
    "LemmaCheck",
    "ChartExtension",
    "ExtensionReport",
    "ExtensionResult",
    "zero_extend",
    "truncate",
    "chart_extend",
    "extend",
    "extension_norms",
    "ratio_study",
    "omega_constant",
    "prepare_mesh",
]


@dataclass(frozen=True)
class LemmaCheck:
    """One inequality ``lhs <= rhs`` checked as ``lhs - margin <= rhs``.

    ``applicable`` is False when the inequality's hypotheses are not met, in
    which case ``holds`` is still reported but carries no claim.
    """

    name: str
    lhs: float
    rhs: float
    margin: float = 0.0
    applicable: bool = True
    detail: dict = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        return bool(np.isfinite(self.lhs) and self.lhs - self.margin <= self.rhs)

    @property
    def ratio(self) -> float:
        if self.rhs > 0:
            return self.lhs / self.rhs
        return 0.0 if self.lhs <= 0 else math.inf

    def row(self):
        out = {"check": self.name, "lhs": self.lhs, "rhs": self.rhs, "margin": self.margin,
               "ratio": self.ratio, "holds": self.holds, "applicable": self.applicable}
        out.update(self.detail)
        return out


def _params(params, s, p):
    if params is not None:
        return params
    if s is None:
        raise ValueError("missing smoothness parameter s")
    return SobolevParams(s, 2.0 if p is None else p)


def _pair_power(mesh, ids, values, params, quad):
    """(powers, errors) of the seminorm for one or several vertex-value arrays."""
    vals = np.atleast_2d(values)
    if len(ids) == 0:
        z = np.zeros(len(vals))
        return z, z
    U = np.stack([v[mesh.simplices[ids]] for v in vals], axis=-1)
    res = pair_integral(mesh.coords[ids], mesh.simplices[ids], U, params.s, params.p, quad)
    return np.maximum(res.value, 0.0), res.error


def _lp_values(mesh, ids, values, p):
    if len(ids) == 0:
        return 0.0
    return lp_power(ScalarField(SimplexMesh(mesh.vertices, mesh.simplices[ids]), _finite(values, mesh, ids)), p=p)


def _finite(values, mesh, ids):
    """Copy of ``values`` with entries outside the simplices ``ids`` set to NaN."""
    out = np.full(mesh.n_vertices, np.nan)
    used = np.unique(mesh.simplices[ids])
    out[used] = np.asarray(values, float)[used]
    return out


# ---------------------------------------------------------------------------
# zero extension

def zero_extend(u, support, params=None, quad=None, *, s=None, p=None, both_ways=True):
    """Extend ``u`` (a field on a region) by zero to the whole manifold.

    ``support`` is a region or simplex mask ``K`` of the same manifold with
    ``u = 0`` on the rest of the region.  Returns ``(u_star, checks)``.
    """
    params = _params(params, s, p)
    omega = u.domain
    if not isinstance(omega, Region):
        raise TypeError("zero_extend needs a field on a Region")
    M = omega.manifold
    kmask = support.mask if isinstance(support, Region) else np.asarray(support, bool)
    if kmask.shape != omega.mask.shape:
        raise MeshError("support lives on a different mesh")
    if np.any(kmask & ~omega.mask):
        raise MeshError("support is not contained in the region")
    rest = omega.mask & ~kmask
    if rest.any():
        rv = np.unique(M.simplices[rest])
        bad = rv[np.abs(u.values[rv]) > 1e-12]
        if bad.size:
            raise MeshError("field does not vanish outside the support", int(bad[0]))
    values = np.where(omega.vertex_mask, u.values, 0.0)
    ustar = ScalarField(M, values)
    checks = []
    kids = np.flatnonzero(kmask)
    cids = np.flatnonzero(~omega.mask)
    if len(kids) == 0:
        checks.append(LemmaCheck("zero_extension_cross", 0.0, 0.0))
        return ustar, checks
    dist = set_distance(M.subset(cids), M.subset(kids))
    if dist <= 0:
        raise MeshError("support touches the complement of the region")
    k, sp = M.k, params.s * params.p
    lp_u = lp_power(u, p=params.p)
    zeros = np.zeros((len(cids), k + 1))
    cr = cross_integral(M.coords[kids], values[M.simplices[kids]], M.coords[cids], zeros,
                        params.s, params.p, quad)
    cross, cross_err = 2 * float(cr.value), 2 * float(cr.error)
    rhs = 2 * float(M.volumes[cids].sum()) * dist ** -(k + sp) * lp_u
    detail = {"dist": dist, "complement_measure": float(M.volumes[cids].sum())}
    if both_ways:
        allm = np.arange(M.n_simplices)
        full, ferr = _pair_power(M, allm, values, params, quad)
        part, perr = _pair_power(M, omega.simplex_ids, values, params, quad)
        indirect = float(full[0] - part[0])
        detail.update(cross_indirect=indirect,
                      cross_rel_diff=abs(indirect - cross) / max(abs(cross), 1e-300),
                      semi_star=float(full[0]), semi_u=float(part[0]))
    checks.append(LemmaCheck("zero_extension_cross", cross, rhs, cross_err, True, detail))
    lp_star = lp_power(ustar, p=params.p)
    checks.append(LemmaCheck("zero_extension_lp", lp_star, lp_u, 1e-12 * lp_u, True,
                             {"identity_gap": abs(lp_star - lp_u)}))
    return ustar, checks


# ---------------------------------------------------------------------------
# truncation

def _refined_domain(domain, levels):
    mesh, ids = domain_parts(domain)
    mask = np.zeros(mesh.n_simplices, bool)
    mask[ids] = True
    infos = []
    for _ in range(levels):
        mesh, info = refine(mesh)
        mask = mask[info.parent_simplex]
        infos.append(info)
    return mesh, np.flatnonzero(mask), infos


def _transfer(infos, values):
    v = np.asarray(values, float)
    for info in infos:
        a, b = info.vertex_parents[:, 0], info.vertex_parents[:, 1]
        w = info.weights
        with np.errstate(invalid="ignore"):
            v = np.where(w == 0, v[a], (1 - w) * v[a] + w * v[b])
    return v


def truncate(u, psi, eps, params=None, quad=None, *, s=None, p=None, levels=1,
             lipschitz=None, check=True):
    """Product ``psi * u`` re-sampled as a PL field after ``levels`` refinements.

    Returns ``(product, checks)``; the product lives on the refined mesh with
    the refined domain.  ``eps`` is the near/far split radius of the
    seminorm bound.
    """
    params = _params(params, s, p)
    mesh, ids = domain_parts(u.domain)
    if psi.mesh is not mesh:
        raise MeshError("cutoff and field live on different meshes")
    used = np.unique(mesh.simplices[ids])
    pv = psi.values[used]
    if not np.all(np.isfinite(pv)):
        raise MeshError("cutoff is not defined on the field's domain", int(used[~np.isfinite(pv)][0]))
    if pv.min() < -1e-12 or pv.max() > 1 + 1e-12:
        raise MeshError("cutoff takes values outside [0, 1]")
    rmesh, rids, infos = _refined_domain(u.domain, levels)
    ur = _transfer(infos, _finite(u.values, mesh, ids))
    pr = _transfer(infos, _finite(psi.values, mesh, ids))
    prod = ur * pr
    if isinstance(u.domain, Region):
        rmask = np.zeros(rmesh.n_simplices, bool)
        rmask[rids] = True
        dom = region_from_mask(rmesh, rmask, validate=False)
    else:
        dom = rmesh if len(rids) == rmesh.n_simplices else SimplexMesh(rmesh.vertices, rmesh.simplices[rids])
    w = ScalarField(dom, prod)
    if not check:
        return w, []
    L_psi = pl_lipschitz(SimplexMesh(mesh.vertices, mesh.simplices[ids]), _finite(psi.values, mesh, ids)) \
        if lipschitz is None else float(lipschitz)
    k, P = mesh.k, params.p
    order = max(3, int(math.ceil(P)) + 1)
    bary, wq = simplex_rule(k, order)
    X = rmesh.coords[rids]
    vol = rmesh.volumes[rids]
    uq = ur[rmesh.simplices[rids]] @ bary.T
    pq = pr[rmesh.simplices[rids]] @ bary.T
    wts = vol[:, None] * wq[None]
    lp_exact = float(np.sum(wts * np.abs(uq * pq) ** P))
    lp_u = float(np.sum(wts * np.abs(uq) ** P))
    lp_pl = _lp_values(rmesh, rids, prod, P)
    checks = [LemmaCheck("truncation_lp", lp_exact, lp_u, 1e-12 * lp_u, True,
                         {"lp_resampled": lp_pl, "resample_gap": lp_pl - lp_exact, "levels": levels})]
    sem, err = _pair_power(rmesh, rids, np.stack([prod, ur]), params, quad)
    beta = k + params.s * P - P
    b3, w3 = simplex_rule(k, 3)
    Y = np.einsum("qv,mvn->mqn", b3, X).reshape(-1, rmesh.n)
    uy = np.abs(ur[rmesh.simplices[rids]] @ b3.T).ravel() ** P
    wy = (vol[:, None] * w3[None]).ravel()
    near, far = ball_potential(Y, X, beta, eps)
    near_t = float(np.sum(wy * uy * near))
    far_t = float(np.sum(wy * uy * far))
    c = 2.0 ** (P - 1)
    rhs = c * (float(sem[1]) + L_psi ** P * (near_t + far_t))
    checks.append(LemmaCheck("truncation_split", float(sem[0]), rhs, float(err[0] + c * err[1]), True,
                             {"L_psi": L_psi, "near": near_t, "far": far_t, "semi_u": float(sem[1]),
                              "eps": float(eps)}))
    area = float(vol.sum())
    expo = k + (params.s - 1) * P
    far_bound = area * eps ** (-expo) * lp_u
    checks.append(LemmaCheck("truncation_far", far_t, far_bound, 1e-9 * far_t, expo >= 0,
                             {"exponent": expo, "eps": float(eps)}))
    return w, checks


# ---------------------------------------------------------------------------
# chart extension

@dataclass(eq=False)
class ChartExtension:
    """Reflection extension of a field across the region boundary in one chart."""

    chart: object
    omega_piece: np.ndarray
    values: np.ndarray
    flagged: np.ndarray
    reflect: object
    inside_value: object
    checks: list = field(default_factory=list)

    def evaluate(self, points, in_omega, omega_values):
        """Extended values at ambient points of the chart ball.

        Points of the region take ``omega_values``; the others are mapped to
        parameter space, reflected, and evaluated on the region side.
        Returns ``(values, flagged)``.
        """
        P = np.atleast_2d(np.asarray(points, float))
        out = np.array(omega_values, float, copy=True)
        flags = np.zeros(len(P), bool)
        off = ~np.asarray(in_omega, bool)
        if off.any():
            q = self.chart.inverse(P[off])
            vals, fl = self.inside_value(self.reflect(q))
            out[off] = vals
            flags[off] = fl
        return out, flags


def _graph_1d(chart, omega_piece, vals):
    tau = chart.param.vertices[:, 0]
    cen = chart.param.centroids[:, 0]
    side = np.sign(np.mean(cen[omega_piece]))
    if not (np.all(cen[omega_piece] * side > 0) and np.all(cen[~omega_piece] * side < 0)):
        raise MeshError("region is not a graph domain in this chart", int(chart.source[0]))
    om = np.unique(chart.param.simplices[omega_piece])
    order = np.argsort(tau[om])
    t_om, v_om = tau[om][order], vals[om][order]
    lo, hi = t_om[0], t_om[-1]
    tol = 1e-12 * max(abs(lo), abs(hi))

    def reflect(q):
        return -q

    def inside_value(q):
        t = q[:, 0]
        return np.interp(t, t_om, v_om), (t < lo - tol) | (t > hi + tol)

    return reflect, inside_value


def _interface_chain(tri, omega_piece):
    e = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    key = np.sort(e, axis=1)
    owner = np.tile(np.arange(len(tri)), 3)
    keys, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.ravel()
    n_om = np.bincount(inv, weights=omega_piece[owner].astype(float), minlength=len(keys))
    n_all = np.bincount(inv, minlength=len(keys))
    iface = keys[(n_all == 2) & (n_om == 1)]
    if len(iface) == 0:
        return None
    nbr = {}
    for a, b in iface:
        nbr.setdefault(int(a), []).append(int(b))
        nbr.setdefault(int(b), []).append(int(a))
    ends = [v for v, n in nbr.items() if len(n) == 1]
    if any(len(n) > 2 for n in nbr.values()) or len(ends) != 2:
        return None
    chain = [min(ends)]
    prev = -1
    while True:
        nxt = [v for v in nbr[chain[-1]] if v != prev]
        if not nxt:
            break
        prev = chain[-1]
        chain.append(nxt[0])
    if len(chain) != len(nbr):
        return None
    return np.array(chain)


class _TriangleLocator:
    """Exact point location among planar triangles via a centroid KD-tree."""

    def __init__(self, coords, tol=1e-9):
        self.T = coords
        self.tol = tol
        cen = coords.mean(axis=1)
        self.radius = float(np.max(np.linalg.norm(coords - cen[:, None], axis=2))) * (1 + 1e-9)
        self.tree = cKDTree(cen)

    def __call__(self, P):
        P = np.atleast_2d(P)
        lists = self.tree.query_ball_point(P, self.radius)
        counts = np.fromiter((len(x) for x in lists), np.int64, len(P))
        idx = np.full(len(P), -1)
        bary = np.zeros((len(P), 3))
        if counts.sum() == 0:
            return idx, bary
        rows = np.repeat(np.arange(len(P)), counts)
        cand = np.fromiter((j for x in lists for j in x), np.int64, int(counts.sum()))
        T = self.T[cand]
        a, v0, v1 = T[:, 0], T[:, 1] - T[:, 0], T[:, 2] - T[:, 0]
        v2 = P[rows] - a
        det = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
        l1 = (v2[:, 0] * v1[:, 1] - v2[:, 1] * v1[:, 0]) / det
        l2 = (v0[:, 0] * v2[:, 1] - v0[:, 1] * v2[:, 0]) / det
        B = np.stack([1 - l1 - l2, l1, l2], axis=1)
        score = B.min(axis=1)
        # best candidate per point: sort by (row, -score) and take the first
        order = np.lexsort((-score, rows))
        first = order[np.r_[0, np.flatnonzero(np.diff(rows[order])) + 1]]
        ok = score[first] >= -self.tol
        sel = first[ok]
        idx[rows[sel]] = cand[sel]
        bary[rows[sel]] = B[sel]
        return idx, bary


def _graph_2d(chart, omega_piece, vals):
    Q = chart.param.vertices
    tri = chart.param.simplices
    chain = _interface_chain(tri, omega_piece)
    if chain is None:
        raise MeshError("region boundary inside the chart is not a simple arc", int(chart.source[0]))
    C = Q[chain]
    _, _, vt = np.linalg.svd(C - C.mean(axis=0))
    R = vt if np.linalg.det(vt) > 0 else vt * np.array([[1.0], [-1.0]])
    xi, eta = (C @ R.T).T
    dx = np.diff(xi)
    if not (np.all(dx > 0) or np.all(dx < 0)):
        raise MeshError("region boundary is not a graph in the chart", int(chart.source[0]))
    if np.max(np.abs(np.diff(eta) / dx)) > GRAPH_SLOPE_MAX:
        raise MeshError("region boundary is too steep in the chart", int(chart.source[0]))
    order = np.argsort(xi)
    xs, es = xi[order], eta[order]

    def gamma(x):
        return np.interp(x, xs, es)

    def side_of(P):
        r = P @ R.T
        return r[:, 1] - gamma(r[:, 0])

    cen = chart.param.centroids
    sd = side_of(cen)
    sgn = np.sign(np.median(sd[omega_piece]))
    if not (np.all(sd[omega_piece] * sgn > 0) and np.all(sd[~omega_piece] * sgn < 0)):
        raise MeshError("region is not a graph domain in this chart", int(chart.source[0]))
    om_coords = chart.param.coords[omega_piece]
    om_simp = tri[omega_piece]

    def reflect(q):
        r = q @ R.T
        r = np.stack([r[:, 0], 2 * gamma(r[:, 0]) - r[:, 1]], axis=1)
        return r @ R

    locate = _TriangleLocator(om_coords)

    def inside_value(q):
        idx, bary = locate(q)
        out = np.empty(len(q))
        ok = idx >= 0
        out[ok] = np.sum(vals[om_simp[idx[ok]]] * bary[ok], axis=1)
        bad = np.flatnonzero(~ok)
        if bad.size:
            # walk back along the reflection ray towards the boundary curve
            r = q[bad] @ R.T
            foot = np.stack([r[:, 0], gamma(r[:, 0])], axis=1) @ R
            lo_, hi_ = np.zeros(len(bad)), np.ones(len(bad))
            for _ in range(30):
                mid = 0.5 * (lo_ + hi_)
                trial = foot + mid[:, None] * (q[bad] - foot)
                inside = locate(trial)[0] >= 0
                lo_ = np.where(inside, mid, lo_)
                hi_ = np.where(inside, hi_, mid)
            lam = lo_
            pts = foot + lam[:, None] * (q[bad] - foot)
            j, b = locate(pts)
            miss = j < 0
            val = np.where(miss, 0.0, np.sum(vals[om_simp[np.maximum(j, 0)]] * b, axis=1))
            if miss.any():
                om_v = np.unique(om_simp)
                d = np.linalg.norm(q[bad][miss][:, None] - Q[om_v][None], axis=2)
                val[miss] = vals[om_v[np.argmin(d, axis=1)]]
            out[bad] = val
        return out, ~ok

    return reflect, inside_value


def _chart_values(chart, u):
    """Values of ``u`` at patch vertices, ignoring zero-weight (possibly NaN) entries."""
    return chart.transfer(u.values)


def chart_extend(u, chart, region, params=None, quad=None, *, s=None, p=None, check=True):
    """Reflection extension of ``u`` from ``B ∩ region`` to ``B ∩ M`` in ``chart``.

    The chart must be built on ``region.manifold`` and centred on the region
    boundary.  Pull back, reflect across the boundary graph in parameter
    space, push forward.
    """
    omega_piece = region.mask[chart.source]
    if omega_piece.all() or not omega_piece.any():
        raise MeshError("chart ball does not straddle the region boundary")
    base = _chart_values(chart, u)
    om_v = np.unique(chart.param.simplices[omega_piece])
    vals = np.full(chart.param.n_vertices, np.nan)
    vals[om_v] = base[om_v]
    if chart.k == 1:
        reflect, inside_value = _graph_1d(chart, omega_piece, vals)
    else:
        reflect, inside_value = _graph_2d(chart, omega_piece, vals)
    other = np.setdiff1d(np.arange(chart.param.n_vertices), om_v)
    flagged = np.zeros(chart.param.n_vertices, bool)
    if other.size:
        ov, fl = inside_value(reflect(chart.param.vertices[other]))
        vals[other] = ov
        flagged[other] = fl
    ext = ChartExtension(chart, omega_piece, vals, flagged, reflect, inside_value)
    if check:
        params = _params(params, s, p)
        ext.checks = _transport_checks(chart, omega_piece, vals, params, quad)
    return ext


def _transport_checks(chart, omega_piece, vals, params, quad):
    k, P = chart.k, params.p
    kp = k + params.s * P
    om = np.flatnonzero(omega_piece)
    allp = np.arange(chart.param.n_simplices)
    lp_v = _lp_values(chart.param, om, vals, P)
    lp_u = _lp_values(chart.patch, om, vals, P)
    lp_vb = _lp_values(chart.param, allp, vals, P)
    lp_ub = _lp_values(chart.patch, allp, vals, P)
    sv, ev = _pair_power(chart.param, om, vals, params, quad)
    su, eu = _pair_power(chart.patch, om, vals, params, quad)
    svb, evb = _pair_power(chart.param, allp, vals, params, quad)
    sub, eub = _pair_power(chart.patch, allp, vals, params, quad)
    L, Lh, J, Jh = chart.L, chart.L_hat, chart.J, chart.J_hat
    consts = {"L": L, "L_hat": Lh, "J": J, "J_hat": Jh, "eps": chart.radius}
    c_sem = L ** kp * Jh ** 2
    c_rev = J ** 2 * Lh ** kp
    norm_u = (lp_u + su[0]) ** (1 / P)
    norm_ub = (lp_ub + sub[0]) ** (1 / P)
    C = norm_ub / norm_u if norm_u > 0 else 0.0
    return [
        LemmaCheck("transport_lp", lp_v, Jh * lp_u, 1e-12 * lp_v, True, dict(consts)),
        LemmaCheck("transport_semi", float(sv[0]), c_sem * float(su[0]), float(ev[0] + c_sem * eu[0]),
                   True, dict(consts)),
        LemmaCheck("transport_lp_reverse", lp_ub, J * lp_vb, 1e-12 * lp_ub, True, dict(consts)),
        LemmaCheck("transport_semi_reverse", float(sub[0]), c_rev * float(svb[0]),
                   float(eub[0] + c_rev * evb[0]), True, dict(consts, extension_constant=C)),
    ]


# ---------------------------------------------------------------------------
# common mesh

def prepare_mesh(region, eps, levels=1, grading=0.5, near=2.0):
    """Refine ``region.manifold`` so simplices within ``near*eps`` of the region
    have diameter at most ``eps/8`` after ``levels`` final uniform refinements.

    Polylines are refined geometrically away from the region; surfaces
    uniformly.  Returns ``(region_c, infos)`` where ``infos`` carries vertex
    values from the original manifold (see :func:`transfer_values`).
    """
    m, mask = region.manifold, region.mask.copy()
    infos = []
    h_pre = eps / 8 * 2 ** levels
    if m.k == 1:
        from .geometry import dist_to_set

        for _ in range(64):
            om = SimplexMesh(m.vertices, m.simplices[mask])
            C = m.coords
            length = m.volumes
            mid = C.mean(axis=1)
            d = np.maximum(dist_to_set(mid, om) - length / 2, 0.0)
            allowed = np.maximum(h_pre, grading * np.maximum(d - near * eps, 0.0))
            split = length > allowed
            if not split.any():
                break
            m, info = refine_segments(m, np.where(split, 2, 1))
            mask = mask[info.parent_simplex]
            infos.append(info)
    else:
        while m.mesh_size > h_pre:
            m, info = refine(m)
            mask = mask[info.parent_simplex]
            infos.append(info)
    for _ in range(levels):
        m, info = refine(m)
        mask = mask[info.parent_simplex]
        infos.append(info)
    return region_from_mask(m, mask, validate=False), infos


def transfer_values(infos, values):
    return _transfer(infos, values)


# ---------------------------------------------------------------------------
# composite operator

def omega_constant(area, k, s, p):
    """``1 + |w|^(-sp/k) + |w|^((1-s)p/k)``."""
    return 1.0 + area ** (-s * p / k) + area ** ((1 - s) * p / k)


@dataclass
class ExtensionReport:
    measure: float
    k: int
    eps: float
    eps_cutoff: float
    collar: float
    n_balls: int
    n_vertices: int
    residual: float
    flagged: int
    flagged_fraction: float
    support_ok: bool
    checks: list = field(default_factory=list)
    norms: dict = field(default_factory=dict)

    def row(self):
        out = {"measure": self.measure, "k": self.k, "eps": self.eps, "eps_cutoff": self.eps_cutoff,
               "collar": self.collar, "n_balls": self.n_balls, "n_vertices": self.n_vertices,
               "residual": self.residual, "flagged": self.flagged,
               "flagged_fraction": self.flagged_fraction, "support_ok": self.support_ok}
        out.update(self.norms)
        return out


@dataclass(eq=False)
class ExtensionResult:
    field: ScalarField
    report: ExtensionReport
    region: Region
    u: ScalarField
    cover: object
    charts: list
    pieces: np.ndarray


def extend(u, params=None, quad=None, *, s=None, p=None, eps=None, eps_manifold=None, rho=0.25,
           levels=1, collar=0.25, norms=True, checks=True, check_charts=2, max_check_simplices=1500):
    """Extension of the field ``u`` (on a region) to the whole manifold.

    ``Eu = sum_i w_i`` with ``w_0 = psi_0 u`` extended by zero and
    ``w_i = psi_i * (reflection extension of u in chart i)``.  All pieces live
    on a common refinement of the region's manifold.

    ``eps`` defaults to ``min(eps_manifold, rho * |w|^(1/k))`` where
    ``eps_manifold`` defaults to :func:`select_epsilon` of the manifold.
    """
    omega = u.domain
    if not isinstance(omega, Region):
        raise TypeError("extend needs a field on a Region")
    k = omega.k
    area = measure(omega)
    if eps is None:
        if eps_manifold is None:
            eps_manifold = select_epsilon(omega.manifold)
        eps = min(eps_manifold, rho * area ** (1.0 / k))
    try:
        region_c, infos = prepare_mesh(omega, eps, levels)
    except MeshError as err:
        raise MeshError(f"common refinement: {err}") from err
    M = region_c.manifold
    uc = transfer_values(infos, np.where(omega.vertex_mask, u.values, np.nan))
    u_c = ScalarField(region_c, uc)
    vm = region_c.vertex_mask
    h_loc = _local_mesh_size(region_c, eps)
    eps_cut = eps - h_loc
    if eps_cut < 0.5 * eps:
        raise MeshError("common refinement too coarse for the cover radius")
    try:
        cover = build_cover(region_c, eps_cut, collar)
    except MeshError as err:
        raise MeshError(f"cover: {err}") from err
    psi = cover.cutoffs(M.vertices, vm)
    pieces = np.zeros_like(psi)
    base = np.where(vm, uc, 0.0)
    pieces[0] = psi[0] * base
    charts, all_checks = [], []
    flagged = 0
    touched = 0
    for i, x in enumerate(cover.centers, start=1):
        try:
            ch = build_chart(M, x, eps)
            do_check = (checks and (check_charts is None or i <= check_charts)
                        and ch.patch.n_simplices <= max_check_simplices)
            ext = chart_extend(u_c, ch, region_c, params, quad, s=s, p=p, check=do_check)
        except MeshError as err:
            raise MeshError(f"chart extension {i}: {err}") from err
        charts.append(ch)
        all_checks += [_tag(c, f"chart{i}") for c in ext.checks]
        idx = np.flatnonzero(psi[i] > 0)
        vals, fl = ext.evaluate(M.vertices[idx], vm[idx], base[idx])
        pieces[i, idx] = psi[i, idx] * vals
        flagged += int(fl.sum())
        touched += len(idx)
    Eu = ScalarField(M, _ordered_sum(pieces))
    # identity on the region at vertices and quadrature nodes
    _, _, a = Eu.nodes(3, region_c.simplex_ids)
    _, _, b = u_c.nodes(3)
    residual = float(max(np.max(np.abs(a - b)), np.max(np.abs(Eu.values[vm] - uc[vm]))))
    support_ok = all(
        np.all(np.linalg.norm(M.vertices[pieces[i] != 0] - x, axis=1) < eps)
        for i, x in enumerate(cover.centers, start=1))
    report = ExtensionReport(area, k, float(eps), float(eps_cut), collar, cover.n_balls, M.n_vertices,
                             residual, flagged, flagged / max(touched, 1), bool(support_ok))
    if checks or norms:
        params = _params(params, s, p)
    if checks and region_c.mask.sum() <= max_check_simplices:
        all_checks += _interior_checks(u_c, psi[0], region_c, cover, params, quad)
    report.checks = all_checks
    if norms:
        report.norms = extension_norms([(u_c, Eu)], params, quad)[0]
    return ExtensionResult(Eu, report, region_c, u_c, cover, charts, pieces)


def _tag(check, prefix):
    return LemmaCheck(f"{check.name}", check.lhs, check.rhs, check.margin, check.applicable,
                      dict(check.detail, where=prefix))


def _ordered_sum(pieces):
    out = np.zeros(pieces.shape[1])
    for row in pieces:
        out = out + row
    return out


def _local_mesh_size(region, eps, near=2.0):
    m = region.manifold
    if m.k == 2:
        return m.mesh_size
    from .geometry import dist_to_set

    om = region.mesh
    d = dist_to_set(m.centroids, om)
    sel = d <= near * eps + m.simplex_diameters
    return float(m.simplex_diameters[sel].max())


def _interior_checks(u_c, psi0, region_c, cover, params, quad):
    """Truncation and zero-extension checks for the interior piece."""
    M = region_c.manifold
    psi_f = ScalarField(M, psi0)
    w0, tchecks = truncate(u_c, psi_f, cover.eps, params, quad, levels=0)
    tchecks = [_tag(c, "interior") for c in tchecks]
    nz = np.abs(w0.values) > 0
    kmask = region_c.mask & nz[M.simplices].any(axis=1)
    if not kmask.any():
        return tchecks
    _, zchecks = zero_extend(w0, kmask, params, quad)
    return tchecks + [_tag(c, "interior") for c in zchecks]


def extension_norms(pairs, params_list, quad=None):
    """Norm powers of ``u`` and ``Eu`` and the ratios R for each parameter set.

    ``pairs`` is a list of ``(u, Eu)`` sharing one mesh.  With a single
    params object the result is one dict per pair; with a list, a list of
    such lists (outer index: params).
    """
    single = isinstance(params_list, SobolevParams)
    plist = [params_list] if single else list(params_list)
    u0, E0 = pairs[0]
    M = E0.mesh
    omega = u0.domain
    area = measure(omega)
    k = M.k
    out = []
    for prm in plist:
        su, eu = _pair_power(M, omega.simplex_ids, np.stack([u.values for u, _ in pairs]), prm, quad)
        sE, eE = _pair_power(M, np.arange(M.n_simplices), np.stack([E.values for _, E in pairs]), prm, quad)
        rows = []
        for j, (u, E) in enumerate(pairs):
            lu = lp_power(u, p=prm.p)
            lE = lp_power(E, p=prm.p)
            C = omega_constant(area, k, prm.s, prm.p)
            num = lE + float(sE[j])
            den = C * lu + float(su[j])
            den0 = lu + float(su[j])
            rows.append({"s": prm.s, "p": prm.p, "lp_u": lu, "semi_u": float(su[j]), "lp_Eu": lE,
                         "semi_Eu": float(sE[j]), "semi_u_err": float(eu[j]), "semi_Eu_err": float(eE[j]),
                         "C_omega": C, "R": num / den if den > 0 else 0.0,
                         "R_naive": num / den0 if den0 > 0 else 0.0})
        out.append(rows)
    return out[0] if single else out


def ratio_study(regions, fields, s_values, p=2.0, quad=None, *, eps_manifold=None, rho=0.25,
                levels=1, collars=(0.25,)):
    """R and its components over a family of regions, fields and smoothness values.

    ``fields`` maps a name to a function of points.  Returns one row per
    (region, collar, field, s).
    """
    plist = [SobolevParams(float(s), float(p)) for s in s_values]
    rows = []
    for ri, region in enumerate(regions):
        for collar in collars:
            pairs = []
            reps = []
            for name, fn in fields.items():
                u = ScalarField.from_function(region, fn)
                res = extend(u, plist[0], quad, eps_manifold=eps_manifold, rho=rho, levels=levels,
                             collar=collar, norms=False, checks=False)
                pairs.append((res.u, res.field))
                reps.append((name, res.report))
            table = extension_norms(pairs, plist, quad)
            for prm, per_field in zip(plist, table):
                for (name, rep), vals in zip(reps, per_field):
                    row = {"region": ri, "field": name, "collar": collar, "measure": rep.measure,
                           "eps": rep.eps, "n_balls": rep.n_balls, "residual": rep.residual,
                           "flagged_fraction": rep.flagged_fraction}
                    row.update(vals)
                    rows.append(row)
    return rows
