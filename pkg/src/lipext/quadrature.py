"""
Quadrature for double integrals of PL data over pairs of simplices.

The central routine integrates

    |a(x) - b(y)|^p / |x - y|^(k + s p)

over pairs of k-simplices, where ``a`` and ``b`` are affine on each simplex.
Pairs are classified by how they touch:

* identical, shared edge (k=2) and shared vertex pairs carry an integrand that
  is positively homogeneous of degree ``p - k - s p`` about the common set, so
  splitting both simplices dyadically reproduces the original pair (scaled) in
  some children.  Solving that linear relation for the pair's value removes the
  singular part exactly; only separated child pairs remain.
* separated pairs are subdivided while they are close relative to their size
  and then integrated with tensor Gauss rules whose order drops with distance.

A second routine integrates the weakly singular potential
``int_S |x - y|^(-beta) dx`` over a simplex set ``S`` split into the parts
inside and outside a ball around ``y``, in closed form along rays.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit
from scipy.special import hyp2f1, roots_jacobi

__all__ = [
    "QuadratureSpec",
    "PairResult",
    "simplex_rule",
    "pair_integral",
    "cross_integral",
    "ball_potential",
]

# relative tie-breaking slack for scale-invariant thresholds
_TIE = 1e-9


@dataclass(frozen=True)
class QuadratureSpec:
    """Settings for the simplex-pair quadrature.

    far_order : Gauss points per direction for separated pairs at distance
        ratio below 4 (one less up to ratio 8, then 2).
    near_refinement : maximum dyadic subdivision depth for close pairs.
    separation_ratio : a pair is resolved by Gauss once
        ``center distance >= separation_ratio * max diameter``.
    workers : thread count for the pair loop.  Results do not depend on it.
    block_rows : rows of the pair matrix per work block (fixes summation order).
    """

    far_order: int = 3
    near_refinement: int = 6
    separation_ratio: float = 2.0
    workers: int = 1
    block_rows: int = 32

    def __post_init__(self):
        if int(self.far_order) != self.far_order or self.far_order < 2:
            raise ValueError("far_order must be an integer >= 2")
        if int(self.near_refinement) != self.near_refinement or self.near_refinement < 2:
            raise ValueError("near_refinement must be an integer >= 2")
        if not self.separation_ratio >= 1:
            raise ValueError("separation_ratio must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def order_for_ratio(self, rho):
        """Gauss order per direction as a function of the distance ratio.

        Never below 2 so that the quadratic numerator of p=2 is integrated
        exactly against a locally constant kernel.
        """
        rho = np.asarray(rho)
        return np.where(rho < 4 * (1 - _TIE), self.far_order,
                        np.where(rho < 8 * (1 - _TIE), max(2, self.far_order - 1), 2))


@dataclass(frozen=True)
class PairResult:
    """Integral value and a truncation error estimate.

    ``error`` compares the contributions of pairs stopped at the maximum
    subdivision depth with their Gauss value one level up.  It is zero when
    no close pair reaches that depth and does not bound the Gauss error of
    pairs resolved by separation.
    """

    value: float
    error: float
    unresolved: int
    pairs: int


@lru_cache(maxsize=None)
def simplex_rule(k, order):
    """Gauss rule on the reference k-simplex: barycentric points, weights summing to 1.

    k=1 is Gauss–Legendre; k=2 is the collapsed (Duffy) product of a
    Gauss–Jacobi(1,0) and a Gauss–Legendre rule, exact for degree ``2*order-1``.
    """
    x, w = np.polynomial.legendre.leggauss(order)
    t, wt = (x + 1) / 2, w / 2
    if k == 1:
        bary = np.stack([1 - t, t], axis=1)
        return _freeze(bary), _freeze(wt)
    if k == 2:
        xa, wa = roots_jacobi(order, 1, 0)
        a, wa = (xa + 1) / 2, wa / 4
        A, B = np.meshgrid(a, t, indexing="ij")
        W = np.outer(wa, wt) * 2
        xi, eta = A.ravel(), (B * (1 - A)).ravel()
        bary = np.stack([1 - xi - eta, xi, eta], axis=1)
        return _freeze(bary), _freeze(W.ravel())
    raise ValueError(f"unsupported simplex dimension {k}")


def _freeze(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


def _volumes(X):
    k = X.shape[1] - 1
    E = X[:, 1:] - X[:, :1]
    if k == 1:
        return np.linalg.norm(E[:, 0], axis=-1)
    G = np.einsum("mik,mjk->mij", E, E)
    return np.sqrt(np.clip(G[:, 0, 0] * G[:, 1, 1] - G[:, 0, 1] ** 2, 0, None)) / 2


def _diam(X):
    k = X.shape[1] - 1
    d = np.zeros(len(X))
    for i in range(k + 1):
        for j in range(i + 1, k + 1):
            d = np.maximum(d, np.linalg.norm(X[:, i] - X[:, j], axis=-1))
    return d


def _extend(X):
    """Append edge midpoints: k=1 -> [v0, v1, m01]; k=2 -> [v0, v1, v2, m01, m12, m20]."""
    if X.shape[1] == 2:
        return np.concatenate([X, 0.5 * (X[:, :1] + X[:, 1:2])], axis=1)
    m01 = 0.5 * (X[:, 0] + X[:, 1])
    m12 = 0.5 * (X[:, 1] + X[:, 2])
    m20 = 0.5 * (X[:, 2] + X[:, 0])
    return np.concatenate([X, m01[:, None], m12[:, None], m20[:, None]], axis=1)


# children of a simplex in terms of the extended vertex list
_CHILDREN = {1: np.array([[0, 2], [2, 1]]),
             2: np.array([[0, 3, 5], [3, 1, 4], [5, 4, 2], [3, 4, 5]])}

# identical pair -> (index template A, index template B) for touching children
_IDENT_VERTEX = {1: [([2, 0], [2, 1])],
                 2: [([3, 0, 5], [3, 1, 4]), ([4, 1, 3], [4, 2, 5]), ([5, 0, 3], [5, 2, 4])]}
_IDENT_EDGE = {2: [([3, 5, 0], [3, 5, 4]), ([4, 3, 1], [4, 3, 5]), ([5, 4, 2], [5, 4, 3])]}

# shared vertex at local index 0: separated children (all but the pair at P)
_VERTEX_SEP = {k: [(a, b) for a in range(2 ** k) for b in range(2 ** k) if (a, b) != (0, 0)]
               for k in (1, 2)}

# shared edge (local 0,1): touching children sharing m01 and separated children
_EDGE_TOUCH = [([3, 0, 5], [3, 1, 4]), ([3, 1, 4], [3, 0, 5]), ([3, 0, 5], [3, 4, 5]),
               ([3, 1, 4], [3, 4, 5]), ([3, 4, 5], [3, 0, 5]), ([3, 4, 5], [3, 1, 4]),
               ([3, 4, 5], [3, 4, 5])]
_EDGE_SEP = [(2, 0), (2, 1), (2, 2), (2, 3), (0, 2), (1, 2), (3, 2)]


# a separated simplex is refined only if its diameter is at least this
# fraction of its partner's
_SPLIT_BALANCE = 0.5
# triangles with area below this multiple of diameter^2 are bisected, not 4-split
# (an equilateral triangle has 0.433)
_THIN_QUALITY = 0.1
_MODES = ("quad", "bisect", "keep")
_BISECT = np.array([[0, 3, 2], [3, 1, 2]])


class _Batch:
    """Pairs of simplices with affine data, a weight and a depth."""

    __slots__ = ("XA", "UA", "XB", "UB", "W", "D")

    def __init__(self, XA, UA, XB, UB, W, D):
        self.XA, self.UA, self.XB, self.UB, self.W, self.D = XA, UA, XB, UB, W, D

    def __len__(self):
        return len(self.W)

    @staticmethod
    def concat(batches):
        batches = [b for b in batches if b is not None and len(b)]
        if not batches:
            return None
        if len(batches) == 1:
            return batches[0]
        return _Batch(*(np.concatenate([getattr(b, f) for b in batches])
                        for f in _Batch.__slots__))

    def select(self, idx):
        return _Batch(*(getattr(self, f)[idx] for f in _Batch.__slots__))


@njit(cache=True)
def _gauss_kernel(XA, UA, XB, UB, W, bary, w, expo, n4, p, out):
    """Tensor Gauss sums for each pair and field.

    Quarter-integer kernel exponents (``n4 = -4*expo``) are evaluated with
    square roots and products instead of ``pow``.
    """
    m, nv, n = XA.shape
    F = UA.shape[2]
    q = len(w)
    xa = np.empty((q, n))
    xb = np.empty((n, q))
    ua = np.empty((q, F))
    ub = np.empty((F, q))
    kv = np.empty(q)
    acc = np.empty(F)
    a4 = n4 // 4
    b2 = (n4 % 4) // 2
    c1 = n4 % 2
    for i in range(m):
        for a in range(q):
            for d in range(n):
                sa = 0.0
                sb = 0.0
                for v in range(nv):
                    sa += bary[a, v] * XA[i, v, d]
                    sb += bary[a, v] * XB[i, v, d]
                xa[a, d] = sa
                xb[d, a] = sb
            for f in range(F):
                sa = 0.0
                sb = 0.0
                for v in range(nv):
                    sa += bary[a, v] * UA[i, v, f]
                    sb += bary[a, v] * UB[i, v, f]
                ua[a, f] = sa
                ub[f, a] = sb
        for f in range(F):
            acc[f] = 0.0
        for a in range(q):
            for b in range(q):
                r2 = 0.0
                for d in range(n):
                    t = xa[a, d] - xb[d, b]
                    r2 += t * t
                kv[b] = r2
            if n4 > 0:
                for b in range(q):
                    r2 = kv[b]
                    den = 1.0
                    for _ in range(a4):
                        den *= r2
                    r = np.sqrt(r2)
                    if b2:
                        den *= r
                    if c1:
                        den *= np.sqrt(r)
                    kv[b] = w[b] / den
            else:
                for b in range(q):
                    kv[b] = w[b] * kv[b] ** expo
            for f in range(F):
                acc_f = 0.0
                u0 = ua[a, f]
                if p == 2.0:
                    for b in range(q):
                        t = u0 - ub[f, b]
                        acc_f += kv[b] * t * t
                else:
                    for b in range(q):
                        acc_f += kv[b] * abs(u0 - ub[f, b]) ** p
                acc[f] += w[a] * acc_f
        for f in range(F):
            out[i, f] = acc[f] * W[i]


def _gauss_sum(b, order, k, s, p):
    """Tensor Gauss integral of each pair in batch ``b``: array ``(m, F)``."""
    bary, w = simplex_rule(k, int(order))
    out = np.empty(b.UA.shape[0:1] + b.UA.shape[2:])
    expo = -(k + s * p) / 2.0
    n4 = int(round(-4 * expo))
    if n4 <= 0 or abs(n4 + 4 * expo) > 1e-12:
        n4 = 0
    _gauss_kernel(np.ascontiguousarray(b.XA), np.ascontiguousarray(b.UA),
                  np.ascontiguousarray(b.XB), np.ascontiguousarray(b.UB),
                  np.ascontiguousarray(b.W), bary, w, expo, n4, float(p), out)
    return out * (_volumes(b.XA) * _volumes(b.XB))[:, None]


def _side_children(X, U, k, mode):
    """Children of each simplex: ``keep`` (itself), ``quad`` (uniform) or ``bisect``."""
    if mode == "keep":
        return X[:, None], U[:, None]
    if mode == "quad":
        C = _CHILDREN[k]
        return _extend(X)[:, C], _extend(U)[:, C]
    # longest edge first, then split it at its midpoint
    L = np.stack([np.linalg.norm(X[:, (i + 1) % 3] - X[:, i], axis=-1) for i in range(3)], 1)
    r = np.argmax(L, axis=1)
    order = (r[:, None] + np.arange(3)) % 3
    X = np.take_along_axis(X, order[:, :, None], axis=1)
    U = np.take_along_axis(U, order[:, :, None], axis=1)
    C = _BISECT
    return _extend(X)[:, C], _extend(U)[:, C]


def _split_all(b, k, mode_a="quad", mode_b="quad"):
    """Child pairs of separated pairs, refining each side according to its mode."""
    XA, UA = _side_children(b.XA, b.UA, k, mode_a)     # (m, nc, k+1, n)
    XB, UB = _side_children(b.XB, b.UB, k, mode_b)
    m = len(b)
    ia, ib = np.meshgrid(np.arange(XA.shape[1]), np.arange(XB.shape[1]), indexing="ij")
    ia, ib = ia.ravel(), ib.ravel()
    nc = len(ia)
    tot = m * nc
    return _Batch(XA[:, ia].reshape(tot, *XA.shape[2:]), UA[:, ia].reshape(tot, *UA.shape[2:]),
                  XB[:, ib].reshape(tot, *XB.shape[2:]), UB[:, ib].reshape(tot, *UB.shape[2:]),
                  np.repeat(b.W, nc), np.repeat(b.D + 1, nc))


def _split_modes(X, d, dmax, k):
    """Per-simplex refinement mode of a near pair side."""
    mode = np.where(d >= _SPLIT_BALANCE * dmax, "quad", "keep").astype(object)
    if k == 2:
        thin = _volumes(X) < _THIN_QUALITY * d ** 2
        mode[(mode == "quad") & thin] = "bisect"
    return mode


def _children(b, templates, weight):
    EA, EB = _extend(b.XA), _extend(b.XB)
    FA, FB = _extend(b.UA), _extend(b.UB)
    out = []
    for ta, tb in templates:
        ta, tb = np.asarray(ta), np.asarray(tb)
        out.append(_Batch(EA[:, ta], FA[:, ta], EB[:, tb], FB[:, tb], b.W * weight, b.D + 1))
    return _Batch.concat(out)


def _sep_templates(k, index_pairs):
    C = _CHILDREN[k]
    return [(C[a], C[c]) for a, c in index_pairs]


class _Accumulator:
    def __init__(self, nf):
        self.parts = []
        self.coarse = []
        self.fine = []
        self.unresolved = 0
        self.pairs = 0
        self.nf = nf

    @staticmethod
    def _sum(chunks, nf):
        if not chunks:
            return np.zeros(nf)
        return np.array([math.fsum(c[f] for c in chunks) for f in range(nf)])

    def add(self, which, contrib):
        getattr(self, which).append(np.array([math.fsum(col) for col in contrib.T]))


def _process(ident, edge, vert, sep, k, s, p, spec, nf):
    """Run the level-by-level recursion on the given batches."""
    acc = _Accumulator(nf)
    a = (1 - s) * p
    f_id = 2.0 ** (-a)
    f_edge = 2.0 ** (-(1 + a))
    f_vert = 2.0 ** (-(k + a))
    D = spec.near_refinement
    sep_lim = spec.separation_ratio * (1 - _TIE)

    def gauss(batch, rho):
        orders = spec.order_for_ratio(rho)
        contrib = np.zeros((len(batch), nf))
        for o in np.unique(orders):
            sel = orders == o
            contrib[sel] = _gauss_sum(batch.select(sel), o, k, s, p)
        return contrib

    while any(x is not None for x in (ident, edge, vert, sep)):
        new_edge, new_vert, new_sep = [], [], []
        if ident is not None:
            g = 2.0 / (1 - f_id)
            new_vert.append(_children(ident, _IDENT_VERTEX[k], g))
            if k == 2:
                new_edge.append(_children(ident, _IDENT_EDGE[2], g))
        if edge is not None:
            g = 1.0 / (1 - f_edge)
            new_vert.append(_children(edge, _EDGE_TOUCH, g))
            new_sep.append(_children(edge, _sep_templates(2, _EDGE_SEP), g))
        if vert is not None:
            g = 1.0 / (1 - f_vert)
            new_sep.append(_children(vert, _sep_templates(k, _VERTEX_SEP[k]), g))
        if sep is not None:
            acc.pairs += len(sep)
            dist = np.linalg.norm(sep.XA.mean(axis=1) - sep.XB.mean(axis=1), axis=-1)
            dA, dB = _diam(sep.XA), _diam(sep.XB)
            dmax = np.maximum(dA, dB)
            rho = dist / dmax
            near = rho < sep_lim
            split = near & (sep.D < D)
            final = ~split
            fb = sep.select(final)
            contrib = gauss(fb, rho[final])
            acc.add("parts", contrib)
            acc.unresolved += int(np.count_nonzero(near & ~split))
            # depth-D contributions versus their Gauss value one level up
            deep = fb.D == D
            if deep.any():
                acc.add("fine", contrib[deep])
            penult = split & (sep.D == D - 1)
            if penult.any():
                acc.add("coarse", gauss(sep.select(penult), rho[penult]))
            if split.any():
                # a side much smaller than its partner is kept whole, and thin
                # triangles are bisected: both keep the near-pair count bounded
                ma = _split_modes(sep.XA, dA, dmax, k)
                mb = _split_modes(sep.XB, dB, dmax, k)
                for sa in _MODES:
                    for sb in _MODES:
                        sel = split & (ma == sa) & (mb == sb)
                        if sel.any():
                            new_sep.append(_split_all(sep.select(sel), k, sa, sb))
        ident = None
        edge = _Batch.concat(new_edge)
        vert = _Batch.concat(new_vert)
        sep = _Batch.concat(new_sep)
    return acc


def _classify_block(I, J, X, V, U, k):
    """Split top-level pairs (I[j], J[j]) into identical/edge/vertex/separated batches."""
    same = I == J
    VA, VB = V[I], V[J]
    eq = VA[:, :, None] == VB[:, None, :]
    ns = eq.sum(axis=(1, 2))
    W = np.where(same, 1.0, 2.0)
    zeros = np.zeros(len(I), dtype=np.int64)
    if ((~same) & (ns > k)).any():
        raise ValueError("two distinct simplices share all vertices")

    def mk(sel, oa=None, ob=None):
        if not sel.any():
            return None
        ii, jj = I[sel], J[sel]
        XA, XB, UA, UB = X[ii], X[jj], U[ii], U[jj]
        if oa is not None:
            XA = np.take_along_axis(XA, oa[:, :, None], axis=1)
            UA = np.take_along_axis(UA, oa[:, :, None], axis=1)
            XB = np.take_along_axis(XB, ob[:, :, None], axis=1)
            UB = np.take_along_axis(UB, ob[:, :, None], axis=1)
        return _Batch(XA, UA, XB, UB, W[sel], zeros[sel])

    ar = np.arange(k + 1)
    ident = mk(same)
    sep = mk((~same) & (ns == 0))

    vert = None
    sel = (~same) & (ns == 1)
    if sel.any():
        e = eq[sel]
        ia = np.argmax(e.any(axis=2), axis=1)
        ib = np.argmax(e.any(axis=1), axis=1)
        vert = mk(sel, (ia[:, None] + ar) % (k + 1), (ib[:, None] + ar) % (k + 1))

    edge = None
    sel = (~same) & (ns == 2)
    if k == 2 and sel.any():
        e = eq[sel]
        ra = np.argmin(e.any(axis=2), axis=1)
        rb = np.argmin(e.any(axis=1), axis=1)
        oa = np.stack([(ra + 1) % 3, (ra + 2) % 3, ra], axis=1)
        ob = np.stack([(rb + 1) % 3, (rb + 2) % 3, rb], axis=1)
        va0 = np.take_along_axis(VA[sel], oa[:, :1], axis=1)[:, 0]
        vb0 = np.take_along_axis(VB[sel], ob[:, :1], axis=1)[:, 0]
        swap = va0 != vb0
        ob[swap] = ob[swap][:, [1, 0, 2]]
        edge = mk(sel, oa, ob)
    return ident, edge, vert, sep


def _run_blocks(blocks, fn, workers):
    if workers <= 1 or len(blocks) <= 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, blocks))


def _combine(accs, nf, squeeze):
    value = _Accumulator._sum([x for a in accs for x in a.parts], nf)
    fine = _Accumulator._sum([x for a in accs for x in a.fine], nf)
    coarse = _Accumulator._sum([x for a in accs for x in a.coarse], nf)
    err = np.abs(fine - coarse)
    if squeeze:
        value, err = float(value[0]), float(err[0])
    return PairResult(value=value, error=err,
                      unresolved=sum(a.unresolved for a in accs),
                      pairs=sum(a.pairs for a in accs))


def _check_sp(s, p):
    if not 0 < s < 1:
        raise ValueError(f"s must lie in (0, 1), got {s}")
    if not p >= 1:
        raise ValueError(f"p must be >= 1, got {p}")


def _as_fields(values, m, k):
    U = np.asarray(values, dtype=float)
    squeeze = U.ndim == 2
    if squeeze:
        U = U[..., None]
    if U.shape[:2] != (m, k + 1):
        raise ValueError("values must have shape (m, k+1) or (m, k+1, F)")
    return np.ascontiguousarray(U), squeeze


def pair_integral(coords, vertex_ids, values, s, p, spec=None) -> PairResult:
    """Double integral of ``|u(x)-u(y)|^p / |x-y|^(k+sp)`` over a simplex set.

    Parameters
    ----------
    coords : (m, k+1, n) simplex coordinates
    vertex_ids : (m, k+1) int
        Global vertex ids; simplices touch exactly when they share ids.
    values : (m, k+1) or (m, k+1, F)
        Vertex values of continuous PL fields (equal ids carry equal values).
        With a trailing field axis the result holds one value per field.
    """
    spec = spec or QuadratureSpec()
    _check_sp(s, p)
    X = np.ascontiguousarray(coords, dtype=float)
    V = np.asarray(vertex_ids, dtype=np.int64)
    m, k = X.shape[0], X.shape[1] - 1
    U, squeeze = _as_fields(values, m, k)
    nf = U.shape[2]
    if m == 0:
        return _combine([], nf, squeeze)
    rows = spec.block_rows
    blocks = [(lo, min(m, lo + rows)) for lo in range(0, m, rows)]

    def work(block):
        lo, hi = block
        ii = np.arange(lo, hi)
        I = np.repeat(ii, m - ii)
        J = np.concatenate([np.arange(i, m) for i in ii])
        return _process(*_classify_block(I, J, X, V, U, k), k, s, p, spec, nf)

    return _combine(_run_blocks(blocks, work, spec.workers), nf, squeeze)


def cross_integral(coords_a, values_a, coords_b, values_b, s, p, spec=None) -> PairResult:
    """Integral over A x B of ``|a(x)-b(y)|^p / |x-y|^(k+sp)`` for separated sets.

    Every pair is treated as separated; the sets must not touch.
    """
    spec = spec or QuadratureSpec()
    _check_sp(s, p)
    XA = np.ascontiguousarray(coords_a, dtype=float)
    XB = np.ascontiguousarray(coords_b, dtype=float)
    ma, mb, k = len(XA), len(XB), XA.shape[1] - 1
    UA, squeeze = _as_fields(values_a, ma, k)
    UB, _ = _as_fields(values_b, mb, k)
    nf = UA.shape[2]
    if UB.shape[2] != nf:
        raise ValueError("field counts differ between the two sets")
    if ma == 0 or mb == 0:
        return _combine([], nf, squeeze)
    rows = spec.block_rows
    blocks = [(lo, min(ma, lo + rows)) for lo in range(0, ma, rows)]

    def work(block):
        lo, hi = block
        I = np.repeat(np.arange(lo, hi), mb)
        J = np.tile(np.arange(mb), hi - lo)
        b = _Batch(XA[I], UA[I], XB[J], UB[J], np.ones(len(I)), np.zeros(len(I), dtype=np.int64))
        return _process(None, None, None, b, k, s, p, spec, nf)

    return _combine(_run_blocks(blocks, work, spec.workers), nf, squeeze)


# ---------------------------------------------------------------------------
# weakly singular potentials with a ball cut

def _line_antideriv(T, d, beta):
    """F(T) = int_0^T (d^2 + t^2)^(-beta/2) dt, odd in T; d >= 0."""
    T = np.asarray(T, float)
    out = np.empty(np.broadcast(T, d).shape)
    T, d = np.broadcast_arrays(T, d)
    small = d <= 1e-14 * np.maximum(np.abs(T), 1e-300)
    if small.any():
        Ts = T[small]
        out[small] = np.sign(Ts) * np.abs(Ts) ** (1 - beta) / (1 - beta)
    big = ~small
    if big.any():
        Tb, db = T[big], d[big]
        z = -(Tb / db) ** 2
        out[big] = Tb * db ** (-beta) * hyp2f1(0.5, beta / 2, 1.5, z)
    return out


def _potential_segments(Y, S, beta, eps):
    """Near/far potential of segments S (m,2,n) at points Y (q,n)."""
    A, B = S[:, 0], S[:, 1]
    e = B - A
    L = np.linalg.norm(e, axis=1)
    t_hat = e / L[:, None]
    w = Y[:, None, :] - A[None]
    tau = np.einsum("qmn,mn->qm", w, t_hat)
    perp = w - tau[..., None] * t_hat[None]
    d = np.linalg.norm(perp, axis=-1)
    # segment occupies t in [-tau, L - tau] relative to the foot point
    t0, t1 = -tau, L[None] - tau
    F0, F1 = _line_antideriv(t0, d, beta), _line_antideriv(t1, d, beta)
    total = F1 - F0
    if eps is None:
        return total, np.zeros_like(total)
    rho = np.sqrt(np.clip(eps * eps - d * d, 0, None))
    a = np.clip(t0, -rho, rho)
    b = np.clip(t1, -rho, rho)
    near = _line_antideriv(b, d, beta) - _line_antideriv(a, d, beta)
    return near, total - near


_ANG_X, _ANG_W = np.polynomial.legendre.leggauss(24)


def _sector_integral(h, d, phi0, phi1, beta, cap):
    """int_{phi0}^{phi1} G(min(h/cos(phi), cap)) dphi for the radial primitive G."""
    q = (2 - beta) / 2
    dd = (d * d)[..., None]

    def G(R):
        return ((dd + R * R) ** q - dd ** q) / (2 * q)

    mid = (phi0 + phi1) / 2
    half = (phi1 - phi0) / 2
    phi = mid[..., None] + half[..., None] * _ANG_X
    R = h[..., None] / np.cos(phi)
    if cap is not None:
        R = np.minimum(R, cap[..., None])
    return half * (G(R) @ _ANG_W) if np.ndim(half) else half * np.dot(G(R), _ANG_W)


def _potential_triangles(Y, T, beta, eps):
    """Near/far potential of triangles T (m,3,3) at points Y (q,3).

    The triangle is decomposed into signed sub-triangles with apex at the
    projection of y; each is integrated in polar coordinates with the radial
    part in closed form and the angular part by Gauss–Legendre, split at the
    angles where the ball boundary crosses the far edge.
    """
    q, m = len(Y), len(T)
    e1 = T[:, 1] - T[:, 0]
    e2 = T[:, 2] - T[:, 0]
    nrm = np.cross(e1, e2)
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    w = Y[:, None, :] - T[None, :, 0]
    height = np.einsum("qmn,mn->qm", w, nrm)
    d = np.abs(height)
    Yp = Y[:, None, :] - height[..., None] * nrm[None]      # (q,m,3) foot point
    near = np.zeros((q, m))
    total = np.zeros((q, m))
    rho = None if eps is None else np.sqrt(np.clip(eps * eps - d * d, 0, None))
    for i in range(3):
        P0 = T[None, :, i]
        P1 = T[None, :, (i + 1) % 3]
        a0 = P0 - Yp
        a1 = P1 - Yp
        cr = np.einsum("qmn,mn->qm", np.cross(a0, a1), nrm)
        sign = np.sign(cr)
        edge = P1 - P0
        el = np.linalg.norm(edge, axis=-1)
        # distance from the apex to the edge line and polar angles of the ends
        h = np.abs(cr) / el
        foot_t = -np.einsum("qmn,qmn->qm", a0, edge) / el ** 2
        s0 = -foot_t * el
        s1 = (1 - foot_t) * el
        ok = h > 1e-14 * el
        hs = np.where(ok, h, 1.0)
        phi0 = np.arctan2(s0, hs)
        phi1 = np.arctan2(s1, hs)
        lo, hi = np.minimum(phi0, phi1), np.maximum(phi0, phi1)
        tot = _sector_integral(hs, d, lo, hi, beta, None)
        total += np.where(ok, sign * tot, 0.0)
        if rho is not None:
            # ball boundary meets the edge line where h/cos(phi) = rho
            crit = np.arccos(np.clip(hs / np.where(rho > 0, rho, 1.0), -1, 1))
            crit = np.where(rho > hs, crit, 0.0)
            pieces = [(lo, np.clip(-crit, lo, hi)), (np.clip(-crit, lo, hi), np.clip(crit, lo, hi)),
                      (np.clip(crit, lo, hi), hi)]
            nr = np.zeros((q, m))
            for pa, pb in pieces:
                nr += _sector_integral(hs, d, pa, pb, beta, rho)
            near += np.where(ok, sign * nr, 0.0)
    if rho is None:
        return total, np.zeros_like(total)
    return near, total - near


def ball_potential(points, coords, beta, eps=None, chunk=256):
    """Potential ``int_S |x-y|^(-beta) dx`` at each point, split at radius ``eps``.

    Parameters
    ----------
    points : (q, n) evaluation points
    coords : (m, k+1, n) simplices forming S (k=1 any n<=3; k=2 in 3-space)
    beta : exponent, must be < k
    eps : ball radius; ``None`` returns ``(total, 0)``.

    Returns
    -------
    near, far : (q,) arrays for ``|x-y| < eps`` and ``|x-y| >= eps``.
    """
    Y = np.atleast_2d(np.asarray(points, float))
    S = np.asarray(coords, float)
    k = S.shape[1] - 1
    if not beta < k:
        raise ValueError("potential exponent must be below the simplex dimension")
    if k == 2 and S.shape[2] == 2:
        S = np.concatenate([S, np.zeros(S.shape[:2] + (1,))], axis=2)
        Y = np.concatenate([Y, np.zeros((len(Y), 1))], axis=1)
    near = np.zeros(len(Y))
    far = np.zeros(len(Y))
    fn = _potential_segments if k == 1 else _potential_triangles
    for lo in range(0, len(Y), chunk):
        nn, ff = fn(Y[lo:lo + chunk], S, beta, eps)
        near[lo:lo + chunk] = nn.sum(axis=1)
        far[lo:lo + chunk] = ff.sum(axis=1)
    return near, far
