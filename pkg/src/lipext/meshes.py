"""Built-in test manifolds."""
import numpy as np

from .geometry import SimplicialManifold

__all__ = ["circle_polygon", "square_boundary", "icosphere", "cube_surface", "dumbbell_polygon"]


def circle_polygon(n, radius=1.0):
    """Regular n-gon inscribed in the circle of the given radius."""
    if n < 3:
        raise ValueError("circle-polygon needs n >= 3")
    t = 2 * np.pi * np.arange(n) / n
    V = radius * np.stack([np.cos(t), np.sin(t)], axis=1)
    S = np.stack([np.arange(n), (np.arange(n) + 1) % n], axis=1)
    return SimplicialManifold(V, S)


def square_boundary(n):
    """Boundary of the unit square centred at the origin, n segments per side."""
    if n < 1:
        raise ValueError("square-boundary needs n >= 1")
    t = np.arange(n) / n
    corners = np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]])
    pts = [corners[i] + t[:, None] * (corners[(i + 1) % 4] - corners[i]) for i in range(4)]
    V = np.concatenate(pts)
    m = len(V)
    S = np.stack([np.arange(m), (np.arange(m) + 1) % m], axis=1)
    return SimplicialManifold(V, S)


def _subdivide_sphere(V, F, levels):
    for _ in range(levels):
        edges = np.sort(np.concatenate([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]]), axis=1)
        E, inv = np.unique(edges, axis=0, return_inverse=True)
        nf = len(F)
        mid = len(V) + inv.reshape(3, nf).T
        M = V[E[:, 0]] + V[E[:, 1]]
        V = np.concatenate([V, M / np.linalg.norm(M, axis=1, keepdims=True)])
        a, b, c = F[:, 0], F[:, 1], F[:, 2]
        m01, m12, m20 = mid[:, 0], mid[:, 1], mid[:, 2]
        F = np.concatenate([np.stack(x, 1) for x in
                            ((a, m01, m20), (m01, b, m12), (m20, m12, c), (m01, m12, m20))])
    return V, F


def icosphere(level, radius=1.0):
    """Icosahedron subdivided ``level`` times with vertices pushed to the sphere."""
    if level < 0:
        raise ValueError("icosphere level must be >= 0")
    g = (1 + 5 ** 0.5) / 2
    V = np.array([[-1, g, 0], [1, g, 0], [-1, -g, 0], [1, -g, 0],
                  [0, -1, g], [0, 1, g], [0, -1, -g], [0, 1, -g],
                  [g, 0, -1], [g, 0, 1], [-g, 0, -1], [-g, 0, 1]], dtype=float)
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    F = np.array([[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
                  [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
                  [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
                  [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])
    V, F = _subdivide_sphere(V, F, level)
    return SimplicialManifold(radius * V, F)


def cube_surface(level):
    """Surface of the unit cube centred at the origin (area 6).

    Each face is a ``2**level`` by ``2**level`` grid of squares split into two
    triangles; triangles are oriented outward.
    """
    if level < 0:
        raise ValueError("cube-surface level must be >= 0")
    q = 2 ** level
    g = np.linspace(-0.5, 0.5, q + 1)
    verts, tris = [], []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            u_ax, v_ax = [a for a in range(3) if a != axis]
            U, W = np.meshgrid(g, g, indexing="ij")
            P = np.zeros((q + 1, q + 1, 3))
            P[..., axis] = 0.5 * sign
            P[..., u_ax] = U
            P[..., v_ax] = W
            base = sum(len(v) for v in verts)
            verts.append(P.reshape(-1, 3))
            idx = base + np.arange((q + 1) ** 2).reshape(q + 1, q + 1)
            a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
            c, d = idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
            t = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
            e_u, e_v = np.eye(3)[u_ax], np.eye(3)[v_ax]
            if np.dot(np.cross(e_u, e_v), np.eye(3)[axis]) * sign < 0:
                t = t[:, [0, 2, 1]]
            tris.append(t)
    V = np.concatenate(verts)
    T = np.concatenate(tris)
    key = np.round(V * 4 * q).astype(np.int64)
    _, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    return SimplicialManifold(V[first], inv.ravel()[T])


def dumbbell_polygon(gap=0.1, n_side=8):
    """Planar loop with two lobes joined by a thin neck of width ``gap``.

    Points across the neck are ``gap`` apart in space but far apart along the
    curve; used to exercise chart-radius selection.
    """
    h = gap / 2
    outline = np.array([
        [-0.25, -h], [-0.25, -0.5], [-1.0, -0.5], [-1.0, 0.5], [-0.25, 0.5], [-0.25, h],
        [0.25, h], [0.25, 0.5], [1.0, 0.5], [1.0, -0.5], [0.25, -0.5], [0.25, -h],
    ])
    pts = []
    for i in range(len(outline)):
        a, b = outline[i], outline[(i + 1) % len(outline)]
        steps = max(1, int(np.ceil(np.linalg.norm(b - a) * n_side)))
        t = np.arange(steps) / steps
        pts.append(a + t[:, None] * (b - a))
    V = np.concatenate(pts)
    m = len(V)
    S = np.stack([np.arange(m), (np.arange(m) + 1) % m], axis=1)
    return SimplicialManifold(V, S)
