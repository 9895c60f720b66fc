"""
Reconstruction quality metrics: RMS point-to-surface distance and discrete
curvature statistics, plus a small table formatter.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

log = logging.getLogger(__name__)


def closest_points_on_triangles(p, a, b, c):
    """Closest point on triangle (a, b, c) to p, row-wise.

    Region classification after Ericson, *Real-Time Collision Detection*,
    section 5.1.5. All arguments are ``(N, 3)``.
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    out = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    def take(mask, value):
        sel = mask & ~done
        out[sel] = value[sel] if np.ndim(value) == 2 else value
        done[sel] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        take((d1 <= 0) & (d2 <= 0), a)
        take((d3 >= 0) & (d4 <= d3), b)
        v = d1 / (d1 - d3)
        take((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v[:, None] * ab)
        take((d6 >= 0) & (d5 <= d6), c)
        w = d2 / (d2 - d6)
        take((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w[:, None] * ac)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        take((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + w[:, None] * (c - b))
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        take(np.ones(len(p), dtype=bool), a + ab * v[:, None] + ac * w[:, None])

    # degenerate (collinear) triangles: nearest of the three edges
    flat = ~np.isfinite(out).all(axis=1)
    if flat.any():
        q = p[flat]
        cands = [_closest_on_segment(q, s0[flat], s1[flat])
                 for s0, s1 in ((a, b), (b, c), (c, a))]
        dist = np.stack([np.linalg.norm(q - x, axis=1) for x in cands])
        out[flat] = np.stack(cands)[np.argmin(dist, axis=0), np.arange(len(q))]
    return out


def _closest_on_segment(p, a, b):
    ab = b - a
    L = np.einsum("ij,ij->i", ab, ab)
    t = np.einsum("ij,ij->i", p - a, ab) / np.where(L > 0, L, 1.0)
    return a + np.clip(t, 0.0, 1.0)[:, None] * ab


def point_triangle_distance(p, a, b, c):
    return np.linalg.norm(p - closest_points_on_triangles(p, a, b, c), axis=1)


def nearest_distances(points, mesh, k=8):
    """Exact distance from each point to the nearest triangle of ``mesh``.

    A KD-tree over triangle centroids gives an upper bound from the ``k``
    closest centroids; every triangle whose centroid lies within that bound
    plus the largest centroid-to-vertex radius is then checked exactly.
    """
    if mesh.n_triangles == 0:
        raise ValueError("mesh has no triangles")
    points = np.asarray(points, dtype=np.float64)
    tri = mesh.vertices[mesh.triangles]  # (T, 3, 3)
    cent = tri.mean(axis=1)
    rad = np.linalg.norm(tri - cent[:, None, :], axis=2).max()
    tree = cKDTree(cent)
    k = min(k, mesh.n_triangles)
    _, idx = tree.query(points, k=k)
    idx = idx.reshape(len(points), k)

    rows = np.repeat(np.arange(len(points)), k)
    cand = idx.ravel()
    d = point_triangle_distance(points[rows], tri[cand, 0], tri[cand, 1], tri[cand, 2])
    upper = d.reshape(-1, k).min(axis=1)

    balls = tree.query_ball_point(points, upper + rad + 1e-12)
    lens = np.fromiter((len(b) for b in balls), dtype=np.int64, count=len(points))
    rows = np.repeat(np.arange(len(points)), lens)
    cand = np.fromiter((i for b in balls for i in b), dtype=np.int64, count=int(lens.sum()))
    d = point_triangle_distance(points[rows], tri[cand, 0], tri[cand, 1], tri[cand, 2])
    best = np.full(len(points), np.inf)
    np.minimum.at(best, rows, d)
    return np.minimum(best, upper)


def rms_distance(samples, mesh):
    """Root mean square distance from the sample points to ``mesh``."""
    points = samples.points if hasattr(samples, "points") else samples
    d = nearest_distances(points, mesh)
    return float(np.sqrt(np.mean(d * d)))


# ---------------------------------------------------------------------------
# curvature

@dataclass
class CurvatureStats:
    avg_mean: float
    max_mean: float
    avg_gauss: float
    max_gauss: float
    n_vertices: int = 0
    excluded_boundary: int = 0
    degenerate_triangles: int = 0


def vertex_curvatures(mesh):
    """Per-vertex |H| and K.

    K is the angle deficit and |H| the magnitude of the cotangent Laplacian
    of the positions divided by 2, both normalised by a third of the
    one-ring area. Zero-area triangles are ignored. Returns ``(H, K,
    valid)`` where ``valid`` is False for boundary and isolated vertices.
    """
    V = mesh.vertices
    T = mesh.triangles
    nv = len(V)
    p = V[T]
    e0 = p[:, 2] - p[:, 1]  # opposite corner 0
    e1 = p[:, 0] - p[:, 2]
    e2 = p[:, 1] - p[:, 0]
    cr = np.cross(e2, -e1)
    dbl_area = np.linalg.norm(cr, axis=1)
    scale = np.linalg.norm(np.stack([e0, e1, e2], axis=1), axis=2).max(axis=1)
    good = dbl_area > 1e-14 * np.maximum(scale, 1e-300) ** 2
    n_bad = int((~good).sum())
    T, p, e0, e1, e2, dbl_area = T[good], p[good], e0[good], e1[good], e2[good], dbl_area[good]

    def angle(u, v):
        return np.arctan2(np.linalg.norm(np.cross(u, v), axis=1), np.einsum("ij,ij->i", u, v))

    ang = np.stack([angle(e2, -e1), angle(e0, -e2), angle(e1, -e0)], axis=1)
    cot = 1.0 / np.tan(ang)

    area = np.zeros(nv)
    np.add.at(area, T.ravel(), np.repeat(dbl_area / 6.0, 3))
    angsum = np.zeros(nv)
    np.add.at(angsum, T.ravel(), ang.ravel())

    lap = np.zeros((nv, 3))
    # corner c's cotangent weights the edge opposite to it
    for c, (i, j) in enumerate(((1, 2), (2, 0), (0, 1))):
        w = cot[:, c][:, None]
        d = p[:, j] - p[:, i]
        np.add.at(lap, T[:, i], w * d)
        np.add.at(lap, T[:, j], -w * d)

    # boundary edges are used by exactly one triangle
    e = np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
    e.sort(axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    boundary = np.zeros(nv, dtype=bool)
    boundary[uniq[counts != 2].ravel()] = True
    valid = (area > 0) & ~boundary

    with np.errstate(divide="ignore", invalid="ignore"):
        H = np.linalg.norm(lap, axis=1) / (4.0 * area)
        K = (2 * np.pi - angsum) / area
    H[~valid] = np.nan
    K[~valid] = np.nan
    return H, K, valid, n_bad


def curvature_stats(mesh):
    H, K, valid, n_bad = vertex_curvatures(mesh)
    used = np.zeros(mesh.n_vertices, dtype=bool)
    used[mesh.triangles.ravel()] = True
    excluded = int((used & ~valid).sum())
    if n_bad:
        log.debug("skipped %d degenerate triangles", n_bad)
    if not valid.any():
        raise ValueError("mesh has no interior vertices")
    h, k = H[valid], K[valid]
    return CurvatureStats(float(h.mean()), float(h.max()), float(k.mean()), float(k.max()),
                          int(valid.sum()), excluded, n_bad)


# ---------------------------------------------------------------------------
# report

COLUMNS = ("model", "triangles", "rms", "avg_mean", "max_mean", "avg_gauss", "max_gauss")


def report_row(label, mesh, samples):
    c = curvature_stats(mesh)
    return {"model": str(label), "triangles": mesh.n_triangles,
            "rms": rms_distance(samples, mesh),
            "avg_mean": c.avg_mean, "max_mean": c.max_mean,
            "avg_gauss": c.avg_gauss, "max_gauss": c.max_gauss}


def report(rows):
    """Build table rows from ``(label, mesh, samples)`` triples."""
    if not rows:
        raise ValueError("report needs at least one row")
    return [report_row(*r) for r in rows]


def _cell(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def format_table(table, units=None):
    """Aligned plain-text table."""
    head = list(COLUMNS)
    body = [[_cell(r[c]) for c in COLUMNS] for r in table]
    widths = [max(len(h), *(len(b[i]) for b in body)) for i, h in enumerate(head)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(head, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(b, widths)) for b in body]
    if units:
        lines.append(f"(distances in {units}; mean curvature 1/{units}, "
                     f"Gaussian curvature 1/{units}^2)")
    return "\n".join(lines)


def format_tsv(table):
    lines = ["\t".join(COLUMNS)]
    lines += ["\t".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in COLUMNS)
              for r in table]
    return "\n".join(lines)
