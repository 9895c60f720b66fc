"""
Regular-grid helpers.

Grids are plain numpy arrays indexed ``g[i, j, k]`` (x, y, z). A scalar grid
has shape ``(m, n, l)``, a vector grid ``(m, n, l, 3)``. Whenever a grid is
flattened the x index runs fastest, i.e. ``g.ravel(order="F")``; see
:func:`flatten` and :func:`linear_index`.
"""

import numpy as np

# Cell corner offsets, in the order the trilinear weights are listed:
# (1-dx)(1-dy)(1-dz), dx(1-dy)(1-dz), (1-dx)dy(1-dz), (1-dx)(1-dy)dz,
# dx(1-dy)dz, (1-dx)dy dz, dx dy(1-dz), dx dy dz
CORNER_OFFSETS = np.array([
    [0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1],
    [1, 0, 1], [0, 1, 1], [1, 1, 0], [1, 1, 1],
], dtype=np.int64)


def flatten(g):
    """Linear x-fastest layout of a scalar grid."""
    return np.asarray(g).ravel(order="F")


def unflatten(values, dims):
    return np.asarray(values).reshape(tuple(dims), order="F")


def linear_index(idx, dims):
    """x-fastest linear index of integer grid coordinates ``idx[..., 3]``."""
    idx = np.asarray(idx)
    m, n, _ = dims
    return idx[..., 0] + m * (idx[..., 1] + n * idx[..., 2])


def cell_corners(points, dims):
    """Vectorised trilinear weights.

    Returns ``(corners, weights)`` with shapes ``(N, 8, 3)`` and ``(N, 8)``.
    Points on the upper boundary of an axis fall in the last cell.
    """
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    dims_arr = np.asarray(dims)
    if np.any(dims_arr < 2):
        raise ValueError(f"grid {tuple(dims)} needs at least 2 vertices per axis")
    upper = dims_arr - 1
    outside = ~np.all((p >= 0) & (p <= upper), axis=1)
    if outside.any():
        i = int(np.argmax(outside))
        raise ValueError(f"point {p[i].tolist()} outside grid {tuple(dims)}")

    base = np.minimum(np.floor(p).astype(np.int64), upper - 1)
    d = p - base
    dx, dy, dz = d[:, 0], d[:, 1], d[:, 2]
    ex, ey, ez = 1.0 - dx, 1.0 - dy, 1.0 - dz
    weights = np.stack([
        ex * ey * ez, dx * ey * ez, ex * dy * ez, ex * ey * dz,
        dx * ey * dz, ex * dy * dz, dx * dy * ez, dx * dy * dz,
    ], axis=1)
    corners = base[:, None, :] + CORNER_OFFSETS[None, :, :]
    return corners, weights


def trilinear_weights(p, dims):
    """The eight ``(vertex, weight)`` pairs of the cell containing ``p``."""
    corners, weights = cell_corners(np.reshape(p, (1, 3)), dims)
    return [(tuple(int(c) for c in v), float(w)) for v, w in zip(corners[0], weights[0])]


def interpolate(g, points):
    """Trilinear interpolation of scalar grid ``g`` at many points."""
    corners, weights = cell_corners(points, g.shape[:3])
    vals = g[corners[..., 0], corners[..., 1], corners[..., 2]]
    if vals.ndim == 3:  # vector grid
        return np.einsum("nc,ncd->nd", weights, vals)
    return np.sum(weights * vals, axis=1)


def sample_trilinear(g, p):
    return float(interpolate(g, np.reshape(p, (1, 3)))[0])


def downsample_sum(g):
    """Halve each axis by summing 2x2x2 blocks; odd trailing blocks sum
    whatever cells exist. The grid total is preserved."""
    g = np.asarray(g)
    dims = g.shape[:3]
    if min(dims) < 2:
        raise ValueError(f"cannot downsample grid of shape {dims}")
    pad = [(0, d % 2) for d in dims] + [(0, 0)] * (g.ndim - 3)
    gp = np.pad(g, pad) if any(d % 2 for d in dims) else g
    m, n, l = (d // 2 for d in gp.shape[:3])
    rest = gp.shape[3:]
    return gp.reshape((m, 2, n, 2, l, 2) + rest).sum(axis=(1, 3, 5))


def coarse_dims(dims):
    return tuple((int(d) + 1) // 2 for d in dims)


def _axis_interp(n_fine, n_coarse):
    """Index pairs and weights mapping fine index i to coarse coordinate i/2."""
    pos = np.minimum(np.arange(n_fine) / 2.0, n_coarse - 1)
    if n_coarse == 1:
        z = np.zeros(n_fine, dtype=np.int64)
        return z, z, np.zeros(n_fine)
    lo = np.minimum(np.floor(pos).astype(np.int64), n_coarse - 2)
    return lo, lo + 1, pos - lo


def upsample_trilinear(g, target_dims):
    """Prolong a coarse grid to ``target_dims`` (the next finer pyramid level)."""
    g = np.asarray(g, dtype=np.float64)
    target_dims = tuple(int(d) for d in target_dims)
    if coarse_dims(target_dims) != g.shape[:3]:
        raise ValueError(f"grid {g.shape[:3]} is not the coarse level of {target_dims}")
    out = g
    for axis, nf in enumerate(target_dims):
        lo, hi, t = _axis_interp(nf, g.shape[axis])
        shape = [1] * out.ndim
        shape[axis] = nf
        t = t.reshape(shape)
        out = np.take(out, lo, axis=axis) * (1 - t) + np.take(out, hi, axis=axis) * t
    return out


def dump_grid(g, path):
    """Raw debug dump: three little-endian int32 dims, then float32 values
    in x-fastest order."""
    g = np.asarray(g)
    with open(path, "wb") as fh:
        fh.write(np.asarray(g.shape[:3], dtype="<i4").tobytes())
        fh.write(flatten(g).astype("<f4").tobytes())


def load_grid(path):
    with open(path, "rb") as fh:
        dims = tuple(int(d) for d in np.frombuffer(fh.read(12), dtype="<i4"))
        vals = np.frombuffer(fh.read(), dtype="<f4")
    if vals.size != np.prod(dims):
        raise ValueError(f"{path}: expected {np.prod(dims)} values, found {vals.size}")
    return unflatten(vals.astype(np.float64), dims)
