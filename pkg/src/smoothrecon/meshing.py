"""
Isovalue selection and marching-cubes extraction.

The inside of the surface is where ``f >= gamma``. Vertices live on grid
edges and are keyed by ``3 * (x-fastest index of the edge's lower end) +
axis``; shared edges therefore produce shared vertices and the mesh is
indexed, with vertices sorted by edge key.
"""

import numpy as np

from . import _mc_tables as tables
from .pointcloud_io import TriangleMesh
from .volume import interpolate

# For each cell-local edge: (lower corner offset, axis)
_EDGE_LOWER = np.zeros((12, 3), dtype=np.int64)
_EDGE_AXIS = np.zeros(12, dtype=np.int64)
for _e, (_a, _b) in enumerate(tables.EDGE_CORNERS):
    _ca, _cb = tables.CORNERS[_a], tables.CORNERS[_b]
    _EDGE_LOWER[_e] = np.minimum(_ca, _cb)
    _EDGE_AXIS[_e] = int(np.argmax(np.abs(_cb - _ca)))


def select_isovalue(f, samples):
    """Mean of the trilinearly interpolated field over the sample positions."""
    points = samples.points if hasattr(samples, "points") else np.asarray(samples)
    if len(points) == 0:
        raise ValueError("isovalue needs at least one sample")
    return float(np.mean(interpolate(f, points)))


def marching_cubes(f, gamma, transform=None, compute_normals=False):
    """Extract the ``gamma`` level set of scalar grid ``f``.

    Vertex coordinates are grid coordinates unless ``transform`` (a
    :class:`DomainTransform`) is given, in which case they are mapped to world
    coordinates. Triangle normals point from the inside (``f >= gamma``)
    outwards.
    """
    f = np.asarray(f, dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise ValueError("field contains non-finite values")
    if not np.isfinite(gamma):
        raise ValueError("isovalue must be finite")
    m, n, l = f.shape
    below = f < gamma

    # case index per cell, bit c set when corner c is below gamma
    case = np.zeros((m - 1, n - 1, l - 1), dtype=np.int64)
    for c, (dx, dy, dz) in enumerate(tables.CORNERS):
        case |= below[dx:m - 1 + dx, dy:n - 1 + dy, dz:l - 1 + dz].astype(np.int64) << c
    cells = np.argwhere((case != 0) & (case != 255))
    if len(cells) == 0:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    rows = tables.TRIANGLES[case[cells[:, 0], cells[:, 1], cells[:, 2]]]  # (C, 16)
    tri_cell, tri_slot = np.nonzero(rows[:, 0:15:3] >= 0)
    edges = np.stack([rows[tri_cell, 3 * tri_slot + q] for q in range(3)], axis=1)  # (T, 3)

    lower = cells[tri_cell][:, None, :] + _EDGE_LOWER[edges]  # (T, 3, 3)
    keys = 3 * (lower[..., 0] + m * (lower[..., 1] + n * lower[..., 2])) + _EDGE_AXIS[edges]
    uniq, inverse = np.unique(keys.ravel(), return_inverse=True)
    # table order already winds counter-clockwise seen from the f < gamma side
    triangles = inverse.reshape(-1, 3)

    axis = uniq % 3
    lin = uniq // 3
    a = np.stack([lin % m, (lin // m) % n, lin // (m * n)], axis=1)
    b = a.copy()
    b[np.arange(len(b)), axis] += 1
    fa = f[a[:, 0], a[:, 1], a[:, 2]]
    fb = f[b[:, 0], b[:, 1], b[:, 2]]
    t = (gamma - fa) / (fb - fa)
    verts = a.astype(np.float64)
    verts[np.arange(len(verts)), axis] += t

    normals = None
    if compute_normals:
        grad = np.stack(np.gradient(f), axis=-1)
        nv = -interpolate(grad, verts)
        length = np.linalg.norm(nv, axis=1, keepdims=True)
        normals = nv / np.where(length > 0, length, 1.0)
    if transform is not None:
        verts = transform.to_world_points(verts)
    return TriangleMesh(verts, triangles, normals)


def edge_counts(mesh):
    """Unique undirected edges as sorted ``(a, b)`` rows and their triangle counts."""
    t = mesh.triangles
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    e.sort(axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return uniq, counts


def is_watertight(mesh):
    if mesh.n_triangles == 0:
        return False
    _, counts = edge_counts(mesh)
    return bool(np.all(counts == 2))


def euler_characteristic(mesh):
    uniq, _ = edge_counts(mesh)
    used = np.unique(mesh.triangles).size
    return int(used - len(uniq) + mesh.n_triangles)


def signed_volume(mesh):
    """Enclosed volume, positive when triangles face outwards."""
    v = mesh.vertices[mesh.triangles]
    return float(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0)
