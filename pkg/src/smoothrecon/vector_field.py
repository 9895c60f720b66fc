"""
Smoothed normal field and its divergence.

Each sample's orientation vector is splatted onto the eight corners of its
cell with trilinear weights, blurred by repeated 3-tap box filters (an
approximation of a Gaussian), and differentiated with central differences.
The resulting divergence grid is the linear term of the energy.
"""

import numpy as np

from .volume import cell_corners, linear_index

DEFAULT_PASSES = 3


def _grid_samples(samples):
    if getattr(samples, "space", "grid") != "grid":
        raise ValueError("samples must be in grid coordinates (see to_grid)")
    return samples.points, samples.normals


def splat_normals(samples, dims):
    """Accumulate trilinearly weighted normals into an ``(m, n, l, 3)`` grid."""
    dims = tuple(int(d) for d in dims)
    points, normals = _grid_samples(samples)
    out = np.zeros(dims + (3,))
    if len(points) == 0:
        return out
    corners, weights = cell_corners(points, dims)
    # bincount sums in index order, so the result does not depend on how the
    # samples would be partitioned beyond float reassociation.
    lin = linear_index(corners, dims).ravel()
    size = int(np.prod(dims))
    for c in range(3):
        w = (weights * normals[:, c:c + 1]).ravel()
        out[..., c] = np.bincount(lin, weights=w, minlength=size).reshape(dims, order="F")
    return out


def box_smooth(g, passes=DEFAULT_PASSES):
    """Apply a normalised [1, 1, 1]/3 filter along x, y and z, ``passes`` times.

    Works on scalar ``(m, n, l)`` or vector ``(m, n, l, 3)`` grids; values
    beyond the grid are taken as zero.
    """
    if passes < 1:
        raise ValueError("passes must be >= 1")
    out = np.array(g, dtype=np.float64)
    for _ in range(passes):
        for axis in range(3):
            src = out
            out = src.copy()
            lo = [slice(None)] * src.ndim
            hi = [slice(None)] * src.ndim
            lo[axis] = slice(None, -1)
            hi[axis] = slice(1, None)
            out[tuple(hi)] += src[tuple(lo)]
            out[tuple(lo)] += src[tuple(hi)]
            out /= 3.0
    return out


def divergence(F):
    """Central-difference divergence of a vector grid (h = 1).

    Boundary voxels use one-sided first differences.
    """
    F = np.asarray(F, dtype=np.float64)
    if min(F.shape[:3]) < 3:
        raise ValueError(f"divergence needs at least 3 vertices per axis, got {F.shape[:3]}")
    return (np.gradient(F[..., 0], axis=0)
            + np.gradient(F[..., 1], axis=1)
            + np.gradient(F[..., 2], axis=2))


def build_divergence(samples, dims, passes=DEFAULT_PASSES):
    """divergence(box_smooth(splat_normals(samples, dims), passes))."""
    return divergence(box_smooth(splat_normals(samples, dims), passes))
