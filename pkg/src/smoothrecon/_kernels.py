"""Jitted inner loops of the Gauss-Seidel solver.

The smoothness operator is ``A = sum_t s_t D_t^T W D_t`` where every ``D_t``
is a small finite-difference stencil evaluated at each grid vertex with zero
padding, ``s_t`` a per-term scale and ``W`` a per-vertex weight. Stencils are
packed as ``offs[t, s, :]`` / ``coefs[t, s]`` with ``nst[t]`` valid entries.

Two sweeps exist. :func:`sweep` handles a general weight and keeps
``r[..., t] = D_t x`` up to date incrementally, so a vertex update touches
only the stencil rows that contain it. :func:`sweep_padded` is the fast path
for unit weights. All grids are Fortran ordered so the innermost x loop is
contiguous.
"""

import numba as nb
import numpy as np

# no nnan/ninf: the sweeps must still see non-finite updates
_opts = {"nogil": True, "cache": True, "fastmath": {"nsz", "arcp", "contract", "afn", "reassoc"}}


@nb.njit(**_opts)
def residuals(x, offs, coefs, nst, r):
    m, n, l = x.shape
    for t in range(offs.shape[0]):
        for k in range(l):
            for j in range(n):
                for i in range(m):
                    acc = 0.0
                    for s in range(nst[t]):
                        a = i + offs[t, s, 0]
                        b = j + offs[t, s, 1]
                        c = k + offs[t, s, 2]
                        if 0 <= a < m and 0 <= b < n and 0 <= c < l:
                            acc += coefs[t, s] * x[a, b, c]
                    r[i, j, k, t] = acc


@nb.njit(**_opts)
def diagonal(shape, offs, coefs, nst, scales, w, out):
    m, n, l = shape[0], shape[1], shape[2]
    for k in range(l):
        for j in range(n):
            for i in range(m):
                acc = 0.0
                for t in range(offs.shape[0]):
                    for s in range(nst[t]):
                        a = i - offs[t, s, 0]
                        b = j - offs[t, s, 1]
                        c = k - offs[t, s, 2]
                        if 0 <= a < m and 0 <= b < n and 0 <= c < l:
                            acc += scales[t] * w[a, b, c] * coefs[t, s] * coefs[t, s]
                out[i, j, k] = acc


@nb.njit(**_opts)
def sweep(x, rhs, diag, offs, coefs, nst, scales, w, r,
          active, use_active, clamp, lo, hi):
    """One lexicographic (z, y, x nesting, x fastest) Gauss-Seidel sweep.

    Returns ``(max_abs_change, bad)`` where ``bad`` is the linear index of
    the first vertex that became non-finite, or -1.
    """
    m, n, l = x.shape
    T = offs.shape[0]
    maxd = 0.0
    for k in range(l):
        for j in range(n):
            for i in range(m):
                if use_active and not active[i, j, k]:
                    continue
                inner = 1 <= i < m - 1 and 1 <= j < n - 1 and 1 <= k < l - 1
                acc = 0.0
                for t in range(T):
                    st = scales[t]
                    for s in range(nst[t]):
                        a = i - offs[t, s, 0]
                        b = j - offs[t, s, 1]
                        c = k - offs[t, s, 2]
                        if inner or (0 <= a < m and 0 <= b < n and 0 <= c < l):
                            acc += coefs[t, s] * st * w[a, b, c] * r[a, b, c, t]
                old = x[i, j, k]
                new = old + (rhs[i, j, k] - acc) / diag[i, j, k]
                if clamp:
                    if new < lo:
                        new = lo
                    elif new > hi:
                        new = hi
                if not np.isfinite(new):
                    return maxd, i + m * (j + n * k)
                d = new - old
                if d != 0.0:
                    x[i, j, k] = new
                    for t in range(T):
                        for s in range(nst[t]):
                            a = i - offs[t, s, 0]
                            b = j - offs[t, s, 1]
                            c = k - offs[t, s, 2]
                            if inner or (0 <= a < m and 0 <= b < n and 0 <= c < l):
                                r[a, b, c, t] += coefs[t, s] * d
                    ad = abs(d)
                    if ad > maxd:
                        maxd = ad
    return maxd, -1


@nb.njit(**_opts)
def boundary_rows(shape, pad, offs, coefs, nst, scales):
    """Rows of ``A`` for the outermost grid layer, in sweep order.

    Returns CSR arrays ``(ptr, lin, val, diag)``; ``lin`` holds offsets into
    the padded flat array and excludes the diagonal.
    """
    m, n, l = shape[0], shape[1], shape[2]
    M = m + 2 * pad
    N = n + 2 * pad
    count = m * n * l - max(m - 2, 0) * max(n - 2, 0) * max(l - 2, 0)
    ptr = np.zeros(count + 1, dtype=np.int64)
    lin = np.zeros(count * 125, dtype=np.int64)
    val = np.zeros(count * 125)
    diag = np.zeros(count)
    local = np.zeros((5, 5, 5))
    row = 0
    nnz = 0
    for k in range(l):
        for j in range(n):
            for i in range(m):
                if 1 <= i < m - 1 and 1 <= j < n - 1 and 1 <= k < l - 1:
                    continue
                local[:] = 0.0
                for t in range(offs.shape[0]):
                    for s in range(nst[t]):
                        a = i - offs[t, s, 0]
                        b = j - offs[t, s, 1]
                        c = k - offs[t, s, 2]
                        if not (0 <= a < m and 0 <= b < n and 0 <= c < l):
                            continue
                        for s2 in range(nst[t]):
                            dx = offs[t, s2, 0] - offs[t, s, 0]
                            dy = offs[t, s2, 1] - offs[t, s, 1]
                            dz = offs[t, s2, 2] - offs[t, s, 2]
                            local[dx + 2, dy + 2, dz + 2] += scales[t] * coefs[t, s] * coefs[t, s2]
                diag[row] = local[2, 2, 2]
                for dz in range(-2, 3):
                    for dy in range(-2, 3):
                        for dx in range(-2, 3):
                            cval = local[dx + 2, dy + 2, dz + 2]
                            if cval == 0.0 or (dx == 0 and dy == 0 and dz == 0):
                                continue
                            if not (0 <= i + dx < m and 0 <= j + dy < n and 0 <= k + dz < l):
                                continue
                            lin[nnz] = dx + M * (dy + N * dz)
                            val[nnz] = cval
                            nnz += 1
                row += 1
                ptr[row] = nnz
    return ptr, lin[:nnz], val[:nnz], diag


@nb.njit(**_opts)
def sweep_padded(xp, rhs, pad, lin_offs, lin_coefs, center, bptr, blin, bval, bdiag,
                 active, use_active, clamp, lo, hi):
    """Gauss-Seidel sweep for an unweighted operator on a zero-padded grid.

    ``xp`` is the solution flattened x-fastest with ``pad`` layers of zeros on
    every side. Away from the boundary the operator is the constant stencil
    ``center * x[v] + sum lin_coefs * x[v + lin_offs]``; outermost-layer rows
    come from :func:`boundary_rows`.
    """
    m, n, l = rhs.shape
    M = m + 2 * pad
    N = n + 2 * pad
    K = lin_offs.shape[0]
    inv_center = 1.0 / center
    maxd = 0.0
    row = 0
    for k in range(l):
        for j in range(n):
            base = pad + M * ((j + pad) + N * (k + pad))
            row_inner = 1 <= j < n - 1 and 1 <= k < l - 1
            for i in range(m):
                inner = row_inner and 1 <= i < m - 1
                if use_active and not active[i, j, k]:
                    if not inner:
                        row += 1
                    continue
                v = base + i
                old = xp[v]
                acc = 0.0
                if inner:
                    for q in range(K):
                        acc += lin_coefs[q] * xp[v + lin_offs[q]]
                    new = (rhs[i, j, k] - acc) * inv_center
                else:
                    for q in range(bptr[row], bptr[row + 1]):
                        acc += bval[q] * xp[v + blin[q]]
                    new = (rhs[i, j, k] - acc) / bdiag[row]
                    row += 1
                if clamp:
                    if new < lo:
                        new = lo
                    elif new > hi:
                        new = hi
                if not np.isfinite(new):
                    return maxd, i + m * (j + n * k)
                d = abs(new - old)
                xp[v] = new
                if d > maxd:
                    maxd = d
    return maxd, -1
