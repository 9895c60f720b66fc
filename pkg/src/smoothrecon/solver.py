"""
Discrete energy and its minimisation.

The energy of a grid function ``x`` with linear term ``b`` (the divergence
grid) is ``lam * x^T A x + x^T b``. For the quadratic models ``A`` is a sum
of squared finite-difference stencils with zero padding outside the grid:

* ``MEMBRANE``: forward first differences along x, y, z
* ``SECOND_ORDER``: pure second differences f_xx, f_yy, f_zz
* ``SECOND_ORDER_MIXED``: the above plus 2 * (f_xy^2 + f_xz^2 + f_yz^2)

``TOTAL_VARIATION`` uses ``lam * sum |grad x|`` (forward differences) and is
minimised by lagged-diffusivity reweighting of the membrane operator.

Minimisation is matrix-free Gauss-Seidel, optionally projected onto
``[-1, 1]`` and optionally restricted to a narrow band, run coarse to fine
over a pyramid of grids.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from . import _kernels
from .volume import downsample_sum, upsample_trilinear

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class EnergyModel(IntEnum):
    MEMBRANE = 1
    TOTAL_VARIATION = 2
    SECOND_ORDER = 3
    SECOND_ORDER_MIXED = 4

    @property
    def is_quadratic(self):
        return self is not EnergyModel.TOTAL_VARIATION

    @property
    def order(self):
        """Derivative order of the smoothness term."""
        return 1 if self in (EnergyModel.MEMBRANE, EnergyModel.TOTAL_VARIATION) else 2


@dataclass
class SolverParams:
    lam: float = 0.2
    tol: float = 1e-6
    max_sweeps: int = 2000
    clamp: bool = True
    levels: int = 3
    narrow_band_radius: float | None = None
    tv_eps: float = 1e-4
    tv_max_outer: int = 30
    tv_inner_sweeps: int = 50
    verbose: bool = False
    log_every: int = 25

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.levels < 1 or self.max_sweeps < 1:
            raise ValueError("levels and max_sweeps must be >= 1")
        if self.narrow_band_radius is not None and self.narrow_band_radius < 0:
            raise ValueError("narrow_band_radius must be nonnegative")


class SolveResult(NamedTuple):
    x: np.ndarray
    sweeps: int
    delta: float
    # (sweep, delta, energy) per sweep for Gauss-Seidel, per outer iteration
    # for TV; energy is nan when not tracked
    history: list


# ---------------------------------------------------------------------------
# stencils

_E = np.eye(3, dtype=np.int64)


def stencil_terms(model):
    """``(offsets, coeffs, scale)`` for every squared stencil of ``model``."""
    model = EnergyModel(model)
    terms = []
    if model.order == 1:
        for d in range(3):
            terms.append((np.array([[0, 0, 0], _E[d]]), np.array([-1.0, 1.0]), 1.0))
        return terms
    for d in range(3):
        terms.append((np.array([-_E[d], [0, 0, 0], _E[d]]), np.array([1.0, -2.0, 1.0]), 1.0))
    if model is EnergyModel.SECOND_ORDER_MIXED:
        for a, b in ((0, 1), (0, 2), (1, 2)):
            offs = np.array([_E[a] + _E[b], _E[a] - _E[b], -_E[a] + _E[b], -_E[a] - _E[b]])
            terms.append((offs, np.array([1.0, -1.0, -1.0, 1.0]) / 4.0, 2.0))
    return terms


def _packed(model):
    terms = stencil_terms(model)
    T = len(terms)
    offs = np.zeros((T, 4, 3), dtype=np.int64)
    coefs = np.zeros((T, 4))
    nst = np.zeros(T, dtype=np.int64)
    scales = np.zeros(T)
    for t, (o, c, s) in enumerate(terms):
        offs[t, :len(c)] = o
        coefs[t, :len(c)] = c
        nst[t] = len(c)
        scales[t] = s
    return offs, coefs, nst, scales


def _interior_stencil(model):
    """Nonzero off-center entries of a row of ``A`` far from the boundary."""
    delta = np.zeros((7, 7, 7))
    delta[3, 3, 3] = 1.0
    row = apply_smoothness_operator(delta, model)
    center = row[3, 3, 3]
    row[3, 3, 3] = 0.0
    idx = np.argwhere(row != 0)
    return idx - 3, row[tuple(idx.T)], float(center)


def _shifted(xp, off, shape, pad):
    sl = tuple(slice(pad + o, pad + o + s) for o, s in zip(off, shape))
    return xp[sl]


def apply_stencil(x, offsets, coeffs):
    """``(D x)[u] = sum_s c_s x[u + o_s]`` with zeros outside the grid."""
    xp = np.pad(x, 2)
    out = np.zeros(x.shape)
    for o, c in zip(offsets, coeffs):
        out += c * _shifted(xp, o, x.shape, 2)
    return out


def apply_stencil_adjoint(r, offsets, coeffs):
    """``(D^T r)[w] = sum_s c_s r[w - o_s]``."""
    return apply_stencil(r, -np.asarray(offsets), coeffs)


def _check_quadratic(model):
    model = EnergyModel(model)
    if not model.is_quadratic:
        raise ValueError("total variation has no fixed linear operator; use tv_solve")
    return model


def apply_smoothness_operator(x, model, weight=None):
    """``A x`` for a quadratic model; ``weight`` multiplies every stencil row."""
    model = _check_quadratic(model) if weight is None else EnergyModel(model)
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros(x.shape)
    for offs, coefs, scale in stencil_terms(model):
        r = apply_stencil(x, offs, coefs)
        if weight is not None:
            r = r * weight
        out += scale * apply_stencil_adjoint(r, offs, coefs)
    return out


def smoothness_energy(x, model, weight=None):
    """``x^T A x`` computed as a weighted sum of squared stencil responses."""
    x = np.asarray(x, dtype=np.float64)
    total = 0.0
    for offs, coefs, scale in stencil_terms(model):
        r = apply_stencil(x, offs, coefs)
        sq = r * r if weight is None else weight * r * r
        total += scale * sq.sum()
    return float(total)


def gradient_magnitude(x):
    """Per-vertex |grad x| from zero-padded forward differences."""
    sq = np.zeros(np.shape(x))
    for offs, coefs, _ in stencil_terms(EnergyModel.MEMBRANE):
        g = apply_stencil(x, offs, coefs)
        sq += g * g
    return np.sqrt(sq)


def energy_value(x, b, lam, model):
    """``lam * E_s(x) + x . b``."""
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if x.shape != b.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {b.shape}")
    lam = getattr(lam, "lam", lam)
    if EnergyModel(model) is EnergyModel.TOTAL_VARIATION:
        es = float(gradient_magnitude(x).sum())
    else:
        es = smoothness_energy(x, model)
    return lam * es + float(np.vdot(x, b))


def huber_tv_energy(x, b, lam, eps):
    """TV energy with |g| replaced by g^2/(2 eps) + eps/2 below eps."""
    g = gradient_magnitude(x)
    psi = np.where(g >= eps, g, g * g / (2 * eps) + eps / 2)
    return lam * float(psi.sum()) + float(np.vdot(x, b))


# ---------------------------------------------------------------------------
# Gauss-Seidel

def gauss_seidel_solve(b, model, params, x0=None, active=None, weight=None,
                       track_energy=False, level=0):
    """Minimise ``lam x^T A x + x^T b`` by solving ``A x = -b / (2 lam)``.

    Sweeps are lexicographic and in place. With ``params.clamp`` every update
    is projected onto [-1, 1]. Vertices where ``active`` is False keep their
    ``x0`` value. Stops when the largest change of a sweep is <= ``tol`` or
    after ``max_sweeps`` sweeps.
    """
    model = EnergyModel(model)
    if weight is None:
        _check_quadratic(model)
    b = np.asarray(b, dtype=np.float64)
    shape = b.shape
    x = np.zeros(shape, order="F") if x0 is None else np.array(x0, dtype=np.float64, order="F")
    if x.shape != shape:
        raise ValueError(f"x0 shape {x.shape} != b shape {shape}")
    lam = params.lam
    rhs = np.asfortranarray(-b / (2.0 * lam))

    offs, coefs, nst, scales = _packed(model)
    use_w = weight is not None
    w = np.asfortranarray(weight, dtype=np.float64) if use_w else None
    use_active = active is not None
    act = (np.asfortranarray(active, dtype=np.bool_) if use_active
           else np.ones((1, 1, 1), dtype=np.bool_, order="F"))

    if use_w:
        diag = np.zeros(shape, order="F")
        _kernels.diagonal(np.array(shape, dtype=np.int64), offs, coefs, nst, scales, w, diag)
        r = np.zeros(shape + (len(nst),), order="F")

        def run_sweep():
            # refresh stencil responses so incremental updates cannot drift
            _kernels.residuals(x, offs, coefs, nst, r)
            return _kernels.sweep(x, rhs, diag, offs, coefs, nst, scales, w, r,
                                  act, use_active, params.clamp, -1.0, 1.0)

        def current():
            return x
    else:
        pad = 2
        xp = np.pad(x, pad).ravel(order="F")
        M, N = shape[0] + 2 * pad, shape[1] + 2 * pad
        st_offs, st_coefs, center = _interior_stencil(model)
        lin = st_offs[:, 0] + M * (st_offs[:, 1] + N * st_offs[:, 2])
        brows = _kernels.boundary_rows(np.array(shape, dtype=np.int64), pad,
                                       offs, coefs, nst, scales)

        def run_sweep():
            return _kernels.sweep_padded(xp, rhs, pad, lin, st_coefs, center, *brows,
                                         act, use_active, params.clamp, -1.0, 1.0)

        def current():
            g = xp.reshape((M, N, -1), order="F")
            return g[pad:-pad, pad:-pad, pad:-pad]

    def energy():
        if use_w:
            return lam * smoothness_energy(x, model, w) + float(np.vdot(x, b))
        return energy_value(current(), b, lam, model)

    history = []
    track = track_energy or params.verbose
    delta = np.inf
    sweeps = 0
    for sweeps in range(1, params.max_sweeps + 1):
        delta, bad = run_sweep()
        if bad >= 0:
            idx = np.unravel_index(bad, shape, order="F")
            raise SolverError(f"non-finite value at voxel {tuple(int(i) for i in idx)} "
                              f"(level {level}, sweep {sweeps})")
        e = energy() if track else np.nan
        history.append((sweeps, delta, e))
        if params.verbose and (sweeps % params.log_every == 0 or delta <= params.tol):
            log.info("level=%d sweep=%d delta=%.6e energy=%.10e", level, sweeps, delta, e)
        if delta <= params.tol:
            break
    x = current()
    return SolveResult(np.ascontiguousarray(x), sweeps, float(delta), history)


# ---------------------------------------------------------------------------
# total variation

def tv_solve(b, params, x0=None, active=None, level=0):
    """Minimise ``lam sum |grad x| + x . b`` by lagged diffusivity.

    Each outer iteration freezes the weights ``1 / max(|grad x|, eps)`` and
    runs Gauss-Seidel on the resulting weighted membrane energy. The
    eps-smoothed (Huber) TV energy never increases between outer iterations.
    """
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros(b.shape) if x0 is None else np.array(x0, dtype=np.float64)
    eps, lam = params.tv_eps, params.lam
    inner = replace(params, max_sweeps=params.tv_inner_sweeps, verbose=False)
    e_prev = huber_tv_energy(x, b, lam, eps)
    history = [(0, np.inf, e_prev)]
    delta = np.inf
    outer = 0
    for outer in range(1, params.tv_max_outer + 1):
        w = 0.5 / np.maximum(gradient_magnitude(x), eps)
        res = gauss_seidel_solve(b, EnergyModel.MEMBRANE, inner, x0=x, active=active,
                                 weight=w, level=level)
        e = huber_tv_energy(res.x, b, lam, eps)
        if e > e_prev + 1e-9 * max(1.0, abs(e_prev)):
            raise SolverError(f"TV energy increased at outer iteration {outer}: {e_prev} -> {e}")
        delta = float(np.max(np.abs(res.x - x)))
        x = res.x
        history.append((outer, delta, e))
        log.info("level=%d irls_outer=%d inner_sweeps=%d delta=%.6e energy=%.10e",
                 level, outer, res.sweeps, delta, e)
        e_prev = e
        if delta <= params.tol:
            break
    return SolveResult(x, outer, delta, history)


# ---------------------------------------------------------------------------
# multi-scale driver

@dataclass
class LevelInfo:
    level: int
    dims: tuple
    lam: float
    sweeps: int
    delta: float


class MultiscaleResult(NamedTuple):
    x: np.ndarray
    levels: list  # LevelInfo, coarsest first

    @property
    def fine_sweeps(self):
        return self.levels[-1].sweeps


def level_lambda(lam, model, level):
    """Smoothness weight on pyramid level ``level`` (0 = finest).

    Coarse cells are twice as wide and the linear term is summed, so a
    derivative-order-p quadratic term picks up 2**(3 - 2p) per level (TV:
    2**(3 - p)) to keep every level a discretisation of the same energy.
    """
    model = EnergyModel(model)
    p = model.order
    exponent = (3 - p) if model is EnergyModel.TOTAL_VARIATION else (3 - 2 * p)
    return lam * 2.0 ** (exponent * level)


def narrow_band(dims, points, radius):
    """Vertices within ``radius`` cells of any grid-space point."""
    occupied = np.zeros(dims, dtype=bool)
    idx = np.clip(np.rint(points).astype(np.int64), 0, np.array(dims) - 1)
    occupied[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    dist = ndimage.distance_transform_edt(~occupied)
    return dist <= radius


def multiscale_solve(b_fine, model, params, points=None):
    """Coarse-to-fine solve over ``params.levels`` grids.

    The linear term is summed down the pyramid; the coarsest level starts
    from zero and each finer level starts from the prolonged coarser
    solution. ``points`` (grid coordinates of the finest level) are needed
    only for the narrow band.
    """
    model = EnergyModel(model)
    b_fine = np.asarray(b_fine, dtype=np.float64)
    need = 4 * 2 ** (params.levels - 1)
    if min(b_fine.shape) < need:
        raise ValueError(f"grid {b_fine.shape} too small for {params.levels} levels "
                         f"(need >= {need} per axis)")
    if params.narrow_band_radius is not None and points is None:
        raise ValueError("narrow band needs the sample points")

    pyramid = [b_fine]
    for _ in range(params.levels - 1):
        pyramid.append(downsample_sum(pyramid[-1]))

    x = None
    infos = []
    for level in range(params.levels - 1, -1, -1):
        b = pyramid[level]
        if x is not None:
            x = upsample_trilinear(x, b.shape)
        active = None
        if params.narrow_band_radius is not None and x is not None:
            active = narrow_band(b.shape, np.asarray(points) / 2 ** level,
                                 params.narrow_band_radius)
        p = replace(params, lam=level_lambda(params.lam, model, level))
        if model.is_quadratic:
            res = gauss_seidel_solve(b, model, p, x0=x, active=active, level=level)
        else:
            res = tv_solve(b, p, x0=x, active=active, level=level)
        x = res.x
        infos.append(LevelInfo(level, b.shape, p.lam, res.sweeps, res.delta))
        log.info("level=%d dims=%s lambda=%.6g sweeps=%d delta=%.3e",
                 level, "x".join(map(str, b.shape)), p.lam, res.sweeps, res.delta)
    return MultiscaleResult(x, infos)

