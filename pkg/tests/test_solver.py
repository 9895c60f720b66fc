import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from smoothrecon.solver import (
    EnergyModel, SolverError, SolverParams, apply_smoothness_operator, energy_value,
    gauss_seidel_solve, gradient_magnitude, level_lambda, multiscale_solve, narrow_band,
    smoothness_energy, tv_solve,
)

QUADRATIC = [EnergyModel.MEMBRANE, EnergyModel.SECOND_ORDER, EnergyModel.SECOND_ORDER_MIXED]


# ---------------------------------------------------------------------------
# Independent oracles. Stencils are written out from their definitions
# (forward first differences; [1, -2, 1] second differences; the four-point
# mixed difference over 4, counted twice) rather than taken from the solver.

def literal_stencils(model):
    ex, ey, ez = (1, 0, 0), (0, 1, 0), (0, 0, 1)
    model = EnergyModel(model)
    if model is EnergyModel.MEMBRANE:
        return [({(0, 0, 0): -1.0, e: 1.0}, 1.0) for e in (ex, ey, ez)]
    out = []
    for e in (ex, ey, ez):
        neg = tuple(-c for c in e)
        out.append(({neg: 1.0, (0, 0, 0): -2.0, e: 1.0}, 1.0))
    if model is EnergyModel.SECOND_ORDER_MIXED:
        for a, b in ((ex, ey), (ex, ez), (ey, ez)):
            st_ = {}
            for sa, sb in itertools.product((1, -1), repeat=2):
                off = tuple(sa * p + sb * q for p, q in zip(a, b))
                st_[off] = sa * sb / 4.0
            out.append((st_, 2.0))
    return out


def dense_matrix(shape, model):
    """Assemble A = sum_t s_t D_t^T D_t row by row with zero padding."""
    m, n, l = shape
    N = m * n * l
    A = np.zeros((N, N))
    for stencil, scale in literal_stencils(model):
        D = np.zeros((N, N))
        for i, j, k in itertools.product(range(m), range(n), range(l)):
            row = i + m * (j + n * k)
            for (a, b, c), w in stencil.items():
                ii, jj, kk = i + a, j + b, k + c
                if 0 <= ii < m and 0 <= jj < n and 0 <= kk < l:
                    D[row, ii + m * (jj + n * kk)] += w
        A += scale * D.T @ D
    return A


def literal_energy(x, b, lam, model, rows=None):
    """lam * sum over stencil rows of squared responses + sum x b, by loops."""
    m, n, l = x.shape
    es = 0.0
    for stencil, scale in literal_stencils(model):
        for i, j, k in itertools.product(range(m), range(n), range(l)):
            if rows is not None and not rows(i, j, k):
                continue
            acc = 0.0
            for (a, bb, c), w in stencil.items():
                ii, jj, kk = i + a, j + bb, k + c
                if 0 <= ii < m and 0 <= jj < n and 0 <= kk < l:
                    acc += w * x[ii, jj, kk]
            es += scale * acc * acc
    return lam * es + float(np.sum(x * b))


def vec(g):
    return g.ravel(order="F")


def params(**kw):
    base = dict(clamp=False, tol=1e-12, max_sweeps=20000, levels=1)
    base.update(kw)
    return SolverParams(**base)


# ---------------------------------------------------------------------------
# operator

@pytest.mark.parametrize("model", QUADRATIC)
def test_operator_matches_dense(model, rng):
    x = rng.normal(size=(5, 5, 5))
    A = dense_matrix(x.shape, model)
    np.testing.assert_allclose(vec(apply_smoothness_operator(x, model)), A @ vec(x),
                               rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("model", QUADRATIC)
def test_operator_odd_shape(model, rng):
    x = rng.normal(size=(4, 6, 3))
    A = dense_matrix(x.shape, model)
    np.testing.assert_allclose(vec(apply_smoothness_operator(x, model)), A @ vec(x),
                               rtol=1e-12, atol=1e-12)


def test_constant_in_interior_nullspace():
    c = np.full((9, 9, 9), 3.0)
    assert np.abs(apply_smoothness_operator(c, 1)[1:-1, 1:-1, 1:-1]).max() == 0
    for model in (3, 4):
        assert np.abs(apply_smoothness_operator(c, model)[2:-2, 2:-2, 2:-2]).max() == 0


def test_ramp_in_interior_nullspace():
    x = np.indices((9, 9, 9))[0].astype(float)
    for model in (3, 4):
        assert np.abs(apply_smoothness_operator(x, model)[2:-2, 2:-2, 2:-2]).max() < 1e-12


def test_tv_has_no_operator():
    with pytest.raises(ValueError):
        apply_smoothness_operator(np.zeros((4, 4, 4)), EnergyModel.TOTAL_VARIATION)
    with pytest.raises(ValueError):
        gauss_seidel_solve(np.zeros((4, 4, 4)), 2, params())


@pytest.mark.parametrize("model", QUADRATIC)
def test_symmetric(model, rng):
    x, y = rng.normal(size=(2, 6, 6, 6))
    lhs = np.vdot(apply_smoothness_operator(x, model), y)
    rhs = np.vdot(x, apply_smoothness_operator(y, model))
    assert lhs == pytest.approx(rhs, rel=1e-10)


@pytest.mark.parametrize("model", QUADRATIC)
def test_positive_semidefinite(model, rng):
    for _ in range(100):
        x = rng.normal(size=(5, 6, 4)) * rng.uniform(1e-3, 1e3)
        assert np.vdot(x, apply_smoothness_operator(x, model)) >= -1e-12
        assert smoothness_energy(x, model) == pytest.approx(
            np.vdot(x, apply_smoothness_operator(x, model)), rel=1e-10)


@pytest.mark.parametrize("model", QUADRATIC)
def test_dense_matrix_positive_definite(model):
    w = np.linalg.eigvalsh(dense_matrix((4, 4, 4), model))
    assert w.min() > 0


# ---------------------------------------------------------------------------
# energy

@pytest.mark.parametrize("model", [1, 2, 3, 4])
def test_zero_field_zero_energy(model, rng):
    assert energy_value(np.zeros((4, 4, 4)), rng.normal(size=(4, 4, 4)), 0.3, model) == 0


@pytest.mark.parametrize("model", QUADRATIC)
def test_energy_matches_literal_sum(model, rng):
    x, b = rng.normal(size=(2, 4, 4, 4))
    assert energy_value(x, b, 0.7, model) == pytest.approx(literal_energy(x, b, 0.7, model),
                                                           rel=1e-12)


def test_tv_energy_literal(rng):
    x, b = rng.normal(size=(2, 4, 4, 4))
    g = np.zeros_like(x)
    xp = np.pad(x, ((0, 1), (0, 1), (0, 1)))
    for i, j, k in itertools.product(range(4), repeat=3):
        g[i, j, k] = np.sqrt((xp[i + 1, j, k] - x[i, j, k]) ** 2 + (xp[i, j + 1, k] - x[i, j, k]) ** 2
                             + (xp[i, j, k + 1] - x[i, j, k]) ** 2)
    np.testing.assert_allclose(gradient_magnitude(x), g, rtol=1e-14)
    assert energy_value(x, b, 0.5, 2) == pytest.approx(0.5 * g.sum() + np.sum(x * b), rel=1e-12)


def test_energy_shape_mismatch():
    with pytest.raises(ValueError):
        energy_value(np.zeros((4, 4, 4)), np.zeros((4, 4, 5)), 0.2, 4)


@pytest.mark.parametrize("model", QUADRATIC)
def test_gradient_matches_finite_differences(model, rng):
    lam = 0.35
    x, b = rng.normal(size=(2, 6, 6, 6))
    grad = 2 * lam * apply_smoothness_operator(x, model) + b
    h = 1e-5
    for _ in range(20):
        v = tuple(rng.integers(0, 6, 3))
        xp, xm = x.copy(), x.copy()
        xp[v] += h
        xm[v] -= h
        fd = (energy_value(xp, b, lam, model) - energy_value(xm, b, lam, model)) / (2 * h)
        assert fd == pytest.approx(grad[v], rel=1e-6, abs=1e-8)


# ---------------------------------------------------------------------------
# null spaces and lattice symmetry

def interior(i, j, k, shape=(10, 10, 10), r=2):
    return all(r <= c < s - r for c, s in zip((i, j, k), shape))


@given(st.lists(st.floats(-2, 2), min_size=7, max_size=7))
def test_second_order_interior_energy_of_quadratics(c):
    x, y, z = np.indices((10, 10, 10)).astype(float) / 9
    f = c[0] + c[1] * x + c[2] * y + c[3] * z + c[4] * x * x + c[5] * y * y + c[6] * z * z
    # the affine part is free; each square leaves a constant second difference
    es = literal_energy(f, np.zeros_like(f), 1.0, 3, rows=interior)
    expect = 6 ** 3 * sum((2 * ci / 81) ** 2 for ci in c[4:])
    assert es == pytest.approx(expect, rel=1e-9, abs=1e-10)


@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4))
def test_second_order_nullspace_includes_cross_terms(c):
    x, y, z = np.indices((10, 10, 10)).astype(float) / 9
    f = c[0] * x * y + c[1] * y * z + c[2] * x * z + c[3] * x * y * z
    assert literal_energy(f, np.zeros_like(f), 1.0, 3, rows=interior) < 1e-10


@pytest.mark.parametrize("model", QUADRATIC)
def test_lattice_rotations(model, rng):
    f = rng.normal(size=(6, 6, 6))
    e = smoothness_energy(f, model)
    # forward differences see the zero padding on one side only
    turns = () if model is EnergyModel.MEMBRANE else (1, 2, 3)
    for axes in ((0, 1), (0, 2), (1, 2)):
        for k in turns:
            assert smoothness_energy(np.rot90(f, k, axes), model) == pytest.approx(e, rel=1e-10)
    for perm in itertools.permutations(range(3)):
        assert smoothness_energy(np.transpose(f, perm), model) == pytest.approx(e, rel=1e-10)


# ---------------------------------------------------------------------------
# Gauss-Seidel

def test_zero_rhs_is_fixed_point():
    res = gauss_seidel_solve(np.zeros((6, 6, 6)), 4, params())
    assert res.sweeps == 1 and res.delta == 0
    assert not res.x.any()


@pytest.mark.parametrize("model", QUADRATIC)
@pytest.mark.parametrize("shape", [(5, 5, 5), (6, 5, 7)])
def test_gauss_seidel_matches_dense_solve(model, shape, rng):
    b = rng.normal(size=shape)
    lam = 0.2
    A = dense_matrix(shape, model)
    expect = np.linalg.solve(A, -vec(b) / (2 * lam))
    res = gauss_seidel_solve(b, model, params(lam=lam))
    assert np.abs(vec(res.x) - expect).max() <= 1e-8


@pytest.mark.parametrize("model", QUADRATIC)
def test_weighted_path_with_unit_weight_matches(model, rng):
    b = rng.normal(size=(7, 6, 5))
    p = params(max_sweeps=40, tol=1e-30)
    a = gauss_seidel_solve(b, model, p)
    w = gauss_seidel_solve(b, model, p, weight=np.ones(b.shape))
    np.testing.assert_allclose(w.x, a.x, rtol=1e-10, atol=1e-12)


def test_weighted_operator_matches_dense(rng):
    w = rng.uniform(0.5, 2.0, size=(4, 5, 4))
    b = rng.normal(size=w.shape)
    # weighted membrane: sum_d D_d^T W D_d
    m, n, l = w.shape
    N = w.size
    A = np.zeros((N, N))
    for stencil, _ in literal_stencils(1):
        D = np.zeros((N, N))
        for i, j, k in itertools.product(range(m), range(n), range(l)):
            row = i + m * (j + n * k)
            for (a, bb, c), cw in stencil.items():
                if 0 <= i + a < m and 0 <= j + bb < n and 0 <= k + c < l:
                    D[row, (i + a) + m * ((j + bb) + n * (k + c))] += cw
        A += D.T @ np.diag(vec(w)) @ D
    x = rng.normal(size=w.shape)
    np.testing.assert_allclose(vec(apply_smoothness_operator(x, 1, weight=w)), A @ vec(x),
                               rtol=1e-12, atol=1e-12)
    res = gauss_seidel_solve(b, 1, params(lam=0.5), weight=w)
    np.testing.assert_allclose(vec(res.x), np.linalg.solve(A, -vec(b)), atol=1e-8)


@pytest.mark.parametrize("model", QUADRATIC)
def test_clamped_solution(model, rng):
    shape = (6, 6, 6)
    b = rng.normal(size=shape)
    A = dense_matrix(shape, model)
    free = np.linalg.solve(A, -vec(b) / 0.4)
    b = b * 3 / np.abs(free).max()  # unconstrained solution peaks at 3
    free = free * 3 / np.abs(free).max()
    res = gauss_seidel_solve(b, model, params(clamp=True, tol=1e-10))
    assert res.x.min() >= -1 and res.x.max() <= 1
    clipped = np.clip(free, -1, 1).reshape(shape, order="F")
    assert energy_value(res.x, b, 0.2, model) <= energy_value(clipped, b, 0.2, model)


@pytest.mark.parametrize("model", QUADRATIC)
def test_energy_decreases_every_sweep(model, rng):
    b = rng.normal(size=(8, 8, 8))
    res = gauss_seidel_solve(b, model, params(tol=1e-8, max_sweeps=500), track_energy=True)
    h = res.history
    for (_, _, e0), (_, delta, e1) in zip(h, h[1:]):
        if delta > 1e-6:
            assert e1 < e0
        else:  # energy flat to roundoff
            assert e1 <= e0 + 1e-13 * abs(e0)


def test_narrow_band_freezes_outside(rng):
    b = rng.normal(size=(8, 8, 8))
    x0 = rng.normal(size=b.shape)
    active = np.zeros(b.shape, dtype=bool)
    active[2:6, 2:6, 2:6] = True
    for weight in (None, np.ones(b.shape)):
        res = gauss_seidel_solve(b, 4, params(max_sweeps=50), x0=x0, active=active, weight=weight)
        np.testing.assert_array_equal(res.x[~active], x0[~active])
        assert not np.allclose(res.x[active], x0[active])


def test_non_finite_reports_voxel():
    b = np.zeros((6, 6, 6))
    b[2, 3, 4] = np.nan
    with pytest.raises(SolverError, match=r"\(2, 3, 4\)"):
        gauss_seidel_solve(b, 4, params())


def test_params_validation():
    with pytest.raises(ValueError):
        SolverParams(lam=0)
    with pytest.raises(ValueError):
        SolverParams(tol=-1)
    with pytest.raises(ValueError):
        SolverParams(levels=0)


# ---------------------------------------------------------------------------
# total variation

def test_tv_zero_rhs():
    res = tv_solve(np.zeros((5, 5, 5)), params(tol=1e-8))
    assert not res.x.any()


def tv_dipole():
    b = np.zeros((16, 3, 3))
    b[4, 1, 1] = 1.0
    b[11, 1, 1] = -1.0
    return b


def test_tv_descent_and_monotone_profile():
    res = tv_solve(tv_dipole(), params(lam=0.05, tol=1e-7, clamp=True, tv_max_outer=40))
    e = [h[2] for h in res.history]
    assert all(e1 <= e0 + 1e-12 for e0, e1 in zip(e, e[1:]))
    profile = res.x[4:12, 1, 1]
    d = np.diff(profile)
    assert np.all(d >= -1e-9) or np.all(d <= 1e-9)
    assert profile[-1] - profile[0] > 0


def test_tv_larger_lambda_not_rougher():
    b = tv_dipole()
    tv = []
    for lam in (0.05, 0.1):
        res = tv_solve(b, params(lam=lam, tol=1e-8, clamp=True, tv_max_outer=40))
        tv.append(gradient_magnitude(res.x).sum())
    assert tv[1] <= tv[0] + 1e-9


# ---------------------------------------------------------------------------
# multi-scale

def test_level_lambda():
    assert level_lambda(0.2, 4, 0) == 0.2
    assert level_lambda(0.2, 4, 1) == pytest.approx(0.1)
    assert level_lambda(0.2, 1, 2) == pytest.approx(0.8)
    assert level_lambda(0.2, 2, 1) == pytest.approx(0.8)


def test_single_level_identical_to_direct(rng):
    b = rng.normal(size=(10, 9, 8))
    p = params(tol=1e-9, levels=1)
    a = multiscale_solve(b, 4, p).x
    d = gauss_seidel_solve(b, 4, p).x
    np.testing.assert_array_equal(a, d)


def test_pyramid_levels_and_dims(rng):
    b = rng.normal(size=(17, 16, 18))
    res = multiscale_solve(b, 3, params(tol=1e-6, levels=3))
    assert [li.dims for li in res.levels] == [(5, 4, 5), (9, 8, 9), (17, 16, 18)]
    assert [li.level for li in res.levels] == [2, 1, 0]
    assert res.x.shape == b.shape


def test_too_small_for_levels():
    with pytest.raises(ValueError, match="too small"):
        multiscale_solve(np.zeros((15, 16, 16)), 4, params(levels=3))


def test_multiscale_narrow_band_needs_points():
    with pytest.raises(ValueError):
        multiscale_solve(np.zeros((16, 16, 16)), 4, params(levels=2, narrow_band_radius=2))


def test_narrow_band_mask():
    band = narrow_band((10, 10, 10), np.array([[5.2, 5.0, 4.9]]), 2.0)
    assert band[5, 5, 5] and band[7, 5, 5] and not band[8, 5, 5]
    assert band.sum() == sum(1 for p in itertools.product(range(10), repeat=3)
                             if np.linalg.norm(np.subtract(p, (5, 5, 5))) <= 2)


def test_multiscale_with_band_and_tv(rng):
    b = np.zeros((16, 16, 16))
    b[6, 8, 8], b[10, 8, 8] = 1.0, -1.0
    pts = np.array([[8.0, 8.0, 8.0]])
    res = multiscale_solve(b, 4, params(tol=1e-6, levels=2, narrow_band_radius=3), points=pts)
    assert np.isfinite(res.x).all()
    tv = multiscale_solve(b, 2, params(tol=1e-5, levels=2, clamp=True, tv_max_outer=5))
    assert np.isfinite(tv.x).all()
