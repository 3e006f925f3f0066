import math

import numpy as np
import pytest
from scipy import integrate

from gmwb import level_grid
from gmwb.errors import KernelConvergenceError
from gmwb.kernel import (convolve, monotonicity_defect, psi, select_weights, trig_factor,
                         weight_sum_error, weights_physical)
from gmwb.model import jump_density


def test_psi_zero_and_gaussian(merton):
    assert psi(merton, 0.0, 0.0) == 0
    p = merton.with_(lam=0.0, jump=None, rho=0.0)
    eta, xi = 0.7, -1.3
    ref = -0.5 * p.sigma_z ** 2 * (2 * np.pi * eta) ** 2 - 0.5 * p.sigma_r ** 2 * (2 * np.pi * xi) ** 2
    assert psi(p, eta, xi) == pytest.approx(ref, rel=1e-14)


def test_psi_term_by_term(merton):
    p = merton
    eta, xi = 1.0, 1.0
    # conjugate of B(eta) = int b(y) exp(+2 pi i eta y) dy, by quadrature
    re = integrate.quad(lambda y: jump_density(p.jump, y) * math.cos(2 * math.pi * eta * y), -20, 20, limit=400)[0]
    im = integrate.quad(lambda y: jump_density(p.jump, y) * math.sin(2 * math.pi * eta * y), -20, 20, limit=400)[0]
    a, b = 2 * math.pi * eta, 2 * math.pi * xi
    ref = (-0.5 * p.sigma_z ** 2 * a * a - p.rho * p.sigma_z * p.sigma_r * a * b - 0.5 * p.sigma_r ** 2 * b * b
           - p.lam * p.kappa * 1j * a - p.lam + p.lam * complex(re, im))
    assert abs(psi(p, eta, xi) - ref) < 1e-10


@pytest.mark.parametrize("name", ["merton", "kou"])
def test_re_psi_bound(name, request):
    p = request.getfixturevalue(name)
    rng = np.random.default_rng(7)
    eta, xi = rng.normal(scale=20, size=1000), rng.normal(scale=200, size=1000)
    bound = -(1 - abs(p.rho)) * (p.sigma_z ** 2 * (2 * np.pi * eta) ** 2
                                 + p.sigma_r ** 2 * (2 * np.pi * xi) ** 2) / 2
    assert np.all(psi(p, eta, xi).real <= bound + 1e-12)


def test_trig_factor_origin():
    assert trig_factor(0.0, 0.0, 0.1, 0.01) == 1.0


def test_defect_helpers(grid0):
    g = np.ones((grid0.Kd, grid0.Nd))
    assert monotonicity_defect(grid0, g) == 0.0
    g[3, 7] = -2.5
    assert monotonicity_defect(grid0, g) == pytest.approx(grid0.dw * grid0.dr * 2.5)


def test_alpha_guard(grid0, merton):
    with pytest.raises(ValueError):
        weights_physical(grid0, merton, grid0.dtau, 3)


def _projected_gaussian(grid, p, dtau, nq=24):
    """Gaussian transition density smoothed by the hat basis, by Gauss-Legendre quadrature."""
    sx, sy = p.sigma_z * math.sqrt(dtau), p.sigma_r * math.sqrt(dtau)
    cov = np.array([[sx * sx, p.rho * sx * sy], [p.rho * sx * sy, sy * sy]])
    inv, det = np.linalg.inv(cov), np.linalg.det(cov)
    t, wt = np.polynomial.legendre.leggauss(nq)
    # hat on [-1, 1] split into two halves, nodes s and weights
    s = np.concatenate([(t - 1) / 2, (t + 1) / 2])
    ws = np.concatenate([wt, wt]) / 2 * (1 - np.abs(s))
    px = (np.fft.fftfreq(grid.Nd) * grid.Nd) * grid.dw
    py = (np.fft.fftfreq(grid.Kd) * grid.Kd) * grid.dr
    keep_x = np.abs(px) < 12 * sx + 2 * grid.dw
    keep_y = np.abs(py) < 12 * sy + 2 * grid.dr
    X = px[keep_x][None, :, None, None] - s[None, None, :, None] * grid.dw
    Y = py[keep_y][:, None, None, None] - s[None, None, None, :] * grid.dr
    q = inv[0, 0] * X * X + 2 * inv[0, 1] * X * Y + inv[1, 1] * Y * Y
    dens = np.exp(-0.5 * q) / (2 * np.pi * math.sqrt(det))
    val = np.einsum("yxab,a,b->yx", dens, ws, ws)
    out = np.zeros((grid.Kd, grid.Nd))
    out[np.ix_(keep_y, keep_x)] = val
    return out


def test_gaussian_projection_oracle(grid0, merton):
    p = merton.with_(lam=0.0, jump=None)
    kw = select_weights(grid0, p)
    ref = _projected_gaussian(grid0, p, grid0.dtau)
    assert np.max(np.abs(kw.g - ref)) < 1e-6


@pytest.mark.parametrize("name", ["merton", "kou"])
def test_select_level0(grid0, name, request):
    p = request.getfixturevalue(name)
    kw = select_weights(grid0, p)
    assert kw.alpha <= 64
    assert kw.defect < 1e-6 * grid0.dtau / grid0.T
    assert kw.residual < 1e-6
    assert weight_sum_error(grid0, kw.g) < 1e-8
    dv = grid0.dw * grid0.dr
    assert dv * np.sum(np.abs(kw.g)) <= 1 + 2e-6 * grid0.dtau / grid0.T
    again = select_weights(grid0, p)
    assert again.alpha == kw.alpha and np.array_equal(again.g, kw.g)
    tighter = select_weights(grid0, p, eps1=kw.residual / 2)
    assert tighter.alpha >= kw.alpha


def test_truncation_decay(grid0, merton):
    dv = grid0.dw * grid0.dr
    gs = [weights_physical(grid0, merton, grid0.dtau, a) for a in (1, 2, 4, 8, 16)]
    t2 = [dv * np.sum(np.abs(b - a)) for a, b in zip(gs, gs[1:])]
    assert all(x >= y for x, y in zip(t2[1:], t2[2:]))


def test_cap_error(grid0, merton):
    with pytest.raises(KernelConvergenceError) as ei:
        select_weights(grid0, merton, eps=1e-30, alpha_cap=4)
    assert ei.value.alpha == 4


def test_convolve_constant_and_impulse(grid0, merton):
    kw0 = select_weights(grid0, merton, tilt=0.0)
    kwt = select_weights(grid0, merton, tilt=0.5)
    blk = (grid0.k_in, grid0.n_in)
    const = np.full((grid0.Kd, grid0.Nd), 3.0)
    assert np.allclose(convolve(const, kw0)[blk], 3.0, rtol=1e-12, atol=0)
    # the tilt amplifies transform roundoff by up to exp(tilt * lattice width / 2)
    assert np.allclose(convolve(const, kwt)[blk], 3.0, rtol=1e-9, atol=0)
    delta = np.zeros_like(const)
    delta[0, 0] = 1.0
    assert np.allclose(convolve(delta, kw0), kw0.g * grid0.dw * grid0.dr, atol=1e-15)
    with pytest.raises(ValueError):
        convolve(np.zeros((3, 3)), kw0)


def test_sigma_r_zero_kernel(grid0, merton):
    p = merton.with_(sigma_r=0.0)
    kw = select_weights(grid0, p)
    assert weight_sum_error(grid0, kw.g) < 1e-8
    # no transport across rate rows
    field = np.zeros((grid0.Kd, grid0.Nd))
    field[20] = 1.0
    out = convolve(field, kw)
    assert np.max(np.abs(np.delete(out, 20, axis=0))) < 1e-12
