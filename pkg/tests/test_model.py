import math

import numpy as np
import pytest
from scipy import integrate

from gmwb.errors import ConfigError
from gmwb.model import (KOU_REF, MERTON_REF, Contract, Kou, Merton, ModelParams, bond_price,
                        comparable_rate, effective_vol, jump_char, jump_density, jump_kappa,
                        reference_params)
from gmwb.mc_validator import McConfig, vasicek_step


def quad(f, lo=-20, hi=20):
    # split at the Kou kink so the integrand is smooth on each piece
    return integrate.quad(f, lo, 0, limit=400, epsabs=1e-13)[0] + \
        integrate.quad(f, 0, hi, limit=400, epsabs=1e-13)[0]


def test_density_values():
    assert jump_density(Merton(0.0, 1.0), 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi))
    assert jump_density(KOU_REF, 1e-14) == pytest.approx(0.3445 * 3.0465, rel=1e-10)
    assert jump_density(None, 0.3) == 0.0


@pytest.mark.parametrize("spec", [MERTON_REF, KOU_REF])
def test_density_integrates_to_one(spec):
    assert quad(lambda y: jump_density(spec, y)) == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("spec,eta", [(MERTON_REF, 0.5), (KOU_REF, 1.0), (KOU_REF, -0.37)])
def test_char_matches_fourier_integral(spec, eta):
    re = quad(lambda y: jump_density(spec, y) * math.cos(2 * math.pi * eta * y))
    im = quad(lambda y: -jump_density(spec, y) * math.sin(2 * math.pi * eta * y))
    assert abs(jump_char(spec, eta) - complex(re, im)) < 1e-8


@pytest.mark.parametrize("spec", [MERTON_REF, KOU_REF])
def test_char_normalised_and_bounded(spec):
    assert jump_char(spec, 0.0) == 1.0
    eta = np.random.default_rng(3).normal(scale=5, size=1000)
    assert np.all(np.abs(jump_char(spec, eta)) <= 1 + 1e-15)


def test_kappa_values():
    assert jump_kappa(MERTON_REF) == pytest.approx(-0.5501, abs=5e-5)
    assert jump_kappa(None) == 0.0
    kou = quad(lambda y: (math.exp(y) - 1) * jump_density(KOU_REF, y), -40, 40)
    assert jump_kappa(KOU_REF) == pytest.approx(kou, abs=1e-8)
    with pytest.raises(ConfigError):
        jump_kappa(Kou(0.3, 1.0, 3.0))


def test_kappa_random_parameters():
    rng = np.random.default_rng(11)
    for _ in range(5):
        m = Merton(rng.uniform(-1, 0.5), rng.uniform(0.05, 0.6))
        k = Kou(rng.uniform(0, 1), rng.uniform(1.5, 6), rng.uniform(0.5, 6))
        for spec in (m, k):
            ref = quad(lambda y: (math.exp(y) - 1) * jump_density(spec, y), -60, 60)
            assert jump_kappa(spec) == pytest.approx(ref, abs=1e-8)


def test_invalid_params():
    with pytest.raises(ConfigError):
        ModelParams(sigma_z=0.3, rho=1.0)
    with pytest.raises(ConfigError):
        Merton(0.0, 0.0)
    with pytest.raises(ConfigError):
        Contract(T=5, C_r=20, mu=1.5)


def test_bond_price():
    p = reference_params()
    assert bond_price(p, 0.07, 0.0) == 1.0
    assert bond_price(p, 0.05, 10.0) == pytest.approx(math.exp(-0.0448 * 10), rel=1e-3)
    flat = p.with_(sigma_r=0.0, theta=0.03)
    assert bond_price(flat, 0.03, 7.0) == pytest.approx(math.exp(-0.21), rel=1e-12)


def test_bond_price_monte_carlo():
    # p_b(r, t1 + t2) = E[exp(-int_0^t1 r) p_b(R_t1, t2)]
    p = reference_params()
    t1, t2, n, steps = 3.0, 2.0, 100_000, 300
    rng = np.random.default_rng(5)
    r = np.full(n, p.r0)
    integ = np.zeros(n)
    h = t1 / steps
    for _ in range(steps):
        z = rng.standard_normal(n // 2)
        rn = vasicek_step(r, h, p, np.concatenate([z, -z]))
        integ += 0.5 * (r + rn) * h
        r = rn
    x = np.exp(-integ) * bond_price(p, r, t2)
    x = 0.5 * (x[: n // 2] + x[n // 2:])
    se = x.std(ddof=1) / math.sqrt(x.size)
    assert abs(x.mean() - bond_price(p, p.r0, t1 + t2)) < 3 * se + 2e-6


def test_comparable_rate():
    p = reference_params()
    assert comparable_rate(p, 5.0) == pytest.approx(0.0485, abs=5e-4)
    assert comparable_rate(p, 10.0) == pytest.approx(0.0448, abs=5e-4)
    flat = p.with_(sigma_r=0.0, theta=0.04, r0=0.04)
    assert comparable_rate(flat, 3.0) == pytest.approx(0.04, abs=1e-14)


def test_effective_vol():
    assert effective_vol(0.3, 0.1, MERTON_REF) == pytest.approx(0.4373, abs=5e-5)
    assert effective_vol(0.3, 0.0, MERTON_REF) == 0.3
    assert effective_vol(0.0, 1.0, Merton(1.0, 1e-300)) == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        effective_vol(0.3, 0.1, KOU_REF)


def test_contract_standard():
    c = Contract.standard(5.0)
    assert c.C_r == 20.0 and c.z0 == 100.0
    assert Contract.standard(10.0, withdraw_rate_absolute=0.1).C_r == 0.1
