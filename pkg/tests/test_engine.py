import math

import numpy as np
import pytest

from gmwb import Contract, level_grid
from gmwb.engine import (SolverSettings, control_map, fair_fee, load_solution, price_at, solve)
from gmwb.errors import BracketError, MissingControlsError
from gmwb.mc_validator import McConfig, discounted_terminal
from gmwb.model import reference_params


@pytest.fixture(scope="module")
def sol0(grid0, merton, contract5):
    return solve(grid0, merton, contract5, SolverSettings(store_controls=True))


@pytest.mark.xfail(strict=True, reason="jump compensator inside the transform puts level 0 about 2% lower")
def test_level0_price_near_reference(sol0):
    assert sol0.price == pytest.approx(116.4466, rel=0.01)


def test_level0_price_drift_compensator(grid0, merton, contract5):
    sol = solve(grid0, merton, contract5, SolverSettings(compensator="drift"))
    assert sol.price == pytest.approx(116.4466, rel=0.01)


def test_level0_price_frozen(sol0):
    assert sol0.price == pytest.approx(113.8831, abs=2e-3)


def test_deterministic(sol0, grid0, merton, contract5):
    again = solve(grid0, merton, contract5, SolverSettings(store_controls=True))
    assert np.array_equal(again.values, sol0.values)
    assert np.array_equal(again.controls.gamma, sol0.controls.gamma)


def test_price_at_node(sol0, grid0):
    n, k, j = grid0.Nd // 2 + 7, grid0.Kd // 2 - 3, 11
    got = price_at(sol0, math.exp(grid0.w[n]), grid0.r[k], grid0.a[j])
    assert got == pytest.approx(sol0.values[j, k, n], rel=1e-12)
    with pytest.raises(ValueError):
        price_at(sol0, 0.0, 0.05, 100.0)


def test_price_monotone_in_z(sol0, grid0, contract5):
    # where the account dominates the terminal payoff
    z = np.exp(grid0.w[grid0.n_in])
    for j in (0, 13, 26):
        sel = z >= (1 - contract5.mu) * grid0.a[j]
        for k in range(grid0.Kd // 4, 3 * grid0.Kd // 4):
            row = sol0.values[j, k, grid0.n_in][sel]
            assert np.all(np.diff(row) >= -1e-8 * np.abs(row[:-1]))


def test_stability_margins(sol0):
    assert len(sol0.bound_margin) == sol0.grid.M
    assert min(sol0.bound_margin) >= 0


def test_price_decreasing_in_fee(grid0, merton, contract5):
    betas = [0.0, 0.04, 0.08, 0.12, 0.16]
    prices = [solve(grid0, merton.with_(beta=b), contract5).price for b in betas]
    assert np.all(np.diff(prices) < 0)


def test_control_map(sol0):
    cm = control_map(sol0, 2.5, sol0.params.r0)
    assert np.all(cm["gamma_star"][cm["a"] == 0] == 0)
    assert np.all(cm["gamma_star"] <= cm["a"] + 1e-9)
    assert set(np.unique(cm["branch"])) <= {"none", "continuous", "finite"}
    with pytest.raises(ValueError):
        control_map(sol0, 5.5, 0.05)


def test_control_map_requires_controls(grid0, merton, contract5):
    sol = solve(grid0, merton, contract5)
    with pytest.raises(MissingControlsError):
        control_map(sol, 2.5, 0.05)


def test_withdrawals_disabled_mc_oracle():
    # a negligible rate cap and a confiscatory penalty leave only the account
    p = reference_params("merton", 0.2).with_(lam=0.0, jump=None)
    c = Contract(T=5.0, C_r=1e-6, mu=1 - 1e-6, c=1e-8)
    pde = solve(level_grid(0, c), p, c).price
    mc = discounted_terminal(p, c, 5.0, McConfig(n_paths=100_000, seed=1),
                             payoff=lambda z: np.maximum(z, (1 - c.mu) * c.z0 - c.c))
    assert abs(pde - mc.mean) < 3 * mc.std_error
    assert pde <= c.z0


def test_save_load_roundtrip(sol0, tmp_path):
    path = tmp_path / "sol.npz"
    sol0.save(path)
    back = load_solution(path, sol0.grid, sol0.params, sol0.contract, sol0.kernel)
    assert np.array_equal(back.values, sol0.values)
    assert np.array_equal(back.controls.gamma, sol0.controls.gamma)
    assert back.price == sol0.price
    with pytest.raises(ValueError):
        load_solution(path, level_grid(1, sol0.contract), sol0.params, sol0.contract, sol0.kernel)


def test_fair_fee_errors(grid0, merton, contract5):
    with pytest.raises(ValueError):
        fair_fee(grid0, merton, contract5, tol=0.0)
    with pytest.raises(BracketError):
        fair_fee(grid0, merton, contract5, bracket=(0.15, 0.2))
