"""Initial data and the boundary sub-domain updates.

* right pad (large w): the contract is worth the fee-discounted account;
* corner rows (|k| >= K/2): the stopped process, discounted payoff;
* left pad (account ~ 0): intervention in a only, then a fully implicit
  positive-coefficient finite-difference step of the rate PDE
  v_tau = sigma_r^2/2 v_rr + delta (theta - r) v_r - r v.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .grid import Grid
from .model import Contract, ModelParams, bond_price


def payoff(w, a, contract: Contract):
    return np.maximum(np.exp(w), (1 - contract.mu) * a - contract.c)


def initial_condition(grid: Grid, contract: Contract) -> np.ndarray:
    v = payoff(grid.w[None, None, :], grid.a[:, None, None], contract)
    return np.ascontiguousarray(np.broadcast_to(v, grid.shape()), dtype=float)


def apply_wmax(V: np.ndarray, grid: Grid, params: ModelParams, tau: float) -> None:
    vals = math.exp(-params.beta * tau) * np.exp(grid.w[grid.n_right])
    V[:, grid.k_in, grid.n_right] = vals


def corner_values(grid: Grid, params: ModelParams, contract: Contract, tau: float) -> np.ndarray:
    """(J+1, n_corner_rows, Nd) stopped-process values on the corner rows."""
    rows = np.flatnonzero(grid.corner_mask())
    rbar = np.clip(grid.r[rows], grid.cfg.r_min, grid.cfg.r_max)
    pb = np.asarray(bond_price(params, rbar, tau))
    pay = np.minimum(payoff(grid.w[None, :], grid.a[:, None], contract), math.exp(grid.w[-1]))
    return pb[None, :, None] * pay[:, None, :]


def apply_corner(V, grid, params, contract, tau) -> None:
    V[:, grid.corner_mask(), :] = corner_values(grid, params, contract, tau)


def positive_coeffs(params: ModelParams, r_k, dr: float):
    """(alpha_k, beta_k) multiplying v_{k-1}, v_{k+1}; central where it is positive."""
    r_k = np.asarray(r_k, dtype=float)
    diff = params.sigma_r ** 2 / (2 * dr * dr)
    drift = params.delta * (params.theta - r_k)
    al = diff - drift / (2 * dr)
    be = diff + drift / (2 * dr)
    central = (al >= 0) & (be >= 0)
    al = np.where(central, al, np.where(drift > 0, diff, diff - drift / dr))
    be = np.where(central, be, np.where(drift > 0, diff + drift / dr, diff))
    return al, be


@njit(cache=True)
def _left_intervention(V, a, n_hi, k_lo, k_hi, crdt, mu, c, out, gam):
    """sup over gamma in [0, a_j] with w frozen; exact on the breakpoint set."""
    J1 = V.shape[0]
    const2 = mu * crdt - c
    for j in range(J1):
        aj = a[j]
        top = min(aj, crdt)
        i = 0
        t = 0.0
        if top > 0.0:
            at = aj - top
            i = np.searchsorted(a, at, side="right") - 1
            i = min(max(i, 0), J1 - 2)
            t = (at - a[i]) / (a[i + 1] - a[i])
        for k in range(k_lo, k_hi):
            for n in range(n_hi):
                out[j, k, n] = V[j, k, n]
                gam[j, k, n] = 0.0
            # smallest gamma first so ties keep the smaller withdrawal
            if top > 0.0:
                for n in range(n_hi):
                    val = (1 - t) * V[i, k, n] + t * V[i + 1, k, n] + top
                    if val > out[j, k, n]:
                        out[j, k, n] = val
                        gam[j, k, n] = top
            for q in range(j - 1, -1, -1):
                g = aj - a[q]
                cash = g if g <= crdt else (1 - mu) * g + const2
                for n in range(n_hi):
                    val = V[q, k, n] + cash
                    if val > out[j, k, n]:
                        out[j, k, n] = val
                        gam[j, k, n] = g


@njit(cache=True)
def _thomas_batch(lower, diag, upper, rhs):
    """Solve tridiagonal systems along axis 1 of rhs (J1, K, n) in place."""
    J1, K, nn = rhs.shape
    cp = np.empty(K)
    dp = np.empty(K)
    cp[0] = upper[0] / diag[0]
    dp[0] = diag[0]
    for k in range(1, K):
        dp[k] = diag[k] - lower[k] * cp[k - 1]
        cp[k] = upper[k] / dp[k]
    for j in range(J1):
        for n in range(nn):
            rhs[j, 0, n] /= dp[0]
        for k in range(1, K):
            for n in range(nn):
                rhs[j, k, n] = (rhs[j, k, n] - lower[k] * rhs[j, k - 1, n]) / dp[k]
        for k in range(K - 2, -1, -1):
            for n in range(nn):
                rhs[j, k, n] -= cp[k] * rhs[j, k + 1, n]


class LeftPadSolver:
    """Implicit rate step on the left pad, factorised once per grid."""

    def __init__(self, grid: Grid, params: ModelParams, contract: Contract):
        self.grid, self.params, self.contract = grid, params, contract
        dt = grid.dtau
        ks = np.arange(grid.Kd)[grid.k_in]
        r = grid.r[ks]
        al, be = positive_coeffs(params, r, grid.dr)
        self.al, self.be = al, be
        diag = 1 + dt * (al + be + r)
        if not np.all(diag - dt * (al + be) > 0):
            raise ArithmeticError("left-pad system is not diagonally dominant")
        self.lower = -dt * al
        self.upper = -dt * be
        self.diag = diag
        self.crdt = contract.C_r * dt

    def intervene(self, V: np.ndarray):
        """Post-intervention values and withdrawals, shape (J+1, K-1, n_left)."""
        g = self.grid
        n_hi = g.n_left.stop
        out = np.empty((g.J + 1, g.Kd, n_hi))
        gam = np.empty_like(out)
        _left_intervention(V, g.a, n_hi, g.k_in.start, g.k_in.stop, self.crdt,
                           self.contract.mu, self.contract.c, out, gam)
        return out[:, g.k_in, :], gam[:, g.k_in, :]

    def step(self, V: np.ndarray, V_next: np.ndarray) -> np.ndarray:
        """Write left-pad rows of ``V_next`` from ``V`` and return the withdrawals.

        Corner rows of ``V_next`` must already hold the new-time values.
        """
        g = self.grid
        ks = np.arange(g.Kd)[g.k_in]
        nl = g.n_left
        vplus, gam = self.intervene(V)
        rhs = np.ascontiguousarray(vplus)
        dt = g.dtau
        rhs[:, 0, :] += dt * self.al[0] * V_next[:, ks[0] - 1, nl]
        rhs[:, -1, :] += dt * self.be[-1] * V_next[:, ks[-1] + 1, nl]
        _thomas_batch(self.lower, self.diag, self.upper, rhs)
        V_next[:, g.k_in, nl] = rhs
        return gam


def step_wmin(V, grid, params, contract, V_next) -> np.ndarray:
    return LeftPadSolver(grid, params, contract).step(V, V_next)
