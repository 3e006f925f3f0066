"""Monte Carlo replay of stored PDE controls.

Paths of (Z, R, A) are simulated forward with the PDE-optimal withdrawals
looked up by multilinear interpolation at each PDE time (no interpolation
in time).  The discounted cash flows give an unbiased estimate of the value
of following that strategy, which is a lower bound on the true value and
close to it when the controls are accurate.

Conventions:

* decision k (k = 1..M) is taken at calendar time k * dtau with the control
  stored for time-to-expiry (M - k) * dtau;
* an interpolated withdrawal at most C_r dtau is paid as the rate
  gamma / dtau over the following interval, checked every substep; a larger
  one is a lump with the penalty; the decision at expiry is always a lump;
* the Brownian shock of the account is rho dW_R + sqrt(1 - rho^2) dW_Z,
  matching the cross term of the pricing equation;
* the terminal cash mirrors the PDE payoff max(Z_T, (1 - mu) A_T - c).

Random numbers come from numpy's PCG64.  Paths are drawn in fixed chunks,
each from its own child of one SeedSequence, so results depend only on the
seed and the path count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, MissingControlsError
from .interp import _interp3
from .model import Contract, Kou, Merton, ModelParams
from .timestep import cashflow_f

CHUNK = 2048  # paths per random stream
RNG_NAME = "numpy PCG64, SeedSequence.spawn per chunk"


@dataclass(frozen=True)
class McConfig:
    n_paths: int = 20000
    substeps: int = 20
    seed: int = 0
    antithetic: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.n_paths < 100:
            raise ConfigError("n_paths must be at least 100")
        if self.substeps < 1:
            raise ConfigError("substeps must be at least 1")
        if self.antithetic and self.n_paths % 2:
            raise ConfigError("antithetic sampling needs an even path count")


@dataclass(frozen=True)
class McResult:
    mean: float
    std_error: float
    ci_low: float
    ci_high: float
    n_paths: int

    @classmethod
    def from_samples(cls, x: np.ndarray, n_paths: int) -> "McResult":
        m = float(np.mean(x))
        se = float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
        return cls(m, se, m - 1.96 * se, m + 1.96 * se, n_paths)


def vasicek_step(r, dt: float, params: ModelParams, draw):
    """Exact Vasicek transition over ``dt`` driven by standard normal ``draw``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    d, th, s = params.delta, params.theta, params.sigma_r
    e = math.exp(-d * dt)
    sd = s * math.sqrt(-math.expm1(-2 * d * dt) / (2 * d)) if d > 0 else s * math.sqrt(dt)
    return th + (np.asarray(r) - th) * e + sd * np.asarray(draw)


def jump_log_sum(params: ModelParams, dt: float, n: int, rng: np.random.Generator):
    """Poisson(lam dt) jump counts and the sum of log jump sizes, per path."""
    if params.lam <= 0 or params.jump is None:
        return np.zeros(n, dtype=np.int64), np.zeros(n)
    cnt = rng.poisson(params.lam * dt, n)
    tot = np.zeros(n)
    j = params.jump
    if isinstance(j, Merton):
        hit = cnt > 0
        k = cnt[hit]
        tot[hit] = j.nu * k + j.varsigma * np.sqrt(k) * rng.standard_normal(k.size)
    elif isinstance(j, Kou):
        for i in range(1, int(cnt.max(initial=0)) + 1):
            idx = np.flatnonzero(cnt >= i)
            up = rng.random(idx.size) < j.p_u
            y = np.where(up, rng.exponential(1 / j.eta1, idx.size),
                         -rng.exponential(1 / j.eta2, idx.size))
            tot[idx] += y
    return cnt, tot


def sub_account_step(z, r, dt: float, params: ModelParams, dw_z, dw_r, jump_sum, withdraw_rate=0.0):
    """Log-Euler update of the account over ``dt``.

    ``dw_z``, ``dw_r`` are Brownian increments (variance ``dt``) and
    ``jump_sum`` the summed log jump sizes over the step.  The continuous
    withdrawal is taken at the end of the step while the account is
    positive; the result is floored at zero.
    """
    p = params
    z = np.asarray(z, dtype=float)
    drift = (np.asarray(r) - p.beta - p.lam * p.kappa - 0.5 * p.sigma_z ** 2) * dt
    shock = p.sigma_z * (p.rho * np.asarray(dw_r) + math.sqrt(1 - p.rho ** 2) * np.asarray(dw_z))
    zn = z * np.exp(drift + shock + np.asarray(jump_sum))
    zn = zn - np.where(z > 0, withdraw_rate * dt, 0.0)
    return np.maximum(zn, 0.0)


class _ControlLookup:
    def __init__(self, sol):
        if sol.controls is None:
            raise MissingControlsError("the solution has no stored controls")
        g = sol.grid
        self.gamma = sol.controls.gamma
        self.w0, self.dw = float(g.w[0]), g.dw
        self.r0, self.dr = float(g.r[g.k_in.start]), g.dr
        self.a = g.a
        self.w_floor = float(g.w[0])

    def __call__(self, m: int, z, r, a):
        vals = np.ascontiguousarray(self.gamma[m], dtype=float)
        wq = np.log(np.maximum(z, math.exp(self.w_floor)))
        out = np.empty(z.shape[0])
        _interp3(vals, self.w0, self.dw, self.r0, self.dr, self.a,
                 wq, np.ascontiguousarray(r, dtype=float), np.ascontiguousarray(a, dtype=float), out)
        return np.clip(out, 0.0, a)


def _simulate(seq: np.random.SeedSequence, n: int, sol, cfg: McConfig, look: _ControlLookup):
    """Discounted cash of ``n`` paths (antithetic pairs averaged when enabled)."""
    rng = np.random.Generator(np.random.PCG64(seq))
    g, p, c = sol.grid, sol.params, sol.contract
    M, dtau = g.M, g.dtau
    crdt = c.C_r * dtau
    h = dtau / cfg.substeps
    sh = math.sqrt(h)
    half = n // 2 if cfg.antithetic else n

    z = np.full(n, c.z0)
    a = np.full(n, c.z0)
    r = np.full(n, p.r0)
    disc_log = np.zeros(n)
    cash = np.zeros(n)
    rate = np.zeros(n)

    def sign(x):
        return np.concatenate([x, -x]) if cfg.antithetic else x

    for k in range(1, M + 1):
        for _ in range(cfg.substeps):
            e_z = sign(rng.standard_normal(half))
            e_r = sign(rng.standard_normal(half))
            _, js = jump_log_sum(p, h, half, rng)
            js = np.concatenate([js, js]) if cfg.antithetic else js
            r_new = vasicek_step(r, h, p, e_r)
            # the rate's driving normal stands in for its Brownian increment
            z = sub_account_step(z, r, h, p, e_z * sh, e_r * sh, js)
            live = a > 0
            wd = np.where(live, np.minimum(rate * h, a), 0.0)
            disc_log += 0.5 * (r + r_new) * h
            cash += np.exp(-disc_log) * wd
            a = a - wd
            z = np.maximum(z - np.where(z > 0, wd, 0.0), 0.0)
            r = r_new
        gam = look(M - k, z, r, a)
        lump = (gam > crdt) | (k == M)
        df = np.exp(-disc_log)
        cash += np.where(lump & (gam > 0), df * cashflow_f(gam, c, dtau), 0.0)
        a = np.where(lump, a - gam, a)
        z = np.where(lump, np.maximum(z - gam, 0.0), z)
        rate = np.where(lump, 0.0, gam / dtau)
    a = np.maximum(a, 0.0)
    cash += np.exp(-disc_log) * np.maximum(z, (1 - c.mu) * a - c.c)
    if cfg.antithetic:
        return 0.5 * (cash[:half] + cash[half:])
    return cash


def replay(sol, cfg: McConfig = McConfig()) -> McResult:
    """Value of following the stored controls of ``sol`` along simulated paths."""
    look = _ControlLookup(sol)
    sizes = [CHUNK] * (cfg.n_paths // CHUNK)
    if cfg.n_paths % CHUNK:
        sizes.append(cfg.n_paths % CHUNK)
    if cfg.antithetic and any(s % 2 for s in sizes):
        raise ConfigError("path count must split into even chunks")
    seqs = np.random.SeedSequence(cfg.seed).spawn(len(sizes))
    jobs = list(zip(seqs, sizes))
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            parts = list(ex.map(lambda js: _simulate(js[0], js[1], sol, cfg, look), jobs))
    else:
        parts = [_simulate(s, n, sol, cfg, look) for s, n in jobs]
    return McResult.from_samples(np.concatenate(parts), cfg.n_paths)


def discounted_terminal(params: ModelParams, contract: Contract, T: float, cfg: McConfig,
                        payoff=None, steps_per_year: int = 100) -> McResult:
    """Plain (no withdrawal) estimate of E[exp(-int r) payoff(Z_T)]; a reference for tests."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    nsteps = max(1, int(round(T * steps_per_year)))
    h = T / nsteps
    half = cfg.n_paths // 2 if cfg.antithetic else cfg.n_paths
    z = np.full(2 * half if cfg.antithetic else half, contract.z0)
    r = np.full_like(z, params.r0)
    dl = np.zeros_like(z)
    for _ in range(nsteps):
        e_z = rng.standard_normal(half)
        e_r = rng.standard_normal(half)
        _, js = jump_log_sum(params, h, half, rng)
        if cfg.antithetic:
            e_z, e_r, js = np.concatenate([e_z, -e_z]), np.concatenate([e_r, -e_r]), np.concatenate([js, js])
        r_new = vasicek_step(r, h, params, e_r)
        z = sub_account_step(z, r, h, params, e_z * math.sqrt(h), e_r * math.sqrt(h), js)
        dl += 0.5 * (r + r_new) * h
        r = r_new
    x = np.exp(-dl) * (z if payoff is None else payoff(z))
    if cfg.antithetic:
        x = 0.5 * (x[:half] + x[half:])
    return McResult.from_samples(x, cfg.n_paths)
