"""Backward time stepping over the whole lattice, pricing and fee search."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .boundary import LeftPadSolver, apply_corner, apply_wmax, initial_condition
from .errors import BracketError, FeeConvergenceError, MissingControlsError, StabilityError
from .grid import Grid, GridConfig, build_grid
from .interp import ValueField, interp3
from .kernel import KernelWeights, select_weights
from .model import Contract, ModelParams, comparable_rate
from .timestep import StepConsts, Stepper

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverSettings:
    eps: float = 1e-6
    eps1: float = 1e-6
    alpha_cap: int = 64
    tilt: float = 0.5
    n_loc: int = 8
    n_ref: int = 4
    n_zoom: int = 4
    store_controls: bool = False
    check_stability: bool = True
    workers: int | None = None
    compensator: str = "fourier"


@dataclass
class ControlField:
    """Withdrawals per step, shape (M, J+1, K-1, n_store) over left pad + interior.

    Index m holds the decision taken at time-to-expiry m * dtau.
    """
    gamma: np.ndarray = field(repr=False)
    crdt: float

    def branch(self, g):
        g = np.asarray(g)
        return np.where(g <= 0, "none", np.where(g <= self.crdt * (1 + 1e-12), "continuous", "finite"))


@dataclass
class Solution:
    grid: Grid
    params: ModelParams
    contract: Contract
    values: np.ndarray = field(repr=False)
    kernel: KernelWeights
    controls: ControlField | None = None
    bound_margin: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def field(self) -> ValueField:
        return ValueField(self.values, self.grid, self.grid.M)

    @property
    def price(self) -> float:
        c = self.contract
        return price_at(self, c.z0, self.params.r0, c.z0)

    def save(self, path) -> None:
        """Values, controls and diagnostics to an .npz file (grid and model are not stored)."""
        extra = {}
        if self.controls is not None:
            extra = {"gamma": self.controls.gamma, "crdt": self.controls.crdt}
        np.savez(path, values=self.values, margins=np.asarray(self.bound_margin),
                 seconds=self.seconds, **extra)


def load_solution(path, grid: Grid, params: ModelParams, contract: Contract,
                  kernel: KernelWeights) -> Solution:
    """Inverse of :meth:`Solution.save` for the same grid and model."""
    with np.load(path) as d:
        values = d["values"]
        if values.shape != grid.shape():
            raise ValueError(f"stored field shape {values.shape} does not match the grid")
        cf = ControlField(d["gamma"], float(d["crdt"])) if "gamma" in d else None
        return Solution(grid, params, contract, values, kernel, cf,
                        d["margins"].tolist(), float(d["seconds"]))


def stability_bound(grid: Grid, v0_max: float, m: int, eps: float) -> np.ndarray:
    """Per-a upper bound on |v^m| for the scheme."""
    dt, rmin = grid.dtau, grid.cfg.r_min
    C = abs(rmin) / (1 + dt * rmin)
    return math.exp(2 * m * eps * dt / grid.T + C * m * dt) * (v0_max + grid.a)


class Engine:
    """Holds the per-grid precomputations shared by every time step."""

    def __init__(self, grid: Grid, params: ModelParams, contract: Contract,
                 settings: SolverSettings = SolverSettings(), kernel: KernelWeights | None = None):
        self.grid, self.params, self.contract, self.settings = grid, params, contract, settings
        if kernel is None:
            kernel = select_weights(grid, params, grid.dtau, settings.eps, settings.eps1,
                                    settings.alpha_cap, settings.tilt, settings.compensator)
        self.kernel = kernel
        self.consts = StepConsts.of(contract, grid.dtau, settings.n_loc, settings.n_ref, settings.n_zoom)
        self.stepper = Stepper(grid, params, contract, kernel, self.consts, settings.workers)
        self.left = LeftPadSolver(grid, params, contract)

    def step(self, V: np.ndarray, m: int, controls: np.ndarray | None = None) -> np.ndarray:
        """v^m -> v^{m+1}; writes the step's withdrawals into ``controls`` if given."""
        g = self.grid
        tau = (m + 1) * g.dtau
        Vn = np.empty_like(V)
        apply_corner(Vn, g, self.params, self.contract, tau)
        apply_wmax(Vn, g, self.params, tau)
        gam_left = self.left.step(V, Vn)
        if controls is not None:
            controls[:, :, g.n_left] = gam_left
        nin = g.n_in
        for j in range(g.J + 1):
            vals, gam = self.stepper.advance_slice(V, j)
            Vn[j, g.k_in, nin] = vals
            if controls is not None:
                controls[j, :, nin] = gam
        return Vn

    def run(self, V0: np.ndarray | None = None, callback: Callable | None = None) -> Solution:
        g, s = self.grid, self.settings
        t0 = time.perf_counter()
        V = initial_condition(g, self.contract) if V0 is None else V0
        v0_max = float(np.max(np.abs(V)))
        ctrl = None
        if s.store_controls:
            ctrl = np.zeros((g.M, g.J + 1, g.K - 1, g.n_in.stop), dtype=np.float32)
        margins = []
        for m in range(g.M):
            V = self.step(V, m, None if ctrl is None else ctrl[m])
            if s.check_stability:
                bound = stability_bound(g, v0_max, m + 1, s.eps)
                vmax = np.max(np.abs(V), axis=(1, 2))
                if not np.all(np.isfinite(vmax)) or np.any(vmax > bound):
                    raise StabilityError(f"stability bound violated at step {m + 1}")
                margins.append(float(np.min(bound - vmax)))
            if callback is not None:
                callback(m, V)
        cf = None if ctrl is None else ControlField(ctrl, self.consts.crdt)
        return Solution(g, self.params, self.contract, V, self.kernel, cf, margins,
                        time.perf_counter() - t0)


def solve(grid: Grid, params: ModelParams, contract: Contract,
          settings: SolverSettings = SolverSettings(), kernel: KernelWeights | None = None) -> Solution:
    return Engine(grid, params, contract, settings, kernel).run()


def price_at(sol: Solution, z: float, r: float, a: float) -> float:
    if not z > 0:
        raise ValueError("account value must be positive")
    return float(interp3(sol.field, math.log(z), r, a))


def fair_fee(grid: Grid, params: ModelParams, contract: Contract, tol: float = 1e-6,
             settings: SolverSettings = SolverSettings(), bracket=(0.0, 0.2),
             max_iter: int = 30) -> tuple[float, int]:
    """Fee rate making the contract worth the premium; returns (fee, solves)."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    kernel = select_weights(grid, params, grid.dtau, settings.eps, settings.eps1,
                            settings.alpha_cap, settings.tilt, settings.compensator)
    z0 = contract.z0
    n = 0

    def f(beta):
        nonlocal n
        n += 1
        sol = solve(grid, replace(params, beta=beta), contract, settings, kernel)
        log.info("fee iterate beta=%.6f price=%.6f", beta, sol.price)
        return sol.price - z0

    lo, hi = bracket
    flo, fhi = f(lo), f(hi)
    if flo * fhi > 0:
        raise BracketError(f"no sign change on [{lo}, {hi}]: {flo + z0:.4f}, {fhi + z0:.4f}")
    x0, f0, x1, f1 = lo, flo, hi, fhi
    while n < max_iter:
        x = x1 - f1 * (x1 - x0) / (f1 - f0)
        if not lo < x < hi:
            x = 0.5 * (lo + hi)
        fx = f(x)
        if abs(fx) < tol * z0:
            return x, n
        if fx * flo < 0:
            hi, fhi = x, fx
        else:
            lo, flo = x, fx
        x0, f0, x1, f1 = x1, f1, x, fx
    raise FeeConvergenceError(f"fee search did not converge in {max_iter} solves")


def control_map(sol: Solution, t: float, r_spot: float):
    """Rows (z, a, gamma_star, branch) at calendar time ``t`` and the rate node nearest ``r_spot``."""
    if sol.controls is None:
        raise MissingControlsError("solve with store_controls=True to extract controls")
    g = sol.grid
    m = int(round(g.M * (1 - t / g.T)))
    if not 0 <= m < g.M:
        raise ValueError(f"no decision time at t={t}")
    ks = np.arange(g.Kd)[g.k_in]
    kk = int(np.argmin(np.abs(g.r[ks] - r_spot)))
    gam = sol.controls.gamma[m, :, kk, :].astype(float)  # (J+1, n_store)
    z = np.exp(g.w[: gam.shape[1]])
    Z, A = np.meshgrid(z, g.a)
    return {"z": Z.ravel(), "a": A.ravel(), "gamma_star": gam.ravel(),
            "branch": sol.controls.branch(gam.ravel())}


def level_grid(level: int, contract: Contract, **kw) -> Grid:
    return build_grid(GridConfig.for_level(level, contract, **kw), contract)


def constant_rate_setup(params: ModelParams, T: float, half_width: float = 0.25):
    """Degenerate Vasicek setup that freezes the rate at the comparable yield.

    Returns (params, r_bounds) with the rate lattice centred on that yield so
    it is a node.
    """
    rc = comparable_rate(params, T)
    p = replace(params, sigma_r=0.0, delta=1e-10, theta=rc, r0=rc, rho=0.0)
    return p, (rc - half_width, rc + half_width)
