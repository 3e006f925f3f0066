"""Market model and contract parameters.

The sub-account follows a jump-diffusion in log space with either
Merton (normal) or Kou (double-exponential) log-jumps; the short rate is
Vasicek,

    dR = delta (theta - R) dt + sigma_r dW_R.

Fourier conventions use B(eta) = int b(y) exp(-2 pi i eta y) dy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class Merton:
    nu: float
    varsigma: float

    def __post_init__(self):
        if not self.varsigma > 0:
            raise ConfigError("Merton jumps require varsigma > 0")


@dataclass(frozen=True)
class Kou:
    p_u: float
    eta1: float
    eta2: float

    def __post_init__(self):
        if not 0.0 <= self.p_u <= 1.0:
            raise ConfigError("Kou jumps require 0 <= p_u <= 1")
        if not self.eta2 > 0:
            raise ConfigError("Kou jumps require eta2 > 0")
        # eta1 > 1 is checked where kappa is needed


JumpSpec = Optional[Union[Merton, Kou]]


@dataclass(frozen=True)
class ModelParams:
    sigma_z: float
    lam: float = 0.0
    jump: JumpSpec = None
    rho: float = 0.0
    delta: float = 0.0349
    theta: float = 0.05
    sigma_r: float = 0.02
    beta: float = 0.0
    r0: float = 0.05

    def __post_init__(self):
        if not self.sigma_z > 0:
            raise ConfigError("sigma_z must be positive")
        if self.sigma_r < 0:
            raise ConfigError("sigma_r must be nonnegative")
        if not self.delta > 0:
            raise ConfigError("delta must be positive")
        if not abs(self.rho) < 1:
            raise ConfigError("|rho| must be < 1")
        if self.lam < 0:
            raise ConfigError("lambda must be nonnegative")
        if self.beta < 0:
            raise ConfigError("beta must be nonnegative")
        if self.lam > 0 and self.jump is None:
            raise ConfigError("lambda > 0 requires a jump distribution")

    @property
    def kappa(self) -> float:
        return jump_kappa(self.jump) if self.lam > 0 else 0.0

    def with_(self, **kw) -> "ModelParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class Contract:
    """GMWB contract terms. ``C_r`` is a currency amount per year."""

    T: float
    C_r: float
    mu: float = 0.1
    c: float = 1e-8
    z0: float = 100.0

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigError("T must be positive")
        if not self.C_r > 0:
            raise ConfigError("C_r must be positive")
        if not 0 < self.mu < 1:
            raise ConfigError("mu must lie in (0, 1)")
        if not self.c > 0:
            raise ConfigError("fixed cost c must be positive")
        if not self.z0 > 0:
            raise ConfigError("z0 must be positive")

    @classmethod
    def standard(cls, T: float, z0: float = 100.0, mu: float = 0.1, c: float = 1e-8,
                 withdraw_rate_absolute: Optional[float] = None) -> "Contract":
        """Contract whose guarantee is fully depletable over [0, T].

        The default withdrawal cap is ``z0 / T`` per year unless an absolute
        rate is given.
        """
        C_r = z0 / T if withdraw_rate_absolute is None else withdraw_rate_absolute
        return cls(T=T, C_r=C_r, mu=mu, c=c, z0=z0)


def jump_density(spec: JumpSpec, y):
    y = np.asarray(y, dtype=float)
    if spec is None:
        return np.zeros_like(y)
    if isinstance(spec, Merton):
        s = spec.varsigma
        return np.exp(-0.5 * ((y - spec.nu) / s) ** 2) / (s * math.sqrt(2 * math.pi))
    p, e1, e2 = spec.p_u, spec.eta1, spec.eta2
    up = p * e1 * np.exp(-e1 * np.where(y >= 0, y, 0.0))
    dn = (1 - p) * e2 * np.exp(e2 * np.where(y < 0, y, 0.0))
    return np.where(y >= 0, up, dn)


def jump_char(spec: JumpSpec, eta):
    """B(eta); accepts complex ``eta`` (analytic continuation)."""
    eta = np.asarray(eta)
    if spec is None:
        return np.ones_like(eta, dtype=complex)
    u = 2j * np.pi * eta
    if isinstance(spec, Merton):
        s2 = spec.varsigma ** 2
        return np.exp(-u * spec.nu + 0.5 * u * u * s2)
    p, e1, e2 = spec.p_u, spec.eta1, spec.eta2
    return p * e1 / (e1 + u) + (1 - p) * e2 / (e2 - u)


def jump_kappa(spec: JumpSpec) -> float:
    """E[Y - 1] for the jump multiplier Y."""
    if spec is None:
        return 0.0
    if isinstance(spec, Merton):
        return math.expm1(spec.nu + 0.5 * spec.varsigma ** 2)
    if spec.eta1 <= 1:
        raise ConfigError("Kou jumps with eta1 <= 1 have infinite mean")
    p, e1, e2 = spec.p_u, spec.eta1, spec.eta2
    return p * e1 / (e1 - 1) + (1 - p) * e2 / (e2 + 1) - 1


def bond_price(params: ModelParams, r, tau):
    """Vasicek zero-coupon bond price p_b(r, tau)."""
    r = np.asarray(r, dtype=float)
    tau = np.asarray(tau, dtype=float)
    d, th, s2 = params.delta, params.theta, params.sigma_r ** 2
    b = -np.expm1(-d * tau) / d
    lna = (th - s2 / (2 * d * d)) * (b - tau) - s2 * b * b / (4 * d)
    out = np.exp(lna - r * b)
    return out if out.ndim else float(out)


def comparable_rate(params: ModelParams, T: float) -> float:
    """Constant rate matching the Vasicek bond yield at r0."""
    if not T > 0:
        raise ConfigError("T must be positive")
    return -math.log(bond_price(params, params.r0, T)) / T


def effective_vol(sigma_z: float, lam: float, merton: JumpSpec) -> float:
    if not isinstance(merton, Merton):
        raise ConfigError("effective volatility is defined for Merton jumps only")
    return math.sqrt(sigma_z ** 2 + lam * (merton.nu ** 2 + merton.varsigma ** 2))


# Reference parameter sets used throughout the tests and default configs.
MERTON_REF = Merton(nu=-0.9, varsigma=0.45)
KOU_REF = Kou(p_u=0.3445, eta1=3.0465, eta2=3.0775)


def reference_params(jump: str = "merton", rho: float = 0.2, beta: float = 0.02) -> ModelParams:
    spec = {"merton": MERTON_REF, "kou": KOU_REF}[jump]
    return ModelParams(sigma_z=0.3, lam=0.1, jump=spec, rho=rho, delta=0.0349,
                       theta=0.05, sigma_r=0.02, beta=beta, r0=0.05)
