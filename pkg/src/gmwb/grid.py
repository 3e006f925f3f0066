"""Padded computational lattice and sub-domain classification.

Signed indices follow the usual centered convention: ``n`` runs over
``-Nd/2 .. Nd/2-1`` and sits at array position ``n + Nd/2``.  The interior
block covers ``|n| < N/2`` and ``|k| < K/2``; columns with ``n <= -N/2`` form
the left pad, ``n >= N/2`` the right pad, and rows with ``|k| >= K/2`` the
corner region (taken over every ``n``).
"""

from __future__ import annotations

import enum
import math
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GridConditionError
from .model import Contract

log = logging.getLogger(__name__)


class SubdomainTag(enum.Enum):
    INTERIOR = "interior"
    LEFT_PAD = "left_pad"
    RIGHT_PAD = "right_pad"
    CORNER = "corner"


# (N, K, J) for refinement levels 0..4; M scales with T
_LEVELS = {lv: (2 ** (9 + lv), 2 ** (5 + lv), 25 * 2 ** lv + 1) for lv in range(5)}


def level_sizes(level: int, T: float) -> tuple[int, int, int, int]:
    """(N, K, J, M) for a refinement level; M = 4T steps at level 0."""
    if level not in _LEVELS:
        raise ConfigError(f"unknown refinement level {level}")
    N, K, J = _LEVELS[level]
    M = int(round(4 * T)) * 2 ** level
    return N, K, J, max(M, 1)


@dataclass(frozen=True)
class GridConfig:
    N: int
    K: int
    J: int
    M: int
    w_min: float
    w_max: float
    r_min: float = -0.2
    r_max: float = 0.3
    level: int | None = None
    pad_mult: int = 2
    a_spacing: str = "uniform"
    a_cluster: float = 2.0
    strict: bool = False

    @classmethod
    def for_level(cls, level: int, contract: Contract, **kw) -> "GridConfig":
        N, K, J, M = level_sizes(level, contract.T)
        lz = math.log(contract.z0)
        kw.setdefault("w_min", lz - 10.0)
        kw.setdefault("w_max", lz + 10.0)
        return cls(N=N, K=K, J=J, M=M, level=level, **kw)


def _is_pow2(x: int) -> bool:
    return x > 1 and (x & (x - 1)) == 0


@dataclass(frozen=True, eq=False)
class Grid:
    cfg: GridConfig
    T: float
    z0: float
    Nd: int
    Kd: int
    dw: float
    dr: float
    dtau: float
    w: np.ndarray = field(repr=False)
    r: np.ndarray = field(repr=False)
    a: np.ndarray = field(repr=False)

    @property
    def N(self) -> int:
        return self.cfg.N

    @property
    def K(self) -> int:
        return self.cfg.K

    @property
    def J(self) -> int:
        return self.cfg.J

    @property
    def M(self) -> int:
        return self.cfg.M

    @property
    def w0(self) -> float:
        return 0.5 * (self.cfg.w_min + self.cfg.w_max)

    @property
    def r0(self) -> float:
        return 0.5 * (self.cfg.r_min + self.cfg.r_max)

    @property
    def P(self) -> float:
        return self.cfg.w_max - self.cfg.w_min

    @property
    def Q(self) -> float:
        return self.cfg.r_max - self.cfg.r_min

    @property
    def Pd(self) -> float:
        return self.Nd * self.dw

    @property
    def Qd(self) -> float:
        return self.Kd * self.dr

    @property
    def w_lo(self) -> float:
        return float(self.w[0])

    @property
    def w_hi(self) -> float:
        return float(self.w[-1])

    @property
    def r_lo(self) -> float:
        return float(self.r[0])

    @property
    def r_hi(self) -> float:
        return float(self.r[-1])

    @property
    def da(self) -> np.ndarray:
        return np.diff(self.a)

    # array-position slices of the sub-domains
    @property
    def n_left(self) -> slice:
        return slice(0, self.Nd // 2 - self.N // 2 + 1)

    @property
    def n_in(self) -> slice:
        return slice(self.Nd // 2 - self.N // 2 + 1, self.Nd // 2 + self.N // 2)

    @property
    def n_right(self) -> slice:
        return slice(self.Nd // 2 + self.N // 2, self.Nd)

    @property
    def k_in(self) -> slice:
        return slice(self.Kd // 2 - self.K // 2 + 1, self.Kd // 2 + self.K // 2)

    def corner_mask(self) -> np.ndarray:
        m = np.ones(self.Kd, dtype=bool)
        m[self.k_in] = False
        return m

    def shape(self) -> tuple[int, int, int]:
        """Field layout (J+1, Kd, Nd), w fastest."""
        return (self.J + 1, self.Kd, self.Nd)

    def classify(self, n: int, k: int) -> SubdomainTag:
        if not (-self.Nd // 2 <= n < self.Nd // 2 and -self.Kd // 2 <= k < self.Kd // 2):
            raise IndexError(f"node ({n}, {k}) outside the padded lattice")
        if abs(k) >= self.K // 2:
            return SubdomainTag.CORNER
        if n <= -self.N // 2:
            return SubdomainTag.LEFT_PAD
        if n >= self.N // 2:
            return SubdomainTag.RIGHT_PAD
        return SubdomainTag.INTERIOR

    def a_index(self, a: float) -> int:
        """Index of the a-node nearest to ``a``."""
        return int(np.argmin(np.abs(self.a - a)))


def _a_nodes(cfg: GridConfig, z0: float) -> np.ndarray:
    x = np.arange(cfg.J + 1) / cfg.J
    if cfg.a_spacing == "uniform":
        a = z0 * x
    elif cfg.a_spacing == "geometric":
        s = cfg.a_cluster
        a = z0 * np.expm1(s * x) / math.expm1(s)
    else:
        raise ConfigError(f"unknown a_spacing {cfg.a_spacing!r}")
    a[0], a[-1] = 0.0, z0
    return a


def build_grid(cfg: GridConfig, contract: Contract) -> Grid:
    if not (_is_pow2(cfg.N) and _is_pow2(cfg.K)):
        raise ConfigError("N and K must be powers of two")
    if not _is_pow2(cfg.pad_mult):
        raise ConfigError("pad_mult must be a power of two (2 for half-width padding)")
    if cfg.J < 1 or cfg.M < 1:
        raise ConfigError("J and M must be positive")
    lz = math.log(contract.z0)
    if not cfg.w_min < lz < cfg.w_max:
        raise GridConditionError("w_min < ln(z0) < w_max")
    if not cfg.r_min < 0 < cfg.r_max:
        raise GridConditionError("r_min < 0 < r_max")
    dtau = contract.T / cfg.M
    if not 1 + dtau * cfg.r_min > 0:
        raise GridConditionError(
            "1 + dtau*r_min > 0", f"dtau={dtau:g}, r_min={cfg.r_min:g}")

    Nd, Kd = cfg.pad_mult * cfg.N, cfg.pad_mult * cfg.K
    dw = (cfg.w_max - cfg.w_min) / cfg.N
    dr = (cfg.r_max - cfg.r_min) / cfg.K
    w0 = 0.5 * (cfg.w_min + cfg.w_max)
    r0 = 0.5 * (cfg.r_min + cfg.r_max)
    w = w0 + (np.arange(Nd) - Nd // 2) * dw
    r = r0 + (np.arange(Kd) - Kd // 2) * dr

    gap = math.exp(cfg.w_min) - math.exp(w[0])
    if gap < contract.C_r * dtau:
        detail = f"gap={gap:.3e}, C_r*dtau={contract.C_r * dtau:.3e}"
        if cfg.strict:
            raise GridConditionError("exp(w_min) - exp(w_min_padded) >= C_r*dtau", detail)
        # only required as h -> 0; the standard domain never meets it
        log.info("exp(w_min) - exp(w_min_padded) >= C_r*dtau not met (%s)", detail)

    return Grid(cfg=cfg, T=contract.T, z0=contract.z0, Nd=Nd, Kd=Kd, dw=dw, dr=dr,
                dtau=dtau, w=w, r=r, a=_a_nodes(cfg, contract.z0))
