"""Fourier-space Green's function and projected convolution weights.

The linear operator handled in Fourier space is the diffusion (with
correlation), the compensated jump integral and the jump-intensity
decay.  Its transition density over one step is known only through
G = exp(Psi * dtau).  Weights are the Fourier series of G multiplied by
the transform of the piecewise-linear basis, truncated at alpha times the
lattice frequencies.

Frequencies beyond the lattice alias back onto it, so the truncated sum
over an (alpha Nd) x (alpha Kd) frequency box is accumulated by folding
tiles modulo (Nd, Kd) and finished with a single lattice-sized inverse
FFT.  This is the same number as the large transform followed by block
extraction, at a fraction of the memory.

Convolution can be carried out on an exponentially tilted field
u = exp(-theta (w - w0)) v, with the matching tilted weights computed from
G at complex frequency.  The result is identical in exact arithmetic up to
wrap-around terms, but it removes the exp(w) dynamic range from the FFT.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .errors import KernelConvergenceError
from .grid import Grid
from .model import ModelParams, jump_char

ALPHA_CAP = 64
_SKIP = 1e-30  # tiles whose coefficient bound is below this are zero to double precision


COMPENSATORS = ("fourier", "drift")


def psi(params: ModelParams, eta, xi, compensator: str = "fourier"):
    """Fourier exponent Psi(eta, xi); ``eta`` may be complex.

    With ``compensator="drift"`` the jump compensator -lam*kappa is left out
    here and carried by the semi-Lagrangian drift instead.
    """
    a = 2 * np.pi * np.asarray(eta)
    b = 2 * np.pi * np.asarray(xi)
    sz, sr, rho, lam = params.sigma_z, params.sigma_r, params.rho, params.lam
    out = -0.5 * sz * sz * a * a - rho * sz * sr * a * b - 0.5 * sr * sr * b * b
    if lam > 0:
        # conj(B(eta)) continued analytically as B(-eta)
        out = out - lam + lam * jump_char(params.jump, -np.asarray(eta))
        if compensator == "fourier":
            out = out - lam * params.kappa * 1j * a
    return out + 0j


def trig_factor(eta, xi, dw, dr):
    """Transform of the hat basis, sinc^2 in each direction (1 at the origin)."""
    return np.sinc(np.asarray(eta) * dw) ** 2 * np.sinc(np.asarray(xi) * dr) ** 2


@dataclass
class KernelWeights:
    g: np.ndarray = field(repr=False)  # real weights, (Kd, Nd), FFT index order
    spectrum: np.ndarray = field(repr=False)  # rfft2 multiplier used by convolve
    alpha: int
    defect: float
    residual: float
    sum_error: float
    dtau: float
    tilt: float = 0.0
    tilt_down: np.ndarray | None = field(default=None, repr=False)
    tilt_up: np.ndarray | None = field(default=None, repr=False)
    dvol: float = 1.0
    compensator: str = "fourier"

    @property
    def G_tilde(self) -> np.ndarray:
        """Full complex Fourier-domain weights of the untilted kernel."""
        return self.dvol * sfft.fft2(self.g)


class _Folder:
    """Accumulates folded Fourier coefficients over growing frequency boxes."""

    def __init__(self, grid: Grid, params: ModelParams, dtau: float, tilt: float = 0.0,
                 compensator: str = "fourier"):
        if compensator not in COMPENSATORS:
            raise ValueError(f"compensator must be one of {COMPENSATORS}")
        self.g, self.p, self.dtau, self.tilt = grid, params, dtau, tilt
        self.comp = compensator
        self.flat_r = params.sigma_r == 0.0
        Kd = 1 if self.flat_r else grid.Kd
        self.C = np.zeros((Kd, grid.Nd), dtype=complex)
        self.alpha = 0
        self._shift = tilt / (2 * np.pi)
        # growth allowance of the tilted symbol over the untilted bound
        self._log_extra = 0.0
        if tilt:
            ey = 1.0
            if params.lam > 0:
                ey = float(np.real(jump_char(params.jump, 1j * self._shift)))
            self._log_extra = dtau * (0.5 * params.sigma_z ** 2 * tilt ** 2
                                      + abs(params.lam * params.kappa * tilt)
                                      + params.lam * max(ey - 1.0, 0.0))

    def _bound(self, s_lo, s_hi, z_lo, z_hi):
        g, p = self.g, self.p

        def nearest(lo, hi):
            return 0.0 if lo <= 0 < hi else min(abs(lo), abs(hi - 1))

        eta = nearest(s_lo, s_hi) / g.Pd
        xi = 0.0 if self.flat_r else nearest(z_lo, z_hi) / g.Qd
        quad = (2 * np.pi) ** 2 * (p.sigma_z ** 2 * eta ** 2 + p.sigma_r ** 2 * xi ** 2)
        expo = -0.5 * (1 - abs(p.rho)) * quad * self.dtau + self._log_extra
        y = 0.5 * self.tilt * g.dw
        tw = (1.2 * math.cosh(y)) ** 2 * min(1.0, 1.0 / (np.pi * eta * g.dw) ** 2) if eta else (1.2 * math.cosh(y)) ** 2
        tr = 1.0 if self.flat_r or xi == 0 else min(1.0, 1.0 / (np.pi * xi * g.dr) ** 2)
        return math.exp(expo) * tw * tr

    def _tile(self, s_lo, s_hi, z_lo, z_hi):
        if self._bound(s_lo, s_hi, z_lo, z_hi) < _SKIP:
            return
        g = self.g
        s = np.arange(s_lo, s_hi)
        eta = s / g.Pd - 1j * self._shift if self.tilt else s / g.Pd
        if self.flat_r:
            coef = np.sinc(eta * g.dw) ** 2 * np.exp(self.dtau * psi(self.p, eta, 0.0, self.comp))
            self.C[0, s % g.Nd] += coef
            return
        z = np.arange(z_lo, z_hi)
        xi = z / g.Qd
        E, X = eta[None, :], xi[:, None]
        coef = trig_factor(E, X, g.dw, g.dr) * np.exp(self.dtau * psi(self.p, E, X, self.comp))
        self.C[np.ix_(z % g.Kd, s % g.Nd)] += coef

    def grow(self, alpha: int):
        """Extend the folded sum from the current box to the alpha box."""
        g = self.g
        hs, hz = g.Nd // 2, g.Kd // 2
        old = self.alpha
        s_edges = np.arange(-alpha * hs, alpha * hs + 1, hs)
        if self.flat_r:
            for s_lo, s_hi in zip(s_edges[:-1], s_edges[1:]):
                if old and -old * hs <= s_lo and s_hi <= old * hs:
                    continue
                self._tile(s_lo, s_hi, 0, 1)
        else:
            z_edges = np.arange(-alpha * hz, alpha * hz + 1, hz)
            for s_lo, s_hi in zip(s_edges[:-1], s_edges[1:]):
                s_in = old and -old * hs <= s_lo and s_hi <= old * hs
                for z_lo, z_hi in zip(z_edges[:-1], z_edges[1:]):
                    if s_in and -old * hz <= z_lo and z_hi <= old * hz:
                        continue
                    self._tile(s_lo, s_hi, z_lo, z_hi)
        self.alpha = alpha

    def folded(self) -> np.ndarray:
        if self.flat_r:
            return np.broadcast_to(self.C, (self.g.Kd, self.g.Nd))
        return self.C


def _physical(grid: Grid, C: np.ndarray) -> np.ndarray:
    """Real physical weights from folded coefficients.

    The truncation box contains one unpaired Nyquist line, so the inverse
    transform carries a tiny imaginary part; it is dropped.
    """
    gc = sfft.ifft2(C) / (grid.dw * grid.dr)
    return np.ascontiguousarray(gc.real)


def weights_physical(grid: Grid, params: ModelParams, dtau: float, alpha: int,
                     compensator: str = "fourier") -> np.ndarray:
    """g~ at truncation multiple ``alpha``, shape (Kd, Nd) in FFT index order."""
    if alpha < 1 or alpha & (alpha - 1):
        raise ValueError("alpha must be a power of two")
    if alpha > 4 * ALPHA_CAP:
        raise ValueError("alpha exceeds the transform size guard")
    f = _Folder(grid, params, dtau, compensator=compensator)
    f.grow(alpha)
    return _physical(grid, f.folded())


def monotonicity_defect(grid: Grid, g: np.ndarray) -> float:
    return grid.dw * grid.dr * float(-np.sum(np.minimum(g, 0.0)))


def weight_sum_error(grid: Grid, g: np.ndarray) -> float:
    return abs(grid.dw * grid.dr * float(np.sum(g)) - 1.0)


def _tilt_vectors(grid: Grid, tilt: float):
    x = grid.w - grid.w0
    return np.exp(-tilt * x), np.exp(tilt * x)


def select_weights(grid: Grid, params: ModelParams, dtau: float | None = None,
                   eps: float = 1e-6, eps1: float = 1e-6, alpha_cap: int = ALPHA_CAP,
                   tilt: float = 0.0, compensator: str = "fourier") -> KernelWeights:
    """Double alpha until the monotonicity and truncation tests pass.

    Parameters
    ----------
    eps, eps1
        Tolerances for the negative-mass test (scaled by dtau/T) and the
        change between successive truncations.
    tilt
        Exponential tilt used by :func:`convolve`; 0 gives the plain scheme.
    compensator
        Where the jump compensator lives: ``"fourier"`` (in Psi) or ``"drift"``.
    """
    if dtau is None:
        dtau = grid.dtau
    if not (eps > 0 and eps1 > 0):
        raise ValueError("tolerances must be positive")
    dv = grid.dw * grid.dr
    f = _Folder(grid, params, dtau, compensator=compensator)
    f.grow(1)
    g_prev = _physical(grid, f.folded())
    alpha = 2
    while True:
        f.grow(alpha)
        g = _physical(grid, f.folded())
        test1 = monotonicity_defect(grid, g)
        test2 = dv * float(np.sum(np.abs(g - g_prev)))
        if test1 < eps * dtau / grid.T and test2 < eps1:
            break
        if alpha >= alpha_cap:
            raise KernelConvergenceError(alpha, test1, test2)
        g_prev = g
        alpha *= 2

    if tilt:
        ft = _Folder(grid, params, dtau, tilt, compensator)
        ft.grow(alpha)
        g_conv = _physical(grid, ft.folded())
        down, up = _tilt_vectors(grid, tilt)
    else:
        g_conv, down, up = g, None, None
    spectrum = dv * sfft.rfft2(g_conv)
    return KernelWeights(g=g, spectrum=spectrum, alpha=alpha, defect=test1, residual=test2,
                         sum_error=weight_sum_error(grid, g), dtau=dtau, tilt=tilt,
                         tilt_down=down, tilt_up=up, dvol=dv,
                         compensator=compensator)


def convolve(slice_v: np.ndarray, kw: KernelWeights, workers: int | None = None) -> np.ndarray:
    """Circular convolution of a (Kd, Nd) slice with the weights."""
    if slice_v.shape != kw.g.shape:
        raise ValueError(f"slice shape {slice_v.shape} != kernel shape {kw.g.shape}")
    u = slice_v * kw.tilt_down if kw.tilt else slice_v
    out = sfft.irfft2(sfft.rfft2(u, workers=workers) * kw.spectrum, s=slice_v.shape,
                      workers=workers)
    if kw.tilt:
        out *= kw.tilt_up
    return out
