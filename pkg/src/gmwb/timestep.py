"""One backward time step on the interior block.

Per guarantee level a_j the step is: withdrawal intervention (a local
branch with gamma <= C_r dtau and a penalised finite branch), the
semi-Lagrangian shift along the drift characteristics with rate
discounting, convolution with the Green's function weights, and the
pointwise max of the two branches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .grid import Grid
from .interp import locate_sorted, locate_uniform
from .kernel import KernelWeights, convolve
from .model import Contract, ModelParams


def cashflow_f(gamma, contract: Contract, dtau: float):
    """Net cash to the holder for withdrawing ``gamma`` over one step."""
    crdt = contract.C_r * dtau
    g = np.asarray(gamma, dtype=float)
    out = np.where(g <= crdt, g, g * (1 - contract.mu) + contract.mu * crdt - contract.c)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class StepConsts:
    crdt: float
    mu: float
    c: float
    n_loc: int = 8
    n_ref: int = 4
    n_zoom: int = 4

    @classmethod
    def of(cls, contract: Contract, dtau: float, n_loc: int = 8, n_ref: int = 4, n_zoom: int = 4):
        return cls(contract.C_r * dtau, contract.mu, contract.c, n_loc, n_ref, n_zoom)


@njit(cache=True)
def _w_after(ezn, gamma, e_lo, w_lo, dw, Nd):
    x = ezn - gamma
    if x < e_lo:
        x = e_lo
    return locate_uniform(math.log(x), w_lo, dw, Nd)


@njit(cache=True)
def gamma_table(ez, n_lo, n_hi, h, count, e_lo, w_lo, dw, Nd):
    """w-stencils after withdrawing i*h, i < count, for columns n_lo..n_hi-1."""
    nn = n_hi - n_lo
    iw = np.empty((count, nn), np.int64)
    tw = np.empty((count, nn))
    for i in range(count):
        for p in range(nn):
            iw[i, p], tw[i, p] = _w_after(ez[n_lo + p], i * h, e_lo, w_lo, dw, Nd)
    return iw, tw


@njit(cache=True)
def _local_candidates(aj, crdt, a, n_loc):
    top = min(aj, crdt)
    if top <= 0.0:
        return np.zeros(1)
    buf = np.empty(n_loc + a.shape[0] + 1)
    m = 0
    for i in range(n_loc + 1):
        buf[m] = top * i / n_loc
        m += 1
    for q in range(a.shape[0]):
        g = aj - a[q]
        if 0.0 < g < top:
            buf[m] = g
            m += 1
    return np.unique(buf[:m])


@njit(cache=True)
def _bilin(V, k, ia, ta, iw, tw):
    val = (1 - tw) * V[ia, k, iw] + tw * V[ia, k, iw + 1]
    if ta > 0.0:
        hi = (1 - tw) * V[ia + 1, k, iw] + tw * V[ia + 1, k, iw + 1]
        val = (1 - ta) * val + ta * hi
    return val


@njit(cache=True)
def _locate_a(x, a):
    if a.shape[0] > 1:
        return locate_sorted(x, a)
    return 0, 0.0


@njit(cache=True)
def intervene_slice(V, j, a, ez, w_lo, dw, e_lo, k_lo, k_hi, n_lo, n_hi,
                    crdt, mu, c, n_loc, n_ref, n_zoom, tab_iw, tab_tw, loc_iw, loc_tw,
                    v1, v2, g1, g2):
    """Branch suprema at guarantee node j for rows k_lo..k_hi-1, cols n_lo..n_hi-1.

    ``tab_iw``/``tab_tw`` hold w-stencils for withdrawals on the lattice
    i * da / (n_ref + 1) when the a-grid is uniform, ``loc_iw``/``loc_tw`` on
    the lattice i * C_r dtau / (n_loc 2^n_zoom); pass empty tables otherwise.
    The best local candidate is polished by a bisection zoom on the fine
    lattice.  Both branches also try emptying the account, and the finite
    branch includes the limit gamma -> C_r dtau from above.  Returns False
    when the finite branch is empty (a_j <= C_r dtau).
    """
    Nd = V.shape[2]
    aj = a[j]
    nn = n_hi - n_lo
    sub = n_ref + 1
    use_tab = tab_iw.shape[0] > 0
    top = min(aj, crdt)
    fine = 1 << n_zoom
    nf = n_loc * fine + 1
    use_loc = loc_iw.shape[0] == nf and aj >= crdt
    hf = top / (nf - 1)

    # local branch: gamma in [0, a_j ^ C_r dtau], cash = gamma
    cand = _local_candidates(aj, crdt, a, n_loc)
    nc = cand.shape[0]
    ia_c = np.empty(nc, np.int64)
    ta_c = np.empty(nc)
    iw_c = np.empty((nc, nn), np.int64)
    tw_c = np.empty((nc, nn))
    for ci in range(nc):
        ia_c[ci], ta_c[ci] = _locate_a(aj - cand[ci], a)
        for p in range(nn):
            iw_c[ci, p], tw_c[ci, p] = _w_after(ez[n_lo + p], cand[ci], e_lo, w_lo, dw, Nd)
    ia_f = np.empty(nf, np.int64)
    ta_f = np.empty(nf)
    for i in range(nf):
        ia_f[i], ta_f[i] = _locate_a(aj - i * hf, a)
    # withdrawals landing on w nodes where the field has its sharpest kinks:
    # the floor (account emptied) and the two nodes at the left-pad seam
    seam = np.array([0, n_lo - 1, n_lo])
    ns = seam.shape[0]
    ia_z = np.empty((ns, nn), np.int64)
    ta_z = np.empty((ns, nn))
    gz = np.empty((ns, nn))
    for si in range(ns):
        em = e_lo if seam[si] == 0 else math.exp(w_lo + seam[si] * dw)
        for p in range(nn):
            gz[si, p] = ez[n_lo + p] - em
            ia_z[si, p], ta_z[si, p] = _locate_a(aj - gz[si, p], a)

    # finite branch on a-node offsets, smallest gamma first
    qs = np.empty(j, np.int64)
    nq = 0
    for q in range(j - 1, -1, -1):
        if aj - a[q] > crdt:
            qs[nq] = q
            nq += 1
    rows = np.empty(nq, np.int64)
    if use_tab:
        IW, TW = tab_iw, tab_tw
        for t in range(nq):
            rows[t] = (j - qs[t]) * sub
    else:
        IW = np.empty((nq, nn), np.int64)
        TW = np.empty((nq, nn))
        for t in range(nq):
            rows[t] = t
            gam = aj - a[qs[t]]
            for p in range(nn):
                IW[t, p], TW[t, p] = _w_after(ez[n_lo + p], gam, e_lo, w_lo, dw, Nd)
    const2 = mu * crdt - c
    ia_e, ta_e = _locate_a(aj - crdt, a)
    iw_e = np.empty(nn, np.int64)
    tw_e = np.empty(nn)
    for p in range(nn):
        iw_e[p], tw_e[p] = _w_after(ez[n_lo + p], crdt, e_lo, w_lo, dw, Nd)

    best = np.empty(nn)
    gb = np.empty(nn)
    bq = np.empty(nn, np.int64)
    for k in range(k_lo, k_hi):
        # local
        for p in range(nn):
            best[p] = -np.inf
        for ci in range(nc):
            ia = ia_c[ci]
            ta = ta_c[ci]
            for p in range(nn):
                val = _bilin(V, k, ia, ta, iw_c[ci, p], tw_c[ci, p]) + cand[ci]
                if val > best[p]:
                    best[p] = val
                    gb[p] = cand[ci]
        for p in range(nn):
            for si in range(ns):
                gam = gz[si, p]
                if 0.0 < gam < top:
                    val = _bilin(V, k, ia_z[si, p], ta_z[si, p], seam[si], 0.0) + gam
                    if val > best[p]:
                        best[p] = val
                        gb[p] = gam
            if n_zoom > 0 and top > 0.0:
                b = int(round(gb[p] / hf))
                step = fine // 2
                while step >= 1:
                    nb = b
                    for i in (b - step, b + step):
                        if i < 0 or i >= nf:
                            continue
                        if use_loc:
                            iw, tw = loc_iw[i, p], loc_tw[i, p]
                        else:
                            iw, tw = _w_after(ez[n_lo + p], i * hf, e_lo, w_lo, dw, Nd)
                        val = _bilin(V, k, ia_f[i], ta_f[i], iw, tw) + i * hf
                        if val > best[p]:
                            best[p] = val
                            gb[p] = i * hf
                            nb = i
                    b = nb
                    step //= 2
            v1[k, n_lo + p] = best[p]
            g1[k, n_lo + p] = gb[p]
        if nq == 0:
            continue
        # finite, starting from the limit gamma -> C_r dtau and the w-node candidates
        for p in range(nn):
            best[p] = _bilin(V, k, ia_e, ta_e, iw_e[p], tw_e[p]) + crdt - c
            bq[p] = j
            for si in range(ns):
                gam = gz[si, p]
                if crdt < gam <= aj:
                    val = _bilin(V, k, ia_z[si, p], ta_z[si, p], seam[si], 0.0) + (1 - mu) * gam + const2
                    if val > best[p]:
                        best[p] = val
                        gb[p] = gam
                        bq[p] = -1
        for t in range(nq):
            q = qs[t]
            cash = (1 - mu) * (aj - a[q]) + const2
            iwr = IW[rows[t]]
            twr = TW[rows[t]]
            Vq = V[q, k]
            for p in range(nn):
                iw = iwr[p]
                tw = twr[p]
                val = Vq[iw] + tw * (Vq[iw + 1] - Vq[iw]) + cash
                if val > best[p]:
                    best[p] = val
                    bq[p] = q
        # refine inside the a-cells next to the best node
        for p in range(nn):
            q0 = bq[p]
            if q0 < 0 or q0 == j:
                v2[k, n_lo + p] = best[p]
                g2[k, n_lo + p] = gb[p] if q0 < 0 else crdt
                continue
            gbest = aj - a[q0]
            for side in range(2):
                if side == 0:
                    if q0 == 0:
                        continue
                    ql = q0 - 1
                else:
                    ql = q0
                for f in range(1, sub):
                    at = a[ql] + (a[ql + 1] - a[ql]) * f / sub
                    gam = aj - at
                    if gam <= crdt:
                        continue
                    if use_tab:
                        row = (j - ql) * sub - f
                        iw = tab_iw[row, p]
                        tw = tab_tw[row, p]
                    else:
                        iw, tw = _w_after(ez[n_lo + p], gam, e_lo, w_lo, dw, Nd)
                    ta = f / sub
                    lo = (1 - tw) * V[ql, k, iw] + tw * V[ql, k, iw + 1]
                    hi = (1 - tw) * V[ql + 1, k, iw] + tw * V[ql + 1, k, iw + 1]
                    val = (1 - ta) * lo + ta * hi + (1 - mu) * gam + const2
                    if val > best[p]:
                        best[p] = val
                        gbest = gam
            v2[k, n_lo + p] = best[p]
            g2[k, n_lo + p] = gbest
    return nq > 0


@dataclass(frozen=True)
class Departure:
    """Bilinear stencil of the departure points for interior rows."""
    k_rows: np.ndarray  # interior row indices
    ir: np.ndarray
    tr: np.ndarray
    shift: np.ndarray  # integer column shift per row
    tw: np.ndarray
    disc: np.ndarray  # 1 / (1 + dtau r_k)


def departure_points(grid: Grid, params: ModelParams, dtau: float,
                     compensator: str = "fourier") -> Departure:
    ks = np.arange(grid.Kd)[grid.k_in]
    r = grid.r[ks]
    mu = r - 0.5 * params.sigma_z ** 2 - params.beta
    if compensator == "drift":
        mu = mu - params.lam * params.kappa
    drift = mu * math.expm1(dtau)
    e = math.exp(-params.delta * dtau)
    r_dep = r * e - params.theta * (e - 1.0)
    s = np.clip((r_dep - grid.r[0]) / grid.dr, 0.0, grid.Kd - 1)
    ir = np.minimum(np.floor(s).astype(np.int64), grid.Kd - 2)
    tr = s - ir
    x = drift / grid.dw
    shift = np.floor(x).astype(np.int64)
    tw = x - shift
    return Departure(ks, ir, tr, shift, tw, 1.0 / (1.0 + dtau * r))


@njit(cache=True)
def _sl(X, out, ks, ir, tr, shift, tw, disc, n_lo, n_hi):
    Nd = X.shape[1]
    for t in range(ks.shape[0]):
        k = ks[t]
        r0 = ir[t]
        fr = tr[t]
        fw = tw[t]
        for n in range(n_lo, n_hi):
            i = n + shift[t]
            if i < 0:
                i, f = 0, 0.0
            elif i >= Nd - 1:
                i, f = Nd - 2, 1.0
            else:
                f = fw
            lo = (1 - f) * X[r0, i] + f * X[r0, i + 1]
            hi = (1 - f) * X[r0 + 1, i] + f * X[r0 + 1, i + 1]
            out[k, n] = ((1 - fr) * lo + fr * hi) * disc[t]


def sl_shift(merged: np.ndarray, dep: Departure, grid: Grid) -> np.ndarray:
    """Shift a (Kd, Nd) slice whose interior holds post-intervention values.

    Padding entries of the result carry the input (boundary) values.
    """
    out = merged.copy()
    n = grid.n_in
    _sl(merged, out, dep.k_rows, dep.ir, dep.tr, dep.shift, dep.tw, dep.disc, n.start, n.stop)
    return out


def combine_max(v1, v2, g1, g2):
    """Pointwise max; ties go to the local branch.  ``v2 is None`` means absent."""
    if v2 is None:
        return v1, g1
    take2 = v2 > v1
    return np.where(take2, v2, v1), np.where(take2, g2, g1)


class Stepper:
    """Interior update for every guarantee level at one time step."""

    def __init__(self, grid: Grid, params: ModelParams, contract: Contract,
                 kernel: KernelWeights, consts: StepConsts, workers: int | None = None):
        self.grid, self.params, self.contract = grid, params, contract
        self.kernel, self.consts, self.workers = kernel, consts, workers
        self.dep = departure_points(grid, params, grid.dtau, kernel.compensator)
        g = grid
        ez = np.exp(g.w)
        e_lo = math.exp(g.w[0])
        self._args = (g.a, ez, g.w[0], g.dw, e_lo,
                      g.k_in.start, g.k_in.stop, g.n_in.start, g.n_in.stop)
        da = np.diff(g.a)
        sub = consts.n_ref + 1
        if np.allclose(da, da[0], rtol=1e-12, atol=0):
            self.tables = gamma_table(ez, g.n_in.start, g.n_in.stop, da[0] / sub,
                                      g.J * sub + 1, e_lo, g.w[0], g.dw, g.Nd)
        else:
            self.tables = (np.empty((0, 1), np.int64), np.empty((0, 1)))
        nf = consts.n_loc * (1 << consts.n_zoom)
        self.tables += gamma_table(ez, g.n_in.start, g.n_in.stop, consts.crdt / nf, nf + 1,
                                   e_lo, g.w[0], g.dw, g.Nd)

    def intervene(self, V: np.ndarray, j: int):
        g = self.grid
        shp = (g.Kd, g.Nd)
        v1, v2 = V[j].copy(), V[j].copy()
        g1, g2 = np.zeros(shp), np.zeros(shp)
        c = self.consts
        has2 = intervene_slice(V, j, *self._args, c.crdt, c.mu, c.c, c.n_loc, c.n_ref, c.n_zoom,
                               *self.tables, v1, v2, g1, g2)
        return v1, (v2 if has2 else None), g1, g2

    def advance_slice(self, V: np.ndarray, j: int):
        """Interior values and controls at level j for the next time."""
        g = self.grid
        v1, v2, g1, g2 = self.intervene(V, j)
        blk = (g.k_in, g.n_in)
        u1 = convolve(sl_shift(v1, self.dep, g), self.kernel, self.workers)[blk]
        u2 = None
        if v2 is not None:
            u2 = convolve(sl_shift(v2, self.dep, g), self.kernel, self.workers)[blk]
        return combine_max(u1, u2, g1[blk], g2[blk])
