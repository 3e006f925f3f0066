"""Multilinear interpolation on the (w, r, a) lattice.

Queries outside the padded domain are clamped to the boundary node, which
keeps the operator monotone and shift-equivariant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .grid import Grid


@dataclass
class ValueField:
    values: np.ndarray  # (J+1, Kd, Nd)
    grid: Grid
    m: int = 0

    def __post_init__(self):
        if self.values.shape != self.grid.shape():
            raise ValueError(f"field shape {self.values.shape} != {self.grid.shape()}")


@njit(cache=True)
def locate_uniform(x, x0, dx, n):
    """Cell index i in [0, n-2] and fraction t in [0, 1] for x on x0 + i*dx."""
    s = (x - x0) / dx
    if s <= 0.0:
        return 0, 0.0
    if s >= n - 1:
        return n - 2, 1.0
    i = int(s)
    if i > n - 2:
        i = n - 2
    return i, s - i


@njit(cache=True)
def locate_sorted(x, nodes):
    n = nodes.shape[0]
    if x <= nodes[0]:
        return 0, 0.0
    if x >= nodes[n - 1]:
        return n - 2, 1.0
    i = np.searchsorted(nodes, x, side="right") - 1
    if i > n - 2:
        i = n - 2
    return i, (x - nodes[i]) / (nodes[i + 1] - nodes[i])


@njit(cache=True)
def _interp3(values, w0, dw, r0, dr, a_nodes, wq, rq, aq, out):
    J1, Kd, Nd = values.shape
    for p in range(wq.shape[0]):
        iw, tw = locate_uniform(wq[p], w0, dw, Nd)
        ir, tr = locate_uniform(rq[p], r0, dr, Kd)
        if J1 > 1:
            ia, ta = locate_sorted(aq[p], a_nodes)
        else:
            ia, ta = 0, 0.0
        acc = 0.0
        for da in range(2):
            fa = ta if da else 1.0 - ta
            if fa == 0.0:
                continue
            for dk in range(2):
                fr = tr if dk else 1.0 - tr
                if fr == 0.0:
                    continue
                row = values[ia + da, ir + dk]
                acc += fa * fr * ((1.0 - tw) * row[iw] + tw * row[iw + 1])
        out[p] = acc


def interp3(field: ValueField, w, r, a) -> np.ndarray | float:
    """Trilinear interpolant of ``field`` at (w, r, a); broadcasts its inputs."""
    g = field.grid
    wq, rq, aq = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (w, r, a)))
    shape = wq.shape
    wq, rq, aq = (np.ascontiguousarray(x).ravel() for x in (wq, rq, aq))
    if not (np.all(np.isfinite(wq)) and np.all(np.isfinite(rq)) and np.all(np.isfinite(aq))):
        raise ValueError("non-finite interpolation query")
    out = np.empty(wq.shape[0])
    _interp3(field.values, g.w[0], g.dw, g.r[0], g.dr, g.a, wq, rq, aq, out)
    out = out.reshape(shape)
    return float(out) if out.ndim == 0 else out
