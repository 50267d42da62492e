"""Compiled right-hand-side kernels.

Two passes over the grid.  Pass A computes the gauge vector field on the
one-node-margin region so its first derivatives exist at every physical
node; pass B assembles the full right hand side nodewise: metric
derivatives, connection, lowered curvature tensor, trace-adjusted Ricci,
the cross tensor with its degeneracy fallback, and the Lie-derivative drag
term.  The formulas mirror the numpy route in ``curvature``/``deturck``;
agreement is rounding-level, not bitwise, since summation orders differ.

Nothing here uses fastmath: flat data must contract to exact zeros so that
flat metrics remain bitwise fixed points.  Every node writes only its own
output slot, so results do not depend on the thread count.
"""

from __future__ import annotations

import os

import numpy as np
from numba import config as _nb_config
from numba import njit, prange, set_num_threads

from .errors import GhostStateError

# guard constants shared with the numpy route
_RTOL = 1e-36
_ATOL = 1e-300

_threads_applied = False


def _apply_thread_cap():
    global _threads_applied
    if _threads_applied:
        return
    raw = os.environ.get("XCF_THREADS")
    if raw:
        want = max(1, int(raw))
        set_num_threads(min(want, _nb_config.NUMBA_NUM_THREADS))
    _threads_applied = True


@njit(cache=True, inline="always")
def _unp(v, m):
    # packed (11, 12, 13, 22, 23, 33) -> symmetric 3x3
    m[0, 0] = v[0]
    m[0, 1] = v[1]
    m[1, 0] = v[1]
    m[0, 2] = v[2]
    m[2, 0] = v[2]
    m[1, 1] = v[3]
    m[1, 2] = v[4]
    m[2, 1] = v[4]
    m[2, 2] = v[5]


@njit(cache=True, inline="always")
def _det3(m):
    return (m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
            - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
            + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0]))


@njit(cache=True, inline="always")
def _adj3(m, out):
    for i in range(3):
        i1 = (i + 1) % 3
        i2 = (i + 2) % 3
        for j in range(3):
            j1 = (j + 1) % 3
            j2 = (j + 2) % 3
            out[j, i] = m[i1, j1] * m[i2, j2] - m[i1, j2] * m[i2, j1]


@njit(cache=True, parallel=True)
def _w_kernel(g, gbg, hx, hy, hz, w):
    nxt, nyt, nzt = g.shape[0], g.shape[1], g.shape[2]
    for i in prange(1, nxt - 1):
        glo = np.empty((3, 3))
        adjm = np.empty((3, 3))
        ginv = np.empty((3, 3))
        dgp = np.empty((3, 6))
        dg = np.empty((3, 3, 3))
        gf = np.empty((3, 3, 3))
        gam = np.empty((3, 3, 3))
        for j in range(1, nyt - 1):
            for k in range(1, nzt - 1):
                _unp(g[i, j, k], glo)
                for s in range(6):
                    dgp[0, s] = (g[i + 1, j, k, s] - g[i - 1, j, k, s]) / (2.0 * hx)
                    dgp[1, s] = (g[i, j + 1, k, s] - g[i, j - 1, k, s]) / (2.0 * hy)
                    dgp[2, s] = (g[i, j, k + 1, s] - g[i, j, k - 1, s]) / (2.0 * hz)
                for a in range(3):
                    _unp(dgp[a], dg[a])
                detg = _det3(glo)
                _adj3(glo, adjm)
                for r in range(3):
                    for c in range(3):
                        ginv[r, c] = adjm[r, c] / detg
                for l in range(3):
                    for r in range(3):
                        for c in range(3):
                            gf[l, r, c] = 0.5 * (dg[r, c, l] + dg[c, r, l]
                                                 - dg[l, r, c])
                for a in range(3):
                    for r in range(3):
                        for c in range(3):
                            acc = 0.0
                            for l in range(3):
                                acc += ginv[a, l] * gf[l, r, c]
                            gam[a, r, c] = acc
                for a in range(3):
                    acc = 0.0
                    for p in range(3):
                        for q in range(3):
                            acc += ginv[p, q] * (gam[a, p, q] - gbg[i, j, k, a, p, q])
                    w[i, j, k, a] = acc


@njit(cache=True, parallel=True)
def _rhs_kernel(g, w, sign, hx, hy, hz, gw, out):
    nx, ny, nz = out.shape[0], out.shape[1], out.shape[2]
    for ii in prange(nx):
        i = ii + gw
        glo = np.empty((3, 3))
        adjm = np.empty((3, 3))
        ginv = np.empty((3, 3))
        dgp = np.empty((3, 6))
        dg = np.empty((3, 3, 3))
        ddgp = np.empty((3, 3, 6))
        ddg = np.empty((3, 3, 3, 3))
        gf = np.empty((3, 3, 3))
        gam = np.empty((3, 3, 3))
        riem = np.empty((3, 3, 3, 3))
        ric = np.empty((3, 3))
        elo = np.empty((3, 3))
        ehi = np.empty((3, 3))
        raised = np.empty((3, 3))
        cr = np.empty((3, 3))
        dwm = np.empty((3, 3))
        for jj in range(ny):
            j = jj + gw
            for kk in range(nz):
                k = kk + gw

                _unp(g[i, j, k], glo)
                for s in range(6):
                    dgp[0, s] = (g[i + 1, j, k, s] - g[i - 1, j, k, s]) / (2.0 * hx)
                    dgp[1, s] = (g[i, j + 1, k, s] - g[i, j - 1, k, s]) / (2.0 * hy)
                    dgp[2, s] = (g[i, j, k + 1, s] - g[i, j, k - 1, s]) / (2.0 * hz)
                for a in range(3):
                    _unp(dgp[a], dg[a])
                for s in range(6):
                    c0 = g[i, j, k, s]
                    ddgp[0, 0, s] = (g[i + 1, j, k, s] - 2.0 * c0
                                     + g[i - 1, j, k, s]) / (hx * hx)
                    ddgp[1, 1, s] = (g[i, j + 1, k, s] - 2.0 * c0
                                     + g[i, j - 1, k, s]) / (hy * hy)
                    ddgp[2, 2, s] = (g[i, j, k + 1, s] - 2.0 * c0
                                     + g[i, j, k - 1, s]) / (hz * hz)
                    ddgp[0, 1, s] = (g[i + 1, j + 1, k, s] - g[i + 1, j - 1, k, s]
                                     - g[i - 1, j + 1, k, s]
                                     + g[i - 1, j - 1, k, s]) / (4.0 * hx * hy)
                    ddgp[0, 2, s] = (g[i + 1, j, k + 1, s] - g[i + 1, j, k - 1, s]
                                     - g[i - 1, j, k + 1, s]
                                     + g[i - 1, j, k - 1, s]) / (4.0 * hx * hz)
                    ddgp[1, 2, s] = (g[i, j + 1, k + 1, s] - g[i, j + 1, k - 1, s]
                                     - g[i, j - 1, k + 1, s]
                                     + g[i, j - 1, k - 1, s]) / (4.0 * hy * hz)
                    ddgp[1, 0, s] = ddgp[0, 1, s]
                    ddgp[2, 0, s] = ddgp[0, 2, s]
                    ddgp[2, 1, s] = ddgp[1, 2, s]
                for a in range(3):
                    for b in range(3):
                        _unp(ddgp[a, b], ddg[a, b])

                detg = _det3(glo)
                _adj3(glo, adjm)
                for r in range(3):
                    for c in range(3):
                        ginv[r, c] = adjm[r, c] / detg

                for l in range(3):
                    for r in range(3):
                        for c in range(3):
                            gf[l, r, c] = 0.5 * (dg[r, c, l] + dg[c, r, l]
                                                 - dg[l, r, c])
                for a in range(3):
                    for r in range(3):
                        for c in range(3):
                            acc = 0.0
                            for l in range(3):
                                acc += ginv[a, l] * gf[l, r, c]
                            gam[a, r, c] = acc

                for p in range(3):
                    for q in range(3):
                        for r in range(3):
                            for c in range(3):
                                val = 0.5 * (ddg[p, r, q, c] + ddg[q, c, p, r]
                                             - ddg[p, c, q, r] - ddg[q, r, p, c])
                                for n in range(3):
                                    val += (gf[n, p, r] * gam[n, q, c]
                                            - gf[n, p, c] * gam[n, q, r])
                                riem[p, q, r, c] = val

                scal = 0.0
                for a in range(3):
                    for b in range(3):
                        acc = 0.0
                        for p in range(3):
                            for q in range(3):
                                acc += ginv[p, q] * riem[p, a, b, q]
                        ric[a, b] = acc
                for a in range(3):
                    for b in range(3):
                        scal += ginv[a, b] * ric[a, b]
                for a in range(3):
                    for b in range(3):
                        elo[a, b] = ric[a, b] - 0.5 * scal * glo[a, b]
                for a in range(3):
                    for b in range(3):
                        acc = 0.0
                        for p in range(3):
                            for q in range(3):
                                acc += ginv[a, p] * elo[p, q] * ginv[b, q]
                        ehi[a, b] = acc

                det_ehi = _det3(ehi)
                det_e = _det3(elo) / detg
                scale = 0.0
                for a in range(3):
                    for b in range(3):
                        v = abs(ehi[a, b])
                        if v > scale:
                            scale = v
                if abs(det_ehi) <= _RTOL * scale * scale * scale + _ATOL:
                    # alternator route: adjugate of lowered E raised by the
                    # volume factor, then both slots lowered again
                    _adj3(elo, adjm)
                    for a in range(3):
                        for b in range(3):
                            raised[a, b] = adjm[a, b] / detg
                    for a in range(3):
                        for b in range(3):
                            acc = 0.0
                            for p in range(3):
                                for q in range(3):
                                    acc += glo[a, p] * raised[p, q] * glo[b, q]
                            cr[a, b] = acc
                else:
                    _adj3(ehi, adjm)
                    coef = det_e / det_ehi
                    for a in range(3):
                        for b in range(3):
                            cr[a, b] = coef * adjm[a, b]

                for a in range(3):
                    dwm[0, a] = (w[i + 1, j, k, a] - w[i - 1, j, k, a]) / (2.0 * hx)
                    dwm[1, a] = (w[i, j + 1, k, a] - w[i, j - 1, k, a]) / (2.0 * hy)
                    dwm[2, a] = (w[i, j, k + 1, a] - w[i, j, k - 1, a]) / (2.0 * hz)

                for r in range(3):
                    for c in range(3):
                        acc = (w[i, j, k, 0] * dg[0, r, c]
                               + w[i, j, k, 1] * dg[1, r, c]
                               + w[i, j, k, 2] * dg[2, r, c])
                        for a in range(3):
                            acc += glo[a, c] * dwm[r, a] + glo[r, a] * dwm[c, a]
                        cr[r, c] = sign * 2.0 * cr[r, c] + acc

                out[ii, jj, kk, 0] = cr[0, 0]
                out[ii, jj, kk, 1] = cr[0, 1]
                out[ii, jj, kk, 2] = cr[0, 2]
                out[ii, jj, kk, 3] = cr[1, 1]
                out[ii, jj, kk, 4] = cr[1, 2]
                out[ii, jj, kk, 5] = cr[2, 2]


def rhs_numba(field, sign, bg) -> np.ndarray:
    """Packed right hand side on the physical region, compiled path."""
    if not field.ghosts_filled:
        raise GhostStateError("right hand side needs filled ghosts")
    _apply_thread_cap()
    chart = field.chart
    hx, hy, hz = chart.spacings
    w = np.zeros(chart.shape_total + (3,), dtype=np.float64)
    _w_kernel(field.g, bg.gamma, hx, hy, hz, w)
    out = np.empty(chart.shape_phys + (6,), dtype=np.float64)
    _rhs_kernel(field.g, w, float(sign), hx, hy, hz, chart.ghost_width, out)
    return out
