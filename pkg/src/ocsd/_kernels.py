"""Compiled inner loops for the 3x3 convolution.

Sequential (parallel=False) numba kernels with a fixed accumulation
order, so results are bit-deterministic for a given input on a given
build.  Loops are row-centric: for each output row, all channel and
kernel-offset contributions run over cache-hot row slices.  The wrappers
in :mod:`ocsd.autodiff` handle padding, shape checks, and tape
recording; these functions only stream over preallocated contiguous
arrays.  Each compiles once per dtype (float32 for training, float64
for gradient checks).
"""

from __future__ import annotations

import numba as nb


@nb.njit(cache=True, fastmath=False)
def conv3x3_forward(xp, w, b, out):
    # xp: (n, ci, H+2, W+2) zero-padded input; out: (n, co, H, W)
    n, ci, hp, wp = xp.shape
    h, wd = hp - 2, wp - 2
    co = w.shape[0]
    for ni in range(n):
        for y in range(h):
            for o in range(co):
                row = out[ni, o, y]
                bias = b[o]
                for xx in range(wd):
                    row[xx] = bias
                for i in range(ci):
                    for dy in range(3):
                        xr = xp[ni, i, y + dy]
                        for dx in range(3):
                            wv = w[o, i, dy, dx]
                            for xx in range(wd):
                                row[xx] += wv * xr[xx + dx]


@nb.njit(cache=True, fastmath=False)
def conv3x3_grad_input(g, w, gxp):
    # g: (n, co, H, W); gxp: (n, ci, H+2, W+2) preallocated zeros
    n, co, h, wd = g.shape
    ci = w.shape[1]
    for ni in range(n):
        for y in range(h):
            for o in range(co):
                gr = g[ni, o, y]
                for i in range(ci):
                    for dy in range(3):
                        gxr = gxp[ni, i, y + dy]
                        for dx in range(3):
                            wv = w[o, i, dy, dx]
                            for xx in range(wd):
                                gxr[xx + dx] += wv * gr[xx]


@nb.njit(cache=True, fastmath=False)
def conv3x3_grad_weight(g, xp, gw):
    # gw: (co, ci, 3, 3) preallocated zeros.  The row reduction runs in
    # eight explicit lanes folded in a fixed order, which keeps the
    # result deterministic while letting the lanes run in parallel
    # registers.
    n, co, h, wd = g.shape
    ci = xp.shape[1]
    wd8 = wd - (wd % 8)
    for ni in range(n):
        for y in range(h):
            for o in range(co):
                gr = g[ni, o, y]
                for i in range(ci):
                    for dy in range(3):
                        xr = xp[ni, i, y + dy]
                        for dx in range(3):
                            a0 = gw.dtype.type(0)
                            a1 = a0
                            a2 = a0
                            a3 = a0
                            a4 = a0
                            a5 = a0
                            a6 = a0
                            a7 = a0
                            for xx in range(0, wd8, 8):
                                a0 += gr[xx] * xr[xx + dx]
                                a1 += gr[xx + 1] * xr[xx + 1 + dx]
                                a2 += gr[xx + 2] * xr[xx + 2 + dx]
                                a3 += gr[xx + 3] * xr[xx + 3 + dx]
                                a4 += gr[xx + 4] * xr[xx + 4 + dx]
                                a5 += gr[xx + 5] * xr[xx + 5 + dx]
                                a6 += gr[xx + 6] * xr[xx + 6 + dx]
                                a7 += gr[xx + 7] * xr[xx + 7 + dx]
                            acc = ((a0 + a1) + (a2 + a3)) + ((a4 + a5) + (a6 + a7))
                            for xx in range(wd8, wd):
                                acc += gr[xx] * xr[xx + dx]
                            gw[o, i, dy, dx] += acc
