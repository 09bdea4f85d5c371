"""Numba-compiled kernels for the hot inner loops.

Accumulators are float64 scalars, stores are float32; fastmath stays off so
evaluation follows the written loop order (deterministic per backend).
Compiled artifacts are cached on disk next to this module.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def conv1d_forward(xp, w):
    b, cin, lp = xp.shape
    cout, _, k = w.shape
    lout = lp - k + 1
    y = np.empty((b, cout, lout), dtype=np.float32)
    for ib in range(b):
        for oc in range(cout):
            for ol in range(lout):
                acc = 0.0
                for ic in range(cin):
                    for ik in range(k):
                        acc += xp[ib, ic, ol + ik] * w[oc, ic, ik]
                y[ib, oc, ol] = acc
    return y


@njit(cache=True)
def conv1d_backward_input(gy, w, lp):
    b, cout, lout = gy.shape
    _, cin, k = w.shape
    gx = np.empty((b, cin, lp), dtype=np.float32)
    for ib in range(b):
        for ic in range(cin):
            for il in range(lp):
                acc = 0.0
                for oc in range(cout):
                    for ik in range(k):
                        ol = il - ik
                        if 0 <= ol < lout:
                            acc += gy[ib, oc, ol] * w[oc, ic, ik]
                gx[ib, ic, il] = acc
    return gx


@njit(cache=True)
def conv1d_backward_weight(xp, gy):
    b, cin, lp = xp.shape
    cout = gy.shape[1]
    lout = gy.shape[2]
    k = lp - lout + 1
    gw = np.empty((cout, cin, k), dtype=np.float32)
    for oc in range(cout):
        for ic in range(cin):
            for ik in range(k):
                acc = 0.0
                for ib in range(b):
                    for ol in range(lout):
                        acc += xp[ib, ic, ol + ik] * gy[ib, oc, ol]
                gw[oc, ic, ik] = acc
    return gw


@njit(cache=True)
def maxpool1d_forward(x, pool):
    b, c, length = x.shape
    lo = length // pool
    y = np.empty((b, c, lo), dtype=np.float32)
    idx = np.empty((b, c, lo), dtype=np.int64)
    for ib in range(b):
        for ic in range(c):
            for ol in range(lo):
                base = ol * pool
                best = x[ib, ic, base]
                best_at = base
                for ip in range(1, pool):
                    v = x[ib, ic, base + ip]
                    if v > best:  # strict: ties keep the lowest index
                        best = v
                        best_at = base + ip
                y[ib, ic, ol] = best
                idx[ib, ic, ol] = best_at
    return y, idx


@njit(cache=True)
def maxpool1d_backward(gy, idx, length):
    b, c, lo = gy.shape
    gx = np.zeros((b, c, length), dtype=np.float32)
    for ib in range(b):
        for ic in range(c):
            for ol in range(lo):
                gx[ib, ic, idx[ib, ic, ol]] += gy[ib, ic, ol]
    return gx
