"""Pure-numpy kernel fallbacks.

Same contracts as ``_kernels_numba``: float32 in/out, float64 accumulation
inside the contractions. Inputs arrive pre-padded; padding policy lives in
the autodiff layer.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv1d_forward(xp: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Cross-correlation. xp: (B, Cin, Lp), w: (Cout, Cin, K) -> (B, Cout, Lp-K+1)."""
    k = w.shape[2]
    windows = sliding_window_view(xp, k, axis=2)  # (B, Cin, Lout, K)
    y = np.einsum("bclk,ock->bol", windows.astype(np.float64), w.astype(np.float64))
    return y.astype(np.float32)


def conv1d_backward_input(gy: np.ndarray, w: np.ndarray, lp: int) -> np.ndarray:
    """Gradient w.r.t. the (padded) input: full correlation with the flipped kernel."""
    k = w.shape[2]
    gy_pad = np.pad(gy, ((0, 0), (0, 0), (k - 1, k - 1)))
    windows = sliding_window_view(gy_pad, k, axis=2)  # (B, Cout, Lp, K)
    w_flip = w[:, :, ::-1]
    gx = np.einsum("bolk,ock->bcl", windows.astype(np.float64), w_flip.astype(np.float64))
    assert gx.shape[2] == lp
    return gx.astype(np.float32)


def conv1d_backward_weight(xp: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the kernel. xp: (B, Cin, Lp), gy: (B, Cout, Lout) -> (Cout, Cin, K)."""
    k = xp.shape[2] - gy.shape[2] + 1
    windows = sliding_window_view(xp, k, axis=2)  # (B, Cin, Lout, K)
    gw = np.einsum("bclk,bol->ock", windows.astype(np.float64), gy.astype(np.float64))
    return gw.astype(np.float32)


def maxpool1d_forward(x: np.ndarray, pool: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-window max over trailing axis; ties take the lowest index.

    x: (B, C, L) -> (values (B, C, L//pool), argmax positions into L as int64).
    """
    b, c, length = x.shape
    lo = length // pool
    trimmed = x[:, :, : lo * pool].reshape(b, c, lo, pool)
    local = np.argmax(trimmed, axis=3)  # first occurrence == lowest index
    idx = local + np.arange(lo, dtype=np.int64)[None, None, :] * pool
    y = np.take_along_axis(trimmed, local[..., None], axis=3)[..., 0]
    return y.astype(np.float32, copy=False), idx.astype(np.int64)


def maxpool1d_backward(gy: np.ndarray, idx: np.ndarray, length: int) -> np.ndarray:
    """Route each window's gradient to its argmax position."""
    b, c, lo = gy.shape
    gx = np.zeros((b, c, length), dtype=np.float32)
    if lo:
        np.put_along_axis(gx, idx, gy, axis=2)  # windows are disjoint: plain write
    return gx
