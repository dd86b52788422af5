"""Layer primitives with hand-written backward passes.

Activations live in (channels, batch, length) layout so that reshaping to
(channels, batch*length) is free and every contraction is a single contiguous
GEMM. Each *_fwd returns what the matching *_bwd needs; no autograd anywhere.
"""

from __future__ import annotations

import numpy as np

from .backend import conv_taps_bwd_scatter, conv_taps_fwd, gate_bwd_cached, gate_fwd_cache


def _flat(x: np.ndarray) -> np.ndarray:
    return x.reshape(x.shape[0], -1)


def pointwise_fwd(w: np.ndarray, b, x: np.ndarray) -> np.ndarray:
    """1x1 convolution: (Co, Ci) @ (Ci, B, L) + b -> (Co, B, L)."""
    y = (w @ _flat(x)).reshape(w.shape[0], *x.shape[1:])
    if b is not None:
        y += b[:, None, None]
    return y


def pointwise_bwd(w: np.ndarray, x: np.ndarray, dy: np.ndarray, need_dx: bool = True):
    dw = _flat(dy) @ _flat(x).T
    db = dy.sum(axis=(1, 2))
    dx = (w.T @ _flat(dy)).reshape(w.shape[1], *dy.shape[1:]) if need_dx else None
    return dw, db, dx


def dilated_conv_fwd(w3: np.ndarray, b: np.ndarray, x: np.ndarray, dilation: int) -> np.ndarray:
    """Kernel-3 dilated convolution, zero-padded to keep the length.

    w3: (3, Co, Ci) with taps ordered [left, center, right] relative to the
    output position; tap `left` reads x at offset -dilation. Bias is required.
    x: (Ci, B, L). Returns (Co, B, L).
    """
    three, co, ci = w3.shape
    z = (w3.reshape(3 * co, ci) @ _flat(x)).reshape(3, co, x.shape[1], x.shape[2])
    return conv_taps_fwd(z, b, dilation)


def dilated_conv_bwd(w3: np.ndarray, x: np.ndarray, dy: np.ndarray, dilation: int,
                     need_dx: bool = True):
    """Gradients of dilated_conv_fwd; returns (dw3, db, dx)."""
    three, co, ci = w3.shape
    dz = conv_taps_bwd_scatter(dy, dilation)
    dz_flat = dz.reshape(3 * co, -1)
    dw3 = (dz_flat @ _flat(x).T).reshape(3, co, ci)
    db = dy.sum(axis=(1, 2))
    dx = None
    if need_dx:
        dx = (w3.reshape(3 * co, ci).T @ dz_flat).reshape(ci, *dy.shape[1:])
    return dw3, db, dx


def linear_fwd(w: np.ndarray, b, x: np.ndarray) -> np.ndarray:
    """(Co, Ci) @ (Ci, B) + b -> (Co, B)."""
    y = w @ x
    if b is not None:
        y += b[:, None]
    return y


def linear_bwd(w: np.ndarray, x: np.ndarray, dy: np.ndarray, need_dx: bool = True):
    dw = dy @ x.T
    db = dy.sum(axis=1)
    dx = w.T @ dy if need_dx else None
    return dw, db, dx


def relu_fwd(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_bwd(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, dy, 0.0)


def swish_fwd(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


def swish_bwd(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    sig = 1.0 / (1.0 + np.exp(-x))
    return dy * sig * (1.0 + x * (1.0 - sig))


def gated_fwd(pre: np.ndarray):
    """tanh/sigmoid gate over the channel halves of pre (2C, B, L).

    Returns (out, tanh_a, sig_b); keep the factors for gated_bwd.
    """
    return gate_fwd_cache(pre)


def gated_bwd(ta: np.ndarray, sig: np.ndarray, dout: np.ndarray) -> np.ndarray:
    return gate_bwd_cached(ta, sig, dout)


def frame_cond_add(pre: np.ndarray, proj: np.ndarray, hop: int) -> None:
    """In-place add of frame-rate features proj (2C, B, F) to pre (2C, B, F*hop)."""
    c2, b, length = pre.shape
    frames = proj.shape[2]
    if frames * hop != length:
        raise ValueError(f"length {length} is not frames {frames} * hop {hop}")
    pre.reshape(c2, b, frames, hop)[...] += proj[:, :, :, None]


def frame_cond_bwd(dpre: np.ndarray, hop: int) -> np.ndarray:
    """Per-frame sum of sample-rate gradients: (2C, B, F*hop) -> (2C, B, F)."""
    c2, b, length = dpre.shape
    return dpre.reshape(c2, b, length // hop, hop).sum(axis=3)


def conv2d3x3_fwd(w: np.ndarray, b, x: np.ndarray) -> np.ndarray:
    """3x3 same-padding conv for (Ci, B, H, W) -> (Co, B, H, W) via im2col."""
    co, ci, _, _ = w.shape
    _, batch, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((ci * 9, batch, h, wd), dtype=x.dtype)
    idx = 0
    for di in range(3):
        for dj in range(3):
            cols[idx * ci:(idx + 1) * ci] = xp[:, :, di:di + h, dj:dj + wd]
            idx += 1
    # cols is tap-major / channel-minor; flatten the kernel the same way.
    w_flat = w.transpose(0, 2, 3, 1).reshape(co, 9 * ci)
    y = (w_flat @ cols.reshape(ci * 9, -1)).reshape(co, batch, h, wd)
    if b is not None:
        y += b[:, None, None, None]
    return y


def conv2d3x3_bwd(w: np.ndarray, x: np.ndarray, dy: np.ndarray, need_dx: bool = True):
    co, ci, _, _ = w.shape
    _, batch, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((ci * 9, batch, h, wd), dtype=x.dtype)
    idx = 0
    for di in range(3):
        for dj in range(3):
            cols[idx * ci:(idx + 1) * ci] = xp[:, :, di:di + h, dj:dj + wd]
            idx += 1
    dy_flat = dy.reshape(co, -1)
    dw = np.ascontiguousarray(
        (dy_flat @ cols.reshape(ci * 9, -1).T).reshape(co, 3, 3, ci).transpose(0, 3, 1, 2)
    )
    db = dy.sum(axis=(1, 2, 3))
    dx = None
    if need_dx:
        w_flat = w.transpose(0, 2, 3, 1).reshape(co, 9 * ci)
        dcols = (w_flat.T @ dy_flat).reshape(ci * 9, batch, h, wd)
        dxp = np.zeros_like(xp)
        idx = 0
        for di in range(3):
            for dj in range(3):
                dxp[:, :, di:di + h, dj:dj + wd] += dcols[idx * ci:(idx + 1) * ci]
                idx += 1
        dx = dxp[:, :, 1:-1, 1:-1]
    return dw, db, dx
