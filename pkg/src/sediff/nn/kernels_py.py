"""Pure-numpy reference implementations of the hot elementwise kernels.

The compiled extension in _kernels.pyx mirrors these signatures exactly; the
active implementation is chosen once at import in backend.py. Everything here
must stay semantically identical to the compiled version (the test suite
cross-checks them when the extension is available).
"""

from __future__ import annotations

import numpy as np


def gate_fwd_cache(pre: np.ndarray):
    """Gated activation tanh(a) * sigmoid(b) for pre = [a; b] along axis 0.

    pre: (2C, B, L). Returns (out, tanh_a, sig_b), each (C, B, L); the two
    factors are cached so the backward pass needs no transcendentals.
    """
    c = pre.shape[0] // 2
    ta = np.tanh(pre[:c])
    sig = np.empty_like(ta)
    np.negative(pre[c:], out=sig)
    np.exp(sig, out=sig)
    sig += 1.0
    np.reciprocal(sig, out=sig)
    return ta * sig, ta, sig


def gate_bwd_cached(ta: np.ndarray, sig: np.ndarray, dout: np.ndarray) -> np.ndarray:
    """Gradient of the gate w.r.t. pre from the cached factors. (2C, B, L)."""
    c = ta.shape[0]
    dpre = np.empty((2 * c,) + ta.shape[1:], dtype=ta.dtype)
    np.multiply(dout, sig, out=dpre[:c])
    dpre[:c] *= 1.0 - np.square(ta)
    np.multiply(dout, ta, out=dpre[c:])
    dpre[c:] *= sig * (1.0 - sig)
    return dpre


def conv_taps_fwd(z: np.ndarray, bias: np.ndarray, dilation: int) -> np.ndarray:
    """Combine tap responses z (3, Co, B, L) into the conv output (Co, B, L).

    Tap 0 looks back by `dilation`, tap 1 is centered, tap 2 looks forward;
    out-of-range positions contribute zero.
    """
    length = z.shape[3]
    d = dilation
    y = z[1] + bias[:, None, None]
    if d < length:
        y[:, :, d:] += z[0][:, :, :length - d]
        y[:, :, :length - d] += z[2][:, :, d:]
    return y


def conv_taps_bwd_scatter(dy: np.ndarray, dilation: int) -> np.ndarray:
    """Scatter dy (Co, B, L) into per-tap gradients (3, Co, B, L)."""
    length = dy.shape[2]
    d = dilation
    dz = np.empty((3,) + dy.shape, dtype=dy.dtype)
    dz[1] = dy
    if d < length:
        dz[0][:, :, :length - d] = dy[:, :, d:]
        dz[0][:, :, length - d:] = 0.0
        dz[2][:, :, :d] = 0.0
        dz[2][:, :, d:] = dy[:, :, :length - d]
    else:
        dz[0] = 0.0
        dz[2] = 0.0
    return dz


def adam_update(
    param: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    lr_t: float,
    beta1: float,
    beta2: float,
    eps: float,
) -> None:
    """One fused in-place Adam step; lr_t already carries bias correction."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * np.square(grad)
    param -= lr_t * m / (np.sqrt(v) + eps)
