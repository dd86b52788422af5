"""Kernel backend selection: compiled extension when available, numpy otherwise.

The convolutions' tap GEMMs are BLAS matmuls in both backends; the compiled
extension fuses the elementwise-heavy pieces (gated activation, tap
combine/scatter, Adam updates) into single OpenMP passes. Set
SEDIFF_PURE_PYTHON=1 to force the fallback; BACKEND reports which is live.
"""

from __future__ import annotations

import os

import numpy as np

from . import kernels_py

BACKEND = "python"
gate_fwd_cache = kernels_py.gate_fwd_cache
gate_bwd_cached = kernels_py.gate_bwd_cached
conv_taps_fwd = kernels_py.conv_taps_fwd
conv_taps_bwd_scatter = kernels_py.conv_taps_bwd_scatter
_adam_update_flat = None

if os.environ.get("SEDIFF_PURE_PYTHON", "0") != "1":
    try:
        from . import _kernels  # type: ignore[attr-defined]

        # gate_fwd_cache deliberately stays numpy: SIMD tanh/exp beat libm.
        gate_bwd_cached = _kernels.gate_bwd_cached
        conv_taps_fwd = _kernels.conv_taps_fwd
        conv_taps_bwd_scatter = _kernels.conv_taps_bwd_scatter
        _adam_update_flat = _kernels.adam_update
        BACKEND = "compiled"
    except ImportError:
        pass


def adam_update(param, grad, m, v, lr_t, beta1, beta2, eps) -> None:
    """In-place Adam step on an arbitrary-shape parameter tensor."""
    if _adam_update_flat is not None and param.flags.c_contiguous:
        grad = np.ascontiguousarray(grad, dtype=param.dtype)
        _adam_update_flat(param.reshape(-1), grad.reshape(-1),
                          m.reshape(-1), v.reshape(-1),
                          float(lr_t), float(beta1), float(beta2), float(eps))
    else:
        kernels_py.adam_update(param, grad, m, v, lr_t, beta1, beta2, eps)
