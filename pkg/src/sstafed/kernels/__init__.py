"""Hot kernels: compiled Cython loops when built, numpy otherwise.

Compiled: same-padded convolution (forward and both gradients) and HoG cell
binning. The attention block is numpy in both backends.

The backend is chosen once at import. Set ``SSTAFED_KERNELS=python`` to force the
numpy fallback. Both backends honour identical contracts; they agree to rounding
but not bit-for-bit, so a single run always uses one backend throughout.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("SSTAFED_KERNELS", "auto").lower() != "python":
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv2d_same(x, w, impl=None):
    """Cross-correlation with zero 'same' padding, stride 1. x: (N,Ci,H,W), w: (Co,Ci,kh,kw)."""
    return (impl or _impl).conv2d_same(_c(x), _c(w))


def conv2d_same_grad_input(dy, w, impl=None):
    return (impl or _impl).conv2d_same_grad_input(_c(dy), _c(w))


def conv2d_same_grad_weight(x, dy, kh, kw, impl=None):
    return (impl or _impl).conv2d_same_grad_weight(_c(x), _c(dy), int(kh), int(kw))


def cell_histograms(mag, ori, cell_size, bins, angle_range, impl=None):
    return (impl or _impl).cell_histograms(_c(mag), _c(ori), int(cell_size), int(bins), float(angle_range))


def backends():
    """Available kernel implementations keyed by name (used by tests and benchmarks)."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out


def ssa_forward(z, of, og, oh, ov, impl=None):
    """Fused attention block: returns (f, g, hz, gamma, mixed, out) for z: (N, P, C).

    Always numpy: batched BLAS matmuls and vectorised exp beat scalar compiled loops here.
    """
    return (impl or _pykernels).ssa_forward(_c(z), _c(of), _c(og), _c(oh), _c(ov))


def ssa_backward(dout, z, f, g, hz, gamma, mixed, of, og, oh, ov, impl=None):
    """Returns (d_omega_f, d_omega_g, d_omega_h, d_omega_v, dz)."""
    args = (dout, z, f, g, hz, gamma, mixed, of, og, oh, ov)
    return (impl or _pykernels).ssa_backward(*(_c(a) for a in args))
