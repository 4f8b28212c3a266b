"""Dense float64 kernels, seeded random streams and a finite-difference oracle.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Random streams use
numpy's PCG64 bit generator seeded through ``SeedSequence``; PCG64 output is
specified bit-for-bit, so a given (seed, key path) yields the same stream on
every platform.
"""
from __future__ import annotations

import zlib
from typing import Callable

import numpy as np

from .errors import DimensionError, NumericError, ParameterError

ZERO_NORM = 1e-12


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def matmul(a, b) -> np.ndarray:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return a @ b


def softmax(v, temperature: float = 1.0, axis: int = -1) -> np.ndarray:
    """Temperature softmax along ``axis`` with max subtraction."""
    if not temperature > 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    v = as_tensor(v)
    if v.size == 0:
        raise DimensionError("softmax of an empty vector")
    z = v / temperature
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def cosine(a, b) -> float:
    """Cosine similarity clamped to [-1, 1]; 0 when either vector is (near) zero."""
    a = as_tensor(a).ravel()
    b = as_tensor(b).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"cosine of vectors with lengths {a.size} and {b.size}")
    na = np.sqrt(np.dot(a, a))
    nb = np.sqrt(np.dot(b, b))
    if na < ZERO_NORM or nb < ZERO_NORM:
        return 0.0
    c = float(np.dot(a, b) / (na * nb))
    return min(1.0, max(-1.0, c))


def cosine_matrix(vectors) -> np.ndarray:
    """Pairwise cosine matrix of the rows of ``vectors`` (same zero-norm rule as :func:`cosine`)."""
    m = as_tensor(vectors)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D stack of vectors, got shape {m.shape}")
    norms = np.sqrt(np.einsum("ij,ij->i", m, m))
    live = norms >= ZERO_NORM
    unit = np.zeros_like(m)
    unit[live] = m[live] / norms[live, None]
    out = unit @ unit.T
    # symmetric by construction, but force it bit-exactly
    out = np.triu(out) + np.triu(out, 1).T
    np.clip(out, -1.0, 1.0, out=out)
    idx = np.flatnonzero(live)
    out[idx, idx] = 1.0
    return out


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``."""
    if not h > 0:
        raise ParameterError(f"step size must be positive, got {h}")
    x = as_tensor(x).copy()
    flat = x.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = float(f(x))
        flat[i] = old - h
        fm = float(f(x))
        flat[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value when perturbing coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)


def _key_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ParameterError(f"stream keys must be non-negative, got {key}")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def make_rng(seed: int, *keys) -> np.random.Generator:
    """Child stream of ``seed`` addressed by ``keys`` (strings or non-negative ints).

    The same (seed, keys) always produces the same stream; distinct key paths give
    statistically independent streams.
    """
    if seed < 0 or seed >= 2**64:
        raise ParameterError(f"seed must fit in 64 unsigned bits, got {seed}")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key_int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))
