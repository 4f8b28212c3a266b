"""Pure numpy implementations of the hot kernels (always available)."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pad(x, ph, pw):
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def conv2d_same(x, w):
    kh, kw = w.shape[2], w.shape[3]
    win = sliding_window_view(_pad(x, kh // 2, kw // 2), (kh, kw), axis=(2, 3))
    return np.einsum("nchwij,ocij->nohw", win, w, optimize=True)


def conv2d_same_grad_input(dy, w):
    kh, kw = w.shape[2], w.shape[3]
    win = sliding_window_view(_pad(dy, kh // 2, kw // 2), (kh, kw), axis=(2, 3))
    return np.einsum("nohwij,ocij->nchw", win, w[:, :, ::-1, ::-1], optimize=True)


def conv2d_same_grad_weight(x, dy, kh, kw):
    win = sliding_window_view(_pad(x, kh // 2, kw // 2), (kh, kw), axis=(2, 3))
    return np.einsum("nchwij,nohw->ocij", win, dy, optimize=True)


def cell_histograms(mag, ori, cell_size, bins, angle_range):
    """Orientation histograms of complete cells, magnitude split linearly between bins."""
    ncy = mag.shape[0] // cell_size
    ncx = mag.shape[1] // cell_size
    m = mag[: ncy * cell_size, : ncx * cell_size]
    o = ori[: ncy * cell_size, : ncx * cell_size]
    width = angle_range / bins
    pos = o / width - 0.5
    lo = np.floor(pos)
    frac = pos - lo
    lo = lo.astype(np.int64) % bins
    hi = (lo + 1) % bins
    cy = (np.arange(m.shape[0]) // cell_size)[:, None] * np.ones((1, m.shape[1]), dtype=np.int64)
    cx = np.ones((m.shape[0], 1), dtype=np.int64) * (np.arange(m.shape[1]) // cell_size)[None, :]
    hist = np.zeros((ncy, ncx, bins))
    np.add.at(hist, (cy, cx, lo), m * (1.0 - frac))
    np.add.at(hist, (cy, cx, hi), m * frac)
    return hist


def ssa_forward(z, of, og, oh, ov):
    """Spatial self-attention over z: (N, P, C). Returns f, g, hz, gamma, mixed, out."""
    f = z @ of.T
    g = z @ og.T
    hz = z @ oh.T
    s = f @ g.transpose(0, 2, 1)
    s -= s.max(axis=-1, keepdims=True)
    gamma = np.exp(s, out=s)
    gamma /= gamma.sum(axis=-1, keepdims=True)
    mixed = gamma @ hz
    return f, g, hz, gamma, mixed, mixed @ ov.T


def ssa_backward(dout, z, f, g, hz, gamma, mixed, of, og, oh, ov):
    """Gradients (d_of, d_og, d_oh, d_ov, dz) of the attention block."""
    def outer(a, b):
        return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])

    dov = outer(dout, mixed)
    dmixed = dout @ ov
    dgamma = dmixed @ hz.transpose(0, 2, 1)
    dhz = gamma.transpose(0, 2, 1) @ dmixed
    ds = gamma * (dgamma - np.sum(dgamma * gamma, axis=-1, keepdims=True))
    df = ds @ g
    dg = ds.transpose(0, 2, 1) @ f
    dof = outer(df, z)
    dog = outer(dg, z)
    doh = outer(dhz, z)
    dz = df @ of + dg @ og + dhz @ oh
    return dof, dog, doh, dov, dz
