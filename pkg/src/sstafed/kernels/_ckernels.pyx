# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled loops for the hot kernels; same contracts as ``_pykernels``."""
import numpy as np
from libc.math cimport floor


cdef inline Py_ssize_t _lo(Py_ssize_t off) nogil:
    # first output index whose shifted input index (index + off) is >= 0
    return -off if off < 0 else 0


cdef inline Py_ssize_t _hi(Py_ssize_t off, Py_ssize_t n) nogil:
    # one past the last output index whose shifted input index is < n
    return n - off if off > 0 else n


def conv2d_same(const double[:, :, :, ::1] x, const double[:, :, :, ::1] w):
    cdef Py_ssize_t n_img = x.shape[0], ci = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t co = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    out_arr = np.zeros((n_img, co, H, W))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, o, c, y, xx, i, j, dy_, dx_, x0, x1
    cdef double wv
    with nogil:
        for n in range(n_img):
            for o in range(co):
                for c in range(ci):
                    for i in range(kh):
                        dy_ = i - ph
                        for j in range(kw):
                            dx_ = j - pw
                            wv = w[o, c, i, j]
                            x0 = _lo(dx_)
                            x1 = _hi(dx_, W)
                            for y in range(_lo(dy_), _hi(dy_, H)):
                                for xx in range(x0, x1):
                                    out[n, o, y, xx] += wv * x[n, c, y + dy_, xx + dx_]
    return out_arr


def conv2d_same_grad_input(const double[:, :, :, ::1] dy, const double[:, :, :, ::1] w):
    cdef Py_ssize_t n_img = dy.shape[0], co = dy.shape[1], H = dy.shape[2], W = dy.shape[3]
    cdef Py_ssize_t ci = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    out_arr = np.zeros((n_img, ci, H, W))
    cdef double[:, :, :, ::1] dx = out_arr
    cdef Py_ssize_t n, o, c, y, xx, i, j, dy_, dx_, x0, x1
    cdef double wv
    with nogil:
        for n in range(n_img):
            for c in range(ci):
                for o in range(co):
                    for i in range(kh):
                        dy_ = i - ph
                        for j in range(kw):
                            dx_ = j - pw
                            wv = w[o, c, i, j]
                            x0 = _lo(dx_)
                            x1 = _hi(dx_, W)
                            for y in range(_lo(dy_), _hi(dy_, H)):
                                for xx in range(x0, x1):
                                    dx[n, c, y + dy_, xx + dx_] += wv * dy[n, o, y, xx]
    return out_arr


def conv2d_same_grad_weight(const double[:, :, :, ::1] x, const double[:, :, :, ::1] dy,
                            Py_ssize_t kh, Py_ssize_t kw):
    cdef Py_ssize_t n_img = x.shape[0], ci = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t co = dy.shape[1]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    out_arr = np.zeros((co, ci, kh, kw))
    cdef double[:, :, :, ::1] dw = out_arr
    cdef Py_ssize_t n, o, c, y, xx, i, j, dy_, dx_, x0, x1
    cdef double acc
    with nogil:
        for o in range(co):
            for c in range(ci):
                for i in range(kh):
                    dy_ = i - ph
                    for j in range(kw):
                        dx_ = j - pw
                        x0 = _lo(dx_)
                        x1 = _hi(dx_, W)
                        acc = 0.0
                        for n in range(n_img):
                            for y in range(_lo(dy_), _hi(dy_, H)):
                                for xx in range(x0, x1):
                                    acc = acc + dy[n, o, y, xx] * x[n, c, y + dy_, xx + dx_]
                        dw[o, c, i, j] = acc
    return out_arr


def cell_histograms(const double[:, ::1] mag, const double[:, ::1] ori,
                    Py_ssize_t cell_size, Py_ssize_t bins, double angle_range):
    cdef Py_ssize_t ncy = mag.shape[0] // cell_size, ncx = mag.shape[1] // cell_size
    hist_arr = np.zeros((ncy, ncx, bins))
    cdef double[:, :, ::1] hist = hist_arr
    cdef double width = angle_range / bins
    cdef Py_ssize_t y, x, lo, hi
    cdef double pos, fl, frac, m
    with nogil:
        for y in range(ncy * cell_size):
            for x in range(ncx * cell_size):
                m = mag[y, x]
                pos = ori[y, x] / width - 0.5
                fl = floor(pos)
                frac = pos - fl
                lo = (<Py_ssize_t> fl) % bins
                if lo < 0:
                    lo = lo + bins
                hi = (lo + 1) % bins
                hist[y // cell_size, x // cell_size, lo] += m * (1.0 - frac)
                hist[y // cell_size, x // cell_size, hi] += m * frac
    return hist_arr
