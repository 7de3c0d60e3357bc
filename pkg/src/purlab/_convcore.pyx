# Compiled conv2d kernels: float64, zero padding, stride 1 or 2.
# Threads split on disjoint output slabs, so results are bit-identical
# for any thread count. Inner loops run over contiguous width with raw
# pointers; the stride-1 branches are kept separate so they vectorize.

import numpy as np

cimport cython
from cython.parallel cimport prange


NAME = "cython"


cdef inline Py_ssize_t _lo(Py_ssize_t off, Py_ssize_t stride) noexcept nogil:
    # smallest o >= 0 with o*stride + off >= 0
    if off >= 0:
        return 0
    return (-off + stride - 1) // stride


cdef inline Py_ssize_t _hi(Py_ssize_t off, Py_ssize_t stride, Py_ssize_t size,
                           Py_ssize_t limit) noexcept nogil:
    # smallest bound o_hi <= limit with o*stride + off < size for o < o_hi
    cdef Py_ssize_t v = (size - 1 - off) // stride + 1
    return v if v < limit else limit


def conv2d_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] w,
                   int stride, int pad):
    cdef Py_ssize_t batch = x.shape[0], cin = x.shape[1]
    cdef Py_ssize_t in_h = x.shape[2], in_w = x.shape[3]
    cdef Py_ssize_t cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t out_h = (in_h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t out_w = (in_w + 2 * pad - kw) // stride + 1

    y_arr = np.zeros((batch, cout, out_h, out_w))
    cdef double[:, :, :, ::1] y = y_arr
    cdef Py_ssize_t bc, b, co, ci, i, j, oh, ow, ih, iw0, ih0
    cdef Py_ssize_t ow_lo, ow_hi, oh_lo, oh_hi
    cdef double wv
    cdef double *yrow
    cdef double *xrow

    for bc in prange(batch * cout, nogil=True, schedule="static"):
        b = bc // cout
        co = bc % cout
        for ci in range(cin):
            for i in range(kh):
                ih0 = i - pad
                oh_lo = _lo(ih0, stride)
                oh_hi = _hi(ih0, stride, in_h, out_h)
                for j in range(kw):
                    iw0 = j - pad
                    ow_lo = _lo(iw0, stride)
                    ow_hi = _hi(iw0, stride, in_w, out_w)
                    wv = w[co, ci, i, j]
                    for oh in range(oh_lo, oh_hi):
                        ih = oh * stride + ih0
                        yrow = &y[b, co, oh, 0]
                        xrow = &x[b, ci, ih, iw0]
                        if stride == 1:
                            for ow in range(ow_lo, ow_hi):
                                yrow[ow] += wv * xrow[ow]
                        else:
                            for ow in range(ow_lo, ow_hi):
                                yrow[ow] += wv * xrow[2 * ow]
    return y_arr


def conv2d_bwd_input(double[:, :, :, ::1] gy, double[:, :, :, ::1] w,
                     int stride, int pad, int in_h, int in_w):
    cdef Py_ssize_t batch = gy.shape[0], cout = gy.shape[1]
    cdef Py_ssize_t out_h = gy.shape[2], out_w = gy.shape[3]
    cdef Py_ssize_t cin = w.shape[1], kh = w.shape[2], kw = w.shape[3]

    gx_arr = np.zeros((batch, cin, in_h, in_w))
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t bc, b, ci, co, i, j, oh, ow, ih, iw0, ih0
    cdef Py_ssize_t ow_lo, ow_hi, oh_lo, oh_hi
    cdef double wv
    cdef double *grow
    cdef double *xrow

    for bc in prange(batch * cin, nogil=True, schedule="static"):
        b = bc // cin
        ci = bc % cin
        for co in range(cout):
            for i in range(kh):
                ih0 = i - pad
                oh_lo = _lo(ih0, stride)
                oh_hi = _hi(ih0, stride, in_h, out_h)
                for j in range(kw):
                    iw0 = j - pad
                    ow_lo = _lo(iw0, stride)
                    ow_hi = _hi(iw0, stride, in_w, out_w)
                    wv = w[co, ci, i, j]
                    for oh in range(oh_lo, oh_hi):
                        ih = oh * stride + ih0
                        grow = &gy[b, co, oh, 0]
                        xrow = &gx[b, ci, ih, iw0]
                        if stride == 1:
                            for ow in range(ow_lo, ow_hi):
                                xrow[ow] += wv * grow[ow]
                        else:
                            for ow in range(ow_lo, ow_hi):
                                xrow[2 * ow] += wv * grow[ow]
    return gx_arr


def conv2d_bwd_weight(double[:, :, :, ::1] x, double[:, :, :, ::1] gy,
                      int stride, int pad, int kh, int kw):
    cdef Py_ssize_t batch = x.shape[0], cin = x.shape[1]
    cdef Py_ssize_t in_h = x.shape[2], in_w = x.shape[3]
    cdef Py_ssize_t cout = gy.shape[1], out_h = gy.shape[2], out_w = gy.shape[3]

    gw_arr = np.zeros((cout, cin, kh, kw))
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef Py_ssize_t co, b, ci, i, j, oh, ow, ih, iw0, ih0
    cdef Py_ssize_t ow_lo, ow_hi, oh_lo, oh_hi
    cdef double acc
    cdef double *grow
    cdef double *xrow

    for co in prange(cout, nogil=True, schedule="static"):
        for ci in range(cin):
            for i in range(kh):
                ih0 = i - pad
                oh_lo = _lo(ih0, stride)
                oh_hi = _hi(ih0, stride, in_h, out_h)
                for j in range(kw):
                    iw0 = j - pad
                    ow_lo = _lo(iw0, stride)
                    ow_hi = _hi(iw0, stride, in_w, out_w)
                    acc = 0.0
                    for b in range(batch):
                        for oh in range(oh_lo, oh_hi):
                            ih = oh * stride + ih0
                            grow = &gy[b, co, oh, 0]
                            xrow = &x[b, ci, ih, iw0]
                            if stride == 1:
                                for ow in range(ow_lo, ow_hi):
                                    acc = acc + grow[ow] * xrow[ow]
                            else:
                                for ow in range(ow_lo, ow_hi):
                                    acc = acc + grow[ow] * xrow[2 * ow]
                    gw[co, ci, i, j] = acc
    return gw_arr
