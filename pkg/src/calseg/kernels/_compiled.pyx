# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution kernels (hot path of training and inference).

Same contracts as kernels._reference: pre-padded inputs, float64
accumulation, and a summation order that is a pure function of the input
shapes, so results are bit-reproducible run to run. OpenMP splits only
whole output elements (or planes) across threads, never one reduction, so
results are also independent of the thread count and schedule.

Each primitive has two loop orders and picks one by channel count:
  - spatial path: innermost loop streams along the contiguous W axis;
    wins for few channels and large H x W (early/late U-Net stages).
  - channel path: operands are repacked channels-last and the innermost
    loop is a contiguous dot/axpy over Cin (4-way unrolled with a fixed
    combine tree); wins for many channels and small H x W (bottleneck).
"""

import numpy as np

cimport cython
cimport numpy as cnp
from cython.parallel cimport prange

cnp.import_array()

BACKEND_NAME = "compiled"

# Use the channel path once the contiguous reduction over Cin is this long.
DEF CHANNEL_PATH_MIN_CIN = 32

ctypedef fused real:
    float
    double


def conv_fwd(real[:, :, :, ::1] xp, real[:, :, :, ::1] kernel, int stride):
    cdef Py_ssize_t cin = xp.shape[1]
    if cin >= CHANNEL_PATH_MIN_CIN:
        return _conv_fwd_channel(xp, kernel, stride)
    return _conv_fwd_spatial(xp, kernel, stride)


def conv_grad_input(real[:, :, :, ::1] dy, real[:, :, :, ::1] kernel, int stride,
                    Py_ssize_t hp, Py_ssize_t wp):
    cdef Py_ssize_t cin = kernel.shape[1]
    if cin >= CHANNEL_PATH_MIN_CIN:
        return _conv_grad_input_channel(dy, kernel, stride, hp, wp)
    return _conv_grad_input_spatial(dy, kernel, stride, hp, wp)


def conv_grad_kernel(real[:, :, :, ::1] dy, real[:, :, :, ::1] xp, int stride,
                     Py_ssize_t kh, Py_ssize_t kw):
    cdef Py_ssize_t cin = xp.shape[1]
    if cin >= CHANNEL_PATH_MIN_CIN:
        return _conv_grad_kernel_channel(dy, xp, stride, kh, kw)
    return _conv_grad_kernel_spatial(dy, xp, stride, kh, kw)


# ---------------------------------------------------------------------------
# spatial path: NCHW order, inner loop along W


def _conv_fwd_spatial(real[:, :, :, ::1] xp, real[:, :, :, ::1] kernel, int stride):
    cdef Py_ssize_t n = xp.shape[0], cin = xp.shape[1]
    cdef Py_ssize_t hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t cout = kernel.shape[0], kh = kernel.shape[2], kw = kernel.shape[3]
    cdef Py_ssize_t ho = (hp - kh) // stride + 1
    cdef Py_ssize_t wo = (wp - kw) // stride + 1

    acc_arr = np.zeros((n, cout, ho, wo), dtype=np.float64)
    cdef double[:, :, :, ::1] acc = acc_arr
    cdef Py_ssize_t planes = n * cout
    cdef Py_ssize_t p, b, co, ci, i, j, oh, ow
    cdef double kv

    # One thread owns one (b, co) output plane: order inside is fixed.
    for p in prange(planes, nogil=True, schedule="static"):
        b = p // cout
        co = p % cout
        for ci in range(cin):
            for i in range(kh):
                for j in range(kw):
                    kv = <double> kernel[co, ci, i, j]
                    for oh in range(ho):
                        for ow in range(wo):
                            acc[b, co, oh, ow] += kv * <double> xp[b, ci, oh * stride + i, ow * stride + j]

    if real is float:
        return acc_arr.astype(np.float32)
    return acc_arr


def _conv_grad_input_spatial(real[:, :, :, ::1] dy, real[:, :, :, ::1] kernel,
                             int stride, Py_ssize_t hp, Py_ssize_t wp):
    cdef Py_ssize_t n = dy.shape[0], cout = dy.shape[1]
    cdef Py_ssize_t ho = dy.shape[2], wo = dy.shape[3]
    cdef Py_ssize_t cin = kernel.shape[1], kh = kernel.shape[2], kw = kernel.shape[3]

    acc_arr = np.zeros((n, cin, hp, wp), dtype=np.float64)
    cdef double[:, :, :, ::1] acc = acc_arr
    cdef Py_ssize_t planes = n * cin
    cdef Py_ssize_t p, b, co, ci, i, j, oh, ow
    cdef double kv

    # One thread owns one (b, ci) input plane.
    for p in prange(planes, nogil=True, schedule="static"):
        b = p // cin
        ci = p % cin
        for co in range(cout):
            for i in range(kh):
                for j in range(kw):
                    kv = <double> kernel[co, ci, i, j]
                    for oh in range(ho):
                        for ow in range(wo):
                            acc[b, ci, oh * stride + i, ow * stride + j] += kv * <double> dy[b, co, oh, ow]

    if real is float:
        return acc_arr.astype(np.float32)
    return acc_arr


def _conv_grad_kernel_spatial(real[:, :, :, ::1] dy, real[:, :, :, ::1] xp,
                              int stride, Py_ssize_t kh, Py_ssize_t kw):
    cdef Py_ssize_t n = dy.shape[0], cout = dy.shape[1]
    cdef Py_ssize_t ho = dy.shape[2], wo = dy.shape[3]
    cdef Py_ssize_t cin = xp.shape[1]

    acc_arr = np.zeros((cout, cin, kh, kw), dtype=np.float64)
    cdef double[:, :, :, ::1] acc = acc_arr
    cdef Py_ssize_t pairs = cout * cin
    cdef Py_ssize_t p, b, co, ci, i, j, oh, ow, base_i, base_j, wo4
    cdef double s0, s1, s2, s3, s

    wo4 = wo - (wo & 3)
    # One thread owns one (co, ci) kernel slab; dots are 4-way unrolled
    # along the output row with a fixed combine tree.
    for p in prange(pairs, nogil=True, schedule="static"):
        co = p // cin
        ci = p % cin
        for i in range(kh):
            for j in range(kw):
                s = 0.0
                for b in range(n):
                    for oh in range(ho):
                        base_i = oh * stride + i
                        s0 = 0.0
                        s1 = 0.0
                        s2 = 0.0
                        s3 = 0.0
                        for ow in range(0, wo4, 4):
                            base_j = ow * stride + j
                            s0 = s0 + <double> dy[b, co, oh, ow] * <double> xp[b, ci, base_i, base_j]
                            s1 = s1 + <double> dy[b, co, oh, ow + 1] * <double> xp[b, ci, base_i, base_j + stride]
                            s2 = s2 + <double> dy[b, co, oh, ow + 2] * <double> xp[b, ci, base_i, base_j + 2 * stride]
                            s3 = s3 + <double> dy[b, co, oh, ow + 3] * <double> xp[b, ci, base_i, base_j + 3 * stride]
                        s = s + ((s0 + s1) + (s2 + s3))
                        for ow in range(wo4, wo):
                            s = s + <double> dy[b, co, oh, ow] * <double> xp[b, ci, base_i, ow * stride + j]
                acc[co, ci, i, j] = s

    if real is float:
        return acc_arr.astype(np.float32)
    return acc_arr


# ---------------------------------------------------------------------------
# channel path: operands repacked channels-last, inner loop over Cin


def _conv_fwd_channel(real[:, :, :, ::1] xp, real[:, :, :, ::1] kernel, int stride):
    cdef Py_ssize_t n = xp.shape[0], cin = xp.shape[1]
    cdef Py_ssize_t hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t cout = kernel.shape[0], kh = kernel.shape[2], kw = kernel.shape[3]
    cdef Py_ssize_t ho = (hp - kh) // stride + 1
    cdef Py_ssize_t wo = (wp - kw) // stride + 1

    xt_arr = np.ascontiguousarray(np.asarray(xp).transpose(0, 2, 3, 1))
    kt_arr = np.ascontiguousarray(np.asarray(kernel).transpose(0, 2, 3, 1))
    cdef real[:, :, :, ::1] xt = xt_arr
    cdef real[:, :, :, ::1] kt = kt_arr

    acc_arr = np.empty((n, ho, wo, cout), dtype=np.float64)
    cdef double[:, :, :, ::1] acc = acc_arr
    cdef Py_ssize_t rows = n * ho
    cdef Py_ssize_t r, b, co, ci, i, j, oh, ow, ih, iw, cin4
    cdef double s, s0, s1, s2, s3

    cin4 = cin - (cin & 3)
    # One thread owns one (b, oh) output row; each element is an
    # independent dot over (kh, kw, ci) with a fixed summation tree.
    for r in prange(rows, nogil=True, schedule="static"):
        b = r // ho
        oh = r % ho
        for ow in range(wo):
            for co in range(cout):
                s = 0.0
                for i in range(kh):
                    ih = oh * stride + i
                    for j in range(kw):
                        iw = ow * stride + j
                        s0 = 0.0
                        s1 = 0.0
                        s2 = 0.0
                        s3 = 0.0
                        for ci in range(0, cin4, 4):
                            s0 = s0 + <double> xt[b, ih, iw, ci] * <double> kt[co, i, j, ci]
                            s1 = s1 + <double> xt[b, ih, iw, ci + 1] * <double> kt[co, i, j, ci + 1]
                            s2 = s2 + <double> xt[b, ih, iw, ci + 2] * <double> kt[co, i, j, ci + 2]
                            s3 = s3 + <double> xt[b, ih, iw, ci + 3] * <double> kt[co, i, j, ci + 3]
                        s = s + ((s0 + s1) + (s2 + s3))
                        for ci in range(cin4, cin):
                            s = s + <double> xt[b, ih, iw, ci] * <double> kt[co, i, j, ci]
                acc[b, oh, ow, co] = s

    out = acc_arr.transpose(0, 3, 1, 2)
    if real is float:
        return np.ascontiguousarray(out, dtype=np.float32)
    return np.ascontiguousarray(out)


def _conv_grad_input_channel(real[:, :, :, ::1] dy, real[:, :, :, ::1] kernel,
                             int stride, Py_ssize_t hp, Py_ssize_t wp):
    cdef Py_ssize_t n = dy.shape[0], cout = dy.shape[1]
    cdef Py_ssize_t ho = dy.shape[2], wo = dy.shape[3]
    cdef Py_ssize_t cin = kernel.shape[1], kh = kernel.shape[2], kw = kernel.shape[3]

    kt_arr = np.ascontiguousarray(np.asarray(kernel).transpose(0, 2, 3, 1))
    cdef real[:, :, :, ::1] kt = kt_arr

    acc_arr = np.zeros((n, hp, wp, cin), dtype=np.float64)
    cdef double[:, :, :, ::1] acc = acc_arr
    cdef Py_ssize_t b, co, ci, i, j, oh, ow
    cdef double gv

    # One thread owns one batch item: scattered writes never cross threads.
    for b in prange(n, nogil=True, schedule="static"):
        for co in range(cout):
            for oh in range(ho):
                for ow in range(wo):
                    gv = <double> dy[b, co, oh, ow]
                    for i in range(kh):
                        for j in range(kw):
                            for ci in range(cin):
                                acc[b, oh * stride + i, ow * stride + j, ci] += gv * <double> kt[co, i, j, ci]

    out = acc_arr.transpose(0, 3, 1, 2)
    if real is float:
        return np.ascontiguousarray(out, dtype=np.float32)
    return np.ascontiguousarray(out)


def _conv_grad_kernel_channel(real[:, :, :, ::1] dy, real[:, :, :, ::1] xp,
                              int stride, Py_ssize_t kh, Py_ssize_t kw):
    cdef Py_ssize_t n = dy.shape[0], cout = dy.shape[1]
    cdef Py_ssize_t ho = dy.shape[2], wo = dy.shape[3]
    cdef Py_ssize_t cin = xp.shape[1]

    xt_arr = np.ascontiguousarray(np.asarray(xp).transpose(0, 2, 3, 1))
    cdef real[:, :, :, ::1] xt = xt_arr

    acc_arr = np.zeros((cout, kh, kw, cin), dtype=np.float64)
    cdef double[:, :, :, ::1] acc = acc_arr
    cdef Py_ssize_t b, co, ci, i, j, oh, ow
    cdef double gv

    # One thread owns one output channel's kernel slab.
    for co in prange(cout, nogil=True, schedule="static"):
        for b in range(n):
            for oh in range(ho):
                for ow in range(wo):
                    gv = <double> dy[b, co, oh, ow]
                    for i in range(kh):
                        for j in range(kw):
                            for ci in range(cin):
                                acc[co, i, j, ci] += gv * <double> xt[b, oh * stride + i, ow * stride + j, ci]

    out = acc_arr.transpose(0, 3, 1, 2)
    if real is float:
        return np.ascontiguousarray(out, dtype=np.float32)
    return np.ascontiguousarray(out)
