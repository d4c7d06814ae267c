# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled implementations of the hot kernels.

Same contracts as ``_kernels_py``: float32 in, float32 out, float64
accumulators. Kept loop-explicit so the arithmetic is easy to audit against
the numpy fallback.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "compiled"


def conv2d(img_f, weight_f, bias_f, int stride, int padding):
    # convert operands to double once; all products and sums stay double and
    # only the final store rounds to float
    cdef double[:, :, ::1] img = np.ascontiguousarray(img_f, dtype=np.float64)
    cdef double[:, :, :, ::1] weight = np.ascontiguousarray(weight_f, dtype=np.float64)
    cdef double[::1] bias = np.ascontiguousarray(bias_f, dtype=np.float64)
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], c_in = img.shape[2]
    cdef Py_ssize_t kh = weight.shape[0], kw = weight.shape[1]
    cdef Py_ssize_t c_out = weight.shape[3]
    cdef Py_ssize_t out_h = (h + 2 * padding - kh) // stride + 1
    cdef Py_ssize_t out_w = (w + 2 * padding - kw) // stride + 1

    out_arr = np.empty((out_h, out_w, c_out), dtype=np.float32)
    cdef float[:, :, ::1] out = out_arr
    acc_arr = np.empty(c_out, dtype=np.float64)
    cdef double[::1] acc = acc_arr
    cdef Py_ssize_t oi, oj, oc, ki, kj, ci, ii, jj
    cdef double x
    with nogil:
        for oi in range(out_h):
            for oj in range(out_w):
                for oc in range(c_out):
                    acc[oc] = bias[oc]
                for ki in range(kh):
                    ii = oi * stride + ki - padding
                    if ii < 0 or ii >= h:
                        continue
                    for kj in range(kw):
                        jj = oj * stride + kj - padding
                        if jj < 0 or jj >= w:
                            continue
                        for ci in range(c_in):
                            x = img[ii, jj, ci]
                            # weight reads contiguous over oc
                            for oc in range(c_out):
                                acc[oc] += x * weight[ki, kj, ci, oc]
                for oc in range(c_out):
                    out[oi, oj, oc] = <float> acc[oc]
    return out_arr


def position_features(W_f, A_f):
    cdef double[:, :, :, ::1] W = np.ascontiguousarray(W_f, dtype=np.float64)
    cdef double[:, :, ::1] A = np.ascontiguousarray(A_f, dtype=np.float64)
    cdef Py_ssize_t m = W.shape[0], n = W.shape[1], l = W.shape[2], p = W.shape[3]
    out_arr = np.empty((m, n, l), dtype=np.float32)
    cdef float[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, li, k
    cdef double acc
    with nogil:
        for i in range(m):
            for j in range(n):
                for li in range(l):
                    acc = 0.0
                    for k in range(p):
                        acc += W[i, j, li, k] * A[i, j, k]
                    out[i, j, li] = <float> acc
    return out_arr


def p2p_contract(Fq_f, Fr_f):
    cdef double[:, :, ::1] Fq = np.ascontiguousarray(Fq_f, dtype=np.float64)
    cdef double[:, :, ::1] Fr = np.ascontiguousarray(Fr_f, dtype=np.float64)
    cdef Py_ssize_t m = Fq.shape[0], n = Fq.shape[1], l = Fq.shape[2]
    cdef Py_ssize_t X = Fr.shape[0], Y = Fr.shape[1]
    out_arr = np.empty((m, n, X, Y), dtype=np.float32)
    cdef float[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, x, y, k, l4 = l - (l & 3)
    cdef double a0, a1, a2, a3
    # fixed 4-lane reduction: deterministic and SIMD-friendly without
    # needing reassociation flags
    with nogil:
        for i in range(m):
            for j in range(n):
                for x in range(X):
                    for y in range(Y):
                        a0 = a1 = a2 = a3 = 0.0
                        for k in range(0, l4, 4):
                            a0 += Fq[i, j, k] * Fr[x, y, k]
                            a1 += Fq[i, j, k + 1] * Fr[x, y, k + 1]
                            a2 += Fq[i, j, k + 2] * Fr[x, y, k + 2]
                            a3 += Fq[i, j, k + 3] * Fr[x, y, k + 3]
                        for k in range(l4, l):
                            a0 += Fq[i, j, k] * Fr[x, y, k]
                        out[i, j, x, y] = <float> ((a0 + a1) + (a2 + a3))
    return out_arr


def bilinear_resize(const float[:, ::1] src, int out_h, int out_w):
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1]
    out_arr = np.empty((out_h, out_w), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef Py_ssize_t r, c, r0, c0, r1, c1
    cdef double sr, sc, fr, fc, top, bot
    cdef double rscale = 0.0 if out_h == 1 else (h - 1) / <double> (out_h - 1)
    cdef double cscale = 0.0 if out_w == 1 else (w - 1) / <double> (out_w - 1)
    with nogil:
        for r in range(out_h):
            sr = r * rscale
            r0 = <Py_ssize_t> sr
            if r0 > h - 1:
                r0 = h - 1
            r1 = r0 + 1 if r0 + 1 < h else h - 1
            fr = sr - r0
            for c in range(out_w):
                sc = c * cscale
                c0 = <Py_ssize_t> sc
                if c0 > w - 1:
                    c0 = w - 1
                c1 = c0 + 1 if c0 + 1 < w else w - 1
                fc = sc - c0
                top = src[r0, c0] * (1 - fc) + src[r0, c1] * fc
                bot = src[r1, c0] * (1 - fc) + src[r1, c1] * fc
                out[r, c] = <float> (top * (1 - fr) + bot * fr)
    return out_arr
