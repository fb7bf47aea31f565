# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: causal 3D convolution (forward + gradients) and
dense block-matching displacement search.

Semantics must match kernels/reference.py exactly; the test suite compares
both backends against independent loop oracles.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def conv3d_forward(double[:, :, :, ::1] x, double[:, :, :, :, ::1] w,
                   double[::1] bias, int st, int sh, int sw,
                   int pt, int ph, int pw):
    cdef Py_ssize_t C_in = x.shape[0], T = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t C_out = w.shape[0], kt = w.shape[2], kh = w.shape[3], kw = w.shape[4]
    cdef Py_ssize_t To = (T + pt - kt) // st + 1
    cdef Py_ssize_t Ho = (H + 2 * ph - kh) // sh + 1
    cdef Py_ssize_t Wo = (W + 2 * pw - kw) // sw + 1
    out = np.empty((C_out, To, Ho, Wo), dtype=np.float64)
    cdef double[:, :, :, ::1] y = out
    cdef Py_ssize_t co, ci, to, ho, wo, jt, jh, jw, it, ih, iw
    cdef double acc
    for co in range(C_out):
        for to in range(To):
            for ho in range(Ho):
                for wo in range(Wo):
                    acc = bias[co]
                    for ci in range(C_in):
                        for jt in range(kt):
                            it = to * st + jt - pt
                            if it < 0 or it >= T:
                                continue
                            for jh in range(kh):
                                ih = ho * sh + jh - ph
                                if ih < 0 or ih >= H:
                                    continue
                                for jw in range(kw):
                                    iw = wo * sw + jw - pw
                                    if iw < 0 or iw >= W:
                                        continue
                                    acc += x[ci, it, ih, iw] * w[co, ci, jt, jh, jw]
                    y[co, to, ho, wo] = acc
    return out


def conv3d_grad_input(double[:, :, :, ::1] gy, double[:, :, :, :, ::1] w,
                      int st, int sh, int sw, int pt, int ph, int pw,
                      Py_ssize_t T, Py_ssize_t H, Py_ssize_t W):
    cdef Py_ssize_t C_out = gy.shape[0], To = gy.shape[1], Ho = gy.shape[2], Wo = gy.shape[3]
    cdef Py_ssize_t C_in = w.shape[1], kt = w.shape[2], kh = w.shape[3], kw = w.shape[4]
    out = np.zeros((C_in, T, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] gx = out
    cdef Py_ssize_t co, ci, to, ho, wo, jt, jh, jw, it, ih, iw
    cdef double g
    for co in range(C_out):
        for to in range(To):
            for ho in range(Ho):
                for wo in range(Wo):
                    g = gy[co, to, ho, wo]
                    for ci in range(C_in):
                        for jt in range(kt):
                            it = to * st + jt - pt
                            if it < 0 or it >= T:
                                continue
                            for jh in range(kh):
                                ih = ho * sh + jh - ph
                                if ih < 0 or ih >= H:
                                    continue
                                for jw in range(kw):
                                    iw = wo * sw + jw - pw
                                    if iw < 0 or iw >= W:
                                        continue
                                    gx[ci, it, ih, iw] += g * w[co, ci, jt, jh, jw]
    return out


def conv3d_grad_weight(double[:, :, :, ::1] gy, double[:, :, :, ::1] x,
                       int st, int sh, int sw, int pt, int ph, int pw,
                       Py_ssize_t kt, Py_ssize_t kh, Py_ssize_t kw):
    cdef Py_ssize_t C_out = gy.shape[0], To = gy.shape[1], Ho = gy.shape[2], Wo = gy.shape[3]
    cdef Py_ssize_t C_in = x.shape[0], T = x.shape[1], H = x.shape[2], W = x.shape[3]
    out = np.zeros((C_out, C_in, kt, kh, kw), dtype=np.float64)
    cdef double[:, :, :, :, ::1] gw = out
    cdef Py_ssize_t co, ci, to, ho, wo, jt, jh, jw, it, ih, iw
    cdef double g
    for co in range(C_out):
        for to in range(To):
            for ho in range(Ho):
                for wo in range(Wo):
                    g = gy[co, to, ho, wo]
                    for ci in range(C_in):
                        for jt in range(kt):
                            it = to * st + jt - pt
                            if it < 0 or it >= T:
                                continue
                            for jh in range(kh):
                                ih = ho * sh + jh - ph
                                if ih < 0 or ih >= H:
                                    continue
                                for jw in range(kw):
                                    iw = wo * sw + jw - pw
                                    if iw < 0 or iw >= W:
                                        continue
                                    gw[co, ci, jt, jh, jw] += g * x[ci, it, ih, iw]
    return out


cdef inline Py_ssize_t _clamp(Py_ssize_t v, Py_ssize_t hi) nogil:
    if v < 0:
        return 0
    if v > hi:
        return hi
    return v


def block_match(double[:, ::1] a, double[:, ::1] b,
                long[::1] cand_dy, long[::1] cand_dx,
                int patch_r):
    """Per-pixel SAD search over the given candidate displacements.

    Candidates must already be sorted by tie-break priority; a strictly
    smaller SAD is required to displace an earlier candidate. Out-of-range
    samples replicate the border (index clamping). Accumulation order is
    (u, v) row-major, matching the numpy fallback bit for bit.
    """
    cdef Py_ssize_t H = a.shape[0], W = a.shape[1], n_cand = cand_dy.shape[0]
    out = np.zeros((H, W, 2), dtype=np.int64)
    cdef long[:, :, ::1] flow = out
    cdef Py_ssize_t y, x, c, u, v, ay, ax, by, bx
    cdef long dy, dx
    cdef double sad, best, d
    for y in range(H):
        for x in range(W):
            best = -1.0
            for c in range(n_cand):
                dy = cand_dy[c]
                dx = cand_dx[c]
                sad = 0.0
                for u in range(-patch_r, patch_r + 1):
                    ay = _clamp(y + u, H - 1)
                    by = _clamp(y + dy + u, H - 1)
                    for v in range(-patch_r, patch_r + 1):
                        ax = _clamp(x + v, W - 1)
                        bx = _clamp(x + dx + v, W - 1)
                        d = a[ay, ax] - b[by, bx]
                        sad += d if d >= 0.0 else -d
                if best < 0.0 or sad < best:
                    best = sad
                    flow[y, x, 0] = dy
                    flow[y, x, 1] = dx
    return out
