# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: deformable im2col/col2im and rotated-box IoU."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, sin, cos, sqrt, hypot

cnp.import_array()

cdef double CLIP_EPS = 1e-9


cdef inline void _corners(double x, double y, double w, double l, double th, double* px, double* py) noexcept nogil:
    cdef double c = cos(th), s = sin(th)
    cdef double hl = 0.5 * l, hw = 0.5 * w
    cdef double us[4]
    cdef double vs[4]
    us[0] = hl; us[1] = -hl; us[2] = -hl; us[3] = hl
    vs[0] = hw; vs[1] = hw; vs[2] = -hw; vs[3] = -hw
    cdef int k
    for k in range(4):
        px[k] = x + us[k] * c - vs[k] * s
        py[k] = y + us[k] * s + vs[k] * c


cdef int _clip(double* sx, double* sy, int n, double e0x, double e0y, double e1x, double e1y,
               double* ox, double* oy) noexcept nogil:
    cdef double ex = e1x - e0x, ey = e1y - e0y
    cdef double norm = hypot(ex, ey)
    cdef int k, m = 0
    cdef double dc, dp, t
    cdef int prev
    if norm == 0.0:
        for k in range(n):
            ox[k] = sx[k]
            oy[k] = sy[k]
        return n
    for k in range(n):
        prev = k - 1 if k > 0 else n - 1
        dc = (ex * (sy[k] - e0y) - ey * (sx[k] - e0x)) / norm
        dp = (ex * (sy[prev] - e0y) - ey * (sx[prev] - e0x)) / norm
        if dc >= -CLIP_EPS:
            if dp < -CLIP_EPS:
                t = dp / (dp - dc)
                ox[m] = sx[prev] + t * (sx[k] - sx[prev])
                oy[m] = sy[prev] + t * (sy[k] - sy[prev])
                m += 1
            ox[m] = sx[k]
            oy[m] = sy[k]
            m += 1
        elif dp >= -CLIP_EPS:
            t = dp / (dp - dc)
            ox[m] = sx[prev] + t * (sx[k] - sx[prev])
            oy[m] = sy[prev] + t * (sy[k] - sy[prev])
            m += 1
    return m


cdef double _iou(double ax, double ay, double aw, double al, double at,
                 double bx, double by, double bw, double bl, double bt) noexcept nogil:
    cdef double ra = 0.5 * hypot(aw, al), rb = 0.5 * hypot(bw, bl)
    if hypot(ax - bx, ay - by) >= ra + rb:
        return 0.0
    cdef double px[16]
    cdef double py[16]
    cdef double qx[16]
    cdef double qy[16]
    cdef double cx[4]
    cdef double cy[4]
    cdef int n = 4, k, prev
    _corners(ax, ay, aw, al, at, px, py)
    _corners(bx, by, bw, bl, bt, cx, cy)
    for k in range(4):
        prev = k - 1 if k > 0 else 3
        if k % 2 == 0:
            n = _clip(px, py, n, cx[prev], cy[prev], cx[k], cy[k], qx, qy)
        else:
            n = _clip(qx, qy, n, cx[prev], cy[prev], cx[k], cy[k], px, py)
        if n == 0:
            return 0.0
    # four clips: the result lands back in px/py
    cdef double acc = 0.0
    if n >= 3:
        for k in range(n):
            prev = k - 1 if k > 0 else n - 1
            acc += px[prev] * py[k] - px[k] * py[prev]
    cdef double inter = 0.5 * acc
    if inter < 0.0:
        inter = 0.0
    cdef double union = aw * al + bw * bl - inter
    if union <= 0.0:
        return 0.0
    cdef double r = inter / union
    if r < 0.0:
        return 0.0
    if r > 1.0:
        return 1.0
    return r


def rotated_iou(a, b):
    return _iou(a[0], a[1], a[2], a[3], a[4], b[0], b[1], b[2], b[3], b[4])


def iou_matrix(boxes_a, boxes_b):
    cdef double[:, ::1] A = np.ascontiguousarray(boxes_a, dtype=np.float64).reshape(-1, 5)
    cdef double[:, ::1] B = np.ascontiguousarray(boxes_b, dtype=np.float64).reshape(-1, 5)
    out_arr = np.zeros((A.shape[0], B.shape[0]))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(A.shape[0]):
            for j in range(B.shape[0]):
                out[i, j] = _iou(A[i, 0], A[i, 1], A[i, 2], A[i, 3], A[i, 4],
                                 B[j, 0], B[j, 1], B[j, 2], B[j, 3], B[j, 4])
    return out_arr


def deform_im2col(x_arr, offsets_arr, int ksize):
    cdef double[:, :, ::1] x = np.ascontiguousarray(x_arr, dtype=np.float64)
    cdef double[:, :, ::1] off = np.ascontiguousarray(offsets_arr, dtype=np.float64)
    cdef Py_ssize_t h = x.shape[0], w = x.shape[1], c = x.shape[2]
    cdef int taps = ksize * ksize, pad = (ksize - 1) // 2
    out_arr = np.zeros((h, w, taps, c))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, ch
    cdef int t, r0, c0
    cdef double row, col, fr, fc, w00, w01, w10, w11
    cdef bint ok00, ok01, ok10, ok11
    with nogil:
        for i in range(h):
            for j in range(w):
                for t in range(taps):
                    row = i + t // ksize - pad + off[i, j, 2 * t]
                    col = j + t % ksize - pad + off[i, j, 2 * t + 1]
                    r0 = <int>floor(row)
                    c0 = <int>floor(col)
                    fr = row - r0
                    fc = col - c0
                    w00 = (1.0 - fr) * (1.0 - fc)
                    w01 = (1.0 - fr) * fc
                    w10 = fr * (1.0 - fc)
                    w11 = fr * fc
                    ok00 = 0 <= r0 < h and 0 <= c0 < w
                    ok01 = 0 <= r0 < h and 0 <= c0 + 1 < w
                    ok10 = 0 <= r0 + 1 < h and 0 <= c0 < w
                    ok11 = 0 <= r0 + 1 < h and 0 <= c0 + 1 < w
                    if ok00:
                        for ch in range(c):
                            out[i, j, t, ch] += w00 * x[r0, c0, ch]
                    if ok01:
                        for ch in range(c):
                            out[i, j, t, ch] += w01 * x[r0, c0 + 1, ch]
                    if ok10:
                        for ch in range(c):
                            out[i, j, t, ch] += w10 * x[r0 + 1, c0, ch]
                    if ok11:
                        for ch in range(c):
                            out[i, j, t, ch] += w11 * x[r0 + 1, c0 + 1, ch]
    return out_arr


def deform_col2im(grad_cols_arr, x_arr, offsets_arr, int ksize):
    cdef double[:, :, :, ::1] g = np.ascontiguousarray(grad_cols_arr, dtype=np.float64)
    cdef double[:, :, ::1] x = np.ascontiguousarray(x_arr, dtype=np.float64)
    cdef double[:, :, ::1] off = np.ascontiguousarray(offsets_arr, dtype=np.float64)
    cdef Py_ssize_t h = x.shape[0], w = x.shape[1], c = x.shape[2]
    cdef int taps = ksize * ksize, pad = (ksize - 1) // 2
    gx_arr = np.zeros((h, w, c))
    goff_arr = np.zeros((h, w, taps * 2))
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, :, ::1] goff = goff_arr
    cdef Py_ssize_t i, j, ch
    cdef int t, r0, c0
    cdef double row, col, fr, fc, gv, v00, v01, v10, v11, drow, dcol
    cdef bint ok00, ok01, ok10, ok11
    with nogil:
        for i in range(h):
            for j in range(w):
                for t in range(taps):
                    row = i + t // ksize - pad + off[i, j, 2 * t]
                    col = j + t % ksize - pad + off[i, j, 2 * t + 1]
                    r0 = <int>floor(row)
                    c0 = <int>floor(col)
                    fr = row - r0
                    fc = col - c0
                    ok00 = 0 <= r0 < h and 0 <= c0 < w
                    ok01 = 0 <= r0 < h and 0 <= c0 + 1 < w
                    ok10 = 0 <= r0 + 1 < h and 0 <= c0 < w
                    ok11 = 0 <= r0 + 1 < h and 0 <= c0 + 1 < w
                    drow = 0.0
                    dcol = 0.0
                    for ch in range(c):
                        gv = g[i, j, t, ch]
                        v00 = x[r0, c0, ch] if ok00 else 0.0
                        v01 = x[r0, c0 + 1, ch] if ok01 else 0.0
                        v10 = x[r0 + 1, c0, ch] if ok10 else 0.0
                        v11 = x[r0 + 1, c0 + 1, ch] if ok11 else 0.0
                        drow = drow + gv * ((1.0 - fc) * (v10 - v00) + fc * (v11 - v01))
                        dcol = dcol + gv * ((1.0 - fr) * (v01 - v00) + fr * (v11 - v10))
                        if ok00:
                            gx[r0, c0, ch] += gv * (1.0 - fr) * (1.0 - fc)
                        if ok01:
                            gx[r0, c0 + 1, ch] += gv * (1.0 - fr) * fc
                        if ok10:
                            gx[r0 + 1, c0, ch] += gv * fr * (1.0 - fc)
                        if ok11:
                            gx[r0 + 1, c0 + 1, ch] += gv * fr * fc
                    goff[i, j, 2 * t] = drow
                    goff[i, j, 2 * t + 1] = dcol
    return gx_arr, goff_arr
