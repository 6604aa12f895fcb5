"""Pure numpy/Python implementations of the hot kernels.

These mirror the compiled ``_kernels`` extension one-to-one and are used
whenever the extension is unavailable (or ``DENFI_BACKEND=python``).
"""
import math

import numpy as np

CLIP_EPS = 1e-9


def _corners(x, y, w, l, theta):
    c, s = math.cos(theta), math.sin(theta)
    hl, hw = 0.5 * l, 0.5 * w
    out = []
    for u, v in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)):
        out.append((x + u * c - v * s, y + u * s + v * c))
    return out


def _clip(subject, e0, e1):
    ex, ey = e1[0] - e0[0], e1[1] - e0[1]
    norm = math.hypot(ex, ey)
    if norm == 0.0:
        return subject

    def dist(p):
        return (ex * (p[1] - e0[1]) - ey * (p[0] - e0[0])) / norm

    out = []
    n = len(subject)
    for k in range(n):
        cur = subject[k]
        prev = subject[k - 1]
        dc, dp = dist(cur), dist(prev)
        cur_in, prev_in = dc >= -CLIP_EPS, dp >= -CLIP_EPS
        if cur_in:
            if not prev_in:
                t = dp / (dp - dc)
                out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
            out.append(cur)
        elif prev_in:
            t = dp / (dp - dc)
            out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
    return out


def _area(poly):
    n = len(poly)
    if n < 3:
        return 0.0
    acc = 0.0
    for k in range(n):
        x0, y0 = poly[k - 1]
        x1, y1 = poly[k]
        acc += x0 * y1 - x1 * y0
    return 0.5 * acc


def rotated_iou(a, b):
    """IoU of two ``(x, y, w, l, theta)`` boxes by convex clipping."""
    ra = 0.5 * math.hypot(a[2], a[3])
    rb = 0.5 * math.hypot(b[2], b[3])
    if math.hypot(a[0] - b[0], a[1] - b[1]) >= ra + rb:
        return 0.0
    poly = _corners(*a)
    clip_poly = _corners(*b)
    for k in range(4):
        poly = _clip(poly, clip_poly[k - 1], clip_poly[k])
        if not poly:
            return 0.0
    inter = max(_area(poly), 0.0)
    union = a[2] * a[3] + b[2] * b[3] - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def iou_matrix(boxes_a, boxes_b):
    boxes_a = np.ascontiguousarray(boxes_a, dtype=np.float64).reshape(-1, 5)
    boxes_b = np.ascontiguousarray(boxes_b, dtype=np.float64).reshape(-1, 5)
    out = np.zeros((len(boxes_a), len(boxes_b)))
    if out.size == 0:
        return out
    ra = 0.5 * np.hypot(boxes_a[:, 2], boxes_a[:, 3])
    rb = 0.5 * np.hypot(boxes_b[:, 2], boxes_b[:, 3])
    dist = np.hypot(boxes_a[:, None, 0] - boxes_b[None, :, 0], boxes_a[:, None, 1] - boxes_b[None, :, 1])
    for i, j in zip(*np.nonzero(dist < ra[:, None] + rb[None, :])):
        out[i, j] = rotated_iou(tuple(boxes_a[i]), tuple(boxes_b[j]))
    return out


def _sample_grid(shape, offsets, ksize):
    h, w = shape
    pad = (ksize - 1) // 2
    taps = ksize * ksize
    off = offsets.reshape(h, w, taps, 2)
    ti, tj = np.divmod(np.arange(taps), ksize)
    rows = np.arange(h)[:, None, None] + (ti - pad)[None, None, :] + off[..., 0]
    cols = np.arange(w)[None, :, None] + (tj - pad)[None, None, :] + off[..., 1]
    return rows, cols


def _corner_terms(rows, cols, h, w):
    r0 = np.floor(rows)
    c0 = np.floor(cols)
    fr = rows - r0
    fc = cols - c0
    r0 = r0.astype(np.int64)
    c0 = c0.astype(np.int64)
    corners = []
    for dr, dc in ((0, 0), (0, 1), (1, 0), (1, 1)):
        rr, cc = r0 + dr, c0 + dc
        valid = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        flat = np.where(valid, np.clip(rr, 0, h - 1) * w + np.clip(cc, 0, w - 1), 0)
        corners.append((flat, valid))
    return fr, fc, corners


def _gather(x2d, flat, valid):
    vals = x2d[flat]
    vals *= valid[..., None]
    return vals


def deform_im2col(x, offsets, ksize):
    """Bilinearly sampled columns, shape ``(H, W, ksize*ksize, C)``."""
    h, w, c = x.shape
    rows, cols = _sample_grid((h, w), offsets, ksize)
    fr, fc, corners = _corner_terms(rows, cols, h, w)
    x2d = x.reshape(h * w, c)
    (f00, v00), (f01, v01), (f10, v10), (f11, v11) = corners
    fr = fr[..., None]
    fc = fc[..., None]
    out = (1.0 - fr) * (1.0 - fc) * _gather(x2d, f00, v00)
    out += (1.0 - fr) * fc * _gather(x2d, f01, v01)
    out += fr * (1.0 - fc) * _gather(x2d, f10, v10)
    out += fr * fc * _gather(x2d, f11, v11)
    return out


def deform_col2im(grad_cols, x, offsets, ksize):
    """Adjoint of :func:`deform_im2col` w.r.t. the input and the offsets."""
    h, w, c = x.shape
    taps = ksize * ksize
    rows, cols = _sample_grid((h, w), offsets, ksize)
    fr, fc, corners = _corner_terms(rows, cols, h, w)
    x2d = x.reshape(h * w, c)
    (f00, m00), (f01, m01), (f10, m10), (f11, m11) = corners
    v00 = _gather(x2d, f00, m00)
    v01 = _gather(x2d, f01, m01)
    v10 = _gather(x2d, f10, m10)
    v11 = _gather(x2d, f11, m11)
    frc, fcc = fr[..., None], fc[..., None]
    d_row = ((1.0 - fcc) * (v10 - v00) + fcc * (v11 - v01)) * grad_cols
    d_col = ((1.0 - frc) * (v01 - v00) + frc * (v11 - v10)) * grad_cols
    grad_off = np.empty((h, w, taps, 2))
    grad_off[..., 0] = d_row.sum(axis=-1)
    grad_off[..., 1] = d_col.sum(axis=-1)

    grad_x = np.zeros(h * w * c)
    chan = np.arange(c)
    for (flat, valid), weight in (
        ((f00, m00), (1.0 - fr) * (1.0 - fc)),
        ((f01, m01), (1.0 - fr) * fc),
        ((f10, m10), fr * (1.0 - fc)),
        ((f11, m11), fr * fc),
    ):
        contrib = grad_cols * (weight * valid)[..., None]
        idx = (flat[..., None] * c + chan).ravel()
        grad_x += np.bincount(idx, weights=contrib.ravel(), minlength=h * w * c)
    return grad_x.reshape(h, w, c), grad_off.reshape(h, w, taps * 2)
