"""Rotated-box geometry in the bird's-eye-view plane.

Box convention: ``(x, y, w, l, theta)`` with the length ``l`` measured along
the heading direction ``(cos theta, sin theta)`` and the width ``w`` along the
perpendicular. All boxes are BEV only; no volumetric quantities.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend


def normalize_angle(theta):
    """Reduce ``theta`` to the half-open interval (-pi, pi]."""
    theta = float(theta)
    if not math.isfinite(theta):
        raise ValueError(f"angle must be finite, got {theta}")
    r = math.fmod(theta + math.pi, 2.0 * math.pi)
    if r <= 0.0:
        r += 2.0 * math.pi
    return r - math.pi


def normalize_angles(theta):
    """Vectorized :func:`normalize_angle` for numpy arrays."""
    theta = np.asarray(theta, dtype=np.float64)
    if not np.all(np.isfinite(theta)):
        raise ValueError("angles must be finite")
    r = np.fmod(theta + np.pi, 2.0 * np.pi)
    r = np.where(r <= 0.0, r + 2.0 * np.pi, r)
    return r - np.pi


@dataclass(frozen=True)
class RotatedBox:
    x: float
    y: float
    w: float
    l: float
    theta: float = 0.0

    def __post_init__(self):
        if not (self.w > 0 and self.l > 0):
            raise ValueError(f"box dimensions must be positive, got w={self.w}, l={self.l}")
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    @property
    def area(self):
        return self.w * self.l

    def as_tuple(self):
        return (self.x, self.y, self.w, self.l, self.theta)

    def to_local(self, px, py):
        """Coordinates of ``(px, py)`` along (length, width) axes of the box."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        dx, dy = px - self.x, py - self.y
        return dx * c + dy * s, -dx * s + dy * c


@dataclass(frozen=True)
class DetectionRecord:
    class_id: int
    box: RotatedBox
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        if self.class_id < 1:
            raise ValueError(f"class_id must be >= 1, got {self.class_id}")


@dataclass(frozen=True)
class BoundaryVector:
    """Distances from a pixel to the four box sides (left, top, right, bottom).

    Left/right are measured along the heading (length) axis, top/bottom along
    the width axis.
    """

    left: float
    top: float
    right: float
    bottom: float
    domain: str = field(default="linear")

    def __post_init__(self):
        if self.domain not in ("linear", "log"):
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.domain == "linear" and min(self.as_tuple()) <= 0:
            raise ValueError(f"linear boundary components must be positive: {self.as_tuple()}")

    def as_tuple(self):
        return (self.left, self.top, self.right, self.bottom)

    def to_log(self):
        if self.domain == "log":
            return self
        return BoundaryVector(*(math.log(v) for v in self.as_tuple()), domain="log")

    def to_linear(self):
        if self.domain == "linear":
            return self
        return BoundaryVector(*(math.exp(v) for v in self.as_tuple()), domain="linear")


def box_corners(box):
    """Corners of ``box`` as a (4, 2) array in counter-clockwise order."""
    c, s = math.cos(box.theta), math.sin(box.theta)
    hl, hw = 0.5 * box.l, 0.5 * box.w
    pts = []
    for u, v in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)):
        pts.append((box.x + u * c - v * s, box.y + u * s + v * c))
    return np.array(pts)


def polygon_area(points):
    """Signed shoelace area (positive for counter-clockwise order)."""
    p = np.asarray(points, dtype=np.float64)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(np.roll(x, 1) * y - x * np.roll(y, 1)))


def contains_point(box, p):
    u, v = box.to_local(p[0], p[1])
    return abs(u) <= 0.5 * box.l and abs(v) <= 0.5 * box.w


def contains_points(box, points):
    """Vectorized containment for an ``(N, >=2)`` array of points."""
    pts = np.asarray(points, dtype=np.float64)
    c, s = math.cos(box.theta), math.sin(box.theta)
    dx = pts[..., 0] - box.x
    dy = pts[..., 1] - box.y
    u = dx * c + dy * s
    v = -dx * s + dy * c
    return (np.abs(u) <= 0.5 * box.l) & (np.abs(v) <= 0.5 * box.w)


def shrink_box(box, sigma):
    if not sigma > 0:
        raise ValueError(f"shrink factor must be positive, got {sigma}")
    return RotatedBox(box.x, box.y, sigma * box.w, sigma * box.l, box.theta)


def rotated_iou(a, b, backend=None):
    return _backend.get(backend).rotated_iou(a.as_tuple(), b.as_tuple())


def boxes_to_array(boxes):
    if len(boxes) == 0:
        return np.zeros((0, 5))
    return np.array([b.as_tuple() for b in boxes], dtype=np.float64)


def iou_matrix(boxes_a, boxes_b, backend=None):
    """Pairwise rotated IoU between two box sequences."""
    return _backend.get(backend).iou_matrix(boxes_to_array(boxes_a), boxes_to_array(boxes_b))


def rotated_nms(dets, iou_threshold, backend=None):
    """Greedy rotated NMS; returns kept indices in descending score order.

    Equal scores are visited in ascending original index.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must lie in [0, 1], got {iou_threshold}")
    if not dets:
        return []
    order = sorted(range(len(dets)), key=lambda k: (-dets[k].score, k))
    arr = boxes_to_array([d.box for d in dets])
    ious = _backend.get(backend).iou_matrix(arr, arr)
    suppressed = np.zeros(len(dets), dtype=bool)
    keep = []
    for k in order:
        if suppressed[k]:
            continue
        keep.append(k)
        suppressed |= ious[k] > iou_threshold
    return keep


def boundary_vector_iou(p, t):
    """IoU of two boundary vectors anchored at the same pixel."""
    if p.domain != "linear" or t.domain != "linear":
        raise ValueError("boundary_vector_iou expects linear-domain vectors")
    pl, pt, pr, pb = p.as_tuple()
    tl, tt, tr, tb = t.as_tuple()
    inter = (min(pl, tl) + min(pr, tr)) * (min(pt, tt) + min(pb, tb))
    union = (pl + pr) * (pt + pb) + (tl + tr) * (tt + tb) - inter
    return inter / union
