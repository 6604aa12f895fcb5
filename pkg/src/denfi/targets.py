"""Dense boundary targets: pixel assignment, encodings and proposal decoding.

Channel layout of a regression map with ``n`` orientation bins::

    [0, 4)          log boundary (left, top, right, bottom)
    [4, 4 + n)      orientation bin logits
    [4 + n, 4 + 2n) per-bin orientation residuals

The auto-scale scalar multiplies the log-boundary and residual channels only;
bin logits are used raw.
"""
import math
from dataclasses import dataclass

import numpy as np

from .geom import BoundaryVector, RotatedBox, normalize_angle, normalize_angles, shrink_box

IGNORE = -1
NEGATIVE = 0

# (sigma1, sigma2) per category
DEFAULT_SIGMAS = {
    "Car": (0.3, 0.5),
    "Cyclist": (0.3, 0.5),
    "Pedestrian": (0.5, 0.8),
}
DEFAULT_BINS = 12


@dataclass(frozen=True)
class GridSpec:
    height: int
    width: int
    origin_x: float = 0.0
    origin_y: float = 0.0
    cell: float = 1.0

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.height}x{self.width}")
        if not self.cell > 0:
            raise ValueError(f"cell size must be positive, got {self.cell}")

    def pixel_center(self, i, j):
        return (self.origin_x + (j + 0.5) * self.cell, self.origin_y + (i + 0.5) * self.cell)

    def centers(self):
        """Pixel-center coordinate arrays ``(xs, ys)``, each of shape (H, W)."""
        xs = self.origin_x + (np.arange(self.width) + 0.5) * self.cell
        ys = self.origin_y + (np.arange(self.height) + 0.5) * self.cell
        return np.meshgrid(xs, ys)


@dataclass(frozen=True)
class AssignConfig:
    sigma1: float = 0.3
    sigma2: float = 0.5
    num_classes: int = 1

    def __post_init__(self):
        if not 0 < self.sigma1 < self.sigma2 <= 1:
            raise ValueError(f"need 0 < sigma1 < sigma2 <= 1, got {self.sigma1}, {self.sigma2}")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")

    @classmethod
    def for_category(cls, name, num_classes=1):
        s1, s2 = DEFAULT_SIGMAS[name]
        return cls(s1, s2, num_classes)


@dataclass(frozen=True)
class OrientationEncoding:
    bin: int
    residual: float
    n: int

    @property
    def theta_n(self):
        return 2.0 * math.pi / self.n


@dataclass
class TargetMaps:
    """Per-pixel training targets.

    ``log_boundary``, ``bin`` and ``residual`` are only meaningful where
    ``class_target > 0``; elsewhere they hold 0, -1 and 0.
    """

    class_target: np.ndarray  # (H, W) int: -1 ignore, 0 negative, c >= 1 positive
    log_boundary: np.ndarray  # (H, W, 4)
    bin: np.ndarray  # (H, W) int
    residual: np.ndarray  # (H, W)
    box_index: np.ndarray  # (H, W) int, -1 where not positive
    n: int

    @property
    def positive(self):
        return self.class_target > 0

    @property
    def n_pos(self):
        return int(np.count_nonzero(self.class_target > 0))


def _local(box, xs, ys):
    c, s = math.cos(box.theta), math.sin(box.theta)
    dx = xs - box.x
    dy = ys - box.y
    return dx * c + dy * s, -dx * s + dy * c


def _inside(box, xs, ys):
    u, v = _local(box, xs, ys)
    return (np.abs(u) <= 0.5 * box.l) & (np.abs(v) <= 0.5 * box.w)


def _assign(boxes, grid, cfg):
    h, w = grid.height, grid.width
    cls_map = np.zeros((h, w), dtype=np.int64)
    owner = np.full((h, w), -1, dtype=np.int64)
    if not boxes:
        return cls_map, owner
    xs, ys = grid.centers()
    ignore = np.zeros((h, w), dtype=bool)
    # visit boxes largest first so the smallest positive box is written last
    order = sorted(range(len(boxes)), key=lambda k: (-boxes[k][0].area, -k))
    for k in order:
        box, cid = boxes[k]
        if not 1 <= cid <= cfg.num_classes:
            raise ValueError(f"class id {cid} outside [1, {cfg.num_classes}]")
        pos = _inside(shrink_box(box, cfg.sigma1), xs, ys)
        ignore |= _inside(shrink_box(box, cfg.sigma2), xs, ys)
        cls_map[pos] = cid
        owner[pos] = k
    cls_map[(owner < 0) & ignore] = IGNORE
    return cls_map, owner


def assign_pixels(boxes, grid, cfg):
    """Class map with -1 (ignore), 0 (negative) or the positive class id.

    ``boxes`` is a sequence of ``(RotatedBox, class_id)``. A pixel is positive
    when its center lies in the sigma1-shrunk box, ignore when it is not
    positive but lies in a sigma2-shrunk box. Overlapping positives go to the
    box with the smallest area (lowest index on equal areas).
    """
    return _assign(list(boxes), grid, cfg)[0]


def encode_boundary_vector(pixel_center, box):
    u, v = box.to_local(pixel_center[0], pixel_center[1])
    half_l, half_w = 0.5 * box.l, 0.5 * box.w
    if not (abs(u) < half_l and abs(v) < half_w):
        raise ValueError(f"pixel {tuple(pixel_center)} is not strictly inside {box}")
    return BoundaryVector(u + half_l, half_w - v, half_l - u, v + half_w)


def encode_log(b):
    if b.domain != "linear":
        raise ValueError("encode_log expects a linear-domain vector")
    return b.to_log()


def decode_exp(b):
    if b.domain != "log":
        raise ValueError("decode_exp expects a log-domain vector")
    return b.to_linear()


def encode_orientation(theta, n=DEFAULT_BINS):
    if n < 2:
        raise ValueError(f"need at least 2 bins, got {n}")
    theta = normalize_angle(theta)
    theta_n = 2.0 * math.pi / n
    raw = math.floor((theta + math.pi / n) / theta_n)
    residual = (2.0 / theta_n) * (theta - raw * theta_n)
    # keep the residual in [-1, 1) against rounding at bin edges
    if residual >= 1.0:
        raw += 1
        residual = (2.0 / theta_n) * (theta - raw * theta_n)
    elif residual < -1.0:
        raw -= 1
        residual = (2.0 / theta_n) * (theta - raw * theta_n)
    return OrientationEncoding(raw % n, residual, n)


def decode_orientation(enc):
    if not 0 <= enc.bin < enc.n:
        raise ValueError(f"bin {enc.bin} outside [0, {enc.n})")
    theta_n = enc.theta_n
    return normalize_angle(enc.bin * theta_n + enc.residual * theta_n / 2.0)


def build_target_maps(boxes, grid, cfg, n=DEFAULT_BINS):
    boxes = list(boxes)
    cls_map, owner = _assign(boxes, grid, cfg)
    h, w = grid.height, grid.width
    log_b = np.zeros((h, w, 4))
    bins = np.full((h, w), -1, dtype=np.int64)
    res = np.zeros((h, w))
    for i, j in zip(*np.nonzero(cls_map > 0)):
        box = boxes[owner[i, j]][0]
        vec = encode_log(encode_boundary_vector(grid.pixel_center(i, j), box))
        log_b[i, j] = vec.as_tuple()
        enc = encode_orientation(box.theta, n)
        bins[i, j] = enc.bin
        res[i, j] = enc.residual
    return TargetMaps(cls_map, log_b, bins, res, owner, n)


def targets_to_regression(targets, logit=30.0):
    """Regression map whose decode reproduces ``targets`` exactly at positives."""
    n = targets.n
    h, w = targets.class_target.shape
    reg = np.zeros((h, w, 4 + 2 * n))
    for i, j in zip(*np.nonzero(targets.positive)):
        reg[i, j, :4] = targets.log_boundary[i, j]
        b = targets.bin[i, j]
        reg[i, j, 4 + b] = logit
        reg[i, j, 4 + n + b] = targets.residual[i, j]
    return reg


def _check_reg(reg, n):
    reg = np.asarray(reg, dtype=np.float64)
    if reg.ndim != 3 or reg.shape[2] != 4 + 2 * n:
        raise ValueError(f"regression map must be HxWx{4 + 2 * n}, got {reg.shape}")
    return reg


def decode_proposal(reg, scale=1.0, n=DEFAULT_BINS):
    """Decode an HxWx(4+2n) regression map into an HxWx5 (l, t, r, b, theta) map."""
    reg = _check_reg(reg, n)
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    theta_n = 2.0 * math.pi / n
    boundary = np.exp(scale * reg[..., :4])
    bins = np.argmax(reg[..., 4:4 + n], axis=-1)
    res = np.take_along_axis(reg[..., 4 + n:], bins[..., None], axis=-1)[..., 0]
    theta = normalize_angles(bins * theta_n + scale * res * theta_n / 2.0)
    return np.concatenate([boundary, theta[..., None]], axis=-1)


def decode_proposal_backward(reg, scale, n, grad_proposal):
    """Gradients of :func:`decode_proposal` w.r.t. ``reg`` and ``scale``.

    The bin argmax is treated as a constant.
    """
    reg = _check_reg(reg, n)
    theta_n = 2.0 * math.pi / n
    boundary = np.exp(scale * reg[..., :4])
    bins = np.argmax(reg[..., 4:4 + n], axis=-1)
    res = np.take_along_axis(reg[..., 4 + n:], bins[..., None], axis=-1)[..., 0]
    g_b = grad_proposal[..., :4] * boundary
    g_t = grad_proposal[..., 4] * theta_n / 2.0
    grad_reg = np.zeros_like(reg)
    grad_reg[..., :4] = g_b * scale
    res_grad = np.zeros(reg.shape[:2] + (n,))
    np.put_along_axis(res_grad, bins[..., None], (g_t * scale)[..., None], axis=-1)
    grad_reg[..., 4 + n:] = res_grad
    grad_scale = float(np.sum(g_b * reg[..., :4]) + np.sum(g_t * res))
    return grad_reg, grad_scale


def proposal_to_box(proposal, pixel_center):
    """Rotated box implied by a decoded (l, t, r, b, theta) proposal at a pixel."""
    left, top, right, bottom, theta = (float(v) for v in proposal)
    if min(left, top, right, bottom) <= 0:
        raise ValueError(f"boundary distances must be positive: {(left, top, right, bottom)}")
    c, s = math.cos(theta), math.sin(theta)
    du, dv = 0.5 * (right - left), 0.5 * (top - bottom)
    cx = pixel_center[0] + du * c - dv * s
    cy = pixel_center[1] + du * s + dv * c
    return RotatedBox(cx, cy, top + bottom, left + right, theta)


def proposals_to_boxes(proposal_map, grid, mask=None):
    """Boxes for every pixel (or those selected by ``mask``), with their indices."""
    h, w = proposal_map.shape[:2]
    if mask is None:
        mask = np.ones((h, w), dtype=bool)
    out = []
    for i, j in zip(*np.nonzero(mask)):
        out.append(((int(i), int(j)), proposal_to_box(proposal_map[i, j], grid.pixel_center(i, j))))
    return out
