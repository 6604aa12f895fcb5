"""Lidar ingestion, pillarization, the pillar feature net and augmentation."""
import math
from dataclasses import dataclass

import numpy as np

from .geom import RotatedBox, contains_points

AUGMENTED_DIM = 9


class FormatError(ValueError):
    pass


def load_velodyne(path):
    """Read a KITTI velodyne ``.bin`` as an (N, 4) float64 array (x, y, z, r)."""
    raw = np.fromfile(path, dtype="<f4")
    if raw.size % 4:
        raise FormatError(f"{path}: size {raw.size * 4} bytes is not a multiple of 16")
    return raw.reshape(-1, 4).astype(np.float64)


def save_velodyne(path, points):
    np.asarray(points, dtype="<f4").reshape(-1, 4).tofile(path)


@dataclass(frozen=True)
class PillarConfig:
    x_min: float = 0.0
    x_max: float = 69.12
    y_min: float = -39.68
    y_max: float = 39.68
    cell: float = 0.16
    max_pillars: int = 12000
    max_points: int = 100
    channels: int = 64

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min and self.cell > 0):
            raise ValueError("pillar ranges and cell size must be positive")
        if self.max_pillars < 1 or self.max_points < 1:
            raise ValueError("max_pillars and max_points must be >= 1")

    @property
    def grid_shape(self):
        """(H, W) of the BEV grid; rows follow y, columns follow x."""
        return (int(round((self.y_max - self.y_min) / self.cell)),
                int(round((self.x_max - self.x_min) / self.cell)))


@dataclass
class PillarTensor:
    data: np.ndarray  # (P, N, 9): x, y, z, r, xc, yc, zc, xp, yp
    indices: np.ndarray  # (P, 2) int (row, col); -1 for unused slots
    num_points: np.ndarray  # (P,) valid points per pillar
    count: int
    # source point index per slot, -1 for padding
    point_ids: np.ndarray

    def valid_ratio(self):
        """Fraction of each used pillar's slots that hold real points."""
        return self.num_points[:self.count] / self.data.shape[1]


def pillar_index(points, cfg):
    """(row, col) per point and a mask of points inside the configured range."""
    pts = np.asarray(points, dtype=np.float64)
    x, y = pts[:, 0], pts[:, 1]
    inside = (x >= cfg.x_min) & (x < cfg.x_max) & (y >= cfg.y_min) & (y < cfg.y_max)
    rows = np.floor((y - cfg.y_min) / cfg.cell).astype(np.int64)
    cols = np.floor((x - cfg.x_min) / cfg.cell).astype(np.int64)
    h, w = cfg.grid_shape
    inside &= (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    return rows, cols, inside


def pillarize(points, cfg):
    """Group points into pillars and build the 9-dim augmented tensor.

    Out-of-range points are dropped. Each pillar keeps its first
    ``max_points`` points in input order; when more than ``max_pillars``
    pillars are occupied the densest are kept (ties by first occurrence).
    Output pillars are ordered densest first.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 4)
    rows, cols, inside = pillar_index(pts, cfg)
    h, w = cfg.grid_shape
    ids = np.nonzero(inside)[0]
    lin = rows[ids] * w + cols[ids]
    uniq, first, counts = np.unique(lin, return_index=True, return_counts=True)
    order = np.lexsort((ids[first], -counts))[:cfg.max_pillars]

    p, n = cfg.max_pillars, cfg.max_points
    data = np.zeros((p, n, AUGMENTED_DIM))
    indices = np.full((p, 2), -1, dtype=np.int64)
    num = np.zeros(p, dtype=np.int64)
    point_ids = np.full((p, n), -1, dtype=np.int64)
    # stable sort keeps input order within each pillar
    by_pillar = np.argsort(lin, kind="stable")
    starts = np.searchsorted(lin[by_pillar], uniq)
    for slot, u in enumerate(order):
        members = ids[by_pillar[starts[u]:starts[u] + counts[u]]][:n]
        k = len(members)
        sel = pts[members]
        r, c = divmod(int(uniq[u]), w)
        centroid = sel[:, :3].mean(axis=0)
        cx = cfg.x_min + (c + 0.5) * cfg.cell
        cy = cfg.y_min + (r + 0.5) * cfg.cell
        data[slot, :k, :4] = sel
        data[slot, :k, 4:7] = sel[:, :3] - centroid
        data[slot, :k, 7] = sel[:, 0] - cx
        data[slot, :k, 8] = sel[:, 1] - cy
        indices[slot] = (r, c)
        num[slot] = k
        point_ids[slot, :k] = members
    return PillarTensor(data, indices, num, len(order), point_ids)


@dataclass
class PillarNetParams:
    weight: np.ndarray  # (9, C)
    bias: np.ndarray  # (C,)
    bn_mean: np.ndarray
    bn_var: np.ndarray
    bn_gamma: np.ndarray
    bn_beta: np.ndarray
    eps: float = 1e-3

    @classmethod
    def random(cls, channels, rng=None):
        rng = np.random.default_rng(rng)
        return cls(
            rng.normal(0.0, math.sqrt(2.0 / AUGMENTED_DIM), (AUGMENTED_DIM, channels)),
            np.zeros(channels),
            np.zeros(channels),
            np.ones(channels),
            np.ones(channels),
            np.zeros(channels),
        )


def pillar_feature_forward(pillars, params):
    """Per-point linear + batch norm (inference) + ReLU, max over valid points.

    Padding slots never enter the max; unused pillar slots yield zeros.
    """
    data = pillars.data
    if data.shape[2] != params.weight.shape[0]:
        raise ValueError(f"weight expects {params.weight.shape[0]} inputs, pillars carry {data.shape[2]}")
    h = data @ params.weight + params.bias
    h = (h - params.bn_mean) / np.sqrt(params.bn_var + params.eps) * params.bn_gamma + params.bn_beta
    h = np.maximum(h, 0.0)
    valid = np.arange(data.shape[1])[None, :] < pillars.num_points[:, None]
    h = np.where(valid[..., None], h, -np.inf)
    out = h.max(axis=1)
    out[pillars.num_points == 0] = 0.0
    return out


def scatter_to_dense(features, indices, height, width, count=None):
    """Place per-pillar features into an HxWxC pseudo-image."""
    features = np.asarray(features, dtype=np.float64)
    indices = np.asarray(indices, dtype=np.int64)
    if count is None:
        count = int(np.count_nonzero(indices[:, 0] >= 0)) if len(indices) else 0
    idx = indices[:count]
    if count and (idx.min() < 0 or idx[:, 0].max() >= height or idx[:, 1].max() >= width):
        raise ValueError("pillar index outside the pseudo-image")
    canvas = np.zeros((height, width, features.shape[1]))
    canvas[idx[:, 0], idx[:, 1]] = features[:count]
    return canvas


def gather_from_dense(canvas, indices, count):
    idx = np.asarray(indices)[:count]
    return canvas[idx[:, 0], idx[:, 1]]


def _rotate_xy(x, y, angle):
    c, s = math.cos(angle), math.sin(angle)
    return x * c - y * s, x * s + y * c


def augment_global(points, boxes, flip_x=False, rotation=0.0, scale=1.0, translation=(0.0, 0.0, 0.0)):
    """Apply mirror, rotation about z, scaling and translation to a scene.

    The mirror reflects across the x-axis (y -> -y, theta -> -theta). The
    transforms run in that order to both points and boxes.
    """
    if not scale > 0:
        raise ValueError("scale must be positive")
    pts = np.array(points, dtype=np.float64).reshape(-1, 4)
    out_boxes = []
    if flip_x:
        pts[:, 1] = -pts[:, 1]
    pts[:, 0], pts[:, 1] = _rotate_xy(pts[:, 0], pts[:, 1], rotation)
    pts[:, :3] *= scale
    pts[:, :3] += np.asarray(translation, dtype=np.float64)
    for b in boxes:
        x, y, th = b.x, b.y, b.theta
        if flip_x:
            y, th = -y, -th
        x, y = _rotate_xy(x, y, rotation)
        out_boxes.append(RotatedBox(x * scale + translation[0], y * scale + translation[1],
                                    b.w * scale, b.l * scale, th + rotation))
    return pts, out_boxes


def perturb_object(points, box, rotation=0.0, translation=(0.0, 0.0, 0.0)):
    """Rotate/translate one object and the points inside it about its center."""
    pts = np.array(points, dtype=np.float64).reshape(-1, 4)
    inside = contains_points(box, pts)
    dx, dy = _rotate_xy(pts[inside, 0] - box.x, pts[inside, 1] - box.y, rotation)
    pts[inside, 0] = box.x + dx + translation[0]
    pts[inside, 1] = box.y + dy + translation[1]
    pts[inside, 2] += translation[2]
    moved = RotatedBox(box.x + translation[0], box.y + translation[1], box.w, box.l, box.theta + rotation)
    return pts, moved
