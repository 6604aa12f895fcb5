"""KITTI label / calibration I/O, BEV conversion and difficulty tiers.

BEV frame: x = camera x (right), y = camera z (forward). A camera-frame
``rotation_y`` maps to the BEV heading ``-rotation_y``, which keeps the box
length along the object's driving direction.
"""
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Optional

import numpy as np

from .geom import RotatedBox, normalize_angle


class FormatError(ValueError):
    pass


class Difficulty(IntEnum):
    EASY = 0
    MODERATE = 1
    HARD = 2
    IGNORED = 3


# (min 2D height px, max occlusion, max truncation), from the KITTI devkit
DIFFICULTY_LIMITS = {
    Difficulty.EASY: (40.0, 0, 0.15),
    Difficulty.MODERATE: (25.0, 1, 0.30),
    Difficulty.HARD: (25.0, 2, 0.50),
}


@dataclass(frozen=True)
class KittiLabel:
    category: str
    truncation: float
    occlusion: int
    alpha: float
    bbox2d: tuple
    dims: tuple  # (h, w, l)
    location: tuple  # (x, y, z), rectified camera frame
    rotation_y: float
    score: Optional[float] = None

    @property
    def height_px(self):
        return self.bbox2d[3] - self.bbox2d[1]


def _fmt(v):
    return f"{v:.6f}"


def parse_labels(text, source="<labels>"):
    labels = []
    for lineno, line in enumerate(text.splitlines(), 1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) not in (15, 16):
            raise FormatError(f"{source}:{lineno}: expected 15 or 16 fields, got {len(fields)}")
        try:
            vals = [float(v) for v in fields[1:]]
        except ValueError as exc:
            raise FormatError(f"{source}:{lineno}: {exc}") from None
        labels.append(KittiLabel(
            fields[0], vals[0], int(vals[1]), vals[2], tuple(vals[3:7]), tuple(vals[7:10]),
            tuple(vals[10:13]), vals[13], vals[14] if len(vals) == 15 else None,
        ))
    return labels


def format_label(label):
    parts = [label.category, _fmt(label.truncation), str(label.occlusion), _fmt(label.alpha)]
    parts += [_fmt(v) for v in label.bbox2d]
    parts += [_fmt(v) for v in label.dims]
    parts += [_fmt(v) for v in label.location]
    parts.append(_fmt(label.rotation_y))
    if label.score is not None:
        parts.append(_fmt(label.score))
    return " ".join(parts)


def write_detections(labels):
    """Canonical text for labels; a 16th score column is written when present."""
    return "".join(format_label(lb) + "\n" for lb in labels)


def read_label_file(path):
    with open(path) as fh:
        return parse_labels(fh.read(), str(path))


@dataclass(frozen=True)
class CalibRecord:
    velo_to_cam: np.ndarray  # (3, 4)
    rect: np.ndarray  # (3, 3)

    def __post_init__(self):
        err = np.abs(self.rect.T @ self.rect - np.eye(3)).max()
        if err >= 1e-3:
            raise FormatError(f"R0_rect is not orthonormal (error {err:.2e})")

    def velo_to_rect(self, points):
        """Map (..., 3) velodyne points into the rectified camera frame."""
        pts = np.asarray(points, dtype=np.float64)
        homo = np.concatenate([pts[..., :3], np.ones(pts.shape[:-1] + (1,))], axis=-1)
        return homo @ self.velo_to_cam.T @ self.rect.T


def parse_calib(text, source="<calib>"):
    rows = {}
    for line in text.splitlines():
        if ":" not in line:
            continue
        key, _, rest = line.partition(":")
        try:
            rows[key.strip()] = np.array([float(v) for v in rest.split()])
        except ValueError as exc:
            raise FormatError(f"{source}: bad row {key.strip()!r}: {exc}") from None
    missing = [k for k in ("Tr_velo_to_cam", "R0_rect") if k not in rows]
    if missing:
        raise FormatError(f"{source}: missing {', '.join(missing)}")
    tr, r0 = rows["Tr_velo_to_cam"], rows["R0_rect"]
    if tr.size != 12 or r0.size != 9:
        raise FormatError(f"{source}: Tr_velo_to_cam needs 12 values and R0_rect 9")
    return CalibRecord(tr.reshape(3, 4), r0.reshape(3, 3))


def label_to_bev(label):
    x, _, z = label.location
    _, w, l = label.dims
    return RotatedBox(x, z, w, l, normalize_angle(-label.rotation_y))


def bev_to_label(box, category="Car", score=None, template=None):
    """Inverse of :func:`label_to_bev`; non-BEV fields come from ``template``."""
    ry = normalize_angle(-box.theta)
    if template is None:
        template = KittiLabel(category, 0.0, 0, 0.0, (0.0, 0.0, 50.0, 50.0), (1.5, box.w, box.l),
                              (box.x, 0.0, box.y), ry)
    h = template.dims[0]
    y = template.location[1]
    return replace(template, dims=(h, box.w, box.l), location=(box.x, y, box.y), rotation_y=ry, score=score)


def difficulty_of(label):
    """Easiest devkit tier whose height/occlusion/truncation limits the label meets."""
    for tier in (Difficulty.EASY, Difficulty.MODERATE, Difficulty.HARD):
        min_h, max_occ, max_trunc = DIFFICULTY_LIMITS[tier]
        if label.height_px >= min_h and label.occlusion <= max_occ and label.truncation <= max_trunc:
            return tier
    return Difficulty.IGNORED
