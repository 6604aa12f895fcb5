"""Top-down SVG rendering of lidar scenes with ground truth and detections."""
from dataclasses import dataclass

import numpy as np

from .geom import box_corners
from .kitti import Difficulty

DIFFICULTY_COLORS = {
    Difficulty.EASY: "green",
    Difficulty.MODERATE: "lightblue",
    Difficulty.HARD: "red",
    Difficulty.IGNORED: "gray",
}
DETECTION_COLOR = "orange"
POINT_COLOR = "gray"


@dataclass(frozen=True)
class Canvas:
    """Maps BEV meters to SVG pixels; SVG y grows downward, so BEV y is flipped."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    scale: float = 10.0

    @property
    def size(self):
        return (self.x_max - self.x_min) * self.scale, (self.y_max - self.y_min) * self.scale

    def to_px(self, xy):
        xy = np.asarray(xy, dtype=np.float64)
        return np.stack([(xy[..., 0] - self.x_min) * self.scale, (self.y_max - xy[..., 1]) * self.scale], axis=-1)


def _extent(points, boxes, margin=2.0):
    xs, ys = [], []
    if len(points):
        xs += [points[:, 0].min(), points[:, 0].max()]
        ys += [points[:, 1].min(), points[:, 1].max()]
    for b in boxes:
        c = box_corners(b)
        xs += [c[:, 0].min(), c[:, 0].max()]
        ys += [c[:, 1].min(), c[:, 1].max()]
    if not xs:
        return 0.0, 1.0, 0.0, 1.0
    return min(xs) - margin, max(xs) + margin, min(ys) - margin, max(ys) + margin


def _polygon(canvas, box, color):
    pts = " ".join(f"{px:.3f},{py:.3f}" for px, py in canvas.to_px(box_corners(box)))
    return f'<polygon points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'


def render_svg(points=None, gt_boxes=(), detections=(), canvas=None, point_radius=0.6):
    """SVG 1.1 text of a BEV scene.

    ``gt_boxes`` holds ``(RotatedBox, Difficulty)`` pairs, ``detections``
    RotatedBoxes or DetectionRecords. Ground truth is colored by difficulty
    (green / light blue / red), detections orange, points gray.
    """
    pts = np.zeros((0, 2)) if points is None else np.asarray(points, dtype=np.float64).reshape(len(points), -1)
    gt_boxes = list(gt_boxes)
    dets = [getattr(d, "box", d) for d in detections]
    if canvas is None:
        canvas = Canvas(*_extent(pts, [b for b, _ in gt_boxes] + dets))
    width, height = canvas.size
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.3f}" height="{height:.3f}" '
        f'viewBox="0 0 {width:.3f} {height:.3f}">',
        f'<rect x="0" y="0" width="{width:.3f}" height="{height:.3f}" fill="white"/>',
        '<g id="points">',
    ]
    if len(pts):
        for px, py in canvas.to_px(pts[:, :2]):
            out.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="{point_radius}" fill="{POINT_COLOR}"/>')
    out.append("</g>")
    out.append('<g id="ground-truth">')
    out += [_polygon(canvas, b, DIFFICULTY_COLORS[Difficulty(d)]) for b, d in gt_boxes]
    out.append("</g>")
    out.append('<g id="detections">')
    out += [_polygon(canvas, b, DETECTION_COLOR) for b in dets]
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
