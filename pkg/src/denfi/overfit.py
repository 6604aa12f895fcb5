"""Single-box gradient-descent demo for the DBPM losses.

The score map is optimized directly as probabilities with projected
gradient descent (projection onto the [1e-7, 1 - 1e-7] clamp range); the
regression map and the auto-scale scalar take plain gradient steps.
"""
from dataclasses import dataclass, field

import numpy as np

from .geom import RotatedBox, rotated_iou
from .losses import PROB_EPS, LossWeights, dbpm_loss
from .targets import AssignConfig, GridSpec, build_target_maps, decode_proposal, proposal_to_box

SCENE_GRID = GridSpec(16, 16, 0.0, 0.0, 1.0)
SCENE_BOX = RotatedBox(8.5, 8.5, 2.0, 4.0, 0.3)


@dataclass
class OverfitResult:
    losses: list
    final_loss: float
    ious: list
    scale: float
    n_pos: int
    history: list = field(default_factory=list)

    @property
    def min_iou(self):
        return min(self.ious) if self.ious else 0.0


def run_overfit(steps=2000, lr=0.05, box=SCENE_BOX, grid=SCENE_GRID, cfg=None, n=12,
                weights=LossWeights(), log_every=0):
    cfg = cfg or AssignConfig(0.3, 0.5, 1)
    targets = build_target_maps([(box, 1)], grid, cfg, n)
    h, w = grid.height, grid.width
    scores = np.zeros((h, w, cfg.num_classes))
    reg = np.zeros((h, w, 4 + 2 * n))
    scale = 1.0
    trajectory = []
    for step in range(steps + 1):
        scores = np.clip(scores, PROB_EPS, 1.0 - PROB_EPS)
        out = dbpm_loss(scores, reg, targets, scale, weights)
        trajectory.append(out.value)
        if log_every and step % log_every == 0:
            print(f"step {step:5d}  loss {out.value:.6f}  scale {scale:.4f}")
        if step == steps:
            break
        scores = scores - lr * out["scores"]
        reg = reg - lr * out["reg"]
        scale = max(scale - lr * out.grad_scale, 1e-6)
    proposal = decode_proposal(reg, scale, n)
    ious = [rotated_iou(proposal_to_box(proposal[i, j], grid.pixel_center(i, j)), box)
            for i, j in zip(*np.nonzero(targets.positive))]
    return OverfitResult(trajectory, trajectory[-1], ious, scale, targets.n_pos)
