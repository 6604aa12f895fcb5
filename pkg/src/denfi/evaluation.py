"""Inference postprocessing and KITTI-style BEV AP40 evaluation.

Simplified devkit semantics: no neighbouring-class leniency (Van vs Car) and
no DontCare regions. Ground truths harder than the evaluated tier (and
IGNORED ones) neither count as misses nor give true positives; detections
matching only such boxes are dropped from the curve.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geom import DetectionRecord, iou_matrix, rotated_nms
from .kitti import Difficulty, difficulty_of, label_to_bev, read_label_file

log = logging.getLogger(__name__)

TOP_K = 1000
SCORE_THRESHOLD = 0.05
NMS_THRESHOLD = 0.01
RECALL_POSITIONS = 40

TP, FP, IGNORED_DET = "tp", "fp", "ignored"
MATCHED, MISSED, IGNORED_GT = "matched", "missed", "ignored"


def postprocess(dets, top_k=TOP_K, score_threshold=SCORE_THRESHOLD, nms_threshold=NMS_THRESHOLD):
    """Top-k by score, drop low scores, then per-class rotated NMS."""
    order = sorted(range(len(dets)), key=lambda k: (-dets[k].score, k))[:top_k]
    kept = [dets[k] for k in order if dets[k].score >= score_threshold]
    out = []
    for cid in sorted({d.class_id for d in kept}):
        group = [d for d in kept if d.class_id == cid]
        out.extend(group[k] for k in rotated_nms(group, nms_threshold))
    out.sort(key=lambda d: -d.score)
    return out


@dataclass
class FrameMatch:
    det_status: list  # per detection, input order
    gt_status: list  # per ground truth, input order


def gt_is_valid(gt_difficulty, level):
    return gt_difficulty != Difficulty.IGNORED and gt_difficulty <= level


def match_frame(det_boxes, det_scores, gt_boxes, gt_difficulties, iou_threshold, level):
    """Greedy score-ordered matching of one class in one frame.

    A detection takes the highest-IoU unmatched valid ground truth at or above
    the threshold (TP). Failing that, overlap with an ignored ground truth
    marks it ignored; otherwise it is a false positive.
    """
    n_det, n_gt = len(det_boxes), len(gt_boxes)
    valid = np.array([gt_is_valid(d, level) for d in gt_difficulties], dtype=bool)
    gt_status = [MISSED if v else IGNORED_GT for v in valid]
    det_status = [FP] * n_det
    if n_det == 0:
        return FrameMatch(det_status, gt_status)
    ious = iou_matrix(det_boxes, gt_boxes) if n_gt else np.zeros((n_det, 0))
    taken = np.zeros(n_gt, dtype=bool)
    for k in sorted(range(n_det), key=lambda k: (-det_scores[k], k)):
        cand = np.where(valid & ~taken & (ious[k] >= iou_threshold), ious[k], -1.0)
        if n_gt and cand.max() >= 0:
            g = int(np.argmax(cand))
            taken[g] = True
            gt_status[g] = MATCHED
            det_status[k] = TP
        elif n_gt and np.any(~valid & (ious[k] >= iou_threshold)):
            det_status[k] = IGNORED_DET
    return FrameMatch(det_status, gt_status)


def precision_recall(scores, is_tp, n_gt):
    """Recall/precision after each detection in descending score order."""
    scores = np.asarray(scores, dtype=np.float64)
    is_tp = np.asarray(is_tp, dtype=bool)
    order = np.argsort(-scores, kind="stable")
    tp = np.cumsum(is_tp[order])
    fp = np.cumsum(~is_tp[order])
    recall = tp / n_gt if n_gt else np.zeros(len(tp))
    precision = tp / np.maximum(tp + fp, 1)
    return recall, precision


def ap40(scores, is_tp, n_gt, positions=RECALL_POSITIONS):
    """Mean interpolated precision at recall levels 1/40, ..., 40/40."""
    if n_gt == 0 or len(scores) == 0:
        return 0.0
    recall, precision = precision_recall(scores, is_tp, n_gt)
    # interpolated precision: best precision at any recall >= r
    interp = np.maximum.accumulate(precision[::-1])[::-1]
    total = 0.0
    for k in range(1, positions + 1):
        reach = np.nonzero(recall >= k / positions - 1e-12)[0]
        if len(reach):
            total += interp[reach[0]]
    return total / positions


@dataclass
class EvalConfig:
    iou_thresholds: dict = field(default_factory=lambda: {"Car": 0.7, "Pedestrian": 0.5, "Cyclist": 0.5})
    classes: tuple = ("Car", "Pedestrian", "Cyclist")
    levels: tuple = (Difficulty.EASY, Difficulty.MODERATE, Difficulty.HARD)
    allow_missing: bool = False

    def __post_init__(self):
        for name, t in self.iou_thresholds.items():
            if not 0 < t <= 1:
                raise ValueError(f"IoU threshold for {name} must lie in (0, 1], got {t}")


class EvaluationError(RuntimeError):
    pass


@dataclass
class EvalResult:
    ap: dict  # (class, Difficulty) -> AP
    mean_ap: dict  # Difficulty -> mAP over evaluated classes
    classes: list
    frames: list
    skipped: list = field(default_factory=list)

    def report(self):
        levels = sorted(self.mean_ap)
        head = "class".ljust(12) + "".join(Difficulty(lv).name.title().rjust(10) for lv in levels)
        lines = [f"BEV AP{RECALL_POSITIONS} ({len(self.frames)} frames)", head]
        for cls in self.classes:
            lines.append(cls.ljust(12) + "".join(f"{100 * self.ap[cls, lv]:10.2f}" for lv in levels))
        lines.append("mAP".ljust(12) + "".join(f"{100 * self.mean_ap[lv]:10.2f}" for lv in levels))
        for frame, reason in self.skipped:
            lines.append(f"skipped {frame}: {reason}")
        return "\n".join(lines)


def evaluate_frames(frames, cfg):
    """Evaluate ``{frame_id: (gt_labels, det_labels)}`` in memory."""
    present = {lb.category for gts, _ in frames.values() for lb in gts}
    classes = [c for c in cfg.classes if c in present]
    ap, mean_ap = {}, {}
    for level in cfg.levels:
        for cls in classes:
            thr = cfg.iou_thresholds[cls]
            scores, flags, n_gt = [], [], 0
            for fid in sorted(frames):
                gts, dets = frames[fid]
                g = [lb for lb in gts if lb.category == cls]
                d = [lb for lb in dets if lb.category == cls]
                m = match_frame([label_to_bev(x) for x in d], [x.score for x in d],
                                [label_to_bev(x) for x in g], [difficulty_of(x) for x in g], thr, level)
                n_gt += sum(s != IGNORED_GT for s in m.gt_status)
                for det, status in zip(d, m.det_status):
                    if status != IGNORED_DET:
                        scores.append(det.score)
                        flags.append(status == TP)
            ap[cls, level] = ap40(scores, flags, n_gt)
        mean_ap[level] = float(np.mean([ap[c, level] for c in classes])) if classes else 0.0
    return EvalResult(ap, mean_ap, classes, sorted(frames))


def evaluate_dataset(det_dir, gt_dir, cfg=None):
    """Evaluate directories of per-frame KITTI label files (``<frame>.txt``)."""
    cfg = cfg or EvalConfig()
    det_dir, gt_dir = Path(det_dir), Path(gt_dir)
    frames, skipped, problems = {}, [], []
    for gt_path in sorted(gt_dir.glob("*.txt")):
        fid = gt_path.stem
        det_path = det_dir / gt_path.name
        if not det_path.exists():
            problems.append((fid, f"missing detection file {det_path}"))
            continue
        frames[fid] = (read_label_file(gt_path), read_label_file(det_path))
    if problems:
        if not cfg.allow_missing:
            raise EvaluationError("; ".join(f"frame {f}: {r}" for f, r in problems))
        for fid, reason in problems:
            log.warning("skipping frame %s: %s", fid, reason)
        skipped = problems
    result = evaluate_frames(frames, cfg)
    result.skipped = skipped
    return result


def records_from_labels(labels, class_ids):
    """DetectionRecords from scored KITTI labels; unknown categories are skipped."""
    out = []
    for lb in labels:
        if lb.category in class_ids and lb.score is not None:
            out.append(DetectionRecord(class_ids[lb.category], label_to_bev(lb), min(max(lb.score, 0.0), 1.0)))
    return out
