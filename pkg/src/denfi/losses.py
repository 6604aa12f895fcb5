"""DBPM losses, each returning its value together with analytic gradients."""
from dataclasses import dataclass, field

import numpy as np

PROB_EPS = 1e-7
LOG_CLAMP = 10.0


@dataclass(frozen=True)
class LossWeights:
    lambda_b: float = 1.0
    lambda_theta: float = 1.0
    lambda_D: float = 1.0
    lambda_joint: float = 0.5
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    giou: bool = False

    def __post_init__(self):
        for name in ("lambda_b", "lambda_theta", "lambda_D", "lambda_joint", "focal_alpha", "focal_gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class LossResult:
    value: float
    gradients: dict = field(default_factory=dict)
    grad_scale: float = 0.0

    def __getitem__(self, key):
        return self.gradients[key]


def focal_terms(p, y, alpha=0.25, gamma=2.0):
    """Elementwise binary focal loss and its derivative w.r.t. ``p``.

    ``y`` is a boolean array of positives. Probabilities are clamped to
    [1e-7, 1 - 1e-7]; the derivative is zero strictly outside that range.
    """
    pc = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    pt = np.where(y, pc, 1.0 - pc)
    at = np.where(y, alpha, 1.0 - alpha)
    q = 1.0 - pt
    log_pt = np.log(pt)
    loss = -at * q ** gamma * log_pt
    if gamma == 0:
        dpt = -at / pt
    else:
        dpt = at * (gamma * q ** (gamma - 1.0) * log_pt - q ** gamma / pt)
    grad = np.where(y, dpt, -dpt)
    grad = np.where((p >= PROB_EPS) & (p <= 1.0 - PROB_EPS), grad, 0.0)
    return loss, grad


def focal_loss(scores, class_target, weights=LossWeights()):
    """Sigmoid focal loss over non-ignore pixels, normalized by max(N_pos, 1).

    ``scores`` is HxWxK (channel k holds class k+1); ``class_target`` is HxW.
    """
    scores = np.asarray(scores, dtype=np.float64)
    class_target = np.asarray(class_target)
    if scores.ndim != 3 or scores.shape[:2] != class_target.shape:
        raise ValueError(f"scores {scores.shape} incompatible with targets {class_target.shape}")
    k = scores.shape[2]
    y = class_target[..., None] == np.arange(1, k + 1)
    valid = (class_target >= 0)[..., None]
    norm = max(int(np.count_nonzero(class_target > 0)), 1)
    loss, grad = focal_terms(scores, y, weights.focal_alpha, weights.focal_gamma)
    value = float(np.sum(loss * valid)) / norm
    return LossResult(value, {"scores": grad * valid / norm})


def _iou_parts(pred, target):
    """Forward pieces of the boundary IoU shared by loss and gradient."""
    p = np.exp(pred)
    t = np.exp(target)
    mins = np.minimum(p, t)
    inter_w = mins[..., 0] + mins[..., 2]
    inter_h = mins[..., 1] + mins[..., 3]
    inter = inter_w * inter_h
    area_p = (p[..., 0] + p[..., 2]) * (p[..., 1] + p[..., 3])
    area_t = (t[..., 0] + t[..., 2]) * (t[..., 1] + t[..., 3])
    union = area_p + area_t - inter
    return p, t, inter_w, inter_h, inter, area_p, union


def iou_loss_terms(pred, target, giou=False):
    """Vectorized ``1 - IoU`` over (..., 4) log boundary vectors.

    Returns the per-vector loss and its gradient w.r.t. ``pred``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.clip(np.asarray(target, dtype=np.float64), -LOG_CLAMP, LOG_CLAMP)
    active = np.abs(pred) < LOG_CLAMP
    pred = np.clip(pred, -LOG_CLAMP, LOG_CLAMP)
    p, t, iw, ih, inter, area_p, union = _iou_parts(pred, target)
    iou = inter / union
    less = p < t
    # d inter / d p_k
    d_inter = np.stack([less[..., 0] * ih, less[..., 1] * iw, less[..., 2] * ih, less[..., 3] * iw], axis=-1)
    d_area = np.stack(
        [p[..., 1] + p[..., 3], p[..., 0] + p[..., 2], p[..., 1] + p[..., 3], p[..., 0] + p[..., 2]], axis=-1
    )
    d_union = d_area - d_inter
    d_iou = (d_inter * union[..., None] - inter[..., None] * d_union) / (union ** 2)[..., None]
    loss = 1.0 - iou
    d_loss = -d_iou
    if giou:
        maxs = np.maximum(p, t)
        ew = maxs[..., 0] + maxs[..., 2]
        eh = maxs[..., 1] + maxs[..., 3]
        enclose = ew * eh
        loss = loss + (enclose - union) / enclose
        more = ~less
        d_enc = np.stack([more[..., 0] * eh, more[..., 1] * ew, more[..., 2] * eh, more[..., 3] * ew], axis=-1)
        # d/dp of (E - U)/E = 1 - U/E
        d_loss = d_loss - (d_union * enclose[..., None] - union[..., None] * d_enc) / (enclose ** 2)[..., None]
    return loss, d_loss * p * active


def iou_loss(pred, target, giou=False):
    """``1 - IoU`` between two log-domain boundary vectors (BoundaryVector or arrays)."""
    pv = np.asarray(pred.as_tuple() if hasattr(pred, "as_tuple") else pred, dtype=np.float64)
    tv = np.asarray(target.as_tuple() if hasattr(target, "as_tuple") else target, dtype=np.float64)
    loss, grad = iou_loss_terms(pv, tv, giou)
    return LossResult(float(loss), {"pred": grad})


def _log_softmax(logits):
    m = np.max(logits, axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def cross_entropy_terms(logits, target):
    """Vectorized cross entropy over the last axis; ``target`` holds bin indices."""
    logp = _log_softmax(logits)
    loss = -np.take_along_axis(logp, target[..., None], axis=-1)[..., 0]
    grad = np.exp(logp)
    np.put_along_axis(grad, target[..., None], np.take_along_axis(grad, target[..., None], axis=-1) - 1.0, axis=-1)
    return loss, grad


def cross_entropy(logits, target):
    logits = np.asarray(logits, dtype=np.float64)
    n = logits.shape[-1]
    if not 0 <= target < n:
        raise ValueError(f"target {target} outside [0, {n})")
    loss, grad = cross_entropy_terms(logits, np.asarray(target))
    return LossResult(float(loss), {"logits": grad})


def smooth_l1_terms(pred, target, beta=1.0):
    d = np.asarray(pred, dtype=np.float64) - target
    small = np.abs(d) < beta
    loss = np.where(small, 0.5 * d * d / beta, np.abs(d) - 0.5 * beta)
    grad = np.where(small, d / beta, np.sign(d))
    return loss, grad


def smooth_l1(pred, target):
    loss, grad = smooth_l1_terms(pred, target)
    return LossResult(float(loss), {"pred": float(grad)})


def orientation_loss(bin_logits, residuals, target):
    """Bin cross entropy plus smooth-L1 on the target bin's residual."""
    bin_logits = np.asarray(bin_logits, dtype=np.float64)
    residuals = np.asarray(residuals, dtype=np.float64)
    if bin_logits.shape != (target.n,) or residuals.shape != (target.n,):
        raise ValueError(f"expected {target.n} logits and residuals")
    ce = cross_entropy(bin_logits, target.bin)
    sl = smooth_l1(residuals[target.bin], target.residual)
    g_res = np.zeros(target.n)
    g_res[target.bin] = sl.gradients["pred"]
    return LossResult(ce.value + sl.value, {"bin_logits": ce.gradients["logits"], "residuals": g_res})


def regression_terms(pred, log_boundary, bins, residual, weights=LossWeights()):
    """Vectorized per-pixel regression loss over (M, 4+2n) prediction rows.

    Returns per-row losses and the (M, 4+2n) gradient.
    """
    pred = np.asarray(pred, dtype=np.float64)
    n = (pred.shape[-1] - 4) // 2
    lb, gb = iou_loss_terms(pred[..., :4], log_boundary, weights.giou)
    ce, gce = cross_entropy_terms(pred[..., 4:4 + n], bins)
    res_pred = np.take_along_axis(pred[..., 4 + n:], bins[..., None], axis=-1)[..., 0]
    sl, gsl = smooth_l1_terms(res_pred, residual)
    loss = weights.lambda_b * lb + weights.lambda_theta * (ce + sl)
    grad = np.zeros_like(pred)
    grad[..., :4] = weights.lambda_b * gb
    grad[..., 4:4 + n] = weights.lambda_theta * gce
    g_res = np.zeros(pred.shape[:-1] + (n,))
    np.put_along_axis(g_res, bins[..., None], (weights.lambda_theta * gsl)[..., None], axis=-1)
    grad[..., 4 + n:] = g_res
    return loss, grad


def regression_loss(pred, target_boundary, target_orientation, weights=LossWeights()):
    """Weighted IoU plus orientation loss for one pixel's 4+2n channels."""
    pred = np.asarray(pred, dtype=np.float64)
    n = target_orientation.n
    if pred.shape != (4 + 2 * n,):
        raise ValueError(f"expected {4 + 2 * n} channels, got {pred.shape}")
    tb = np.asarray(target_boundary.as_tuple() if hasattr(target_boundary, "as_tuple") else target_boundary)
    loss, grad = regression_terms(
        pred[None], tb[None], np.array([target_orientation.bin]), np.array([target_orientation.residual]), weights
    )
    return LossResult(float(loss[0]), {"pred": grad[0]})


def continuous_mask(n):
    """Boolean channel mask of the auto-scaled regression channels."""
    mask = np.zeros(4 + 2 * n, dtype=bool)
    mask[:4] = True
    mask[4 + n:] = True
    return mask


def dbpm_loss(scores, reg, targets, scale=1.0, weights=LossWeights()):
    """Focal classification plus auto-scaled regression, both over max(N_pos, 1).

    Gradients are returned for ``scores``, ``reg`` and (as ``grad_scale``)
    the auto-scale scalar.
    """
    reg = np.asarray(reg, dtype=np.float64)
    n = targets.n
    h, w = targets.class_target.shape
    if reg.shape != (h, w, 4 + 2 * n):
        raise ValueError(f"regression map {reg.shape} does not match {(h, w, 4 + 2 * n)}")
    if not scale > 0:
        raise ValueError("scale must be positive")
    cls = focal_loss(scores, targets.class_target, weights)
    norm = max(targets.n_pos, 1)
    cmask = continuous_mask(n)
    factor = np.where(cmask, scale, 1.0)
    grad_reg = np.zeros_like(reg)
    grad_scale = 0.0
    reg_value = 0.0
    pos = targets.positive
    if np.any(pos):
        rows = reg[pos]
        scaled = rows * factor
        loss, g_scaled = regression_terms(
            scaled, targets.log_boundary[pos], targets.bin[pos], targets.residual[pos], weights
        )
        coef = weights.lambda_D / norm
        reg_value = coef * float(np.sum(loss))
        g_scaled = coef * g_scaled
        grad_reg[pos] = g_scaled * factor
        grad_scale = float(np.sum(g_scaled[:, cmask] * rows[:, cmask]))
    return LossResult(
        cls.value + reg_value,
        {"scores": cls.gradients["scores"], "reg": grad_reg},
        grad_scale,
    )


def joint_loss(l_pp, l_dbpm, weights=LossWeights()):
    """``L_pp + lambda * L_dbpm``; DBPM gradients are scaled by lambda."""
    lam = weights.lambda_joint
    value = float(l_pp) + lam * l_dbpm.value
    grads = {k: lam * np.asarray(v) for k, v in l_dbpm.gradients.items()}
    grads["l_pp"] = 1.0
    return LossResult(value, grads, lam * l_dbpm.grad_scale)
