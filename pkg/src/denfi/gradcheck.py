"""Central finite-difference checks of every analytic gradient.

Each suite draws random small instances, perturbs every input coordinate by
``h = 1e-5`` and compares against the analytic gradient block by block using
the norm-wise relative error ``|a - n| / max(|a|, |n|)``.
"""
import time
from dataclasses import dataclass

import numpy as np

from . import deform, losses
from .geom import RotatedBox
from .targets import AssignConfig, GridSpec, OrientationEncoding, build_target_maps

STEP = 1e-5
TOLERANCE = 1e-4


def numeric_grad(f, x, h=STEP):
    """Central differences of scalar ``f`` w.r.t. every entry of array ``x`` (in place)."""
    x = np.asarray(x)
    g = np.zeros(x.shape)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + h
        fp = f()
        flat[k] = old - h
        fm = f()
        flat[k] = old
        gflat[k] = (fp - fm) / (2.0 * h)
    return g


def rel_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def _fractional(rng, shape, span=1.5):
    """Offsets whose fractional parts avoid bilinear cell edges."""
    return rng.integers(-1, 2, shape) * np.round(span) + rng.uniform(0.1, 0.9, shape) * rng.choice([-1, 1], shape)


def _check_focal(rng):
    h, w, k = rng.integers(2, 5), rng.integers(2, 5), rng.integers(1, 4)
    scores = rng.uniform(0.02, 0.98, (h, w, k))
    target = rng.integers(-1, k + 1, (h, w))
    fn = lambda: losses.focal_loss(scores, target).value  # noqa: E731
    return {"scores": rel_error(losses.focal_loss(scores, target)["scores"], numeric_grad(fn, scores))}


def _random_log_vec(rng):
    return rng.uniform(-1.0, 1.5, 4)


def _check_iou(rng):
    pred, target = _random_log_vec(rng), _random_log_vec(rng)
    giou = bool(rng.integers(0, 2))
    fn = lambda: losses.iou_loss(pred, target, giou).value  # noqa: E731
    return {"pred": rel_error(losses.iou_loss(pred, target, giou)["pred"], numeric_grad(fn, pred))}


def _check_orientation(rng):
    n = int(rng.integers(2, 13))
    logits = rng.normal(0.0, 2.0, n)
    res = rng.uniform(-2.0, 2.0, n)
    target = OrientationEncoding(int(rng.integers(0, n)), float(rng.uniform(-1, 1)), n)
    res_val = lambda: losses.orientation_loss(logits, res, target).value  # noqa: E731
    out = losses.orientation_loss(logits, res, target)
    return {
        "bin_logits": rel_error(out["bin_logits"], numeric_grad(res_val, logits)),
        "residuals": rel_error(out["residuals"], numeric_grad(res_val, res)),
    }


def random_scene(rng, size=6, n=4, classes=2, max_boxes=2):
    grid = GridSpec(size, size, 0.0, 0.0, 1.0)
    boxes = []
    for _ in range(rng.integers(1, max_boxes + 1)):
        boxes.append((RotatedBox(rng.uniform(1, size - 1), rng.uniform(1, size - 1), rng.uniform(2, 5),
                                 rng.uniform(3, 7), rng.uniform(-np.pi, np.pi)), int(rng.integers(1, classes + 1))))
    return build_target_maps(boxes, grid, AssignConfig(0.5, 0.8, classes), n)


def _check_dbpm(rng):
    n, k = 4, 2
    targets = random_scene(rng, n=n, classes=k)
    h, w = targets.class_target.shape
    scores = rng.uniform(0.02, 0.98, (h, w, k))
    reg = rng.normal(0.0, 0.7, (h, w, 4 + 2 * n))
    scale = np.array([rng.uniform(0.5, 1.5)])
    fn = lambda: losses.dbpm_loss(scores, reg, targets, scale[0]).value  # noqa: E731
    out = losses.dbpm_loss(scores, reg, targets, scale[0])
    return {
        "scores": rel_error(out["scores"], numeric_grad(fn, scores)),
        "reg": rel_error(out["reg"], numeric_grad(fn, reg)),
        "scale": rel_error(out.grad_scale, numeric_grad(fn, scale)),
    }


def _check_deform(rng, backend=None):
    h, w, c, cout, k = 4, 5, 2, 2, 3
    x = rng.normal(size=(h, w, c))
    wt = rng.normal(size=(k, k, c, cout))
    off = _fractional(rng, (h, w, k * k * 2))
    up = rng.normal(size=(h, w, cout))
    fn = lambda: float(np.sum(deform.deform_conv2d(x, wt, off, backend=backend) * up))  # noqa: E731
    gx, gw, goff, _ = deform.deform_conv2d_backward(x, wt, off, up, backend=backend)
    return {
        "input": rel_error(gx, numeric_grad(fn, x)),
        "weights": rel_error(gw, numeric_grad(fn, wt)),
        "offsets": rel_error(goff, numeric_grad(fn, off)),
    }


def _check_dsdc(rng, backend=None):
    h, w, c, cout = 5, 5, 3, 2
    x = rng.normal(size=(h, w, c))
    dw = rng.normal(size=(3, 3, c))
    pw = rng.normal(size=(1, 1, c, cout))
    off = _fractional(rng, (h, w, 2))
    up = rng.normal(size=(h, w, cout))
    fn = lambda: float(np.sum(deform.dsdc(x, dw, pw, off, backend=backend) * up))  # noqa: E731
    gx, gdw, gpw, goff = deform.dsdc_backward(x, dw, pw, off, up, backend=backend)
    return {
        "input": rel_error(gx, numeric_grad(fn, x)),
        "dw": rel_error(gdw, numeric_grad(fn, dw)),
        "pw": rel_error(gpw, numeric_grad(fn, pw)),
        "offsets": rel_error(goff, numeric_grad(fn, off)),
    }


def random_denficonv(rng, c=2, cout=2, hidden=4, kernel=1):
    params = deform.init_denficonv(c, cout, rng, kernel=kernel, hidden=hidden)
    # a non-zero final layer so offsets move off the integer lattice
    params.gen_w2[...] = rng.normal(0.0, 0.4, params.gen_w2.shape)
    params.gen_b2[...] = rng.uniform(0.1, 0.9, params.gen_b2.shape)
    params.gen_b1[...] = rng.normal(0.0, 0.5, params.gen_b1.shape)
    return params


KINK_MARGIN = 1e-3


def _near_kink(proposal, params):
    """True when an offset or ReLU input sits close to a non-differentiable point."""
    pre = deform.conv2d(proposal, params.gen_w1, params.gen_b1)
    off = deform.offset_from_proposal(proposal, params)
    return np.abs(pre).min() < KINK_MARGIN or np.abs(off - np.round(off)).min() < KINK_MARGIN


def _check_denficonv(rng, backend=None, detach_proposal=False):
    h, w, c, cout = 4, 4, 2, 2
    while True:
        params = random_denficonv(rng, c, cout, kernel=int(rng.choice([1, 3])))
        proposal = np.concatenate([rng.uniform(0.5, 3.0, (h, w, 4)), rng.uniform(-np.pi, np.pi, (h, w, 1))],
                                  axis=-1)
        if not _near_kink(proposal, params):
            break
    feature = rng.normal(size=(h, w, c))
    up = rng.normal(size=(h, w, cout))
    fn = lambda: float(np.sum(deform.denficonv(feature, proposal, params, backend=backend) * up))  # noqa: E731
    grads = deform.denficonv_backward(feature, proposal, params, up, detach_proposal, backend)
    out = {"feature": rel_error(grads["feature"], numeric_grad(fn, feature))}
    if not detach_proposal:
        out["proposal"] = rel_error(grads["proposal"], numeric_grad(fn, proposal))
    for name in ("gen_w1", "gen_b1", "gen_w2", "gen_b2", "deform", "dw"):
        value = getattr(params, name)
        if value is not None:
            out[name] = rel_error(grads[name], numeric_grad(fn, value))
    return out


SUITES = {
    "focal_loss": _check_focal,
    "iou_loss": _check_iou,
    "orientation_loss": _check_orientation,
    "dbpm_loss": _check_dbpm,
    "deform_conv2d": _check_deform,
    "dsdc": _check_dsdc,
    "denficonv": _check_denficonv,
}


@dataclass
class SuiteResult:
    name: str
    instances: int
    max_error: float
    worst_block: str
    seconds: float
    tolerance: float = TOLERANCE

    @property
    def passed(self):
        return self.max_error <= self.tolerance

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name:<17} instances={self.instances:<3d} max_rel_err={self.max_error:.2e} "
                f"({self.worst_block}) {self.seconds:.2f}s")


def run_suite(name, instances=50, seed=0, tolerance=TOLERANCE, **options):
    check = SUITES[name]
    rng = np.random.default_rng([seed, list(SUITES).index(name)])
    worst, block = 0.0, "-"
    start = time.perf_counter()
    for _ in range(instances):
        for key, err in check(rng, **options).items():
            if err > worst:
                worst, block = err, key
    return SuiteResult(name, instances, worst, block, time.perf_counter() - start, tolerance)


def run_all(instances=50, seed=0, tolerance=TOLERANCE, detach_proposal=False):
    results = []
    for name in SUITES:
        options = {"detach_proposal": True} if detach_proposal and name == "denficonv" else {}
        results.append(run_suite(name, instances, seed, tolerance, **options))
    return results
