import functools
import math

import numpy as np
import pytest

from denfi import _backend
from denfi.geom import RotatedBox


def random_box(rng, spread=2.0, lo=0.5, hi=5.0):
    return RotatedBox(rng.uniform(-spread, spread), rng.uniform(-spread, spread), rng.uniform(lo, hi),
                      rng.uniform(lo, hi), rng.uniform(-np.pi, np.pi))


@functools.lru_cache(maxsize=4)
def _stratified_unit(per_side, seed=0):
    """One jittered sample per cell of a per_side x per_side grid over [-1/2, 1/2]^2."""
    rng = np.random.default_rng(seed)
    k = np.arange(per_side)
    uu, vv = np.meshgrid(k, k, indexing="ij")
    u = ((uu + rng.random(uu.shape)) / per_side - 0.5).astype(np.float32).ravel()
    v = ((vv + rng.random(vv.shape)) / per_side - 0.5).astype(np.float32).ravel()
    return u, v


def mc_iou(a, b, per_side=1000, seed=0):
    """Stratified Monte-Carlo IoU from per_side**2 samples laid over box ``a``."""
    u, v = _stratified_unit(per_side, seed)
    ca, sa = math.cos(a.theta), math.sin(a.theta)
    cb, sb = math.cos(b.theta), math.sin(b.theta)
    # sample -> world -> local frame of b, folded into one affine map
    cu = u * np.float32(a.l * (ca * cb + sa * sb)) + v * np.float32(a.w * (sa * cb - ca * sb) * -1.0)
    cu += np.float32((a.x - b.x) * cb + (a.y - b.y) * sb)
    cv = u * np.float32(a.l * (sa * cb - ca * sb)) + v * np.float32(a.w * (ca * cb + sa * sb))
    cv += np.float32(-(a.x - b.x) * sb + (a.y - b.y) * cb)
    inside = (np.abs(cu) <= np.float32(b.l / 2)) & (np.abs(cv) <= np.float32(b.w / 2))
    inter = np.count_nonzero(inside) / u.size * a.area
    return inter / (a.area + b.area - inter)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


BACKENDS = ["python"] + (["compiled"] if _backend.compiled is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance check; echoed in the terminal summary."""
    def record(label, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
