"""Wall-clock comparison of vanilla 3x3 deformable conv and DSDC, per kernel backend."""
import time
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from . import _backend
from .deform import deform_conv2d, dsdc, flop_count


@dataclass
class BenchResult:
    backend: str
    dc_seconds: float
    dsdc_seconds: float

    @property
    def speedup(self):
        return self.dc_seconds / self.dsdc_seconds


def _best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def run_bench(channels=384, size=64, repeats=3, seed=0, backends=None):
    """Time one forward pass of each variant, single-threaded, best of ``repeats``."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(size, size, channels))
    w3 = rng.normal(0.0, 0.01, (3, 3, channels, channels))
    off3 = rng.normal(size=(size, size, 18))
    dw = rng.normal(size=(3, 3, channels))
    pw = rng.normal(0.0, 0.05, (1, 1, channels, channels))
    off1 = rng.normal(size=(size, size, 2))
    if backends is None:
        backends = ["compiled", "python"] if _backend.compiled is not None else ["python"]
    results = []
    with threadpool_limits(limits=1):
        for name in backends:
            t_dc = _best_of(lambda: deform_conv2d(x, w3, off3, backend=name), repeats)
            t_ds = _best_of(lambda: dsdc(x, dw, pw, off1, backend=name), repeats)
            results.append(BenchResult(name, t_dc, t_ds))
    return results


def report(channels=384, size=64, repeats=3, seed=0):
    dc = flop_count(channels, channels, size, size, "DC3x3")
    ds = flop_count(channels, channels, size, size, "DSDC")
    lines = [
        f"feature map {size}x{size}x{channels}",
        f"MACs  DC3x3 {dc:,}  DSDC {ds:,}  ratio {dc / ds:.2f}",
    ]
    results = run_bench(channels, size, repeats, seed)
    for r in results:
        lines.append(f"[{r.backend}] DC3x3 {r.dc_seconds * 1e3:.1f} ms  DSDC {r.dsdc_seconds * 1e3:.1f} ms  "
                     f"speedup {r.speedup:.2f}x")
    if len(results) == 2:
        a, b = results
        lines.append(f"compiled vs python: DC3x3 {b.dc_seconds / a.dc_seconds:.2f}x  "
                     f"DSDC {b.dsdc_seconds / a.dsdc_seconds:.2f}x")
    return "\n".join(lines), dc / ds, results
