import math

import numpy as np
import pytest

from denfi import _backend
from denfi.deform import (bilinear_sample, conv2d, conv2d_backward, dbpm_forward, deform_conv2d,
                          deform_conv2d_backward, denficonv, denficonv_backward, depthwise_conv2d,
                          depthwise_conv2d_backward, dsdc, flop_count, init_denficonv, offset_from_proposal)
from denfi.gradcheck import numeric_grad, rel_error, run_suite


def naive_sample(x, r, c):
    """Bilinear read with zero outside the map, written out corner by corner."""
    h, w, ch = x.shape
    r0, c0 = math.floor(r), math.floor(c)
    out = np.zeros(ch)
    for dr in (0, 1):
        for dc in (0, 1):
            rr, cc = r0 + dr, c0 + dc
            wt = (1 - abs(r - rr)) * (1 - abs(c - cc))
            if 0 <= rr < h and 0 <= cc < w:
                out += wt * x[rr, cc]
    return out


def naive_deform(x, weights, offsets):
    h, w, _ = x.shape
    k = weights.shape[0]
    pad = k // 2
    out = np.zeros((h, w, weights.shape[3]))
    for i in range(h):
        for j in range(w):
            for a in range(k):
                for b in range(k):
                    t = a * k + b
                    r = i - pad + a + offsets[i, j, 2 * t]
                    c = j - pad + b + offsets[i, j, 2 * t + 1]
                    out[i, j] += naive_sample(x, r, c) @ weights[a, b]
    return out


def naive_conv(x, weights):
    return naive_deform(x, weights, np.zeros(x.shape[:2] + (weights.shape[0] ** 2 * 2,)))


class TestPlainConv:
    @pytest.mark.parametrize("k", [1, 3, 5])
    def test_conv_matches_loop(self, rng, k):
        x = rng.normal(size=(5, 6, 3))
        w = rng.normal(size=(k, k, 3, 2))
        np.testing.assert_allclose(conv2d(x, w), naive_conv(x, w), atol=1e-12)

    def test_conv_backward(self, rng):
        x = rng.normal(size=(4, 5, 2))
        w = rng.normal(size=(3, 3, 2, 3))
        up = rng.normal(size=(4, 5, 3))
        gx, gw, gb = conv2d_backward(x, w, up)
        f = lambda: float(np.sum(conv2d(x, w) * up))  # noqa: E731
        assert rel_error(gx, numeric_grad(f, x)) < 1e-8
        assert rel_error(gw, numeric_grad(f, w)) < 1e-8
        np.testing.assert_allclose(gb, up.sum(axis=(0, 1)))

    def test_depthwise(self, rng):
        x = rng.normal(size=(5, 5, 4))
        dw = rng.normal(size=(3, 3, 4))
        full = np.zeros((3, 3, 4, 4))
        for c in range(4):
            full[:, :, c, c] = dw[:, :, c]
        np.testing.assert_allclose(depthwise_conv2d(x, dw), conv2d(x, full), atol=1e-12)
        up = rng.normal(size=(5, 5, 4))
        gx, gdw = depthwise_conv2d_backward(x, dw, up)
        f = lambda: float(np.sum(depthwise_conv2d(x, dw) * up))  # noqa: E731
        assert rel_error(gx, numeric_grad(f, x)) < 1e-8
        assert rel_error(gdw, numeric_grad(f, dw)) < 1e-8

    def test_rejects_even_kernel(self, rng):
        with pytest.raises(ValueError):
            conv2d(np.zeros((3, 3, 1)), np.zeros((2, 2, 1, 1)))


class TestBilinear:
    def test_integer_position(self, rng):
        x = rng.normal(size=(4, 4, 1))
        assert bilinear_sample(x, 2.0, 1.0).value == x[2, 1, 0]

    def test_midpoint_and_zero_padding(self):
        x = np.ones((2, 2, 1))
        assert bilinear_sample(x, 0.5, 0.5).value == pytest.approx(1.0)
        assert bilinear_sample(x, -0.5, 0.0).value == pytest.approx(0.5)
        assert bilinear_sample(x, 10.0, 10.0).value == 0.0

    def test_derivatives(self, rng):
        x = rng.normal(size=(5, 5, 1))
        s = bilinear_sample(x, 1.3, 2.6)
        h = 1e-6
        assert s.d_row == pytest.approx((bilinear_sample(x, 1.3 + h, 2.6).value
                                         - bilinear_sample(x, 1.3 - h, 2.6).value) / (2 * h), rel=1e-6)
        assert s.d_col == pytest.approx((bilinear_sample(x, 1.3, 2.6 + h).value
                                         - bilinear_sample(x, 1.3, 2.6 - h).value) / (2 * h), rel=1e-6)
        assert sum(wt for _, wt in s.taps) == pytest.approx(1.0)


class TestDeformable:
    def test_matches_loop(self, rng, backend):
        x = rng.normal(size=(5, 6, 3))
        w = rng.normal(size=(3, 3, 3, 2))
        off = rng.normal(0, 1.5, (5, 6, 18))
        np.testing.assert_allclose(deform_conv2d(x, w, off, backend=backend), naive_deform(x, w, off), atol=1e-12)

    def test_zero_offsets_is_conv(self, rng, backend):
        x = rng.normal(size=(7, 6, 4))
        w = rng.normal(size=(3, 3, 4, 5))
        b = rng.normal(size=5)
        out = deform_conv2d(x, w, np.zeros((7, 6, 18)), b, backend=backend)
        assert np.max(np.abs(out - conv2d(x, w, b))) < 1e-9

    def test_integer_shift(self, rng, backend):
        x = rng.normal(size=(5, 5, 1))
        w = np.ones((1, 1, 1, 1))
        off = np.zeros((5, 5, 2))
        off[..., 1] = 1.0
        out = deform_conv2d(x, w, off, backend=backend)
        np.testing.assert_allclose(out[:, :4, 0], x[:, 1:, 0])
        np.testing.assert_allclose(out[:, 4, 0], 0.0)

    def test_backward_matches_loop_gradient(self, rng, backend):
        x = rng.normal(size=(4, 4, 2))
        w = rng.normal(size=(3, 3, 2, 2))
        off = rng.uniform(-1.4, 1.4, (4, 4, 18))
        off += np.where(np.abs(off - np.round(off)) < 0.05, 0.1, 0.0)
        up = rng.normal(size=(4, 4, 2))
        gx, gw, goff, gb = deform_conv2d_backward(x, w, off, up, backend=backend)
        f = lambda: float(np.sum(naive_deform(x, w, off) * up))  # noqa: E731
        assert rel_error(gx, numeric_grad(f, x)) < 1e-7
        assert rel_error(gw, numeric_grad(f, w)) < 1e-7
        assert rel_error(goff, numeric_grad(f, off)) < 1e-6
        np.testing.assert_allclose(gb, up.sum(axis=(0, 1)))

    @pytest.mark.skipif(_backend.compiled is None, reason="compiled kernels not built")
    def test_backends_agree(self, rng):
        x = rng.normal(size=(6, 7, 3))
        w = rng.normal(size=(3, 3, 3, 4))
        off = rng.normal(0, 2, (6, 7, 18))
        up = rng.normal(size=(6, 7, 4))
        np.testing.assert_allclose(deform_conv2d(x, w, off, backend="python"),
                                   deform_conv2d(x, w, off, backend="compiled"), atol=1e-12)
        for a, b in zip(deform_conv2d_backward(x, w, off, up, backend="python"),
                        deform_conv2d_backward(x, w, off, up, backend="compiled")):
            np.testing.assert_allclose(a, b, atol=1e-11)

    def test_offset_shape_checked(self):
        with pytest.raises(ValueError):
            deform_conv2d(np.zeros((3, 3, 1)), np.zeros((3, 3, 1, 1)), np.zeros((3, 3, 2)))


class TestDenfiConv:
    def test_zero_init_equals_plain_dsdc(self, rng, backend):
        params = init_denficonv(4, 3, rng)
        feature = rng.normal(size=(6, 6, 4))
        proposal = np.concatenate([rng.uniform(0.5, 3, (6, 6, 4)), rng.uniform(-3, 3, (6, 6, 1))], axis=-1)
        assert not offset_from_proposal(proposal, params).any()
        expected = dsdc(feature, params.dw, params.deform, np.zeros((6, 6, 2)), backend=backend)
        assert np.array_equal(denficonv(feature, proposal, params, backend=backend), expected)

    def test_kernel3_variant(self, rng):
        params = init_denficonv(2, 2, rng, kernel=3, hidden=8)
        assert params.dw is None and params.gen_w2.shape == (1, 1, 8, 18)
        feature = rng.normal(size=(4, 4, 2))
        proposal = np.ones((4, 4, 5))
        np.testing.assert_allclose(denficonv(feature, proposal, params), conv2d(feature, params.deform), atol=1e-12)

    def test_detached_proposal(self, rng):
        params = init_denficonv(2, 2, rng, hidden=4)
        feature = rng.normal(size=(3, 3, 2))
        proposal = np.ones((3, 3, 5))
        grads = denficonv_backward(feature, proposal, params, np.ones((3, 3, 2)), detach_proposal=True)
        assert grads["proposal"] is None and grads["gen_w1"].shape == params.gen_w1.shape

    def test_bad_proposal(self, rng):
        params = init_denficonv(2, 2, rng, hidden=4)
        with pytest.raises(ValueError):
            denficonv(np.zeros((3, 3, 2)), np.ones((3, 3, 4)), params)


def test_dbpm_forward(rng):
    feat = rng.normal(size=(4, 4, 6))
    scores, reg = dbpm_forward(feat, rng.normal(size=(1, 1, 6, 2)), rng.normal(size=(1, 1, 6, 28)))
    assert scores.shape == (4, 4, 2) and reg.shape == (4, 4, 28)
    assert np.all((scores > 0) & (scores < 1))
    with pytest.raises(ValueError):
        dbpm_forward(feat, rng.normal(size=(1, 1, 6, 2)), rng.normal(size=(1, 1, 6, 5)))


class TestFlops:
    def test_closed_form(self):
        c, h, w = 384, 64, 64
        assert flop_count(c, c, h, w, "DC3x3") == h * w * (9 * c * c + 36 * c)
        assert flop_count(c, c, h, w, "DSDC") == h * w * (c * c + 13 * c)
        ratio = flop_count(c, c, h, w, "DC3x3") / flop_count(c, c, h, w, "DSDC")
        assert ratio == pytest.approx((9 * c + 36) / (c + 13))

    def test_errors(self):
        with pytest.raises(ValueError):
            flop_count(1, 1, 1, 1, "DC5x5")
        with pytest.raises(ValueError):
            flop_count(0, 1, 1, 1, "DSDC")


@pytest.mark.parametrize("suite", ["deform_conv2d", "dsdc", "denficonv"])
def test_gradients_quick(suite):
    assert run_suite(suite, instances=5, seed=3).passed


def test_backend_env_forces_fallback():
    import os
    import subprocess
    import sys

    env = dict(os.environ, DENFI_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", "from denfi import _backend; print(_backend.name)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
