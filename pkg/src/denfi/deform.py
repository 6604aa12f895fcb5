"""Convolution primitives, deformable convolution and the boundary-aware DENFIConv.

Tensors are numpy float64 arrays in HxWxC layout. Convolution weights are
FxFxCinxCout, depthwise weights FxFxC. All convolutions are stride 1 with
same zero padding.

Offset maps hold ``F*F*2`` channels in tap-major order: for tap
``t = a*F + b`` (kernel row ``a``, column ``b``) channel ``2t`` is the row
displacement and ``2t + 1`` the column displacement, in pixels.
"""
import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _backend

GENERATOR_HIDDEN = 64
PROPOSAL_CHANNELS = 5


def _as3(x, name="input"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"{name} must be HxWxC, got shape {x.shape}")
    return x


def _check_weights(x, weights):
    if weights.ndim != 4 or weights.shape[0] != weights.shape[1] or weights.shape[0] % 2 == 0:
        raise ValueError(f"weights must be FxFxCinxCout with odd F, got {weights.shape}")
    if weights.shape[2] != x.shape[2]:
        raise ValueError(f"weights expect {weights.shape[2]} input channels, input has {x.shape[2]}")


def _patches(x, k):
    pad = (k - 1) // 2
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    # (H, W, C, F, F) -> (H, W, F, F, C)
    return sliding_window_view(xp, (k, k), axis=(0, 1)).transpose(0, 1, 3, 4, 2)


def conv2d(x, weights, bias=None):
    """Same-size 2-D cross-correlation with zero padding."""
    x = _as3(x)
    weights = np.asarray(weights, dtype=np.float64)
    _check_weights(x, weights)
    k = weights.shape[0]
    if k == 1:
        out = x @ weights[0, 0]
    else:
        out = np.tensordot(_patches(x, k), weights, axes=([2, 3, 4], [0, 1, 2]))
    if bias is not None:
        out = out + bias
    return out


def conv2d_backward(x, weights, grad_out):
    """Gradients of :func:`conv2d` w.r.t. input, weights and bias."""
    x = _as3(x)
    weights = np.asarray(weights, dtype=np.float64)
    k = weights.shape[0]
    if k == 1:
        gw = np.tensordot(x, grad_out, axes=([0, 1], [0, 1]))[None, None]
        gx = grad_out @ weights[0, 0].T
    else:
        gw = np.tensordot(_patches(x, k), grad_out, axes=([0, 1], [0, 1]))
        # full correlation with the flipped kernel
        flipped = weights[::-1, ::-1].transpose(0, 1, 3, 2)
        gx = np.tensordot(_patches(grad_out, k), flipped, axes=([2, 3, 4], [0, 1, 2]))
    return gx, gw, grad_out.sum(axis=(0, 1))


class BilinearSample(NamedTuple):
    value: float
    d_row: float
    d_col: float
    taps: tuple  # ((row, col), weight) for the four integer neighbours


def bilinear_sample(feature, row, col, channel=0):
    """Bilinear interpolation of ``feature[..., channel]`` at a real coordinate.

    Out-of-bounds neighbours read as zero. Coordinate derivatives are the
    one-sided (floor-cell) derivatives at integer positions.
    """
    feature = _as3(feature, "feature")
    h, w = feature.shape[:2]
    r0, c0 = math.floor(row), math.floor(col)
    fr, fc = row - r0, col - c0

    def at(r, c):
        if 0 <= r < h and 0 <= c < w:
            return float(feature[r, c, channel])
        return 0.0

    v00, v01, v10, v11 = at(r0, c0), at(r0, c0 + 1), at(r0 + 1, c0), at(r0 + 1, c0 + 1)
    weights = ((1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc)
    value = weights[0] * v00 + weights[1] * v01 + weights[2] * v10 + weights[3] * v11
    d_row = (1 - fc) * (v10 - v00) + fc * (v11 - v01)
    d_col = (1 - fr) * (v01 - v00) + fr * (v11 - v10)
    taps = tuple(zip(((r0, c0), (r0, c0 + 1), (r0 + 1, c0), (r0 + 1, c0 + 1)), weights))
    return BilinearSample(value, d_row, d_col, taps)


def _check_offsets(x, offsets, k):
    offsets = np.asarray(offsets, dtype=np.float64)
    if offsets.shape != x.shape[:2] + (k * k * 2,):
        raise ValueError(f"offsets must be {x.shape[:2] + (k * k * 2,)}, got {offsets.shape}")
    return offsets


def deform_conv2d(x, weights, offsets, bias=None, backend=None):
    """Deformable convolution: every kernel tap samples at its base position plus offset."""
    x = _as3(x)
    weights = np.asarray(weights, dtype=np.float64)
    _check_weights(x, weights)
    k = weights.shape[0]
    offsets = _check_offsets(x, offsets, k)
    cols = _backend.get(backend).deform_im2col(x, offsets, k)
    h, w = x.shape[:2]
    out = cols.reshape(h * w, -1) @ weights.reshape(-1, weights.shape[3])
    out = out.reshape(h, w, -1)
    if bias is not None:
        out = out + bias
    return out


def deform_conv2d_backward(x, weights, offsets, grad_out, backend=None):
    """Reverse-mode gradients ``(grad_input, grad_weights, grad_offsets, grad_bias)``."""
    x = _as3(x)
    weights = np.asarray(weights, dtype=np.float64)
    _check_weights(x, weights)
    k = weights.shape[0]
    offsets = _check_offsets(x, offsets, k)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    h, w, c = x.shape
    cout = weights.shape[3]
    if grad_out.shape != (h, w, cout):
        raise ValueError(f"upstream gradient must be {(h, w, cout)}, got {grad_out.shape}")
    kern = _backend.get(backend)
    cols = kern.deform_im2col(x, offsets, k)
    g2 = grad_out.reshape(h * w, cout)
    grad_w = (cols.reshape(h * w, -1).T @ g2).reshape(weights.shape)
    grad_cols = (g2 @ weights.reshape(-1, cout).T).reshape(h, w, k * k, c)
    grad_x, grad_off = kern.deform_col2im(grad_cols, x, offsets, k)
    return grad_x, grad_w, grad_off, g2.sum(axis=0)


def depthwise_conv2d(x, weights):
    """Per-channel FxF convolution with FxFxC weights."""
    x = _as3(x)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 3 or weights.shape[2] != x.shape[2] or weights.shape[0] % 2 == 0:
        raise ValueError(f"depthwise weights must be FxFxC (odd F), got {weights.shape}")
    return np.einsum("hwabc,abc->hwc", _patches(x, weights.shape[0]), weights)


def depthwise_conv2d_backward(x, weights, grad_out):
    x = _as3(x)
    k = weights.shape[0]
    gw = np.einsum("hwabc,hwc->abc", _patches(x, k), grad_out)
    gx = np.einsum("hwabc,abc->hwc", _patches(grad_out, k), weights[::-1, ::-1])
    return gx, gw


def _check_pointwise(pw):
    pw = np.asarray(pw, dtype=np.float64)
    if pw.ndim == 2:
        pw = pw[None, None]
    if pw.shape[:2] != (1, 1):
        raise ValueError(f"pointwise weights must be 1x1xCxCout, got {pw.shape}")
    return pw


def dsdc(x, dw_weights, pw_weights, offsets, backend=None):
    """Depth-wise separable deformable convolution.

    A 3x3 depthwise convolution followed by a 1x1 deformable convolution whose
    single tap is displaced by the HxWx2 ``offsets``.
    """
    pw = _check_pointwise(pw_weights)
    mid = depthwise_conv2d(x, dw_weights)
    return deform_conv2d(mid, pw, offsets, backend=backend)


def dsdc_backward(x, dw_weights, pw_weights, offsets, grad_out, backend=None):
    """Gradients ``(grad_input, grad_dw, grad_pw, grad_offsets)`` of :func:`dsdc`."""
    pw = _check_pointwise(pw_weights)
    mid = depthwise_conv2d(x, dw_weights)
    g_mid, g_pw, g_off, _ = deform_conv2d_backward(mid, pw, offsets, grad_out, backend=backend)
    g_x, g_dw = depthwise_conv2d_backward(x, np.asarray(dw_weights, dtype=np.float64), g_mid)
    return g_x, g_dw, g_pw.reshape(np.shape(pw_weights)), g_off


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def dbpm_forward(feature, cls_weights, reg_weights, cls_bias=None, reg_bias=None):
    """DBPM head: sigmoid scores (HxWxK) and raw regression map (HxWx(4+2n)).

    The auto-scale scalar is applied downstream, by the loss and the decoder.
    """
    feature = _as3(feature, "feature")
    scores = sigmoid(conv2d(feature, _check_pointwise(cls_weights), cls_bias))
    reg = conv2d(feature, _check_pointwise(reg_weights), reg_bias)
    if (reg.shape[2] - 4) % 2 or reg.shape[2] < 6:
        raise ValueError(f"regression channels must be 4 + 2n with n >= 1, got {reg.shape[2]}")
    return scores, reg


@dataclass
class DenfiConvParams:
    """Weights of one DENFIConv block.

    The offset generator is ``1x1 conv (5 -> hidden) -> ReLU -> 1x1 conv
    (hidden -> F*F*2)``. With ``dw`` set the block is DSDC (F = 1); with
    ``dw=None`` ``deform`` holds FxFxCxCout weights of a plain deformable conv.
    """

    gen_w1: np.ndarray
    gen_b1: np.ndarray
    gen_w2: np.ndarray
    gen_b2: np.ndarray
    deform: np.ndarray
    dw: Optional[np.ndarray] = None
    log_space: bool = False

    @property
    def kernel(self):
        return self.deform.shape[0]

    def copy(self):
        return replace(self, **{k: np.array(getattr(self, k)) for k in
                                ("gen_w1", "gen_b1", "gen_w2", "gen_b2", "deform")},
                       dw=None if self.dw is None else np.array(self.dw))


def init_denficonv(in_channels, out_channels, rng=None, kernel=1, hidden=GENERATOR_HIDDEN, log_space=False):
    """Random DENFIConv weights with the final generator layer zeroed."""
    rng = np.random.default_rng(rng)
    taps = kernel * kernel * 2
    w1 = rng.normal(0.0, math.sqrt(2.0 / PROPOSAL_CHANNELS), (1, 1, PROPOSAL_CHANNELS, hidden))
    if kernel == 1:
        dw = rng.normal(0.0, 1.0 / 3.0, (3, 3, in_channels))
        deform = rng.normal(0.0, math.sqrt(1.0 / in_channels), (1, 1, in_channels, out_channels))
    else:
        dw = None
        deform = rng.normal(0.0, math.sqrt(1.0 / (kernel * kernel * in_channels)),
                            (kernel, kernel, in_channels, out_channels))
    return DenfiConvParams(w1, np.zeros(hidden), np.zeros((1, 1, hidden, taps)), np.zeros(taps),
                           deform, dw, log_space)


def _generator_input(proposal, log_space):
    proposal = _as3(proposal, "proposal")
    if proposal.shape[2] != PROPOSAL_CHANNELS:
        raise ValueError(f"boundary proposal must have 5 channels, got {proposal.shape[2]}")
    if not log_space:
        return proposal
    out = proposal.copy()
    out[..., :4] = np.log(proposal[..., :4])
    return out


def offset_from_proposal(proposal, params):
    """Offset map generated by the 1x1 conv stack over the boundary proposal."""
    inp = _generator_input(proposal, params.log_space)
    hidden = np.maximum(conv2d(inp, params.gen_w1, params.gen_b1), 0.0)
    return conv2d(hidden, params.gen_w2, params.gen_b2)


def denficonv(feature, proposal, params, backend=None):
    """Refine ``feature`` with a deformable conv steered by the boundary proposal."""
    feature = _as3(feature, "feature")
    offsets = offset_from_proposal(proposal, params)
    if params.dw is not None:
        return dsdc(feature, params.dw, params.deform, offsets, backend=backend)
    return deform_conv2d(feature, params.deform, offsets, backend=backend)


def denficonv_backward(feature, proposal, params, grad_out, detach_proposal=False, backend=None):
    """Gradients of :func:`denficonv` for the feature, proposal and every weight.

    Returns a dict keyed ``feature``, ``proposal`` (None when detached) and the
    :class:`DenfiConvParams` field names.
    """
    feature = _as3(feature, "feature")
    inp = _generator_input(proposal, params.log_space)
    pre = conv2d(inp, params.gen_w1, params.gen_b1)
    hidden = np.maximum(pre, 0.0)
    offsets = conv2d(hidden, params.gen_w2, params.gen_b2)
    grads = {}
    if params.dw is not None:
        g_feat, g_dw, g_def, g_off = dsdc_backward(feature, params.dw, params.deform, offsets, grad_out, backend)
        grads["dw"] = g_dw
    else:
        g_feat, g_def, g_off, _ = deform_conv2d_backward(feature, params.deform, offsets, grad_out, backend)
        grads["dw"] = None
    grads["feature"] = g_feat
    grads["deform"] = g_def
    g_hidden, grads["gen_w2"], grads["gen_b2"] = conv2d_backward(hidden, params.gen_w2, g_off)
    g_pre = g_hidden * (pre > 0)
    g_inp, grads["gen_w1"], grads["gen_b1"] = conv2d_backward(inp, params.gen_w1, g_pre)
    if detach_proposal:
        grads["proposal"] = None
    else:
        if params.log_space:
            g_inp = g_inp.copy()
            g_inp[..., :4] = g_inp[..., :4] / np.asarray(proposal)[..., :4]
        grads["proposal"] = g_inp
    return grads


def flop_count(c_in, c_out, h, w, variant):
    """Multiply-accumulate count of one deformable layer.

    ``DC3x3``: vanilla 3x3 deformable conv, 9 taps x 4 bilinear neighbours per
    input channel plus the 9*Cin*Cout kernel. ``DSDC``: 3x3 depthwise, one
    bilinear tap per channel and the 1x1 Cin*Cout kernel.
    """
    if min(c_in, c_out, h, w) <= 0:
        raise ValueError("dimensions must be positive")
    if variant == "DC3x3":
        per_pixel = 9 * c_in * c_out + 9 * 4 * c_in
    elif variant == "DSDC":
        per_pixel = 9 * c_in + c_in * c_out + 4 * c_in
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return h * w * per_pixel
