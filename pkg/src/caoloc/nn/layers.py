"""Layers with hand-written backward passes.

Arrays are numpy float64 throughout. Internally activations are NHWC
``(batch, height, width, channels)`` so im2col patches need one copy and
GEMM outputs need none; 1-D signals use ``height == 1``. The public
:func:`conv_forward` / :func:`conv_backward` pair takes the usual
channel-first layout and converts at the boundary.
Every layer keeps the cache of its last forward call, so ``backward`` must
follow the matching ``forward``.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-6
BN_MOMENTUM = 0.9


def _pair(v):
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def same_padding(size, k, stride):
    """(before, after) zero padding so the output has ``ceil(size / stride)`` samples."""
    out = math.ceil(size / stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def _as_4d(x, w):
    """Lift unbatched and/or 1-D channel-first inputs to NHWC."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    one_d = w.ndim == 3
    if w.ndim not in (3, 4):
        raise ValueError(f"kernel must be (out, in, k) or (out, in, kh, kw), got shape {w.shape}")
    spatial = 1 if one_d else 2
    batched = x.ndim == spatial + 2
    if x.ndim not in (spatial + 1, spatial + 2):
        raise ValueError(f"input shape {x.shape} does not fit kernel shape {w.shape}")
    if x.shape[-spatial - 1] != w.shape[1]:
        raise ValueError(
            f"input shape {x.shape} has {x.shape[-spatial - 1]} channels but kernel shape {w.shape} expects {w.shape[1]}"
        )
    if not batched:
        x = x[None]
    if one_d:
        x = x[:, :, None, :]
        w = w[:, :, None, :]
    return np.moveaxis(x, 1, -1), w, one_d, batched


def _strides(stride, one_d):
    if one_d and not isinstance(stride, (tuple, list)):
        return 1, int(stride)
    return _pair(stride)


def _im2col(xp, kh, kw, sh, sw):
    """Patches of a padded NHWC input as rows of a (B*Ho*Wo, C*kh*kw) matrix."""
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
    B, Ho, Wo = win.shape[:3]
    return win.reshape(B * Ho * Wo, -1), (B, Ho, Wo)


def _correlate(xp, w4, sh, sw):
    """Valid cross-correlation of a padded NHWC input with an (O, C, kh, kw) kernel."""
    O, _, kh, kw = w4.shape
    cols, (B, Ho, Wo) = _im2col(xp, kh, kw, sh, sw)
    return (cols @ w4.reshape(O, -1).T).reshape(B, Ho, Wo, O)


def conv2d_nhwc(x, w4, b, stride):
    """'Same'-padded convolution on NHWC data. Returns ``(out, cache)``."""
    sh, sw = stride
    _, H, W, _ = x.shape
    _, _, kh, kw = w4.shape
    ph = same_padding(H, kh, sh)
    pw = same_padding(W, kw, sw)
    xp = np.pad(x, ((0, 0), ph, pw, (0, 0)))
    out = _correlate(xp, w4, sh, sw)
    if b is not None:
        out += b
    # the padded input is cached rather than its patch matrix, which is kh*kw times larger
    return out, (xp, w4, (sh, sw), ph, pw, (H, W), b is not None)


def conv2d_nhwc_backward(g, cache):
    """The input gradient is the full correlation of the stride-dilated
    output gradient with the flipped kernel."""
    xp, w4, (sh, sw), ph, pw, (H, W), has_bias = cache
    B, Hp, Wp, _ = xp.shape
    O, C, kh, kw = w4.shape
    Ho = (Hp - kh) // sh + 1
    Wo = (Wp - kw) // sw + 1
    if g.shape != (B, Ho, Wo, O):
        raise ValueError(f"gradient shape {g.shape} does not match forward output shape {(B, Ho, Wo, O)}")
    gb = g.sum(axis=(0, 1, 2)) if has_bias else None
    g2 = g.reshape(-1, O)
    gw = (g2.T @ _im2col(xp, kh, kw, sh, sw)[0]).reshape(w4.shape)
    if sh == 1 and sw == 1:
        gd = np.pad(g, ((0, 0), (kh - 1, Hp - Ho), (kw - 1, Wp - Wo), (0, 0)))
    else:
        gd = np.zeros((B, Hp + kh - 1, Wp + kw - 1, O))
        gd[:, kh - 1 : kh - 1 + (Ho - 1) * sh + 1 : sh, kw - 1 : kw - 1 + (Wo - 1) * sw + 1 : sw] = g
    w_flip = np.ascontiguousarray(w4[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    dxp = _correlate(gd, w_flip, 1, 1)
    return dxp[:, ph[0] : ph[0] + H, pw[0] : pw[0] + W], gw, gb


def conv_forward(x, w, b=None, stride=1, padding="same"):
    """Cross-correlation with zero 'same' padding, channel-first layout.

    ``x`` is ``(C, L)``, ``(B, C, L)``, ``(C, H, W)`` or ``(B, C, H, W)``;
    ``w`` is ``(O, C, K)`` for 1-D or ``(O, C, kh, kw)`` for 2-D. An integer
    stride applies to the time axis for 1-D and to both axes for 2-D.
    Returns ``(out, cache)``.
    """
    if padding != "same":
        raise ValueError(f"only 'same' padding is supported, got {padding!r}")
    x4, w4, one_d, batched = _as_4d(x, w)
    b = None if b is None else np.asarray(b, dtype=np.float64)
    out, cache = conv2d_nhwc(x4, w4, b, _strides(stride, one_d))
    out = np.moveaxis(out, -1, 1)
    if one_d:
        out = out[:, :, 0, :]
    if not batched:
        out = out[0]
    return np.ascontiguousarray(out), (cache, one_d, batched)


def conv_backward(grad_out, cache):
    """Gradients ``(grad_input, grad_kernel, grad_bias)`` for :func:`conv_forward`."""
    inner, one_d, batched = cache
    g = np.asarray(grad_out, dtype=np.float64)
    if not batched:
        g = g[None]
    if one_d:
        g = g[:, :, None, :]
    if g.ndim != 4:
        raise ValueError(f"gradient shape {np.shape(grad_out)} does not match the forward output")
    dx, gw, gb = conv2d_nhwc_backward(np.moveaxis(g, 1, -1), inner)
    dx = np.moveaxis(dx, -1, 1)
    if one_d:
        dx = dx[:, :, 0, :]
        gw = gw[:, :, 0, :]
    if not batched:
        dx = dx[0]
    return np.ascontiguousarray(dx), gw, gb


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train):
    """Per-channel normalisation, channels on the last axis.

    In train mode batch statistics are used and the running statistics are
    updated in place.
    """
    axes = tuple(range(x.ndim - 1))
    if train:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= BN_MOMENTUM
        running_mean += (1 - BN_MOMENTUM) * mean
        running_var *= BN_MOMENTUM
        running_var += (1 - BN_MOMENTUM) * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean) * inv_std
    return gamma * xhat + beta, (xhat, inv_std, gamma, axes, train)


def batchnorm_backward(grad_out, cache):
    xhat, inv_std, gamma, axes, train = cache
    g = grad_out
    dgamma = (g * xhat).sum(axis=axes)
    dbeta = g.sum(axis=axes)
    dxhat = g * gamma
    if not train:
        return dxhat * inv_std, dgamma, dbeta
    n = xhat.size // xhat.shape[-1]
    dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    return dx, dgamma, dbeta


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(grad_out, mask):
    return grad_out * mask


def dense_forward(x, w, b):
    """``x @ w.T + b`` with ``w`` of shape (out, in)."""
    return x @ w.T + b, x


def dense_backward(grad_out, x, w):
    return grad_out @ w, grad_out.T @ x, grad_out.sum(axis=0)


def global_avg_pool_forward(x):
    """Mean over every axis between batch and channels (channels last)."""
    axes = tuple(range(1, x.ndim - 1))
    return x.mean(axis=axes), x.shape


def global_avg_pool_backward(grad_out, shape):
    n = int(np.prod(shape[1:-1]))
    g = grad_out.reshape((shape[0],) + (1,) * (len(shape) - 2) + (shape[-1],)) / n
    return np.broadcast_to(g, shape).copy()


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels, weights=None):
    """Weighted mean cross-entropy over the batch and its gradient.

    ``loss = sum_i w_i * CE_i / B``; ``grad = w_i * (softmax - onehot) / B``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"logits {logits.shape} and labels {labels.shape} do not match")
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    labels = labels.astype(np.intp)
    B = logits.shape[0]
    w = np.ones(B) if weights is None else np.asarray(weights, dtype=np.float64)
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    nll = logsum - z[np.arange(B), labels]
    loss = float((w * nll).sum() / B)
    p = np.exp(z - logsum[:, None])
    p[np.arange(B), labels] -= 1.0
    grad = p * (w[:, None] / B)
    return loss, grad
