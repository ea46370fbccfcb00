"""Vectorised forward/backward primitives on (B, C, T, F) feature maps.

Used by the trainer. Each ``*_forward`` returns ``(out, cache)`` and the
matching ``*_backward`` takes ``(dout, cache)``. Time convolution is causal
(left padding only); frequency padding is symmetric.
"""

import numpy as np


def _pad(x, hist, fpad):
    return np.pad(x, ((0, 0), (0, 0), (hist, 0), (fpad, fpad)))


def conv_forward(x, w, dilation_t=1, dilation_f=1, b=None):
    """Dilated causal 2-D convolution.

    - x: (B, Cin, T, F)
    - w: (Cout, Cin, kt, kf)
    - b: optional (Cout,) bias
    """
    B, cin, T, F = x.shape
    cout, _, kt, kf = w.shape
    hist = (kt - 1) * dilation_t
    fpad = (kf - 1) * dilation_f // 2
    xp = _pad(x, hist, fpad)
    out = np.zeros((B, cout, T, F), dtype=np.result_type(x, w))
    for i in range(kt):
        for j in range(kf):
            xs = xp[:, :, i * dilation_t:i * dilation_t + T, j * dilation_f:j * dilation_f + F]
            out += np.einsum("oc,bctf->botf", w[:, :, i, j], xs, optimize=True)
    if b is not None:
        out += b[None, :, None, None]
    return out, (xp, w, dilation_t, dilation_f, x.shape, b is not None)


def conv_backward(dout, cache):
    """Returns (dx, dw, db); db is None for bias-free convolutions."""
    xp, w, dt, df, xshape, has_bias = cache
    B, cin, T, F = xshape
    cout, _, kt, kf = w.shape
    hist = (kt - 1) * dt
    fpad = (kf - 1) * df // 2
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for i in range(kt):
        for j in range(kf):
            ts = slice(i * dt, i * dt + T)
            fs = slice(j * df, j * df + F)
            dw[:, :, i, j] = np.einsum("botf,bctf->oc", dout, xp[:, :, ts, fs], optimize=True)
            dxp[:, :, ts, fs] += np.einsum("oc,botf->bctf", w[:, :, i, j], dout, optimize=True)
    dx = dxp[:, :, hist:, fpad:fpad + F]
    db = dout.sum(axis=(0, 2, 3)) if has_bias else None
    return dx, dw, db


def depthwise_forward(x, w, dilation_t=1, dilation_f=1):
    """Per-channel dilated causal convolution; w has shape (C, 1, kt, kf)."""
    B, C, T, F = x.shape
    _, _, kt, kf = w.shape
    hist = (kt - 1) * dilation_t
    fpad = (kf - 1) * dilation_f // 2
    xp = _pad(x, hist, fpad)
    out = np.zeros_like(x, dtype=np.result_type(x, w))
    for i in range(kt):
        for j in range(kf):
            xs = xp[:, :, i * dilation_t:i * dilation_t + T, j * dilation_f:j * dilation_f + F]
            out += w[None, :, 0, i, j, None, None] * xs
    return out, (xp, w, dilation_t, dilation_f, x.shape)


def depthwise_backward(dout, cache):
    xp, w, dt, df, xshape = cache
    B, C, T, F = xshape
    _, _, kt, kf = w.shape
    hist = (kt - 1) * dt
    fpad = (kf - 1) * df // 2
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for i in range(kt):
        for j in range(kf):
            ts = slice(i * dt, i * dt + T)
            fs = slice(j * df, j * df + F)
            dw[:, 0, i, j] = np.einsum("bctf,bctf->c", dout, xp[:, :, ts, fs])
            dxp[:, :, ts, fs] += w[None, :, 0, i, j, None, None] * dout
    return dxp[:, :, hist:, fpad:fpad + F], dw


def batchnorm_forward(x, gamma, beta, eps, running=None):
    """Batchnorm over (B, T, F) per channel.

    With ``running=(mean, var)`` the given statistics are used as constants
    (inference behaviour); otherwise the current batch statistics are used.
    """
    if running is None:
        mu = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        frozen = False
    else:
        mu, var = running
        frozen = True
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out, (xhat, gamma, inv_std, frozen, mu, var)


def batchnorm_backward(dout, cache):
    xhat, gamma, inv_std, frozen, _, _ = cache
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    dxhat = dout * gamma[None, :, None, None]
    if frozen:
        return dxhat * inv_std[None, :, None, None], dgamma, dbeta
    n = xhat.shape[0] * xhat.shape[2] * xhat.shape[3]
    s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
    s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
    dx = inv_std[None, :, None, None] / n * (n * dxhat - s1 - xhat * s2)
    return dx, dgamma, dbeta


def relu_forward(x):
    return np.maximum(x, 0), x


def relu_backward(dout, cache):
    return dout * (cache > 0)


def complex_mask_forward(mask, noisy):
    """(B, 2, T, F) complex product; channel 0 is real, 1 imaginary."""
    a, b = mask[:, 0], mask[:, 1]
    c, d = noisy[:, 0], noisy[:, 1]
    return np.stack([a * c - b * d, a * d + b * c], axis=1), noisy


def complex_mask_backward(dout, noisy):
    """Gradient w.r.t. the mask only (the noisy input is data)."""
    gr, gi = dout[:, 0], dout[:, 1]
    c, d = noisy[:, 0], noisy[:, 1]
    return np.stack([gr * c + gi * d, -gr * d + gi * c], axis=1)


def mse_forward(xhat, x):
    """Mean over the batch of the per-utterance spectrogram MSE."""
    B, _, T, F = x.shape
    diff = xhat - x
    return float((diff ** 2).sum() / (B * T * F)), diff


def mse_backward(diff):
    B, _, T, F = diff.shape
    return 2.0 * diff / (B * T * F)
