"""Functional layer math. Forward passes return (output, cache); backward
passes consume the cache and return input/parameter gradients."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from histodense.errors import ShapeError, ValidationError


def _check_nchw(x: np.ndarray, name: str = "input") -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4D (N, C, H, W), got shape {x.shape}")


# ---------------------------------------------------------------- conv2d

def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int = 1, padding: int = 0):
    """Cross-correlation of x (N,C,H,W) with w (F,C,kh,kw).

    Output spatial dims are floor((H + 2p - k) / s) + 1.
    """
    _check_nchw(x)
    if w.ndim != 4:
        raise ShapeError(f"weights must be 4D (F, C, kh, kw), got shape {w.shape}")
    n, c, h, width = x.shape
    f, wc, kh, kw = w.shape
    if wc != c:
        raise ShapeError(f"channel mismatch: input has {c}, weights expect {wc}")
    if h + 2 * padding < kh or width + 2 * padding < kw:
        raise ShapeError(
            f"kernel {kh}x{kw} does not fit input {h}x{width} with padding {padding}"
        )
    x_pad = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(x_pad, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    y = np.einsum("nchwkl,fckl->nfhw", windows, w, optimize=True)
    cache = (x_pad, w, stride, padding, x.shape)
    return np.ascontiguousarray(y), cache


def conv2d_backward(dy: np.ndarray, cache):
    """Gradients (dx, dw) of conv2d_forward."""
    x_pad, w, stride, padding, x_shape = cache
    f, c, kh, kw = w.shape
    n, _, ho, wo = dy.shape
    windows = sliding_window_view(x_pad, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    dw = np.einsum("nfhw,nchwkl->fckl", dy, windows, optimize=True)

    dx_pad = np.zeros_like(x_pad)
    dcols = np.einsum("nfhw,fckl->nchwkl", dy, w, optimize=True)
    for k in range(kh):
        for l in range(kw):
            dx_pad[:, :, k : k + stride * ho : stride, l : l + stride * wo : stride] += (
                dcols[:, :, :, :, k, l]
            )
    if padding:
        dx = dx_pad[:, :, padding:-padding, padding:-padding]
    else:
        dx = dx_pad
    return np.ascontiguousarray(dx), dw


# ------------------------------------------------------------ batchnorm2d

def batchnorm2d_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
    num_batches_tracked: int = 0,
):
    """Per-channel batch normalization over (N, H, W).

    Train mode normalizes with batch statistics (biased variance) and
    blends them into the running stats in place with the given momentum.
    Eval mode uses the running stats and requires at least one prior
    train-mode step (or loaded stats), otherwise raises.
    Returns (y, cache, num_batches_tracked).
    """
    _check_nchw(x)
    if train:
        mu = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
        num_batches_tracked += 1
    else:
        if num_batches_tracked == 0:
            raise ValidationError(
                "eval-mode batchnorm needs initialized running stats; "
                "run a training step or load a checkpoint first"
            )
        mu = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu[None, :, None, None]) * inv_std[None, :, None, None]
    y = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    cache = (xhat, inv_std, gamma, train)
    return y, cache, num_batches_tracked


def batchnorm2d_backward(dy: np.ndarray, cache):
    """Gradients (dx, dgamma, dbeta) of batchnorm2d_forward."""
    xhat, inv_std, gamma, train = cache
    dgamma = np.einsum("nchw,nchw->c", dy, xhat)
    dbeta = dy.sum(axis=(0, 2, 3))
    scale = (gamma * inv_std)[None, :, None, None]
    if not train:
        return dy * scale, dgamma, dbeta
    m = dy.shape[0] * dy.shape[2] * dy.shape[3]
    dx = scale * (
        dy
        - dbeta[None, :, None, None] / m
        - xhat * dgamma[None, :, None, None] / m
    )
    return dx, dgamma, dbeta


# ------------------------------------------------------------ activations

def relu_forward(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy: np.ndarray, mask: np.ndarray):
    return dy * mask


# ----------------------------------------------------------------- pooling

def maxpool2d_forward(x: np.ndarray, kernel: int = 3, stride: int = 2, padding: int = 1):
    """Max pooling; ties resolve to the first window position (row-major)."""
    _check_nchw(x)
    n, c, h, w = x.shape
    x_pad = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                   constant_values=-np.inf)
    windows = sliding_window_view(x_pad, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = windows.shape[2], windows.shape[3]
    flat = windows.reshape(n, c, ho, wo, kernel * kernel)
    arg = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    cache = (arg, x.shape, kernel, stride, padding)
    return np.ascontiguousarray(y), cache


def maxpool2d_backward(dy: np.ndarray, cache):
    arg, x_shape, kernel, stride, padding = cache
    n, c, h, w = x_shape
    dx_pad = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=dy.dtype)
    ho, wo = dy.shape[2], dy.shape[3]
    ky, kx = np.divmod(arg, kernel)
    oy = np.arange(ho)[None, None, :, None] * stride
    ox = np.arange(wo)[None, None, None, :] * stride
    rows = (oy + ky).ravel()
    cols = (ox + kx).ravel()
    ni = np.repeat(np.arange(n), c * ho * wo)
    ci = np.tile(np.repeat(np.arange(c), ho * wo), n)
    np.add.at(dx_pad, (ni, ci, rows, cols), dy.ravel())
    if padding:
        return dx_pad[:, :, padding:-padding, padding:-padding]
    return dx_pad


def avgpool2x2_forward(x: np.ndarray):
    """2x2 average pooling with stride 2; spatial dims must be even."""
    _check_nchw(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avgpool2x2 needs even spatial dims, got {h}x{w}")
    y = x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    return y, x.shape


def avgpool2x2_backward(dy: np.ndarray, x_shape):
    scaled = dy * np.asarray(0.25, dtype=dy.dtype)
    return np.repeat(np.repeat(scaled, 2, axis=2), 2, axis=3)


def global_avgpool_forward(x: np.ndarray):
    """Mean over H and W, returning (N, C)."""
    _check_nchw(x)
    return x.mean(axis=(2, 3)), x.shape


def global_avgpool_backward(dy: np.ndarray, x_shape):
    n, c, h, w = x_shape
    return np.broadcast_to(dy[:, :, None, None] / (h * w), x_shape).astype(dy.dtype, copy=True)


# ------------------------------------------------------------------ linear

def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """x (N, D) @ w.T (D, F) + b."""
    if x.ndim != 2:
        raise ShapeError(f"linear input must be 2D (N, D), got shape {x.shape}")
    if w.shape[1] != x.shape[1]:
        raise ShapeError(f"feature mismatch: input has {x.shape[1]}, weights expect {w.shape[1]}")
    return x @ w.T + b, (x, w)


def linear_backward(dy: np.ndarray, cache):
    x, w = cache
    return dy @ w, dy.T @ x, dy.sum(axis=0)


# -------------------------------------------------------------------- loss

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch and the logit gradient.

    Returns (loss, dlogits, probs); dlogits = (softmax - onehot) / N.
    """
    if logits.ndim != 2:
        raise ShapeError(f"logits must be 2D (N, K), got shape {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise ValidationError("non-finite logits")
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"labels must have shape ({n},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValidationError(f"labels must be in 0..{k - 1}")

    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsumexp - z[np.arange(n), labels]))
    probs = softmax(logits)
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits.astype(logits.dtype, copy=False), probs
