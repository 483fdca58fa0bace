"""Forward and backward kernels for the layers residual networks are built from.

All functions are pure: they take arrays and return arrays plus whatever
cache the matching backward needs. Activations use NCHW layout and
convolution kernels use (out, in, kh, kw). Convolutions have no bias.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError

BN_EPSILON = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class ConvGeometry:
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise ValueError("kernel extents must be positive")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.padding < 0:
            raise ValueError("padding must be >= 0")

    @classmethod
    def square(cls, k, stride=1, padding=None):
        """Square kernel; padding defaults to ``k // 2`` ("same" for odd k)."""
        return cls(k, k, stride, k // 2 if padding is None else padding)

    def output_hw(self, h, w):
        oh = (h + 2 * self.padding - self.kernel_h) // self.stride + 1
        ow = (w + 2 * self.padding - self.kernel_w) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeError(
                f"geometry {self} on {h}x{w} input gives empty output {oh}x{ow}"
            )
        return oh, ow


def _pad(x, p, value=0.0):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=value)


def _windows(xp, geom, oh, ow):
    # (N, C, oh, ow, kh, kw) strided view, no copy
    win = sliding_window_view(xp, (geom.kernel_h, geom.kernel_w), axis=(2, 3))
    s = geom.stride
    return win[:, :, : (oh - 1) * s + 1 : s, : (ow - 1) * s + 1 : s]


def _check_conv(x, kernel):
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(
            f"conv2d expects 4-d input and kernel, got input {x.shape} "
            f"and kernel {kernel.shape}"
        )
    if x.shape[1] != kernel.shape[1]:
        raise ShapeError(
            f"conv2d channel mismatch: input {x.shape} vs kernel {kernel.shape}"
        )


def conv2d_forward(x, kernel, geom):
    _check_conv(x, kernel)
    if kernel.shape[2:] != (geom.kernel_h, geom.kernel_w):
        raise ShapeError(f"kernel {kernel.shape} does not match geometry {geom}")
    oh, ow = geom.output_hw(x.shape[2], x.shape[3])
    if geom.kernel_h == 1 and geom.kernel_w == 1 and geom.padding == 0:
        xs = x[:, :, :: geom.stride, :: geom.stride]
        return np.einsum("nchw,oc->nohw", xs, kernel[:, :, 0, 0], optimize=True)
    win = _windows(_pad(x, geom.padding), geom, oh, ow)
    out = np.tensordot(win, kernel, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_backward(x, kernel, geom, grad_out):
    """Return ``(grad_input, grad_kernel)`` for :func:`conv2d_forward`."""
    _check_conv(x, kernel)
    oh, ow = geom.output_hw(x.shape[2], x.shape[3])
    expected = (x.shape[0], kernel.shape[0], oh, ow)
    if grad_out.shape != expected:
        raise ShapeError(
            f"grad_output shape {grad_out.shape} != forward output shape {expected}"
        )
    s, p = geom.stride, geom.padding
    if geom.kernel_h == 1 and geom.kernel_w == 1 and p == 0:
        xs = x[:, :, ::s, ::s]
        gk = np.einsum("nohw,nchw->oc", grad_out, xs, optimize=True)
        gx = np.zeros_like(x)
        gx[:, :, ::s, ::s] = np.einsum(
            "nohw,oc->nchw", grad_out, kernel[:, :, 0, 0], optimize=True
        )
        return gx, gk[:, :, None, None]

    win = _windows(_pad(x, p), geom, oh, ow)
    gk = np.tensordot(grad_out, win, axes=([0, 2, 3], [0, 2, 3]))

    n, c, h, w = x.shape
    gxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=x.dtype)
    # (N, oh, ow, C, kh, kw)
    cols = np.tensordot(grad_out, kernel, axes=([1], [0]))
    for i in range(geom.kernel_h):
        for j in range(geom.kernel_w):
            gxp[:, :, i : i + s * (oh - 1) + 1 : s, j : j + s * (ow - 1) + 1 : s] += (
                cols[..., i, j].transpose(0, 3, 1, 2)
            )
    gx = gxp[:, :, p : p + h, p : p + w] if p else gxp
    return np.ascontiguousarray(gx), gk


@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def fresh(cls, channels, dtype=np.float32):
        return cls(np.zeros(channels, dtype), np.ones(channels, dtype))


def batchnorm_forward(x, scale, shift, running, train=True,
                      eps=BN_EPSILON, momentum=BN_MOMENTUM):
    """Spatial batch normalization over (N, H, W) per channel.

    Returns ``(out, running, cache)``. In train mode the running statistics
    are updated by an exponential moving average (unbiased variance) and a
    new :class:`RunningStats` is returned; in eval mode they are used as-is.
    """
    if x.ndim != 4 or scale.shape != (x.shape[1],) or shift.shape != scale.shape:
        raise ShapeError(
            f"batchnorm shapes: input {x.shape}, scale {scale.shape}, "
            f"shift {shift.shape}"
        )
    axes = (0, 2, 3)
    m = x.shape[0] * x.shape[2] * x.shape[3]
    if train:
        if m < 2:
            raise ValueError(
                f"train-mode batchnorm needs N*H*W >= 2 per channel, got {m}"
            )
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running = RunningStats(
            (1 - momentum) * running.mean + momentum * mean,
            (1 - momentum) * running.var + momentum * var * (m / (m - 1)),
        )
    else:
        mean, var = running.mean, running.var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = xhat * scale[None, :, None, None] + shift[None, :, None, None]
    cache = (xhat, inv_std, scale, train)
    return out.astype(x.dtype, copy=False), running, cache


def batchnorm_backward(cache, grad_out):
    """Return ``(grad_input, grad_scale, grad_shift)``."""
    xhat, inv_std, scale, train = cache
    if grad_out.shape != xhat.shape:
        raise ShapeError(
            f"grad_output shape {grad_out.shape} != input shape {xhat.shape}"
        )
    axes = (0, 2, 3)
    g_shift = grad_out.sum(axis=axes)
    g_scale = (grad_out * xhat).sum(axis=axes)
    g_xhat = grad_out * scale[None, :, None, None]
    k = inv_std[None, :, None, None]
    if not train:
        return g_xhat * k, g_scale, g_shift
    m = xhat.shape[0] * xhat.shape[2] * xhat.shape[3]
    gx = (k / m) * (
        m * g_xhat
        - g_xhat.sum(axis=axes, keepdims=True)
        - xhat * (g_xhat * xhat).sum(axis=axes, keepdims=True)
    )
    return gx, g_scale, g_shift


def relu(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    # subgradient at exactly 0 is 0
    return grad_out * (x > 0)


def max_pool(x, window, stride, padding=0):
    """Max pooling; returns ``(out, cache)``. Padding cells are never selected."""
    geom = ConvGeometry(window, window, stride, padding)
    oh, ow = geom.output_hw(x.shape[2], x.shape[3])
    xp = _pad(x, padding, value=-np.inf)
    win = _windows(xp, geom, oh, ow)
    flat = win.reshape(*win.shape[:4], window * window)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, geom, arg)


def max_pool_backward(cache, grad_out):
    shape, geom, arg = cache
    n, c, h, w = shape
    oh, ow = arg.shape[2:]
    p, s, k = geom.padding, geom.stride, geom.kernel_w
    gxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=grad_out.dtype)
    rows = (np.arange(oh) * s)[None, None, :, None] + arg // k
    cols = (np.arange(ow) * s)[None, None, None, :] + arg % k
    nn_, cc = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
    np.add.at(
        gxp,
        (nn_[:, :, None, None], cc[:, :, None, None], rows, cols),
        grad_out,
    )
    return gxp[:, :, p : p + h, p : p + w]


def avg_pool_global(x):
    return x.mean(axis=(2, 3))


def avg_pool_global_backward(shape, grad_out):
    h, w = shape[2], shape[3]
    return np.broadcast_to(
        grad_out[:, :, None, None] / (h * w), shape
    ).astype(grad_out.dtype)


def linear_forward(x, weight, bias):
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} vs weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} vs weight {weight.shape}")
    return x @ weight.T + bias


def linear_backward(x, weight, grad_out):
    """Return ``(grad_input, grad_weight, grad_bias)``."""
    return grad_out @ weight, grad_out.T @ x, grad_out.sum(axis=0)


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels {labels.shape} vs logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return float(loss), grad / n


def dropout(x, rate, rng, train=True):
    """Inverted dropout. Returns ``(out, mask)``; mask is None when inactive."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x, None
    mask = rng.random(x.shape) >= rate
    return x * mask / (1.0 - rate), mask


def dropout_backward(grad_out, mask, rate):
    if mask is None:
        return grad_out
    return grad_out * mask / (1.0 - rate)
