"""Reference implementations used only by the tests.

Written as plain loops so they share nothing with the vectorized kernels.
"""

import numpy as np


def direct_conv2d(x, w, stride, pad):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, oh, ow), dtype=np.float64)
    for b in range(n):
        for f in range(o):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ch in range(c):
                        for p in range(kh):
                            for q in range(kw):
                                r, s = i * stride + p - pad, j * stride + q - pad
                                if 0 <= r < h and 0 <= s < wd:
                                    acc += x[b, ch, r, s] * w[f, ch, p, q]
                    out[b, f, i, j] = acc
    return out


def direct_max_pool(x, k, stride, pad=0):
    n, c, h, w = x.shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    out = np.empty((n, c, oh, ow))
    for b in range(n):
        for ch in range(c):
            for i in range(oh):
                for j in range(ow):
                    best = -np.inf
                    for p in range(k):
                        for q in range(k):
                            r, s = i * stride + p - pad, j * stride + q - pad
                            if 0 <= r < h and 0 <= s < w:
                                best = max(best, x[b, ch, r, s])
                    out[b, ch, i, j] = best
    return out


def numeric_grad(f, x, eps=1e-4):
    """Central differences of scalar ``f`` w.r.t. every entry of ``x`` (in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return g


def rel_error(a, b):
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return np.abs(a - b).max() / scale
