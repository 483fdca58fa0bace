"""Stateful layer instances bound to registry slots.

A layer instance caches what its backward needs from the most recent
forward. Parameters live in the registry, so two instances bound to the
same slot read the same value and both add into the same gradient.
"""

import numpy as np

from . import ops
from .params import CONV_INIT, ONES, ZEROS, InitSpec


class Layer:
    def forward(self, x, train=True, rng=None):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError


class Conv(Layer):
    """Bias-free 2-d convolution reading its kernel from ``param_id``."""

    def __init__(self, registry, instance_id, param_id, geom):
        self.registry = registry
        self.instance_id = instance_id
        self.param_id = param_id
        self.geom = geom
        registry.bind(instance_id, param_id, "weight")
        shape = registry[param_id].shape
        if shape[2:] != (geom.kernel_h, geom.kernel_w):
            raise ValueError(f"{instance_id}: kernel {shape} vs geometry {geom}")
        self.out_channels, self.in_channels = shape[:2]
        self._x = None

    @classmethod
    def private(cls, registry, name, cin, cout, geom):
        pid = registry.register(
            name, (cout, cin, geom.kernel_h, geom.kernel_w), CONV_INIT, decay=True
        )
        return cls(registry, name, pid, geom)

    @property
    def kernel(self):
        return self.registry[self.param_id].value

    def forward(self, x, train=True, rng=None):
        self._x = x
        return ops.conv2d_forward(x, self.kernel, self.geom)

    def backward(self, grad):
        gx, gk = ops.conv2d_backward(self._x, self.kernel, self.geom, grad)
        self.registry.accumulate_grad(self.param_id, gk)
        return gx


class BatchNorm(Layer):
    """Per-instance scale/shift (never shared) and running statistics."""

    def __init__(self, registry, name, channels):
        self.registry = registry
        self.name = name
        self.scale_id = registry.register(f"{name}.scale", (channels,), ONES)
        self.shift_id = registry.register(f"{name}.shift", (channels,), ZEROS)
        registry.bind(name, self.scale_id, "scale")
        registry.bind(name, self.shift_id, "shift")
        registry.register_buffer(f"{name}.running_mean", np.zeros(channels))
        registry.register_buffer(f"{name}.running_var", np.ones(channels))
        self._cache = None

    def forward(self, x, train=True, rng=None):
        reg = self.registry
        mean_key, var_key = f"{self.name}.running_mean", f"{self.name}.running_var"
        running = ops.RunningStats(reg.buffers[mean_key], reg.buffers[var_key])
        out, running, self._cache = ops.batchnorm_forward(
            x, reg[self.scale_id].value, reg[self.shift_id].value, running, train
        )
        if train:
            reg.buffers[mean_key] = running.mean.astype(reg.dtype)
            reg.buffers[var_key] = running.var.astype(reg.dtype)
        return out

    def backward(self, grad):
        gx, gscale, gshift = ops.batchnorm_backward(self._cache, grad)
        self.registry.accumulate_grad(self.scale_id, gscale)
        self.registry.accumulate_grad(self.shift_id, gshift)
        return gx


class ReLU(Layer):
    def forward(self, x, train=True, rng=None):
        self._x = x
        return ops.relu(x)

    def backward(self, grad):
        return ops.relu_backward(self._x, grad)


class Dropout(Layer):
    def __init__(self, rate):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._mask = None

    def forward(self, x, train=True, rng=None):
        if train and self.rate > 0 and rng is None:
            raise ValueError("train-mode dropout needs a generator")
        out, self._mask = ops.dropout(x, self.rate, rng, train)
        return out

    def backward(self, grad):
        return ops.dropout_backward(grad, self._mask, self.rate)


class MaxPool(Layer):
    def __init__(self, window, stride, padding=0):
        self.window, self.stride, self.padding = window, stride, padding

    def forward(self, x, train=True, rng=None):
        out, self._cache = ops.max_pool(x, self.window, self.stride, self.padding)
        return out

    def backward(self, grad):
        return ops.max_pool_backward(self._cache, grad)


class GlobalAvgPool(Layer):
    def forward(self, x, train=True, rng=None):
        self._shape = x.shape
        return ops.avg_pool_global(x)

    def backward(self, grad):
        return ops.avg_pool_global_backward(self._shape, grad)


class Linear(Layer):
    def __init__(self, registry, name, in_features, out_features):
        self.registry = registry
        self.weight_id = registry.register(
            f"{name}.weight", (out_features, in_features), InitSpec("linear"),
            decay=True,
        )
        self.bias_id = registry.register(
            f"{name}.bias", (out_features,), InitSpec("linear", in_features)
        )
        registry.bind(name, self.weight_id, "weight")
        registry.bind(name, self.bias_id, "bias")

    def forward(self, x, train=True, rng=None):
        self._x = x
        reg = self.registry
        return ops.linear_forward(x, reg[self.weight_id].value, reg[self.bias_id].value)

    def backward(self, grad):
        reg = self.registry
        gx, gw, gb = ops.linear_backward(self._x, reg[self.weight_id].value, grad)
        reg.accumulate_grad(self.weight_id, gw)
        reg.accumulate_grad(self.bias_id, gb)
        return gx


class Sequential(Layer):
    def __init__(self, layers=()):
        self.layers = list(layers)

    def forward(self, x, train=True, rng=None):
        for layer in self.layers:
            x = layer.forward(x, train, rng)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad
