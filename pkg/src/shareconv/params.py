"""Trainable parameter registry with many-to-one layer binding.

Weight sharing is nothing more than several layer instances binding the
same :class:`ParameterSlot`. Each instance pushes its gradient through
:meth:`ParameterRegistry.accumulate_grad`, so a slot bound ``k`` times
receives ``k`` additive contributions per backward pass.

Slot values are materialized lazily from a per-slot seed, which keeps
building (and counting) ImageNet-sized networks cheap and makes a slot's
initial value independent of materialization order.
"""

import hashlib
import math
import threading
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, resolve_dtype


@dataclass(frozen=True)
class InitSpec:
    """How to draw a slot's initial value.

    kind is one of ``"conv"`` (normal, std = sqrt(2 / fan_out) with
    fan_out = Co*Kh*Kw), ``"linear"`` (uniform +-1/sqrt(fan_in)),
    ``"ones"`` or ``"zeros"``. ``fan_in`` overrides the fan-in of a linear
    bias, whose own shape does not carry it.
    """

    kind: str
    fan_in: int | None = None

    def draw(self, shape, rng, dtype):
        if self.kind == "conv":
            co, _, kh, kw = shape
            std = math.sqrt(2.0 / (kh * kw * co))
            return (rng.standard_normal(shape) * std).astype(dtype)
        if self.kind == "linear":
            fan_in = self.fan_in or shape[-1]
            bound = 1.0 / math.sqrt(fan_in)
            return rng.uniform(-bound, bound, shape).astype(dtype)
        if self.kind == "ones":
            return np.ones(shape, dtype)
        if self.kind == "zeros":
            return np.zeros(shape, dtype)
        raise ValueError(f"unknown init kind {self.kind!r}")


CONV_INIT = InitSpec("conv")
ONES = InitSpec("ones")
ZEROS = InitSpec("zeros")


class ParameterSlot:
    """One trainable tensor plus its gradient accumulator and velocity."""

    def __init__(self, pid, name, shape, init, dtype, seed, decay_enabled):
        self.id = pid
        self.name = name
        self.shape = tuple(int(s) for s in shape)
        self.init = init
        self.dtype = dtype
        self.decay_enabled = decay_enabled
        self._seed = seed
        self._value = None
        self._grad = None
        self._velocity = None
        self._lock = threading.Lock()

    @property
    def size(self):
        return math.prod(self.shape)

    @property
    def materialized(self):
        return self._value is not None

    @property
    def value(self):
        if self._value is None:
            rng = np.random.default_rng(self._seed)
            self._value = self.init.draw(self.shape, rng, self.dtype)
        return self._value

    @value.setter
    def value(self, arr):
        arr = np.asarray(arr, dtype=self.dtype)
        if arr.shape != self.shape:
            raise ShapeError(f"{self.name}: value {arr.shape} vs slot {self.shape}")
        self._value = arr.copy()

    @property
    def grad(self):
        if self._grad is None:
            self._grad = np.zeros(self.shape, self.dtype)
        return self._grad

    @property
    def velocity(self):
        if self._velocity is None:
            self._velocity = np.zeros(self.shape, self.dtype)
        return self._velocity

    @velocity.setter
    def velocity(self, arr):
        self._velocity = np.asarray(arr, dtype=self.dtype)

    def __repr__(self):
        return f"ParameterSlot({self.id}, {self.name!r}, {self.shape})"


class ParameterRegistry:
    """Owns every trainable slot, the binding table and non-trainable buffers.

    Args:
        seed: root seed; slot ``i`` is initialized from ``[seed, i]``.
        precision: ``"f32"`` or ``"f64"``.
    """

    def __init__(self, seed=0, precision="f32"):
        self.seed = seed
        self.dtype = resolve_dtype(precision)
        self.slots = []
        self._by_name = {}
        self.bindings = {}
        self.buffers = {}

    def register(self, name, shape, init, rng=None, decay=False):
        """Create a slot and return its id.

        If ``rng`` is given the value is drawn from it immediately; otherwise
        it is drawn lazily from the registry seed.
        """
        if name in self._by_name:
            raise KeyError(f"parameter {name!r} already registered")
        pid = len(self.slots)
        slot = ParameterSlot(pid, name, shape, init, self.dtype,
                             [self.seed, pid], decay)
        if rng is not None:
            slot._value = init.draw(slot.shape, rng, self.dtype)
        self.slots.append(slot)
        self._by_name[name] = pid
        return pid

    def __getitem__(self, key):
        if isinstance(key, str):
            return self.slots[self._by_name[key]]
        return self.slots[key]

    def __contains__(self, name):
        return name in self._by_name

    def __iter__(self):
        return iter(self.slots)

    def __len__(self):
        return len(self.slots)

    def bind(self, instance_id, param_id, role="weight", shape=None):
        """Record that layer instance ``instance_id`` uses ``param_id``.

        ``shape`` is the shape the instance's role requires; a mismatch is an
        error. An instance binds at most one slot per role.
        """
        slot = self.slots[param_id]
        if shape is not None and tuple(shape) != slot.shape:
            raise ShapeError(
                f"cannot bind {instance_id}.{role} (needs {tuple(shape)}) "
                f"to {slot.name} {slot.shape}"
            )
        key = (instance_id, role)
        if key in self.bindings:
            raise KeyError(f"{instance_id}.{role} is already bound")
        self.bindings[key] = param_id

    def binding_count(self, param_id):
        return sum(1 for pid in self.bindings.values() if pid == param_id)

    def accumulate_grad(self, param_id, contribution):
        slot = self.slots[param_id]
        if contribution.shape != slot.shape:
            raise ShapeError(
                f"{slot.name}: gradient {contribution.shape} vs slot {slot.shape}"
            )
        with slot._lock:
            if slot._grad is None:
                slot._grad = np.array(contribution, dtype=self.dtype)
            else:
                slot._grad += contribution

    def zero_grads(self):
        for slot in self.slots:
            slot._grad = None

    def num_parameters(self):
        """Element count over distinct slots (bindings are not counted)."""
        return sum(slot.size for slot in self.slots)

    def register_buffer(self, name, arr):
        if name in self.buffers:
            raise KeyError(f"buffer {name!r} already registered")
        self.buffers[name] = np.asarray(arr, dtype=self.dtype)

    def snapshot(self):
        return {slot.name: slot.value.copy() for slot in self.slots}

    def restore(self, snap):
        for slot in self.slots:
            slot.value = snap[slot.name]

    def content_hash(self, include_buffers=True):
        h = hashlib.sha256()
        for slot in self.slots:
            h.update(slot.name.encode())
            h.update(np.ascontiguousarray(slot.value).tobytes())
        if include_buffers:
            for name in sorted(self.buffers):
                h.update(name.encode())
                h.update(np.ascontiguousarray(self.buffers[name]).tobytes())
        return h.hexdigest()
