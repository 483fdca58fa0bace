"""Momentum SGD with the learning rate folded into the velocity.

    v <- gamma * v + lr * (g + weight_decay * W)
    W <- W - v

The same rule is applied to every slot. A shared slot is different only in
that its ``g`` already holds the sum of the contributions of all blocks
bound to it.
"""

import math
from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    """Step-drop schedule entries are ``(epoch, factor)``: from ``epoch`` on,
    the learning rate is multiplied by ``factor`` (cumulatively)."""

    alpha: float = 0.1
    gamma: float = 0.9
    weight_decay: float = 0.0
    schedule: tuple[tuple[int, float], ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("learning rate must be >= 0")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be >= 0")
        sched = tuple((int(e), float(f)) for e, f in self.schedule)
        epochs = [e for e, _ in sched]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError(f"schedule epochs must be strictly increasing: {epochs}")
        if any(not 0.0 < f <= 1.0 for _, f in sched):
            raise ValueError("schedule factors must lie in (0, 1]")
        object.__setattr__(self, "schedule", sched)


CIFAR_DEFAULT = OptimizerConfig(0.1, 0.9, 5e-4, ((60, 0.2), (120, 0.2), (160, 0.2)))


def lr_at(config, epoch):
    return config.alpha * math.prod(f for e, f in config.schedule if e <= epoch)


def step(registry, config, epoch=0):
    """Apply one update to every slot of ``registry`` in place.

    Gradients are checked for NaN/Inf before anything is modified.
    """
    for slot in registry:
        if slot._grad is not None and not np.all(np.isfinite(slot._grad)):
            raise NonFiniteGradientError(f"non-finite gradient in slot {slot.name!r}")
    lr = lr_at(config, epoch)
    for slot in registry:
        g = slot.grad
        if config.weight_decay and slot.decay_enabled:
            g = g + config.weight_decay * slot.value
        v = slot.velocity
        v *= config.gamma
        v += lr * g
        slot.value = slot.value - v
