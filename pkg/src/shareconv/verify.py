"""Finite-difference gradient checks and the tied-clone sharing check."""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .blocks import ResidualBlock
from .catalog import build, reduced, reduced_to_width, resolve_spec
from .layers import MaxPool, ReLU, Sequential
from .network import NetworkSpec
from .ops import softmax_cross_entropy
from .optim import OptimizerConfig, step


# central-difference roundoff of an O(1) loss at eps=1e-4 is ~1e-11; with this
# floor a vanishing gradient must still agree to 1e-11 absolute at tol 1e-5
GRAD_FLOOR = 1e-6


def _spec(arch, shared, reduce):
    if isinstance(arch, NetworkSpec):
        return arch.with_sharing(shared)
    if reduce and "/" not in arch:
        return reduced_to_width(arch).with_sharing(shared)
    return resolve_spec(arch, shared)


def _problem(net, seed, batch, size):
    rng = np.random.default_rng([seed, 7])
    x = rng.standard_normal((batch, 3, size, size)).astype(net.registry.dtype)
    y = rng.integers(0, net.spec.class_count, batch)
    return x, y


def _loss_and_backward(net, x, y, seed, backward=True):
    rng = np.random.default_rng([seed, 8])  # same dropout mask every call
    logits = net.forward(x, train=True, rng=rng)
    loss, g = softmax_cross_entropy(logits, y)
    if backward:
        net.backward(g)
    return loss


def _leaf_layers(layer):
    if isinstance(layer, Sequential):
        for child in layer.layers:
            yield from _leaf_layers(child)
    elif isinstance(layer, ResidualBlock):
        for child in layer.branch + layer.shortcut:
            yield from _leaf_layers(child)
        if layer.post_relu is not None:
            yield layer.post_relu
    else:
        yield layer


def kink_signature(net):
    """Digest of every ReLU mask and max-pool argmax of the last forward.

    Two forwards with equal signatures ran through the same linear pieces,
    so a central difference between them is a valid derivative estimate.
    """
    h = hashlib.sha1()
    for layer in _leaf_layers(net):
        if isinstance(layer, ReLU):
            h.update(np.packbits(layer._x > 0).tobytes())
        elif isinstance(layer, MaxPool):
            h.update(layer._cache[2].tobytes())
    return h.hexdigest()


@dataclass
class GradcheckReport:
    arch: str
    shared: bool
    tolerance: float
    errors: dict = field(default_factory=dict)
    skipped: int = 0

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)

    @property
    def failing(self):
        return [n for n, e in self.errors.items() if not e <= self.tolerance]

    @property
    def passed(self):
        return not self.failing

    def __str__(self):
        lines = [f"gradcheck {self.arch} shared={self.shared}: "
                 f"{'PASS' if self.passed else 'FAIL'} "
                 f"(max rel err {self.max_error:.3e}, tol {self.tolerance:.0e}, "
                 f"{len(self.errors)} slots, {self.skipped} kink entries skipped)"]
        lines += [f"  FAIL {n}: {self.errors[n]:.3e}" for n in self.failing]
        return "\n".join(lines)


def gradcheck(arch="resnet164", seed=0, shared=True, eps=1e-4, tol=1e-5,
              checks_per_slot=6, batch=2, size=None, reduce=True, corrupt=None):
    """Compare every slot's analytic gradient with central differences.

    The network is built at 64-bit precision; catalog names are shrunk to
    widths <= 8 with two blocks per stage unless ``reduce`` is False. Inputs
    are ``size`` x ``size`` (8 for CIFAR-style stems, 64 for ImageNet-style
    stems, whose stride-4 entry would otherwise leave 1x1 maps in which
    batchnorm sees only ``batch`` values per channel).

    Up to ``checks_per_slot`` randomly chosen entries are checked per slot.
    An entry whose +-eps perturbation flips any ReLU mask or max-pool argmax
    is not differentiable at that scale and is replaced by another entry.
    The error of a slot is ``max |analytic - numeric|`` over its checked
    entries divided by the largest magnitude among them (floored at
    ``GRAD_FLOOR`` so a slot whose gradient is exactly zero is judged on
    finite-difference roundoff, not on 0/0).

    ``corrupt`` names a slot whose analytic gradient is negated (fault
    injection for testing the checker itself).
    """
    spec = _spec(arch, shared, reduce)
    net = build(spec, shared=shared, seed=seed, precision="f64")
    reg = net.registry
    size = size or (8 if spec.stem == "cifar" else 64)
    x, y = _problem(net, seed, batch, size)

    reg.zero_grads()
    _loss_and_backward(net, x, y, seed)
    base_sig = kink_signature(net)
    analytic = {s.name: s.grad.copy() for s in reg}
    if corrupt is not None:
        analytic[corrupt] = -analytic[corrupt]

    pick = np.random.default_rng([seed, 9])
    report = GradcheckReport(spec.name, shared, tol)
    for slot in reg:
        flat = slot.value.reshape(-1)
        g = analytic[slot.name].reshape(-1)
        a, num = [], []
        for i in pick.permutation(flat.size):
            if len(a) == checks_per_slot:
                break
            orig = flat[i]
            flat[i] = orig + eps
            up = _loss_and_backward(net, x, y, seed, backward=False)
            smooth = kink_signature(net) == base_sig
            flat[i] = orig - eps
            down = _loss_and_backward(net, x, y, seed, backward=False)
            smooth = smooth and kink_signature(net) == base_sig
            flat[i] = orig
            if not smooth:
                report.skipped += 1
                continue
            a.append(g[i])
            num.append((up - down) / (2 * eps))
        report.errors[slot.name] = _rel(np.array(a), np.array(num), GRAD_FLOOR)
    return report


def tied_clone(shared_net):
    """Unshared copy of ``shared_net`` whose would-be-shared kernels hold the
    shared values. Returns ``(clone, ties)`` with ``ties`` mapping each
    shared slot id to the clone slot ids that copy it."""
    clone = build(shared_net.spec, shared=False, seed=shared_net.registry.seed + 1,
                  precision=shared_net.registry.dtype)
    src, dst = shared_net.registry, clone.registry
    for slot in dst:
        if slot.name in src:
            slot.value = src[slot.name].value
    ties = {}
    for b_src, b_dst in zip(shared_net.blocks, clone.blocks):
        d = b_src.designated
        if d.param_id in shared_net.shared_slots.values():
            dst[b_dst.designated.param_id].value = src[d.param_id].value
            ties.setdefault(d.param_id, []).append(b_dst.designated.param_id)
    dst.buffers = {k: v.copy() for k, v in src.buffers.items()}
    return clone, ties


def _rel(a, b, floor=0.0):
    if a.size == 0:
        return 0.0
    scale = max(np.abs(a).max(), np.abs(b).max(), floor)
    return float(np.abs(a - b).max() / scale) if scale > 0 else 0.0


@dataclass
class EquivReport:
    arch: str
    forward_error: float
    gradient_error: float
    other_gradient_error: float
    step_difference: float
    max_bindings: int
    tolerance: float = 1e-6

    @property
    def forward_ok(self):
        return self.forward_error <= self.tolerance

    @property
    def gradient_ok(self):
        return max(self.gradient_error, self.other_gradient_error) <= self.tolerance

    @property
    def divergence_ok(self):
        # a slot bound twice or more must make the models part ways after a step;
        # with single bindings the two are the same model
        if self.max_bindings >= 2:
            return self.step_difference > self.tolerance
        return self.step_difference <= self.tolerance

    @property
    def passed(self):
        return self.forward_ok and self.gradient_ok and self.divergence_ok

    def __str__(self):
        flag = lambda ok: "ok" if ok else "FAIL"  # noqa: E731
        return (
            f"equiv {self.arch}: {'PASS' if self.passed else 'FAIL'}\n"
            f"  (a) forward tie equality   rel err {self.forward_error:.3e} "
            f"[{flag(self.forward_ok)}]\n"
            f"  (b) shared grad = sum tied rel err {self.gradient_error:.3e} "
            f"(other slots {self.other_gradient_error:.3e}) [{flag(self.gradient_ok)}]\n"
            f"  (c) post-step output diff  {self.step_difference:.3e} "
            f"with max {self.max_bindings} bindings/slot [{flag(self.divergence_ok)}]"
        )


def equiv(arch="resnet164", seed=0, width_divisor=8, blocks_per_stage=2,
          batch=4, size=None, optimizer=None):
    """Check that sharing is exactly a tied-gradient-sum construction.

    (a) the shared net and its tied clone agree on a forward pass;
    (b) each shared slot's gradient equals the sum of the clone's tied
        kernel gradients (and every other slot's gradient matches);
    (c) after one optimizer step, outputs differ whenever a slot is bound
        more than once, because the clone updates each copy separately.
    """
    if isinstance(arch, NetworkSpec):
        spec = arch
    elif "/" in arch:
        spec = resolve_spec(arch)
    else:
        spec = reduced(arch, width_divisor, blocks_per_stage)
    net = build(spec, shared=True, seed=seed, precision="f64")
    clone, ties = tied_clone(net)
    size = size or (8 if spec.stem == "cifar" else 32)
    x, y = _problem(net, seed, batch, size)

    net.registry.zero_grads()
    clone.registry.zero_grads()
    out_s = net.forward(x, train=True, rng=np.random.default_rng([seed, 8]))
    out_c = clone.forward(x, train=True, rng=np.random.default_rng([seed, 8]))
    fwd = _rel(out_s, out_c)

    _, g = softmax_cross_entropy(out_s, y)
    net.backward(g)
    clone.backward(g)
    src, dst = net.registry, clone.registry
    grad_err = 0.0
    for sid, copies in ties.items():
        summed = sum(dst[c].grad for c in copies)
        grad_err = max(grad_err, _rel(src[sid].grad, summed))
    other = max((_rel(s.grad, dst[s.name].grad) for s in src if s.name in dst),
                default=0.0)

    opt = optimizer or OptimizerConfig(alpha=0.1, gamma=0.9)
    step(src, opt)
    step(dst, opt)
    after_s = net.forward(x, train=True, rng=np.random.default_rng([seed, 8]))
    after_c = clone.forward(x, train=True, rng=np.random.default_rng([seed, 8]))
    max_bindings = max((src.binding_count(sid) for sid in ties), default=0)
    return EquivReport(spec.name, fwd, grad_err, other, _rel(after_s, after_c),
                       max_bindings)
