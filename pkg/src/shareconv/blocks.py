"""The four residual block variants and their shared-kernel versions.

A block computes ``shortcut(x) + branch(x)`` (followed by a ReLU in the
post-activation kinds). In a shared block exactly one convolution, the
*designated* one, reads its kernel from a stage-level slot; everything
else stays private to the block:

* bottleneck kinds: the single 3x3 convolution;
* basic kinds: the second 3x3 convolution.
"""

import enum
from dataclasses import dataclass

from .layers import BatchNorm, Conv, Dropout, Layer, ReLU
from .ops import ConvGeometry


class BlockKind(str, enum.Enum):
    BASIC_POST = "basic_post"
    BASIC_PRE_WIDE = "basic_pre_wide"
    BOTTLENECK_POST = "bottleneck_post"
    BOTTLENECK_PRE = "bottleneck_pre"

    @property
    def pre_activation(self):
        return self in (BlockKind.BASIC_PRE_WIDE, BlockKind.BOTTLENECK_PRE)

    @property
    def bottleneck(self):
        return self in (BlockKind.BOTTLENECK_POST, BlockKind.BOTTLENECK_PRE)


@dataclass(frozen=True)
class LayerDesc:
    """One step of a block's layer sequence.

    ``width`` says which channel count a conv produces (``"mid"`` or
    ``"out"``); ``strided`` marks the conv that carries the block stride.
    """

    op: str
    kernel: int = 0
    width: str = ""
    strided: bool = False
    designated: bool = False

    def __str__(self):
        if self.op != "conv":
            return self.op
        return f"conv{self.kernel}x{self.kernel}" + ("(stride)" if self.strided else "")


def _conv(k, width, strided=False, designated=False):
    return LayerDesc("conv", k, width, strided, designated)


_BN, _RELU, _ADD = LayerDesc("bn"), LayerDesc("relu"), LayerDesc("add")


def layer_sequence(kind, dropout_rate=0.0):
    """Ordered layer descriptors of a block, including the residual ``add``.

    Post-activation kinds end with ``add, relu``; pre-activation kinds end
    with ``add``.
    """
    kind = BlockKind(kind)
    if kind is BlockKind.BOTTLENECK_POST:
        return [_conv(1, "mid"), _BN, _RELU,
                _conv(3, "mid", strided=True, designated=True), _BN, _RELU,
                _conv(1, "out"), _BN, _ADD, _RELU]
    if kind is BlockKind.BASIC_POST:
        return [_conv(3, "out", strided=True), _BN, _RELU,
                _conv(3, "out", designated=True), _BN, _ADD, _RELU]
    if kind is BlockKind.BASIC_PRE_WIDE:
        seq = [_BN, _RELU, _conv(3, "out", strided=True)]
        if dropout_rate > 0:
            seq.append(LayerDesc("dropout"))
        return seq + [_BN, _RELU, _conv(3, "out", designated=True), _ADD]
    return [_BN, _RELU, _conv(1, "mid"),
            _BN, _RELU, _conv(3, "mid", strided=True, designated=True),
            _BN, _RELU, _conv(1, "out"), _ADD]


def designated_shape(kind, out_channels, mid_channels=None):
    """Kernel shape of the convolution that sharing replaces."""
    kind = BlockKind(kind)
    width = mid_channels if kind.bottleneck else out_channels
    return (width, width, 3, 3)


@dataclass(frozen=True)
class BlockConfig:
    kind: BlockKind
    in_channels: int
    out_channels: int
    mid_channels: int | None = None
    stride: int = 1
    dropout_rate: float = 0.0
    shared_binding: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", BlockKind(self.kind))
        if self.stride not in (1, 2):
            raise ValueError(f"block stride must be 1 or 2, got {self.stride}")
        if self.kind.bottleneck and not self.mid_channels:
            raise ValueError("bottleneck blocks need mid_channels")
        if self.dropout_rate and self.kind is not BlockKind.BASIC_PRE_WIDE:
            raise ValueError("dropout is only available in basic_pre_wide blocks")

    @property
    def identity_shortcut(self):
        return self.stride == 1 and self.in_channels == self.out_channels


class ResidualBlock(Layer):
    """Runtime block built from a :class:`BlockConfig`.

    Args:
        registry: parameter registry that receives the block's private slots.
        name: prefix for slot names, e.g. ``"stage2.block3"``.
    """

    def __init__(self, registry, name, config):
        self.name = name
        self.config = config
        self.registry = registry
        widths = {"mid": config.mid_channels, "out": config.out_channels}
        ch = config.in_channels
        self.branch = []
        self.designated = None
        n_conv = n_bn = 0
        descs = layer_sequence(config.kind, config.dropout_rate)
        add_at = descs.index(_ADD)
        for desc in descs[:add_at]:
            if desc.op == "conv":
                n_conv += 1
                stride = config.stride if desc.strided else 1
                geom = ConvGeometry.square(desc.kernel, stride)
                cout = widths[desc.width]
                inst = f"{name}.conv{n_conv}"
                if desc.designated and config.shared_binding is not None:
                    layer = Conv(registry, inst, config.shared_binding, geom)
                    if layer.in_channels != ch or layer.out_channels != cout:
                        raise ValueError(
                            f"{inst}: shared kernel {registry[config.shared_binding].shape}"
                            f" does not fit {ch}->{cout}"
                        )
                else:
                    layer = Conv.private(registry, inst, ch, cout, geom)
                if desc.designated:
                    self.designated = layer
                ch = cout
            elif desc.op == "bn":
                n_bn += 1
                layer = BatchNorm(registry, f"{name}.bn{n_bn}", ch)
            elif desc.op == "relu":
                layer = ReLU()
            elif desc.op == "dropout":
                layer = Dropout(config.dropout_rate)
            else:
                raise AssertionError(desc)
            self.branch.append(layer)
        self.post_relu = ReLU() if descs[add_at + 1:] else None

        self.shortcut = []
        if not config.identity_shortcut:
            geom = ConvGeometry(1, 1, config.stride, 0)
            self.shortcut.append(Conv.private(
                registry, f"{name}.proj", config.in_channels, config.out_channels, geom
            ))
            if not config.kind.pre_activation:
                self.shortcut.append(
                    BatchNorm(registry, f"{name}.proj_bn", config.out_channels)
                )

    @property
    def convs(self):
        return [l for l in self.branch + self.shortcut if isinstance(l, Conv)]

    def forward(self, x, train=True, rng=None):
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ValueError(
                f"{self.name}: expected {self.config.in_channels} input channels, "
                f"got input of shape {x.shape}"
            )
        r = x
        for layer in self.branch:
            r = layer.forward(r, train, rng)
        s = x
        for layer in self.shortcut:
            s = layer.forward(s, train, rng)
        out = s + r
        if self.post_relu is not None:
            out = self.post_relu.forward(out, train, rng)
        return out

    def backward(self, grad):
        if self.post_relu is not None:
            grad = self.post_relu.backward(grad)
        gr = grad
        for layer in reversed(self.branch):
            gr = layer.backward(gr)
        gs = grad
        for layer in reversed(self.shortcut):
            gs = layer.backward(gs)
        return gr + gs
