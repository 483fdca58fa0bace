"""Declarative network description and the runtime model built from it."""

from dataclasses import dataclass, field, replace

from .blocks import BlockConfig, BlockKind, ResidualBlock, designated_shape
from .layers import (
    BatchNorm, Conv, GlobalAvgPool, Linear, MaxPool, ReLU, Sequential,
)
from .ops import ConvGeometry
from .params import CONV_INIT, ParameterRegistry


@dataclass(frozen=True)
class StageSpec:
    num_blocks: int
    block_kind: BlockKind
    out_channels: int
    mid_channels: int | None = None
    entry_stride: int = 1
    share: bool = False
    include_entry_block: bool = False

    def __post_init__(self):
        object.__setattr__(self, "block_kind", BlockKind(self.block_kind))
        if self.num_blocks < 1:
            raise ValueError("a stage needs at least one block")

    @property
    def participating_blocks(self):
        """Blocks whose designated conv would bind the stage's shared slot."""
        return self.num_blocks if self.include_entry_block else self.num_blocks - 1

    @property
    def designated_shape(self):
        return designated_shape(self.block_kind, self.out_channels, self.mid_channels)


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description.

    ``stem`` is ``"cifar"`` (3x3 conv to ``stem_width``) or ``"imagenet"``
    (7x7 stride-2 conv, batchnorm, ReLU, 3x3 stride-2 max pool).
    ``depth`` is the nominal layer count used in the architecture's name.
    """

    name: str
    dataset: str
    stem: str
    stem_width: int
    stages: tuple[StageSpec, ...]
    class_count: int
    depth: int = 0
    input_size: int = 32
    dropout_rate: float = 0.0
    reference: bool = field(default=False, compare=False)

    @property
    def pre_activation(self):
        return self.stages[0].block_kind.pre_activation

    @property
    def shared(self):
        return any(st.share for st in self.stages)

    def with_sharing(self, shared):
        return replace(self, stages=tuple(replace(st, share=shared) for st in self.stages))


class Network(Sequential):
    """Runtime model: stem, residual stages, pooled classifier head.

    All parameters live in ``self.registry``. A stage with ``share=True``
    registers one ``stageS.shared3x3`` slot and binds every participating
    block's designated convolution to it.
    """

    def __init__(self, spec, registry=None, seed=0, precision="f32"):
        self.spec = spec
        if registry is None:
            registry = ParameterRegistry(seed, precision)
        self.registry = reg = registry

        if spec.stem == "cifar":
            self.stem = Sequential([
                Conv.private(reg, "stem.conv", 3, spec.stem_width, ConvGeometry.square(3)),
            ])
        elif spec.stem == "imagenet":
            self.stem = Sequential([
                Conv.private(reg, "stem.conv", 3, spec.stem_width,
                             ConvGeometry.square(7, stride=2)),
                BatchNorm(reg, "stem.bn", spec.stem_width),
                ReLU(),
                MaxPool(3, 2, 1),
            ])
        else:
            raise ValueError(f"unknown stem {spec.stem!r}")

        ch = spec.stem_width
        self.stages = []
        self.shared_slots = {}
        for s, st in enumerate(spec.stages, start=1):
            shared_id = None
            if st.share and st.participating_blocks >= 1:
                shared_id = reg.register(
                    f"stage{s}.shared3x3", st.designated_shape, CONV_INIT, decay=True
                )
                self.shared_slots[s] = shared_id
            blocks = []
            for k in range(1, st.num_blocks + 1):
                joins = k > 1 or st.include_entry_block
                cfg = BlockConfig(
                    kind=st.block_kind,
                    in_channels=ch,
                    out_channels=st.out_channels,
                    mid_channels=st.mid_channels,
                    stride=st.entry_stride if k == 1 else 1,
                    dropout_rate=(spec.dropout_rate
                                  if st.block_kind is BlockKind.BASIC_PRE_WIDE else 0.0),
                    shared_binding=shared_id if joins else None,
                )
                blocks.append(ResidualBlock(reg, f"stage{s}.block{k}", cfg))
                ch = st.out_channels
            self.stages.append(blocks)

        head = []
        if spec.pre_activation:
            head += [BatchNorm(reg, "final_bn", ch), ReLU()]
        head += [GlobalAvgPool(), Linear(reg, "fc", ch, spec.class_count)]
        self.head = Sequential(head)
        super().__init__([self.stem, *self.blocks, self.head])

    @property
    def blocks(self):
        return [b for stage in self.stages for b in stage]

    def conv_layers(self):
        convs = [l for l in self.stem.layers if isinstance(l, Conv)]
        for b in self.blocks:
            convs += b.convs
        return convs

    def num_parameters(self):
        return self.registry.num_parameters()
