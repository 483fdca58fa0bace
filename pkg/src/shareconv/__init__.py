"""Residual networks with convolution kernels shared across the blocks of a stage."""

from .blocks import BlockConfig, BlockKind, ResidualBlock, layer_sequence
from .catalog import (
    CATALOG, PUBLISHED_COUNTS, build, count_distinct_convs, count_parameters,
    list_architectures, reduced, sharing_savings, total_savings,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .network import Network, NetworkSpec, StageSpec
from .optim import OptimizerConfig, lr_at, step
from .params import InitSpec, ParameterRegistry
from .tensor import ShapeError

__version__ = "0.1.0"
