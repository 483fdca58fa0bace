"""Architecture catalog, sharing policy and analytic parameter counting.

The seven reference networks are the pre-activation ResNet-164 and wide
ResNets used on CIFAR, and the ImageNet ResNets 34/50/101/152. Sharing
scope per stage follows ``include_entry_block``: only ResNet-34 lets the
entry block of a stage join the shared kernel. With that policy the
analytic savings reproduce the published parameter counts for all seven.
"""

import re
from dataclasses import dataclass, replace

from .blocks import BlockKind
from .network import Network, NetworkSpec, StageSpec

# name -> (params original [M], params shared [M], decrease %, convs original, convs shared)
PUBLISHED_COUNTS = {
    "resnet164": (1.70, 0.93, 45, 164, 113),
    "wrn-40-4": (8.95, 5.85, 35, 40, 25),
    "wrn-28-10": (36.54, 26.86, 26, 28, 19),
    "resnet34": (21.8, 13.6, 37, 34, 20),
    "resnet50": (25.6, 20.5, 20, 50, 38),
    "resnet101": (44.5, 29.4, 33, 101, 72),
    "resnet152": (60.2, 36.8, 39, 152, 106),
}

DATASET_LABELS = {"cifar10": "CIFAR 10", "cifar100": "CIFAR 100",
                  "imagenet": "ImageNet", "synthetic": "synthetic"}


def _cifar_bottleneck(name, blocks, classes, depth):
    stages = tuple(
        StageSpec(blocks, BlockKind.BOTTLENECK_PRE, 4 * w, w, stride)
        for w, stride in ((16, 1), (32, 2), (64, 2))
    )
    return NetworkSpec(name, "cifar10", "cifar", 16, stages, classes, depth, 32,
                       reference=True)


def _wrn(name, depth, widen, dataset, classes, dropout):
    n = (depth - 4) // 6
    stages = tuple(
        StageSpec(n, BlockKind.BASIC_PRE_WIDE, w * widen, None, stride)
        for w, stride in ((16, 1), (32, 2), (64, 2))
    )
    return NetworkSpec(name, dataset, "cifar", 16, stages, classes, depth, 32,
                       dropout, reference=True)


def _imagenet(name, counts, kind, depth):
    stages = []
    for w, n, stride in zip((64, 128, 256, 512), counts, (1, 2, 2, 2)):
        if kind is BlockKind.BASIC_POST:
            stages.append(StageSpec(n, kind, w, None, stride, include_entry_block=True))
        else:
            stages.append(StageSpec(n, kind, 4 * w, w, stride))
    return NetworkSpec(name, "imagenet", "imagenet", 64, tuple(stages), 1000, depth,
                       224, reference=True)


CATALOG = {
    "resnet164": _cifar_bottleneck("resnet164", 18, 10, 164),
    "wrn-40-4": _wrn("wrn-40-4", 40, 4, "cifar10", 10, 0.0),
    "wrn-28-10": _wrn("wrn-28-10", 28, 10, "cifar100", 100, 0.3),
    "resnet34": _imagenet("resnet34", (3, 4, 6, 3), BlockKind.BASIC_POST, 34),
    "resnet50": _imagenet("resnet50", (3, 4, 6, 3), BlockKind.BOTTLENECK_POST, 50),
    "resnet101": _imagenet("resnet101", (3, 4, 23, 3), BlockKind.BOTTLENECK_POST, 101),
    "resnet152": _imagenet("resnet152", (3, 8, 36, 3), BlockKind.BOTTLENECK_POST, 152),
    # small net for synthetic-data smoke training; not a reference architecture
    "toy": NetworkSpec(
        "toy", "synthetic", "cifar", 8,
        (StageSpec(2, BlockKind.BASIC_PRE_WIDE, 8, None, 1, include_entry_block=True),
         StageSpec(2, BlockKind.BASIC_PRE_WIDE, 16, None, 2, include_entry_block=True)),
        4, 10, 16,
    ),
}

_REDUCED = re.compile(r"^(?P<base>[\w-]+)/w(?P<div>\d+)b(?P<blocks>\d+)$")


def reduced(name, width_divisor, blocks_per_stage, class_count=10,
            include_entry_block=True, min_width=2):
    """Shrunken variant of a catalog entry for gradient and sharing checks.

    Every channel width is divided by ``width_divisor`` (floor, at least
    ``min_width``)
    and each stage keeps ``blocks_per_stage`` blocks. Entry blocks join the
    shared kernel by default so that two blocks per stage already share.
    """
    base = _lookup(name)

    def w(c):
        return max(min_width, c // width_divisor)

    stages = tuple(
        replace(st, num_blocks=blocks_per_stage, out_channels=w(st.out_channels),
                mid_channels=w(st.mid_channels) if st.mid_channels else None,
                include_entry_block=include_entry_block)
        for st in base.stages
    )
    return replace(base, name=f"{base.name}/w{width_divisor}b{blocks_per_stage}",
                   stem_width=w(base.stem_width), stages=stages,
                   class_count=class_count, reference=False)


def reduced_to_width(name, max_width=8, blocks_per_stage=2, class_count=10):
    """:func:`reduced` with the smallest divisor keeping every width <= max_width."""
    base = _lookup(name)
    widest = max([base.stem_width] + [st.out_channels for st in base.stages])
    div = -(-widest // max_width)
    return reduced(name, div, blocks_per_stage, class_count)


def _lookup(name):
    try:
        return CATALOG[name]
    except KeyError:
        raise KeyError(
            f"unknown architecture {name!r}; catalog: {', '.join(CATALOG)}"
        ) from None


def resolve_spec(name, shared=False, class_count=None):
    """Spec for ``name``; accepts ``<arch>/w<div>b<blocks>`` reduced names."""
    m = _REDUCED.match(name)
    if m:
        spec = reduced(m["base"], int(m["div"]), int(m["blocks"]))
    else:
        spec = _lookup(name)
    spec = spec.with_sharing(shared)
    if class_count is not None:
        spec = replace(spec, class_count=class_count)
    return spec


def build(name, shared=False, class_count=None, seed=0, precision="f32"):
    """Build a network by catalog name.

    Returns a :class:`Network`; its ``spec`` and ``registry`` attributes are
    the architecture description and the populated parameter registry.
    Parameter values are drawn lazily, so building the ImageNet models only
    to count them is cheap.
    """
    if isinstance(name, NetworkSpec):
        spec = name.with_sharing(shared)
        if class_count is not None:
            spec = replace(spec, class_count=class_count)
    else:
        spec = resolve_spec(name, shared, class_count)
    return Network(spec, seed=seed, precision=precision)


def count_parameters(net):
    return net.registry.num_parameters()


def sharing_savings(stage):
    """Parameters removed by sharing one stage's designated convolution."""
    merges = max(0, stage.participating_blocks - 1)
    co, ci, kh, kw = stage.designated_shape
    return merges * co * ci * kh * kw


def total_savings(spec):
    return sum(sharing_savings(st) for st in spec.stages)


@dataclass(frozen=True)
class ConvCounts:
    """Distinct convolution counts.

    ``distinct`` counts convolution slots actually present (stem, block and
    projection convolutions; the classifier is excluded). ``idealized`` is
    the nominal depth minus one per merged block when every block of a
    stage shares; this is the convention of the published counts.
    """

    stem: int
    block: int
    projection: int
    idealized: int

    @property
    def distinct(self):
        return self.stem + self.block + self.projection


def count_distinct_convs(net):
    stem = len({l.param_id for l in net.stem.layers if hasattr(l, "param_id")})
    block, proj = set(), set()
    for b in net.blocks:
        for conv in b.convs:
            (proj if conv.instance_id.endswith(".proj") else block).add(conv.param_id)
    spec = net.spec
    merges = sum(st.num_blocks - 1 for st in spec.stages) if spec.shared else 0
    return ConvCounts(stem, len(block), len(proj), spec.depth - merges)


def list_architectures(dataset=None):
    """Table rows for the reference architectures, optionally by dataset."""
    rows = []
    for name, spec in CATALOG.items():
        if not spec.reference or (dataset and spec.dataset != dataset):
            continue
        unshared = count_parameters(build(name, shared=False))
        shared_net = build(name, shared=True)
        shared = count_parameters(shared_net)
        rows.append({
            "name": name,
            "dataset": DATASET_LABELS[spec.dataset],
            "depth": spec.depth,
            "params": unshared,
            "params_shared": shared,
            "reduction_pct": 100.0 * (unshared - shared) / unshared,
            "convs": spec.depth,
            "convs_shared": count_distinct_convs(shared_net).idealized,
        })
    return rows
