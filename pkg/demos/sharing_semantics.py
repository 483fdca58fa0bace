"""
Sharing is not equal initialization
===================================

A shared stage and an unshared copy whose kernels start equal compute the
same function. Their gradients agree too, once the copies' gradients are
summed. After one update they part ways: the copies move separately, the
shared kernel moves by the sum.
"""

import numpy as np

from shareconv.catalog import build, reduced
from shareconv.ops import softmax_cross_entropy
from shareconv.optim import OptimizerConfig, step
from shareconv.verify import tied_clone

spec = reduced("wrn-40-4", 16, 3)          # 3 blocks per stage, widths <= 16
net = build(spec, shared=True, precision="f64")
clone, ties = tied_clone(net)

rng = np.random.default_rng(0)
x = rng.standard_normal((4, 3, 8, 8))
y = rng.integers(0, 10, 4)

out = net.forward(x)
print("forward gap   ", np.abs(out - clone.forward(x)).max())

_, g = softmax_cross_entropy(out, y)
net.backward(g)
clone.backward(g)

# each shared slot receives one contribution per bound block
for sid, copies in ties.items():
    summed = sum(clone.registry[c].grad for c in copies)
    print(net.registry[sid].name, "bindings", len(copies),
          "grad gap", np.abs(net.registry[sid].grad - summed).max())

opt = OptimizerConfig(alpha=0.1, gamma=0.9)
step(net.registry, opt)
step(clone.registry, opt)
print("after one step", np.abs(net.forward(x) - clone.forward(x)).max())

# the tied copies no longer agree with each other either
first, second = (clone.registry[c].value for c in ties[min(ties)][:2])
print("copy drift    ", np.abs(first - second).max())
