"""
Training a small shared network
===============================

Four-class Gaussian-blob images, a two-stage shared net, 20 epochs of
momentum SGD. Takes about half a minute on one CPU core.
"""

import logging
import sys

from shareconv.catalog import build, count_parameters
from shareconv.train import TrainConfig, loss_window_violations, train

logging.basicConfig(level=logging.INFO, format="%(message)s")

out_dir = sys.argv[1] if len(sys.argv) > 1 else None
cfg = TrainConfig(arch="toy", shared=True, out_dir=out_dir)

print("parameters:", count_parameters(build("toy", shared=True)),
      "shared vs", count_parameters(build("toy")), "unshared")

result = train(cfg)
losses = [r.train_loss for r in result.history]
print(f"final top-1 error {result.final.top1_error:.1f}%")
print("loss windows that went up:", loss_window_violations(losses))
if out_dir:
    print("metrics and checkpoints in", out_dir)
