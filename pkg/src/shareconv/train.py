"""Training and evaluation loops, metrics file and top-k error."""

import csv
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import data
from .catalog import build
from .checkpoint import load_checkpoint, save_checkpoint
from .ops import softmax_cross_entropy
from .optim import OptimizerConfig, lr_at, step

log = logging.getLogger(__name__)

METRICS_HEADER = ["epoch", "train_loss", "top1_error", "top5_error", "lr", "seconds"]


@dataclass
class TrainConfig:
    arch: str = "toy"
    shared: bool = True
    dataset: str = "synthetic"
    data_dir: str | None = None
    epochs: int = 20
    batch_size: int = 32
    optimizer: OptimizerConfig = field(
        default_factory=lambda: OptimizerConfig(0.05, 0.9, 5e-4, ((10, 0.2), (15, 0.2))))
    seed: int = 0
    out_dir: str | None = None
    precision: str = "f32"
    augment: data.AugmentConfig | None = None
    # synthetic data: samples per class for train / test, image side, noise std
    synthetic_per_class: int = 200
    synthetic_test_per_class: int = 50
    synthetic_size: int = 16
    synthetic_noise: float = 1.0
    train_subset: int | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


@dataclass
class MetricsRecord:
    epoch: int
    train_loss: float
    top1_error: float
    top5_error: float
    lr: float
    seconds: float

    def row(self):
        return [self.epoch, f"{self.train_loss:.6f}", f"{self.top1_error:.4f}",
                f"{self.top5_error:.4f}", f"{self.lr:.6g}", f"{self.seconds:.3f}"]


@dataclass
class TrainResult:
    net: object
    history: list

    @property
    def final(self):
        return self.history[-1]


def topk_error(logits, labels, k):
    """Percentage of samples whose label is not among the k largest logits."""
    k = min(k, logits.shape[1])
    labels = np.asarray(labels)
    # rank = number of logits strictly greater than the true one
    true = logits[np.arange(len(labels)), labels]
    rank = (logits > true[:, None]).sum(axis=1)
    return 100.0 * float(np.mean(rank >= k))


def predict(net, images, batch_size=256):
    out = [net.forward(images[i : i + batch_size].astype(net.registry.dtype),
                       train=False)
           for i in range(0, len(images), batch_size)]
    return np.concatenate(out)


def evaluate(net_or_path, dataset, batch_size=256):
    """Top-1 and top-5 error (%) with eval-mode batchnorm and no dropout."""
    net = net_or_path
    if isinstance(net_or_path, (str, os.PathLike)):
        net, _ = load_checkpoint(net_or_path)
    logits = predict(net, dataset.images, batch_size)
    return topk_error(logits, dataset.labels, 1), topk_error(logits, dataset.labels, 5)


def load_datasets(config, class_count=None):
    if config.dataset == "synthetic":
        classes = class_count or 4
        kw = dict(size=config.synthetic_size, noise=config.synthetic_noise)
        train_set = data.synthetic_blobs(classes, config.synthetic_per_class,
                                         seed=config.seed, **kw)
        test_set = data.synthetic_blobs(classes, config.synthetic_test_per_class,
                                        seed=config.seed + 10_000, **kw)
    elif config.dataset in ("cifar10", "cifar100"):
        if not config.data_dir:
            raise ValueError(f"--data-dir is required for {config.dataset}")
        train_set, test_set = data.load_cifar_binary(config.data_dir, config.dataset)
    else:
        raise ValueError(f"unknown dataset {config.dataset!r}")
    if config.train_subset:
        train_set = train_set.subset(config.train_subset)
    return train_set, test_set


def _class_count_for(config):
    return {"cifar10": 10, "cifar100": 100}.get(config.dataset)


def write_metrics(path, history):
    with open(path, "w", newline="") as fp:
        w = csv.writer(fp)
        w.writerow(METRICS_HEADER)
        for rec in history:
            w.writerow(rec.row())


def read_metrics(path):
    with open(path, newline="") as fp:
        rows = list(csv.DictReader(fp))
    return [MetricsRecord(int(r["epoch"]), float(r["train_loss"]),
                          float(r["top1_error"]), float(r["top5_error"]),
                          float(r["lr"]), float(r["seconds"])) for r in rows]


def train(config, train_set=None, test_set=None):
    """Train ``config.arch`` and return a :class:`TrainResult`.

    When ``config.out_dir`` is set, ``metrics.csv`` gets one row per epoch
    (rewritten after each epoch), ``best.shrn`` is written whenever test
    top-1 error improves and ``final.shrn`` at the end.
    """
    classes = _class_count_for(config)
    if train_set is None:
        train_set, test_set = load_datasets(config, classes)
    if classes is None:
        classes = train_set.class_count
    net = build(config.arch, shared=config.shared, class_count=classes,
                seed=config.seed, precision=config.precision)
    reg = net.registry
    dropout_rng = np.random.default_rng([config.seed, 1])
    if config.out_dir:
        os.makedirs(config.out_dir, exist_ok=True)

    history = []
    best = math.inf
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        lr = lr_at(config.optimizer, epoch)
        total, seen = 0.0, 0
        stream = data.batches(train_set, config.batch_size,
                              shuffle_seed=[config.seed, 0, epoch],
                              augment_config=config.augment,
                              augment_seed=[config.seed, 2, epoch])
        for b, (x, y) in enumerate(stream):
            reg.zero_grads()
            logits = net.forward(x.astype(reg.dtype), train=True, rng=dropout_rng)
            loss, grad = softmax_cross_entropy(logits, y)
            if not math.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch + 1}, batch {b + 1}")
            net.backward(grad)
            step(reg, config.optimizer, epoch)
            total += loss * len(y)
            seen += len(y)
        top1, top5 = (evaluate(net, test_set) if test_set is not None
                      else (math.nan, math.nan))
        rec = MetricsRecord(epoch + 1, total / seen, top1, top5, lr,
                            time.perf_counter() - t0)
        history.append(rec)
        log.info("epoch %d loss %.4f top1 %.2f%% top5 %.2f%% lr %.4g",
                 rec.epoch, rec.train_loss, top1, top5, lr)
        if config.out_dir:
            write_metrics(os.path.join(config.out_dir, "metrics.csv"), history)
            if top1 < best:
                best = top1
                save_checkpoint(os.path.join(config.out_dir, "best.shrn"), net,
                                epoch + 1)
    if config.out_dir:
        save_checkpoint(os.path.join(config.out_dir, "final.shrn"), net, config.epochs)
    return TrainResult(net, history)


def loss_window_violations(losses, start=5, window=5):
    """Count 5-epoch windows (starting after epoch ``start``) whose last loss
    exceeds their first."""
    tail = list(losses)[start:]
    return sum(1 for i in range(len(tail) - window + 1)
               if tail[i + window - 1] > tail[i])
