"""CIFAR binary ingestion, synthetic blob data, augmentation and batching."""

import hashlib
import os
import queue
import threading
from dataclasses import dataclass

import numpy as np

CIFAR_SIDE = 32
CIFAR_PIXELS = 3 * CIFAR_SIDE * CIFAR_SIDE
# variant -> (train files, test files, label bytes, classes); files are (name, records)
CIFAR_FILES = {
    "cifar10": ([(f"data_batch_{i}.bin", 10000) for i in range(1, 6)],
                [("test_batch.bin", 10000)], 1, 10),
    "cifar100": ([("train.bin", 50000)], [("test.bin", 10000)], 2, 100),
}


@dataclass
class Dataset:
    """Images ``(N, 3, H, W)`` and integer labels ``(N,)``."""

    images: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[1] != 3:
            raise ValueError(f"images must be N x 3 x H x W, got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")
        if self.labels.size and (self.labels.min() < 0
                                 or self.labels.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")

    def __len__(self):
        return len(self.labels)

    def subset(self, n):
        return Dataset(self.images[:n], self.labels[:n], self.class_count)


def read_cifar_file(path, label_bytes=1, expected_records=None):
    """Parse one CIFAR binary file into ``(uint8 images, labels)``.

    With two label bytes (CIFAR-100) the second, fine, label is used.
    """
    size = os.path.getsize(path)
    rec = label_bytes + CIFAR_PIXELS
    if size % rec or (expected_records is not None and size != expected_records * rec):
        want = expected_records * rec if expected_records else f"a multiple of {rec}"
        raise ValueError(f"{path}: expected {want} bytes, found {size}")
    raw = np.fromfile(path, dtype=np.uint8).reshape(-1, rec)
    labels = raw[:, label_bytes - 1].astype(np.int64)
    images = raw[:, label_bytes:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE)
    return images, labels


def write_cifar_file(path, images, labels, coarse=None):
    """Write uint8 images ``(N, 3, 32, 32)`` in CIFAR binary layout.

    Passing ``coarse`` labels produces the two-label CIFAR-100 layout.
    """
    images = np.asarray(images, dtype=np.uint8).reshape(len(images), -1)
    cols = [np.asarray(labels, dtype=np.uint8)[:, None]]
    if coarse is not None:
        cols.insert(0, np.asarray(coarse, dtype=np.uint8)[:, None])
    np.concatenate(cols + [images], axis=1).tofile(path)


def channel_stats(images):
    """Per-channel mean and std of [0, 1]-scaled uint8 images."""
    n = images.shape[0] * images.shape[2] * images.shape[3]
    s1 = np.zeros(3)
    s2 = np.zeros(3)
    for start in range(0, len(images), 5000):
        chunk = images[start : start + 5000].astype(np.float64) / 255.0
        s1 += chunk.sum(axis=(0, 2, 3))
        s2 += (chunk**2).sum(axis=(0, 2, 3))
    mean = s1 / n
    std = np.sqrt(np.maximum(s2 / n - mean**2, 0.0))
    return mean, np.where(std > 0, std, 1.0)


def standardize(images, mean, std, dtype=np.float32):
    out = np.empty(images.shape, dtype=dtype)
    m = mean[None, :, None, None]
    s = std[None, :, None, None]
    for start in range(0, len(images), 5000):
        chunk = images[start : start + 5000].astype(np.float64) / 255.0
        out[start : start + 5000] = (chunk - m) / s
    return out


def load_cifar_binary(directory, variant="cifar10", dtype=np.float32):
    """Load the train and test splits of a CIFAR binary distribution.

    Pixels are scaled to [0, 1] and standardized per channel with the
    training-set statistics.
    """
    if variant not in CIFAR_FILES:
        raise ValueError(f"unknown CIFAR variant {variant!r}")
    train_files, test_files, label_bytes, classes = CIFAR_FILES[variant]

    def load(files):
        parts = [read_cifar_file(os.path.join(directory, f), label_bytes, count)
                 for f, count in files]
        return (np.concatenate([p[0] for p in parts]),
                np.concatenate([p[1] for p in parts]))

    for f, _ in train_files + test_files:
        if not os.path.exists(os.path.join(directory, f)):
            raise FileNotFoundError(f"missing CIFAR file {os.path.join(directory, f)}")
    tr_x, tr_y = load(train_files)
    te_x, te_y = load(test_files)
    for y in (tr_y, te_y):
        if y.max(initial=0) >= classes:
            raise ValueError(f"label {y.max()} out of range for {variant}")
    mean, std = channel_stats(tr_x)
    return (Dataset(standardize(tr_x, mean, std, dtype), tr_y, classes),
            Dataset(standardize(te_x, mean, std, dtype), te_y, classes))


@dataclass(frozen=True)
class AugmentConfig:
    horizontal_flip: bool = True
    crop_pad: int | None = None

    def __post_init__(self):
        if self.crop_pad is not None and self.crop_pad < 0:
            raise ValueError("crop padding must be >= 0")


def flip(image):
    return image[..., ::-1].copy()


def augment(image, config, rng):
    """Random horizontal flip (p = 0.5) and optional zero-pad-and-crop."""
    if config.horizontal_flip and rng.random() < 0.5:
        image = flip(image)
    if config.crop_pad:
        p = config.crop_pad
        h, w = image.shape[-2:]
        padded = np.pad(image, ((0, 0), (p, p), (p, p)))
        i, j = rng.integers(0, 2 * p + 1, size=2)
        image = padded[:, i : i + h, j : j + w]
    return image


def synthetic_blobs(class_count, per_class, size=16, noise=0.3, seed=0,
                    dtype=np.float32):
    """Gaussian-blob classification data.

    Class ``c`` has its blob centred on a circle at angle ``2*pi*c/K``, with
    a class-specific colour mix across the three channels; samples add
    i.i.d. pixel noise of std ``noise`` to the class template.
    """
    rng = np.random.default_rng(seed)
    templates = blob_templates(class_count, size)
    labels = np.repeat(np.arange(class_count), per_class)
    images = templates[labels] + noise * rng.standard_normal(
        (len(labels), 3, size, size))
    order = rng.permutation(len(labels))
    return Dataset(images[order].astype(dtype), labels[order], class_count)


def blob_templates(class_count, size=16):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    centre, radius, width = (size - 1) / 2, size / 4, size / 6
    out = np.empty((class_count, 3, size, size))
    for c in range(class_count):
        a = 2 * np.pi * c / class_count
        cy, cx = centre + radius * np.sin(a), centre + radius * np.cos(a)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width**2))
        colour = 0.5 + 0.5 * np.cos(a + np.array([0.0, 2.0, 4.0]))
        out[c] = colour[:, None, None] * blob
    return out


def batches(dataset, batch_size, shuffle_seed=None, augment_config=None,
            augment_seed=None, prefetch=2):
    """Yield ``(images, labels)`` batches, the last one possibly partial.

    Order is a seeded permutation (or dataset order when ``shuffle_seed`` is
    None). Batches are assembled on a background thread with a bounded
    queue of ``prefetch`` items; the order seen by the consumer depends only
    on the seeds.
    """
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    n = len(dataset)
    order = (np.random.default_rng(shuffle_seed).permutation(n)
             if shuffle_seed is not None else np.arange(n))
    aug_rng = np.random.default_rng(augment_seed)

    def make(idx):
        x = dataset.images[idx]
        if augment_config is not None:
            x = np.stack([augment(img, augment_config, aug_rng) for img in x])
        return x, dataset.labels[idx]

    chunks = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if prefetch <= 0:
        for idx in chunks:
            yield make(idx)
        return

    q = queue.Queue(maxsize=prefetch)
    done = object()
    stop = threading.Event()

    def producer():
        try:
            for idx in chunks:
                if stop.is_set():
                    return
                q.put(make(idx))
        except BaseException as exc:  # surfaced to the consumer
            q.put(exc)
        q.put(done)

    t = threading.Thread(target=producer, daemon=True)
    t.start()
    try:
        while True:
            item = q.get()
            if item is done:
                break
            if isinstance(item, BaseException):
                raise item
            yield item
    finally:
        stop.set()
        while t.is_alive():
            try:
                q.get_nowait()
            except queue.Empty:
                t.join(0.01)


def dataset_hash(images):
    return hashlib.sha256(np.ascontiguousarray(images).tobytes()).hexdigest()
