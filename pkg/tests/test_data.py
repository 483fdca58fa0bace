from collections import Counter

import numpy as np
import pytest

from shareconv.data import (
    CIFAR_FILES, AugmentConfig, Dataset, augment, batches, blob_templates, channel_stats,
    dataset_hash, flip, load_cifar_binary, read_cifar_file, standardize, synthetic_blobs,
    write_cifar_file,
)


def _fake_cifar(directory, variant, records, seed=0):
    rng = np.random.default_rng(seed)
    train, test, label_bytes, classes = CIFAR_FILES[variant]
    for name, _ in train + test:
        images = rng.integers(0, 256, (records, 3, 32, 32), dtype=np.uint8)
        labels = rng.integers(0, classes, records)
        coarse = rng.integers(0, 20, records) if label_bytes == 2 else None
        write_cifar_file(directory / name, images, labels, coarse)


class _Always:
    """Generator stand-in whose coin flips always come up 'flip'."""

    def random(self):
        return 0.0


def test_write_then_read_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, (7, 3, 32, 32), dtype=np.uint8)
    labels = rng.integers(0, 10, 7)
    write_cifar_file(tmp_path / "a.bin", images, labels)
    got_x, got_y = read_cifar_file(tmp_path / "a.bin", expected_records=7)
    np.testing.assert_array_equal(got_x, images)
    np.testing.assert_array_equal(got_y, labels)


def test_two_label_layout_uses_fine_label(tmp_path):
    images = np.zeros((3, 3, 32, 32), np.uint8)
    write_cifar_file(tmp_path / "b.bin", images, [5, 6, 7], coarse=[1, 1, 2])
    _, labels = read_cifar_file(tmp_path / "b.bin", label_bytes=2)
    assert labels.tolist() == [5, 6, 7]


def test_wrong_size_names_byte_counts(tmp_path):
    (tmp_path / "c.bin").write_bytes(b"\0" * 3073 * 2)
    with pytest.raises(ValueError, match="expected 30730 bytes, found 6146"):
        read_cifar_file(tmp_path / "c.bin", expected_records=10)
    (tmp_path / "d.bin").write_bytes(b"\0" * 100)
    with pytest.raises(ValueError, match="found 100"):
        read_cifar_file(tmp_path / "d.bin")


def test_all_zero_file(tmp_path):
    (tmp_path / "z.bin").write_bytes(b"\0" * 3073 * 4)
    images, labels = read_cifar_file(tmp_path / "z.bin")
    assert not labels.any()
    mean, std = channel_stats(images)
    np.testing.assert_array_equal(mean, 0)
    np.testing.assert_array_equal(std, 1)  # constant channel: std replaced by 1
    assert not standardize(images, mean, std).any()


def test_full_size_record_counts(tmp_path):
    _fake_cifar(tmp_path, "cifar10", 10000)
    train, test = load_cifar_binary(tmp_path, "cifar10")
    assert len(train) == 50000 and len(test) == 10000
    assert train.images.shape == (50000, 3, 32, 32) and train.class_count == 10
    np.testing.assert_allclose(train.images.mean(axis=(0, 2, 3)), 0, atol=1e-4)
    np.testing.assert_allclose(train.images.std(axis=(0, 2, 3)), 1, atol=1e-3)


def test_cifar100_record_count_enforced(tmp_path):
    train, test, _, _ = CIFAR_FILES["cifar100"]
    rng = np.random.default_rng(1)
    for name, _ in train + test:
        n = 10
        write_cifar_file(tmp_path / name, rng.integers(0, 256, (n, 3, 32, 32)),
                         rng.integers(0, 100, n), rng.integers(0, 20, n))
    with pytest.raises(ValueError, match="expected"):
        load_cifar_binary(tmp_path, "cifar100")


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_cifar_binary(tmp_path, "cifar10")


def test_label_out_of_range():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 3, 4, 4)), np.array([0, 4]), 4)


def test_flip_is_an_involution():
    x = np.random.default_rng(0).standard_normal((3, 5, 6))
    once = augment(x, AugmentConfig(), _Always())
    np.testing.assert_array_equal(once, x[..., ::-1])
    np.testing.assert_array_equal(augment(once, AugmentConfig(), _Always()), x)
    np.testing.assert_array_equal(flip(flip(x)), x)


def test_augment_all_off_is_identity():
    x = np.random.default_rng(0).standard_normal((3, 5, 6))
    out = augment(x, AugmentConfig(horizontal_flip=False), np.random.default_rng(0))
    np.testing.assert_array_equal(out, x)


def test_crop_keeps_shape():
    x = np.random.default_rng(0).standard_normal((3, 8, 8))
    out = augment(x, AugmentConfig(False, crop_pad=4), np.random.default_rng(1))
    assert out.shape == x.shape


def test_augmentation_stream_is_reproducible():
    data = synthetic_blobs(4, 25, size=8)

    def first_hundred():
        xs = [x for x, _ in batches(data, 10, shuffle_seed=3,
                                    augment_config=AugmentConfig(crop_pad=2),
                                    augment_seed=4)]
        return dataset_hash(np.concatenate(xs)[:100])

    assert first_hundred() == first_hundred()


def test_blobs():
    data = synthetic_blobs(4, 10)
    assert len(data) == 40 and data.images.shape == (40, 3, 16, 16)
    assert sorted(Counter(data.labels.tolist()).values()) == [10] * 4
    clean = synthetic_blobs(4, 5, noise=0.0)
    for c in range(4):
        imgs = clean.images[clean.labels == c]
        assert (imgs == imgs[0]).all()


def test_nearest_template_classifier_is_perfect_on_clean_data():
    clean = synthetic_blobs(6, 5, noise=0.0)
    t = blob_templates(6).astype(np.float32)
    d = ((clean.images[:, None] - t[None]) ** 2).sum(axis=(2, 3, 4))
    assert (d.argmin(axis=1) == clean.labels).all()


@pytest.mark.parametrize("prefetch", [0, 2])
def test_batches_sizes_and_multiset(prefetch):
    data = Dataset(np.zeros((10, 3, 2, 2)), np.arange(10) % 4, 4)
    out = list(batches(data, 3, shuffle_seed=1, prefetch=prefetch))
    assert [len(y) for _, y in out] == [3, 3, 3, 1]
    assert Counter(np.concatenate([y for _, y in out]).tolist()) == Counter(
        data.labels.tolist())


def test_batches_same_seed_same_order():
    data = synthetic_blobs(4, 5, size=4)
    order = lambda s: np.concatenate([y for _, y in batches(data, 4, shuffle_seed=s)])  # noqa: E731
    np.testing.assert_array_equal(order(7), order(7))
    assert not np.array_equal(
        np.concatenate([x for x, _ in batches(data, 4, shuffle_seed=7)]),
        np.concatenate([x for x, _ in batches(data, 4, shuffle_seed=8)]))


def test_early_exit_stops_producer():
    data = synthetic_blobs(4, 50, size=4)
    gen = batches(data, 2, shuffle_seed=0, prefetch=1)
    next(gen)
    gen.close()


def test_bad_batch_size():
    with pytest.raises(ValueError):
        list(batches(synthetic_blobs(2, 2, size=4), 0))


def test_standardization_statistics():
    images = np.random.default_rng(2).integers(0, 256, (64, 3, 8, 8), dtype=np.uint8)
    mean, std = channel_stats(images)
    out = standardize(images, mean, std, dtype=np.float64)
    assert np.abs(out.mean(axis=(0, 2, 3))).max() <= 1e-6
    assert np.abs(out.std(axis=(0, 2, 3)) - 1).max() <= 1e-6
