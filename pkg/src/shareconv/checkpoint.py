"""Portable checkpoint format (little-endian throughout).

    b"SHRN" | u32 version | u32 len + utf-8 architecture name | u8 shared
    | u32 class count | u32 epoch | u32 entry count | entries

Each entry is a u32 length-prefixed utf-8 name followed by a tensor in the
format of :mod:`shareconv.tensor`. Entries are the parameter slots in
registry order, then the batchnorm running statistics sorted by name.
"""

import struct

from .catalog import build
from .tensor import read_tensor, write_tensor

MAGIC = b"SHRN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _write_str(fp, s):
    b = s.encode("utf-8")
    fp.write(struct.pack("<I", len(b)))
    fp.write(b)


def _read_str(fp):
    (n,) = struct.unpack("<I", fp.read(4))
    return fp.read(n).decode("utf-8")


def save_checkpoint(path, net, epoch=0):
    reg = net.registry
    entries = [(slot.name, slot.value) for slot in reg]
    entries += [(name, reg.buffers[name]) for name in sorted(reg.buffers)]
    with open(path, "wb") as fp:
        fp.write(MAGIC)
        fp.write(struct.pack("<I", VERSION))
        _write_str(fp, net.spec.name)
        fp.write(struct.pack("<BII", int(net.spec.shared), net.spec.class_count, epoch))
        fp.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            _write_str(fp, name)
            write_tensor(fp, arr)


def load_checkpoint(path):
    """Rebuild the named architecture and fill it from ``path``.

    Returns ``(network, epoch)``. Every stored name and shape must match the
    rebuilt architecture exactly.
    """
    with open(path, "rb") as fp:
        if fp.read(4) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", fp.read(4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        arch = _read_str(fp)
        shared, classes, epoch = struct.unpack("<BII", fp.read(9))
        (count,) = struct.unpack("<I", fp.read(4))
        entries = [(_read_str(fp), read_tensor(fp)) for _ in range(count)]
        if fp.read(1):
            raise CheckpointError(f"{path}: trailing bytes")

    precision = entries[0][1].dtype if entries else "f32"
    net = build(arch, shared=bool(shared), class_count=classes, precision=precision)
    reg = net.registry
    expected = [s.name for s in reg] + sorted(reg.buffers)
    got = [name for name, _ in entries]
    if got != expected:
        missing = sorted(set(expected) - set(got))
        extra = sorted(set(got) - set(expected))
        raise CheckpointError(
            f"{path}: entries do not match {arch!r} (missing {missing[:5]}, "
            f"unexpected {extra[:5]})"
        )
    for name, arr in entries:
        if name in reg:
            slot = reg[name]
            if arr.shape != slot.shape:
                raise CheckpointError(f"{name}: stored {arr.shape} vs {slot.shape}")
            slot.value = arr
        else:
            if arr.shape != reg.buffers[name].shape:
                raise CheckpointError(
                    f"{name}: stored {arr.shape} vs {reg.buffers[name].shape}")
            reg.buffers[name] = arr.astype(reg.dtype)
    return net, epoch
