"""
Binary weight checkpoints.

Layout (all integers little-endian):

    bytes 0-3       magic b"MTCK"
    uint32          format version
    uint32          length of the metadata block, followed by the metadata as UTF-8 JSON
    uint32          number of tensors
    per tensor:
        uint16      length of the name, followed by the UTF-8 name
        uint8       ndim, followed by ndim uint32 extents
        float64     row-major payload (little-endian)

The tensor order is preserved. Dump followed by load is bit-exact.
"""

import json
import struct
from collections import OrderedDict

import numpy as np

from .auxiliary import Container, CheckpointError

MAGIC = b"MTCK"
VERSION = 1


def checkpoint_dump(path, tensors, metadata=None):
    """
    :param path:        target file
    :param tensors:     ordered mapping name -> array (or sequence of pairs)
    :param metadata:    json-serializable dict
    """
    if hasattr(tensors, "items"):
        tensors = tensors.items()
    metadata = {} if metadata is None else metadata
    meta_bytes = json.dumps(metadata, sort_keys=True).encode("utf-8")

    chunks = [MAGIC, struct.pack("<II", VERSION, len(meta_bytes)), meta_bytes]
    tensors = list(tensors)
    chunks.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        arr = np.asarray(arr, dtype=np.float64)
        name_bytes = name.encode("utf-8")
        if len(name_bytes) > 0xFFFF or arr.ndim > 0xFF:
            msg = "tensor {} cannot be stored (name too long or too many dimensions)".format(name)
            raise CheckpointError(msg)
        chunks.append(struct.pack("<H", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack("<{}I".format(arr.ndim), *arr.shape))
        chunks.append(np.ascontiguousarray(arr).astype("<f8").tobytes())

    with open(path, "wb") as cfile:
        cfile.write(b"".join(chunks))


class _Reader(object):

    def __init__(self, data):
        self.data = data
        self.offset = 0

    def take(self, n, what):
        if self.offset + n > len(self.data):
            msg = "truncated checkpoint while reading {} (at byte offset {})".format(what, self.offset)
            raise CheckpointError(msg)
        res = self.data[self.offset:self.offset + n]
        self.offset += n
        return res

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def checkpoint_load(path):
    """
    :return:    Container with attributes `tensors` (OrderedDict name -> float64 array),
                `metadata` (dict) and `version`
    """
    with open(path, "rb") as cfile:
        reader = _Reader(cfile.read())

    if reader.take(4, "magic") != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic): {}".format(path))
    version, meta_len = reader.unpack("<II", "header")
    if version != VERSION:
        raise CheckpointError("unsupported checkpoint version {} (expected {})".format(version, VERSION))
    try:
        metadata = json.loads(reader.take(meta_len, "metadata").decode("utf-8"))
    except ValueError as err:
        raise CheckpointError("corrupt metadata block: {}".format(err))

    count, = reader.unpack("<I", "tensor count")
    tensors = OrderedDict()
    for _ in range(count):
        name_len, = reader.unpack("<H", "name length")
        name = reader.take(name_len, "tensor name").decode("utf-8")
        ndim, = reader.unpack("<B", "ndim of " + name)
        shape = reader.unpack("<{}I".format(ndim), "shape of " + name)
        n_bytes = 8 * int(np.prod(shape, dtype=np.int64))
        payload = reader.take(n_bytes, "payload of " + name)
        tensors[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)

    if reader.offset != len(reader.data):
        raise CheckpointError("trailing bytes after the last tensor (at byte offset {})".format(reader.offset))

    return Container(tensors=tensors, metadata=metadata, version=version)


def _prefixed(prefix, mapping):
    return [(prefix + name, arr) for name, arr in mapping.items()]


def save_training_state(path, model, optimizer=None, head=None, step=0, metadata=None):
    """
    Store the weights of `model` (and optionally `head`) plus the optimizer state.
    """
    entries = _prefixed("motionnet/", model.state_dict())
    if head is not None:
        entries += _prefixed("head/", head.state_dict())
    meta = dict(metadata or {})
    meta["step"] = int(step)
    if optimizer is not None:
        arrays, scalars = optimizer.state_dict()
        entries += _prefixed("adam/", arrays)
        meta["adam"] = scalars
    checkpoint_dump(path, entries, meta)


def _strip(prefix, tensors):
    return OrderedDict((name[len(prefix):], arr) for name, arr in tensors.items() if name.startswith(prefix))


def load_training_state(path, model=None, optimizer=None, head=None):
    """
    Restore what `save_training_state` wrote into the given objects.

    :return:    the loaded Container (metadata["step"] holds the step count)
    """
    ckpt = checkpoint_load(path)
    if model is not None:
        model.load_state_dict(_strip("motionnet/", ckpt.tensors))
    if head is not None:
        head.load_state_dict(_strip("head/", ckpt.tensors))
    if optimizer is not None:
        if "adam" not in ckpt.metadata:
            raise CheckpointError("checkpoint {} holds no optimizer state".format(path))
        optimizer.load_state_dict(_strip("adam/", ckpt.tensors), ckpt.metadata["adam"])
    return ckpt
