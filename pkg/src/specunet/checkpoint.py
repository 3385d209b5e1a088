"""Model checkpoint file format.

Layout: magic ``b"SUNW"``, u32 LE version (1), u32 LE header length, UTF-8
JSON header, then raw little-endian float32 tensor blobs in header index
order. The header records the architecture config, the init seed, and for
each tensor (parameters and batchnorm running stats) its name, shape and
byte offset into the blob section. On-disk precision is always float32, the
production precision; loading therefore restores a float32 model bit-exactly.

Writes go through a temp file and an atomic rename, so a failed save never
leaves a partial checkpoint behind.
"""

import json
import os
import struct

import numpy as np

from . import ops
from .model import ArchitectureConfig, build_model

MAGIC = b"SUNW"
VERSION = 1


class CheckpointError(IOError):
    pass


def save(model, path):
    """Serialize a model (config, seed, parameters, running stats)."""
    tensors = model.named_params() + model.named_stats()
    index = []
    offset = 0
    blobs = []
    for name, arr in tensors:
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({
        "config": model.config.to_dict(),
        "seed": int(model.seed),
        "dtype": "float32",
        "tensors": index,
    }).encode("utf-8")
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<II", VERSION, len(header)))
            fh.write(header)
            for blob in blobs:
                fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path):
    """Restore a model from a checkpoint; never returns a partial model."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    if len(raw) < 12 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
        config = ArchitectureConfig(**header["config"])
        index = header["tensors"]
        seed = header["seed"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed header ({exc})") from None

    blob = raw[12 + hlen:]
    model = build_model(config, seed, dtype=np.float32)
    expected = dict(model.named_params() + model.named_stats())
    if {e["name"] for e in index} != set(expected):
        raise CheckpointError(f"{path}: tensor index does not match the "
                              f"architecture in the header")
    for entry in index:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * n
        if end > len(blob):
            raise CheckpointError(f"{path}: truncated tensor {entry['name']}")
        arr = np.frombuffer(blob[start:end], dtype="<f4").reshape(shape).copy()
        try:
            model.set_tensor(entry["name"], arr)
        except ops.ShapeError as exc:
            raise CheckpointError(f"{path}: {exc}") from None
    return model
