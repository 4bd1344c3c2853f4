"""Self-describing binary checkpoint container.

Byte layout (all integers little-endian):
    magic   : 8 bytes  b"ACSSCKP1"
    cfg_len : uint32   length of the UTF-8 JSON config header
    cfg     : cfg_len bytes, JSON object (model kind + hyperparameters)
    count   : uint32   number of tensor entries
    entries : repeated
        name_len : uint16
        name     : name_len bytes UTF-8
        ndim     : uint8
        dims     : ndim * uint64
        data     : prod(dims) * float64 little-endian, C order

Identical parameter values serialize to identical bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"ACSSCKP1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, config: dict, tensors: dict[str, np.ndarray]) -> None:
    cfg_bytes = json.dumps(config, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(cfg_bytes)))
        f.write(cfg_bytes)
        f.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f8")
            nb = name.encode()
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        if f.read(8) != MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
        (cfg_len,) = struct.unpack("<I", f.read(4))
        config = json.loads(f.read(cfg_len).decode())
        (count,) = struct.unpack("<I", f.read(4))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode()
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack(f"<{ndim}Q", f.read(8 * ndim))
            n = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            data = np.frombuffer(f.read(8 * n), dtype="<f8").reshape(shape)
            tensors[name] = data.copy()
    return config, tensors


def save_model(path, model, kind: str, extra: dict | None = None) -> None:
    from dataclasses import asdict
    config = {"kind": kind, **asdict(model.cfg)}
    if extra:
        config.update(extra)
    save_checkpoint(path, config, {k: p.value for k, p in model.named_params().items()})


def load_into(model, tensors: dict[str, np.ndarray]) -> None:
    params = model.named_params()
    missing = set(params) - set(tensors)
    surplus = set(tensors) - set(params)
    if missing or surplus:
        raise CheckpointError(
            f"parameter names mismatch: missing={sorted(missing)} surplus={sorted(surplus)}")
    for name, p in params.items():
        if p.value.shape != tensors[name].shape:
            raise CheckpointError(f"{name}: shape {tensors[name].shape} != {p.value.shape}")
        p.value[...] = tensors[name]
