"""Named-parameter stores and the bit-exact checkpoint container.

Checkpoint layout: magic b"HBCK", little-endian uint64 header length,
a UTF-8 JSON header {"config": {...}, "params": [{"name", "shape",
"offset"}, ...]}, then a flat little-endian float32 blob. Offsets are
element offsets into the blob.
"""

import dataclasses
import json
import struct

import numpy as np
import torch

from .unet import UNetConfig

MAGIC = b"HBCK"


class CheckpointError(ValueError):
    pass


def count_params(store):
    return sum(t.numel() for t in store.values())


def clone_store(store):
    return {k: v.detach().clone() for k, v in store.items()}


def stores_equal(a, b):
    return a.keys() == b.keys() and all(torch.equal(a[k], b[k]) for k in a)


def save_checkpoint(path, store, config):
    entries = []
    chunks = []
    offset = 0
    for name in store:
        arr = store[name].detach().cpu().to(torch.float32).numpy().astype("<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(np.ascontiguousarray(arr))
        offset += arr.size
    header = json.dumps(
        {"config": dataclasses.asdict(config), "params": entries},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for chunk in chunks:
            f.write(chunk.tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise CheckpointError(f"not a checkpoint file: {path}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        blob = f.read()
    flat = np.frombuffer(blob, dtype="<f4")
    store = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = flat[start:start + n].reshape(shape).copy()
        store[entry["name"]] = torch.from_numpy(arr)
    cfg = header["config"]
    cfg["channel_mults"] = tuple(cfg["channel_mults"])
    cfg["blocks_per_level"] = tuple(cfg["blocks_per_level"])
    if cfg.get("up_blocks_per_level") is not None:
        cfg["up_blocks_per_level"] = tuple(cfg["up_blocks_per_level"])
    return store, UNetConfig(**cfg)
