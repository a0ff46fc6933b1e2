"""Binary checkpoint format: header JSON plus named raw tensor sections.

Layout: 8-byte magic, uint32 version, uint64 header length, the header as
canonical JSON (sorted keys), then tensor payloads concatenated in header
directory order.  Tensors are little-endian reals; the per-file dtype flag
is ``f4`` or ``f8`` (64-bit test checkpoints).  Saving the result of a load
reproduces the input byte for byte.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SESSCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, *, config: dict, vocab: dict, theta: float | None,
                    epoch: int, rng_state: dict | None, tensors: dict[str, np.ndarray],
                    steps: dict[str, int] | None = None, dtype: str = "f8",
                    extra: dict | None = None) -> None:
    if dtype not in ("f4", "f8"):
        raise CheckpointError(f"dtype flag must be 'f4' or 'f8', got {dtype!r}")
    np_dtype = np.dtype("<f4") if dtype == "f4" else np.dtype("<f8")
    names = sorted(tensors)
    directory = []
    payloads = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype=np_dtype)
        raw = arr.tobytes(order="C")
        directory.append({"name": name, "shape": list(arr.shape),
                          "offset": offset, "nbytes": len(raw)})
        payloads.append(raw)
        offset += len(raw)
    header = {
        "config": config,
        "vocab": vocab,
        "theta": theta,
        "epoch": epoch,
        "rng_state": rng_state,
        "dtype": dtype,
        "steps": steps or {},
        "tensors": directory,
        "extra": extra or {},
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for raw in payloads:
            fh.write(raw)


def load_checkpoint(path: str | Path):
    """Returns (header dict, {name: ndarray})."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        np_dtype = np.dtype("<f4") if header["dtype"] == "f4" else np.dtype("<f8")
        blob = fh.read()
    tensors = {}
    for entry in header["tensors"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        arr = np.frombuffer(blob[start:start + nbytes], dtype=np_dtype)
        tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return header, tensors
