"""Checkpoint files.

Layout (little-endian)::

    b"SKG1" | u32 version | u32 metadata length | metadata JSON (canonical)
    | float32 arrays in manifest order | u32 CRC-32 of every preceding byte
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"SKG1"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: dict
    arrays: dict[str, np.ndarray]  # "<component>/<param or buffer name>" -> array
    optimizer: dict = field(default_factory=dict)
    rng_state: dict = field(default_factory=dict)
    epoch: int = 0
    history: list = field(default_factory=list)

    def component(self, prefix: str) -> dict[str, np.ndarray]:
        """Arrays under ``prefix/`` with the prefix stripped."""
        p = prefix + "/"
        return {k[len(p):]: v for k, v in self.arrays.items() if k.startswith(p)}


def canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode("ascii")


def to_bytes(cp: Checkpoint) -> bytes:
    manifest = [[name, list(arr.shape)] for name, arr in cp.arrays.items()]
    meta = {
        "config": cp.config,
        "manifest": manifest,
        "optimizer": cp.optimizer,
        "rng_state": cp.rng_state,
        "epoch": cp.epoch,
        "history": cp.history,
    }
    meta_b = canonical(meta)
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta_b)), meta_b]
    for arr in cp.arrays.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def from_bytes(buf: bytes) -> Checkpoint:
    if len(buf) < 16:
        raise CheckpointError("checkpoint truncated")
    if buf[:4] != MAGIC:
        raise CheckpointError(f"bad magic {buf[:4]!r}")
    (crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(buf[:-4]) & 0xFFFFFFFF != crc:
        raise CheckpointError("checksum mismatch")
    version, meta_len = struct.unpack("<II", buf[4:12])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    meta_end = 12 + meta_len
    if meta_end > len(buf) - 4:
        raise CheckpointError("checkpoint truncated")
    meta = json.loads(buf[12:meta_end].decode("ascii"))
    arrays, off = {}, meta_end
    for name, shape in meta["manifest"]:
        n = int(np.prod(shape)) if shape else 1
        end = off + 4 * n
        if end > len(buf) - 4:
            raise CheckpointError("checkpoint truncated")
        arrays[name] = np.frombuffer(buf[off:end], dtype="<f4").astype(np.float32).reshape(shape)
        off = end
    if off != len(buf) - 4:
        raise CheckpointError("trailing bytes after parameter arrays")
    return Checkpoint(meta["config"], arrays, meta["optimizer"], meta["rng_state"], meta["epoch"], meta["history"])


def save_checkpoint(path: str | os.PathLike, cp: Checkpoint) -> None:
    data = to_bytes(cp)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as f:
        return from_bytes(f.read())


def module_arrays(prefix: str, module) -> dict[str, np.ndarray]:
    return {f"{prefix}/{k}": v for k, v in module.state_dict().items()}
