"""Portable binary checkpoint format.

Layout (all integers little-endian):
    magic "GDBCKPT1" | u32 version | u32 entry count |
    entries: u32 name length, name bytes, u32 rank, u32 dims...,
             float32 raw values |
    u64 checksum (BLAKE2b-64 of everything preceding it)

The training step is carried as a scalar entry named ``meta.step``.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError

MAGIC = b"GDBCKPT1"
VERSION = 1

__all__ = ["checkpoint_save", "checkpoint_load"]


def _digest(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=8).digest()


def checkpoint_save(model: torch.nn.Module, path, step: int = 0) -> None:
    entries = [("meta.step", np.asarray([float(step)], dtype=np.float32))]
    for name, tensor in model.state_dict().items():
        entries.append((name, tensor.detach().cpu().numpy().astype("<f4")))

    chunks = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, arr in entries:
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    payload = b"".join(chunks)
    Path(path).write_bytes(payload + _digest(payload))


def _parse(path) -> dict:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 16 or raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    payload, checksum = raw[:-8], raw[-8:]
    if _digest(payload) != checksum:
        raise CheckpointError(f"{path}: corrupt checkpoint (checksum mismatch)")
    off = 8
    version, count = struct.unpack_from("<II", payload, off)
    off += 8
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    entries = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", payload, off)
        off += 4
        name = payload[off:off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<I", payload, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", payload, off)
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=off).reshape(dims)
        off += 4 * n
        entries[name] = arr
    return entries


def checkpoint_load(model: torch.nn.Module, path) -> int:
    """Restore parameters into ``model``; returns the stored step count."""
    entries = _parse(path)
    step = int(entries.pop("meta.step", np.zeros(1))[0])
    state = model.state_dict()
    for name in state:
        if name not in entries:
            raise CheckpointError(f"checkpoint is missing tensor {name!r}")
    for name, arr in entries.items():
        if name not in state:
            raise CheckpointError(f"checkpoint has unexpected tensor {name!r}")
        if tuple(state[name].shape) != arr.shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: model {tuple(state[name].shape)} "
                f"vs checkpoint {arr.shape}")
    model.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in entries.items()})
    return step
