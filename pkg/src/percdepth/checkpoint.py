"""Binary checkpoint format for network parameters.

Layout: magic bytes ``PDGC``, format version as u32, then one record per
tensor: name length (u32) + UTF-8 name, shape rank (u32) + dims as u32, and
the payload as 32-bit little-endian IEEE floats.  All integers are little
endian.  Records are read until end of file.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"PDGC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_pdgc(path, tensors: dict[str, torch.Tensor | np.ndarray]) -> None:
    """Write named tensors to ``path`` in PDGC format (float32 payloads)."""
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for name, value in tensors.items():
        arr = (
            value.detach().cpu().numpy() if isinstance(value, torch.Tensor) else np.asarray(value)
        ).astype("<f4")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def _take(buf: bytes, offset: int, size: int, what: str) -> tuple[bytes, int]:
    if offset + size > len(buf):
        raise CheckpointError(
            f"truncated checkpoint: needed {size} bytes for {what} at offset {offset}, "
            f"file has {len(buf)} bytes"
        )
    return buf[offset : offset + size], offset + size


def load_pdgc(path) -> dict[str, np.ndarray]:
    """Read a PDGC file back into a dict of float32 arrays."""
    buf = Path(path).read_bytes()
    head, offset = _take(buf, 0, 4, "magic")
    if head != MAGIC:
        raise CheckpointError(f"bad magic bytes {head!r}, expected {MAGIC!r}")
    raw, offset = _take(buf, offset, 4, "version")
    version = struct.unpack("<I", raw)[0]
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    tensors: dict[str, np.ndarray] = {}
    while offset < len(buf):
        raw, offset = _take(buf, offset, 4, "name length")
        name_len = struct.unpack("<I", raw)[0]
        raw, offset = _take(buf, offset, name_len, "name")
        name = raw.decode("utf-8")
        raw, offset = _take(buf, offset, 4, "rank")
        rank = struct.unpack("<I", raw)[0]
        raw, offset = _take(buf, offset, 4 * rank, "dims")
        shape = struct.unpack(f"<{rank}I", raw)
        count = int(np.prod(shape)) if rank else 1
        raw, offset = _take(buf, offset, 4 * count, f"payload of {name!r}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return tensors


def save_networks(path, nets: dict[str, torch.nn.Module]) -> None:
    """Save several role-tagged networks into one PDGC file.

    Record names are ``<role>/<state_dict key>``.
    """
    tensors = {}
    for role, net in nets.items():
        for key, value in net.state_dict().items():
            tensors[f"{role}/{key}"] = value
    save_pdgc(path, tensors)


def load_networks(path, nets: dict[str, torch.nn.Module]) -> None:
    """Restore role-tagged networks in place from a PDGC file."""
    tensors = load_pdgc(path)
    for role, net in nets.items():
        state = {}
        prefix = f"{role}/"
        for name, arr in tensors.items():
            if name.startswith(prefix):
                state[name[len(prefix) :]] = torch.from_numpy(arr)
        missing = set(net.state_dict()) - set(state)
        if missing:
            raise CheckpointError(f"checkpoint misses tensors for {role}: {sorted(missing)[:3]}")
        net.load_state_dict(state)
