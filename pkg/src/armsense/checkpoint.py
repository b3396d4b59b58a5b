"""Weight checkpoint file: magic "RFSW", then per-parameter records of
(u32 name length, utf-8 name, u32 rank, u32 dims..., little-endian float32 payload)."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import BadMagic, TruncatedPacket

WEIGHTS_MAGIC = b"RFSW"


def save_weights(path: Path, named: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(WEIGHTS_MAGIC)
        for name, arr in named.items():
            encoded = name.encode("utf-8")
            arr = np.ascontiguousarray(arr, dtype="<f4")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_weights(path: Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != WEIGHTS_MAGIC:
        raise BadMagic(f"{path}: expected {WEIGHTS_MAGIC!r}")
    out: dict[str, np.ndarray] = {}
    pos = 4
    total = len(raw)

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > total:
            raise TruncatedPacket(f"{path}: record cut short at byte {pos}")
        chunk = raw[pos : pos + n]
        pos += n
        return chunk

    while pos < total:
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        payload = take(4 * count)
        out[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return out
