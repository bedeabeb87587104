"""Self-describing binary checkpoints.

Layout: magic ``ATVC``, uint32 format version, uint32 parameter count,
then per parameter: uint32 name length, UTF-8 name, uint32 rank,
uint32 shape dims, raw little-endian float32 data. All integers are
little-endian. Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"ATVC"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save(path, params: dict[str, Tensor | np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(params)))
        for name, p in params.items():
            arr = np.ascontiguousarray(
                p.data if isinstance(p, Tensor) else p, dtype="<f4"
            )
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load(path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise CheckpointError(f"bad magic in {path}")
        version, count = struct.unpack("<II", f.read(8))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", f.read(4))
            name = f.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{rank}I", f.read(4 * rank))
            n = int(np.prod(shape)) if rank else 1
            data = np.frombuffer(f.read(4 * n), dtype="<f4").reshape(shape)
            out[name] = data.astype(np.float32)
        return out


def restore(path, params: dict[str, Tensor]) -> None:
    """Load ``path`` into an existing parameter dict, enforcing shapes."""
    stored = load(path)
    missing = set(params) - set(stored)
    if missing:
        raise CheckpointError(f"checkpoint {path} lacks parameters: {sorted(missing)}")
    for name, p in params.items():
        arr = stored[name]
        if arr.shape != p.data.shape:
            raise CheckpointError(
                f"shape mismatch for '{name}': checkpoint {arr.shape}, model {p.data.shape}"
            )
        p.data = arr.astype(p.data.dtype)
