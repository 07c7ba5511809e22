"""Flat binary parameter container, bit-exact on round trip.

Layout: magic ``RTLB``, format version (u32 LE), then one record per
tensor: name length (u32), UTF-8 name, rank (u32), extents (u64 each),
values as little-endian float64.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"RTLB"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype="<f8")
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            for extent in arr.shape:
                f.write(struct.pack("<Q", extent))
            f.write(arr.tobytes())


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a parameter checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    out: dict[str, np.ndarray] = {}
    off = 8
    while off < len(blob):
        try:
            (nlen,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}Q", blob, off) if rank else ()
            off += 8 * rank
            count = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
            off += 8 * count
        except (struct.error, UnicodeDecodeError, ValueError) as e:
            raise CheckpointError(f"{path}: truncated or corrupt record: {e}") from e
        if arr.size != count:
            raise CheckpointError(f"{path}: truncated values for tensor {name!r}")
        out[name] = arr.reshape(shape).astype(np.float64)
    return out
