"""Named-tensor checkpoint container.

Layout: magic ``AMARCKPT``, version u16, tensor count u32, then per tensor
name length u16 + UTF-8 name, rank u8, extents u32 each, float64 values.
All integers little-endian.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"AMARCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_tensors(tensors: dict[str, np.ndarray], path: str):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<HI", VERSION, len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype=np.float64)
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            for ext in arr.shape:
                f.write(struct.pack("<I", ext))
            f.write(arr.astype("<f8").tobytes())


def load_tensors(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {buf[:8]!r}")
    version, count = struct.unpack_from("<HI", buf, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 14
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off : off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from(f"<{rank}I", buf, off) if rank else ()
        off += 4 * rank
        n = int(np.prod(shape)) if rank else 1
        nbytes = 8 * n
        if off + nbytes > len(buf):
            raise CheckpointError(f"truncated payload for tensor {name!r}")
        arr = np.frombuffer(buf[off : off + nbytes], dtype="<f8").reshape(shape)
        off += nbytes
        out[name] = arr.astype(np.float64)
    return out
