"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"EDRNMT01"
    u32 tensor count
    per tensor: u16 name length, UTF-8 name, u8 ndim, u32 extent * ndim
    payloads: IEEE-754 float64 (<f8), row-major, in manifest order
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"EDRNMT01"


class CheckpointError(ValueError):
    pass


def save(path: str | Path, params: dict[str, np.ndarray]) -> None:
    header = [MAGIC, struct.pack("<I", len(params))]
    payload = []
    for name, arr in params.items():
        raw = name.encode("utf-8")
        header.append(struct.pack("<H", len(raw)) + raw)
        header.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        payload.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(header + payload))
    tmp.replace(path)


def load(path: str | Path) -> dict[str, np.ndarray]:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not buf.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    try:
        pos = len(MAGIC)
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        manifest = []
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos : pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            manifest.append((name, shape))
        params = {}
        for name, shape in manifest:
            size = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(buf, dtype="<f8", count=size, offset=pos)
            pos += 8 * size
            params[name] = arr.astype(np.float64).reshape(shape)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc})") from exc
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return params
