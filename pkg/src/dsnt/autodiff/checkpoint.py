"""Binary checkpoint container.

Layout (little-endian)::

    b"DSNT1"
    repeated:
        u32 name length, name bytes (UTF-8)
        u8  dtype code (0 = float32)
        u32 rank, rank x u32 dims
        row-major float32 payload

A JSON sidecar ``<path>.json`` carries hyperparameters and vocabulary.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"DSNT1"
_DTYPES = {0: np.dtype("<f4")}


class CheckpointError(ValueError):
    pass


def sidecar_path(path: str | os.PathLike) -> Path:
    return Path(str(path) + ".json")


def atomic_write_bytes(path: str | os.PathLike, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_arrays(arrays: Mapping[str, np.ndarray]) -> bytes:
    chunks = [MAGIC]
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4")  # ascontiguousarray would promote 0-d to 1-d
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<BI", 0, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    return b"".join(chunks)


def decode_arrays(payload: bytes) -> dict[str, np.ndarray]:
    if not payload.startswith(MAGIC):
        raise CheckpointError("not a DSNT1 checkpoint (bad magic)")
    view = memoryview(payload)
    pos = len(MAGIC)
    out: dict[str, np.ndarray] = {}

    def read(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(view):
            raise CheckpointError("truncated checkpoint")
        values = struct.unpack_from(fmt, view, pos)
        pos += size
        return values

    while pos < len(view):
        (n,) = read("<I")
        if pos + n > len(view):
            raise CheckpointError("truncated checkpoint")
        name = bytes(view[pos:pos + n]).decode("utf-8")
        pos += n
        code, rank = read("<BI")
        if code not in _DTYPES:
            raise CheckpointError(f"entry {name!r}: unknown dtype code {code}")
        dims = read(f"<{rank}I") if rank else ()
        dtype = _DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        if pos + nbytes > len(view):
            raise CheckpointError(f"entry {name!r}: truncated payload")
        arr = np.frombuffer(view[pos:pos + nbytes], dtype=dtype).reshape(dims)
        pos += nbytes
        out[name] = arr.astype(np.float64)
    return out


def save_checkpoint(path: str | os.PathLike, arrays: Mapping[str, np.ndarray],
                    meta: Mapping | None = None) -> None:
    atomic_write_bytes(path, encode_arrays(arrays))
    text = json.dumps(meta or {}, indent=1, sort_keys=True)
    atomic_write_bytes(sidecar_path(path), text.encode("utf-8"))


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    arrays = decode_arrays(path.read_bytes())
    side = sidecar_path(path)
    meta = json.loads(side.read_text(encoding="utf-8")) if side.is_file() else {}
    return arrays, meta
