"""Checkpoint container: a named tensor table.

Binary layout (little-endian), sharing the dataset file conventions:

    magic "AGCK" | version u16 | entry count u32
    per entry:
        name length u16 | name utf-8
        kind u8 (0 float32 array, 1 float64 array, 2 raw bytes)
        ndim u8 | ndim * u32 dims (raw bytes: ndim=1, dims=[length])
        payload
        crc32 u32 over this entry's preceding bytes

Training snapshots store every named network parameter, the optimizer
moments, the RNG stream states, and the config snapshot (a JSON entry
under "meta"), which is what makes save -> load -> resume bitwise exact.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from polvis.data.store import (
    ChecksumError,
    DatasetFormatError,
    MagicError,
    TruncatedError,
    VersionError,
    _read_exact,
    atomic_write,
)

MAGIC = b"AGCK"
VERSION = 1
_KIND_F32, _KIND_F64, _KIND_BYTES = 0, 1, 2


def save_tensor_table(path: str | Path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Write named arrays plus a JSON `meta` entry."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries: list[tuple[str, int, bytes, tuple]] = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype == np.float32:
            kind = _KIND_F32
        elif arr.dtype == np.float64:
            kind = _KIND_F64
        else:
            raise ValueError(f"entry {name!r}: unsupported dtype {arr.dtype}")
        entries.append((name, kind, arr.tobytes(), arr.shape))
    meta_blob = json.dumps(meta, sort_keys=True).encode()
    entries.append(("meta", _KIND_BYTES, meta_blob, (len(meta_blob),)))

    parts = [struct.pack("<4sHI", MAGIC, VERSION, len(entries))]
    for name, kind, payload, shape in entries:
        nameb = name.encode()
        entry = struct.pack("<H", len(nameb)) + nameb + struct.pack("<BB", kind, len(shape))
        entry += struct.pack(f"<{len(shape)}I", *shape)
        entry += payload
        parts.append(entry)
        parts.append(struct.pack("<I", zlib.crc32(entry) & 0xFFFFFFFF))
    atomic_write(path, b"".join(parts))


def load_tensor_table(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read back (arrays, meta)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint file not found: {path}")
    arrays: dict[str, np.ndarray] = {}
    meta: dict = {}
    with open(path, "rb") as f:
        head = f.read(10)
        if len(head) < 10 or head[:4] != MAGIC:
            raise MagicError(f"{path}: bad magic {head[:4]!r}, expected {MAGIC!r}")
        version, count = struct.unpack("<HI", head[4:])
        if version != VERSION:
            raise VersionError(f"{path}: unsupported checkpoint version {version}, expected {VERSION}")
        for idx in range(count):
            fixed = _read_exact(f, 2, f"entry {idx} name length")
            (name_len,) = struct.unpack("<H", fixed)
            rest = _read_exact(f, name_len + 2, f"entry {idx} header")
            name = rest[:name_len].decode()
            kind, ndim = struct.unpack("<BB", rest[name_len:])
            dims_raw = _read_exact(f, 4 * ndim, f"entry {name!r} dims")
            dims = struct.unpack(f"<{ndim}I", dims_raw)
            if kind == _KIND_BYTES:
                payload_len = dims[0]
            elif kind in (_KIND_F32, _KIND_F64):
                payload_len = int(np.prod(dims, dtype=np.int64)) * (4 if kind == _KIND_F32 else 8)
            else:
                raise DatasetFormatError(f"{path}: entry {name!r} has unknown kind {kind}")
            payload = _read_exact(f, payload_len, f"entry {name!r} payload")
            (stored_crc,) = struct.unpack("<I", _read_exact(f, 4, f"entry {name!r} checksum"))
            entry_bytes = fixed + rest + dims_raw + payload
            if zlib.crc32(entry_bytes) & 0xFFFFFFFF != stored_crc:
                raise ChecksumError(f"{path}: checksum mismatch in entry {name!r}")
            if kind == _KIND_BYTES:
                if name != "meta":
                    raise DatasetFormatError(f"{path}: unexpected raw entry {name!r}")
                meta = json.loads(payload.decode())
            else:
                dtype = "<f4" if kind == _KIND_F32 else "<f8"
                arrays[name] = np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
        if f.read(1):
            raise DatasetFormatError(f"{path}: trailing bytes after {count} entries")
    return arrays, meta
