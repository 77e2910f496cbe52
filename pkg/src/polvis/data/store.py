"""On-disk dataset format.

Binary layout (little-endian throughout):

    magic "AGCD" | version u16
    N u32 | H u16 | W u16 | T u8
    per sample:
        identity u32 | attribute bitmask u16
        visible H*W float32 | polar 3*H*W float32
        crc32 u32 over this sample's preceding bytes

A JSON manifest sits alongside the binary at `<path>.json` carrying the
`DatasetManifest` fields. Files are written atomically (temp + rename) and
round-trip bit-exactly. Render parameters are in-memory only and are not
persisted.
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from polvis.data.synth import Dataset, DatasetManifest, PairedSample

MAGIC = b"AGCD"
VERSION = 1


class DatasetFormatError(Exception):
    """Base for malformed dataset files."""


class MagicError(DatasetFormatError):
    pass


class VersionError(DatasetFormatError):
    pass


class TruncatedError(DatasetFormatError):
    pass


class ChecksumError(DatasetFormatError):
    pass


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedError(f"file truncated while reading {what} (wanted {n} bytes, got {len(buf)})")
    return buf


def atomic_write(path: Path, payload: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _bitmask(bits: np.ndarray) -> int:
    mask = 0
    for t, b in enumerate(bits):
        if b:
            mask |= 1 << t
    return mask


def _bits(mask: int, t: int) -> np.ndarray:
    return np.asarray([(mask >> i) & 1 for i in range(t)], dtype=np.uint8)


def save_dataset(ds: Dataset, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    m = ds.manifest
    m.validate()
    parts = [struct.pack("<4sH", MAGIC, VERSION), struct.pack("<IHHB", m.n_samples, m.height, m.width, m.n_attributes)]
    for s in ds.samples:
        record = struct.pack("<IH", s.identity, _bitmask(s.attributes))
        record += np.ascontiguousarray(s.visible, dtype="<f4").tobytes()
        record += np.ascontiguousarray(s.polar, dtype="<f4").tobytes()
        parts.append(record)
        parts.append(struct.pack("<I", zlib.crc32(record) & 0xFFFFFFFF))
    atomic_write(path, b"".join(parts))
    manifest_json = json.dumps(dataclasses.asdict(m), indent=2, sort_keys=True) + "\n"
    atomic_write(Path(str(path) + ".json"), manifest_json.encode())


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    manifest_path = Path(str(path) + ".json")
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    if not manifest_path.exists():
        raise FileNotFoundError(f"dataset manifest not found: {manifest_path}")
    manifest = DatasetManifest(**json.loads(manifest_path.read_text()))
    manifest.validate()

    with open(path, "rb") as f:
        head = f.read(6)
        if len(head) < 6 or head[:4] != MAGIC:
            raise MagicError(f"{path}: bad magic {head[:4]!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<H", head[4:6])
        if version != VERSION:
            raise VersionError(f"{path}: unsupported dataset version {version}, expected {VERSION}")
        n, h, w, t = struct.unpack("<IHHB", _read_exact(f, 9, "header"))
        if (n, h, w, t) != (manifest.n_samples, manifest.height, manifest.width, manifest.n_attributes):
            raise DatasetFormatError(
                f"{path}: header ({n}, {h}x{w}, T={t}) disagrees with manifest "
                f"({manifest.n_samples}, {manifest.height}x{manifest.width}, T={manifest.n_attributes})"
            )
        record_len = 6 + 4 * h * w + 4 * 3 * h * w
        samples = []
        for idx in range(n):
            record = _read_exact(f, record_len, f"sample {idx}")
            (stored_crc,) = struct.unpack("<I", _read_exact(f, 4, f"sample {idx} checksum"))
            if zlib.crc32(record) & 0xFFFFFFFF != stored_crc:
                raise ChecksumError(f"{path}: checksum mismatch in sample {idx}")
            identity, mask = struct.unpack("<IH", record[:6])
            pixels = np.frombuffer(record[6:], dtype="<f4")
            visible = pixels[: h * w].reshape(1, h, w).copy()
            polar = pixels[h * w :].reshape(3, h, w).copy()
            samples.append(PairedSample(identity=identity, attributes=_bits(mask, t), visible=visible, polar=polar))
        if f.read(1):
            raise DatasetFormatError(f"{path}: trailing bytes after {n} samples")
    return Dataset(manifest=manifest, samples=samples)
