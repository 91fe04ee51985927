"""
Phase 1: GDFT Tensor Container
Binary tensor dumps and the plain-text manifests that index them.

Layout: magic b"GDFT", uint32 version (=1), uint32 rank, rank x uint64
extents, then row-major little-endian float64 data.
"""

import struct
from pathlib import Path

import numpy as np


MAGIC = b"GDFT"
VERSION = 1
_HEADER = struct.Struct("<4sII")
_DTYPE = np.dtype("<f8")


class GDFTFormatError(ValueError):
    """Raised when a byte stream is not a valid GDFT tensor."""


def encode_tensor(arr: np.ndarray) -> bytes:
    """Serialize an array to GDFT bytes."""
    arr = np.asarray(arr, dtype=np.float64)
    header = _HEADER.pack(MAGIC, VERSION, arr.ndim)
    extents = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + extents + np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()


def encoded_size(shape: tuple[int, ...]) -> int:
    """Exact GDFT byte length for a tensor of the given dims."""
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    return _HEADER.size + 8 * len(shape) + _DTYPE.itemsize * count


def decode_tensor(blob: bytes) -> np.ndarray:
    """Parse GDFT bytes back into a float64 array."""
    if len(blob) < _HEADER.size:
        raise GDFTFormatError("truncated header")
    magic, version, rank = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise GDFTFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise GDFTFormatError(f"unsupported version {version}")

    offset = _HEADER.size
    if len(blob) < offset + 8 * rank:
        raise GDFTFormatError("truncated extents")
    shape = struct.unpack_from(f"<{rank}Q", blob, offset)
    offset += 8 * rank

    expected = encoded_size(shape)
    if len(blob) != expected:
        raise GDFTFormatError(f"expected {expected} bytes for dims {shape}, got {len(blob)}")
    data = np.frombuffer(blob, dtype=_DTYPE, offset=offset)
    return data.astype(np.float64).reshape(shape)


def write_tensor(path: str | Path, arr: np.ndarray) -> int:
    """Write one tensor file; returns the byte count."""
    blob = encode_tensor(arr)
    Path(path).write_bytes(blob)
    return len(blob)


def read_tensor(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Tensor file not found: {path}")
    return decode_tensor(path.read_bytes())


def write_manifest(path: str | Path, entries: dict[str, str]) -> None:
    """Write a key=value manifest, one entry per line, keys sorted."""
    lines = [f"{key}={entries[key]}" for key in sorted(entries)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Manifest not found: {path}")
    entries = {}
    for line_no, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith('#'):
            continue
        if '=' not in line:
            raise GDFTFormatError(f"{path}:{line_no}: expected key=value")
        key, value = line.split('=', 1)
        entries[key.strip()] = value.strip()
    return entries
