"""Binary tensor container ("AVF1").

Layout: 4-byte magic b"AVF1", then one entry per tensor:

    name_len  u32 LE
    name      UTF-8 bytes
    dtype     u8  (1=float32, 2=float64, 3=int64, 4=uint8)
    rank      u8
    extents   rank x u64 LE
    payload   prod(extents) * itemsize bytes, row-major, little-endian

Round-trips are bit-exact, which makes the format suitable for checkpoints
that must be reproducible byte-for-byte.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import BadMagicError, TensorFileError, TruncatedFileError

MAGIC = b"AVF1"

_DTYPE_TAGS = {
    np.dtype("<f4"): 1,
    np.dtype("<f8"): 2,
    np.dtype("<i8"): 3,
    np.dtype("u1"): 4,
}
_TAG_DTYPES = {tag: dt for dt, tag in _DTYPE_TAGS.items()}


def write_tensors(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    """Write named arrays to `path`, preserving dict order."""
    chunks = [MAGIC]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _DTYPE_TAGS:
            raise TensorFileError(f"unsupported dtype {arr.dtype} for entry '{name}'")
        data = np.ascontiguousarray(arr.astype(dt, copy=False))
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<BB", _DTYPE_TAGS[dt], data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}Q", *data.shape))
        chunks.append(data.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_tensors(path: str | Path) -> dict[str, np.ndarray]:
    """Read all entries from `path` in file order."""
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise BadMagicError(f"{path}: expected magic {MAGIC!r}, found {buf[:4]!r}")
    pos = 4
    out: dict[str, np.ndarray] = {}

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise TruncatedFileError(
                f"{path}: needed {n} bytes at offset {pos}, file has {len(buf)}"
            )
        piece = buf[pos : pos + n]
        pos += n
        return piece

    while pos < len(buf):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        tag, rank = struct.unpack("<BB", take(2))
        if tag not in _TAG_DTYPES:
            raise TensorFileError(f"{path}: unknown dtype tag {tag} for entry '{name}'")
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        dt = _TAG_DTYPES[tag]
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        payload = take(count * dt.itemsize)
        if name in out:
            raise TensorFileError(f"{path}: duplicate entry '{name}'")
        out[name] = np.frombuffer(payload, dtype=dt).reshape(shape).copy()
    return out


def write_matrix(path: str | Path, arr: np.ndarray, name: str = "data") -> None:
    write_tensors(path, {name: arr})


def read_matrix(path: str | Path, name: str = "data") -> np.ndarray:
    tensors = read_tensors(path)
    if name not in tensors:
        raise TensorFileError(f"{path}: missing entry '{name}' (has {list(tensors)})")
    return tensors[name]
