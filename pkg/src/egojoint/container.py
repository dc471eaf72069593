"""Little-endian chunked container for named arrays ("EGTW" files).

Layout::

    magic      4 bytes   b"EGTW"
    version    u32
    count      u32       number of arrays
    meta_len   u32       length of the UTF-8 JSON metadata block
    meta       meta_len bytes
    index      count records:
                 name_len u16, name (UTF-8), dtype u8, ndim u8,
                 shape ndim x u64, offset u64, nbytes u64, crc32 u32
    payload    array bytes, C order, at the recorded absolute offsets

The index sits in front of the payload so a reader can seek straight to
any array. Offsets are absolute file positions.
"""
from __future__ import annotations

import io
import json
import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Mapping

import numpy as np

MAGIC = b"EGTW"
VERSION = 1

_DTYPES = {
    1: np.dtype("<f4"),
    2: np.dtype("<f8"),
    3: np.dtype("u1"),
    4: np.dtype("<i4"),
    5: np.dtype("<i8"),
    6: np.dtype("?"),
    7: np.dtype("<u4"),
}
_CODES = {dt: code for code, dt in _DTYPES.items()}


class FormatError(ValueError):
    """Corrupt, truncated or incompatible container file."""


@dataclass(frozen=True)
class Entry:
    name: str
    dtype: np.dtype
    shape: tuple[int, ...]
    offset: int
    nbytes: int
    crc: int


def _code_for(arr: np.ndarray) -> int:
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    try:
        return _CODES[np.dtype(dt)]
    except KeyError:
        raise TypeError(f"unsupported dtype {arr.dtype}") from None


def write_container(path: str | os.PathLike, arrays: Mapping[str, np.ndarray] | Iterable[tuple[str, np.ndarray]], meta: dict | None = None) -> None:
    items = list(arrays.items()) if isinstance(arrays, Mapping) else list(arrays)
    names = [n for n, _ in items]
    if len(set(names)) != len(names):
        raise ValueError("duplicate array names")
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    prepared = []
    for name, arr in items:
        arr = np.asarray(arr)
        code = _code_for(arr)
        data = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        prepared.append((name.encode("utf-8"), code, arr.shape, data))

    header_len = 16 + len(meta_bytes)
    index_len = sum(2 + len(n) + 2 + 8 * len(s) + 8 + 8 + 4 for n, _, s, _ in prepared)
    offset = header_len + index_len
    index = io.BytesIO()
    for name, code, shape, data in prepared:
        index.write(struct.pack("<H", len(name)))
        index.write(name)
        index.write(struct.pack("<BB", code, len(shape)))
        index.write(struct.pack(f"<{len(shape)}Q", *shape))
        index.write(struct.pack("<QQI", offset, len(data), zlib.crc32(data)))
        offset += len(data)

    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<III", VERSION, len(prepared), len(meta_bytes)))
        f.write(meta_bytes)
        f.write(index.getvalue())
        for _, _, _, data in prepared:
            f.write(data)
    os.replace(tmp, path)


def _read_exact(f: BinaryIO, n: int) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise FormatError("unexpected end of file")
    return b


class ContainerReader:
    """Random-access reader; arrays are only read when requested."""

    def __init__(self, path: str | os.PathLike, fileobj: BinaryIO | None = None):
        self.path = Path(path)
        self._f = fileobj if fileobj is not None else open(self.path, "rb")
        try:
            self._parse()
        except Exception:
            self.close()
            raise

    def _parse(self) -> None:
        f = self._f
        f.seek(0, os.SEEK_END)
        size = f.tell()
        f.seek(0)
        if _read_exact(f, 4) != MAGIC:
            raise FormatError("bad magic bytes")
        version, count, meta_len = struct.unpack("<III", _read_exact(f, 12))
        if version != VERSION:
            raise FormatError(f"unsupported container version {version}")
        try:
            self.meta = json.loads(_read_exact(f, meta_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise FormatError(f"corrupt metadata block: {e}") from None
        self.entries: dict[str, Entry] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(f, 2))
            name = _read_exact(f, nlen).decode("utf-8")
            code, ndim = struct.unpack("<BB", _read_exact(f, 2))
            if code not in _DTYPES:
                raise FormatError(f"unknown dtype code {code}")
            shape = struct.unpack(f"<{ndim}Q", _read_exact(f, 8 * ndim))
            off, nbytes, crc = struct.unpack("<QQI", _read_exact(f, 20))
            dt = _DTYPES[code]
            if int(np.prod(shape, dtype=np.int64)) * dt.itemsize != nbytes:
                raise FormatError(f"entry {name!r} size does not match its shape")
            if off + nbytes > size:
                raise FormatError(f"file truncated inside entry {name!r}")
            self.entries[name] = Entry(name, dt, tuple(shape), off, nbytes, crc)

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def names(self) -> list[str]:
        return list(self.entries)

    def read(self, name: str) -> np.ndarray:
        e = self.entries[name]
        self._f.seek(e.offset)
        data = _read_exact(self._f, e.nbytes)
        if zlib.crc32(data) != e.crc:
            raise FormatError(f"checksum mismatch in entry {name!r}")
        return np.frombuffer(data, dtype=e.dtype).reshape(e.shape).copy()

    def read_all(self) -> dict[str, np.ndarray]:
        return {n: self.read(n) for n in self.entries}

    def close(self) -> None:
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_container(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    with ContainerReader(path) as r:
        return r.read_all(), r.meta


def payload_bytes(path: str | os.PathLike) -> bytes:
    """Concatenated array payload, i.e. the file minus header and index."""
    with ContainerReader(path) as r:
        if not r.entries:
            return b""
        start = min(e.offset for e in r.entries.values())
    return Path(path).read_bytes()[start:]
