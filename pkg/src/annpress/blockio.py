"""Shared binary container for index files: magic, version, typed blocks, CRC-32.

Every persisted index uses the same skeleton — a 4-byte magic, a u32 format
version, a sequence of scalar/JSON/array blocks, and a trailing CRC-32 over
everything before it. Readers verify the checksum before parsing, so
truncation and corruption surface as one error.
"""

from __future__ import annotations

import io
import json
import struct
import zlib

import numpy as np

from .vecio import FormatError


class BlockWriter:
    def __init__(self, magic: bytes, version: int):
        if len(magic) != 4:
            raise ValueError(f"magic must be 4 bytes, got {magic!r}")
        self._buf = io.BytesIO()
        self._buf.write(magic)
        self._buf.write(struct.pack("<I", version))

    def u8(self, v: int) -> "BlockWriter":
        self._buf.write(struct.pack("<B", v))
        return self

    def u32(self, v: int) -> "BlockWriter":
        self._buf.write(struct.pack("<I", v))
        return self

    def u64(self, v: int) -> "BlockWriter":
        self._buf.write(struct.pack("<Q", v))
        return self

    def f64(self, v: float) -> "BlockWriter":
        self._buf.write(struct.pack("<d", v))
        return self

    def json(self, obj) -> "BlockWriter":
        blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
        self._buf.write(struct.pack("<I", len(blob)))
        self._buf.write(blob)
        return self

    def array(self, arr: np.ndarray) -> "BlockWriter":
        arr = np.ascontiguousarray(arr)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        dtype = arr.dtype.str.encode()
        self._buf.write(struct.pack("<I", len(dtype)))
        self._buf.write(dtype)
        self._buf.write(struct.pack("<I", arr.ndim))
        self._buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        raw = arr.tobytes()
        self._buf.write(struct.pack("<Q", len(raw)))
        self._buf.write(raw)
        return self

    def save(self, path: str) -> None:
        blob = self._buf.getvalue()
        with open(path, "wb") as fh:
            fh.write(blob)
            fh.write(struct.pack("<I", zlib.crc32(blob)))


class BlockReader:
    def __init__(self, path: str, magic: bytes, version: int):
        with open(path, "rb") as fh:
            blob = fh.read()
        if len(blob) < 12:
            raise FormatError(f"{path}: file too short to be an index")
        if blob[:4] != magic:
            raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {magic!r}")
        (stored_crc,) = struct.unpack("<I", blob[-4:])
        if zlib.crc32(blob[:-4]) != stored_crc:
            raise FormatError(f"{path}: checksum mismatch (file corrupt or truncated)")
        self._view = memoryview(blob[:-4])
        self._pos = 4
        self._path = path
        got = self.u32()
        if got != version:
            raise FormatError(f"{path}: unsupported format version {got}, expected {version}")

    def _take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self._pos + size > len(self._view):
            raise FormatError(f"{self._path}: unexpected end of data at byte {self._pos}")
        out = struct.unpack_from(fmt, self._view, self._pos)
        self._pos += size
        return out

    def u8(self) -> int:
        return self._take("<B")[0]

    def u32(self) -> int:
        return self._take("<I")[0]

    def u64(self) -> int:
        return self._take("<Q")[0]

    def f64(self) -> float:
        return self._take("<d")[0]

    def json(self):
        (length,) = self._take("<I")
        blob = bytes(self._view[self._pos : self._pos + length])
        self._pos += length
        return json.loads(blob)

    def array(self) -> np.ndarray:
        (dtype_len,) = self._take("<I")
        dtype = np.dtype(bytes(self._view[self._pos : self._pos + dtype_len]).decode())
        self._pos += dtype_len
        (rank,) = self._take("<I")
        shape = self._take(f"<{rank}Q")
        (nbytes,) = self._take("<Q")
        if self._pos + nbytes > len(self._view):
            raise FormatError(f"{self._path}: array payload truncated at byte {self._pos}")
        arr = np.frombuffer(self._view, dtype=dtype, count=nbytes // dtype.itemsize, offset=self._pos)
        self._pos += nbytes
        return arr.reshape(shape).copy()

    def expect_end(self) -> None:
        if self._pos != len(self._view):
            raise FormatError(f"{self._path}: {len(self._view) - self._pos} unexpected trailing bytes")
