"""Readers and writers for the fvecs/bvecs/ivecs vector file formats.

Every record is a little-endian int32 dimension header followed by `dim`
payload elements (float32 / uint8 / int32 respectively). Readers are pure
functions: a byte stream either yields a complete, finite dataset or raises
`FormatError` with enough context to locate the defect.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Union

import numpy as np

PathLike = Union[str, os.PathLike]

_HEADER = struct.Struct("<i")


class FormatError(ValueError):
    """A vector file violates its format contract."""


def _read_records(path: PathLike, elem_dtype: np.dtype, elem_size: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) == 0:
        return np.empty((0, 0), dtype=elem_dtype)
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header at byte offset 0 ({len(raw)} bytes left)")

    dim = _HEADER.unpack_from(raw, 0)[0]
    if dim <= 0:
        raise FormatError(f"{path}: invalid dimension header {dim} at byte offset 0")

    record_size = _HEADER.size + dim * elem_size
    count, leftover = divmod(len(raw), record_size)
    if leftover:
        raise FormatError(
            f"{path}: truncated record at byte offset {count * record_size} "
            f"({leftover} trailing bytes, record size {record_size})"
        )

    records = np.frombuffer(raw, dtype=np.uint8).reshape(count, record_size)
    dims = records[:, : _HEADER.size].view(np.int32).ravel()
    bad = np.nonzero(dims != dim)[0]
    if bad.size:
        i = int(bad[0])
        raise FormatError(
            f"{path}: inconsistent dimensions: record 0 has dim {dim}, "
            f"record {i} has dim {int(dims[i])} (byte offset {i * record_size})"
        )
    return records[:, _HEADER.size :].view(elem_dtype).copy()


def read_fvecs(path: PathLike) -> np.ndarray:
    """Read an fvecs file into a float32 (count, dim) matrix."""
    values = _read_records(path, np.dtype("<f4"), 4)
    if values.size and not np.all(np.isfinite(values)):
        raise FormatError(f"{path}: non-finite float payload")
    return values


def read_bvecs(path: PathLike) -> np.ndarray:
    """Read a bvecs file, widening the uint8 payload to float32 in [0, 255]."""
    return _read_records(path, np.dtype("u1"), 1).astype(np.float32)


def read_ivecs(path: PathLike) -> np.ndarray:
    """Read an ivecs file into an int32 (count, dim) matrix."""
    return _read_records(path, np.dtype("<i4"), 4)


def _write_records(values: np.ndarray, path: PathLike, elem_dtype: np.dtype) -> None:
    values = np.ascontiguousarray(values, dtype=elem_dtype)
    if values.ndim != 2:
        raise ValueError(f"expected a 2-D (count, dim) matrix, got shape {values.shape}")
    count, dim = values.shape
    try:
        with open(path, "wb") as fh:
            if count:
                headers = np.full((count, 1), dim, dtype="<i4")
                body = np.hstack([headers.view(np.uint8), values.view(np.uint8).reshape(count, -1)])
                fh.write(body.tobytes())
    except OSError as exc:
        raise OSError(f"failed to write {path}: {exc}") from exc


def write_fvecs(values: np.ndarray, path: PathLike) -> None:
    """Write a float32 matrix as fvecs; `read_fvecs` recovers it bit-exactly."""
    values = np.asarray(values, dtype=np.float32)
    if values.size and not np.all(np.isfinite(values)):
        raise ValueError("refusing to write non-finite values")
    _write_records(values, path, np.dtype("<f4"))


def write_ivecs(ids: np.ndarray, path: PathLike) -> None:
    """Write an integer matrix (e.g. neighbor id lists) as ivecs."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < np.iinfo(np.int32).min or ids.max() > np.iinfo(np.int32).max):
        raise ValueError("ids do not fit in int32")
    _write_records(ids, path, np.dtype("<i4"))


def split_queries(values: np.ndarray, query_count: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Split rows into a (base, queries) partition, deterministic per seed."""
    values = np.asarray(values)
    count = values.shape[0]
    if not 0 < query_count < count:
        raise ValueError(f"query_count must be in (0, {count}), got {query_count}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(count)
    query_rows = np.sort(perm[:query_count])
    base_rows = np.sort(perm[query_count:])
    return values[base_rows].copy(), values[query_rows].copy()
