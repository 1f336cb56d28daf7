"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_vectors(X, *, name: str = "X", dtype=np.float32, allow_empty: bool = False) -> np.ndarray:
    """Validate a (count, dim) matrix of finite vectors and return it as `dtype`.

    Empty inputs (count == 0) are legal only when `allow_empty` is set; the
    returned array is always 2-D and C-contiguous.
    """
    X = np.asarray(X)
    if X.ndim != 2:
        raise ValueError(f"{name} must be a 2-D (count, dim) matrix, got shape {X.shape}")
    if X.shape[0] == 0:
        if not allow_empty:
            raise ValueError(f"{name} must contain at least one vector")
        return np.ascontiguousarray(X, dtype=dtype)
    return check_array(X, dtype=dtype, order="C", ensure_all_finite=True, input_name=name)


def check_same_dim(dim_a: int, dim_b: int, name_a: str = "a", name_b: str = "b") -> None:
    """Raise if two vector dimensionalities disagree, naming both dims."""
    if dim_a != dim_b:
        raise ValueError(
            f"dimension mismatch: {name_a} has dim {dim_a}, {name_b} has dim {dim_b}"
        )


def check_neighbor_ids(ids, *, base_count: int | None = None) -> np.ndarray:
    """Validate a (query_count, k) matrix of neighbor ids."""
    ids = np.asarray(ids)
    if ids.ndim != 2:
        raise ValueError(f"neighbor ids must be 2-D (query_count, k), got shape {ids.shape}")
    if not np.issubdtype(ids.dtype, np.integer):
        raise ValueError(f"neighbor ids must be integers, got dtype {ids.dtype}")
    if ids.size and ids.min() < 0:
        raise ValueError("neighbor ids must be non-negative")
    if base_count is not None and ids.size and ids.max() >= base_count:
        raise ValueError(f"neighbor id {ids.max()} out of range for base of {base_count} points")
    return ids
