"""Evaluation harness: exact ground truth, recall metrics, throughput, and
random-projection distortion diagnostics.

Recall conventions: "1@R" is the fraction of queries whose true nearest
neighbor appears in the first R results; "100@100" is the mean overlap
between the top-100 results and the true top-100, as a fraction of 100.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .blockio import BlockReader, BlockWriter
from .validation import check_same_dim, check_vectors

FLAT_MAGIC = b"FLT1"
FLAT_VERSION = 1


def brute_force_knn(
    base: np.ndarray,
    queries: np.ndarray,
    k: int,
    *,
    return_distances: bool = False,
    chunk: int = 256,
):
    """Exact euclidean top-k ids (ties to the lower id); saturates at base count."""
    base = np.asarray(base, dtype=np.float32)
    queries = np.asarray(queries, dtype=np.float32)
    check_same_dim(queries.shape[1], base.shape[1], "queries", "base")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    k = min(k, base.shape[0])
    base64 = base.astype(np.float64)
    base_sq = np.einsum("ij,ij->i", base64, base64)
    ids = np.empty((queries.shape[0], k), dtype=np.int64)
    dists = np.empty((queries.shape[0], k)) if return_distances else None
    for lo in range(0, queries.shape[0], chunk):
        q = queries[lo : lo + chunk].astype(np.float64)
        d2 = np.einsum("ij,ij->i", q, q)[:, None] + base_sq[None, :] - 2.0 * (q @ base64.T)
        np.maximum(d2, 0.0, out=d2)
        # Stable sort resolves distance ties toward the lower id.
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        ids[lo : lo + chunk] = order
        if return_distances:
            dists[lo : lo + chunk] = np.sqrt(np.take_along_axis(d2, order, axis=1))
    if return_distances:
        return ids, dists
    return ids


def recall_1_at(results: np.ndarray, ground_truth: np.ndarray, r: int) -> float:
    """Fraction of queries whose true nearest neighbor is in the first r results."""
    results = np.asarray(results)
    ground_truth = np.asarray(ground_truth)
    if results.shape[0] != ground_truth.shape[0]:
        raise ValueError(
            f"query counts differ: results {results.shape[0]} vs ground truth {ground_truth.shape[0]}"
        )
    if r < 1 or r > results.shape[1]:
        raise ValueError(f"r={r} exceeds result-list length {results.shape[1]}")
    true_nn = ground_truth[:, 0]
    return float((results[:, :r] == true_nn[:, None]).any(axis=1).mean())


def recall_overlap(results: np.ndarray, ground_truth: np.ndarray, r: int = 100) -> float:
    """Mean |top-r results ∩ true top-r| / r over queries."""
    results = np.asarray(results)
    ground_truth = np.asarray(ground_truth)
    if results.shape[0] != ground_truth.shape[0]:
        raise ValueError(
            f"query counts differ: results {results.shape[0]} vs ground truth {ground_truth.shape[0]}"
        )
    if r < 1 or r > results.shape[1] or r > ground_truth.shape[1]:
        raise ValueError(
            f"r={r} exceeds list lengths (results {results.shape[1]}, truth {ground_truth.shape[1]})"
        )
    total = 0
    for row, truth in zip(results[:, :r], ground_truth[:, :r]):
        total += len(np.intersect1d(row[row >= 0], truth))
    return total / (r * results.shape[0])


@dataclass
class RecallReport:
    """Recall figures plus throughput and an echo of the search parameters."""

    recall_1_at_1: float | None = None
    recall_1_at_5: float | None = None
    recall_1_at_10: float | None = None
    recall_1_at_50: float | None = None
    recall_100_at_100: float | None = None
    queries_per_second: float | None = None
    params: dict = field(default_factory=dict)

    _LABELS = (
        ("recall_1_at_1", "1@1"),
        ("recall_1_at_5", "1@5"),
        ("recall_1_at_10", "1@10"),
        ("recall_1_at_50", "1@50"),
        ("recall_100_at_100", "100@100"),
        ("queries_per_second", "qps"),
    )

    def to_lines(self) -> list[str]:
        lines = [
            f"{label}={getattr(self, attr):.6f}"
            for attr, label in self._LABELS
            if getattr(self, attr) is not None
        ]
        for key in sorted(self.params):
            lines.append(f"param.{key}={self.params[key]}")
        return lines

    def to_table(self) -> str:
        cols = [(label, f"{getattr(self, attr):.4f}") for attr, label in self._LABELS if getattr(self, attr) is not None]
        widths = [max(len(h), len(v)) for h, v in cols]
        head = "  ".join(h.rjust(w) for (h, _), w in zip(cols, widths))
        body = "  ".join(v.rjust(w) for (_, v), w in zip(cols, widths))
        return head + "\n" + body


def compute_recall_report(
    results: np.ndarray,
    ground_truth: np.ndarray,
    *,
    queries_per_second: float | None = None,
    params: dict | None = None,
) -> RecallReport:
    """Fill in every recall variant the list lengths permit."""
    report = RecallReport(queries_per_second=queries_per_second, params=dict(params or {}))
    width = np.asarray(results).shape[1]
    for r, attr in ((1, "recall_1_at_1"), (5, "recall_1_at_5"), (10, "recall_1_at_10"), (50, "recall_1_at_50")):
        if width >= r:
            setattr(report, attr, recall_1_at(results, ground_truth, r))
    if width >= 100 and np.asarray(ground_truth).shape[1] >= 100:
        report.recall_100_at_100 = recall_overlap(results, ground_truth, 100)
    return report


def distortion_interval(distance: float, epsilon: float) -> tuple[float, float]:
    """Distance-space band (d*sqrt(1-eps), d*sqrt(1+eps)) a single random
    projection is expected to land in."""
    if distance < 0:
        raise ValueError(f"distance must be non-negative, got {distance}")
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must be in (0, 1), got {epsilon}")
    return distance * math.sqrt(1.0 - epsilon), distance * math.sqrt(1.0 + epsilon)


def jl_min_epsilon(m: float, d_out: int, *, tol: float = 1e-6) -> float | None:
    """Smallest eps in (0,1) with d_out > 4*ln(m) / (eps^2/2 - eps^3/3).

    The left side of the bound is monotone in eps, so bisection applies.
    Returns None when even eps -> 1 cannot satisfy the bound.
    """
    if m < 2:
        raise ValueError(f"point count must be >= 2, got {m}")
    if d_out < 1:
        raise ValueError(f"d_out must be >= 1, got {d_out}")
    threshold = 4.0 * math.log(m) / d_out

    def f(eps: float) -> float:
        return eps * eps / 2.0 - eps**3 / 3.0

    if f(1.0) <= threshold:  # sup over (0,1) is f(1) = 1/6
        return None
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = (lo + hi) / 2.0
        if f(mid) > threshold:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class QpsReport:
    queries_per_second: float
    repetitions: int
    query_count: int


def measure_qps(search_closure, queries: np.ndarray, repetitions: int = 1) -> QpsReport:
    """Single-threaded wall-clock throughput, averaged over repetitions."""
    if repetitions < 1:
        raise ValueError(f"repetitions must be >= 1, got {repetitions}")
    queries = np.asarray(queries)
    elapsed = 0.0
    for _ in range(repetitions):
        start = time.perf_counter()
        for q in queries:
            search_closure(q)
        elapsed += time.perf_counter() - start
    total = repetitions * queries.shape[0]
    return QpsReport(
        queries_per_second=total / elapsed if elapsed > 0 else float("inf"),
        repetitions=repetitions,
        query_count=queries.shape[0],
    )


class FlatIndex:
    """Exhaustive-scan index; the exactness baseline for every other index."""

    def __init__(self, vectors: np.ndarray):
        self.vectors = check_vectors(vectors, name="base")

    @classmethod
    def build(cls, data: np.ndarray) -> "FlatIndex":
        return cls(data)

    def search(self, query: np.ndarray, k: int):
        ids, dists = brute_force_knn(
            self.vectors, np.asarray(query, dtype=np.float32).reshape(1, -1), k, return_distances=True
        )
        return ids[0], dists[0]

    def search_batch(self, queries: np.ndarray, k: int) -> np.ndarray:
        return brute_force_knn(self.vectors, queries, k)

    def save(self, path: str) -> None:
        w = BlockWriter(FLAT_MAGIC, FLAT_VERSION)
        w.array(self.vectors)
        w.save(path)

    @classmethod
    def load(cls, path: str) -> "FlatIndex":
        r = BlockReader(path, FLAT_MAGIC, FLAT_VERSION)
        vectors = r.array()
        r.expect_end()
        return cls(vectors)
