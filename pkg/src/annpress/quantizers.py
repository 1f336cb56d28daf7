"""Vector quantizers: product quantization with ADC, optional IVF coarse
partitioning, and 8-bit per-dimension scalar quantization.

All distance comparisons run in float64 from canonical float32 stored
values, so a search over a freshly built structure and over its reloaded
file copy produce identical results. Ties always break toward the lower id.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blockio import BlockReader, BlockWriter
from .validation import check_same_dim, check_vectors

PQ_MAGIC = b"PQC1"
IVF_MAGIC = b"IVF1"
SQ_MAGIC = b"SQP1"
FORMAT_VERSION = 1
PQ_CODEBOOK_SIZE = 256


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Squared euclidean distances (points x centroids) in float64."""
    p = np.asarray(points, dtype=np.float64)
    c = np.asarray(centroids, dtype=np.float64)
    d2 = (
        np.einsum("ij,ij->i", p, p)[:, None]
        + np.einsum("ij,ij->i", c, c)[None, :]
        - 2.0 * (p @ c.T)
    )
    np.maximum(d2, 0.0, out=d2)
    return d2


def kmeans(
    data: np.ndarray,
    k: int,
    *,
    iters: int = 25,
    seed: int = 0,
    return_history: bool = False,
):
    """Lloyd's algorithm from seeded point sampling; float32 centroids.

    Empty clusters are re-seeded from the point farthest from its assigned
    centroid. Inertia (computed at assignment time) is checked to be
    non-increasing on every iteration.
    """
    data = np.asarray(data)
    n = data.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, count={n}], got {k}")
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    rng = np.random.default_rng(seed)
    data64 = data.astype(np.float64)
    centroids = data64[rng.choice(n, size=k, replace=False)].copy()
    history: list[float] = []
    prev = np.inf
    for _ in range(iters):
        d2 = _sq_dists(data64, centroids)
        labels = np.argmin(d2, axis=1)
        point_d2 = d2[np.arange(n), labels]
        inertia = float(point_d2.sum())
        if inertia > prev * (1.0 + 1e-9) + 1e-9:
            raise AssertionError(f"k-means inertia increased: {prev} -> {inertia}")
        prev = inertia
        history.append(inertia)
        sums = np.zeros((k, data64.shape[1]))
        np.add.at(sums, labels, data64)
        counts = np.bincount(labels, minlength=k)
        reseed_d2 = point_d2.copy()
        for c in np.flatnonzero(counts == 0):
            farthest = int(np.argmax(reseed_d2))
            centroids[c] = data64[farthest]
            reseed_d2[farthest] = -1.0
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
    centroids = centroids.astype(np.float32)
    if return_history:
        return centroids, history
    return centroids


# -- product quantization ---------------------------------------------------


@dataclass(frozen=True)
class PqCodebook:
    """Per-subspace centroid tables: m subquantizers, 256 codewords each."""

    m: int
    sub_dim: int
    centroids: np.ndarray  # (m, 256, sub_dim) float32

    @property
    def dim(self) -> int:
        return self.m * self.sub_dim


def pq_train(data: np.ndarray, m: int, *, iters: int = 25, seed: int = 0) -> PqCodebook:
    """Independent k-means per subspace with k = 256.

    With fewer than 256 rows the codebook is padded by repeating codeword 0;
    padding rows never win an assignment because ties break to the lower id.
    """
    data = np.asarray(data, dtype=np.float32)
    n, d = data.shape
    if d % m:
        raise ValueError(f"m={m} does not divide dimension d={d}")
    sub_dim = d // m
    k = min(PQ_CODEBOOK_SIZE, n)
    centroids = np.zeros((m, PQ_CODEBOOK_SIZE, sub_dim), dtype=np.float32)
    for j in range(m):
        sub = kmeans(data[:, j * sub_dim : (j + 1) * sub_dim], k, iters=iters, seed=seed + j)
        centroids[j, :k] = sub
        if k < PQ_CODEBOOK_SIZE:
            centroids[j, k:] = sub[0]
    return PqCodebook(m=m, sub_dim=sub_dim, centroids=centroids)


def pq_encode(codebook: PqCodebook, data: np.ndarray) -> np.ndarray:
    """Nearest codeword per subspace: (count, m) uint8."""
    data = np.asarray(data, dtype=np.float32)
    check_same_dim(data.shape[1], codebook.dim, "data", "codebook")
    codes = np.empty((data.shape[0], codebook.m), dtype=np.uint8)
    for j in range(codebook.m):
        sub = data[:, j * codebook.sub_dim : (j + 1) * codebook.sub_dim]
        codes[:, j] = np.argmin(_sq_dists(sub, codebook.centroids[j]), axis=1)
    return codes


def pq_decode(codebook: PqCodebook, codes: np.ndarray) -> np.ndarray:
    """Concatenate the coded centroids: (count, d) float32."""
    parts = [codebook.centroids[j, codes[:, j]] for j in range(codebook.m)]
    return np.concatenate(parts, axis=1)


def adc_table(codebook: PqCodebook, query: np.ndarray) -> np.ndarray:
    """(m, 256) squared sub-distances from the query to every codeword, float64."""
    query = np.asarray(query, dtype=np.float32).reshape(-1)
    check_same_dim(query.shape[0], codebook.dim, "query", "codebook")
    table = np.empty((codebook.m, PQ_CODEBOOK_SIZE))
    for j in range(codebook.m):
        sub = query[j * codebook.sub_dim : (j + 1) * codebook.sub_dim]
        table[j] = _sq_dists(sub[None, :], codebook.centroids[j])[0]
    return table


def adc_distances(codebook: PqCodebook, codes: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Asymmetric squared distances: per candidate, sum of table lookups."""
    table = adc_table(codebook, query)
    return table[np.arange(codebook.m)[None, :], codes].sum(axis=1)


def _top_k(dists: np.ndarray, ids: np.ndarray, k: int):
    """Ascending by (distance, id); saturates at the candidate count."""
    order = np.lexsort((ids, dists))[: min(k, ids.shape[0])]
    return ids[order], dists[order]


def adc_search(codebook: PqCodebook, codes: np.ndarray, query: np.ndarray, k: int):
    """Flat ADC scan; returns (ids, euclidean distances)."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    dists = adc_distances(codebook, codes, query)
    ids, top = _top_k(dists, np.arange(codes.shape[0], dtype=np.int64), k)
    return ids, np.sqrt(top)


class PqIndex:
    """Codebook plus the codes of an encoded base set."""

    def __init__(self, codebook: PqCodebook, codes: np.ndarray):
        self.codebook = codebook
        self.codes = codes

    @classmethod
    def build(cls, data: np.ndarray, m: int, *, iters: int = 25, seed: int = 0) -> "PqIndex":
        data = check_vectors(data, name="base")
        codebook = pq_train(data, m, iters=iters, seed=seed)
        return cls(codebook, pq_encode(codebook, data))

    def search(self, query: np.ndarray, k: int):
        return adc_search(self.codebook, self.codes, query, k)

    def search_batch(self, queries: np.ndarray, k: int) -> np.ndarray:
        out = np.full((queries.shape[0], k), -1, dtype=np.int64)
        for qi in range(queries.shape[0]):
            ids, _ = self.search(queries[qi], k)
            out[qi, : ids.shape[0]] = ids
        return out

    def save(self, path: str) -> None:
        w = BlockWriter(PQ_MAGIC, FORMAT_VERSION)
        w.json({"m": self.codebook.m, "sub_dim": self.codebook.sub_dim})
        w.array(self.codebook.centroids)
        w.array(self.codes)
        w.save(path)

    @classmethod
    def load(cls, path: str) -> "PqIndex":
        r = BlockReader(path, PQ_MAGIC, FORMAT_VERSION)
        meta = r.json()
        centroids = r.array()
        codes = r.array()
        r.expect_end()
        return cls(PqCodebook(meta["m"], meta["sub_dim"], centroids), codes)


# -- inverted file over PQ codes (IVFADC without residual coding) -----------


class IvfIndex:
    """Coarse k-means lists over PQ codes of the raw vectors."""

    def __init__(
        self,
        coarse: np.ndarray,
        list_ids: np.ndarray,
        list_offsets: np.ndarray,
        codebook: PqCodebook,
        codes: np.ndarray,
    ):
        self.coarse = coarse
        self.list_ids = list_ids
        self.list_offsets = list_offsets
        self.codebook = codebook
        self.codes = codes

    @property
    def nlist(self) -> int:
        return self.coarse.shape[0]

    @classmethod
    def build(
        cls, data: np.ndarray, nlist: int, m: int, *, iters: int = 25, seed: int = 0
    ) -> "IvfIndex":
        data = check_vectors(data, name="base")
        if not 1 <= nlist <= data.shape[0]:
            raise ValueError(f"nlist must be in [1, count={data.shape[0]}], got {nlist}")
        coarse = kmeans(data, nlist, iters=iters, seed=seed)
        assign = np.argmin(_sq_dists(data, coarse), axis=1)
        order = np.argsort(assign, kind="stable")
        counts = np.bincount(assign, minlength=nlist)
        offsets = np.zeros(nlist + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        codebook = pq_train(data, m, iters=iters, seed=seed + nlist)
        return cls(coarse, order.astype(np.int64), offsets, codebook, pq_encode(codebook, data))

    def search(self, query: np.ndarray, k: int, nprobe: int):
        """ADC over the `nprobe` nearest coarse lists."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if not 1 <= nprobe <= self.nlist:
            raise ValueError(f"nprobe must be in [1, nlist={self.nlist}], got {nprobe}")
        coarse_d = _sq_dists(np.asarray(query, dtype=np.float32).reshape(1, -1), self.coarse)[0]
        probe = np.lexsort((np.arange(self.nlist), coarse_d))[:nprobe]
        candidate_ids = np.concatenate(
            [self.list_ids[self.list_offsets[p] : self.list_offsets[p + 1]] for p in probe]
        )
        if candidate_ids.shape[0] == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        table = adc_table(self.codebook, query)
        dists = table[np.arange(self.codebook.m)[None, :], self.codes[candidate_ids]].sum(axis=1)
        ids, top = _top_k(dists, candidate_ids, k)
        return ids, np.sqrt(top)

    def search_batch(self, queries: np.ndarray, k: int, nprobe: int) -> np.ndarray:
        out = np.full((queries.shape[0], k), -1, dtype=np.int64)
        for qi in range(queries.shape[0]):
            ids, _ = self.search(queries[qi], k, nprobe)
            out[qi, : ids.shape[0]] = ids
        return out

    def save(self, path: str) -> None:
        w = BlockWriter(IVF_MAGIC, FORMAT_VERSION)
        w.json({"nlist": self.nlist, "m": self.codebook.m, "sub_dim": self.codebook.sub_dim})
        w.array(self.coarse)
        w.array(self.list_ids)
        w.array(self.list_offsets)
        w.array(self.codebook.centroids)
        w.array(self.codes)
        w.save(path)

    @classmethod
    def load(cls, path: str) -> "IvfIndex":
        r = BlockReader(path, IVF_MAGIC, FORMAT_VERSION)
        meta = r.json()
        coarse = r.array()
        list_ids = r.array()
        list_offsets = r.array()
        centroids = r.array()
        codes = r.array()
        r.expect_end()
        return cls(coarse, list_ids, list_offsets, PqCodebook(meta["m"], meta["sub_dim"], centroids), codes)


# -- 8-bit scalar quantization ----------------------------------------------


@dataclass(frozen=True)
class SqParams:
    """Per-dimension affine range of the training set."""

    mins: np.ndarray  # (d,) float32
    maxs: np.ndarray  # (d,) float32

    @property
    def steps(self) -> np.ndarray:
        return (self.maxs.astype(np.float64) - self.mins.astype(np.float64)) / 255.0


def sq_train(data: np.ndarray) -> SqParams:
    data = np.asarray(data, dtype=np.float32)
    return SqParams(mins=data.min(axis=0), maxs=data.max(axis=0))


def sq_encode(params: SqParams, data: np.ndarray) -> np.ndarray:
    """Round-to-nearest affine map to [0, 255]; constant dimensions encode to 0."""
    data = np.asarray(data, dtype=np.float64)
    steps = params.steps
    scaled = np.divide(
        data - params.mins.astype(np.float64),
        steps,
        out=np.zeros_like(data),
        where=steps > 0,
    )
    return np.rint(np.clip(scaled, 0.0, 255.0)).astype(np.uint8)


def sq_decode(params: SqParams, codes: np.ndarray) -> np.ndarray:
    return (params.mins.astype(np.float64) + codes * params.steps).astype(np.float32)


def sq_distances(params: SqParams, q_code: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Euclidean distances in the quantized domain, 16-bit-widened code deltas."""
    delta = codes.astype(np.int16) - q_code.astype(np.int16)
    scaled = delta * params.steps
    return np.sqrt(np.einsum("ij,ij->i", scaled, scaled))


def sq_distance(params: SqParams, q_code: np.ndarray, x_code: np.ndarray) -> float:
    return float(sq_distances(params, q_code, x_code[None, :])[0])


class SqIndex:
    """Flat scan over 8-bit codes."""

    def __init__(self, params: SqParams, codes: np.ndarray):
        self.params = params
        self.codes = codes

    @classmethod
    def build(cls, data: np.ndarray) -> "SqIndex":
        data = check_vectors(data, name="base")
        params = sq_train(data)
        return cls(params, sq_encode(params, data))

    def search(self, query: np.ndarray, k: int):
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        q_code = sq_encode(self.params, np.asarray(query, dtype=np.float32).reshape(1, -1))[0]
        dists = sq_distances(self.params, q_code, self.codes)
        return _top_k(dists, np.arange(self.codes.shape[0], dtype=np.int64), k)

    def search_batch(self, queries: np.ndarray, k: int) -> np.ndarray:
        out = np.full((queries.shape[0], k), -1, dtype=np.int64)
        for qi in range(queries.shape[0]):
            ids, _ = self.search(queries[qi], k)
            out[qi, : ids.shape[0]] = ids
        return out

    def save(self, path: str) -> None:
        w = BlockWriter(SQ_MAGIC, FORMAT_VERSION)
        w.array(self.params.mins)
        w.array(self.params.maxs)
        w.array(self.codes)
        w.save(path)

    @classmethod
    def load(cls, path: str) -> "SqIndex":
        r = BlockReader(path, SQ_MAGIC, FORMAT_VERSION)
        mins = r.array()
        maxs = r.array()
        codes = r.array()
        r.expect_end()
        return cls(SqParams(mins, maxs), codes)
