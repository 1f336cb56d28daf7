"""Hierarchical navigable-small-world graph index.

Supports the split protocol: the graph can be built over one vector set
(typically compressed vectors, cheap distances) and searched against an
attached second set with the same ids (typically the full-dimensional
vectors, exact distances). Construction is sequential and deterministic
given the config seed; every distance evaluation is counted in multiply
operations so build costs can be compared analytically rather than timed.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .blockio import BlockReader, BlockWriter
from .validation import check_same_dim, check_vectors

INDEX_MAGIC = b"HNS1"
INDEX_VERSION = 1


@dataclass(frozen=True)
class HnswConfig:
    """Graph parameters; level_lambda is tied to M as 1/ln(M)."""

    M: int = 16
    ef_construction: int = 100
    ef_search_default: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.M < 2:
            raise ValueError(f"M must be >= 2, got {self.M}")
        if self.ef_construction < self.M:
            raise ValueError(
                f"ef_construction must be >= M: got {self.ef_construction} < {self.M}"
            )

    @property
    def level_lambda(self) -> float:
        return 1.0 / math.log(self.M)


class HnswIndex:
    """Layered adjacency over build vectors, with optional attached search vectors."""

    def __init__(self, vectors: np.ndarray, config: HnswConfig):
        self.config = config
        self.vectors = vectors
        self.search_vectors: np.ndarray | None = None
        self.levels = np.zeros(vectors.shape[0], dtype=np.int32)
        self.entry = -1
        self.layers: list[dict[int, list[int]]] = []
        self.stats = {
            "build_distance_multiplies": 0,
            "search_distance_multiplies": 0,
            "search_nodes_visited": 0,
        }

    # -- distance plumbing ------------------------------------------------

    def _dists(self, q: np.ndarray, ids: list[int], vectors: np.ndarray, counter: str) -> np.ndarray:
        diff = vectors[ids] - q
        self.stats[counter] += diff.size
        return np.einsum("ij,ij->i", diff, diff)

    def _active_vectors(self) -> np.ndarray:
        return self.vectors if self.search_vectors is None else self.search_vectors

    # -- core layer search -------------------------------------------------

    def _search_layer(
        self,
        q: np.ndarray,
        entry_ids: list[int],
        ef: int,
        layer: int,
        vectors: np.ndarray,
        counter: str,
        count_visits: bool = False,
    ) -> list[tuple[float, int]]:
        """ef-bounded best-first search on one layer; returns (sq_dist, id) ascending."""
        visited = set(entry_ids)
        dists = self._dists(q, entry_ids, vectors, counter)
        candidates = list(zip(dists.tolist(), entry_ids))
        heapq.heapify(candidates)
        # Max-heap keyed (-dist, -id): on eviction ties the larger id leaves first.
        best = [(-d, -i) for d, i in candidates]
        heapq.heapify(best)
        while len(best) > ef:
            heapq.heappop(best)
        adjacency = self.layers[layer]
        while candidates:
            d, node = heapq.heappop(candidates)
            if len(best) >= ef and d > -best[0][0]:
                break
            if count_visits:
                self.stats["search_nodes_visited"] += 1
            neighbors = [n for n in adjacency.get(node, ()) if n not in visited]
            if not neighbors:
                continue
            visited.update(neighbors)
            neighbor_dists = self._dists(q, neighbors, vectors, counter)
            for nd, nid in zip(neighbor_dists.tolist(), neighbors):
                if len(best) < ef:
                    heapq.heappush(best, (-nd, -nid))
                    heapq.heappush(candidates, (nd, nid))
                elif nd < -best[0][0]:
                    heapq.heappushpop(best, (-nd, -nid))
                    heapq.heappush(candidates, (nd, nid))
        return sorted((-nd, -ni) for nd, ni in best)

    def _select_heuristic(
        self,
        candidates: list[tuple[float, int]],
        m: int,
        *,
        keep_pruned: bool,
        counter: str = "build_distance_multiplies",
    ) -> list[int]:
        """Diversity-pruning neighbor selection.

        A candidate is kept only if it is closer to the target than to every
        already-kept neighbor; with `keep_pruned`, remaining slots are filled
        with the closest rejected candidates.
        """
        kept: list[int] = []
        pruned: list[tuple[float, int]] = []
        for d_c, c in sorted(candidates):
            if len(kept) >= m:
                break
            if kept and (self._dists(self.vectors[c], kept, self.vectors, counter) < d_c).any():
                pruned.append((d_c, c))
            else:
                kept.append(c)
        if keep_pruned:
            for d_c, c in pruned:
                if len(kept) >= m:
                    break
                kept.append(c)
        return kept

    # -- construction ------------------------------------------------------

    def _insert(self, i: int, level: int) -> None:
        while len(self.layers) <= level:
            self.layers.append({})
        self.levels[i] = level
        if self.entry < 0:
            for layer in range(level + 1):
                self.layers[layer][i] = []
            self.entry = i
            return
        top = int(self.levels[self.entry])
        q = self.vectors[i]
        ep = [self.entry]
        for layer in range(top, level, -1):
            nearest = self._search_layer(q, ep, 1, layer, self.vectors, "build_distance_multiplies")
            ep = [nearest[0][1]]
        for layer in range(min(level, top), -1, -1):
            found = self._search_layer(
                q, ep, self.config.ef_construction, layer, self.vectors, "build_distance_multiplies"
            )
            selected = self._select_heuristic(found, self.config.M, keep_pruned=True)
            cap = 2 * self.config.M if layer == 0 else self.config.M
            adjacency = self.layers[layer]
            adjacency[i] = list(selected)
            for n in selected:
                links = adjacency[n]
                links.append(i)
                if len(links) > cap:
                    link_dists = self._dists(
                        self.vectors[n], links, self.vectors, "build_distance_multiplies"
                    )
                    adjacency[n] = self._select_heuristic(
                        list(zip(link_dists.tolist(), links)), cap, keep_pruned=False
                    )
            ep = [node for _, node in found]
        for layer in range(top + 1, level + 1):
            self.layers[layer][i] = []
        if level > top:
            self.entry = i

    # -- public API ----------------------------------------------------------

    def attach_search_vectors(self, full: np.ndarray) -> None:
        """Bind a same-count vector set; all later searches use its distances."""
        full = check_vectors(full, name="search_vectors")
        if full.shape[0] != self.vectors.shape[0]:
            raise ValueError(
                f"search_vectors count {full.shape[0]} does not match "
                f"index count {self.vectors.shape[0]}"
            )
        self.search_vectors = full

    def search(self, query: np.ndarray, k: int, ef_search: int | None = None):
        """Top-k ids and euclidean distances in the active vector space."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        ef = self.config.ef_search_default if ef_search is None else ef_search
        if ef < k:
            raise ValueError(f"ef_search must be >= k: got {ef} < {k}")
        vectors = self._active_vectors()
        query = np.asarray(query, dtype=np.float32).reshape(-1)
        check_same_dim(query.shape[0], vectors.shape[1], "query", "index")
        ep = [self.entry]
        top = int(self.levels[self.entry])
        for layer in range(top, 0, -1):
            nearest = self._search_layer(
                query, ep, 1, layer, vectors, "search_distance_multiplies", count_visits=True
            )
            ep = [nearest[0][1]]
        found = self._search_layer(
            query, ep, ef, 0, vectors, "search_distance_multiplies", count_visits=True
        )[:k]
        ids = np.array([node for _, node in found], dtype=np.int64)
        dists = np.sqrt(np.array([d for d, _ in found], dtype=np.float64))
        return ids, dists

    def search_batch(self, queries: np.ndarray, k: int, ef_search: int | None = None) -> np.ndarray:
        """Row-per-query id matrix; rows shorter than k are padded with -1."""
        queries = np.asarray(queries, dtype=np.float32)
        out = np.full((queries.shape[0], k), -1, dtype=np.int64)
        for qi in range(queries.shape[0]):
            ids, _ = self.search(queries[qi], k, ef_search)
            out[qi, : ids.shape[0]] = ids
        return out

    def reset_search_stats(self) -> None:
        self.stats["search_distance_multiplies"] = 0
        self.stats["search_nodes_visited"] = 0

    def max_degree(self, layer: int) -> int:
        return max((len(v) for v in self.layers[layer].values()), default=0)

    # -- persistence ---------------------------------------------------------

    def save(self, path: str) -> None:
        w = BlockWriter(INDEX_MAGIC, INDEX_VERSION)
        w.json(
            {
                "M": self.config.M,
                "ef_construction": self.config.ef_construction,
                "ef_search_default": self.config.ef_search_default,
                "seed": self.config.seed,
            }
        )
        count = self.vectors.shape[0]
        w.u64(count)
        w.u64(self.entry)
        w.array(self.levels)
        w.u32(len(self.layers))
        for layer, adjacency in enumerate(self.layers):
            indptr = np.zeros(count + 1, dtype=np.int64)
            chunks = []
            for i in range(count):
                links = adjacency.get(i, ())
                indptr[i + 1] = indptr[i] + len(links)
                if links:
                    chunks.append(np.asarray(links, dtype=np.int32))
            w.array(indptr)
            w.array(np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int32))
        w.u8(0 if self.search_vectors is None else 1)
        w.array(self.vectors)
        if self.search_vectors is not None:
            w.array(self.search_vectors)
        w.save(path)

    @classmethod
    def load(cls, path: str) -> "HnswIndex":
        r = BlockReader(path, INDEX_MAGIC, INDEX_VERSION)
        cfg = r.json()
        config = HnswConfig(**cfg)
        count = r.u64()
        entry = r.u64()
        levels = r.array()
        n_layers = r.u32()
        raw_layers = []
        for _ in range(n_layers):
            indptr = r.array()
            indices = r.array()
            raw_layers.append((indptr, indices))
        has_search = r.u8()
        vectors = r.array()
        index = cls(vectors, config)
        index.entry = int(entry)
        index.levels = levels.astype(np.int32)
        for layer, (indptr, indices) in enumerate(raw_layers):
            adjacency: dict[int, list[int]] = {}
            for i in range(count):
                if index.levels[i] >= layer:
                    adjacency[i] = indices[indptr[i] : indptr[i + 1]].tolist()
            index.layers.append(adjacency)
        if has_search:
            index.search_vectors = r.array()
        r.expect_end()
        return index


def build(
    base: np.ndarray,
    config: HnswConfig = HnswConfig(),
    *,
    search_vectors: np.ndarray | None = None,
) -> HnswIndex:
    """Insert rows 0..count-1 sequentially; deterministic for a given seed."""
    base = check_vectors(base, name="base")
    if base.shape[0] < 1:
        raise ValueError("cannot build an index over an empty vector set")
    index = HnswIndex(base, config)
    rng = np.random.default_rng(config.seed)
    # Geometric level law: floor(-ln(U) * lambda), U uniform on (0, 1].
    uniforms = 1.0 - rng.random(base.shape[0])
    levels = np.floor(-np.log(uniforms) * config.level_lambda).astype(np.int64)
    for i in range(base.shape[0]):
        index._insert(i, int(levels[i]))
    if search_vectors is not None:
        index.attach_search_vectors(search_vectors)
    return index
