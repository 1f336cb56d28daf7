"""Inhomogeneous neighborhood-relationship-preserving loss.

The training objective compares every pairwise euclidean distance in the
compressed space against the same pair's distance in the input space and
penalizes the absolute gap, weighted so that near neighbors (relative to a
dataset-scale `boundary` distance) dominate:

    loss = (1/B^2) * sum_ij w_ij * |dist_c(i,j) - dist_x(i,j)|
    w_ij = min(alpha, max(beta, -ln(dist_x(i,j) / boundary)))

Weights are treated as constants of the batch; no gradient flows through
them. The loss is registered on the tape as a single primitive with an
analytic backward, which keeps the graph small and the gradient exact even
though the forward involves a full B x B distance matrix.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor

WEIGHT_CEILING = 2.0
WEIGHT_FLOOR = 0.01
EXACT_BOUNDARY_THRESHOLD = 2000


def pairwise_distances(x: np.ndarray) -> np.ndarray:
    """Dense euclidean distance matrix with an exactly-zero diagonal."""
    x = np.asarray(x)
    sq = np.einsum("ij,ij->i", x, x)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    d = np.sqrt(d2)
    np.fill_diagonal(d, 0.0)
    return d


def relationship_weights(
    dist_x: np.ndarray,
    boundary: float,
    *,
    ceiling: float = WEIGHT_CEILING,
    floor: float = WEIGHT_FLOOR,
) -> np.ndarray:
    """Clamped -ln(d / boundary) weights; zero distances clamp to the ceiling."""
    if boundary <= 0:
        raise ValueError(f"boundary must be positive, got {boundary}")
    with np.errstate(divide="ignore"):
        raw = -np.log(dist_x / boundary)
    return np.clip(raw, floor, ceiling)


def estimate_boundary(
    x: np.ndarray,
    *,
    exact_threshold: int = EXACT_BOUNDARY_THRESHOLD,
    num_pairs: int = 1_000_000,
    seed: int = 0,
) -> float:
    """Average pairwise distance: exact for small sets, seeded pair sampling otherwise."""
    x = np.asarray(x)
    n = x.shape[0]
    if n < 2:
        raise ValueError("boundary estimation needs at least 2 vectors")
    if num_pairs < 1:
        raise ValueError(f"num_pairs must be >= 1, got {num_pairs}")
    if n <= exact_threshold:
        d = pairwise_distances(x)
        boundary = float(d[np.triu_indices(n, k=1)].mean())
    else:
        rng = np.random.default_rng(seed)
        ii = rng.integers(0, n, size=num_pairs)
        # Uniform over j != i without rejection sampling.
        jj = (ii + 1 + rng.integers(0, n - 1, size=num_pairs)) % n
        total = 0.0
        chunk = 50_000
        for lo in range(0, num_pairs, chunk):
            diff = np.asarray(x[ii[lo : lo + chunk]], dtype=np.float32) - x[jj[lo : lo + chunk]]
            total += float(np.sqrt(np.einsum("ij,ij->i", diff, diff, dtype=np.float64)).sum())
        boundary = total / num_pairs
    if boundary <= 0.0:
        raise ValueError("degenerate dataset: all sampled points are identical, boundary is 0")
    return boundary


def inrp_loss(
    compressed: Tensor,
    x_batch: np.ndarray,
    boundary: float,
    *,
    ceiling: float = WEIGHT_CEILING,
    floor: float = WEIGHT_FLOOR,
    squared_gap: bool = False,
) -> Tensor:
    """Weighted mean distance-gap loss as a single tape primitive.

    `compressed` is the (batch, d_out) network output on the tape; `x_batch`
    is the matching raw input, a constant. With `squared_gap` the |gap| term
    becomes gap^2 (smooth ablation variant); the default is the absolute gap.
    """
    tape = compressed.tape
    c = compressed.data
    x = np.asarray(x_batch, dtype=c.dtype)
    if c.shape[0] != x.shape[0]:
        raise ValueError(f"batch sizes differ: compressed {c.shape[0]} vs input {x.shape[0]}")
    b = c.shape[0]
    if b < 2:
        raise ValueError(f"pairwise loss needs a batch of at least 2, got {b}")

    dist_c = pairwise_distances(c)
    dist_x = pairwise_distances(x)
    w = relationship_weights(dist_x, boundary, ceiling=ceiling, floor=floor)
    gap = dist_c - dist_x
    if squared_gap:
        loss_value = (w * gap * gap).sum() / (b * b)
        q = 2.0 * gap
    else:
        loss_value = (w * np.abs(gap)).sum() / (b * b)
        q = np.sign(gap)

    # d loss / d c_k = (2/B^2) * sum_j w_kj q_kj (c_k - c_j) / dist_c_kj,
    # with zero-distance pairs contributing nothing.
    coef = np.divide(w * q, dist_c, out=np.zeros_like(dist_c), where=dist_c > 0)

    def back(g):
        grad = (coef.sum(axis=1)[:, None] * c - coef @ c) * (2.0 / (b * b))
        return (grad * g,)

    return tape.record(np.asarray(loss_value, dtype=tape.dtype), (compressed,), back)
