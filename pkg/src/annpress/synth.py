"""Synthetic clustered datasets for desk-scale benchmarks.

Points are drawn from a mixture of clusters whose spread lives on
low-dimensional subspaces, so the data has far lower intrinsic dimension
than the ambient space. A learned compressor can exploit that structure
where a fixed random projection cannot, which is exactly the contrast the
training-efficacy benchmark measures.

Two layouts are supported: each cluster on its own independent subspace of
the ambient space, or (with `global_dim`) the whole mixture embedded in one
shared low-dimensional subspace — the latter admits a near-isometric
compression whenever the output dimension is at least `global_dim`.
"""

from __future__ import annotations

import numpy as np


def clustered_dataset(
    count: int,
    dim: int,
    *,
    clusters: int = 64,
    subspace_dim: int = 8,
    global_dim: int | None = None,
    center_scale: float = 1.0,
    local_scale: float = 1.0,
    noise_scale: float = 0.05,
    seed: int = 0,
) -> np.ndarray:
    """Mixture of `clusters` gaussian centers with `subspace_dim`-dimensional spread.

    Without `global_dim`, each cluster gets its own random orthonormal basis
    in the ambient space. With `global_dim`, centers and spreads are drawn
    inside a single `global_dim`-dimensional coordinate system that is then
    embedded in the ambient space through one shared orthonormal basis.
    Either way a point is center + basis @ gaussian coefficients + isotropic
    ambient noise.
    """
    rng = np.random.default_rng(seed)
    ambient = dim if global_dim is None else global_dim
    if subspace_dim > ambient:
        raise ValueError(f"subspace_dim {subspace_dim} exceeds {ambient} available dims")
    if global_dim is not None and global_dim > dim:
        raise ValueError(f"global_dim {global_dim} exceeds ambient dim {dim}")

    centers = rng.normal(size=(clusters, ambient)) * center_scale
    bases = np.empty((clusters, ambient, subspace_dim))
    for c in range(clusters):
        q, _ = np.linalg.qr(rng.normal(size=(ambient, subspace_dim)))
        bases[c] = q
    labels = rng.integers(0, clusters, size=count)
    coeffs = rng.normal(size=(count, subspace_dim)) * local_scale
    points = centers[labels] + np.einsum("nds,ns->nd", bases[labels], coeffs)
    if global_dim is not None:
        embed, _ = np.linalg.qr(rng.normal(size=(dim, global_dim)))
        points = points @ embed.T
    points += rng.normal(size=(count, dim)) * noise_scale
    return points.astype(np.float32)
