"""Neighborhood-preserving feature compression for approximate nearest
neighbor search: a learnable token-based compressor trained with a pairwise
distance-gap objective, plus the index structures (brute force, HNSW graph,
product/scalar quantization) and recall metrics used to evaluate it."""

from .compressor import NeighborhoodPreservingCompressor
from .hnsw import HnswConfig, HnswIndex
from .hnsw import build as build_hnsw
from .loss import estimate_boundary, inrp_loss, pairwise_distances, relationship_weights
from .metrics import (
    FlatIndex,
    RecallReport,
    brute_force_knn,
    compute_recall_report,
    distortion_interval,
    jl_min_epsilon,
    measure_qps,
    recall_1_at,
    recall_overlap,
)
from .model import CompressorNet, ModelConfig, load_checkpoint, save_checkpoint
from .quantizers import IvfIndex, PqIndex, SqIndex, kmeans, pq_decode, pq_encode, pq_train
from .training import LossConfig, TrainConfig, TrainReport, train
from .vecio import read_bvecs, read_fvecs, read_ivecs, split_queries, write_fvecs, write_ivecs

__version__ = "0.1.0"

__all__ = [
    "NeighborhoodPreservingCompressor",
    "CompressorNet",
    "ModelConfig",
    "LossConfig",
    "TrainConfig",
    "TrainReport",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "estimate_boundary",
    "inrp_loss",
    "pairwise_distances",
    "relationship_weights",
    "HnswConfig",
    "HnswIndex",
    "build_hnsw",
    "FlatIndex",
    "PqIndex",
    "IvfIndex",
    "SqIndex",
    "kmeans",
    "pq_train",
    "pq_encode",
    "pq_decode",
    "RecallReport",
    "brute_force_knn",
    "compute_recall_report",
    "recall_1_at",
    "recall_overlap",
    "distortion_interval",
    "jl_min_epsilon",
    "measure_qps",
    "read_fvecs",
    "read_bvecs",
    "read_ivecs",
    "write_fvecs",
    "write_ivecs",
    "split_queries",
    "__version__",
]
