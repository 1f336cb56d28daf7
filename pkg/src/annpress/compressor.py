"""Scikit-learn style estimator facade over the compressor network.

`fit` trains the network on the rows of X with the pairwise
neighborhood-preserving objective; `transform` maps vectors to the
compressed space with frozen batchnorm statistics. All hyperparameters are
plain constructor arguments so `get_params` / `set_params` / `clone` work as
usual.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .model import CompressorNet, ModelConfig, load_checkpoint
from .training import LossConfig, TrainConfig, train
from .validation import check_same_dim, check_vectors


class NeighborhoodPreservingCompressor(BaseEstimator, TransformerMixin):
    """Learns a d_in -> d_out map that preserves near-neighbor distances.

    Parameters mirror the model / loss / optimizer configs one-to-one. The
    fitted attributes are `model_` (the trained network), `boundary_` (the
    frozen average pairwise distance of the training set), and `report_`
    (the per-epoch learning curve).
    """

    def __init__(
        self,
        d_out: int = 32,
        *,
        n_projections: int = 8,
        stages: int = 2,
        encoders_per_stage: tuple[int, ...] = (2, 2),
        heads: int = 4,
        qk_dim: int | None = None,
        epochs: int = 100,
        batch_size: int = 256,
        lr0: float = 1e-4,
        poly_power: float = 0.9,
        weight_decay: float = 1e-4,
        weight_ceiling: float = 2.0,
        weight_floor: float = 0.01,
        squared_gap: bool = False,
        random_state: int = 0,
        verbose: int = 0,
    ):
        self.d_out = d_out
        self.n_projections = n_projections
        self.stages = stages
        self.encoders_per_stage = encoders_per_stage
        self.heads = heads
        self.qk_dim = qk_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr0 = lr0
        self.poly_power = poly_power
        self.weight_decay = weight_decay
        self.weight_ceiling = weight_ceiling
        self.weight_floor = weight_floor
        self.squared_gap = squared_gap
        self.random_state = random_state
        self.verbose = verbose

    def _model_config(self, d_in: int) -> ModelConfig:
        return ModelConfig(
            d_in=d_in,
            d_out=self.d_out,
            n_projections=self.n_projections,
            stages=self.stages,
            encoders_per_stage=tuple(self.encoders_per_stage),
            heads=self.heads,
            qk_dim=self.qk_dim,
            seed=self.random_state,
        )

    def fit(self, X, y=None):
        X = check_vectors(X, name="X")
        self.n_features_in_ = X.shape[1]
        model = CompressorNet(self._model_config(X.shape[1]))
        report = train(
            model,
            X,
            LossConfig(
                ceiling=self.weight_ceiling,
                floor=self.weight_floor,
                squared_gap=self.squared_gap,
            ),
            TrainConfig(
                epochs=self.epochs,
                batch_size=self.batch_size,
                lr0=self.lr0,
                poly_power=self.poly_power,
                weight_decay=self.weight_decay,
                seed=self.random_state,
            ),
            log_every=self.verbose,
        )
        self.model_ = model
        self.boundary_ = report.boundary
        self.report_ = report
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_vectors(X, name="X", allow_empty=True)
        check_same_dim(X.shape[1], self.n_features_in_, "X", "training data")
        return self.model_.compress(X)

    def save(self, path: str) -> None:
        """Persist the fitted network as a checkpoint file."""
        check_is_fitted(self, "model_")
        self.model_.save(path)

    @classmethod
    def from_checkpoint(cls, path: str) -> "NeighborhoodPreservingCompressor":
        """Rebuild a transform-ready estimator from a checkpoint.

        The training curve is not stored in checkpoints, so `report_` is
        unavailable on the result.
        """
        model = load_checkpoint(path)
        cfg = model.config
        est = cls(
            d_out=cfg.d_out,
            n_projections=cfg.n_projections,
            stages=cfg.stages,
            encoders_per_stage=cfg.encoders_per_stage,
            heads=cfg.heads,
            qk_dim=cfg.qk_dim,
            random_state=cfg.seed,
        )
        est.model_ = model
        est.n_features_in_ = cfg.d_in
        return est
