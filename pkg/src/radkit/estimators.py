"""Scikit-learn-compatible wrappers around the pretraining core.

:class:`RadarContrastivePretrainer` is the fit/transform face of the
self-supervised loop: ``fit`` runs contrastive pretraining on a frame
dataset, ``transform`` maps heatmaps to frozen backbone features, and
``embed`` returns the unit-norm projections used by the contrastive
losses.  :class:`RidgeProbe` is the matching closed-form downstream
regressor.  Both inherit scikit-learn's parameter plumbing
(``get_params`` / ``set_params``) so they compose with pipelines,
grid search, and cross-validation.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from .augment import AugmentationSpec
from .contrastive import ContrastiveConfig
from .encoder import forward_batch
from .train import Frame, FrameDataset, TrainConfig, pretrain
from .validation import check_embedding_rows, check_heatmap_batch

__all__ = ["RadarContrastivePretrainer", "RidgeProbe"]


class RadarContrastivePretrainer(BaseEstimator, TransformerMixin):
    """Self-supervised radar representation learner.

    Parameters mirror :class:`radkit.train.TrainConfig`; ``augmentation``
    accepts an :class:`AugmentationSpec` or ``None`` for the default
    pipeline.  ``fit`` expects a :class:`FrameDataset` or a sequence of
    :class:`Frame` values (the paired raw tensor and scene per sample);
    the target argument is ignored and present for API compatibility.

    Attributes set by ``fit``: ``params_`` (trained encoder),
    ``init_params_`` (the pre-training initialization, useful as a
    random-arm control), ``metrics_`` (per-step loss records) and
    ``n_projection_fallbacks_``.
    """

    def __init__(self, batch_size: int = 32, steps: int = 500,
                 lr_base: float = 0.05, momentum: float = 0.9,
                 weight_decay: float = 1e-4, schedule: str = "cosine",
                 temperature: float = 0.1, lambda_cross: float = 1.0,
                 symmetric_cross: bool = False,
                 negatives_variant: str = "cross_view",
                 hidden_widths: tuple[int, ...] = (256,),
                 feat_dim: int = 128, embed_dim: int = 128,
                 augmentation: AugmentationSpec | None = None,
                 oracle_seed: int = 101, random_state: int = 0):
        self.batch_size = batch_size
        self.steps = steps
        self.lr_base = lr_base
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.schedule = schedule
        self.temperature = temperature
        self.lambda_cross = lambda_cross
        self.symmetric_cross = symmetric_cross
        self.negatives_variant = negatives_variant
        self.hidden_widths = hidden_widths
        self.feat_dim = feat_dim
        self.embed_dim = embed_dim
        self.augmentation = augmentation
        self.oracle_seed = oracle_seed
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            steps=self.steps,
            lr_base=self.lr_base,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            schedule=self.schedule,
            seed=self.random_state,
            augmentation=(self.augmentation if self.augmentation is not None
                          else AugmentationSpec.default()),
            contrastive=ContrastiveConfig(
                temperature=self.temperature,
                lambda_cross=self.lambda_cross,
                symmetric_cross=self.symmetric_cross,
                negatives_variant=self.negatives_variant,
            ),
            hidden_widths=tuple(self.hidden_widths),
            feat_dim=self.feat_dim,
            embed_dim=self.embed_dim,
            oracle_seed=self.oracle_seed,
        )

    def fit(self, X, y=None):
        dataset = X if isinstance(X, FrameDataset) else FrameDataset(list(X))
        if not all(isinstance(f, Frame) for f in dataset):
            raise TypeError("fit expects Frame items (tensor + scene pairs)")
        result = pretrain(self._config(), dataset=dataset)
        self.params_ = result.params
        self.init_params_ = result.init_params
        self.metrics_ = result.metrics
        self.n_projection_fallbacks_ = result.fallback_count
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("call fit before transform/embed")

    def transform(self, X) -> np.ndarray:
        """Frozen backbone features for a batch of heatmaps."""
        self._check_fitted()
        arr = check_heatmap_batch(X, self.params_.input_dim)
        feats, _, _ = forward_batch(self.params_, arr)
        return feats

    def embed(self, X) -> np.ndarray:
        """Unit-norm projected embeddings for a batch of heatmaps."""
        self._check_fitted()
        arr = check_heatmap_batch(X, self.params_.input_dim)
        _, z, _ = forward_batch(self.params_, arr)
        return z


class RidgeProbe(BaseEstimator, RegressorMixin):
    """Closed-form ridge regressor with an unpenalized intercept.

    Deterministic and dependency-free on purpose: probing frozen features
    must not introduce its own stochasticity.
    """

    def __init__(self, ridge_lambda: float = 1e-3):
        self.ridge_lambda = ridge_lambda

    def fit(self, X, y):
        x = check_embedding_rows(X, "features")
        t = np.asarray(y, dtype=np.float64)
        squeeze = t.ndim == 1
        if squeeze:
            t = t[:, None]
        if t.shape[0] != x.shape[0]:
            raise ValueError("X and y row counts differ")
        if self.ridge_lambda < 0:
            raise ValueError("ridge_lambda must be >= 0")
        x_mean = x.mean(axis=0)
        y_mean = t.mean(axis=0)
        xc = x - x_mean
        yc = t - y_mean
        gram = xc.T @ xc + self.ridge_lambda * np.eye(x.shape[1])
        try:
            coef = np.linalg.solve(gram, xc.T @ yc)
        except np.linalg.LinAlgError as e:
            raise ValueError(
                "feature covariance is singular; set ridge_lambda > 0") from e
        if not np.isfinite(coef).all():
            raise ValueError("ridge solution is non-finite; set ridge_lambda > 0")
        self.coef_ = coef
        self.x_mean_ = x_mean
        self.y_mean_ = y_mean
        self._squeeze = squeeze
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "coef_"):
            raise NotFittedError("call fit before predict")
        x = check_embedding_rows(X, "features")
        out = (x - self.x_mean_) @ self.coef_ + self.y_mean_
        return out[:, 0] if self._squeeze else out
