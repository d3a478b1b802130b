"""Training driver for the two-layer transform plus a scikit-learn front end.

Training is exact block coordinate descent over (z1, w1, z2, w2): each pass
runs the four closed-form updates from :mod:`mrst.model` in that order, so
the objective is nonincreasing by construction and no step sizes or line
searches are involved.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .core import PatchConfig, PatchSet, dct2_matrix, hard_threshold
from .model import (
    SparseCodes,
    TwoLayerModel,
    code_patches,
    objective_p0,
    sparse_code_layer1,
    sparse_code_layer2,
    update_transform1,
    update_transform2,
)

__all__ = [
    "TrainConfig",
    "TrainReport",
    "train",
    "subsample_patches",
    "TwoLayerTransformLearner",
]

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Hyperparameters for :func:`train`.

    ``patch`` is optional; when given it must match the layout the patches
    were extracted with (it mainly exists so config files can carry the
    extraction layout and training thresholds together).
    """

    eta1: float = 80.0
    eta2: float = 60.0
    iterations: int = 1000
    layers: int = 2
    patch: PatchConfig | None = None
    seed: int = 0
    max_patches: int | None = None
    log_every: int = 0

    def __post_init__(self):
        if self.eta1 < 0 or self.eta2 < 0:
            raise ValueError("thresholds must be nonnegative")
        if int(self.iterations) < 1:
            raise ValueError("iterations must be positive")
        self.iterations = int(self.iterations)
        if self.layers not in (1, 2):
            raise ValueError("layers must be 1 or 2")
        if self.max_patches is not None and int(self.max_patches) < 1:
            raise ValueError("max_patches must be positive when given")


@dataclass
class TrainReport:
    """Per-iteration training trace.

    ``cost_history[t]`` is the objective after pass ``t`` completes;
    ``nnz1_history`` and ``nnz2_history`` are nonzero fractions of the codes.
    ``nnz2_history`` is all zeros for single-layer models.
    """

    cost_history: np.ndarray
    nnz1_history: np.ndarray
    nnz2_history: np.ndarray
    model: TwoLayerModel


def subsample_patches(patches, max_patches, seed):
    """Keep a uniform random subset of patch columns, preserving order.

    Returns the input unchanged when it already has at most ``max_patches``
    columns.  Selection is drawn from ``numpy.random.default_rng(seed)`` so
    equal seeds give equal subsets.
    """
    if int(max_patches) < 1:
        raise ValueError("max_patches must be positive")
    if patches.n <= int(max_patches):
        return patches
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(patches.n, size=int(max_patches), replace=False))
    return PatchSet(patches.data[:, keep], patches.config, patches.source_dims)


def train(patches, config):
    """Learn a model from a patch set by exact block coordinate descent.

    Parameters
    ----------
    patches : PatchSet
    config : TrainConfig

    Returns
    -------
    (TwoLayerModel, TrainReport)
    """
    if config.patch is not None and config.patch != patches.config:
        raise ValueError("config.patch does not match the patch set layout")
    if config.max_patches is not None:
        patches = subsample_patches(patches, config.max_patches, config.seed)
    return _train_matrix(
        patches.data, patches.config.patch_w, patches.config.patch_h, config
    )


def _train_matrix(r1, patch_w, patch_h, config):
    """Core BCD loop on a raw ``(p, n)`` patch matrix."""
    p, _ = r1.shape
    if p != patch_w * patch_h:
        raise ValueError("patch matrix rows do not match the patch dimensions")
    model = TwoLayerModel(
        w1=dct2_matrix(patch_w, patch_h),
        w2=np.eye(p) if config.layers == 2 else None,
        eta1=config.eta1,
        eta2=config.eta2,
        layers=config.layers,
    )
    z2 = np.zeros_like(r1) if config.layers == 2 else None
    cost = np.empty(config.iterations)
    nnz1 = np.empty(config.iterations)
    nnz2 = np.zeros(config.iterations)
    denom = float(r1.size)
    for it in range(config.iterations):
        if config.layers == 2:
            z1 = sparse_code_layer1(r1, z2, model, config.eta1)
            model = replace(model, w1=update_transform1(r1, z1, z2, model))
            z2 = sparse_code_layer2(r1, z1, model, config.eta2)
            model = replace(model, w2=update_transform2(r1, z1, z2, model))
            codes = SparseCodes(z1, z2)
            nnz2[it] = np.count_nonzero(z2) / denom
        else:
            z1 = hard_threshold(model.w1 @ r1, config.eta1)
            model = replace(model, w1=update_transform1(r1, z1, None, model))
            codes = SparseCodes(z1, None)
        cost[it] = objective_p0(r1, codes, model, config.eta1, config.eta2)
        nnz1[it] = np.count_nonzero(z1) / denom
        if config.log_every and (it + 1) % config.log_every == 0:
            logger.info(
                "iter %d cost %.6e nnz1 %.4f nnz2 %.4f",
                it + 1, cost[it], nnz1[it], nnz2[it],
            )
    report = TrainReport(cost, nnz1, nnz2, model)
    return model, report


class TwoLayerTransformLearner(BaseEstimator, TransformerMixin):
    """Scikit-learn style wrapper around :func:`train`.

    Rows of ``X`` are vectorized patches of length ``patch_w * patch_h``.
    When the patch dimensions are omitted a square patch is inferred from
    the feature count.

    Attributes (after fit)
    ----------------------
    model_ : TwoLayerModel
    w1_, w2_ : numpy.ndarray
        The learned unitary transforms.
    cost_history_ : numpy.ndarray
        Objective value after each training pass.

    Examples
    --------
    >>> learner = TwoLayerTransformLearner(eta1=0.5, eta2=0.3, n_iter=20)
    >>> codes = learner.fit_transform(patch_rows)
    """

    def __init__(
        self,
        eta1=80.0,
        eta2=60.0,
        n_iter=100,
        layers=2,
        patch_w=None,
        patch_h=None,
        max_patches=None,
        seed=0,
    ):
        self.eta1 = eta1
        self.eta2 = eta2
        self.n_iter = n_iter
        self.layers = layers
        self.patch_w = patch_w
        self.patch_h = patch_h
        self.max_patches = max_patches
        self.seed = seed

    def _patch_dims(self, p):
        if self.patch_w is not None or self.patch_h is not None:
            pw = self.patch_w if self.patch_w is not None else 1
            ph = self.patch_h if self.patch_h is not None else 1
            if pw * ph != p:
                raise ValueError(
                    f"patch_w * patch_h = {pw * ph} does not match n_features = {p}"
                )
            return int(pw), int(ph)
        root = math.isqrt(p)
        if root * root == p:
            return root, root
        return p, 1

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_all_finite=True)
        pw, ph = self._patch_dims(X.shape[1])
        r1 = np.ascontiguousarray(X.T)
        if self.max_patches is not None and r1.shape[1] > int(self.max_patches):
            rng = np.random.default_rng(self.seed)
            keep = np.sort(
                rng.choice(r1.shape[1], size=int(self.max_patches), replace=False)
            )
            r1 = r1[:, keep]
        config = TrainConfig(
            eta1=self.eta1,
            eta2=self.eta2,
            iterations=self.n_iter,
            layers=self.layers,
            seed=self.seed,
        )
        model, report = _train_matrix(r1, pw, ph, config)
        self.model_ = model
        self.w1_ = model.w1
        self.w2_ = model.w2
        self.cost_history_ = report.cost_history
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        """Sparse-code patch rows; returns ``[z1, z2]`` stacked column-wise."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64, ensure_all_finite=True)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}"
            )
        codes = code_patches(X.T, self.model_, self.eta1, self.eta2)
        if self.model_.layers == 1:
            return np.ascontiguousarray(codes.z1.T)
        return np.ascontiguousarray(np.hstack([codes.z1.T, codes.z2.T]))

    def inverse_transform(self, Z):
        """Synthesize patch rows from stacked codes (transpose transforms back)."""
        check_is_fitted(self, "model_")
        Z = check_array(Z, dtype=np.float64, ensure_all_finite=True)
        p = self.n_features_in_
        model = self.model_
        if model.layers == 1:
            if Z.shape[1] != p:
                raise ValueError(f"expected {p} code columns")
            return Z @ model.w1
        if Z.shape[1] != 2 * p:
            raise ValueError(f"expected {2 * p} code columns")
        z1 = Z[:, :p].T
        z2 = Z[:, p:].T
        return ((model.w1.T @ (z1 + model.w2.T @ z2)).T).copy()
