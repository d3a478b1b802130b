"""Two-layer residual transform model and its closed-form block updates.

The model applies a unitary analysis transform ``w1`` to vectorized patches,
sparse-codes the result as ``z1``, then applies a second unitary transform
``w2`` to the first-layer residual ``w1 @ x - z1`` and sparse-codes that as
``z2``.  With ``layers=1`` the second stage is disabled and ``w2`` is pinned
to the identity.

Every update here is an exact minimizer of its block subproblem with the
other blocks held fixed, which is what makes the training and
reconstruction objectives monotone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    as_float_array,
    check_scalar,
    extract_patches,
    hard_threshold,
    full_svd,
    patch_coverage,
    aggregate_patches,
)

__all__ = [
    "UNITARITY_TOL",
    "TwoLayerModel",
    "SparseCodes",
    "sparse_code_layer1",
    "sparse_code_layer2",
    "update_transform1",
    "update_transform2",
    "layer2_residual",
    "code_patches",
    "objective_p0",
    "objective_regularizer",
    "regularizer_gradient",
    "regularizer_hessian_diag",
]

UNITARITY_TOL = 1e-8


def _check_unitary(w, name):
    p = w.shape[0]
    err = np.linalg.norm(w.T @ w - np.eye(p))
    if err > UNITARITY_TOL:
        raise ValueError(f"{name} is not unitary (||W.T W - I||_F = {err:.3e})")


@dataclass
class TwoLayerModel:
    """Learned transforms plus the sparsity thresholds they were trained with.

    Attributes
    ----------
    w1, w2 : numpy.ndarray
        Unitary ``(p, p)`` analysis transforms.  Unitarity is verified to
        ``UNITARITY_TOL`` on construction; ``w2`` is forced to the identity
        when ``layers == 1``.
    eta1, eta2 : float
        Training thresholds, kept for provenance and file round-trips.
    layers : int
        1 or 2.
    """

    w1: np.ndarray
    w2: np.ndarray | None = None
    eta1: float = 0.0
    eta2: float = 0.0
    layers: int = 2

    def __post_init__(self):
        w1 = as_float_array(self.w1, "w1")
        if w1.ndim != 2 or w1.shape[0] != w1.shape[1]:
            raise ValueError("w1 must be a square matrix")
        p = w1.shape[0]
        if self.layers not in (1, 2):
            raise ValueError("layers must be 1 or 2")
        _check_unitary(w1, "w1")
        self.w1 = np.ascontiguousarray(w1)
        if self.layers == 1:
            self.w2 = np.eye(p)
        else:
            if self.w2 is None:
                raise ValueError("a two-layer model requires w2")
            w2 = as_float_array(self.w2, "w2")
            if w2.shape != (p, p):
                raise ValueError("w2 must match the shape of w1")
            _check_unitary(w2, "w2")
            self.w2 = np.ascontiguousarray(w2)
        self.eta1 = check_scalar(self.eta1, "eta1", minimum=0.0)
        self.eta2 = check_scalar(self.eta2, "eta2", minimum=0.0)

    @property
    def p(self):
        return self.w1.shape[0]


@dataclass
class SparseCodes:
    """Per-layer sparse codes for a batch of patches, one column per patch."""

    z1: np.ndarray
    z2: np.ndarray | None = None

    def __post_init__(self):
        z1 = as_float_array(self.z1, "z1")
        if z1.ndim != 2:
            raise ValueError("z1 must be a 2D matrix")
        self.z1 = z1
        if self.z2 is not None:
            z2 = as_float_array(self.z2, "z2")
            if z2.shape != z1.shape:
                raise ValueError("z1 and z2 must have the same shape")
            self.z2 = z2


def _check_patch_matrix(r1, model, name="r1"):
    arr = as_float_array(r1, name)
    if arr.ndim != 2 or arr.shape[0] != model.p:
        raise ValueError(f"{name} must have shape (p, n) with p={model.p}")
    return arr


def sparse_code_layer1(r1, z2, model, theta):
    """Exact first-layer code update with the second layer held fixed.

    Because ``z1`` appears in both layers' residuals, the closed form
    thresholds ``w1 @ r1 - 0.5 * w2.T @ z2`` at ``theta / sqrt(2)``.  With
    ``z2 = 0`` and ``theta = eta * sqrt(2)`` this reduces to plain hard
    thresholding of ``w1 @ r1`` at ``eta``.
    """
    theta = check_scalar(theta, "theta", minimum=0.0)
    r1 = _check_patch_matrix(r1, model)
    m = model.w1 @ r1
    if z2 is not None:
        z2 = as_float_array(z2, "z2")
        if z2.shape != m.shape:
            raise ValueError("z2 must have the same shape as w1 @ r1")
        m -= 0.5 * (model.w2.T @ z2)
    return hard_threshold(m, theta / math.sqrt(2.0))


def sparse_code_layer2(r1, z1, model, theta):
    """Exact second-layer code update: threshold ``w2 @ (w1 @ r1 - z1)``."""
    theta = check_scalar(theta, "theta", minimum=0.0)
    r1 = _check_patch_matrix(r1, model)
    z1 = as_float_array(z1, "z1")
    if z1.shape != r1.shape:
        raise ValueError("z1 must have the same shape as r1")
    return hard_threshold(model.w2 @ (model.w1 @ r1 - z1), theta)


def _procrustes_rotation(g, fallback):
    """Unitary maximizing ``trace(W @ G)``; returns ``fallback`` when G == 0."""
    if not g.any():
        return fallback.copy()
    u, _, v = full_svd(g)
    return v @ u.T


def update_transform1(r1, z1, z2, model):
    """Exact first-layer transform update (orthogonal Procrustes).

    The optimal unitary is ``v @ u.T`` from the SVD of
    ``r1 @ z1.T + 0.5 * r1 @ z2.T @ w2``; the second term drops out for
    single-layer models (``z2 = None``).  A zero cross matrix leaves every
    unitary equally optimal, in which case the current ``w1`` is returned.
    """
    r1 = _check_patch_matrix(r1, model)
    z1 = as_float_array(z1, "z1")
    if z1.shape != r1.shape:
        raise ValueError("z1 must have the same shape as r1")
    g = r1 @ z1.T
    if z2 is not None:
        z2 = as_float_array(z2, "z2")
        if z2.shape != r1.shape:
            raise ValueError("z2 must have the same shape as r1")
        g = g + 0.5 * (r1 @ (z2.T @ model.w2))
    return _procrustes_rotation(g, model.w1)


def update_transform2(r1, z1, z2, model):
    """Exact second-layer transform update from the residual/code cross matrix."""
    r1 = _check_patch_matrix(r1, model)
    z1 = as_float_array(z1, "z1")
    z2 = as_float_array(z2, "z2")
    if z1.shape != r1.shape or z2.shape != r1.shape:
        raise ValueError("z1 and z2 must have the same shape as r1")
    g = (model.w1 @ r1 - z1) @ z2.T
    return _procrustes_rotation(g, model.w2)


def layer2_residual(r1, z1, model):
    """Second-layer input ``w1 @ r1 - z1``."""
    r1 = _check_patch_matrix(r1, model)
    z1 = as_float_array(z1, "z1")
    if z1.shape != r1.shape:
        raise ValueError("z1 must have the same shape as r1")
    return model.w1 @ r1 - z1


def code_patches(r1, model, theta1, theta2=0.0):
    """One coding pass from scratch (``z2`` starts at zero).

    Runs the layer-1 update with ``z2 = 0`` then the layer-2 update, which is
    the natural encoding of unseen patches under a fixed model.
    """
    r1 = _check_patch_matrix(r1, model)
    if model.layers == 1:
        z1 = hard_threshold(model.w1 @ r1, theta1)
        return SparseCodes(z1, None)
    z1 = sparse_code_layer1(r1, np.zeros_like(r1), model, theta1)
    z2 = sparse_code_layer2(r1, z1, model, theta2)
    return SparseCodes(z1, z2)


def _coding_objective(r1, codes, model, theta1, theta2):
    u = model.w1 @ r1 - codes.z1
    total = float(np.vdot(u, u)) + theta1 * theta1 * float(np.count_nonzero(codes.z1))
    if model.layers == 2:
        if codes.z2 is None:
            raise ValueError("a two-layer model requires z2 in the codes")
        v = model.w2 @ u - codes.z2
        total += float(np.vdot(v, v)) + theta2 * theta2 * float(np.count_nonzero(codes.z2))
    return total


def objective_p0(r1, codes, model, eta1, eta2=0.0):
    """Training objective: residual energies plus weighted nonzero counts."""
    eta1 = check_scalar(eta1, "eta1", minimum=0.0)
    eta2 = check_scalar(eta2, "eta2", minimum=0.0)
    r1 = _check_patch_matrix(r1, model)
    return _coding_objective(r1, codes, model, eta1, eta2)


def objective_regularizer(x_patches, codes, model, gamma1, gamma2=0.0):
    """Regularizer value for a patch matrix, same form as the training cost."""
    gamma1 = check_scalar(gamma1, "gamma1", minimum=0.0)
    gamma2 = check_scalar(gamma2, "gamma2", minimum=0.0)
    x_patches = _check_patch_matrix(x_patches, model, "x_patches")
    return _coding_objective(x_patches, codes, model, gamma1, gamma2)


def regularizer_gradient(x, codes, model, beta, patch_config):
    """Gradient of the smooth part of the patch regularizer at fixed codes.

    For each patch the chain rule gives
    ``w1.T @ (u + w2.T @ (w2 @ u - z2))`` with ``u = w1 @ x_patch - z1``;
    contributions are scatter-added back to pixels and scaled by ``2 * beta``.

    Returns a ``(height, width)`` array on the grid of ``x``.
    """
    beta = check_scalar(beta, "beta", minimum=0.0)
    patches = extract_patches(x, patch_config)
    r1 = patches.data
    if codes.z1.shape != r1.shape:
        raise ValueError("codes do not match the patch grid of x")
    u = model.w1 @ r1 - codes.z1
    if model.layers == 2:
        if codes.z2 is None:
            raise ValueError("a two-layer model requires z2 in the codes")
        m = u + model.w2.T @ (model.w2 @ u - codes.z2)
    else:
        m = u
    g = aggregate_patches(model.w1.T @ m, patch_config, (x.width, x.height))
    return 2.0 * beta * g


def regularizer_hessian_diag(model, beta, patch_config, dims):
    """Diagonal majorizer of the regularizer Hessian at fixed codes.

    Each patch contributes curvature ``2 * beta`` per pixel per residual
    layer (the transforms are unitary), so the two-layer bound is
    ``4 * beta * coverage`` and the single-layer bound ``2 * beta *
    coverage``.
    """
    beta = check_scalar(beta, "beta", minimum=0.0)
    factor = 4.0 if model.layers == 2 else 2.0
    return factor * beta * patch_coverage(patch_config, dims)
