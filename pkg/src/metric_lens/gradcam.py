"""Closed-form Grad-CAM variants for comparison against decomposition.

No autodiff: every gradient here has a short closed form. For the metric
setting the chain rule through the L2 normalization contributes the Jacobian
of E/|E|, which is what scatters Grad-CAM maps on dominant channels; the
"no norm" variant drops it by differentiating the raw inner product E^q.E^r
instead of the cosine.

Map scale convention: both metric variants are reported in cosine units
(total scale 1/(|E^q||E^r|)); with the Jacobian in place the result is
exactly the GAP-weighted numerical gradient map of the cosine similarity.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .decompose import ActivationMap
from .errors import DegenerateEmbedding, EmbeddingLengthMismatch, ShapeMismatch, UnsupportedHead
from .linearize import LinearizedHead
from .tensor import as_tensor


def l2norm_jacobian(E) -> np.ndarray:
    """Jacobian of E/|E|: diagonal (1/|E|)(1 - E_i^2/|E|^2), off-diagonal
    -E_i E_j / |E|^3. Symmetric, and J @ E == 0."""
    e = np.asarray(E, dtype=np.float64).ravel()
    norm = float(np.linalg.norm(e))
    if norm <= 1e-12:
        raise DegenerateEmbedding(f"|E| = {norm} too small for a stable Jacobian")
    unit = e / norm
    jac = (np.eye(e.size) - np.outer(unit, unit)) / norm
    return jac.astype(np.float32)


def gradcam_classification(A, head_kind: str, fc_weights, class_idx: int) -> ActivationMap:
    """Grad-CAM for a single-stream classifier without bias.

    head_kind "flatten_fc": fc_weights [m,n,p,classes] (reshaped to the
    feature layout); map(i,j) = sum_k A[i,j,k] * mean_{i',j'} W[i',j',k,c].
    head_kind "gmp_fc": fc_weights [p,classes]; map(i,j) =
    (1/(m n)) sum_k A[i,j,k] * W[k,c] — every position gets the same
    channel weights, unlike the decomposition which is zero away from the
    channel maxima.
    """
    A = as_tensor(A)
    if A.ndim != 3:
        raise ShapeMismatch(f"feature must be [m,n,p], got {A.shape}")
    m, n, p = A.shape
    w = as_tensor(fc_weights)
    if head_kind == "flatten_fc":
        if w.ndim != 4 or w.shape[:3] != (m, n, p):
            raise ShapeMismatch(
                f"flatten_fc weights must be [m,n,p,classes] matching {A.shape}"
            )
        if not 0 <= class_idx < w.shape[3]:
            raise ShapeMismatch(f"class_idx {class_idx} out of range")
        channel_w = w.astype(np.float64)[:, :, :, class_idx].mean(axis=(0, 1))
    elif head_kind == "gmp_fc":
        if w.ndim != 2 or w.shape[0] != p:
            raise ShapeMismatch(f"gmp_fc weights must be [p,classes], p={p}")
        if not 0 <= class_idx < w.shape[1]:
            raise ShapeMismatch(f"class_idx {class_idx} out of range")
        channel_w = w.astype(np.float64)[:, class_idx] / (m * n)
    else:
        raise UnsupportedHead(f"unsupported classification head {head_kind!r}")
    values = (A.astype(np.float64) @ channel_w).astype(np.float32)
    return ActivationMap(values=values, variant="gradcam")


def gradcam_metric(
    head_q: LinearizedHead,
    A_q,
    E_q,
    E_r,
    normalized: bool,
    gap_weights: bool = True,
    clip: bool = False,
) -> ActivationMap:
    """Grad-CAM map of the query image for a metric-learning pair.

    normalized=True differentiates the cosine similarity (the L2 Jacobian
    appears); normalized=False differentiates E^q.E^r. gap_weights=False
    additionally skips the GAP over the gradient, using each position's own
    weight block — with normalized=False that reproduces the
    decomposition-plus-bias overall map. clip zeroes negative values for
    localization parity with the original recipe.
    """
    A_q = as_tensor(A_q)
    eq = np.asarray(E_q, dtype=np.float64).ravel()
    er = np.asarray(E_r, dtype=np.float64).ravel()
    if eq.size != head_q.embedding_length or er.size != head_q.embedding_length:
        raise EmbeddingLengthMismatch(
            f"embeddings must have length {head_q.embedding_length}"
        )
    if A_q.shape != head_q.feature_shape:
        raise ShapeMismatch(
            f"A_q shape {A_q.shape} != head feature shape {head_q.feature_shape}"
        )
    nq, nr = float(np.linalg.norm(eq)), float(np.linalg.norm(er))
    if nq <= 1e-12 or nr <= 1e-12:
        raise DegenerateEmbedding("cannot normalize near-zero embedding")

    if normalized:
        # The Jacobian already carries a 1/|E^q| factor, so dividing by
        # |E^r| lands the map exactly on the gradient of the cosine.
        v = l2norm_jacobian(eq).astype(np.float64) @ er
        z = nr
    else:
        v = er
        z = nq * nr

    if gap_weights:
        w_bar = head_q.W.astype(np.float64).mean(axis=(0, 1))  # [l, p]
        channel_w = w_bar.T @ v
        values = A_q.astype(np.float64) @ channel_w / z
    else:
        F_q = kernels.position_features(head_q.W, A_q).astype(np.float64)
        values = F_q @ v / z

    values = values.astype(np.float32)
    if clip:
        values = np.maximum(values, np.float32(0.0))
    variant = "gradcam" if normalized else "gradcam_nonorm"
    return ActivationMap(values=values, variant=variant)
