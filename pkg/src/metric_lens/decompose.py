"""Activation decomposition: CAM, the Siamese pair decomposition, and maps.

The similarity of two embeddings g(A^q) . g(A^r) expands into four groups of
terms once each head is affine (see ``linearize``):

    sum_{i,j,x,y} (W^q_ij A^q_ij) . (W^r_xy A^r_xy)     point-to-point
  + sum_{i,j}    (W^q_ij A^q_ij) . B^r                   query bias term
  + sum_{x,y}    (W^r_xy A^r_xy) . B^q                   reference bias term
  +               B^q . B^r                              pure bias

Dividing by Z = |E^q| |E^r| recovers the cosine similarity. Overall maps
marginalize the 4-D point-to-point tensor over one image's positions;
point-specific maps are its slices. Values stay signed (negative evidence is
kept); consumers clip when they need to.

Maps are computed at feature resolution; only requested slices are ever
upsampled, never the 4-D tensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import (
    DegenerateEmbedding,
    EmbeddingLengthMismatch,
    OperatingPointMismatch,
    PointOutOfRange,
    ShapeMismatch,
)
from .linearize import LinearizedHead, feature_hash
from .tensor import as_tensor, bilinear_resize

MAP_VARIANTS = (
    "cam",
    "overall_decomp",
    "overall_decomp_bias",
    "point_specific",
    "gradcam",
    "gradcam_nonorm",
)


@dataclass(frozen=True)
class ActivationMap:
    """A signed rank-2 heatmap plus provenance."""

    values: np.ndarray
    variant: str
    query_point: tuple | None = None
    upsampled: bool = False

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def resized(self, out_h: int, out_w: int) -> "ActivationMap":
        return ActivationMap(
            values=bilinear_resize(self.values, out_h, out_w),
            variant=self.variant,
            query_point=self.query_point,
            upsampled=True,
        )


@dataclass(frozen=True)
class SimilarityReport:
    S: float  # cosine similarity
    D: float  # squared euclidean distance of the normalized embeddings


@dataclass(frozen=True)
class DecompositionResult:
    """All four term groups of one query/reference pair."""

    p2p: np.ndarray  # [m, n, X, Y]
    query_bias_term: np.ndarray  # [m, n]
    ref_bias_term: np.ndarray  # [X, Y]
    pure_bias: float
    Z: float  # |E^q| * |E^r|
    embedding_q: np.ndarray  # reconstructed E^q (pre-normalization)
    embedding_r: np.ndarray

    @property
    def query_grid(self) -> tuple:
        return self.p2p.shape[:2]

    @property
    def ref_grid(self) -> tuple:
        return self.p2p.shape[2:]

    def similarity(self) -> SimilarityReport:
        s = float(
            self.embedding_q.astype(np.float64) @ self.embedding_r.astype(np.float64)
        ) / self.Z
        return SimilarityReport(S=s, D=2.0 - 2.0 * s)


def cam(A, fc_weights, class_idx: int) -> ActivationMap:
    """Class activation map for a GAP+FC classifier.

    map(i,j) = sum_k w[k, class] * A[i,j,k]; averaging the map over all
    positions gives the class score.
    """
    A = as_tensor(A)
    w = as_tensor(fc_weights)
    if A.ndim != 3 or w.ndim != 2:
        raise ShapeMismatch("cam expects A [m,n,p] and fc_weights [p, classes]")
    if w.shape[0] != A.shape[2]:
        raise ShapeMismatch(
            f"fc_weights rows {w.shape[0]} != feature channels {A.shape[2]}"
        )
    if not 0 <= class_idx < w.shape[1]:
        raise ShapeMismatch(f"class_idx {class_idx} out of range")
    values = np.einsum(
        "ijk,k->ij", A.astype(np.float64), w[:, class_idx].astype(np.float64)
    ).astype(np.float32)
    return ActivationMap(values=values, variant="cam")


def decompose_pair(
    head_q: LinearizedHead, A_q, head_r: LinearizedHead, A_r
) -> DecompositionResult:
    """Expand the pair similarity into its four decomposition terms."""
    A_q = as_tensor(A_q)
    A_r = as_tensor(A_r)
    if head_q.operating_point_hash != feature_hash(A_q):
        raise OperatingPointMismatch("query head was linearized at a different A^q")
    if head_r.operating_point_hash != feature_hash(A_r):
        raise OperatingPointMismatch("reference head was linearized at a different A^r")
    if head_q.embedding_length != head_r.embedding_length:
        raise EmbeddingLengthMismatch(
            f"embedding lengths differ: {head_q.embedding_length} vs {head_r.embedding_length}"
        )

    F_q = kernels.position_features(head_q.W, A_q)  # [m,n,l]
    F_r = kernels.position_features(head_r.W, A_r)  # [X,Y,l]
    p2p = kernels.p2p_contract(F_q, F_r)

    B_q = head_q.B.astype(np.float64)
    B_r = head_r.B.astype(np.float64)
    qb = (F_q.astype(np.float64) @ B_r).astype(np.float32)
    rb = (F_r.astype(np.float64) @ B_q).astype(np.float32)
    pure = float(B_q @ B_r)

    E_q = F_q.astype(np.float64).sum(axis=(0, 1)) + B_q
    E_r = F_r.astype(np.float64).sum(axis=(0, 1)) + B_r
    nq = float(np.linalg.norm(E_q))
    nr = float(np.linalg.norm(E_r))
    if nq <= 1e-12 or nr <= 1e-12:
        raise DegenerateEmbedding("cannot normalize near-zero embedding")

    return DecompositionResult(
        p2p=p2p,
        query_bias_term=qb,
        ref_bias_term=rb,
        pure_bias=pure,
        Z=nq * nr,
        embedding_q=E_q.astype(np.float32),
        embedding_r=E_r.astype(np.float32),
    )


def overall_map(d: DecompositionResult, side: str, with_bias: bool) -> ActivationMap:
    """Marginalize the point-to-point tensor over the other image.

    Query side: map(i,j) = sum_{x,y} p2p[i,j,x,y] (+ query bias term), / Z.
    Reference side is symmetric.
    """
    p64 = d.p2p.astype(np.float64)
    if side == "query":
        vals = p64.sum(axis=(2, 3))
        if with_bias:
            vals = vals + d.query_bias_term.astype(np.float64)
    elif side == "ref":
        vals = p64.sum(axis=(0, 1))
        if with_bias:
            vals = vals + d.ref_bias_term.astype(np.float64)
    else:
        raise ShapeMismatch(f"side must be 'query' or 'ref', got {side!r}")
    variant = "overall_decomp_bias" if with_bias else "overall_decomp"
    return ActivationMap(values=(vals / d.Z).astype(np.float32), variant=variant)


def point_specific_map(
    d: DecompositionResult,
    side: str,
    point: tuple,
    target_resolution: tuple | None = None,
) -> ActivationMap:
    """Slice of the point-to-point tensor for one position of one image.

    ``side`` names the image the point lives in; the returned map covers the
    other image. Optionally bilinearly resized to ``target_resolution``.
    """
    i, j = int(point[0]), int(point[1])
    if side == "query":
        m, n = d.query_grid
        if not (0 <= i < m and 0 <= j < n):
            raise PointOutOfRange(f"point ({i},{j}) outside query grid {m}x{n}")
        vals = d.p2p[i, j].astype(np.float64)
    elif side == "ref":
        X, Y = d.ref_grid
        if not (0 <= i < X and 0 <= j < Y):
            raise PointOutOfRange(f"point ({i},{j}) outside ref grid {X}x{Y}")
        vals = d.p2p[:, :, i, j].astype(np.float64)
    else:
        raise ShapeMismatch(f"side must be 'query' or 'ref', got {side!r}")
    amap = ActivationMap(
        values=(vals / d.Z).astype(np.float32),
        variant="point_specific",
        query_point=(i, j),
    )
    if target_resolution is not None:
        amap = amap.resized(int(target_resolution[0]), int(target_resolution[1]))
    return amap


def pixel_to_cell(pixel: tuple, image_hw: tuple, feature_hw: tuple) -> tuple:
    """Map a pixel (row, col) to the nearest feature cell.

    Inverse of the corner-aligned upsampling map: cell = round(pixel *
    (feat-1)/(img-1)), clamped; a single-cell axis always maps to 0.
    """
    r, c = int(pixel[0]), int(pixel[1])
    H, W = int(image_hw[0]), int(image_hw[1])
    m, n = int(feature_hw[0]), int(feature_hw[1])
    if not (0 <= r < H and 0 <= c < W):
        raise PointOutOfRange(f"pixel ({r},{c}) outside image {H}x{W}")

    def to_cell(v, img_extent, feat_extent):
        if img_extent == 1 or feat_extent == 1:
            return 0
        # round half up so the cell boundary is deterministic
        cell = int(np.floor(v * (feat_extent - 1) / (img_extent - 1) + 0.5))
        return min(max(cell, 0), feat_extent - 1)

    return (to_cell(r, H, m), to_cell(c, W, n))


def similarity_report(embedding_q, embedding_r) -> SimilarityReport:
    """Cosine similarity S and squared euclidean distance D = 2 - 2S."""
    eq = np.asarray(embedding_q, dtype=np.float64).ravel()
    er = np.asarray(embedding_r, dtype=np.float64).ravel()
    if eq.shape != er.shape:
        raise EmbeddingLengthMismatch(f"{eq.shape} vs {er.shape}")
    nq, nr = float(np.linalg.norm(eq)), float(np.linalg.norm(er))
    if nq <= 1e-12 or nr <= 1e-12:
        raise DegenerateEmbedding("cannot normalize near-zero embedding")
    s = float(eq @ er) / (nq * nr)
    return SimilarityReport(S=s, D=2.0 - 2.0 * s)
