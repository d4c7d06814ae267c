"""Embedding index and interactive (partial-feature) retrieval.

Reference embeddings are stored pre-normalization with cached norms, so the
same index serves cosine queries against models trained with or without L2
normalization. Interactive retrieval matches the query's partial feature
sum_{(i,j) in RoI} W^q_ij A^q_ij against the stored embeddings — reference
features never need recomputing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import (
    DegenerateEmbedding,
    EmptyIndex,
    EmptyInput,
    MetricLensError,
    PointOutOfRange,
)
from .linearize import LinearizedHead
from .nn import ModelManifest, forward
from .tensor import as_tensor, read_tensor, write_tensor


@dataclass
class EmbeddingIndex:
    ids: list
    image_refs: list
    embeddings: np.ndarray  # [N, l], pre-normalization
    norms: np.ndarray  # [N]

    def __post_init__(self):
        if len(self.ids) != len(self.image_refs) or len(self.ids) != len(self.embeddings):
            raise EmptyInput("index field lengths disagree")
        if len(self.embeddings) and np.any(self.norms <= 0):
            raise DegenerateEmbedding("index contains a zero-norm embedding")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def embedding_length(self) -> int:
        return self.embeddings.shape[1]


def build_index(model: ModelManifest, images) -> tuple:
    """Embed every image; returns (index, failures).

    ``images`` is a list of file paths (ids are the file stems) or of
    (id, path) pairs. Images that fail to load or run are skipped and
    reported in ``failures`` as (id, reason).
    """
    ids, refs, embs = [], [], []
    failures = []
    for item in images:
        if isinstance(item, (tuple, list)):
            image_id, path = str(item[0]), str(item[1])
        else:
            image_id, path = Path(item).stem, str(item)
        try:
            tensor = read_tensor(path)
            trace = forward(model, tensor)
        except MetricLensError as exc:
            failures.append((image_id, str(exc)))
            continue
        ids.append(image_id)
        refs.append(path)
        embs.append(trace.embedding)
    if embs:
        embeddings = np.stack(embs).astype(np.float32)
    else:
        embeddings = np.zeros((0, model.embedding_length), dtype=np.float32)
    norms = np.linalg.norm(embeddings.astype(np.float64), axis=1).astype(np.float32)
    return EmbeddingIndex(ids, refs, embeddings, norms), failures


def save_index(index: EmbeddingIndex, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_tensor(index.embeddings, out_dir / "embeddings.tnsr")
    write_tensor(index.norms, out_dir / "norms.tnsr")
    meta = {
        "ids": index.ids,
        "image_paths": index.image_refs,
        "embedding_length": index.embedding_length,
    }
    with open(out_dir / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1)


def load_index(in_dir) -> EmbeddingIndex:
    in_dir = Path(in_dir)
    with open(in_dir / "meta.json", "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    return EmbeddingIndex(
        ids=list(meta["ids"]),
        image_refs=list(meta["image_paths"]),
        embeddings=read_tensor(in_dir / "embeddings.tnsr"),
        norms=read_tensor(in_dir / "norms.tnsr"),
    )


def _rank(index: EmbeddingIndex, scores: np.ndarray, k: int) -> list:
    if len(index) == 0:
        raise EmptyIndex("index has no entries")
    if k < 1:
        raise EmptyInput(f"k must be >= 1, got {k}")
    order = np.argsort(-scores, kind="stable")  # ties: original index order
    top = order[: min(k, len(index))]
    return [(index.ids[i], float(scores[i])) for i in top]


def retrieve_overall(index: EmbeddingIndex, query_embedding, k: int) -> list:
    """Top-k entries by cosine similarity, descending."""
    q = np.asarray(query_embedding, dtype=np.float64).ravel()
    nq = float(np.linalg.norm(q))
    if nq <= 1e-12:
        raise DegenerateEmbedding("query embedding has near-zero norm")
    sims = (index.embeddings.astype(np.float64) @ q) / (
        index.norms.astype(np.float64) * nq
    )
    return _rank(index, sims, k)


def partial_feature(head: LinearizedHead, A, roi) -> np.ndarray:
    """Sum of the per-position feature blocks over an RoI of feature cells.

    Bias-free by definition; additive over disjoint RoIs. Cells are
    deduplicated and accumulated in row-major order.
    """
    A = as_tensor(A)
    m, n, _ = head.feature_shape
    cells = sorted({(int(i), int(j)) for i, j in roi})
    if not cells:
        raise EmptyInput("RoI is empty")
    for i, j in cells:
        if not (0 <= i < m and 0 <= j < n):
            raise PointOutOfRange(f"cell ({i},{j}) outside feature grid {m}x{n}")
    F = kernels.position_features(head.W, A).astype(np.float64)
    acc = np.zeros(head.embedding_length, dtype=np.float64)
    for i, j in cells:
        acc += F[i, j]
    return acc.astype(np.float32)


def pixel_feature(head: LinearizedHead, A, pixel: tuple, image_hw: tuple) -> np.ndarray:
    """Per-pixel partial feature via bilinear interpolation of the
    per-position feature field (single-pixel RoIs at image resolution)."""
    A = as_tensor(A)
    r, c = int(pixel[0]), int(pixel[1])
    H, W = int(image_hw[0]), int(image_hw[1])
    if not (0 <= r < H and 0 <= c < W):
        raise PointOutOfRange(f"pixel ({r},{c}) outside image {H}x{W}")
    m, n, _ = head.feature_shape
    F = kernels.position_features(head.W, A).astype(np.float64)
    sr = 0.0 if H == 1 or m == 1 else r * (m - 1) / (H - 1)
    sc = 0.0 if W == 1 or n == 1 else c * (n - 1) / (W - 1)
    r0, c0 = min(int(sr), m - 1), min(int(sc), n - 1)
    r1, c1 = min(r0 + 1, m - 1), min(c0 + 1, n - 1)
    fr, fc = sr - r0, sc - c0
    top = F[r0, c0] * (1 - fc) + F[r0, c1] * fc
    bot = F[r1, c0] * (1 - fc) + F[r1, c1] * fc
    return (top * (1 - fr) + bot * fr).astype(np.float32)


def query_norm(head: LinearizedHead, A) -> float:
    """|E^q| of the full query embedding (partial features are normalized
    by the original embedding norm, not the RoI's own)."""
    A = as_tensor(A)
    F = kernels.position_features(head.W, A).astype(np.float64)
    e = F.sum(axis=(0, 1)) + head.B.astype(np.float64)
    return float(np.linalg.norm(e))


def retrieve_partial(index: EmbeddingIndex, pf, q_norm: float, k: int) -> list:
    """Rank by partial similarity (pf . E_entry) / (|E^q| * |E_entry|)."""
    if q_norm <= 1e-12:
        raise DegenerateEmbedding("query embedding has near-zero norm")
    pf = np.asarray(pf, dtype=np.float64).ravel()
    sims = (index.embeddings.astype(np.float64) @ pf) / (
        index.norms.astype(np.float64) * q_norm
    )
    return _rank(index, sims, k)


def retrieve_interactive(index: EmbeddingIndex, head: LinearizedHead, A, roi, k: int) -> list:
    """Interactive retrieval over an RoI of feature cells."""
    pf = partial_feature(head, A, roi)
    return retrieve_partial(index, pf, query_norm(head, A), k)


def retrieve_interactive_pixel(
    index: EmbeddingIndex, head: LinearizedHead, A, pixel: tuple, image_hw: tuple, k: int
) -> list:
    """Interactive retrieval for a single clicked pixel (interpolated feature)."""
    pf = pixel_feature(head, A, pixel, image_hw)
    return retrieve_partial(index, pf, query_norm(head, A), k)
