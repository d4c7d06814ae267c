"""Collapse a model head into one affine map at an operating point.

Every supported head layer is linear at inference time, or piecewise linear
and made linear by a mask computed once from the trace: global max pooling
becomes a one-hot selection matrix, ReLU a 0/1 diagonal. Composing them
yields per-position weight blocks W[i,j] (l x p) and a bias B such that

    head_forward(A) == sum_{i,j} W[i,j] @ A[i,j] + B

exactly at the feature map A the masks were extracted from (up to float32
rounding). The masks are input-specific, so the result carries a hash of A
and downstream consumers verify it before decomposing.

Tie and boundary rules (deterministic, they affect W at knife edges):
max-pool ties break to the first row-major position; ReLU at exactly 0 is
treated as inactive (mask 0).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedHead
from .nn import ForwardTrace, ModelManifest
from .tensor import as_tensor, write_tensor


def feature_hash(feature) -> str:
    """Hash binding masks to the exact feature map that produced them."""
    arr = as_tensor(feature)
    digest = hashlib.sha1()
    digest.update(str(arr.shape).encode("ascii"))
    digest.update(arr.tobytes())
    return digest.hexdigest()


@dataclass(frozen=True)
class LinearizedHead:
    """Affine equivalent of all head layers at one operating point."""

    W: np.ndarray  # [m, n, l, p]
    B: np.ndarray  # [l]
    operating_point_hash: str

    @property
    def feature_shape(self) -> tuple:
        m, n, _, p = self.W.shape
        return (m, n, p)

    @property
    def embedding_length(self) -> int:
        return self.W.shape[2]

    def save(self, out_dir) -> None:
        """Persist W and B as TNSR files for debugging."""
        from pathlib import Path

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_tensor(self.W, out_dir / "W.tnsr")
        write_tensor(self.B, out_dir / "B.tnsr")


def gap_matrix(m: int, n: int, p: int) -> np.ndarray:
    """Transformation tensor [p, m, n, p] equivalent to global average pooling.

    Entry (k', i, j, k) is 1/(m*n) when k' == k, else 0; reshaped to
    [p, m*n*p] it maps the flattened feature to GAP(A).
    """
    t = np.zeros((p, m, n, p), dtype=np.float32)
    inv = np.float32(1.0 / (m * n))
    for k in range(p):
        t[k, :, :, k] = inv
    return t


def gmp_mask(A) -> np.ndarray:
    """One-hot max mask [m,n,p]: 1 at each channel's first row-major maximum."""
    A = as_tensor(A)
    m, n, p = A.shape
    mask = np.zeros((m, n, p), dtype=np.float32)
    flat = A.reshape(m * n, p)
    idx = flat.argmax(axis=0)  # first occurrence on ties
    mask.reshape(m * n, p)[idx, np.arange(p)] = 1.0
    return mask


def relu_mask(pre_activation) -> np.ndarray:
    """0/1 mask over pre-activation units; 1 iff strictly positive."""
    pre = np.asarray(pre_activation, dtype=np.float32)
    return (pre > 0).astype(np.float32)


def _gmp_matrix(A) -> np.ndarray:
    # mn * (T_gap ⊙ M) collapses to exactly-1.0 entries at max positions,
    # built directly so selection is bit-exact.
    mask = gmp_mask(A)
    m, n, p = mask.shape
    t = np.zeros((p, m * n * p), dtype=np.float64)
    pos = np.argwhere(mask > 0)
    for i, j, k in pos:
        t[k, (i * n + j) * p + k] = 1.0
    return t


def linearize_head(model: ModelManifest, trace: ForwardTrace) -> LinearizedHead:
    """Compose the head into (W, B); raises UnsupportedHead otherwise.

    Supported sequence: one of {flatten, global_avg_pool, global_max_pool},
    then any mix of fully_connected / relu / batchnorm, then an optional
    final l2_normalize (skipped here: W and B describe the embedding before
    normalization, the norm is folded into Z downstream).
    """
    A = trace.conv_feature
    if A.ndim != 3:
        raise UnsupportedHead(f"conv feature must be rank-3, got {A.shape}")
    if A.shape != model.conv_feature_shape:
        raise UnsupportedHead(
            f"trace feature {A.shape} does not match model {model.conv_feature_shape}"
        )
    m, n, p = A.shape
    mnp = m * n * p

    head = list(
        enumerate(model.layers[model.last_conv_index + 1 :], model.last_conv_index + 1)
    )
    if not head:
        raise UnsupportedHead("model has no head layers after last_conv_index")

    first_idx, first = head[0]
    if first.kind == "flatten":
        cur_w = None  # identity on the flattened feature, materialized lazily
        cur_b = np.zeros(mnp, dtype=np.float64)
    elif first.kind == "global_avg_pool":
        cur_w = gap_matrix(m, n, p).reshape(p, mnp).astype(np.float64)
        cur_b = np.zeros(p, dtype=np.float64)
    elif first.kind == "global_max_pool":
        cur_w = _gmp_matrix(A)
        cur_b = np.zeros(p, dtype=np.float64)
    else:
        raise UnsupportedHead(
            f"head must start with flatten or a global pool, got {first.kind!r}"
        )

    for idx, layer in head[1:]:
        kind, params = layer.kind, layer.params
        if kind == "fully_connected":
            w64 = params["weights"].astype(np.float64)
            b64 = params["bias"].astype(np.float64)
            cur_w = w64 if cur_w is None else w64 @ cur_w
            cur_b = w64 @ cur_b + b64
        elif kind == "relu":
            if cur_w is None:
                raise UnsupportedHead("relu directly on the flattened feature")
            pre = trace.layer_outputs[idx - 1]
            mask = relu_mask(pre).astype(np.float64)
            cur_w = mask[:, None] * cur_w
            cur_b = mask * cur_b
        elif kind == "batchnorm":
            if cur_w is None:
                raise UnsupportedHead("batchnorm directly on the flattened feature")
            eps = float(params.get("epsilon", 1e-5))
            scale = params["gamma"].astype(np.float64) / np.sqrt(
                params["var"].astype(np.float64) + eps
            )
            shift = params["beta"].astype(np.float64) - scale * params["mean"].astype(
                np.float64
            )
            cur_w = scale[:, None] * cur_w
            cur_b = scale * cur_b + shift
        elif kind == "l2_normalize":
            break  # always last (manifest invariant); folded into Z downstream
        else:
            raise UnsupportedHead(f"cannot linearize layer kind {kind!r}")

    if cur_w is None:
        cur_w = np.eye(mnp, dtype=np.float64)
    l = cur_w.shape[0]
    W = cur_w.reshape(l, m, n, p).transpose(1, 2, 0, 3)
    return LinearizedHead(
        W=np.ascontiguousarray(W, dtype=np.float32),
        B=cur_b.astype(np.float32),
        operating_point_hash=feature_hash(A),
    )
