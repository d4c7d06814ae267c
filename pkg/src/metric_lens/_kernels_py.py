"""Pure-numpy implementations of the hot kernels.

Fallback backend used when the compiled extension is unavailable (or when
METRIC_LENS_FORCE_PY is set). All kernels accumulate in float64 and store
float32, matching the compiled backend to within rounding of the final cast.
Inputs are assumed validated and C-contiguous float32; the public wrappers
in ``kernels`` guarantee that.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def conv2d(img, weight, bias, stride: int, padding: int):
    """Cross-correlation with zero padding.

    img [h,w,c_in], weight [kh,kw,c_in,c_out], bias [c_out] ->
    [out_h, out_w, c_out] with out = floor((in + 2*padding - k)/stride) + 1.
    """
    h, w, _ = img.shape
    kh, kw, c_in, c_out = weight.shape
    out_h = (h + 2 * padding - kh) // stride + 1
    out_w = (w + 2 * padding - kw) // stride + 1
    padded = np.zeros((h + 2 * padding, w + 2 * padding, c_in), dtype=np.float64)
    padded[padding : padding + h, padding : padding + w, :] = img
    w64 = weight.astype(np.float64)
    acc = np.zeros((out_h, out_w, c_out), dtype=np.float64)
    for ki in range(kh):
        for kj in range(kw):
            patch = padded[
                ki : ki + out_h * stride : stride,
                kj : kj + out_w * stride : stride,
                :,
            ]
            acc += patch @ w64[ki, kj]
    acc += bias.astype(np.float64)
    return acc.astype(np.float32)


def position_features(W, A):
    """Per-position partial features F[i,j] = W[i,j] @ A[i,j].

    W [m,n,l,p], A [m,n,p] -> [m,n,l].
    """
    return np.einsum(
        "ijlp,ijp->ijl", W.astype(np.float64), A.astype(np.float64)
    ).astype(np.float32)


def p2p_contract(Fq, Fr):
    """Point-to-point activation p2p[i,j,x,y] = F_q[i,j] . F_r[x,y].

    Fq [m,n,l], Fr [X,Y,l] -> [m,n,X,Y].
    """
    return np.einsum(
        "ijl,xyl->ijxy", Fq.astype(np.float64), Fr.astype(np.float64)
    ).astype(np.float32)


def bilinear_resize(src, out_h: int, out_w: int):
    """Corner-aligned bilinear resize of a rank-2 map."""
    h, w = src.shape
    rows = np.zeros(out_h, dtype=np.float64) if out_h == 1 else (
        np.arange(out_h, dtype=np.float64) * (h - 1) / (out_h - 1)
    )
    cols = np.zeros(out_w, dtype=np.float64) if out_w == 1 else (
        np.arange(out_w, dtype=np.float64) * (w - 1) / (out_w - 1)
    )
    r0 = np.minimum(np.floor(rows).astype(np.int64), h - 1)
    c0 = np.minimum(np.floor(cols).astype(np.int64), w - 1)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]
    s = src.astype(np.float64)
    top = s[r0][:, c0] * (1 - fc) + s[r0][:, c1] * fc
    bot = s[r1][:, c0] * (1 - fc) + s[r1][:, c1] * fc
    return (top * (1 - fr) + bot * fr).astype(np.float32)
