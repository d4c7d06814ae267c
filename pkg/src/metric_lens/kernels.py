"""Backend selection for the hot kernels.

Prefers the compiled Cython extension; falls back to the numpy
implementation when the extension is missing or METRIC_LENS_FORCE_PY is set
to a non-empty value other than "0". Both backends share contracts and
float64 accumulation, so results agree to float32 rounding.

The wrappers here normalize inputs (contiguous float32) so the compiled
memoryview signatures are always satisfied.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

if os.environ.get("METRIC_LENS_FORCE_PY", "0") not in ("", "0"):
    _impl = _kernels_py
    COMPILED = False
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        COMPILED = True
    except ImportError:
        _impl = _kernels_py
        COMPILED = False


def backend() -> str:
    """Name of the active backend: "compiled" or "python"."""
    return _impl.BACKEND


def _f32(a, ndim: int) -> np.ndarray:
    arr = np.ascontiguousarray(a, dtype=np.float32)
    assert arr.ndim == ndim, f"kernel input rank {arr.ndim} != {ndim}"
    return arr


def conv2d(img, weight, bias, stride: int = 1, padding: int = 0) -> np.ndarray:
    return _impl.conv2d(
        _f32(img, 3), _f32(weight, 4), _f32(bias, 1), int(stride), int(padding)
    )


def position_features(W, A) -> np.ndarray:
    return _impl.position_features(_f32(W, 4), _f32(A, 3))


def p2p_contract(Fq, Fr) -> np.ndarray:
    return _impl.p2p_contract(_f32(Fq, 3), _f32(Fr, 3))


def bilinear_resize(src, out_h: int, out_w: int) -> np.ndarray:
    return _impl.bilinear_resize(_f32(src, 2), int(out_h), int(out_w))
