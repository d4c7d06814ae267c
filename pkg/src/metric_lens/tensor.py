"""Dense float32 tensors, the TNSR binary format, and shared numeric helpers.

Tensors are plain numpy arrays: float32, C-contiguous (row-major, last axis
fastest), 1 to 4 axes, every element finite. ``as_tensor`` is the single
normalization/validation choke point; every public operation in the package
returns arrays satisfying these invariants.

TNSR file layout (all little-endian)::

    offset  size        field
    0       4           magic  b"TNSR"
    4       1           version, currently 1
    5       1           dtype, currently 0 = float32 LE
    6       1           ndim, 1..4
    7       4 * ndim    dims, uint32 each
    ...     4 * prod    payload, float32 LE, row-major

Header length is therefore 7 + 4*ndim bytes and the file length is exactly
header + 4*prod(dims). Extra trailing bytes are rejected.
"""

from __future__ import annotations

import struct

import numpy as np

from . import kernels
from .errors import (
    BadHeader,
    BadMagic,
    EmptyInput,
    IoFailure,
    NonFiniteData,
    TruncatedPayload,
    UnsupportedDtype,
    UnsupportedVersion,
)

MAGIC = b"TNSR"
VERSION = 1
DTYPE_F32 = 0
MAX_NDIM = 4

Tensor = np.ndarray  # alias used in signatures for readability


def as_tensor(data, shape=None) -> np.ndarray:
    """Coerce ``data`` to a valid tensor (float32, C-contiguous, finite).

    Raises BadHeader for rank/extent violations and NonFiniteData for
    NaN/Inf payloads.
    """
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if shape is not None:
        arr = arr.reshape(shape)
    if arr.ndim < 1 or arr.ndim > MAX_NDIM:
        raise BadHeader(f"tensor rank must be 1..{MAX_NDIM}, got {arr.ndim}")
    if any(d < 1 for d in arr.shape):
        raise BadHeader(f"tensor extents must be positive, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteData("tensor contains NaN or Inf")
    return arr


def read_tensor(path) -> np.ndarray:
    """Read one tensor from a TNSR file."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc

    if len(blob) < 7:
        raise TruncatedPayload(f"{path}: file shorter than fixed header")
    if blob[:4] != MAGIC:
        raise BadMagic(f"{path}: magic {blob[:4]!r} != {MAGIC!r}")
    version, dtype, ndim = blob[4], blob[5], blob[6]
    if version != VERSION:
        raise UnsupportedVersion(f"{path}: version {version}")
    if dtype != DTYPE_F32:
        raise UnsupportedDtype(f"{path}: dtype code {dtype}")
    if not 1 <= ndim <= MAX_NDIM:
        raise BadHeader(f"{path}: ndim {ndim} not in 1..{MAX_NDIM}")

    header_len = 7 + 4 * ndim
    if len(blob) < header_len:
        raise TruncatedPayload(f"{path}: dims field truncated")
    dims = struct.unpack_from(f"<{ndim}I", blob, 7)
    if any(d == 0 for d in dims):
        raise BadHeader(f"{path}: zero extent in dims {dims}")

    count = 1
    for d in dims:
        count *= d
    expected = header_len + 4 * count
    if len(blob) != expected:
        raise TruncatedPayload(
            f"{path}: payload is {len(blob) - header_len} bytes, expected {4 * count}"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=header_len, count=count)
    arr = np.ascontiguousarray(data.reshape(dims), dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteData(f"{path}: payload contains NaN or Inf")
    return arr


def write_tensor(t, path) -> None:
    """Write a tensor to ``path`` in TNSR format (bit-exact round trip)."""
    arr = as_tensor(t)
    header = MAGIC + bytes([VERSION, DTYPE_F32, arr.ndim])
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(arr.astype("<f4", copy=False).tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def bilinear_resize(map2d, out_h: int, out_w: int) -> np.ndarray:
    """Resize a rank-2 map with corner-aligned bilinear interpolation.

    Output position r maps to source row r*(in_h-1)/(out_h-1) (0 when the
    output has a single row), likewise for columns, so corner samples are
    preserved exactly and resizing to the input shape is the identity.
    """
    arr = np.asarray(map2d, dtype=np.float32)
    if arr.ndim != 2 or arr.size == 0:
        raise EmptyInput(f"expected non-empty rank-2 map, got shape {arr.shape}")
    if out_h < 1 or out_w < 1:
        raise EmptyInput(f"output dims must be >= 1, got ({out_h}, {out_w})")
    return kernels.bilinear_resize(np.ascontiguousarray(arr), int(out_h), int(out_w))


def l2_norm(t) -> float:
    """Euclidean norm, accumulated in float64."""
    arr = np.asarray(t, dtype=np.float32)
    return float(np.linalg.norm(arr.astype(np.float64)))


def inner(a, b) -> float:
    """Inner product of two same-shape tensors, accumulated in float64."""
    va = np.asarray(a, dtype=np.float32).ravel().astype(np.float64)
    vb = np.asarray(b, dtype=np.float32).ravel().astype(np.float64)
    if va.shape != vb.shape:
        raise EmptyInput(f"inner product needs equal sizes, got {va.shape} vs {vb.shape}")
    return float(va @ vb)


def write_pgm(map2d, path) -> None:
    """Dump a rank-2 map as an 8-bit binary PGM, min-max normalized.

    Display-only helper; constant maps render mid-gray.
    """
    arr = np.asarray(map2d, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise EmptyInput(f"expected non-empty rank-2 map, got shape {arr.shape}")
    lo, hi = float(arr.min()), float(arr.max())
    if hi > lo:
        scaled = (arr - lo) / (hi - lo) * 255.0
    else:
        scaled = np.full_like(arr, 127.0)
    pix = np.clip(np.rint(scaled), 0, 255).astype(np.uint8)
    try:
        with open(path, "wb") as fh:
            fh.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
            fh.write(pix.tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
