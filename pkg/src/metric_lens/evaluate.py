"""Quantitative harnesses: weakly supervised localization and cross-view
orientation estimation.

Localization: clip the map to its positive part, upsample to image size,
threshold at a fraction of the max, keep the largest 8-connected component
(ties: first in row-major scan order) and report its tight bounding box. A
prediction counts when IoU with ground truth exceeds 0.5.

Orientation: panoramas map column -> angle linearly (column 0 is the 0
reference, a full width is 360). Aerial views measure the angle of the
displacement from the image center, 0 pointing down (+row), increasing
toward +col — i.e. the same rotational sense as panorama columns under our
fixtures' convention. Errors are wrapped into [-180, 180].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .decompose import ActivationMap, DecompositionResult, pixel_to_cell, point_specific_map
from .errors import CenterPixel, EmptyInput, EmptyMask, PointOutOfRange, ShapeMismatch
from .tensor import bilinear_resize

EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


@dataclass(frozen=True)
class BBox:
    """Pixel-coordinate box, inclusive-exclusive: x in [x0, x1), y in [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ShapeMismatch(f"degenerate box {self}")
        if self.x0 < 0 or self.y0 < 0:
            raise ShapeMismatch(f"negative box corner {self}")

    @property
    def area(self) -> int:
        return (self.x1 - self.x0) * (self.y1 - self.y0)


@dataclass(frozen=True)
class AngleDeg:
    """An angle in degrees, normalized into [0, 360)."""

    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value) % 360.0)

    def __float__(self) -> float:
        return self.value

    def __sub__(self, other: "AngleDeg") -> "AngleDeg":
        return AngleDeg(self.value - float(other))


def segment_and_box(amap: ActivationMap, threshold: float, image_h: int, image_w: int) -> BBox:
    """Threshold the (clipped, upsampled) map and box its largest component."""
    if not 0.0 < threshold < 1.0:
        raise ShapeMismatch(f"threshold must be in (0,1), got {threshold}")
    vals = np.maximum(amap.values, 0.0)
    vals = bilinear_resize(vals, image_h, image_w)
    peak = float(vals.max())
    if peak <= 0.0:
        raise EmptyMask("activation map has no positive values")
    mask = vals >= threshold * peak
    labels, count = ndimage.label(mask, structure=EIGHT_CONNECTED)
    if count == 0:
        raise EmptyMask("no pixel above threshold")
    sizes = np.bincount(labels.ravel())[1:]
    best = int(np.argmax(sizes)) + 1  # ties: lowest label = first in raster order
    rows, cols = np.nonzero(labels == best)
    return BBox(
        x0=int(cols.min()),
        y0=int(rows.min()),
        x1=int(cols.max()) + 1,
        y1=int(rows.max()) + 1,
    )


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; 0 for disjoint boxes."""
    ix = max(0, min(a.x1, b.x1) - max(a.x0, b.x0))
    iy = max(0, min(a.y1, b.y1) - max(a.y0, b.y0))
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def localization_accuracy(pairs, threshold: float) -> float:
    """Fraction of (map, gt box, image dims) entries with IoU > 0.5.

    A map whose positive part is empty counts as a miss.
    """
    pairs = list(pairs)
    if not pairs:
        raise EmptyInput("no evaluation pairs")
    hits = 0
    for amap, gt, (h, w) in pairs:
        try:
            pred = segment_and_box(amap, threshold, h, w)
        except EmptyMask:
            continue
        if iou(pred, gt) > 0.5:
            hits += 1
    return hits / len(pairs)


def pixel_to_angle(pixel: tuple, image_hw: tuple, convention: str) -> AngleDeg:
    """Angle of an image pixel under the named convention.

    "panorama": only the column matters, angle = 360 * col / width.
    "aerial": angle of (row, col) displacement from the image center,
    atan2(dcol, drow), so 0 points toward +row (the panorama's 0 reference
    direction) and angles grow in the panorama's column sense. The exact
    center pixel has no direction and raises CenterPixel.
    """
    r, c = int(pixel[0]), int(pixel[1])
    h, w = int(image_hw[0]), int(image_hw[1])
    if convention == "panorama":
        if not 0 <= c < w:
            raise PointOutOfRange(f"column {c} outside width {w}")
        return AngleDeg(360.0 * c / w)
    if convention == "aerial":
        if not (0 <= r < h and 0 <= c < w):
            raise PointOutOfRange(f"pixel ({r},{c}) outside image {h}x{w}")
        dy = r - (h - 1) / 2.0
        dx = c - (w - 1) / 2.0
        if dx == 0.0 and dy == 0.0:
            raise CenterPixel("angle undefined at the exact image center")
        return AngleDeg(math.degrees(math.atan2(dx, dy)))
    raise ShapeMismatch(f"unknown convention {convention!r}")


def _argmax_pixel(amap: ActivationMap) -> tuple:
    flat = int(np.argmax(amap.values))
    return np.unravel_index(flat, amap.values.shape)


def estimate_orientation(
    street_map: ActivationMap,
    aerial_map: ActivationMap,
    mode: str,
    decomp: DecompositionResult | None = None,
) -> AngleDeg:
    """Rotation of the aerial view relative to the street panorama.

    Both maps must be at image resolution. "overall" compares the argmax
    pixels of the two overall maps directly. "point_specific" takes the
    street argmax, generates its point-specific map over the aerial image
    (query side = street in ``decomp``), and uses that map's argmax instead;
    this is the variant that survives multiple activated regions.
    """
    street_pix = _argmax_pixel(street_map)
    street_angle = pixel_to_angle(street_pix, street_map.shape, "panorama")
    if mode == "overall":
        aerial_pix = _argmax_pixel(aerial_map)
    elif mode == "point_specific":
        if decomp is None:
            raise ValueError("point_specific mode requires a DecompositionResult")
        cell = pixel_to_cell(street_pix, street_map.shape, decomp.query_grid)
        pmap = point_specific_map(
            decomp, "query", cell, target_resolution=aerial_map.shape
        )
        aerial_pix = _argmax_pixel(pmap)
    else:
        raise ShapeMismatch(f"unknown mode {mode!r}")
    aerial_angle = pixel_to_angle(aerial_pix, aerial_map.shape, "aerial")
    return aerial_angle - street_angle


def wrap_angle_error(gt, est) -> float:
    """Error gt - est shifted by +-360 into [-180, 180]."""
    err = float(gt) - float(est)
    while err > 180.0:
        err -= 360.0
    while err < -180.0:
        err += 360.0
    return err


def angle_error_histogram(errors, bin_width: float = 7.0):
    """Histogram of wrapped errors with bins centered on 0 (default +-3.5).

    Returns (centers, fractions); outliers beyond the last center clamp into
    the end bins so fractions always sum to 1.
    """
    errors = np.asarray(list(errors), dtype=np.float64)
    if errors.size == 0:
        raise EmptyInput("no errors to bin")
    n_side = int(math.floor((180.0 - bin_width / 2.0) / bin_width))
    centers = np.arange(-n_side, n_side + 1) * bin_width
    idx = np.rint(errors / bin_width).astype(int)
    idx = np.clip(idx, -n_side, n_side) + n_side
    counts = np.bincount(idx, minlength=centers.size)
    return centers, counts / errors.size
