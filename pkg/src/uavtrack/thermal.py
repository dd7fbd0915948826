"""Thermal-frame UAV detection: correlation threshold, morphology, blob boxes.

The UAV's motors and electronics are the hottest things in the frame, so the
object class is everything brighter than the threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .errors import DegenerateHistogram, EmptyFrame
from .sensor_io import DetectionRecord, ThermalFrame

N_LEVELS = 256


@dataclass(frozen=True, eq=False)
class GrayHistogram:
    """Gray-level probabilities ``p[g]`` for g in 0..255."""

    p: np.ndarray
    n_pixels: int

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        if p.shape != (N_LEVELS,):
            raise ValueError(f"histogram needs {N_LEVELS} bins, got {p.shape}")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("histogram probabilities must be non-negative and sum to 1")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "p", p)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Row-major (height, width) boolean grid; True marks object pixels."""

    bits: np.ndarray

    @property
    def width(self) -> int:
        return int(self.bits.shape[1])

    @property
    def height(self) -> int:
        return int(self.bits.shape[0])

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)


@dataclass(frozen=True)
class BlobBox:
    cx: float
    cy: float
    w: int
    h: int
    area: int

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        return (self.cx, self.cy, float(self.w), float(self.h))


@dataclass(frozen=True)
class ThermalConfig:
    open_radius: int = 1
    close_radius: int = 1
    iso: int = 6400

    def __post_init__(self):
        if self.open_radius < 0:
            raise ValueError("open_radius must be >= 0")
        if self.close_radius < 0:
            raise ValueError("close_radius must be >= 0")


def _pixels(frame) -> np.ndarray:
    px = frame.pixels if isinstance(frame, ThermalFrame) else np.asarray(frame)
    if px.size == 0:
        raise EmptyFrame("frame has no pixels")
    return px


def histogram(frame) -> GrayHistogram:
    px = _pixels(frame)
    counts = np.bincount(px.ravel(), minlength=N_LEVELS)
    n = int(px.size)
    return GrayHistogram(counts / n, n)


def correlation_curve(h: GrayHistogram) -> np.ndarray:
    """Total correlation of object and background classes for every split t = 0..254.

    Entries where one class is empty are ``-inf``.
    """
    p = h.p
    below = np.cumsum(p)[:-1]
    below_sq = np.cumsum(p * p)[:-1]
    # reverse cumulative sums keep the upper class exactly zero past the last occupied bin
    above = np.cumsum(p[::-1])[::-1][1:]
    above_sq = np.cumsum((p * p)[::-1])[::-1][1:]
    tc = np.full(N_LEVELS - 1, -np.inf)
    ok = (below > 0) & (above > 0)
    tc[ok] = (-np.log(below_sq[ok] / below[ok] ** 2)
              - np.log(above_sq[ok] / above[ok] ** 2))
    return tc


def max_correlation_threshold(h: GrayHistogram) -> int:
    """Gray level t* in [0, 254] maximising the object/background correlation.

    Pixels ``> t*`` are object. Ties resolve to the smallest t.

    Raises:
        DegenerateHistogram: fewer than two occupied gray levels.
    """
    if np.count_nonzero(h.p) < 2:
        raise DegenerateHistogram("histogram has a single occupied gray level")
    return int(np.argmax(correlation_curve(h)))


def binarize(frame, t: int) -> BinaryMask:
    return BinaryMask(_pixels(frame) > t)


def _square(radius: int) -> np.ndarray:
    return np.ones((2 * radius + 1, 2 * radius + 1), dtype=np.uint8)


def postprocess(mask: BinaryMask, open_radius: int = 1, close_radius: int = 1) -> BinaryMask:
    """Opening then closing with square elements of side ``2r + 1``.

    Pixels outside the image never influence the result (neither erode nor
    dilate the border).
    """
    if open_radius < 0 or close_radius < 0:
        raise ValueError("radii must be >= 0")
    m = mask.bits.astype(np.uint8)
    if open_radius:
        m = cv2.morphologyEx(m, cv2.MORPH_OPEN, _square(open_radius))
    if close_radius:
        m = cv2.morphologyEx(m, cv2.MORPH_CLOSE, _square(close_radius))
    return BinaryMask(m.astype(bool))


def extract_blobs(mask: BinaryMask) -> list[BlobBox]:
    """8-connected components as center-origin boxes.

    Ordered by area (largest first); equal areas fall back to raster order of
    each component's first pixel.
    """
    bits = mask.bits
    if not bits.any():
        return []
    n, labels, stats, _ = cv2.connectedComponentsWithStats(
        bits.astype(np.uint8), connectivity=8, ltype=cv2.CV_32S)
    H, W = bits.shape
    keyed = []
    for lab in range(1, n):
        left, top, w, h, area = (int(v) for v in stats[lab])
        row = labels[top, left:left + w]
        first_col = left + int(np.argmax(row == lab))
        box = BlobBox(cx=left + w / 2 - W / 2, cy=H / 2 - (top + h / 2), w=w, h=h, area=area)
        keyed.append(((-area, top, first_col), box))
    keyed.sort(key=lambda kb: kb[0])
    return [box for _, box in keyed]


def detect_thermal(frame: ThermalFrame, cfg: ThermalConfig = ThermalConfig()) -> DetectionRecord | None:
    """Largest hot blob in a frame as a detection (score fixed at 1.0), or None."""
    h = histogram(frame)
    try:
        t = max_correlation_threshold(h)
    except DegenerateHistogram:
        return None
    mask = postprocess(binarize(frame, t), cfg.open_radius, cfg.close_radius)
    blobs = extract_blobs(mask)
    if not blobs:
        return None
    b = blobs[0]
    return DetectionRecord(timestamp=frame.timestamp, frame_id=frame.frame_id,
                           cx=b.cx, cy=b.cy, w=float(b.w), h=float(b.h), score=1.0,
                           iso=cfg.iso, frame_width=frame.width, frame_height=frame.height)
