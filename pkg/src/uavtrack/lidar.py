"""Planar LIDAR scan segmentation and per-segment distance / cut-length.

A segment is a run of adjacent beams whose ranges differ by at most ``gap_mm``
from their neighbour. Each segment gets a mean distance ``D`` and a real
length ``L = 2 * D * tan(theta)`` where ``theta = n_points / points_per_degree``
degrees (the angle the run subtends). The ``half-angle`` convention uses
``tan(theta / 2)`` instead, which is the exact chord half-width geometry.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateSegment
from .sensor_io import LidarScan

AS_PRINTED = "as-printed"
HALF_ANGLE = "half-angle"
ANGLE_CONVENTIONS = (AS_PRINTED, HALF_ANGLE)


@dataclass(frozen=True)
class ExclusionZone:
    """Beams to drop before grouping: an inclusive beam-index interval or a range band in mm.

    Exactly one of ``beams`` / ``range_mm`` is set.
    """

    beams: tuple[int, int] | None = None
    range_mm: tuple[float, float] | None = None
    label: str = ""

    def __post_init__(self):
        if (self.beams is None) == (self.range_mm is None):
            raise ValueError("zone needs exactly one of beams or range_mm")
        if self.beams is not None:
            lo, hi = self.beams
            if lo < 0 or hi < lo:
                raise ValueError(f"empty or negative beam interval {self.beams}")
        else:
            lo, hi = self.range_mm
            if lo < 0 or hi <= lo:
                raise ValueError(f"empty range band {self.range_mm}")

    def mask(self, ranges: np.ndarray) -> np.ndarray:
        m = np.zeros(ranges.shape, dtype=bool)
        if self.beams is not None:
            lo, hi = self.beams
            m[lo:hi + 1] = True
        else:
            lo, hi = self.range_mm
            m = (ranges >= lo) & (ranges <= hi)
        return m

    @classmethod
    def from_json(cls, obj: dict) -> "ExclusionZone":
        if "beams" in obj:
            return cls(beams=tuple(int(b) for b in obj["beams"]), label=obj.get("label", ""))
        return cls(range_mm=tuple(float(r) for r in obj["range_mm"]), label=obj.get("label", ""))

    def to_json(self) -> dict:
        if self.beams is not None:
            return {"beams": list(self.beams), "label": self.label}
        return {"range_mm": list(self.range_mm), "label": self.label}


@dataclass(frozen=True)
class LidarSegment:
    start_beam: int
    n_points: int
    distances: tuple[float, ...]
    D: float
    L: float

    @property
    def end_beam(self) -> int:
        return self.start_beam + self.n_points - 1

    @property
    def center_beam(self) -> float:
        return self.start_beam + (self.n_points - 1) / 2

    def to_json(self, timestamp: float) -> dict:
        return {"timestamp": float(timestamp), "start_beam": self.start_beam,
                "n_points": self.n_points, "D": self.D, "L": self.L}


def subtended_angle_deg(n_points: int, points_per_degree: int) -> float:
    return n_points / points_per_degree


def segment_metrics(distances: Sequence[float], n_points: int, points_per_degree: int = 4,
                    convention: str = AS_PRINTED) -> tuple[float, float]:
    """Mean distance ``D`` and cut length ``L`` (both mm) of one segment.

    Raises:
        DegenerateSegment: no points, or the tangent argument reaches 90 degrees.
    """
    if n_points <= 0:
        raise DegenerateSegment("segment has no active points")
    if len(distances) != n_points:
        raise ValueError(f"{len(distances)} distances for n_points={n_points}")
    if convention not in ANGLE_CONVENTIONS:
        raise ValueError(f"unknown angle convention {convention!r}")
    theta = subtended_angle_deg(n_points, points_per_degree)
    if convention == HALF_ANGLE:
        theta /= 2
    if theta >= 90.0:
        raise DegenerateSegment(f"tangent argument {theta} deg >= 90 deg")
    D = math.fsum(distances) / n_points
    L = 2.0 * D * math.tan(math.radians(theta))
    return D, L


def points_for_length(length: float, distance: float, points_per_degree: int = 4,
                      convention: str = AS_PRINTED) -> float:
    """Inverse of :func:`segment_metrics`: the (fractional) beam count that yields ``length``."""
    theta = math.degrees(math.atan(length / (2.0 * distance)))
    if convention == HALF_ANGLE:
        theta *= 2
    return theta * points_per_degree


def _runs(keep: np.ndarray, ranges: np.ndarray, gap_mm: float) -> list[tuple[int, int]]:
    """Maximal [start, stop) runs of kept beams whose neighbour differences are <= gap_mm."""
    runs = []
    n = keep.size
    i = 0
    # jumps[i] is True when beam i+1 may not join beam i
    jumps = np.abs(np.diff(ranges)) > gap_mm
    while i < n:
        if not keep[i]:
            i += 1
            continue
        j = i + 1
        while j < n and keep[j] and not jumps[j - 1]:
            j += 1
        runs.append((i, j))
        i = j
    return runs


def segment_scan(scan: LidarScan, zones: Iterable[ExclusionZone] = (), gap_mm: float = 150.0,
                 min_points: int = 10, convention: str = AS_PRINTED) -> list[LidarSegment]:
    """Split a scan into candidate objects, ordered by start beam.

    Beams with no return (range <= 0) or inside any exclusion zone are removed
    first; runs shorter than ``min_points`` are treated as noise.
    """
    if min_points < 1:
        raise ValueError("min_points must be >= 1")
    if gap_mm <= 0:
        raise ValueError("gap_mm must be positive")
    ranges = scan.ranges.astype(np.float64)
    keep = ranges > 0
    for zone in zones:
        keep &= ~zone.mask(ranges)
    segments = []
    for start, stop in _runs(keep, ranges, gap_mm):
        n = stop - start
        if n < min_points:
            continue
        d = tuple(float(r) for r in ranges[start:stop])
        try:
            D, L = segment_metrics(d, n, scan.points_per_degree, convention)
        except DegenerateSegment:
            continue
        segments.append(LidarSegment(start, n, d, D, L))
    return segments


def select_target(segments: Sequence[LidarSegment], prior: dict | None = None,
                  expected_length: float | None = None) -> LidarSegment | None:
    """Pick the segment most likely to be the UAV.

    ``prior`` may carry ``D`` and/or ``L`` (expected values, mm) or ``beam``
    (expected center beam). Without a prior the segment whose length is
    closest to ``expected_length`` wins, or, if that is not configured, the
    nearest one. Ties go to the lower start beam.
    """
    if not segments:
        return None
    if prior:
        def cost(s: LidarSegment) -> float:
            c = 0.0
            if prior.get("D") is not None:
                c += abs(s.D - prior["D"])
            if prior.get("L") is not None:
                c += abs(s.L - prior["L"])
            if prior.get("beam") is not None:
                c += abs(s.center_beam - prior["beam"])
            return c
    elif expected_length is not None:
        def cost(s: LidarSegment) -> float:
            return abs(s.L - expected_length)
    else:
        def cost(s: LidarSegment) -> float:
            return s.D
    return min(segments, key=lambda s: (cost(s), s.start_beam))


def segment_bearing_deg(segment: LidarSegment, scan: LidarScan) -> float:
    return scan.beam_angle(segment.center_beam)


def axial_distance(segment: LidarSegment, scan: LidarScan) -> float:
    """Component of the segment distance along the sensor's forward (+y, 90 deg) axis."""
    return segment.D * math.sin(math.radians(segment_bearing_deg(segment, scan)))


def segments_to_jsonl(path, items: Iterable[tuple[float, LidarSegment]]) -> None:
    with open(path, "w") as f:
        for t, seg in items:
            f.write(json.dumps(seg.to_json(t)) + "\n")
