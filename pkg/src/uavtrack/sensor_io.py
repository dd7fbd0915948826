"""Sensor record types, on-disk log formats and session loading.

Every stream is kept on a shared session clock: float seconds, shifted by the
per-stream offset from the manifest. Image coordinates everywhere use the frame
center as origin, x to the right and y up, in pixels.

On-disk layout of a session::

    manifest.json              {thermal_dir, lidar_csv, detections_jsonl,
                                groundtruth_csv, offsets{...}, duration}
    thermal/index.jsonl        {"frame_id": .., "timestamp": ..} per line
    thermal/frame_000000.pgm   binary P5, maxval 255
    lidar.csv                  timestamp,r0,...,r719  (mm, <=0 = no return)
    detections.jsonl           one DetectionRecord per line
    groundtruth.csv            timestamp,x,y,z[,visible]  (mm)
"""

from __future__ import annotations

import bisect
import json
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .errors import MalformedRecord, MissingFile, NonMonotonicTimestamps

STREAMS = ("thermal", "lidar", "detections", "groundtruth")
THERMAL_FRAME_PATTERN = "frame_{:06d}.pgm"
THERMAL_INDEX = "index.jsonl"

DETECTION_KEYS = ("timestamp", "frame_id", "cx", "cy", "w", "h", "score", "iso",
                  "frame_width", "frame_height")


def _fmt(x: float) -> str:
    # shortest round-trip repr keeps files byte-stable and lossless
    return repr(float(x))


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# Record types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ThermalFrame:
    """One 8-bit grayscale thermal image, stored as a read-only (height, width) array."""

    timestamp: float
    pixels: np.ndarray
    frame_id: int = 0

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] == 0 or px.shape[1] == 0:
            raise ValueError(f"thermal frame must be a non-empty 2-D grid, got shape {px.shape}")
        if px.dtype != np.uint8:
            if px.size and (px.min() < 0 or px.max() > 255):
                raise ValueError("thermal pixels must be 8-bit intensities")
            px = px.astype(np.uint8)
        if px.flags.writeable:
            px = _frozen(px.copy())
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    def __eq__(self, other):
        if not isinstance(other, ThermalFrame):
            return NotImplemented
        return (self.timestamp == other.timestamp and self.frame_id == other.frame_id
                and np.array_equal(self.pixels, other.pixels))


@dataclass(frozen=True, eq=False)
class LidarScan:
    """One planar sweep. ``ranges[i]`` is the range in mm of beam ``i``.

    Beam ``i`` points at ``angular_start + i / points_per_degree`` degrees,
    measured from the sensor's +x axis (right) towards +y (forward).
    """

    timestamp: float
    ranges: np.ndarray
    angular_start: float = 0.0
    points_per_degree: int = 4
    fov_degrees: int = 180
    max_range: float = 30000.0

    def __post_init__(self):
        if self.points_per_degree < 1:
            raise ValueError("points_per_degree must be >= 1")
        r = np.asarray(self.ranges)
        expected = self.fov_degrees * self.points_per_degree
        if r.ndim != 1 or r.size != expected:
            raise ValueError(f"scan has {r.size} beams, expected {expected}")
        if r.dtype.kind == "f":
            if not np.all(np.isfinite(r)) or np.any(r != np.round(r)):
                raise ValueError("ranges must be whole millimetres")
        elif r.dtype.kind not in "iu":
            raise ValueError(f"unsupported range dtype {r.dtype}")
        r = r.astype(np.int64)
        if np.any(r > self.max_range):
            raise ValueError(f"range above max_range {self.max_range}")
        object.__setattr__(self, "ranges", _frozen(r))

    @property
    def n_beams(self) -> int:
        return int(self.ranges.size)

    def beam_angle(self, index: float) -> float:
        """Bearing of (possibly fractional) beam ``index`` in degrees."""
        return self.angular_start + index / self.points_per_degree

    def __eq__(self, other):
        if not isinstance(other, LidarScan):
            return NotImplemented
        return (self.timestamp == other.timestamp
                and self.angular_start == other.angular_start
                and self.points_per_degree == other.points_per_degree
                and self.fov_degrees == other.fov_degrees
                and np.array_equal(self.ranges, other.ranges))


@dataclass(frozen=True)
class DetectionRecord:
    """A scored bounding box ``(cx, cy, w, h)`` in center-origin pixel coordinates."""

    timestamp: float
    frame_id: int
    cx: float
    cy: float
    w: float
    h: float
    score: float
    iso: int
    frame_width: int
    frame_height: int

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")
        if not (self.w > 0 and self.h > 0):
            raise ValueError("box width and height must be positive")
        if self.frame_width <= 0 or self.frame_height <= 0:
            raise ValueError("frame dimensions must be positive")
        if abs(self.cx) > self.frame_width / 2 or abs(self.cy) > self.frame_height / 2:
            raise ValueError("box center outside the frame")
        if self.iso < 0:
            raise ValueError("iso must be non-negative")
        for name in ("timestamp", "cx", "cy", "w", "h"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} is not finite")

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)

    def to_json(self) -> dict:
        return {
            "timestamp": float(self.timestamp), "frame_id": int(self.frame_id),
            "cx": float(self.cx), "cy": float(self.cy), "w": float(self.w), "h": float(self.h),
            "score": float(self.score), "iso": int(self.iso),
            "frame_width": int(self.frame_width), "frame_height": int(self.frame_height),
        }


@dataclass(frozen=True)
class GroundTruthSample:
    timestamp: float
    x: float
    y: float
    z: float
    visible: bool | None = None

    @property
    def position(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)


@dataclass(frozen=True)
class LidarFormat:
    """Geometry of the scans in a LIDAR log (the CSV only carries ranges)."""

    angular_start: float = 0.0
    points_per_degree: int = 4
    fov_degrees: int = 180
    max_range: float = 30000.0

    @property
    def n_beams(self) -> int:
        return self.fov_degrees * self.points_per_degree


@dataclass(frozen=True)
class SessionManifest:
    thermal_dir: Path | None = None
    lidar_csv: Path | None = None
    detections_jsonl: Path | None = None
    groundtruth_csv: Path | None = None
    offsets: dict[str, float] = field(default_factory=dict)
    duration: float | None = None
    lidar: LidarFormat = field(default_factory=LidarFormat)

    def __post_init__(self):
        for key, value in self.offsets.items():
            if key not in STREAMS:
                raise ValueError(f"unknown stream in offsets: {key!r}")
            if not math.isfinite(value):
                raise ValueError(f"offset for {key} is not finite")
        if all(p is None for p in (self.thermal_dir, self.lidar_csv, self.detections_jsonl,
                                   self.groundtruth_csv)):
            raise ValueError("manifest references no sensor stream")

    def offset(self, stream: str) -> float:
        return float(self.offsets.get(stream, 0.0))


# ---------------------------------------------------------------------------
# Time alignment
# ---------------------------------------------------------------------------

def _timestamps(stream) -> Sequence[float]:
    ts = getattr(stream, "timestamps", None)
    if ts is not None:
        return ts
    return [r.timestamp for r in stream]


def index_before(timestamps: Sequence[float], t: float) -> int:
    """Index of the last timestamp <= t, or -1."""
    return bisect.bisect_right(timestamps, t) - 1


def nearest_before(stream, t: float):
    """Return the record with the greatest timestamp <= ``t`` (None if ``t`` precedes the stream).

    ``stream`` must be sorted by time. Objects exposing a ``timestamps``
    sequence are searched without touching the records themselves.
    """
    if len(stream) == 0:
        return None
    ts = getattr(stream, "timestamps", None)
    if ts is not None:
        i = index_before(ts, t)
    else:
        i = bisect.bisect_right(stream, t, key=lambda r: r.timestamp) - 1
    return stream[i] if i >= 0 else None


def check_monotonic(timestamps: Iterable[float], path=None, strict: bool = True) -> None:
    prev = -math.inf
    for i, t in enumerate(timestamps):
        if (t <= prev) if strict else (t < prev):
            raise NonMonotonicTimestamps(
                f"timestamp {t!r} does not increase after {prev!r}", path=path, index=i)
        prev = t


# ---------------------------------------------------------------------------
# Thermal: PGM frames + JSON-lines index
# ---------------------------------------------------------------------------

def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) 8-bit PGM into a (height, width) uint8 array."""
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    n = len(data)
    while len(tokens) < 4:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ValueError("non-integer PGM header field") from None
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    if width <= 0 or height <= 0:
        raise ValueError("PGM dimensions must be positive")
    pos += 1  # single whitespace byte after maxval
    body = data[pos:pos + width * height]
    if len(body) != width * height:
        raise ValueError(f"PGM body has {len(body)} bytes, expected {width * height}")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width)


def write_pgm(path, pixels: np.ndarray) -> None:
    px = np.ascontiguousarray(pixels, dtype=np.uint8)
    height, width = px.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        f.write(px.tobytes())


class ThermalSequence(Sequence):
    """Lazily loaded thermal frames; indexing reads the PGM from disk."""

    def __init__(self, directory, frame_ids: list[int], timestamps: list[float],
                 offset: float = 0.0):
        self.directory = Path(directory)
        self.frame_ids = list(frame_ids)
        self.timestamps = [t + offset for t in timestamps]

    def __len__(self):
        return len(self.frame_ids)

    def path(self, i: int) -> Path:
        return self.directory / THERMAL_FRAME_PATTERN.format(self.frame_ids[i])

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        try:
            px = read_pgm(self.path(i))
        except FileNotFoundError:
            raise MissingFile(str(self.path(i))) from None
        except ValueError as exc:
            raise MalformedRecord(str(exc), path=self.path(i), index=i) from None
        return ThermalFrame(self.timestamps[i], px, self.frame_ids[i])


def write_thermal(directory, frames: Iterable[ThermalFrame]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for fr in frames:
        write_pgm(directory / THERMAL_FRAME_PATTERN.format(fr.frame_id), fr.pixels)
        lines.append(json.dumps({"frame_id": int(fr.frame_id), "timestamp": float(fr.timestamp)}))
    (directory / THERMAL_INDEX).write_text("".join(line + "\n" for line in lines))


def read_thermal(directory, offset: float = 0.0) -> ThermalSequence:
    directory = Path(directory)
    index = directory / THERMAL_INDEX
    if not index.is_file():
        raise MissingFile(str(index))
    ids, ts = [], []
    for i, obj in enumerate(_iter_jsonl(index)):
        try:
            fid = obj["frame_id"]
            t = float(obj["timestamp"])
            if not isinstance(fid, int) or fid < 0 or not math.isfinite(t):
                raise ValueError
        except (KeyError, TypeError, ValueError):
            raise MalformedRecord("bad thermal index entry", path=index, index=i) from None
        ids.append(fid)
        ts.append(t)
    check_monotonic(ts, path=index)
    seq = ThermalSequence(directory, ids, ts, offset)
    for i in range(len(seq)):
        if not seq.path(i).is_file():
            raise MissingFile(str(seq.path(i)))
    return seq


# ---------------------------------------------------------------------------
# LIDAR CSV
# ---------------------------------------------------------------------------

def write_lidar_csv(path, scans: Iterable[LidarScan]) -> None:
    scans = list(scans)
    n = scans[0].n_beams if scans else 720
    with open(path, "w") as f:
        f.write("timestamp," + ",".join(f"r{i}" for i in range(n)) + "\n")
        for s in scans:
            f.write(_fmt(s.timestamp) + "," + ",".join(str(int(r)) for r in s.ranges) + "\n")


def read_lidar_csv(path, fmt: LidarFormat = LidarFormat(), offset: float = 0.0) -> list[LidarScan]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    scans = []
    with open(path) as f:
        for lineno, line in enumerate(f):
            line = line.strip()
            if not line or (lineno == 0 and line.startswith("timestamp")):
                continue
            parts = line.split(",")
            try:
                t = float(parts[0])
                ranges = np.array([int(p) for p in parts[1:]], dtype=np.int64)
                if not math.isfinite(t):
                    raise ValueError("non-finite timestamp")
                scan = LidarScan(t + offset, ranges, fmt.angular_start, fmt.points_per_degree,
                                 fmt.fov_degrees, fmt.max_range)
            except ValueError as exc:
                raise MalformedRecord(str(exc), path=path, index=lineno) from None
            if scans and scan.timestamp <= scans[-1].timestamp:
                raise NonMonotonicTimestamps("scan timestamps must strictly increase",
                                             path=path, index=lineno)
            scans.append(scan)
    return scans


# ---------------------------------------------------------------------------
# Detections JSON-lines
# ---------------------------------------------------------------------------

def _iter_jsonl(path):
    with open(path) as f:
        for lineno, line in enumerate(f):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"invalid JSON: {exc.msg}", path=path, index=lineno) from None


def detection_from_json(obj: dict[str, Any]) -> DetectionRecord:
    missing = [k for k in DETECTION_KEYS if k not in obj]
    if missing:
        raise ValueError(f"missing keys {missing}")
    for k in ("frame_id", "iso", "frame_width", "frame_height"):
        if not isinstance(obj[k], int) or isinstance(obj[k], bool):
            raise ValueError(f"{k} must be an integer")
    return DetectionRecord(
        timestamp=float(obj["timestamp"]), frame_id=obj["frame_id"],
        cx=float(obj["cx"]), cy=float(obj["cy"]), w=float(obj["w"]), h=float(obj["h"]),
        score=float(obj["score"]), iso=obj["iso"],
        frame_width=obj["frame_width"], frame_height=obj["frame_height"],
    )


def write_detections(path, records: Iterable[DetectionRecord]) -> None:
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r.to_json()) + "\n")


def read_detections(path, offset: float = 0.0) -> list[DetectionRecord]:
    """Read a detection stream. Several boxes may share one timestamp (same frame)."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    out: list[DetectionRecord] = []
    with open(path) as f:
        for lineno, line in enumerate(f):
            if not line.strip():
                continue
            try:
                rec = detection_from_json(json.loads(line))
            except (ValueError, TypeError) as exc:
                raise MalformedRecord(str(exc), path=path, index=lineno) from None
            if offset:
                rec = DetectionRecord(**{**rec.to_json(), "timestamp": rec.timestamp + offset})
            if out and rec.timestamp < out[-1].timestamp:
                raise NonMonotonicTimestamps("detection timestamps decrease", path=path, index=lineno)
            out.append(rec)
    return out


# ---------------------------------------------------------------------------
# Ground truth CSV
# ---------------------------------------------------------------------------

def write_groundtruth(path, samples: Iterable[GroundTruthSample]) -> None:
    samples = list(samples)
    with_flags = any(s.visible is not None for s in samples)
    with open(path, "w") as f:
        f.write("timestamp,x,y,z" + (",visible" if with_flags else "") + "\n")
        for s in samples:
            row = [_fmt(s.timestamp), _fmt(s.x), _fmt(s.y), _fmt(s.z)]
            if with_flags:
                row.append("1" if s.visible else "0")
            f.write(",".join(row) + "\n")


def read_groundtruth(path, offset: float = 0.0) -> list[GroundTruthSample]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    out: list[GroundTruthSample] = []
    with open(path) as f:
        for lineno, line in enumerate(f):
            line = line.strip()
            if not line or (lineno == 0 and line.startswith("timestamp")):
                continue
            parts = line.split(",")
            try:
                if len(parts) not in (4, 5):
                    raise ValueError(f"expected 4 or 5 columns, got {len(parts)}")
                t, x, y, z = (float(p) for p in parts[:4])
                if not all(math.isfinite(v) for v in (t, x, y, z)):
                    raise ValueError("non-finite value")
                visible = None
                if len(parts) == 5:
                    if parts[4] not in ("0", "1"):
                        raise ValueError("visible flag must be 0 or 1")
                    visible = parts[4] == "1"
            except ValueError as exc:
                raise MalformedRecord(str(exc), path=path, index=lineno) from None
            if out and t + offset <= out[-1].timestamp:
                raise NonMonotonicTimestamps("ground-truth timestamps must strictly increase",
                                             path=path, index=lineno)
            out.append(GroundTruthSample(t + offset, x, y, z, visible))
    return out


# ---------------------------------------------------------------------------
# Manifest and session
# ---------------------------------------------------------------------------

_MANIFEST_PATHS = {"thermal_dir": "thermal", "lidar_csv": "lidar",
                   "detections_jsonl": "detections", "groundtruth_csv": "groundtruth"}


def read_manifest(path) -> SessionManifest:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"invalid manifest JSON: {exc.msg}", path=path) from None
    base = path.parent
    try:
        paths = {k: (base / obj[k]) if obj.get(k) else None for k in _MANIFEST_PATHS}
        offsets = {str(k): float(v) for k, v in (obj.get("offsets") or {}).items()}
        duration = obj.get("duration")
        lidar = LidarFormat(**(obj.get("lidar") or {}))
        return SessionManifest(**paths, offsets=offsets,
                               duration=None if duration is None else float(duration), lidar=lidar)
    except (TypeError, ValueError) as exc:
        raise MalformedRecord(str(exc), path=path) from None


def write_manifest(path, manifest_obj: dict) -> None:
    Path(path).write_text(json.dumps(manifest_obj, indent=2, sort_keys=True) + "\n")


@dataclass
class Session:
    manifest: SessionManifest
    thermal: ThermalSequence | None = None
    lidar: list[LidarScan] = field(default_factory=list)
    detections: list[DetectionRecord] = field(default_factory=list)
    groundtruth: list[GroundTruthSample] = field(default_factory=list)

    @property
    def n_streams(self) -> int:
        return sum(1 for s in (self.thermal, self.lidar or None, self.detections or None,
                               self.groundtruth or None) if s is not None)


def load_session(manifest_path) -> Session:
    """Load every stream referenced by a manifest, with offsets applied."""
    m = read_manifest(manifest_path)
    return Session(
        manifest=m,
        thermal=read_thermal(m.thermal_dir, m.offset("thermal")) if m.thermal_dir else None,
        lidar=read_lidar_csv(m.lidar_csv, m.lidar, m.offset("lidar")) if m.lidar_csv else [],
        detections=(read_detections(m.detections_jsonl, m.offset("detections"))
                    if m.detections_jsonl else []),
        groundtruth=(read_groundtruth(m.groundtruth_csv, m.offset("groundtruth"))
                     if m.groundtruth_csv else []),
    )
