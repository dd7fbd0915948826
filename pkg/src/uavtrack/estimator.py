"""Mode switch, pixel-to-world conversion and the streaming pipeline fold.

Coordinate conventions
----------------------
Image coordinates are center-origin pixels (x right, y up). The camera frame
has x to the right, y along the optical axis and z up; a mount record places
the camera in the global frame by a yaw about z and a translation. The object
pixel length is the bounding-box width.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .errors import (MalformedRecord, MissingCalibration, MissingFile, MissingInput,
                     NoCoOccurrence, NonPositiveDt, StageError, UavTrackError, ZeroPixelLength)
from .lidar import axial_distance, segment_scan, select_target
from .sensor_io import DetectionRecord, Session, index_before, nearest_before
from .thermal import detect_thermal
from .tracker import Tracker

ISO_THRESHOLD = 6400


class SensorMode(str, Enum):
    MONO = "mono"
    THERMAL = "thermal"


def select_mode(iso: int, threshold: int = ISO_THRESHOLD) -> SensorMode:
    """Monocular below the ISO threshold, thermal at or above it."""
    return SensorMode.MONO if iso < threshold else SensorMode.THERMAL


@dataclass(frozen=True)
class Mount:
    """Camera pose in the global frame: yaw about +z (degrees) then translation (mm)."""

    dx: float = 0.0
    dy: float = 0.0
    dz: float = 0.0
    yaw_deg: float = 0.0

    def rotation(self) -> np.ndarray:
        c, s = math.cos(math.radians(self.yaw_deg)), math.sin(math.radians(self.yaw_deg))
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dz])


@dataclass(frozen=True)
class CalibrationRecord:
    mode: SensorMode
    D_c: float
    l_c: float
    L_real: float
    f: float
    mount: Mount = field(default_factory=Mount)

    def __post_init__(self):
        object.__setattr__(self, "mode", SensorMode(self.mode))
        for name in ("D_c", "l_c", "L_real", "f"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v}")
        if self.l_c > self.f:
            raise ValueError(f"l_c={self.l_c} exceeds frame length f={self.f}")

    def to_json(self) -> dict:
        return {"mode": self.mode.value, "D_c": self.D_c, "l_c": self.l_c,
                "L_real": self.L_real, "f": self.f,
                "mount": {"dx": self.mount.dx, "dy": self.mount.dy, "dz": self.mount.dz,
                          "yaw_deg": self.mount.yaw_deg}}

    @classmethod
    def from_json(cls, obj: dict) -> "CalibrationRecord":
        return cls(mode=SensorMode(obj["mode"]), D_c=float(obj["D_c"]), l_c=float(obj["l_c"]),
                   L_real=float(obj["L_real"]), f=float(obj["f"]),
                   mount=Mount(**{k: float(v) for k, v in (obj.get("mount") or {}).items()}))


def read_calibration(path) -> dict[SensorMode, CalibrationRecord]:
    """Calibration file: one record object or a list of them (one per mode)."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    try:
        obj = json.loads(path.read_text())
        items = obj if isinstance(obj, list) else [obj]
        records = [CalibrationRecord.from_json(o) for o in items]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise MalformedRecord(f"bad calibration: {exc}", path=path) from None
    return {r.mode: r for r in records}


def write_calibration(path, records) -> None:
    records = sorted(records, key=lambda r: r.mode.value)
    Path(path).write_text(json.dumps([r.to_json() for r in records], indent=2) + "\n")


@dataclass(frozen=True)
class WorldState:
    timestamp: float
    p: tuple[float, float, float]
    v: tuple[float, float, float]
    mode: SensorMode


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

def pixel_to_real(C_P, l: float, L_real: float) -> tuple[float, float]:
    """Scale a center-origin pixel coordinate to mm in the image plane: ``C_P * L_real / l``."""
    if not l > 0:
        raise ZeroPixelLength(f"object pixel length must be positive, got {l}")
    if not L_real > 0:
        raise ValueError("real object length must be positive")
    s = L_real / l
    return (C_P[0] * s, C_P[1] * s)


def estimate_depth(l_i: float, calib: CalibrationRecord) -> float:
    """Current distance from the pixel length: ``D_c * l_c / l_i``."""
    if not l_i > 0:
        raise ZeroPixelLength(f"object pixel length must be positive, got {l_i}")
    return calib.D_c * calib.l_c / l_i


def compose_world(C_R, D_i: float, mount: Mount = Mount()) -> tuple[float, float, float]:
    """Camera-frame point ``(x_img, D_i, y_img)`` moved into the global frame."""
    if not D_i > 0:
        raise ValueError("depth must be positive")
    local = np.array([C_R[0], D_i, C_R[1]], dtype=np.float64)
    if mount.yaw_deg:
        local = mount.rotation() @ local
    g = local + mount.translation
    return (float(g[0]), float(g[1]), float(g[2]))


def world_to_camera(p, mount: Mount = Mount()) -> tuple[float, float, float]:
    """Inverse of the mount transform: global point to camera-frame (x, depth, z)."""
    local = np.asarray(p, dtype=np.float64) - mount.translation
    if mount.yaw_deg:
        local = mount.rotation().T @ local
    return (float(local[0]), float(local[1]), float(local[2]))


def velocity(p_t, p_prev, dt: float) -> tuple[float, float, float]:
    if not dt > 0:
        raise NonPositiveDt(f"dt must be positive, got {dt}")
    return tuple((a - b) / dt for a, b in zip(p_t, p_prev))


# ---------------------------------------------------------------------------
# Pipeline fold
# ---------------------------------------------------------------------------

@dataclass
class PipelineStats:
    ticks: int = 0
    skipped: int = 0
    routed: dict = field(default_factory=lambda: {SensorMode.MONO: 0, SensorMode.THERMAL: 0})
    recalibrations: int = 0
    emitted: int = 0

    @property
    def frames(self) -> int:
        return self.ticks - self.skipped


@dataclass(frozen=True)
class _Tick:
    t: float
    kind: SensorMode
    # detections of this frame (mono) or thermal frame index
    payload: object


def _ticks(session: Session) -> list[_Tick]:
    ticks = []
    dets = session.detections
    i = 0
    while i < len(dets):
        j = i
        while j < len(dets) and dets[j].timestamp == dets[i].timestamp:
            j += 1
        ticks.append(_Tick(dets[i].timestamp, SensorMode.MONO, dets[i:j]))
        i = j
    if session.thermal is not None:
        ticks.extend(_Tick(t, SensorMode.THERMAL, k) for k, t in enumerate(session.thermal.timestamps))
    # at equal times the monocular frame goes first
    ticks.sort(key=lambda tk: (tk.t, tk.kind != SensorMode.MONO))
    return ticks


class LidarWindow:
    """Target segment lookup in the scans near a frame time (segmentation cached per scan)."""

    def __init__(self, scans, cfg: PipelineConfig):
        self.scans = scans
        self.times = [s.timestamp for s in scans]
        self.cfg = cfg.lidar
        self.period = 1.0 / cfg.lidar.rate_hz
        self._cache: dict[int, object] = {}

    def target_at(self, t: float):
        """Nearest scan within one LIDAR period of ``t`` and its target segment, or None."""
        if not self.scans:
            return None
        i = index_before(self.times, t)
        best = None
        for k in (i, i + 1):
            if 0 <= k < len(self.scans) and abs(self.times[k] - t) <= self.period:
                if best is None or abs(self.times[k] - t) < abs(self.times[best] - t):
                    best = k
        if best is None:
            return None
        if best not in self._cache:
            scan = self.scans[best]
            segs = segment_scan(scan, self.cfg.zones, self.cfg.gap_mm, self.cfg.min_points,
                                self.cfg.angle_convention)
            seg = select_target(segs, expected_length=self.cfg.expected_uav_length)
            self._cache[best] = None if seg is None else (scan, seg)
        return self._cache[best]


def _mode_at(session: Session, t: float, cfg: PipelineConfig) -> SensorMode:
    if not session.detections:
        return SensorMode.THERMAL
    rec = nearest_before(session.detections, t) or session.detections[0]
    return select_mode(rec.iso, cfg.iso_threshold)


@dataclass
class FrameObservation:
    """One processed frame: the box the estimator used (None if no track)."""

    t: float
    mode: SensorMode
    center: tuple[float, float] | None = None
    width: float | None = None
    frame_width: int | None = None
    lidar: object = None
    track: object = None


def observe(session: Session, cfg: PipelineConfig, stats: PipelineStats | None = None,
            calib_modes=None):
    """Yield one FrameObservation per frame routed to the active branch.

    ``calib_modes`` (if given) is the set of modes with a calibration; the
    first frame routed to any other mode raises MissingCalibration.
    """
    stats = stats if stats is not None else PipelineStats()
    trackers = {m: Tracker(cfg.tracker) for m in SensorMode}
    lidar = LidarWindow(session.lidar, cfg)
    frame_width: dict[SensorMode, int] = {}
    if session.thermal is not None and len(session.thermal):
        frame_width[SensorMode.THERMAL] = session.thermal[0].width
    for tick in _ticks(session):
        stats.ticks += 1
        mode = _mode_at(session, tick.t, cfg)
        if mode == SensorMode.THERMAL and session.thermal is None:
            raise MissingInput(f"t={tick.t:.6f}s: thermal branch selected but the session has no thermal frames")
        if tick.kind != mode:
            stats.skipped += 1
            continue
        if calib_modes is not None and mode not in calib_modes:
            raise MissingCalibration(f"no calibration for {mode.value} mode (first needed at t={tick.t:.6f}s)")
        stats.routed[mode] += 1
        try:
            dets = _frame_detections(session, tick, mode, cfg)
            obs = FrameObservation(tick.t, mode)
            if dets:
                frame_width[mode] = dets[0].frame_width
            obs.frame_width = frame_width.get(mode)
            if cfg.bypass_kf:
                if dets:
                    d = max(dets, key=lambda r: r.score)
                    obs.center, obs.width = (d.cx, d.cy), d.w
            else:
                trackers[mode].step(dets, tick.t)
                tr = trackers[mode].best()
                if tr is not None and (tr.misses == 0 or cfg.estimator.emit_coasting):
                    obs.center, obs.width, obs.track = tr.center, tr.w, tr
            if obs.center is not None and cfg.lidar.recalibrate:
                obs.lidar = lidar.target_at(tick.t)
        except UavTrackError as exc:
            raise StageError(tick.t, exc) from exc
        yield obs


def _frame_detections(session: Session, tick: _Tick, mode: SensorMode,
                      cfg: PipelineConfig) -> list[DetectionRecord]:
    if mode == SensorMode.MONO:
        return [d for d in tick.payload if d.score >= cfg.min_score]
    det = detect_thermal(session.thermal[tick.payload], cfg.thermal)
    return [] if det is None else [det]


def recalibrated(calib: CalibrationRecord, scan, segment, pixel_length: float) -> CalibrationRecord:
    """Calibration refreshed from a LIDAR target seen together with a tracked box."""
    return replace(calib, D_c=axial_distance(segment, scan), L_real=segment.L, l_c=pixel_length)


def mount_from_config(cfg: PipelineConfig) -> Mount:
    m = cfg.mount
    return Mount(m.dx, m.dy, m.dz, m.yaw_deg)


def calibrate_session(session: Session, cfg: PipelineConfig = PipelineConfig()) -> list[CalibrationRecord]:
    """Calibrations from the first window where a LIDAR target and a tracked box co-occur.

    For each sensor mode, the first run of consecutive frames in which both
    are present is averaged into one record. Raises NoCoOccurrence if no mode
    has such a window.
    """
    windows: dict[SensorMode, list] = {}
    closed: set[SensorMode] = set()
    for obs in observe(session, cfg):
        if obs.mode in closed:
            continue
        if obs.center is not None and obs.lidar is not None:
            scan, seg = obs.lidar
            windows.setdefault(obs.mode, []).append(
                (axial_distance(seg, scan), seg.L, obs.width, obs.frame_width))
        elif obs.mode in windows:
            closed.add(obs.mode)
    if not windows:
        raise NoCoOccurrence("no frame where a LIDAR target and a tracked box co-occur")
    mount = mount_from_config(cfg)
    records = []
    for mode in sorted(windows, key=lambda m: m.value):
        rows = windows[mode]
        D = math.fsum(r[0] for r in rows) / len(rows)
        L = math.fsum(r[1] for r in rows) / len(rows)
        l = math.fsum(r[2] for r in rows) / len(rows)
        records.append(CalibrationRecord(mode, D, l, L, float(rows[-1][3]), mount))
    return records


def run_pipeline(session: Session, calib: dict, cfg: PipelineConfig = PipelineConfig(),
                 stats: PipelineStats | None = None, on_frame=None) -> list[WorldState]:
    """Fold the session's frames into a world-frame trajectory.

    Per frame: choose the branch from the ISO of the latest detection record,
    get a box (detector stream or thermal detection), track it, convert the box
    center to the global frame and difference against the previous output.
    When a LIDAR target is seen within one scan period of a tracked box, the
    active mode's calibration is refreshed from it.

    ``on_frame``, if given, is called with every FrameObservation.
    """
    if not session.detections and session.thermal is None:
        raise MissingInput("session has neither detections nor thermal frames")
    calib = dict(calib)
    stats = stats if stats is not None else PipelineStats()
    bias = np.asarray(cfg.estimator.thermal_bias_mm, dtype=np.float64)
    out: list[WorldState] = []
    for obs in observe(session, cfg, stats, calib_modes=set(calib)):
        if on_frame is not None:
            on_frame(obs)
        if obs.center is None:
            continue
        cal = calib[obs.mode]
        try:
            if obs.lidar is not None:
                scan, seg = obs.lidar
                cal = calib[obs.mode] = recalibrated(cal, scan, seg, obs.width)
                stats.recalibrations += 1
            C_R = pixel_to_real(obs.center, obs.width, cal.L_real)
            D_i = estimate_depth(obs.width, cal)
            p = compose_world(C_R, D_i, cal.mount)
        except (UavTrackError, ValueError) as exc:
            raise StageError(obs.t, exc) from exc
        if obs.mode == SensorMode.THERMAL and bias.any():
            p = tuple(float(a - b) for a, b in zip(p, bias))
        v = velocity(p, out[-1].p, obs.t - out[-1].timestamp) if out else (0.0, 0.0, 0.0)
        out.append(WorldState(obs.t, p, v, obs.mode))
        stats.emitted += 1
    return out


def write_trajectory(path, states) -> None:
    with open(path, "w") as f:
        f.write("timestamp,x,y,z,vx,vy,vz,mode\n")
        for s in states:
            vals = [s.timestamp, *s.p, *s.v]
            f.write(",".join(repr(float(v)) for v in vals) + f",{s.mode.value}\n")


def read_trajectory(path) -> list[WorldState]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    out = []
    with open(path) as f:
        for lineno, line in enumerate(f):
            line = line.strip()
            if not line or (lineno == 0 and line.startswith("timestamp")):
                continue
            parts = line.split(",")
            try:
                if len(parts) != 8:
                    raise ValueError(f"expected 8 columns, got {len(parts)}")
                t, x, y, z, vx, vy, vz = (float(p) for p in parts[:7])
                mode = SensorMode(parts[7])
            except ValueError as exc:
                raise MalformedRecord(str(exc), path=path, index=lineno) from None
            out.append(WorldState(t, (x, y, z), (vx, vy, vz), mode))
    return out
