"""Constant-velocity Kalman tracking of the UAV box center in pixel space.

State is ``[cx, cy, vx, vy]`` (px, px/s). Process noise is continuous white
acceleration with spectral density ``q`` (px^2/s^3), so the discrete noise
over ``dt`` is ``q * [[dt^3/3, dt^2/2], [dt^2/2, dt]]`` per axis.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NonPositiveDt, NumericalBreakdown, TimeRegression

H = np.array([[1.0, 0.0, 0.0, 0.0],
              [0.0, 1.0, 0.0, 0.0]])


@dataclass(frozen=True)
class KalmanConfig:
    q: float = 50.0
    r: float = 4.0
    init_velocity_var: float = 1.0e4
    gate_px: float = 50.0
    max_misses: int = 15
    min_hits: int = 3

    def __post_init__(self):
        if not (self.q > 0 and self.r > 0):
            raise ValueError("q and r must be positive")
        if self.init_velocity_var <= 0:
            raise ValueError("init_velocity_var must be positive")
        if self.gate_px <= 0:
            raise ValueError("gate_px must be positive")
        if self.max_misses < 1:
            raise ValueError("max_misses must be >= 1")
        if self.min_hits < 1:
            raise ValueError("min_hits must be >= 1")


@dataclass(frozen=True, eq=False)
class TrackState:
    x: np.ndarray
    P: np.ndarray
    last_update: float
    id: int
    misses: int = 0
    hits: int = 1
    # box size carried through from the last matched detection
    w: float = 0.0
    h: float = 0.0

    @property
    def center(self) -> tuple[float, float]:
        return (float(self.x[0]), float(self.x[1]))

    @property
    def velocity(self) -> tuple[float, float]:
        return (float(self.x[2]), float(self.x[3]))

    def to_json(self, timestamp: float) -> dict:
        return {"timestamp": float(timestamp), "id": self.id,
                "cx": float(self.x[0]), "cy": float(self.x[1]),
                "vx": float(self.x[2]), "vy": float(self.x[3]), "w": self.w, "h": self.h}


def transition(dt: float) -> np.ndarray:
    F = np.eye(4)
    F[0, 2] = F[1, 3] = dt
    return F


def process_noise(dt: float, q: float) -> np.ndarray:
    a, b, c = dt ** 3 / 3.0, dt ** 2 / 2.0, dt
    return q * np.array([[a, 0.0, b, 0.0],
                         [0.0, a, 0.0, b],
                         [b, 0.0, c, 0.0],
                         [0.0, b, 0.0, c]])


def _sym(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def predict(track: TrackState, dt: float, cfg: KalmanConfig, q: float | None = None) -> TrackState:
    """Propagate ``dt`` seconds ahead. ``q`` overrides ``cfg.q`` (``q=0`` is noise-free)."""
    if not dt > 0:
        raise NonPositiveDt(f"dt must be positive, got {dt}")
    F = transition(dt)
    x = F @ track.x
    P = F @ track.P @ F.T
    qq = cfg.q if q is None else q
    if qq:
        P = P + process_noise(dt, qq)
    return replace(track, x=x, P=_sym(P), last_update=track.last_update + dt)


def update(track: TrackState, z, cfg: KalmanConfig, r: float | None = None) -> TrackState:
    """Fuse a center measurement ``z = (cx, cy)`` (Joseph-form covariance)."""
    rr = cfg.r if r is None else r
    R = rr * np.eye(2)
    z = np.asarray(z, dtype=np.float64)
    y = z - H @ track.x
    S = H @ track.P @ H.T + R
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > 1.0 / np.finfo(float).eps:
        raise NumericalBreakdown("innovation covariance is singular")
    K = np.linalg.solve(S, H @ track.P).T
    x = track.x + K @ y
    A = np.eye(4) - K @ H
    P = A @ track.P @ A.T + K @ R @ K.T
    return replace(track, x=x, P=_sym(P), misses=0, hits=track.hits + 1)


def spawn(z, t: float, track_id: int, cfg: KalmanConfig, w: float = 0.0, h: float = 0.0) -> TrackState:
    x = np.array([float(z[0]), float(z[1]), 0.0, 0.0])
    P = np.diag([cfg.r, cfg.r, cfg.init_velocity_var, cfg.init_velocity_var])
    return TrackState(x=x, P=P, last_update=t, id=track_id, misses=0, hits=1, w=w, h=h)


def associate(tracks, detections, gate_px: float):
    """Greedy nearest-neighbour matching of track centers to detection centers.

    ``tracks`` are TrackStates (already predicted); ``detections`` are objects
    with ``cx``/``cy`` or plain ``(cx, cy)`` pairs. Returns
    ``(matches, unmatched_tracks, unmatched_detections)`` where ``matches`` is a
    list of ``(track_index, detection_index)`` and the others are index lists.
    """
    def _xy(d):
        return (d.cx, d.cy) if hasattr(d, "cx") else (d[0], d[1])

    pairs = []
    for ti, tr in enumerate(tracks):
        tx, ty = tr.center
        for di, d in enumerate(detections):
            dx, dy = _xy(d)
            dist = math.hypot(dx - tx, dy - ty)
            if dist <= gate_px:
                pairs.append((dist, tr.id, di, ti))
    pairs.sort()
    used_t, used_d, matches = set(), set(), []
    for _, _, di, ti in pairs:
        if ti in used_t or di in used_d:
            continue
        used_t.add(ti)
        used_d.add(di)
        matches.append((ti, di))
    matches.sort()
    unmatched_t = [i for i in range(len(tracks)) if i not in used_t]
    unmatched_d = [i for i in range(len(detections)) if i not in used_d]
    return matches, unmatched_t, unmatched_d


@dataclass
class Tracker:
    """Track lifecycle: spawn on unmatched detection, confirm, coast, drop.

    ``step`` calls must come in non-decreasing time order.
    """

    cfg: KalmanConfig = field(default_factory=KalmanConfig)
    tracks: list[TrackState] = field(default_factory=list)
    last_time: float | None = None
    _ids: itertools.count = field(default_factory=lambda: itertools.count(1), repr=False)

    def step(self, detections, t: float) -> list[TrackState]:
        """Advance to time ``t`` with this frame's detections; return confirmed tracks."""
        if self.last_time is not None and t < self.last_time:
            raise TimeRegression(f"step at {t} after {self.last_time}")
        self.last_time = t
        predicted = [replace(predict(tr, t - tr.last_update, self.cfg), last_update=t)
                     if t > tr.last_update else tr
                     for tr in self.tracks]
        matches, lost, fresh = associate(predicted, detections, self.cfg.gate_px)
        out: list[TrackState] = []
        for ti, di in matches:
            d = detections[di]
            tr = update(predicted[ti], (d.cx, d.cy), self.cfg)
            out.append(replace(tr, w=float(d.w), h=float(d.h)))
        for ti in lost:
            tr = replace(predicted[ti], misses=predicted[ti].misses + 1)
            if tr.misses <= self.cfg.max_misses:
                out.append(tr)
        for di in fresh:
            d = detections[di]
            out.append(spawn((d.cx, d.cy), t, next(self._ids), self.cfg, float(d.w), float(d.h)))
        out.sort(key=lambda tr: tr.id)
        self.tracks = out
        return self.confirmed()

    def confirmed(self) -> list[TrackState]:
        return [tr for tr in self.tracks if tr.hits >= self.cfg.min_hits]

    def best(self) -> TrackState | None:
        """The confirmed track to report: matched this frame first, then most hits, then lowest id."""
        conf = self.confirmed()
        if not conf:
            return None
        return min(conf, key=lambda tr: (tr.misses, -tr.hits, tr.id))
