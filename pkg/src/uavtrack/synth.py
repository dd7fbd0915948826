"""Deterministic synthetic sessions with exact ground truth.

All randomness comes from SplitMix64 so fixtures can be reproduced bit for bit
by any implementation: the i-th output of a generator seeded with ``s`` is
``mix(s + i * 0x9E3779B97F4A7C15)`` for i = 1, 2, ... (mod 2**64). Each stream
(detections, thermal, lidar) draws from its own generator seeded with
``mix(seed + stream_id)``.

Uniform doubles take the top 53 bits; normals use Box-Muller on two uniforms;
thermal pixel noise uses the sum of the four 16-bit lanes of one output
(Irwin-Hall, rescaled to unit variance).

The renderers invert the estimator's own equations: a box of width
``f_px * L / depth`` centered on the pinhole projection, and a LIDAR run whose
beam count makes the segment length formula return the UAV length.
"""

from __future__ import annotations

import json
import math
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidSpec
from .estimator import Mount, world_to_camera
from .lidar import ANGLE_CONVENTIONS, AS_PRINTED, points_for_length
from .sensor_io import (DetectionRecord, GroundTruthSample, LidarScan, ThermalFrame,
                        write_detections, write_groundtruth, write_lidar_csv, write_manifest,
                        write_thermal)
from .thermal import N_LEVELS, GrayHistogram

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

STREAM_IDS = {"detections": 1, "thermal": 2, "lidar": 3, "histograms": 4}


def mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        return mix64(self.state)

    def u64(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self.state) + steps * np.uint64(GAMMA)
            out = _mix64_array(states)
        self.state = (self.state + n * GAMMA) & MASK64
        return out

    def uniform(self, n: int) -> np.ndarray:
        """Doubles in [0, 1)."""
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def normal(self, n: int) -> np.ndarray:
        u = self.uniform(2 * n)
        u1, u2 = 1.0 - u[0::2], u[1::2]
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)

    def gaussianish(self, n: int) -> np.ndarray:
        """Approximately standard-normal samples, one 64-bit output each."""
        x = self.u64(n)
        lanes = sum(((x >> np.uint64(16 * k)) & np.uint64(0xFFFF)).astype(np.float64) for k in range(4))
        # sum of 4 uniforms on [0, 65536): mean 131070, variance 4 * (65536^2 - 1) / 12
        return (lanes - 4 * 65535 / 2) / math.sqrt(4 * (65536.0 ** 2 - 1) / 12)


def stream_rng(seed: int, stream: str) -> SplitMix64:
    return SplitMix64(mix64((int(seed) + STREAM_IDS[stream]) & MASK64))


# ---------------------------------------------------------------------------
# Scenario description
# ---------------------------------------------------------------------------

TRAJECTORIES = ("hover", "line", "circle", "lissajous")
ALL_STREAMS = ("detections", "thermal", "lidar", "groundtruth")


@dataclass(frozen=True)
class CameraSpec:
    width: int
    height: int
    hfov_deg: float

    @property
    def f_px(self) -> float:
        """Focal length in pixels."""
        return (self.width / 2) / math.tan(math.radians(self.hfov_deg) / 2)


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str = "circle"
    center: tuple[float, float, float] = (0.0, 3000.0, 1000.0)
    radius: float = 1000.0
    speed: float = 300.0
    inclination_deg: float = 45.0
    direction: tuple[float, float, float] = (1.0, 0.0, 0.0)
    duration: float = 60.0
    uav_length: float = 350.0
    uav_height: float = 180.0
    rate_mono: float = 60.0
    rate_thermal: float = 30.0
    rate_lidar: float = 40.0
    rate_gt: float = 100.0
    streams: tuple[str, ...] = ("detections", "lidar", "groundtruth")
    mono_camera: CameraSpec = CameraSpec(1920, 1080, 60.0)
    thermal_camera: CameraSpec = CameraSpec(640, 512, 45.0)
    mount: Mount = Mount(0.0, 0.0, 1000.0, 0.0)
    # (start time s, ISO) pairs; the last one whose start <= t applies
    iso_schedule: tuple[tuple[float, int], ...] = ((0.0, 3200),)
    iso_threshold: int = 6400
    det_score: float = 0.95
    dark_score: float = 0.3
    det_jitter_px: float = 0.0
    det_miss_prob: float = 0.0
    thermal_background: float = 60.0
    thermal_noise_std: float = 2.0
    thermal_hot: float = 220.0
    lidar_noise_mm: float = 0.0
    lidar_clutter: int = 2
    wall_distance: float = 8000.0
    points_per_degree: int = 4
    fov_degrees: int = 180
    max_range: float = 30000.0
    angle_convention: str = AS_PRINTED
    seed: int = 0

    def validate(self) -> None:
        problems = []
        if self.kind not in TRAJECTORIES:
            problems.append(f"kind must be one of {TRAJECTORIES}")
        if not self.duration > 0:
            problems.append("duration must be > 0")
        for name in ("rate_mono", "rate_thermal", "rate_lidar", "rate_gt", "uav_length",
                     "uav_height", "wall_distance", "max_range"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be > 0")
        for name in ("det_miss_prob",):
            if not 0.0 <= getattr(self, name) <= 1.0:
                problems.append(f"{name} must be in [0, 1]")
        for name in ("det_score", "dark_score"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                problems.append(f"{name} must be in [0, 1]")
        for name in ("det_jitter_px", "thermal_noise_std", "lidar_noise_mm", "radius", "speed"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0")
        if self.lidar_clutter < 0:
            problems.append("lidar_clutter must be >= 0")
        if not 0 <= self.thermal_background <= 255 or not 0 <= self.thermal_hot <= 255:
            problems.append("thermal levels must be in [0, 255]")
        if unknown := set(self.streams) - set(ALL_STREAMS):
            problems.append(f"unknown streams {sorted(unknown)}")
        if not self.streams:
            problems.append("at least one stream is required")
        if self.angle_convention not in ANGLE_CONVENTIONS:
            problems.append(f"angle_convention must be one of {ANGLE_CONVENTIONS}")
        if not self.iso_schedule or any(iso < 0 for _, iso in self.iso_schedule):
            problems.append("iso_schedule needs at least one non-negative entry")
        if self.points_per_degree < 1 or self.fov_degrees < 1:
            problems.append("points_per_degree and fov_degrees must be >= 1")
        if self.kind in ("circle", "lissajous") and self.radius > 0 and self.speed == 0:
            problems.append("speed must be > 0 for periodic trajectories")
        if not 0 <= self.seed <= MASK64:
            problems.append("seed must be an unsigned 64-bit integer")
        if problems:
            raise InvalidSpec("; ".join(problems))

    def to_json(self) -> dict:
        d = asdict(self)
        d["streams"] = list(self.streams)
        d["iso_schedule"] = [list(e) for e in self.iso_schedule]
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "ScenarioSpec":
        """Build from a JSON object; unknown keys and bad types raise InvalidSpec."""
        known = {f for f in cls.__dataclass_fields__}
        if unknown := set(obj) - known:
            raise InvalidSpec(f"unknown scenario keys {sorted(unknown)}")
        kw = dict(obj)
        try:
            for k in ("center", "direction"):
                if k in kw:
                    kw[k] = tuple(float(v) for v in kw[k])
                    if len(kw[k]) != 3:
                        raise ValueError(f"{k} needs 3 components")
            if "streams" in kw:
                kw["streams"] = tuple(kw["streams"])
            if "iso_schedule" in kw:
                kw["iso_schedule"] = tuple((float(t), int(iso)) for t, iso in kw["iso_schedule"])
            for k, cam in (("mono_camera", CameraSpec), ("thermal_camera", CameraSpec), ("mount", Mount)):
                if k in kw:
                    kw[k] = cam(**kw[k])
            spec = cls(**kw)
        except (TypeError, ValueError) as exc:
            raise InvalidSpec(str(exc)) from None
        spec.validate()
        return spec


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

def trajectory(spec: ScenarioSpec, t) -> np.ndarray:
    """Global UAV position(s) in mm at time(s) ``t``; shape (..., 3)."""
    t = np.asarray(t, dtype=np.float64)
    c = np.asarray(spec.center, dtype=np.float64)
    R = spec.radius
    omega = spec.speed / R if R > 0 else 0.0
    ones = np.ones_like(t)
    if spec.kind == "hover":
        return c * ones[..., None]
    if spec.kind == "line":
        d = np.asarray(spec.direction, dtype=np.float64)
        d = d / np.linalg.norm(d)
        s = spec.speed * (t - spec.duration / 2)
        return c + s[..., None] * d
    phi = omega * t
    if spec.kind == "circle":
        inc = math.radians(spec.inclination_deg)
        off = np.stack([R * np.cos(phi), R * np.sin(phi) * math.cos(inc),
                        R * np.sin(phi) * math.sin(inc)], axis=-1)
        return c + off
    off = np.stack([R * np.sin(phi), 0.5 * R * np.sin(2 * phi), 0.5 * R * np.sin(3 * phi)], axis=-1)
    return c + off


def iso_at(spec: ScenarioSpec, t: float) -> int:
    iso = spec.iso_schedule[0][1]
    for start, value in spec.iso_schedule:
        if start <= t:
            iso = value
    return int(iso)


def frame_times(rate: float, duration: float) -> list[float]:
    n = int(math.floor(duration * rate + 1e-9)) + 1
    return [k / rate for k in range(n)]


def project(spec: ScenarioSpec, cam: CameraSpec, p):
    """Center-origin pixel center, box width and height of the UAV at ``p`` (None if behind)."""
    x, depth, z = world_to_camera(p, spec.mount)
    if depth <= 0:
        return None
    f = cam.f_px
    return (f * x / depth, f * z / depth, f * spec.uav_length / depth, f * spec.uav_height / depth)


def in_frame(cam: CameraSpec, u: float, v: float) -> bool:
    return abs(u) <= cam.width / 2 and abs(v) <= cam.height / 2


# ---------------------------------------------------------------------------
# Stream renderers
# ---------------------------------------------------------------------------

def render_groundtruth(spec: ScenarioSpec) -> list[GroundTruthSample]:
    times = frame_times(spec.rate_gt, spec.duration)
    pos = trajectory(spec, times)
    cam = spec.mono_camera if "detections" in spec.streams else spec.thermal_camera
    out = []
    for t, p in zip(times, pos):
        pr = project(spec, cam, p)
        visible = pr is not None and in_frame(cam, pr[0], pr[1])
        out.append(GroundTruthSample(t, float(p[0]), float(p[1]), float(p[2]), visible))
    return out


def render_detections(spec: ScenarioSpec) -> list[DetectionRecord]:
    rng = stream_rng(spec.seed, "detections")
    cam = spec.mono_camera
    times = frame_times(spec.rate_mono, spec.duration)
    pos = trajectory(spec, times)
    out = []
    for k, (t, p) in enumerate(zip(times, pos)):
        # fixed draw count per frame keeps later frames independent of earlier branches
        jitter = rng.normal(4) * spec.det_jitter_px
        miss = rng.random() < spec.det_miss_prob
        pr = project(spec, cam, p)
        if pr is None or miss:
            continue
        u, v, w, h = pr
        if not in_frame(cam, u, v):
            continue
        u = float(np.clip(u + jitter[0], -cam.width / 2, cam.width / 2))
        v = float(np.clip(v + jitter[1], -cam.height / 2, cam.height / 2))
        w = max(1.0, w + float(jitter[2]))
        h = max(1.0, h + float(jitter[3]))
        iso = iso_at(spec, t)
        score = spec.det_score if iso < spec.iso_threshold else spec.dark_score
        out.append(DetectionRecord(t, k, u, v, w, h, score, iso, cam.width, cam.height))
    return out


def render_thermal_frame(spec: ScenarioSpec, rng: SplitMix64, t: float, frame_id: int) -> ThermalFrame:
    cam = spec.thermal_camera
    W, H = cam.width, cam.height
    noise = rng.gaussianish(W * H).reshape(H, W)
    img = spec.thermal_background + spec.thermal_noise_std * noise
    pr = project(spec, cam, trajectory(spec, t))
    if pr is not None:
        u, v, w, h = pr
        col_c, row_c = W / 2 + u, H / 2 - v
        c0, c1 = max(0, int(math.floor(col_c - w / 2))), min(W, int(math.ceil(col_c + w / 2)) + 1)
        r0, r1 = max(0, int(math.floor(row_c - h / 2))), min(H, int(math.ceil(row_c + h / 2)) + 1)
        if c0 < c1 and r0 < r1:
            cc = (np.arange(c0, c1) + 0.5 - col_c) / (w / 2)
            rr = (np.arange(r0, r1) + 0.5 - row_c) / (h / 2)
            inside = rr[:, None] ** 2 + cc[None, :] ** 2 <= 1.0
            patch = img[r0:r1, c0:c1]
            patch[inside] = spec.thermal_hot + spec.thermal_noise_std * noise[r0:r1, c0:c1][inside]
    px = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return ThermalFrame(t, px, frame_id)


def render_thermal(spec: ScenarioSpec):
    rng = stream_rng(spec.seed, "thermal")
    for k, t in enumerate(frame_times(spec.rate_thermal, spec.duration)):
        yield render_thermal_frame(spec, rng, t, k)


def render_lidar_scan(spec: ScenarioSpec, rng: SplitMix64, t: float) -> LidarScan:
    ppd = spec.points_per_degree
    n = spec.fov_degrees * ppd
    angles = np.radians(np.arange(n) / ppd)
    noise = rng.normal(n) * spec.lidar_noise_mm
    clutter = rng.uniform(3 * spec.lidar_clutter).reshape(-1, 3) if spec.lidar_clutter else np.empty((0, 3))
    ranges = np.zeros(n)
    s = np.sin(angles)
    with np.errstate(divide="ignore"):
        wall = np.where(s > 1e-9, spec.wall_distance / np.where(s > 1e-9, s, 1.0), np.inf)
    ok = wall <= spec.max_range
    ranges[ok] = wall[ok]
    for a, b, c in clutter:
        # short speckles, always below the 10-point noise filter
        i0 = int(a * n)
        width = 1 + int(b * 3)
        ranges[i0:i0 + width] = 500.0 + c * 5500.0
    x, y, z = world_to_camera(trajectory(spec, t), spec.mount)
    if abs(z) <= spec.uav_height / 2 and y > 0:
        rho = math.hypot(x, y)
        bearing = math.degrees(math.atan2(y, x))
        n_pts = max(1, int(round(points_for_length(spec.uav_length, rho, ppd, spec.angle_convention))))
        center = bearing * ppd
        i0 = int(round(center - (n_pts - 1) / 2))
        lo, hi = max(0, i0), min(n, i0 + n_pts)
        # drawn over clutter: speckles are distractors, not occluders
        ranges[lo:hi] = rho
    ranges = ranges + np.where(ranges > 0, noise, 0.0)
    ranges = np.clip(np.rint(ranges), 0, spec.max_range)
    return LidarScan(t, ranges.astype(np.int64), 0.0, ppd, spec.fov_degrees, spec.max_range)


def render_lidar(spec: ScenarioSpec) -> list[LidarScan]:
    rng = stream_rng(spec.seed, "lidar")
    return [render_lidar_scan(spec, rng, t) for t in frame_times(spec.rate_lidar, spec.duration)]


def suggested_config(spec: ScenarioSpec) -> dict:
    """Pipeline config matching the rendered room: the back wall is excluded by range."""
    return {
        "iso_threshold": spec.iso_threshold,
        "lidar": {
            "zones": [{"range_mm": [0.9 * spec.wall_distance, spec.max_range], "label": "room walls"}],
            "points_per_degree": spec.points_per_degree,
            "angle_convention": spec.angle_convention,
            "rate_hz": spec.rate_lidar,
        },
        "mount": {"dx": spec.mount.dx, "dy": spec.mount.dy, "dz": spec.mount.dz,
                  "yaw_deg": spec.mount.yaw_deg},
    }


def gen_session(spec: ScenarioSpec, out_dir) -> Path:
    """Write a complete session (manifest, streams, ground truth, spec, config); return the manifest path."""
    spec.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"offsets": {}, "duration": spec.duration,
                "lidar": {"angular_start": 0.0, "points_per_degree": spec.points_per_degree,
                          "fov_degrees": spec.fov_degrees, "max_range": spec.max_range}}
    if "detections" in spec.streams:
        write_detections(out / "detections.jsonl", render_detections(spec))
        manifest["detections_jsonl"] = "detections.jsonl"
    if "thermal" in spec.streams:
        if (out / "thermal").exists():
            shutil.rmtree(out / "thermal")
        write_thermal(out / "thermal", render_thermal(spec))
        manifest["thermal_dir"] = "thermal"
    if "lidar" in spec.streams:
        write_lidar_csv(out / "lidar.csv", render_lidar(spec))
        manifest["lidar_csv"] = "lidar.csv"
    if "groundtruth" in spec.streams:
        write_groundtruth(out / "groundtruth.csv", render_groundtruth(spec))
        manifest["groundtruth_csv"] = "groundtruth.csv"
    (out / "scenario.json").write_text(json.dumps(spec.to_json(), indent=2, sort_keys=True) + "\n")
    (out / "config.json").write_text(json.dumps(suggested_config(spec), indent=2, sort_keys=True) + "\n")
    write_manifest(out / "manifest.json", manifest)
    return out / "manifest.json"


# ---------------------------------------------------------------------------
# Histogram cases for the threshold oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HistogramCase(GrayHistogram):
    kind: str = "unimodal"
    modes: tuple[int, ...] = field(default=())

    @property
    def mode_gap(self) -> int | None:
        return self.modes[1] - self.modes[0] if len(self.modes) == 2 else None


def _bump(levels: np.ndarray, mu: float, sigma: float) -> np.ndarray:
    return np.exp(-0.5 * ((levels - mu) / sigma) ** 2)


def gen_histogram_cases(seed: int, n: int) -> list[HistogramCase]:
    """Deterministic mix of unimodal, bimodal and single-level histograms built from pixel counts."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = SplitMix64(mix64((int(seed) + STREAM_IDS["histograms"]) & MASK64))
    levels = np.arange(N_LEVELS, dtype=np.float64)
    cases = []
    for _ in range(n):
        u = rng.uniform(8)
        n_pixels = 4096 + int(u[0] * 300000)
        r = u[1]
        if r < 0.1:
            g = int(u[2] * N_LEVELS)
            counts = np.zeros(N_LEVELS, dtype=np.int64)
            counts[g] = n_pixels
            kind, modes = "degenerate", (g,)
        elif r < 0.45:
            mu = 20 + u[2] * 215
            sigma = 2 + u[3] * 30
            counts = np.floor(_bump(levels, mu, sigma) / _bump(levels, mu, sigma).sum() * n_pixels)
            kind, modes = "unimodal", (int(round(mu)),)
        else:
            mu1 = 10 + u[2] * 100
            gap = 40 + u[3] * 100
            mu2 = min(250.0, mu1 + gap)
            s1, s2 = 2 + u[4] * 12, 2 + u[5] * 12
            frac = 0.02 + u[6] * 0.5
            dens = (1 - frac) * _bump(levels, mu1, s1) / _bump(levels, mu1, s1).sum() \
                + frac * _bump(levels, mu2, s2) / _bump(levels, mu2, s2).sum()
            counts = np.floor(dens * n_pixels)
            kind, modes = "bimodal", (int(round(mu1)), int(round(mu2)))
        counts = counts.astype(np.int64)
        total = int(counts.sum())
        cases.append(HistogramCase(counts / total, total, kind=kind, modes=modes))
    return cases
