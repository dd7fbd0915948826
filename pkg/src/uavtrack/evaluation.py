"""Trajectory evaluation against interpolated ground truth."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import NoOverlap, OutOfRange
from .sensor_io import GroundTruthSample

AXES = ("x", "y", "z")


def interpolate_gt(samples: Sequence[GroundTruthSample], t: float) -> tuple[float, float, float]:
    """Piecewise-linear ground-truth position at time ``t``."""
    if not samples:
        raise OutOfRange("no ground-truth samples")
    t0, t1 = samples[0].timestamp, samples[-1].timestamp
    if not t0 <= t <= t1:
        raise OutOfRange(f"t={t} outside ground truth [{t0}, {t1}]")
    ts = np.fromiter((s.timestamp for s in samples), dtype=np.float64, count=len(samples))
    i = int(np.searchsorted(ts, t, side="right")) - 1
    a = samples[i]
    if a.timestamp == t or i == len(samples) - 1:
        return a.position
    b = samples[i + 1]
    w = (t - a.timestamp) / (b.timestamp - a.timestamp)
    return tuple(pa + w * (pb - pa) for pa, pb in zip(a.position, b.position))


def _gt_arrays(gt: Sequence[GroundTruthSample]):
    ts = np.array([s.timestamp for s in gt], dtype=np.float64)
    pos = np.array([s.position for s in gt], dtype=np.float64).reshape(-1, 3)
    return ts, pos


def interpolate_many(gt: Sequence[GroundTruthSample], times) -> np.ndarray:
    ts, pos = _gt_arrays(gt)
    times = np.asarray(times, dtype=np.float64)
    if times.size and (times.min() < ts[0] or times.max() > ts[-1]):
        raise OutOfRange("query time outside ground truth")
    return np.stack([np.interp(times, ts, pos[:, k]) for k in range(3)], axis=-1)


@dataclass(frozen=True)
class EvalReport:
    mae: tuple[float, float, float]
    # None on an axis whose ground-truth extent is zero
    percentage: tuple[float | None, float | None, float | None]
    extent: tuple[float, float, float]
    correct_rate: float
    n_compared: int

    def to_json(self) -> dict:
        return {"mae": list(self.mae), "percentage": list(self.percentage),
                "extent": list(self.extent), "correct_rate": self.correct_rate,
                "n_compared": self.n_compared}

    def table(self, label: str = "Pipeline") -> str:
        """Plain-text table with mean absolute error (mm) and percentage error per axis."""
        head = f"{'':<12}{'Mean Absolute Error (mm)':^30}{'Percentage Error':^30}"
        sub = f"{'':<12}" + "".join(f"{a.upper():>10}" for a in AXES) * 2
        pct = ["-" if p is None else f"{100 * p:.1f}%" for p in self.percentage]
        row = f"{label:<12}" + "".join(f"{m:>10.1f}" for m in self.mae) + "".join(f"{p:>10}" for p in pct)
        tail = f"correct rate {100 * self.correct_rate:.1f}%  ({self.n_compared} estimates compared)"
        return "\n".join([head, sub, row, tail]) + "\n"


def _median_period(times: np.ndarray) -> float:
    return float(np.median(np.diff(times))) if times.size > 1 else math.inf


def correct_rate(estimate_times, gt: Sequence[GroundTruthSample], frame_period: float | None = None,
                 modes=None) -> float:
    """Fraction of visible ground-truth samples with an estimate within half a frame period.

    Samples without a ``visible`` flag count as visible. ``frame_period``
    defaults to the median spacing of the estimates, taken per sensor mode
    when ``modes`` (one label per estimate) is given, since each branch runs
    at its own camera rate.
    """
    est = np.asarray(estimate_times, dtype=np.float64)
    visible = np.array([s.timestamp for s in gt if s.visible is not False], dtype=np.float64)
    if visible.size == 0 or est.size == 0:
        return 0.0
    order = np.argsort(est, kind="stable")
    est = est[order]
    if frame_period is not None:
        period = np.full(est.size, float(frame_period))
    elif modes is None:
        period = np.full(est.size, _median_period(est))
    else:
        labels = np.asarray([str(m) for m in modes], dtype=object)[order]
        period = np.empty(est.size)
        for m in set(labels):
            sel = labels == m
            period[sel] = _median_period(est[sel])
    tol = 0.5 * period * (1 + 1e-9)
    j = np.searchsorted(est, visible)
    lo, hi = np.clip(j - 1, 0, est.size - 1), np.clip(j, 0, est.size - 1)
    hit = (np.abs(visible - est[lo]) <= tol[lo]) | (np.abs(est[hi] - visible) <= tol[hi])
    return float(hit.mean())


def evaluate(estimates, gt: Sequence[GroundTruthSample], frame_period: float | None = None) -> EvalReport:
    """Per-axis MAE, percentage error and correct rate of a trajectory.

    Estimates (``WorldState``-like, with ``timestamp`` and ``p``) are compared at
    their own timestamps against linearly interpolated ground truth. The
    percentage error divides each MAE by the ground-truth extent (max - min)
    over the evaluated window.

    Raises:
        NoOverlap: no estimate falls inside the ground-truth time range.
    """
    if not gt:
        raise NoOverlap("no ground truth")
    ts, pos = _gt_arrays(gt)
    et = np.array([e.timestamp for e in estimates], dtype=np.float64)
    ep = np.array([e.p for e in estimates], dtype=np.float64).reshape(-1, 3)
    inside = (et >= ts[0]) & (et <= ts[-1])
    if not inside.any():
        raise NoOverlap("estimate and ground-truth time ranges are disjoint")
    et, ep = et[inside], ep[inside]
    truth = interpolate_many(gt, et)
    mae = np.mean(np.abs(ep - truth), axis=0)
    lo, hi = et.min(), et.max()
    window = (ts >= lo) & (ts <= hi)
    span = np.vstack([pos[window], interpolate_many(gt, [lo, hi])])
    extent = span.max(axis=0) - span.min(axis=0)
    pct = tuple(float(m / e) if e > 0 else None for m, e in zip(mae, extent))
    rate = correct_rate([e.timestamp for e in estimates], gt, frame_period,
                        modes=[getattr(e, "mode", None) for e in estimates])
    return EvalReport(mae=tuple(float(m) for m in mae), percentage=pct,
                      extent=tuple(float(e) for e in extent), correct_rate=rate,
                      n_compared=int(et.size))


def throughput(frames: int, wall_time: float) -> float:
    """Frames per second."""
    if not wall_time > 0:
        raise ValueError("wall_time must be positive")
    return frames / wall_time


def write_report(path, report: EvalReport) -> None:
    Path(path).write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")


def plot_axes(out_dir, estimates, gt: Sequence[GroundTruthSample]) -> list[Path]:
    """One SVG per axis with the estimate and ground-truth curves over time."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ts, pos = _gt_arrays(gt)
    et = np.array([e.timestamp for e in estimates], dtype=np.float64)
    ep = np.array([e.p for e in estimates], dtype=np.float64).reshape(-1, 3)
    paths = []
    with plt.rc_context({"svg.hashsalt": "uavtrack", "svg.fonttype": "none"}):
        for k, axis in enumerate(AXES):
            fig, ax = plt.subplots(figsize=(8, 3))
            ax.plot(ts, pos[:, k], color="tab:red", label="ground truth")
            ax.plot(et, ep[:, k], color="tab:blue", lw=0.8, label="estimate")
            ax.set_xlabel("time (s)")
            ax.set_ylabel(f"{axis.upper()} (mm)")
            ax.legend(loc="upper right")
            fig.tight_layout()
            p = out_dir / f"{axis}.svg"
            fig.savefig(p, format="svg", metadata={"Date": None})
            plt.close(fig)
            paths.append(p)
    return paths
