import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uavtrack.errors import NoOverlap, OutOfRange
from uavtrack.estimator import SensorMode, WorldState
from uavtrack.evaluation import (correct_rate, evaluate, interpolate_gt, plot_axes, throughput,
                                 write_report)
from uavtrack.sensor_io import GroundTruthSample as G


def ws(t, p):
    return WorldState(t, tuple(p), (0.0, 0.0, 0.0), SensorMode.MONO)


def two_point(a, b, t):
    w = (t - a.timestamp) / (b.timestamp - a.timestamp)
    return tuple(pa + w * (pb - pa) for pa, pb in zip(a.position, b.position))


def test_interpolate_examples():
    gt = [G(0.0, 0, 0, 0), G(2.0, 2, 0, 0)]
    assert interpolate_gt(gt, 1.0) == (1.0, 0.0, 0.0)
    assert interpolate_gt(gt, 2.0) == (2.0, 0.0, 0.0)
    with pytest.raises(OutOfRange):
        interpolate_gt(gt, 2.5)


def test_interpolate_matches_segment_oracle():
    rng = np.random.default_rng(8)
    ts = np.cumsum(rng.uniform(0.01, 0.5, 40))
    gt = [G(float(t), *rng.normal(0, 1000, 3)) for t in ts]
    for t in rng.uniform(ts[0], ts[-1], 100):
        i = int(np.searchsorted(ts, t, side="right")) - 1
        expect = gt[i].position if ts[i] == t else two_point(gt[i], gt[i + 1], t)
        assert np.allclose(interpolate_gt(gt, t), expect, rtol=0, atol=1e-9)


def circle_gt(n=201, T=2.0):
    return [G(T * k / (n - 1), 1000 * math.cos(math.pi * k / (n - 1)), 0.0, 500 * math.sin(math.pi * k / (n - 1)))
            for k in range(n)]


def test_identical_estimates_score_zero():
    gt = circle_gt()
    rep = evaluate([ws(s.timestamp, s.position) for s in gt], gt)
    assert rep.mae == (0.0, 0.0, 0.0)
    assert rep.percentage[0] == 0.0 and rep.percentage[2] == 0.0
    assert rep.percentage[1] is None  # y never moves
    assert rep.correct_rate == 1.0


def test_disjoint_ranges():
    gt = circle_gt()
    with pytest.raises(NoOverlap):
        evaluate([ws(5.0, (0, 0, 0))], gt)


def test_paper_ratio_row():
    gt = [G(0.0, 0, 0, 0), G(1.0, 2198.0, 0, 0)]
    est = [ws(t, (2198.0 * t + 112.1, 0, 0)) for t in (0.0, 0.25, 0.5, 0.75, 1.0)]
    rep = evaluate(est, gt)
    assert rep.mae[0] == pytest.approx(112.1, rel=1e-12)
    assert round(100 * rep.percentage[0], 1) == 5.1


def test_correct_rate_counts_visible_frames():
    gt = [G(k / 100, 0, 0, 0, True) for k in range(100)]
    est = [k / 100 for k in range(100) if k % 25 not in (3, 7)]
    assert len(est) == 92
    assert correct_rate(est, gt, frame_period=0.01) == pytest.approx(0.92)
    # invisible samples are not counted
    gt2 = gt + [G(1.0 + k / 100, 0, 0, 0, False) for k in range(1, 50)]
    assert correct_rate(est, gt2, frame_period=0.01) == pytest.approx(0.92)


def test_throughput_examples():
    assert throughput(1020, 60.0) == 17.0
    assert throughput(8160, 60.0) == 136.0
    assert throughput(0, 1.0) == 0.0
    with pytest.raises(ValueError):
        throughput(5, 0.0)


est_noise = st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50)),
                     min_size=21, max_size=21)


@settings(max_examples=40, deadline=None)
@given(est_noise, st.floats(-1e3, 1e3))
def test_time_shift_invariance(noise, shift):
    gt = circle_gt()
    est = [ws(0.1 * k, np.add(interpolate_gt(gt, 0.1 * k), e)) for k, e in enumerate(noise)]
    a = evaluate(est, gt)
    gs = [G(s.timestamp + shift, *s.position, s.visible) for s in gt]
    es = [ws(e.timestamp + shift, e.p) for e in est]
    b = evaluate(es, gs)
    assert np.allclose(a.mae, b.mae, rtol=1e-9, atol=1e-9)
    assert np.allclose(a.extent, b.extent, rtol=1e-9, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(est_noise, st.floats(-500, 500), st.integers(0, 2))
def test_constant_offset_bounds_mae(noise, c, axis):
    gt = circle_gt()
    truth = [interpolate_gt(gt, 0.1 * k) for k in range(21)]
    est = [ws(0.1 * k, np.add(p, e)) for k, (p, e) in enumerate(zip(truth, noise))]
    off = np.zeros(3)
    off[axis] = c
    moved = [ws(e.timestamp, np.add(e.p, off)) for e in est]
    a, b = evaluate(est, gt), evaluate(moved, gt)
    assert b.mae[axis] <= a.mae[axis] + abs(c) + 1e-9
    exact = evaluate([ws(0.1 * k, np.add(p, off)) for k, p in enumerate(truth)], gt)
    assert exact.mae[axis] == pytest.approx(abs(c), rel=1e-9, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(est_noise)
def test_percentage_times_extent_is_mae(noise):
    gt = circle_gt()
    est = [ws(0.1 * k, np.add(interpolate_gt(gt, 0.1 * k), e)) for k, e in enumerate(noise)]
    rep = evaluate(est, gt)
    for m, p, e in zip(rep.mae, rep.percentage, rep.extent):
        if p is not None:
            assert p * e == pytest.approx(m, rel=1e-9)


def test_extent_is_over_evaluated_window():
    gt = [G(k / 10, k * 10.0, 0, 0) for k in range(101)]
    rep = evaluate([ws(2.0, (200, 0, 0)), ws(3.0, (300, 0, 0))], gt)
    assert rep.extent[0] == 100.0


def test_report_outputs(tmp_path):
    gt = circle_gt()
    est = [ws(s.timestamp, np.add(s.position, 1.0)) for s in gt[::3]]
    rep = evaluate(est, gt)
    write_report(tmp_path / "r.json", rep)
    assert (tmp_path / "r.json").read_text().startswith("{")
    table = rep.table()
    assert "Mean Absolute Error (mm)" in table and "Percentage Error" in table
    assert "-" in table.splitlines()[2]  # undefined y percentage
    paths = plot_axes(tmp_path / "plots", est, gt)
    assert [p.name for p in paths] == ["x.svg", "y.svg", "z.svg"]
    first = [p.read_bytes() for p in paths]
    plot_axes(tmp_path / "plots", est, gt)
    assert [p.read_bytes() for p in paths] == first


def test_correct_rate_uses_each_branch_rate():
    # 60 Hz mono estimates for the first second, 30 Hz thermal for the next; GT at 100 Hz
    gt = [G(k / 100, 0, 0, 0, True) for k in range(200)]
    mono = [k / 60 for k in range(60)]
    thermal = [1 + k / 30 for k in range(31)]
    modes = [SensorMode.MONO] * 60 + [SensorMode.THERMAL] * 31
    assert correct_rate(mono + thermal, gt, modes=modes) == 1.0
    # a single median period would call half the thermal second missed
    assert correct_rate(mono + thermal, gt) < 0.8
