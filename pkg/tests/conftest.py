from __future__ import annotations

import pytest

from uavtrack.sensor_io import DetectionRecord

_CRITERIA: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(name, passed, detail)``."""
    def record(name: str, passed: bool, detail: str = "") -> bool:
        _CRITERIA.append((name, bool(passed), detail))
        print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _CRITERIA:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


def make_det(t=0.0, cx=0.0, cy=0.0, w=70.0, h=30.0, score=0.9, iso=3200, frame_id=0,
             frame_width=1920, frame_height=1080) -> DetectionRecord:
    return DetectionRecord(t, frame_id, cx, cy, w, h, score, iso, frame_width, frame_height)


def build_session(out_dir, **spec_kw):
    """Generate a synthetic session; return (session, pipeline config, spec)."""
    from uavtrack.config import load_config
    from uavtrack.sensor_io import load_session
    from uavtrack.synth import ScenarioSpec, gen_session

    spec = ScenarioSpec(**spec_kw)
    manifest = gen_session(spec, out_dir)
    return load_session(manifest), load_config(manifest.parent / "config.json"), spec
