import json

import pytest

from uavtrack.cli import main
from uavtrack.estimator import read_trajectory
from uavtrack.sensor_io import GroundTruthSample, load_session, write_groundtruth


def write_spec(path, **kw):
    path.write_text(json.dumps({"duration": 12.0, "seed": 5, **kw}))
    return path


@pytest.fixture(scope="module")
def session(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", str(write_spec(root / "spec.json")), str(root / "s")]) == 0
    assert main(["--config", str(root / "s" / "config.json"), "calibrate",
                 str(root / "s" / "manifest.json"), str(root / "calib.json")]) == 0
    return root


def test_synth_exit_codes(tmp_path):
    assert main(["synth", str(write_spec(tmp_path / "ok.json", duration=0.5)), str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "manifest.json").is_file()
    assert main(["synth", str(write_spec(tmp_path / "bad.json", duration=0)), str(tmp_path / "b")]) == 2
    assert not (tmp_path / "b").exists()
    assert main(["synth", str(tmp_path / "nope.json"), str(tmp_path / "c")]) == 2


def test_seed_flag_overrides_spec(tmp_path):
    spec = str(write_spec(tmp_path / "s.json", duration=0.5, det_jitter_px=1.0))
    main(["synth", spec, str(tmp_path / "a"), "--seed", "1"])
    main(["--seed", "2", "synth", spec, str(tmp_path / "b")])
    a = json.loads((tmp_path / "a" / "scenario.json").read_text())
    b = json.loads((tmp_path / "b" / "scenario.json").read_text())
    assert (a["seed"], b["seed"]) == (1, 2)


def test_track_writes_most_frames(session, capsys):
    s = session / "s"
    out = session / "traj.csv"
    rc = main(["track", str(s / "manifest.json"), str(out), "--config", str(s / "config.json"),
               "--calibration", str(session / "calib.json"), "--tracks-out", str(session / "tracks.jsonl"),
               "--segments-out", str(session / "segs.jsonl")])
    assert rc == 0
    rows = read_trajectory(out)
    frames = len(load_session(s / "manifest.json").detections)
    assert len(rows) >= 0.95 * frames
    assert (session / "tracks.jsonl").read_text().count("\n") >= len(rows)
    assert '"D"' in (session / "segs.jsonl").read_text()


def test_track_without_calibration(session, capsys):
    s = session / "s"
    rc = main(["track", str(s / "manifest.json"), str(session / "x.csv"), "--config", str(s / "config.json")])
    assert rc == 3
    assert "calibration" in capsys.readouterr().err


def test_bad_config_never_partially_executes(session, tmp_path, capsys):
    (tmp_path / "cfg.json").write_text(json.dumps({"tracker": {"gate_px": -1}}))
    rc = main(["track", str(session / "s" / "manifest.json"), str(tmp_path / "t.csv"),
               "--config", str(tmp_path / "cfg.json"), "--calibration", str(session / "calib.json")])
    assert rc == 1
    assert "tracker.gate_px" in capsys.readouterr().err
    assert not (tmp_path / "t.csv").exists()


def test_bypass_kf_flag(session):
    s = session / "s"
    out = session / "raw.csv"
    assert main(["--bypass-kf", "track", str(s / "manifest.json"), str(out), "--config", str(s / "config.json"),
                 "--calibration", str(session / "calib.json")]) == 0
    # without the filter every detection frame yields a state
    assert len(read_trajectory(out)) == len(load_session(s / "manifest.json").detections)


def test_eval_outputs(session, tmp_path, capsys):
    s = session / "s"
    traj = session / "traj.csv"
    if not traj.exists():
        main(["track", str(s / "manifest.json"), str(traj), "--config", str(s / "config.json"),
              "--calibration", str(session / "calib.json")])
    assert main(["eval", str(traj), str(s / "groundtruth.csv"), str(tmp_path / "r.json"), "--plot"]) == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert max(rep["percentage"]) <= 0.02
    assert (tmp_path / "r.txt").read_text() in capsys.readouterr().out
    assert sorted(p.name for p in (tmp_path / "plots").iterdir()) == ["x.svg", "y.svg", "z.svg"]


def test_eval_identity_and_disjoint(tmp_path):
    gt = [GroundTruthSample(k / 10, k * 10.0, 5.0, -k * 1.0) for k in range(20)]
    write_groundtruth(tmp_path / "gt.csv", gt)
    (tmp_path / "t.csv").write_text("timestamp,x,y,z,vx,vy,vz,mode\n" + "".join(
        f"{s.timestamp!r},{s.x!r},{s.y!r},{s.z!r},0,0,0,mono\n" for s in gt))
    assert main(["eval", str(tmp_path / "t.csv"), str(tmp_path / "gt.csv"), str(tmp_path / "r.json")]) == 0
    assert json.loads((tmp_path / "r.json").read_text())["mae"] == [0.0, 0.0, 0.0]
    (tmp_path / "late.csv").write_text("timestamp,x,y,z,vx,vy,vz,mode\n9.0,0,0,0,0,0,0,mono\n")
    assert main(["eval", str(tmp_path / "late.csv"), str(tmp_path / "gt.csv"), str(tmp_path / "r2.json")]) == 4


def test_eval_paper_ratio_fixture(tmp_path):
    write_groundtruth(tmp_path / "gt.csv", [GroundTruthSample(0.0, 0, 0, 0), GroundTruthSample(1.0, 2198.0, 0, 0)])
    (tmp_path / "t.csv").write_text("timestamp,x,y,z,vx,vy,vz,mode\n" + "".join(
        f"{t},{2198.0 * t - 112.1},0,0,0,0,0,mono\n" for t in (0.0, 0.5, 1.0)))
    assert main(["eval", str(tmp_path / "t.csv"), str(tmp_path / "gt.csv"), str(tmp_path / "r.json")]) == 0
    pct = json.loads((tmp_path / "r.json").read_text())["percentage"][0]
    assert abs(100 * pct - 5.1) <= 0.05


def test_calibrate_is_repeatable(session, tmp_path):
    s = session / "s"
    assert main(["calibrate", str(s / "manifest.json"), str(tmp_path / "c.json"),
                 "--config", str(s / "config.json")]) == 0
    assert (tmp_path / "c.json").read_bytes() == (session / "calib.json").read_bytes()


def test_calibrate_without_crossing(tmp_path):
    spec = write_spec(tmp_path / "s.json", kind="hover", center=[0, 3000, 2500], duration=1.0)
    main(["synth", str(spec), str(tmp_path / "h")])
    assert main(["calibrate", str(tmp_path / "h" / "manifest.json"), str(tmp_path / "c.json"),
                 "--config", str(tmp_path / "h" / "config.json")]) == 5


def test_config_subcommand(tmp_path, capsys):
    assert main(["config", "--dump-defaults"]) == 0
    dumped = capsys.readouterr().out
    (tmp_path / "d.json").write_text(dumped)
    assert main(["config", "--check", str(tmp_path / "d.json")]) == 0
    (tmp_path / "bad.json").write_text('{"lidar": {"points_per_degree": 0}}')
    assert main(["config", "--check", str(tmp_path / "bad.json")]) == 1
    assert "lidar.points_per_degree" in capsys.readouterr().err
