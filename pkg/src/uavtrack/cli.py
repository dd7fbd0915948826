"""Command-line entry point: ``uavtrack {synth,track,eval,calibrate,config}``.

Exit codes: 0 ok, 1 other error, 2 invalid scenario spec, 3 missing
calibration, 4 no estimate/ground-truth overlap, 5 no LIDAR/box co-occurrence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import PipelineConfig, dump_defaults, load_config
from .errors import (InvalidSpec, MissingCalibration, NoCoOccurrence, NoOverlap, StageError,
                     UavTrackError)
from .estimator import (PipelineStats, SensorMode, calibrate_session, read_calibration, read_trajectory,
                        run_pipeline, write_calibration, write_trajectory)
from .evaluation import evaluate, plot_axes, write_report
from .lidar import ANGLE_CONVENTIONS, segment_scan
from .sensor_io import load_session, read_groundtruth
from .synth import ScenarioSpec, gen_session

log = logging.getLogger("uavtrack")

EXIT_OK, EXIT_OTHER, EXIT_SPEC, EXIT_CALIB, EXIT_EVAL, EXIT_COOCCUR = 0, 1, 2, 3, 4, 5


def _fail(code: int, msg: str) -> int:
    print(f"uavtrack: error: {msg}", file=sys.stderr)
    return code


def _pipeline_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.bypass_kf:
        cfg = dataclasses.replace(cfg, bypass_kf=True)
    if args.angle_convention:
        cfg = dataclasses.replace(cfg, lidar=dataclasses.replace(cfg.lidar, angle_convention=args.angle_convention))
    return cfg


def cmd_synth(args) -> int:
    try:
        obj = json.loads(Path(args.spec).read_text())
    except FileNotFoundError:
        return _fail(EXIT_SPEC, f"{args.spec}: no such file")
    except json.JSONDecodeError as exc:
        return _fail(EXIT_SPEC, f"{args.spec}: invalid JSON: {exc.msg}")
    if not isinstance(obj, dict):
        return _fail(EXIT_SPEC, f"{args.spec}: spec must be a JSON object")
    if args.seed is not None:
        obj["seed"] = args.seed
    if args.angle_convention:
        obj["angle_convention"] = args.angle_convention
    spec = ScenarioSpec.from_json(obj)
    manifest = gen_session(spec, args.out_dir)
    log.info("wrote %s", manifest)
    return EXIT_OK


def cmd_track(args) -> int:
    cfg = _pipeline_config(args)
    out = args.out_csv or cfg.output.trajectory_csv
    if not out:
        return _fail(EXIT_OTHER, "no output path (pass OUT_CSV or set output.trajectory_csv)")
    calib_path = args.calibration or cfg.calibration
    session = load_session(args.manifest)
    calib = read_calibration(calib_path) if calib_path else {}
    stats = PipelineStats()
    frames = []
    states = run_pipeline(session, calib, cfg, stats,
                          on_frame=frames.append if args.tracks_out else None)
    write_trajectory(out, states)
    if args.tracks_out:
        with open(args.tracks_out, "w") as f:
            for obs in frames:
                if obs.track is not None:
                    f.write(json.dumps(obs.track.to_json(obs.t)) + "\n")
    if args.segments_out:
        with open(args.segments_out, "w") as f:
            for scan in session.lidar:
                for seg in segment_scan(scan, cfg.lidar.zones, cfg.lidar.gap_mm, cfg.lidar.min_points,
                                        cfg.lidar.angle_convention):
                    f.write(json.dumps(seg.to_json(scan.timestamp)) + "\n")
    log.info("%d frames (%d mono, %d thermal), %d states, %d recalibrations", stats.frames,
             stats.routed[SensorMode.MONO], stats.routed[SensorMode.THERMAL],
             stats.emitted, stats.recalibrations)
    return EXIT_OK


def cmd_eval(args) -> int:
    estimates = read_trajectory(args.trajectory_csv)
    gt = read_groundtruth(args.gt_csv)
    report = evaluate(estimates, gt)
    write_report(args.out_json, report)
    table = report.table()
    Path(args.out_json).with_suffix(".txt").write_text(table)
    print(table, end="")
    if args.plot:
        plot_dir = Path(args.plot_dir) if args.plot_dir else Path(args.out_json).parent / "plots"
        plot_axes(plot_dir, estimates, gt)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _pipeline_config(args)
    session = load_session(args.manifest)
    records = calibrate_session(session, cfg)
    write_calibration(args.out_json, records)
    return EXIT_OK


def cmd_config(args) -> int:
    if args.dump_defaults:
        print(dump_defaults(), end="")
        return EXIT_OK
    path = args.check or args.config
    if not path:
        return _fail(EXIT_OTHER, "config: pass --dump-defaults or --check PATH")
    load_config(path)
    print(f"{path}: ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="pipeline config JSON")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the scenario seed")
    common.add_argument("--plot", action="store_true", default=argparse.SUPPRESS,
                        help="eval: also write per-axis SVG plots")
    common.add_argument("--bypass-kf", action="store_true", default=argparse.SUPPRESS,
                        help="use raw detection centers instead of the Kalman track")
    common.add_argument("--angle-convention", choices=ANGLE_CONVENTIONS, default=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="uavtrack", parents=[common], description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic session")
    s.add_argument("spec", help="scenario JSON")
    s.add_argument("out_dir")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("track", parents=[common], help="run the pipeline, write a trajectory CSV")
    s.add_argument("manifest")
    s.add_argument("out_csv", nargs="?")
    s.add_argument("--calibration", help="calibration JSON (overrides config.calibration)")
    s.add_argument("--tracks-out", help="write per-frame track states as JSON lines")
    s.add_argument("--segments-out", help="write LIDAR segments as JSON lines")
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("eval", parents=[common], help="evaluate a trajectory against ground truth")
    s.add_argument("trajectory_csv")
    s.add_argument("gt_csv")
    s.add_argument("out_json")
    s.add_argument("--plot-dir", help="directory for SVG plots (default: <out_json dir>/plots)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("calibrate", parents=[common], help="derive calibration from a LIDAR crossing")
    s.add_argument("manifest")
    s.add_argument("out_json")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("config", parents=[common], help="print or validate pipeline config")
    s.add_argument("--dump-defaults", action="store_true")
    s.add_argument("--check", metavar="PATH")
    s.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("plot", False), ("bypass_kf", False),
                          ("angle_convention", None), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except InvalidSpec as exc:
        return _fail(EXIT_SPEC, f"invalid scenario: {exc}")
    except MissingCalibration as exc:
        return _fail(EXIT_CALIB, str(exc))
    except NoOverlap as exc:
        return _fail(EXIT_EVAL, str(exc))
    except NoCoOccurrence as exc:
        return _fail(EXIT_COOCCUR, str(exc))
    except StageError as exc:
        if isinstance(exc.cause, MissingCalibration):
            return _fail(EXIT_CALIB, str(exc))
        return _fail(EXIT_OTHER, str(exc))
    except (UavTrackError, OSError) as exc:
        return _fail(EXIT_OTHER, str(exc))


if __name__ == "__main__":
    sys.exit(main())
