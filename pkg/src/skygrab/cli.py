"""Command-line interface: scenario runs, Monte Carlo batches, config
validation, and plot emission.

Exit codes: 0 on success (for `run`, a captured mission), 1 on usage,
configuration, or input errors, 2 when the mission ends in timeout or
an invalid state. Outputs are a pure function of the arguments and
input files; nothing depends on the clock or the environment.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .engine import monte_carlo, run_scenario
from .logs import SimLog, coerce_jsonable
from .plotting import PLOT_KINDS, MissingStreamError, render_plot

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_MISSION_FAILED = 2


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_USAGE


def _load(path: str):
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{path}: no such config file")
    return load_config(p)


def _write_json(path: Path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(coerce_jsonable(obj), fh, sort_keys=True, indent=2)
        fh.write("\n")


def _export_timeseries(log: SimLog, path: Path):
    """Control-rate CSV: time, truth positions, per-drone pose, command,
    phase, and the latest filtered ball pixel/range."""
    drones = [d["id"] for d in log.header["config"]["drones"]]
    header = ["t", "target_x", "target_y", "target_z", "ball_x", "ball_y", "ball_z"]
    for d in drones:
        header += [
            f"{d}_x", f"{d}_y", f"{d}_z", f"{d}_yaw", f"{d}_phase",
            f"{d}_cmd_vx", f"{d}_cmd_vy", f"{d}_cmd_vz", f"{d}_cmd_yaw_rate",
            f"{d}_ball_px_x", f"{d}_ball_px_y", f"{d}_ball_range",
        ]
    commands: dict = {}
    for r in log.iter_kind("command"):
        commands.setdefault(r["t"], {})[r["drone"]] = r
    latest_track: dict = {}
    vision_by_t: dict = {}
    for r in log.iter_kind("vision"):
        vision_by_t.setdefault(r["t"], {})[r["drone"]] = r

    rows = []
    vision_times = sorted(vision_by_t)
    vi = 0
    for s in log.iter_kind("state"):
        t = s["t"]
        while vi < len(vision_times) and vision_times[vi] <= t:
            for d, r in vision_by_t[vision_times[vi]].items():
                latest_track[d] = r["tracks"]["ball"]
            vi += 1
        row = [t, *s["target"]["p"], *s["ball"]["p"]]
        for d in drones:
            ds = s["drones"][d]
            cmd = commands.get(t, {}).get(d)
            tb = latest_track.get(d)
            row += [*ds["p"], ds["yaw"]]
            row += [cmd["phase"]] if cmd else [""]
            row += (
                [cmd["cmd"]["vx"], cmd["cmd"]["vy"], cmd["cmd"]["vz"], cmd["cmd"]["yaw_rate"]]
                if cmd else ["", "", "", ""]
            )
            if tb and tb["status"] != "uninitialized":
                row += [tb["x"], tb["y"], tb["r"]]
            else:
                row += ["", "", ""]
        rows.append(row)

    import csv
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def cmd_run(args) -> int:
    try:
        cfg = _load(args.config)
    except ConfigError as e:
        return _fail(str(e))
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    out = Path(args.out) / f"{Path(args.config).stem}-seed{cfg.seed}"
    out.mkdir(parents=True, exist_ok=True)

    log = run_scenario(cfg)
    log.write(out / "log.jsonl")
    verdict = log.verdict_record
    _write_json(out / "summary.json", {
        "seed": cfg.seed,
        "verdict": verdict["verdict"],
        "t_capture": verdict["t_capture"],
        "t_end": verdict["t_end"],
        "failure": verdict["failure"],
        "counters": verdict["counters"],
    })
    _export_timeseries(log, out / "timeseries.csv")
    print(f"verdict: {verdict['verdict']}  (log in {out})")
    return EXIT_OK if verdict["verdict"] == "captured" else EXIT_MISSION_FAILED


def cmd_montecarlo(args) -> int:
    try:
        cfg = _load(args.config)
    except ConfigError as e:
        return _fail(str(e))
    if args.runs < 1:
        return _fail("--runs must be >= 1")
    seed_base = args.seed_base if args.seed_base is not None else cfg.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = monte_carlo(cfg, args.runs, seed_base, n_jobs=args.jobs)

    import csv
    with open(out / "verdicts.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "verdict", "t_capture", "failure"])
        for r in summary["runs"]:
            w.writerow([r["seed"], r["verdict"],
                        "" if r["t_capture"] is None else r["t_capture"],
                        r["failure"] or ""])
    _write_json(out / "mc_summary.json", summary)
    print(
        f"runs: {summary['n_runs']}  captured: {summary['captured']}  "
        f"success_rate: {summary['success_rate']:.3f}"
    )
    return EXIT_OK


def cmd_plot(args) -> int:
    path = Path(args.log)
    if not path.exists():
        return _fail(f"{args.log}: no such log file")
    try:
        log = SimLog.read(path)
    except (ValueError, json.JSONDecodeError) as e:
        return _fail(str(e))
    try:
        svg, sidecar = render_plot(args.kind, log, args.out)
    except MissingStreamError as e:
        return _fail(str(e))
    except ValueError as e:
        return _fail(str(e))
    print(f"wrote {svg} and {sidecar}")
    return EXIT_OK


def cmd_check(args) -> int:
    try:
        cfg = _load(args.config)
    except ConfigError as e:
        return _fail(str(e))
    roles = ", ".join(f"{d.id}({d.role})" for d in cfg.drones)
    print(f"ok: {args.config}  drones: {roles}  duration: {cfg.duration}s  seed: {cfg.seed}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="skygrab",
        description="Deterministic multi-UAV aerial ball-capture simulation",
    )
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario and write its artifacts")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--out", default="runs")
    run.set_defaults(func=cmd_run)

    mc = sub.add_parser("mc", help="run a seeded Monte Carlo batch")
    mc.add_argument("--config", required=True)
    mc.add_argument("--runs", type=int, required=True)
    mc.add_argument("--seed-base", type=int, default=None)
    mc.add_argument("--out", default="runs/mc")
    mc.add_argument("--jobs", type=int, default=1)
    mc.set_defaults(func=cmd_montecarlo)

    plot = sub.add_parser("plot", help="emit a figure (SVG + CSV sidecar) from a run log")
    plot.add_argument("--kind", required=True, choices=sorted(PLOT_KINDS))
    plot.add_argument("--log", required=True)
    plot.add_argument("--out", required=True)
    plot.set_defaults(func=cmd_plot)

    check = sub.add_parser("check", help="validate a scenario config")
    check.add_argument("--config", required=True)
    check.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
