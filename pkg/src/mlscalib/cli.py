"""Command-line entry point: ``mlscalib simulate | georef | score | calibrate``.

Settings resolve as flags > ``MLSCALIB_*`` environment > ``--config`` file >
built-in defaults. Exit codes: 0 ok, 2 I/O, 3 trajectory coverage,
4 degenerate input, 5 invalid arguments.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import io as mio
from .calib import CoverageError, GridSpec, WindowTooLongError, calibrate
from .geom import Rotation3, chord_displacement
from .georef import MountConfig, ReturnStream, georeference_stream
from .scatter import DegenerateInputError, average_scatter
from .simscene import (
    GroundTruth,
    Patch,
    SceneModel,
    closed_loop,
    default_scanner,
    simulate_chunks,
    standard_scenario,
    straight_line,
    zigzag,
)


EXIT_OK, EXIT_IO, EXIT_COVERAGE, EXIT_DEGENERATE, EXIT_ARGS = 0, 2, 3, 4, 5

RETURNS_CSV = "returns.csv"
RETURNS_BIN = "returns.bin"
TRAJECTORY_CSV = "trajectory.csv"
TRUTH_JSON = "ground_truth.json"
CALIB_JSON = "calibration.json"
SCORE_TABLE_CSV = "score_table.csv"
REPORT_TXT = "report.txt"
SCATTER_JSON = "scatter.json"

ENV_PREFIX = "MLSCALIB_"
ENV_KEYS = ("seed", "threads", "no_timestamp")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    returns: str | None = None
    trajectory: str | None = None
    out: str = "."
    cloud: str | None = None
    truth: str | None = None
    lever_arm: tuple | None = None
    boresight: tuple | None = None
    rc: tuple = (0.0, 0.0, 0.0)
    grid_halfwidth: float = 1.5
    grid_step: float = 0.1
    grid_levels: int = 3
    grid_shrink: float = 0.2
    grid_refine_steps: int = 6
    grid_center: tuple = (0.0, 0.0, 0.0)
    N: int = 8
    stride: int = 1
    calib_stride: int = 2
    return_stride: int = 1
    max_radius: float = 5.0
    seed: int = 0
    threads: int = 1
    scenario: str = "standard"
    scene: str | None = None
    maneuver: str = "zigzag"
    duration: float = 20.0
    azimuth_step: float = 0.18
    noise: float = 0.02
    injected: tuple | None = None
    returns_format: str = "csv"
    cloud_format: str | None = None
    no_timestamp: bool = False
    allow_long: bool = False
    max_window: float = 20.0
    t0: float = 0.0
    drop_uncovered: bool = False
    lambda_out: str | None = None

    def validate(self):
        if self.N < 2:
            raise UsageError("N must be >= 2")
        for name in ("stride", "calib_stride", "return_stride", "threads", "grid_levels", "grid_refine_steps"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1")
        if self.grid_step <= 0 or self.grid_halfwidth < 0:
            raise UsageError("grid step must be > 0 and half-width >= 0")
        if not (0 < self.grid_shrink < 1):
            raise UsageError("grid shrink must lie in (0, 1)")
        if self.azimuth_step <= 0 or self.noise < 0 or self.duration <= 0:
            raise UsageError("azimuth step and duration must be > 0, noise >= 0")
        if self.returns_format not in ("csv", "bin"):
            raise UsageError("returns format must be csv or bin")
        if self.cloud_format not in (None, "ply", "ply-ascii", "csv"):
            raise UsageError("cloud format must be ply, ply-ascii or csv")
        if self.scenario not in ("standard", "custom"):
            raise UsageError("scenario must be standard or custom")
        if self.maneuver not in ("zigzag", "straight", "loop"):
            raise UsageError("maneuver must be zigzag, straight or loop")

    def grid(self) -> GridSpec:
        hw = self.grid_halfwidth
        return GridSpec(
            halfwidth=hw,
            step=self.grid_step,
            levels=self.grid_levels if hw > 0 else 1,
            shrink=self.grid_shrink,
            refine_halfwidth_steps=self.grid_refine_steps,
            center=tuple(self.grid_center),
        )

    def mount(self, with_correction: bool = True) -> MountConfig:
        """Nominal mount from the lever arm and boresight settings (zero if unset)."""
        return MountConfig(
            np.array(self.lever_arm or (0.0, 0.0, 0.0), dtype=float),
            Rotation3.from_euler(*(self.boresight or (0.0, 0.0, 0.0))),
            Rotation3.from_euler(*self.rc) if with_correction else Rotation3.identity(),
        )


_TRIPLES = {"lever_arm", "boresight", "rc", "grid_center", "injected"}
_BOOLS = {"no_timestamp", "allow_long", "drop_uncovered"}


def _coerce(name: str, value):
    if value is None or not isinstance(value, str):
        return value
    try:
        if name in _TRIPLES:
            parts = [float(x) for x in value.replace(" ", "").split(",")]
            if len(parts) != 3:
                raise ValueError
            return tuple(parts)
        if name in _BOOLS:
            if value.strip().lower() in ("1", "true", "yes", "on"):
                return True
            if value.strip().lower() in ("0", "false", "no", "off", ""):
                return False
            raise ValueError
        ftype = {f.name: f.type for f in fields(RunConfig)}[name]
        if ftype == "int":
            return int(value)
        if ftype == "float":
            return float(value)
        return value
    except (ValueError, KeyError):
        raise UsageError(f"bad value for {name}: {value!r}") from None


def read_config_file(path) -> dict:
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def format_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(repr(float(x)) for x in v)
        lines.append(f"{f.name} = {'' if v is None else v}")
    return "\n".join(lines) + "\n"


def resolve_config(args: argparse.Namespace, environ=None) -> RunConfig:
    environ = os.environ if environ is None else environ
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for key in ENV_KEYS:
        env = environ.get(ENV_PREFIX + key.upper())
        if env is not None:
            values[key] = _coerce(key, env)
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None and v is not False:
            values[f.name] = _coerce(f.name, v)
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ARGS, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--config", help="key = value settings file")
    p.add_argument("--print-config", action="store_true", help="print resolved settings and exit")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="cap on the candidate work pool")
    p.add_argument("--no-timestamp", action="store_true", default=None)
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def _inputs(p):
    p.add_argument("--returns", help="returns file (CSV or MLSR0001 binary)")
    p.add_argument("--trajectory", help="trajectory CSV")
    p.add_argument("--truth", help="ground-truth JSON; supplies lever arm and boresight if not set")
    p.add_argument("--lever-arm", dest="lever_arm", help="x,y,z in meters")
    p.add_argument("--boresight", help="nominal yaw,pitch,roll in degrees")
    p.add_argument("--t0", type=float, help="scan epoch in seconds")


def _scatter(p):
    p.add_argument("-N", "--neighbors", dest="N", type=int)
    p.add_argument("--max-radius", dest="max_radius", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mlscalib", description="LiDAR boresight calibration toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write a synthetic returns/trajectory/ground-truth bundle")
    _common(p)
    p.add_argument("--scenario", choices=["standard", "custom"])
    p.add_argument("--scene", help="custom scene JSON: list of {id, corner, edge1, edge2}")
    p.add_argument("--maneuver", choices=["zigzag", "straight", "loop"])
    p.add_argument("--duration", type=float)
    p.add_argument("--azimuth-step", dest="azimuth_step", type=float)
    p.add_argument("--noise", type=float, help="range noise sigma in meters")
    p.add_argument("--injected", help="yaw,pitch,roll boresight error; drawn from the seed if omitted")
    p.add_argument("--returns-format", dest="returns_format", choices=["csv", "bin"])
    p.add_argument("--lever-arm", dest="lever_arm", help="custom scenario: true lever arm x,y,z in meters")
    p.add_argument("--boresight", help="custom scenario: true boresight yaw,pitch,roll in degrees")

    p = sub.add_parser("georef", help="georeference returns into a point cloud")
    _common(p)
    _inputs(p)
    p.add_argument("--rc", help="boresight correction yaw,pitch,roll in degrees")
    p.add_argument("--cloud", help="output cloud path (default <out>/cloud.<ext>)")
    p.add_argument("--cloud-format", dest="cloud_format", choices=["ply", "ply-ascii", "csv"])
    p.add_argument("--drop-uncovered", dest="drop_uncovered", action="store_true", default=None)

    p = sub.add_parser("score", help="average local scatter of a cloud")
    _common(p)
    _inputs(p)
    _scatter(p)
    p.add_argument("--rc", help="boresight correction yaw,pitch,roll in degrees")
    p.add_argument("--cloud", help="input cloud (PLY or CSV) instead of returns+trajectory")
    p.add_argument("--stride", type=int, help="evaluate every stride-th point")
    p.add_argument("--lambda-out", dest="lambda_out", help="write per-point local scatter CSV")

    p = sub.add_parser("calibrate", help="grid-search the boresight correction")
    _common(p)
    _inputs(p)
    _scatter(p)
    p.add_argument("--grid-halfwidth", dest="grid_halfwidth", type=float)
    p.add_argument("--grid-step", dest="grid_step", type=float)
    p.add_argument("--grid-levels", dest="grid_levels", type=int)
    p.add_argument("--grid-shrink", dest="grid_shrink", type=float)
    p.add_argument("--grid-refine-steps", dest="grid_refine_steps", type=int)
    p.add_argument("--grid-center", dest="grid_center", help="yaw,pitch,roll")
    p.add_argument("--stride", dest="calib_stride", type=int, help="query subsampling per candidate")
    p.add_argument("--return-stride", dest="return_stride", type=int, help="thin the raw window first")
    p.add_argument("--allow-long", dest="allow_long", action="store_true", default=None)
    p.add_argument("--max-window", dest="max_window", type=float)
    return parser


# -------------------------------------------------------------- commands


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")
    return out


def _require(path, what):
    if not path:
        raise UsageError(f"{what} path is required")
    if not Path(path).exists():
        raise FileNotFoundError(f"{what} file {path} does not exist")
    return path


def _apply_truth_mount(cfg: RunConfig, command: str) -> RunConfig:
    """Fill an unset lever arm or boresight from the ground-truth file."""
    if not cfg.truth or command == "simulate":
        return cfg
    truth = mio.read_truth(_require(cfg.truth, "ground truth"))
    updates = {}
    if cfg.lever_arm is None:
        updates["lever_arm"] = tuple(truth.lever_arm)
    if cfg.boresight is None:
        updates["boresight"] = tuple(truth.boresight)
    return dataclasses.replace(cfg, **updates)


def _load_scene(path) -> SceneModel:
    items = json.loads(Path(_require(path, "scene")).read_text())
    try:
        return SceneModel(tuple(Patch(int(d["id"]), tuple(d["corner"]), tuple(d["edge1"]), tuple(d["edge2"])) for d in items))
    except (KeyError, TypeError) as exc:
        raise UsageError(f"bad scene file {path}: {exc}") from None


def cmd_simulate(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    scanner = default_scanner(range_noise=cfg.noise, azimuth_step=cfg.azimuth_step)
    if cfg.scenario == "standard":
        sc = standard_scenario(cfg.seed, scanner, cfg.noise, cfg.injected)
    else:
        script = {"zigzag": zigzag, "straight": straight_line, "loop": closed_loop}[cfg.maneuver](cfg.duration)
        sc = standard_scenario(cfg.seed, scanner, cfg.noise, cfg.injected, script=script, name="custom")
        sc.duration = cfg.duration
        if cfg.scene:
            sc.scene = _load_scene(cfg.scene)
        if cfg.lever_arm is not None or cfg.boresight is not None:
            sc.true_mount = MountConfig(
                np.array(cfg.lever_arm, dtype=float) if cfg.lever_arm is not None else sc.true_mount.lever_arm,
                Rotation3.from_euler(*cfg.boresight) if cfg.boresight is not None else sc.true_mount.boresight,
            )
    traj = sc.script.trajectory()
    path = out / (RETURNS_BIN if cfg.returns_format == "bin" else RETURNS_CSV)
    writer = mio.write_returns_bin if cfg.returns_format == "bin" else mio.write_returns_csv
    first, n_returns = True, 0
    for part in simulate_chunks(sc.scene, sc.scanner, traj, sc.true_mount, sc.injected_error, sc.noise_seed, sc.duration):
        if first:
            writer(path, part)
            first = False
        else:
            writer(path, part, mode="ab" if cfg.returns_format == "bin" else "a")
        n_returns += len(part)
    if first:
        writer(path, ReturnStream.empty())
    mio.write_trajectory_csv(out / TRAJECTORY_CSV, traj)
    n_firings = int(round(sc.duration * sc.scanner.firing_rate))
    truth = GroundTruth(
        injected_error=sc.injected_error,
        correction_to_recover=sc.injected_error,
        lever_arm=tuple(float(x) for x in sc.true_mount.lever_arm),
        boresight=sc.true_mount.boresight.as_euler(),
        seed=cfg.seed,
        range_noise=sc.scanner.range_noise,
        duration=sc.duration,
        n_firings=n_firings,
        n_rays=n_firings * sc.scanner.n_beams,
        n_returns=n_returns,
        firing_rate=sc.scanner.firing_rate,
        scenario=sc.name,
    )
    mio.write_truth(out / TRUTH_JSON, truth)
    print(f"wrote {n_returns} returns ({truth.n_rays} rays) to {path}")
    print(f"wrote {len(traj)} trajectory samples to {out / TRAJECTORY_CSV}")
    print(f"wrote ground truth to {out / TRUTH_JSON}")
    return EXIT_OK


def _load_window(cfg: RunConfig):
    returns = mio.read_returns(_require(cfg.returns, "returns"))
    traj = mio.read_trajectory_csv(_require(cfg.trajectory, "trajectory"))
    return returns, traj


def _uncovered(returns: ReturnStream, traj) -> list[tuple[float, float]]:
    if len(returns) == 0:
        return []
    a, b = traj.span
    t0, t1 = float(returns.t.min()), float(returns.t.max())
    out = []
    if t0 < a:
        out.append((t0, min(a, t1)))
    if t1 > b:
        out.append((max(b, t0), t1))
    return out


def cmd_georef(cfg: RunConfig) -> int:
    returns, traj = _load_window(cfg)
    out = _outdir(cfg)
    if cfg.cloud:
        path = Path(cfg.cloud)
        fmt = cfg.cloud_format or ("csv" if path.suffix.lower() == ".csv" else "ply")
    else:
        fmt = cfg.cloud_format or "ply"
        path = out / f"cloud.{'csv' if fmt == 'csv' else 'ply'}"
    gaps = _uncovered(returns, traj)
    if gaps and not cfg.drop_uncovered:
        raise CoverageError(
            "trajectory does not cover " + ", ".join(f"[{a:.6f}, {b:.6f}]" for a, b in gaps), gaps
        )
    cloud, stats = georeference_stream(returns, traj, cfg.mount(), t0=cfg.t0)
    if len(returns) == 0:
        print("warning: returns file is empty; writing an empty cloud", file=sys.stderr)
    mio.write_cloud(path, cloud, fmt)
    print(f"returns: {stats.total}  georeferenced: {stats.kept}  dropped (outside trajectory): {stats.dropped}")
    print(f"wrote {len(cloud)} points to {path}")
    return EXIT_OK


def cmd_score(cfg: RunConfig) -> int:
    if cfg.cloud:
        cloud = mio.read_cloud(_require(cfg.cloud, "cloud"))
    else:
        returns, traj = _load_window(cfg)
        cloud, stats = georeference_stream(returns, traj, cfg.mount(), t0=cfg.t0)
        if stats.dropped:
            print(f"dropped {stats.dropped} returns outside the trajectory")
    rep = average_scatter(cloud, cfg.N, cfg.stride, cfg.max_radius)
    out = _outdir(cfg)
    summary = {"S": rep.S, "n_p": rep.n_p, "N": rep.N, "skipped": rep.skipped, "n_points": len(cloud), "stride": cfg.stride}
    (out / SCATTER_JSON).write_text(json.dumps(summary, indent=2) + "\n")
    print(f"S = {rep.S!r} m^2")
    print(f"n_p = {rep.n_p}  N = {rep.N}  skipped = {rep.skipped}  points = {len(cloud)}")
    if cfg.lambda_out:
        with open(cfg.lambda_out, "w") as fh:
            fh.write("index,lambda1\n")
            for i, lam in zip(rep.query_index, rep.lambdas):
                fh.write(f"{i},{'' if np.isnan(lam) else repr(float(lam))}\n")
    return EXIT_OK


def format_report(cfg: RunConfig, result, truth=None) -> str:
    lines = ["boresight calibration report"]
    if not cfg.no_timestamp:
        lines.append(f"generated: {_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}")
    y, p, r = result.best
    lines += [
        f"recovered correction (yaw, pitch, roll) deg: {y!r}, {p!r}, {r!r}",
        f"best S (m^2): {result.best_S!r}",
    ]
    if result.best_S_full is not None:
        lines.append(f"best S, all points (m^2): {result.best_S_full!r}")
    lines += [
        f"evaluations: {result.n_evaluations}",
        f"levels: {len(result.tables)}  steps (deg): " + ", ".join(f"{s[0]:g}" for s in result.level_steps),
        f"warning_status: {1 if result.warnings else 0}",
    ]
    lines += [f"warning: {w}" for w in result.warnings]
    if truth is not None:
        true = np.array(truth.correction_to_recover, dtype=float)
        err = np.array(result.best) - true
        ang = Rotation3.from_euler(*true).angle_to(result.correction)
        lines += [
            "true correction (yaw, pitch, roll) deg: " + ", ".join(repr(float(x)) for x in true),
            "axis error (yaw, pitch, roll) deg: " + ", ".join(f"{e:+.6f}" for e in err),
            f"max axis error deg: {np.max(np.abs(err)):.6f}",
            f"rotation error deg: {ang:.6f}",
            "implied displacement at 100 m per axis (m): "
            + ", ".join(f"{chord_displacement(e):.6f}" for e in err),
            f"implied displacement at 100 m (m): {chord_displacement(ang):.6f}",
        ]
    return "\n".join(lines) + "\n"


def cmd_calibrate(cfg: RunConfig) -> int:
    returns, traj = _load_window(cfg)
    out = _outdir(cfg)
    truth = mio.read_truth(cfg.truth) if cfg.truth else None
    result = calibrate(
        returns,
        traj,
        cfg.mount(with_correction=False),
        cfg.grid(),
        N=cfg.N,
        stride=cfg.calib_stride,
        return_stride=cfg.return_stride,
        max_radius=cfg.max_radius,
        threads=cfg.threads,
        max_window=cfg.max_window,
        allow_long=cfg.allow_long,
    )
    (out / SCORE_TABLE_CSV).write_text(result.table_csv())
    doc = {
        "best": list(result.best),
        "best_S": result.best_S,
        "best_S_full": result.best_S_full,
        "n_evaluations": result.n_evaluations,
        "level_steps": [list(s) for s in result.level_steps],
        "warnings": result.warnings,
    }
    if not cfg.no_timestamp:
        doc["wall_time"] = result.wall_time
    (out / CALIB_JSON).write_text(json.dumps(doc, indent=2) + "\n")
    report = format_report(cfg, result, truth)
    (out / REPORT_TXT).write_text(report)
    print(report, end="")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "georef": cmd_georef, "score": cmd_score, "calibrate": cmd_calibrate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        cfg = _apply_truth_mount(cfg, args.command)
        if args.print_config:
            print(format_config(cfg), end="")
            return EXIT_OK
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except CoverageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COVERAGE
    except DegenerateInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except WindowTooLongError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except (OSError, mio.FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS


if __name__ == "__main__":
    sys.exit(main())
