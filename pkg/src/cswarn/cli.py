"""Command-line pipeline: synth -> detect / track -> fuse -> floodmap -> validate.

Commands:

- ``synth``     generate a synthetic scenario (GSF stacks + truth CSV)
- ``detect``    detected convective objects per BT frame, as CSV
- ``track``     track dump with per-observation motion estimates, as CSV
- ``fuse``      per-region warning reports over all decision epochs, as CSV
- ``floodmap``  change-detection flood mask from two backscatter images
- ``validate``  score warnings against a flood mask (POD / FAR)

All thresholds live in one INI config file so a given profile is a
committed, auditable artifact; unknown keys or out-of-range values abort
before any output is written. Output files are written atomically
(temp file + rename) and are byte-identical across runs on identical
inputs.

Exit codes: 0 success, 2 bad usage or config, 1 any runtime failure; all
failures print a one-line diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import os
import sys
from dataclasses import dataclass
from datetime import timedelta
from pathlib import Path
from typing import Callable, Sequence

from . import floodmap as fm
from . import scenario as sc
from .convection import CSObject, detect
from .fusion import FusionEngine, RegionIndicators, RuleSet, WarnLevel, WarningReport
from .geogrid import (
    GeoGrid,
    GridStack,
    GsfError,
    RegionBox,
    Variable,
    format_time,
    parse_time,
    read_gsf,
    read_regions,
    write_gsf,
    write_regions,
)
from .precip import RainStats
from .tracking import Track, UndefinedMotionError, build_tracks, motion_vector
from .wind import GmfGeometry, WindCategory, get_gmf, retrieve_wind_grid

# Geometry assumed when inverting backscatter grids that carry no viewing
# geometry of their own (mid-swath incidence, look along the wind).
NRCS_DEFAULT_GEOMETRY = GmfGeometry(incidence_deg=35.0, rel_azimuth_deg=0.0)


class ConfigError(ValueError):
    """Bad engine configuration (unknown key, unparsable or invalid value)."""


# ---------------------------------------------------------------------------
# Engine configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EngineConfig:
    t_deep: float = 220.0
    min_area_px: int = 4
    gmf: str = "synth1"
    v_max: float = 25.0
    bins: tuple[float, float, float] = (5.0, 10.0, 15.0)
    r_heavy: float = 8.0
    persistence_h: float = 3.0
    fraction: float = 0.2
    epoch_s: int = 1800
    window_s: int = 10800
    threshold_db: float = -3.0
    min_region_px: int = 8
    f_flood: float = 0.01
    max_gap_km: float = 50.0
    fit_window: int = 6

    def rules(self) -> RuleSet:
        return RuleSet(
            min_cloud_fraction=self.fraction,
            r_heavy_mmh=self.r_heavy,
            min_persistence_h=self.persistence_h,
        )


_CONFIG_SCHEMA: dict[str, dict[str, Callable[[str], object]]] = {
    "detection": {"t_deep": float, "min_area_px": int},
    "wind": {"gmf": str, "v_max": float, "bins": str},
    "rain": {"r_heavy": float, "persistence_h": float},
    "fusion": {"fraction": float, "epoch_s": int, "window_s": int},
    "floodmap": {"threshold_db": float, "min_region_px": int, "f_flood": float},
    "tracking": {"max_gap_km": float, "fit_window": int},
}


def _validate_config(cfg: EngineConfig) -> EngineConfig:
    if not 100.0 <= cfg.t_deep <= 400.0:
        raise ConfigError(f"detection.t_deep {cfg.t_deep} outside [100, 400] K")
    if cfg.min_area_px < 1:
        raise ConfigError("detection.min_area_px must be >= 1")
    try:
        get_gmf(cfg.gmf)
    except KeyError as exc:
        raise ConfigError(f"wind.gmf: {exc.args[0]}") from None
    if not 0.0 < cfg.v_max <= 60.0:
        raise ConfigError(f"wind.v_max {cfg.v_max} outside (0, 60] m/s")
    b1, b2, b3 = cfg.bins
    if not 0.0 <= b1 < b2 < b3:
        raise ConfigError(f"wind.bins must be increasing and >= 0, got {cfg.bins}")
    if cfg.r_heavy < 0:
        raise ConfigError("rain.r_heavy must be >= 0")
    if cfg.persistence_h < 0:
        raise ConfigError("rain.persistence_h must be >= 0")
    if not 0.0 <= cfg.fraction <= 1.0:
        raise ConfigError(f"fusion.fraction {cfg.fraction} outside [0, 1]")
    if cfg.epoch_s <= 0 or cfg.window_s <= 0:
        raise ConfigError("fusion.epoch_s and fusion.window_s must be > 0")
    if cfg.min_region_px < 1:
        raise ConfigError("floodmap.min_region_px must be >= 1")
    if not 0.0 < cfg.f_flood <= 1.0:
        raise ConfigError(f"floodmap.f_flood {cfg.f_flood} outside (0, 1]")
    if cfg.max_gap_km <= 0:
        raise ConfigError("tracking.max_gap_km must be > 0")
    if cfg.fit_window < 2:
        raise ConfigError("tracking.fit_window must be >= 2")
    return cfg


def read_config(path) -> EngineConfig:
    """Parse and validate an engine config INI; unknown keys are rejected."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None

    values: dict[str, object] = {}
    for section in parser.sections():
        if section not in _CONFIG_SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        schema = _CONFIG_SCHEMA[section]
        for key, raw in parser[section].items():
            if key not in schema:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            try:
                values[key] = schema[key](raw)
            except ValueError:
                raise ConfigError(f"{path}: [{section}] {key} = {raw!r} does not parse") from None
    if "bins" in values:
        try:
            parts = tuple(float(p) for p in str(values["bins"]).split(","))
        except ValueError:
            raise ConfigError(f"{path}: wind.bins must be three comma-separated numbers") from None
        if len(parts) != 3:
            raise ConfigError(f"{path}: wind.bins must have exactly three values")
        values["bins"] = parts
    try:
        cfg = EngineConfig(**values)  # type: ignore[arg-type]
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    try:
        return _validate_config(cfg)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_config(path: str | None) -> EngineConfig:
    if path is None:
        return _validate_config(EngineConfig())
    return read_config(path)


# ---------------------------------------------------------------------------
# Atomic output helpers
# ---------------------------------------------------------------------------

def _write_atomic_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_atomic(path, writer: Callable[[Path], None]) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    writer(tmp)
    os.replace(tmp, path)


def _fmt(value) -> str:
    """CSV cell formatting: shortest round-trip floats, empty for None."""
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _csv_text(header: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# CSV serializers (the pipeline's tabular external interfaces)
# ---------------------------------------------------------------------------

OBJECTS_HEADER = ["time", "id", "pixel_count", "area_km2",
                  "centroid_lat", "centroid_lon", "min_bt", "mean_bt"]
TRACKS_HEADER = ["track_id", "time", "centroid_lat", "centroid_lon",
                 "pixel_count", "min_bt", "speed_mps", "bearing_deg"]
WARNINGS_HEADER = ["epoch", "region", "level", "lead_time_s", "triggered_rules",
                   "deep_cloud_fraction", "min_bt", "wind_cat", "max_rain_mmh",
                   "rain_persistence_h", "approach_s"]
RAIN_STATS_HEADER = ["region", "window_start", "window_end", "max_rate_mmh",
                     "accum_mm", "persistence_h", "missing_fraction"]
VALIDATION_HEADER = ["region", "flooded", "warned", "outcome"]


def objects_csv(frames: Sequence[Sequence[CSObject]]) -> str:
    rows = []
    for objects in frames:
        for o in objects:
            rows.append([format_time(o.time), o.id, o.pixel_count, o.area_km2,
                         o.centroid_lat, o.centroid_lon, o.min_bt, o.mean_bt])
    return _csv_text(OBJECTS_HEADER, rows)


def tracks_csv(tracks: Sequence[Track], fit_window: int) -> str:
    """One row per observation with the motion estimate as of that time."""
    rows = []
    for track in sorted(tracks, key=lambda t: t.track_id):
        for i, obs in enumerate(track.observations):
            partial = Track(track.track_id, track.observations[: i + 1])
            try:
                motion = motion_vector(partial, fit_window)
                speed, bearing = motion.speed_mps, motion.bearing_deg
            except UndefinedMotionError:
                speed, bearing = None, None
            rows.append([track.track_id, format_time(obs.time),
                         obs.centroid_lat, obs.centroid_lon,
                         obs.pixel_count, obs.min_bt, speed, bearing])
    return _csv_text(TRACKS_HEADER, rows)


def warnings_csv(reports: Sequence[WarningReport]) -> str:
    rows = []
    for r in reports:
        ind = r.indicators
        rows.append([format_time(r.epoch), r.region, r.level.name, r.lead_time_s,
                     ";".join(r.triggered_rules), ind.deep_cloud_fraction,
                     ind.min_bt_K, ind.wind_cat.name, ind.max_rain_mmh,
                     ind.rain_persistence_h, ind.approach_s])
    return _csv_text(WARNINGS_HEADER, rows)


def read_warnings_csv(path) -> list[WarningReport]:
    reports: list[WarningReport] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != WARNINGS_HEADER:
            raise ValueError(f"{path}: unexpected warning columns {reader.fieldnames}")
        for row in reader:
            approach = int(row["approach_s"]) if row["approach_s"] else None
            ind = RegionIndicators(
                region=row["region"],
                epoch=parse_time(row["epoch"]),
                deep_cloud_fraction=float(row["deep_cloud_fraction"]),
                min_bt_K=float(row["min_bt"]) if row["min_bt"] else None,
                wind_cat=WindCategory[row["wind_cat"]],
                wind_no_observation=False,
                max_rain_mmh=float(row["max_rain_mmh"]),
                rain_persistence_h=float(row["rain_persistence_h"]),
                approach_s=approach,
                source_count={},
            )
            reports.append(
                WarningReport(
                    region=row["region"],
                    epoch=ind.epoch,
                    level=WarnLevel[row["level"]],
                    lead_time_s=int(row["lead_time_s"]) if row["lead_time_s"] else None,
                    triggered_rules=tuple(
                        r for r in row["triggered_rules"].split(";") if r
                    ),
                    indicators=ind,
                )
            )
    return reports


def rain_stats_csv(stats: Sequence[RainStats]) -> str:
    rows = [
        [s.region, format_time(s.window_start), format_time(s.window_end),
         s.max_rate_mmh, s.accum_mm, s.persistence_h, s.missing_fraction]
        for s in stats
    ]
    return _csv_text(RAIN_STATS_HEADER, rows)


def validation_csv(score: fm.ValidationScore, regions: Sequence[RegionBox]) -> str:
    rows = [
        [r.name, int(score.flooded[r.name]), int(score.warned[r.name]),
         score.outcomes[r.name]]
        for r in sorted(regions, key=lambda r: r.name)
    ]
    return _csv_text(VALIDATION_HEADER, rows)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    if args.paper_replay:
        spec = sc.paper_replay_spec()
    else:
        spec = sc.read_scenario(args.spec)
    data = sc.generate(spec, seed=args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_atomic(out / "bt.gsf", lambda p: write_gsf(data.bt, p))
    _write_atomic(out / "rain.gsf", lambda p: write_gsf(data.rain, p))
    for name in data.wind:
        stack = data.wind[name]
        _write_atomic(out / f"wind_{name}.gsf", lambda p, s=stack: write_gsf(s, p))
    if data.nrcs is not None:
        _write_atomic(out / "nrcs.gsf", lambda p: write_gsf(data.nrcs, p))
    _write_atomic(out / "truth.csv", lambda p: sc.write_truth_csv(data.truth, p))
    if args.regions_out:
        _write_atomic(args.regions_out, lambda p: write_regions(spec.regions, p))
    if args.flood_truth_out:
        grid = sc.truth_flood_grid(spec)
        _write_atomic(args.flood_truth_out, lambda p: write_gsf(GridStack([grid]), p))
    for note in data.truth.notices:
        print(f"note: {note}")
    return 0


def _detections_per_frame(bt_path, cfg: EngineConfig) -> tuple[GridStack, list[list[CSObject]]]:
    stack = read_gsf(bt_path)
    if stack.variable is not Variable.BT:
        raise ValueError(f"{bt_path}: expected BT frames, got {stack.variable.value}")
    frames = [detect(f, t_deep=cfg.t_deep, min_area_px=cfg.min_area_px) for f in stack]
    return stack, frames


def cmd_detect(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    _, frames = _detections_per_frame(args.bt, cfg)
    _write_atomic_text(args.out, objects_csv(frames))
    return 0


def cmd_track(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    _, frames = _detections_per_frame(args.bt, cfg)
    tracks = build_tracks(frames, cfg.max_gap_km, cfg.fit_window)
    _write_atomic_text(args.out, tracks_csv(tracks, cfg.fit_window))
    return 0


def _load_fuse_inputs(data_dir, cfg: EngineConfig):
    """Discover stacks in a directory by their file names.

    bt.gsf and rain.gsf are taken directly; every wind_<name>.gsf becomes
    a wind source; nrcs.gsf is inverted through the configured GMF into a
    further wind source named "nrcs".
    """
    data_dir = Path(data_dir)
    bt = rain = None
    wind: dict[str, GridStack] = {}
    found = False
    for path in sorted(data_dir.glob("*.gsf")):
        stack = read_gsf(path)
        found = True
        if path.name == "bt.gsf":
            bt = stack
        elif path.name == "rain.gsf":
            rain = stack
        elif path.name.startswith("wind_"):
            wind[path.stem[len("wind_"):]] = stack
        elif path.name == "nrcs.gsf":
            gmf = get_gmf(cfg.gmf)
            wind["nrcs"] = GridStack(
                [
                    retrieve_wind_grid(f, NRCS_DEFAULT_GEOMETRY, gmf, v_max=cfg.v_max)
                    for f in stack
                ]
            )
    if not found:
        raise FileNotFoundError(f"no .gsf stacks found in {data_dir}")
    return bt, rain, wind


def cmd_fuse(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    regions = read_regions(args.regions)
    bt, rain, wind = _load_fuse_inputs(args.data_dir, cfg)

    engine = FusionEngine(
        regions,
        bt=bt,
        rain=rain,
        wind_speed=wind,
        t_deep=cfg.t_deep,
        min_area_px=cfg.min_area_px,
        bins=cfg.bins,
        rules=cfg.rules(),
        window_s=cfg.window_s,
        max_gap_km=cfg.max_gap_km,
        fit_window=cfg.fit_window,
    )
    stacks = [s for s in (bt, rain, *wind.values()) if s is not None]
    start = min(s[0].time for s in stacks)
    end = max(s[-1].time for s in stacks)
    reports = engine.run(start, end, cfg.epoch_s)
    _write_atomic_text(args.out, warnings_csv(reports))

    if args.rain_stats_out:
        stats = []
        epoch = start
        while epoch <= end:
            for region in engine.regions:
                s = engine.rain_stats_at(epoch, region)
                if s is not None:
                    stats.append(s)
            epoch += timedelta(seconds=cfg.epoch_s)
        _write_atomic_text(args.rain_stats_out, rain_stats_csv(stats))
    return 0


def _read_single_frame(path, variable: Variable) -> GeoGrid:
    stack = read_gsf(path)
    if stack.variable is not variable:
        raise ValueError(f"{path}: expected {variable.value}, got {stack.variable.value}")
    if len(stack) != 1:
        raise ValueError(f"{path}: expected exactly one frame, got {len(stack)}")
    return stack[0]


def cmd_floodmap(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    flood = _read_single_frame(args.flood, Variable.NRCS)
    ref = _read_single_frame(args.ref, Variable.NRCS)
    ratio = fm.log_ratio_db(flood, ref)
    mask = fm.flood_mask(
        ratio,
        threshold_db=cfg.threshold_db,
        min_region_px=cfg.min_region_px,
        reference_time=ref.time,
    )
    _write_atomic(args.out, lambda p: write_gsf(GridStack([mask.grid]), p))
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    warnings = read_warnings_csv(args.warnings)
    grid = _read_single_frame(args.mask, Variable.FLOOD_MASK)
    mask = fm.FloodMask(grid=grid, flood_time=grid.time)
    regions = read_regions(args.regions)
    score = fm.validate(warnings, mask, regions, f_flood=cfg.f_flood)
    _write_atomic_text(args.out, validation_csv(score, regions))
    pod = "undefined" if score.pod is None else repr(score.pod)
    far = "undefined" if score.far is None else repr(score.far)
    print(
        f"hits={score.hits} misses={score.misses} false_alarms={score.false_alarms} "
        f"POD={pod} FAR={far}"
    )
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cswarn",
        description="Convective-system detection, tracking, and flood early warning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scenario")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--spec", help="scenario spec INI file")
    group.add_argument("--paper-replay", action="store_true",
                       help="use the built-in 24 h coastal squall case")
    p.add_argument("out_dir", help="output directory for GSF stacks + truth.csv")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--regions-out", help="also write the scenario regions file here")
    p.add_argument("--flood-truth-out", help="also write the truth flood mask (GSF) here")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("detect", help="detect convective objects per BT frame")
    p.add_argument("bt", help="BT stack (GSF)")
    p.add_argument("-o", "--out", required=True, help="objects CSV")
    p.add_argument("--config")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("track", help="track objects through a BT stack")
    p.add_argument("bt", help="BT stack (GSF)")
    p.add_argument("-o", "--out", required=True, help="tracks CSV")
    p.add_argument("--config")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("fuse", help="fuse all sensors into per-region warnings")
    p.add_argument("data_dir", help="directory with bt.gsf, rain.gsf, wind_*.gsf, nrcs.gsf")
    p.add_argument("regions", help="regions file")
    p.add_argument("-o", "--out", required=True, help="warnings CSV")
    p.add_argument("--config")
    p.add_argument("--rain-stats-out", help="also write per-region rain stats CSV here")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("floodmap", help="flood mask from flood + reference backscatter")
    p.add_argument("flood", help="post-event NRCS image (GSF, one frame)")
    p.add_argument("ref", help="pre-event reference NRCS image (GSF, one frame)")
    p.add_argument("-o", "--out", required=True, help="flood mask (GSF)")
    p.add_argument("--config")
    p.set_defaults(func=cmd_floodmap)

    p = sub.add_parser("validate", help="score warnings against a flood mask")
    p.add_argument("warnings", help="warnings CSV from fuse")
    p.add_argument("mask", help="flood mask (GSF)")
    p.add_argument("regions", help="regions file")
    p.add_argument("-o", "--out", required=True, help="validation CSV")
    p.add_argument("--config")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"cswarn {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    except (GsfError, OSError, ValueError, KeyError, TypeError) as exc:
        print(f"cswarn {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
