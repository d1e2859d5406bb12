"""Synthetic multi-sensor scenario generation with exact ground truth.

Real satellite archives do not ship with this engine, so end-to-end tests
run on generated data whose every property is known analytically. A
scenario is a warm background plus moving storm cells; each cell carries:

- a Gaussian brightness-temperature depression (elliptical radii allowed,
  so a squall line can be long north-south and narrow east-west),
- a gust ring: wind speed peaking on an ellipse at 0.55 of the cloud
  radius, well inside the detectable cloud extent,
- a rain bump whose center trails the cell by ``rain_lag_s`` of travel,
  so a fixed ground point sees the wind arrive first and the rain peak
  roughly half an hour later.

Cells move at constant velocity (converted to fixed degree rates at the
birth latitude). The truth record stores exact centroids per frame, the
first time each region is touched by a cell's detectable bounding box,
which regions flood, and notices for cells leaving the grid.

Everything is deterministic for a given (spec, seed); noise is optional
and off by default.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Mapping

import numpy as np

from .geogrid import (
    KM_PER_DEG,
    GeoGrid,
    GridGeometry,
    GridStack,
    RegionBox,
    Variable,
    format_time,
    parse_time,
    region_indices,
)
from .wind import SYNTH1

DEFAULT_T_DEEP_K = 220.0
RING_RHO = 0.55     # gust ring center, in units of the cloud radius
RING_SIGMA = 0.12   # gust ring width, same units


@dataclass(frozen=True)
class CellSpec:
    """One synthetic storm cell."""

    name: str
    lat: float
    lon: float
    speed_mps: float
    bearing_deg: float
    min_bt_K: float = 200.0
    radius_km: float = 40.0
    radius_ns_km: float | None = None  # defaults to radius_km (circular)
    wind_peak_mps: float = 0.0
    rain_peak_mmh: float = 0.0
    birth_s: int = 0
    death_s: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.speed_mps <= 60.0:
            raise ValueError(f"cell {self.name}: speed must be in [0, 60] m/s")
        if self.min_bt_K < 180.0:
            raise ValueError(f"cell {self.name}: min BT must be >= 180 K")
        if self.wind_peak_mps < 0 or self.rain_peak_mmh < 0:
            raise ValueError(f"cell {self.name}: peaks must be >= 0")
        if self.radius_km <= 0 or (self.radius_ns_km is not None and self.radius_ns_km <= 0):
            raise ValueError(f"cell {self.name}: radii must be > 0")
        if not 0.0 <= self.bearing_deg < 360.0:
            raise ValueError(f"cell {self.name}: bearing must be in [0, 360)")
        if self.birth_s < 0 or (self.death_s is not None and self.death_s <= self.birth_s):
            raise ValueError(f"cell {self.name}: bad lifetime")

    def deg_rates(self) -> tuple[float, float]:
        """(dlat, dlon) per second at the birth latitude."""
        theta = math.radians(self.bearing_deg)
        north_kms = self.speed_mps * math.cos(theta) / 1000.0
        east_kms = self.speed_mps * math.sin(theta) / 1000.0
        return (
            north_kms / KM_PER_DEG,
            east_kms / (KM_PER_DEG * math.cos(math.radians(self.lat))),
        )

    def position(self, t_s: float) -> tuple[float, float]:
        """Centroid (lat, lon) at scenario time ``t_s`` (seconds)."""
        dlat, dlon = self.deg_rates()
        dt = t_s - self.birth_s
        return self.lat + dlat * dt, self.lon + dlon * dt

    def sigmas_deg(self) -> tuple[float, float]:
        """(sigma_lat, sigma_lon) in degrees, fixed at the birth latitude."""
        ns = self.radius_ns_km if self.radius_ns_km is not None else self.radius_km
        return (
            ns / KM_PER_DEG,
            self.radius_km / (KM_PER_DEG * math.cos(math.radians(self.lat))),
        )

    def alive(self, t_s: float) -> bool:
        return t_s >= self.birth_s and (self.death_s is None or t_s <= self.death_s)


@dataclass(frozen=True)
class ScenarioSpec:
    geometry: GridGeometry
    start_time: datetime
    duration_s: int
    cells: tuple[CellSpec, ...] = ()
    regions: tuple[RegionBox, ...] = ()
    flooded_regions: frozenset[str] = frozenset()
    bt_cadence_s: int = 600
    rain_cadence_s: int = 1800
    wind_sources: tuple[tuple[str, int], ...] = (("lr", 1800),)
    rain_lag_s: int = 1800
    background_bt_K: float = 280.0
    noise_std: float = 0.0

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise ValueError("duration_s must be > 0")
        for label, cadence in (("bt", self.bt_cadence_s), ("rain", self.rain_cadence_s)):
            if cadence <= 0:
                raise ValueError(f"{label} cadence must be > 0")
        names = [r.name for r in self.regions]
        if len(set(names)) != len(names):
            raise ValueError("duplicate region names")
        cell_names = [c.name for c in self.cells]
        if len(set(cell_names)) != len(cell_names):
            raise ValueError("duplicate cell names")
        source_names = [n for n, _ in self.wind_sources]
        if len(set(source_names)) != len(source_names):
            raise ValueError("duplicate wind source names")
        for _, cadence in self.wind_sources:
            if cadence <= 0:
                raise ValueError("wind cadence must be > 0")
        unknown = self.flooded_regions - set(names)
        if unknown:
            raise ValueError(f"flooded regions not defined: {sorted(unknown)}")
        if self.rain_lag_s < 0 or self.noise_std < 0:
            raise ValueError("rain_lag_s and noise_std must be >= 0")
        if not 100.0 < self.background_bt_K <= 400.0:
            raise ValueError("background BT out of physical range")

    def frame_seconds(self, cadence_s: int) -> list[int]:
        return list(range(0, self.duration_s + 1, cadence_s))

    @property
    def end_time(self) -> datetime:
        return self.start_time + timedelta(seconds=self.duration_s)


@dataclass(frozen=True)
class CentroidSample:
    time: datetime
    cell: str
    lat: float
    lon: float
    speed_mps: float
    bearing_deg: float


@dataclass(frozen=True)
class TruthRecord:
    """Exact scenario ground truth, the oracle for every downstream test."""

    centroids: tuple[CentroidSample, ...]
    intersections: Mapping[str, datetime]  # region -> first bbox contact
    flooded: frozenset[str]
    notices: tuple[str, ...] = ()


@dataclass(frozen=True)
class ScenarioData:
    bt: GridStack
    rain: GridStack
    wind: Mapping[str, GridStack]
    nrcs: GridStack | None
    truth: TruthRecord


def _rho2(
    geometry: GridGeometry, cell: CellSpec, clat: float, clon: float
) -> np.ndarray:
    """Squared normalized elliptical distance of every grid cell center."""
    sig_lat, sig_lon = cell.sigmas_deg()
    dlat = (geometry.lats()[:, None] - clat) / sig_lat
    dlon = (geometry.lons()[None, :] - clon) / sig_lon
    return dlat * dlat + dlon * dlon


def _cell_bt_field(
    geometry: GridGeometry, cell: CellSpec, t_s: float, background: float
) -> np.ndarray:
    clat, clon = cell.position(t_s)
    depth = background - cell.min_bt_K
    return background - depth * np.exp(-_rho2(geometry, cell, clat, clon) / 2.0)


def _detected_bbox(
    geometry: GridGeometry, bt_field: np.ndarray, t_deep: float
) -> RegionBox | None:
    """Bounding box of cells at or under ``t_deep``, padded by half a cell."""
    rows, cols = np.nonzero(bt_field <= t_deep)
    if rows.size == 0:
        return None
    lats = geometry.lats()
    lons = geometry.lons()
    return RegionBox(
        "truth",
        float(lats[rows].min()) - geometry.dlat / 2.0,
        float(lats[rows].max()) + geometry.dlat / 2.0,
        float(lons[cols].min()) - geometry.dlon / 2.0,
        float(lons[cols].max()) + geometry.dlon / 2.0,
    )


def generate(spec: ScenarioSpec, seed: int = 0, t_deep: float = DEFAULT_T_DEEP_K) -> ScenarioData:
    """Render all sensor stacks for ``spec`` plus the exact truth record.

    Deterministic for a given (spec, seed). The truth record's bounding
    boxes use the same rendered fields a detector at ``t_deep`` would see
    (noise-free), so with noise_std = 0 they match detection exactly.
    """
    rng = np.random.default_rng(seed)
    geom = spec.geometry
    shape = (geom.nrows, geom.ncols)
    extent = RegionBox("extent",
                       geom.lat_min - geom.dlat / 2.0, geom.lat_max + geom.dlat / 2.0,
                       geom.lon_min - geom.dlon / 2.0, geom.lon_max + geom.dlon / 2.0)

    def make_grid(variable: Variable, units: str, t_s: int, values: np.ndarray) -> GeoGrid:
        return GeoGrid(
            variable=variable, units=units,
            time=spec.start_time + timedelta(seconds=t_s),
            lat_min=geom.lat_min, lon_min=geom.lon_min,
            dlat=geom.dlat, dlon=geom.dlon, nrows=geom.nrows, ncols=geom.ncols,
            values=values,
        )

    # A cell is truncated once its centroid leaves the grid (checked on
    # the BT cadence, the finest product); it stops contributing to every
    # product from that moment on.
    notices: list[str] = []
    exit_s: dict[str, int] = {}
    for t_s in spec.frame_seconds(spec.bt_cadence_s):
        for cell in spec.cells:
            if cell.name in exit_s or not cell.alive(t_s):
                continue
            if not extent.contains(*cell.position(t_s)):
                exit_s[cell.name] = t_s
                when = format_time(spec.start_time + timedelta(seconds=t_s))
                notices.append(f"cell {cell.name} left the grid at {when}; truncated")

    def active_cells(t_s: float) -> list[CellSpec]:
        return [
            cell
            for cell in spec.cells
            if cell.alive(t_s) and t_s < exit_s.get(cell.name, spec.duration_s + 1)
        ]

    # Brightness temperature + truth, on the BT cadence.
    bt_frames: list[GeoGrid] = []
    centroids: list[CentroidSample] = []
    intersections: dict[str, datetime] = {}
    for t_s in spec.frame_seconds(spec.bt_cadence_s):
        time = spec.start_time + timedelta(seconds=t_s)
        bt = np.full(shape, spec.background_bt_K)
        for cell in active_cells(t_s):
            clat, clon = cell.position(t_s)
            field_c = _cell_bt_field(geom, cell, t_s, spec.background_bt_K)
            bt = np.minimum(bt, field_c)
            centroids.append(
                CentroidSample(time, cell.name, clat, clon, cell.speed_mps, cell.bearing_deg)
            )
            bbox = _detected_bbox(geom, field_c, t_deep)
            if bbox is not None:
                for region in spec.regions:
                    if region.name not in intersections and bbox.intersects(region):
                        intersections[region.name] = time
        if spec.noise_std > 0:
            bt = np.clip(bt + rng.normal(0.0, spec.noise_std, shape), 100.0, 400.0)
        bt_frames.append(make_grid(Variable.BT, "K", t_s, bt))

    # Rain, lagged behind the cell track.
    rain_frames: list[GeoGrid] = []
    for t_s in spec.frame_seconds(spec.rain_cadence_s):
        rain = np.zeros(shape)
        for cell in active_cells(t_s):
            if cell.rain_peak_mmh <= 0:
                continue
            lag_t = max(cell.birth_s, t_s - spec.rain_lag_s)
            clat, clon = cell.position(lag_t)
            rho2 = _rho2(geom, cell, clat, clon)
            rain = np.maximum(rain, cell.rain_peak_mmh * np.exp(-rho2 / 2.0))
        if spec.noise_std > 0:
            rain = np.maximum(rain + rng.normal(0.0, spec.noise_std, shape), 0.0)
        rain_frames.append(make_grid(Variable.RAIN_RATE, "mm/h", t_s, rain))

    # Wind per source (gust ring around the current centroid).
    wind_stacks: dict[str, GridStack] = {}
    for source, cadence in spec.wind_sources:
        frames: list[GeoGrid] = []
        for t_s in spec.frame_seconds(cadence):
            wind = np.zeros(shape)
            for cell in active_cells(t_s):
                if cell.wind_peak_mps <= 0:
                    continue
                clat, clon = cell.position(t_s)
                rho = np.sqrt(_rho2(geom, cell, clat, clon))
                ring = cell.wind_peak_mps * np.exp(-((rho - RING_RHO) ** 2) / (2.0 * RING_SIGMA**2))
                wind = np.maximum(wind, ring)
            if spec.noise_std > 0:
                wind = np.clip(wind + rng.normal(0.0, spec.noise_std, shape), 0.0, 100.0)
            frames.append(make_grid(Variable.WIND_SPEED, "m/s", t_s, wind))
        wind_stacks[source] = GridStack(frames)

    # Radar backscatter consistent with the first wind source.
    nrcs_stack: GridStack | None = None
    if spec.wind_sources:
        first = spec.wind_sources[0][0]
        nrcs_frames = [
            f.with_values(
                SYNTH1.sigma0(f.values, 35.0, 0.0), variable=Variable.NRCS, units="linear"
            )
            for f in wind_stacks[first]
        ]
        nrcs_stack = GridStack(nrcs_frames)

    truth = TruthRecord(
        centroids=tuple(centroids),
        intersections=intersections,
        flooded=frozenset(spec.flooded_regions),
        notices=tuple(notices),
    )
    return ScenarioData(
        bt=GridStack(bt_frames),
        rain=GridStack(rain_frames),
        wind=wind_stacks,
        nrcs=nrcs_stack,
        truth=truth,
    )


def truth_flood_grid(spec: ScenarioSpec) -> GeoGrid:
    """FLOOD_MASK grid at scenario end: the central quarter of every
    region named in ``flooded_regions`` is flooded, everything else dry."""
    geom = spec.geometry
    values = np.zeros((geom.nrows, geom.ncols))
    by_name = {r.name: r for r in spec.regions}
    for name in sorted(spec.flooded_regions):
        rows, cols = region_indices(geom, by_name[name])
        if rows.size == 0 or cols.size == 0:
            continue
        r_sel = rows[rows.size // 4: max(rows.size // 4 + 1, rows.size - rows.size // 4)]
        c_sel = cols[cols.size // 4: max(cols.size // 4 + 1, cols.size - cols.size // 4)]
        values[np.ix_(r_sel, c_sel)] = 1.0
    return GeoGrid(
        variable=Variable.FLOOD_MASK, units="bool", time=spec.end_time,
        lat_min=geom.lat_min, lon_min=geom.lon_min,
        dlat=geom.dlat, dlon=geom.dlon, nrows=geom.nrows, ncols=geom.ncols,
        values=values,
    )


# ---------------------------------------------------------------------------
# The committed 24-hour coastal squall case
# ---------------------------------------------------------------------------

def paper_replay_spec() -> ScenarioSpec:
    """The engine's reference case: one long squall line born offshore,
    sweeping due west at 8 m/s across a 6 x 7 degree coastal domain over
    24 hours, flooding the four regions in its path (TT, DN, QN1, QN2)."""
    geometry = GridGeometry(
        lat_min=14.0, lon_min=103.0, dlat=0.05, dlon=0.05, nrows=120, ncols=140
    )
    regions = (
        RegionBox("NA", 18.8, 19.8, 103.8, 105.8),
        RegionBox("HT", 18.0, 18.7, 105.2, 106.6),
        RegionBox("QB", 17.3, 17.9, 105.6, 107.0),
        RegionBox("QT", 16.7, 17.2, 106.2, 107.4),
        RegionBox("TT", 16.1, 16.6, 107.0, 108.2),
        RegionBox("DN", 15.8, 16.05, 107.6, 108.4),
        RegionBox("QN1", 15.2, 15.75, 107.2, 108.6),
        RegionBox("QN2", 14.5, 15.15, 107.4, 109.0),
    )
    squall = CellSpec(
        name="squall",
        lat=15.55,
        lon=109.7,
        speed_mps=8.0,
        bearing_deg=270.0,
        min_bt_K=200.0,
        radius_km=40.0,
        radius_ns_km=143.0,
        wind_peak_mps=20.0,
        rain_peak_mmh=10.0,
    )
    return ScenarioSpec(
        geometry=geometry,
        start_time=parse_time("2020-10-05T00:00:00Z"),
        duration_s=86400,
        cells=(squall,),
        regions=regions,
        flooded_regions=frozenset({"TT", "DN", "QN1", "QN2"}),
        bt_cadence_s=600,
        rain_cadence_s=1800,
        wind_sources=(("lr", 1800),),
        rain_lag_s=1800,
    )


# ---------------------------------------------------------------------------
# Truth record CSV
# ---------------------------------------------------------------------------

_TRUTH_HEADER = ["record", "time", "name", "lat", "lon", "speed_mps", "bearing_deg", "note"]


def write_truth_csv(truth: TruthRecord, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_TRUTH_HEADER)
        for s in truth.centroids:
            writer.writerow(
                ["centroid", format_time(s.time), s.cell,
                 repr(s.lat), repr(s.lon), repr(s.speed_mps), repr(s.bearing_deg), ""]
            )
        for name in sorted(truth.intersections):
            writer.writerow(
                ["intersection", format_time(truth.intersections[name]), name, "", "", "", "", ""]
            )
        for name in sorted(truth.flooded):
            writer.writerow(["flooded", "", name, "", "", "", "", ""])
        for note in truth.notices:
            writer.writerow(["notice", "", "", "", "", "", "", note])


def read_truth_csv(path) -> TruthRecord:
    centroids: list[CentroidSample] = []
    intersections: dict[str, datetime] = {}
    flooded: set[str] = set()
    notices: list[str] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != _TRUTH_HEADER:
            raise ValueError(f"{path}: unexpected truth columns {reader.fieldnames}")
        for row in reader:
            kind = row["record"]
            if kind == "centroid":
                centroids.append(
                    CentroidSample(
                        parse_time(row["time"]), row["name"],
                        float(row["lat"]), float(row["lon"]),
                        float(row["speed_mps"]), float(row["bearing_deg"]),
                    )
                )
            elif kind == "intersection":
                intersections[row["name"]] = parse_time(row["time"])
            elif kind == "flooded":
                flooded.add(row["name"])
            elif kind == "notice":
                notices.append(row["note"])
            else:
                raise ValueError(f"{path}: unknown truth record kind {kind!r}")
    return TruthRecord(tuple(centroids), intersections, frozenset(flooded), tuple(notices))


# ---------------------------------------------------------------------------
# Scenario spec file (INI)
# ---------------------------------------------------------------------------

_SCENARIO_KEYS = {
    "lat_min", "lon_min", "dlat", "dlon", "nrows", "ncols", "start",
    "duration_s", "bt_cadence_s", "rain_cadence_s", "rain_lag_s",
    "background_bt", "noise_std", "wind_sources", "flooded",
}
_CELL_KEYS = {
    "lat", "lon", "speed_mps", "bearing_deg", "min_bt", "radius_km",
    "radius_ns_km", "wind_peak", "rain_peak", "birth_s", "death_s",
}
_REGION_KEYS = {"lat_min", "lat_max", "lon_min", "lon_max"}


def read_scenario(path) -> ScenarioSpec:
    """Parse a scenario spec file; see the project README for the layout.

    Sections: one [scenario], any number of [cell NAME] and [region NAME].
    Unknown keys are rejected so typos fail loudly instead of silently
    running defaults.
    """
    import configparser

    parser = configparser.ConfigParser(interpolation=None)
    with open(path, "r", encoding="utf-8") as fh:
        parser.read_file(fh, source=str(path))
    if "scenario" not in parser:
        raise ValueError(f"{path}: missing [scenario] section")

    sc = parser["scenario"]
    unknown = set(sc) - _SCENARIO_KEYS
    if unknown:
        raise ValueError(f"{path}: unknown [scenario] keys: {sorted(unknown)}")
    required = {"lat_min", "lon_min", "dlat", "dlon", "nrows", "ncols", "start", "duration_s"}
    missing = required - set(sc)
    if missing:
        raise ValueError(f"{path}: missing [scenario] keys: {sorted(missing)}")
    try:
        geometry = GridGeometry(
            lat_min=sc.getfloat("lat_min"), lon_min=sc.getfloat("lon_min"),
            dlat=sc.getfloat("dlat"), dlon=sc.getfloat("dlon"),
            nrows=sc.getint("nrows"), ncols=sc.getint("ncols"),
        )
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{path}: bad [scenario] geometry: {exc}") from None

    wind_sources: list[tuple[str, int]] = []
    for item in sc.get("wind_sources", "lr:1800").split(","):
        item = item.strip()
        if not item:
            continue
        name, sep, cadence = item.partition(":")
        if sep != ":":
            raise ValueError(f"{path}: wind_sources entries are name:cadence_s, got {item!r}")
        wind_sources.append((name.strip(), int(cadence)))

    cells: list[CellSpec] = []
    regions: list[RegionBox] = []
    for section in parser.sections():
        if section == "scenario":
            continue
        kind, _, name = section.partition(" ")
        name = name.strip()
        if kind == "cell" and name:
            cs = parser[section]
            unknown = set(cs) - _CELL_KEYS
            if unknown:
                raise ValueError(f"{path}: unknown [cell {name}] keys: {sorted(unknown)}")
            missing = {"lat", "lon", "speed_mps", "bearing_deg"} - set(cs)
            if missing:
                raise ValueError(f"{path}: missing [cell {name}] keys: {sorted(missing)}")
            cells.append(
                CellSpec(
                    name=name,
                    lat=cs.getfloat("lat"), lon=cs.getfloat("lon"),
                    speed_mps=cs.getfloat("speed_mps"),
                    bearing_deg=cs.getfloat("bearing_deg"),
                    min_bt_K=cs.getfloat("min_bt", 200.0),
                    radius_km=cs.getfloat("radius_km", 40.0),
                    radius_ns_km=cs.getfloat("radius_ns_km", fallback=None),
                    wind_peak_mps=cs.getfloat("wind_peak", 0.0),
                    rain_peak_mmh=cs.getfloat("rain_peak", 0.0),
                    birth_s=cs.getint("birth_s", 0),
                    death_s=cs.getint("death_s", fallback=None),
                )
            )
        elif kind == "region" and name:
            rs = parser[section]
            unknown = set(rs) - _REGION_KEYS
            if unknown:
                raise ValueError(f"{path}: unknown [region {name}] keys: {sorted(unknown)}")
            missing = _REGION_KEYS - set(rs)
            if missing:
                raise ValueError(f"{path}: missing [region {name}] keys: {sorted(missing)}")
            regions.append(
                RegionBox(
                    name,
                    rs.getfloat("lat_min"), rs.getfloat("lat_max"),
                    rs.getfloat("lon_min"), rs.getfloat("lon_max"),
                )
            )
        else:
            raise ValueError(f"{path}: unknown section [{section}]")

    flooded = frozenset(
        n.strip() for n in sc.get("flooded", "").split(",") if n.strip()
    )
    return ScenarioSpec(
        geometry=geometry,
        start_time=parse_time(sc.get("start")),
        duration_s=sc.getint("duration_s"),
        cells=tuple(cells),
        regions=tuple(regions),
        flooded_regions=flooded,
        bt_cadence_s=sc.getint("bt_cadence_s", 600),
        rain_cadence_s=sc.getint("rain_cadence_s", 1800),
        wind_sources=tuple(wind_sources),
        rain_lag_s=sc.getint("rain_lag_s", 1800),
        background_bt_K=sc.getfloat("background_bt", 280.0),
        noise_std=sc.getfloat("noise_std", 0.0),
    )
