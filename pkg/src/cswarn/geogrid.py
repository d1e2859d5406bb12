"""Georeferenced raster data model and the GSF grid-stack file format.

Conventions used throughout the engine:

- Plate carrée lat/lon grids only; no projections.
- Values are cell-center registered: ``lat_min``/``lon_min`` are the
  coordinates of the *center* of the south-west cell.
- Row 0 is the northernmost row (map-image order); columns run west to east.
- The nodata sentinel (default ``-9999.0``) is stored in the value array and
  excluded from every statistic.
- Grids are immutable after construction; all operations here are pure
  functions, so frames may be processed in parallel by callers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from typing import Iterator, Sequence

import numpy as np

# Spherical-degree approximation used for all km/degree conversions.
KM_PER_DEG = 111.195
EARTH_RADIUS_KM = KM_PER_DEG * 180.0 / math.pi

DEFAULT_NODATA = -9999.0


class Variable(str, Enum):
    """Physical variable carried by a grid."""

    BT = "BT"                  # brightness temperature, K
    RAIN_RATE = "RAIN_RATE"    # mm/h
    RAIN_ACCUM = "RAIN_ACCUM"  # mm
    WIND_SPEED = "WIND_SPEED"  # m/s
    NRCS = "NRCS"              # linear backscatter power
    FLOOD_MASK = "FLOOD_MASK"  # boolean 0/1 (also used for generic masks)
    # Derived, in-memory products (writable to GSF for inspection):
    WIND_CAT = "WIND_CAT"      # wind category rank 0..3
    LOG_RATIO = "LOG_RATIO"    # change-detection ratio, dB


DEFAULT_UNITS = {
    Variable.BT: "K",
    Variable.RAIN_RATE: "mm/h",
    Variable.RAIN_ACCUM: "mm",
    Variable.WIND_SPEED: "m/s",
    Variable.NRCS: "linear",
    Variable.FLOOD_MASK: "bool",
    Variable.WIND_CAT: "category",
    Variable.LOG_RATIO: "dB",
}


class GsfError(ValueError):
    """Malformed GSF content (parse, ordering, or payload errors)."""


class EmptySubsetError(ValueError):
    """A region box selects no cell centers of a grid."""


def parse_time(text: str) -> datetime:
    """Parse an ISO-8601 UTC timestamp like ``2020-10-05T22:40:00Z``."""
    t = text.strip()
    if t.endswith("Z"):
        t = t[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(t)
    except ValueError as exc:
        raise GsfError(f"bad timestamp {text!r}: {exc}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_time(dt: datetime) -> str:
    """Format a UTC timestamp at seconds resolution, e.g. ``2020-10-05T22:40:00Z``."""
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in km on the 111.195 km/deg sphere."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dphi = p2 - p1
    dlmb = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2.0) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dlmb / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(a)))


def local_offset_km(lat_ref: float, dlat: float, dlon: float) -> tuple[float, float]:
    """Flat-earth (north_km, east_km) for a small (dlat, dlon) step at ``lat_ref``."""
    return dlat * KM_PER_DEG, dlon * KM_PER_DEG * math.cos(math.radians(lat_ref))


@dataclass(frozen=True)
class GridGeometry:
    """Shared geometry of a raster: SW cell center, spacing, and shape."""

    lat_min: float
    lon_min: float
    dlat: float
    dlon: float
    nrows: int
    ncols: int

    def __post_init__(self) -> None:
        if self.nrows < 1 or self.ncols < 1:
            raise ValueError(f"grid shape must be >= 1x1, got {self.nrows}x{self.ncols}")
        if self.dlat <= 0 or self.dlon <= 0:
            raise ValueError(f"grid spacing must be positive, got dlat={self.dlat} dlon={self.dlon}")

    @property
    def lat_max(self) -> float:
        """Center latitude of the northernmost row."""
        return self.lat_min + (self.nrows - 1) * self.dlat

    @property
    def lon_max(self) -> float:
        """Center longitude of the easternmost column."""
        return self.lon_min + (self.ncols - 1) * self.dlon

    def cell_lat(self, row: int) -> float:
        """Center latitude of ``row`` (row 0 = north)."""
        return self.lat_min + (self.nrows - 1 - row) * self.dlat

    def cell_lon(self, col: int) -> float:
        return self.lon_min + col * self.dlon

    def lats(self) -> np.ndarray:
        """Per-row center latitudes, north to south (index = row)."""
        return self.lat_min + (self.nrows - 1 - np.arange(self.nrows)) * self.dlat

    def lons(self) -> np.ndarray:
        return self.lon_min + np.arange(self.ncols) * self.dlon


@dataclass(frozen=True)
class RegionBox:
    """Named lat/lon rectangle; province proxies and ROIs are boxes."""

    name: str
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self) -> None:
        if not self.lat_min < self.lat_max:
            raise ValueError(f"region {self.name!r}: lat_min must be < lat_max")
        if not self.lon_min < self.lon_max:
            raise ValueError(f"region {self.name!r}: lon_min must be < lon_max")

    def contains(self, lat: float, lon: float) -> bool:
        """Closed-interval point test."""
        return (self.lat_min <= lat <= self.lat_max) and (self.lon_min <= lon <= self.lon_max)

    def intersects(self, other: "RegionBox") -> bool:
        return (
            self.lat_min <= other.lat_max
            and other.lat_min <= self.lat_max
            and self.lon_min <= other.lon_max
            and other.lon_min <= self.lon_max
        )

    def translated(self, dlat: float, dlon: float, name: str | None = None) -> "RegionBox":
        return RegionBox(
            name if name is not None else self.name,
            self.lat_min + dlat,
            self.lat_max + dlat,
            self.lon_min + dlon,
            self.lon_max + dlon,
        )

    def expanded(self, margin_deg: float) -> "RegionBox":
        return RegionBox(
            self.name,
            self.lat_min - margin_deg,
            self.lat_max + margin_deg,
            self.lon_min - margin_deg,
            self.lon_max + margin_deg,
        )


def _check_bounds(variable: Variable, finite: np.ndarray) -> None:
    """Reject finite (non-nodata) values outside the variable's physical range."""
    if finite.size == 0:
        return
    lo, hi = finite.min(), finite.max()
    if variable is Variable.BT and (lo < 100.0 or hi > 400.0):
        raise ValueError(f"BT values outside [100, 400] K (min={lo}, max={hi})")
    if variable in (Variable.RAIN_RATE, Variable.RAIN_ACCUM) and lo < 0.0:
        raise ValueError(f"{variable.value} values must be >= 0 (min={lo})")
    if variable is Variable.WIND_SPEED and (lo < 0.0 or hi > 100.0):
        raise ValueError(f"WIND_SPEED values outside [0, 100] m/s (min={lo}, max={hi})")
    if variable is Variable.NRCS and lo <= 0.0:
        raise ValueError(f"NRCS values must be > 0 linear (min={lo})")
    if variable is Variable.FLOOD_MASK and not np.isin(finite, (0.0, 1.0)).all():
        raise ValueError("FLOOD_MASK values must be 0 or 1")
    if variable is Variable.WIND_CAT and not np.isin(finite, (0.0, 1.0, 2.0, 3.0)).all():
        raise ValueError("WIND_CAT values must be ranks 0..3")


@dataclass(frozen=True)
class GeoGrid:
    """One georeferenced raster of a single variable at one timestamp.

    ``values`` is an ``nrows x ncols`` float64 array with row 0 = north.
    Cells equal to ``nodata`` are missing; every other value must be finite
    and inside the variable's physical bounds. The array is copied and
    frozen at construction.
    """

    variable: Variable
    units: str
    time: datetime
    lat_min: float
    lon_min: float
    dlat: float
    dlon: float
    nrows: int
    ncols: int
    values: np.ndarray
    nodata: float = DEFAULT_NODATA

    def __post_init__(self) -> None:
        geom = GridGeometry(self.lat_min, self.lon_min, self.dlat, self.dlon, self.nrows, self.ncols)
        vals = np.array(self.values, dtype=np.float64)
        if vals.shape != (self.nrows, self.ncols):
            raise ValueError(f"values shape {vals.shape} != ({self.nrows}, {self.ncols})")
        if not np.isfinite(vals).all():
            raise ValueError("grid values must be finite (use the nodata sentinel for gaps)")
        _check_bounds(self.variable, vals[vals != self.nodata])
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "time", parse_time(format_time(self.time)))
        object.__setattr__(self, "_geometry", geom)

    # -- geometry ----------------------------------------------------------

    @property
    def geometry(self) -> GridGeometry:
        return self._geometry  # type: ignore[attr-defined]

    @property
    def lat_max(self) -> float:
        return self.geometry.lat_max

    @property
    def lon_max(self) -> float:
        return self.geometry.lon_max

    def cell_lat(self, row: int) -> float:
        return self.geometry.cell_lat(row)

    def cell_lon(self, col: int) -> float:
        return self.geometry.cell_lon(col)

    def lats(self) -> np.ndarray:
        return self.geometry.lats()

    def lons(self) -> np.ndarray:
        return self.geometry.lons()

    def extent_box(self, name: str = "extent") -> RegionBox:
        """Box spanning all cell centers (subset by it is the identity)."""
        return RegionBox(name, self.lat_min, self.lat_max, self.lon_min, self.lon_max)

    # -- values ------------------------------------------------------------

    @property
    def finite_mask(self) -> np.ndarray:
        """Boolean array, True where the cell holds data (not nodata)."""
        return self.values != self.nodata

    def with_values(
        self,
        values: np.ndarray,
        variable: Variable | None = None,
        units: str | None = None,
        time: datetime | None = None,
    ) -> "GeoGrid":
        """Derived grid on the same geometry (and nodata sentinel)."""
        var = variable if variable is not None else self.variable
        return GeoGrid(
            variable=var,
            units=units if units is not None else DEFAULT_UNITS.get(var, self.units),
            time=time if time is not None else self.time,
            lat_min=self.lat_min,
            lon_min=self.lon_min,
            dlat=self.dlat,
            dlon=self.dlon,
            nrows=self.nrows,
            ncols=self.ncols,
            values=values,
            nodata=self.nodata,
        )

    def same_geometry(self, other: "GeoGrid") -> bool:
        return self.geometry == other.geometry


@dataclass(frozen=True)
class GridStack:
    """Time-ordered frames of one variable on one shared geometry."""

    frames: tuple[GeoGrid, ...]

    def __init__(self, frames: Sequence[GeoGrid]):
        frames = tuple(frames)
        if not frames:
            raise ValueError("empty stack")
        first = frames[0]
        for i, fr in enumerate(frames[1:], start=1):
            if fr.geometry != first.geometry:
                raise ValueError(f"frame {i} geometry differs from frame 0")
            if fr.variable != first.variable:
                raise ValueError(f"frame {i} variable {fr.variable.value} differs from {first.variable.value}")
            if frames[i].time <= frames[i - 1].time:
                raise GsfError(
                    f"frame times must be strictly increasing: "
                    f"{format_time(frames[i - 1].time)} then {format_time(frames[i].time)}"
                )
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self) -> Iterator[GeoGrid]:
        return iter(self.frames)

    def __getitem__(self, i: int) -> GeoGrid:
        return self.frames[i]

    @property
    def variable(self) -> Variable:
        return self.frames[0].variable

    @property
    def geometry(self) -> GridGeometry:
        return self.frames[0].geometry

    def times(self) -> list[datetime]:
        return [f.time for f in self.frames]

    def between(self, start: datetime, end: datetime) -> list[GeoGrid]:
        """Frames in the trailing window ``start < t <= end``."""
        return [f for f in self.frames if start < f.time <= end]

    def cadence_s(self) -> float:
        """Uniform frame spacing in seconds; error if spacing varies."""
        ts = self.times()
        if len(ts) < 2:
            raise ValueError("cannot infer cadence from a single frame")
        deltas = {(b - a).total_seconds() for a, b in zip(ts, ts[1:])}
        if len(deltas) != 1:
            raise ValueError(f"non-uniform frame cadence: {sorted(deltas)}")
        return deltas.pop()


# ---------------------------------------------------------------------------
# GSF (Grid Stack Format) serialization
# ---------------------------------------------------------------------------

_HEADER_KEYS = ("variable", "units", "time", "nrows", "ncols",
                "lat_min", "lon_min", "dlat", "dlon", "nodata")


def _fmt(v: float) -> str:
    # shortest round-trip decimal for 64-bit reals
    return repr(float(v))


def frame_to_lines(grid: GeoGrid) -> list[str]:
    lines = ["GSF1"]
    head = {
        "variable": grid.variable.value,
        "units": grid.units,
        "time": format_time(grid.time),
        "nrows": str(grid.nrows),
        "ncols": str(grid.ncols),
        "lat_min": _fmt(grid.lat_min),
        "lon_min": _fmt(grid.lon_min),
        "dlat": _fmt(grid.dlat),
        "dlon": _fmt(grid.dlon),
        "nodata": _fmt(grid.nodata),
    }
    lines.extend(f"{k}={head[k]}" for k in _HEADER_KEYS)
    for row in grid.values.tolist():
        lines.append(" ".join(repr(v) for v in row))
    return lines


def serialize_gsf(stack: GridStack) -> str:
    """Canonical GSF text: fixed key order, single spaces, LF endings."""
    chunks: list[str] = []
    for grid in stack:
        chunks.append("\n".join(frame_to_lines(grid)))
    return "\n---\n".join(chunks) + "\n"


def write_gsf(stack: GridStack, path) -> None:
    """Write a stack in canonical GSF form (stable bytes for equal stacks)."""
    text = serialize_gsf(stack)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _parse_frame(lines: list[str], lineno0: int) -> GeoGrid:
    """Parse one frame's lines; lineno0 is the 1-based file line of 'GSF1'."""
    if not lines or lines[0] != "GSF1":
        raise GsfError(f"line {lineno0}: expected 'GSF1' magic, got {lines[0] if lines else '<eof>'!r}")
    if len(lines) < 1 + len(_HEADER_KEYS):
        raise GsfError(f"line {lineno0}: truncated frame header")
    head: dict[str, str] = {}
    for off, key in enumerate(_HEADER_KEYS, start=1):
        line = lines[off]
        k, sep, v = line.partition("=")
        if sep != "=" or k != key:
            raise GsfError(f"line {lineno0 + off}: expected '{key}=...', got {line!r}")
        head[key] = v
    try:
        variable = Variable(head["variable"])
    except ValueError:
        raise GsfError(f"line {lineno0 + 1}: unknown variable {head['variable']!r}") from None
    try:
        nrows = int(head["nrows"])
        ncols = int(head["ncols"])
        lat_min = float(head["lat_min"])
        lon_min = float(head["lon_min"])
        dlat = float(head["dlat"])
        dlon = float(head["dlon"])
        nodata = float(head["nodata"])
    except ValueError as exc:
        raise GsfError(f"line {lineno0}: bad numeric header field: {exc}") from None
    time = parse_time(head["time"])

    data_lines = lines[1 + len(_HEADER_KEYS):]
    if len(data_lines) != nrows:
        raise GsfError(
            f"line {lineno0}: payload error: expected {nrows} data lines, got {len(data_lines)}"
        )
    rows = []
    for r, line in enumerate(data_lines):
        toks = line.split()
        if len(toks) != ncols:
            raise GsfError(
                f"line {lineno0 + 1 + len(_HEADER_KEYS) + r}: payload error: "
                f"expected {ncols} values, got {len(toks)}"
            )
        try:
            rows.append([float(t) for t in toks])
        except ValueError as exc:
            raise GsfError(f"line {lineno0 + 1 + len(_HEADER_KEYS) + r}: bad value: {exc}") from None
    try:
        return GeoGrid(
            variable=variable, units=head["units"], time=time,
            lat_min=lat_min, lon_min=lon_min, dlat=dlat, dlon=dlon,
            nrows=nrows, ncols=ncols, values=np.array(rows), nodata=nodata,
        )
    except ValueError as exc:
        raise GsfError(f"line {lineno0}: invalid frame: {exc}") from None


def parse_gsf(text: str) -> GridStack:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()  # trailing newline
    if not lines:
        raise GsfError("line 1: empty file")
    # split frames on separator lines
    frames: list[GeoGrid] = []
    start = 0
    boundaries = [i for i, ln in enumerate(lines) if ln == "---"] + [len(lines)]
    for b in boundaries:
        frames.append(_parse_frame(lines[start:b], start + 1))
        start = b + 1
    try:
        return GridStack(frames)
    except GsfError:
        raise
    except ValueError as exc:
        raise GsfError(str(exc)) from None


def read_gsf(path) -> GridStack:
    """Read a GSF file; frames come back in file order."""
    with open(path, "r", encoding="utf-8") as fh:
        return parse_gsf(fh.read())


# ---------------------------------------------------------------------------
# Subsetting and collocation
# ---------------------------------------------------------------------------

def subset(grid: GeoGrid, box: RegionBox) -> GeoGrid:
    """Cells whose centers lie inside ``box`` (closed bounds).

    Raises EmptySubsetError when the box selects nothing.
    """
    lats = grid.lats()
    lons = grid.lons()
    rows = np.nonzero((lats >= box.lat_min) & (lats <= box.lat_max))[0]
    cols = np.nonzero((lons >= box.lon_min) & (lons <= box.lon_max))[0]
    if rows.size == 0 or cols.size == 0:
        raise EmptySubsetError(f"region {box.name!r} contains no cell centers of the grid")
    r0, r1 = rows.min(), rows.max()
    c0, c1 = cols.min(), cols.max()
    return GeoGrid(
        variable=grid.variable, units=grid.units, time=grid.time,
        lat_min=grid.cell_lat(r1), lon_min=grid.cell_lon(c0),
        dlat=grid.dlat, dlon=grid.dlon,
        nrows=int(r1 - r0 + 1), ncols=int(c1 - c0 + 1),
        values=grid.values[r0:r1 + 1, c0:c1 + 1],
        nodata=grid.nodata,
    )


def region_indices(geometry: GridGeometry, box: RegionBox) -> tuple[np.ndarray, np.ndarray]:
    """Row and column index arrays of cells whose centers fall in ``box``.

    Either array may be empty; callers treat that as no coverage.
    """
    lats = geometry.lats()
    lons = geometry.lons()
    rows = np.nonzero((lats >= box.lat_min) & (lats <= box.lat_max))[0]
    cols = np.nonzero((lons >= box.lon_min) & (lons <= box.lon_max))[0]
    return rows, cols


def _nearest_index(targets: np.ndarray, origin: float, step: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nearest index along one axis for each target coordinate.

    Ties (target exactly midway) go to the lower index. Returns (index,
    absolute offset in degrees).
    """
    x = (targets - origin) / step
    lo = np.clip(np.floor(x).astype(np.int64), 0, n - 1)
    hi = np.clip(lo + 1, 0, n - 1)
    d_lo = np.abs(targets - (origin + lo * step))
    d_hi = np.abs(targets - (origin + hi * step))
    take_hi = d_hi < d_lo
    idx = np.where(take_hi, hi, lo)
    return idx, np.where(take_hi, d_hi, d_lo)


def resample_nn(src: GeoGrid, target: GridGeometry | GeoGrid) -> GeoGrid:
    """Nearest-neighbor collocation of ``src`` onto ``target``'s geometry.

    Each target cell takes the value of the source cell with the nearest
    center (Euclidean in degrees; ties go south then west). Target cells
    farther than ``max(dlat_src, dlon_src)`` from every source center
    become nodata.
    """
    geom = target.geometry if isinstance(target, GeoGrid) else target
    tlats = geom.lats()
    tlons = geom.lons()
    # Regular axis-aligned grid: the jointly nearest center is the per-axis
    # nearest center.
    rows_src, dlat_off = _nearest_index(tlats, src.lat_min, src.dlat,  src.nrows)
    cols_src, dlon_off = _nearest_index(tlons, src.lon_min, src.dlon, src.ncols)
    rows_src = (src.nrows - 1) - rows_src  # lat index -> row (row 0 = north)

    out = src.values[rows_src[:, None], cols_src[None, :]].copy()
    cutoff = max(src.dlat, src.dlon)
    dist = np.hypot(dlat_off[:, None], dlon_off[None, :])
    out[dist > cutoff] = src.nodata
    return GeoGrid(
        variable=src.variable, units=src.units, time=src.time,
        lat_min=geom.lat_min, lon_min=geom.lon_min,
        dlat=geom.dlat, dlon=geom.dlon, nrows=geom.nrows, ncols=geom.ncols,
        values=out, nodata=src.nodata,
    )


# ---------------------------------------------------------------------------
# Regions file
# ---------------------------------------------------------------------------

def read_regions(path) -> list[RegionBox]:
    """Read a regions file: ``name lat_min lat_max lon_min lon_max`` per line."""
    regions: list[RegionBox] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 5:
                raise ValueError(f"{path}:{lineno}: expected 'name lat_min lat_max lon_min lon_max'")
            name = parts[0]
            try:
                vals = [float(p) for p in parts[1:]]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad number: {exc}") from None
            regions.append(RegionBox(name, vals[0], vals[1], vals[2], vals[3]))
    return regions


def write_regions(regions: Sequence[RegionBox], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in regions:
            fh.write(f"{r.name} {_fmt(r.lat_min)} {_fmt(r.lat_max)} {_fmt(r.lon_min)} {_fmt(r.lon_max)}\n")
