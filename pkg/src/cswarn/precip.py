"""Rainfall accumulation, heavy-rain flagging, and per-region persistence.

Frame timestamps mark the start of the interval each rate applies to, so
an accumulation window [t0, t1) sums rate * dt over frames with
t0 <= t < t1; splitting a window at any frame boundary is then exactly
additive. Missing cells contribute zero water but are surfaced through a
per-cell missing fraction; inventing rainfall by interpolation is worse
than under-counting with a flag.

Decision-time statistics (:func:`region_rain_stats`) use a trailing
window (start, end], the same convention the fusion stage applies to all
sensors at an epoch.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime

import numpy as np

from .geogrid import EmptySubsetError, GeoGrid, GridStack, RegionBox, Variable, region_indices

R_HEAVY_DEFAULT_MMH = 8.0


class EmptyWindowError(ValueError):
    """An accumulation or stats window contains no frames."""


@dataclass(frozen=True)
class Accumulation:
    """Accumulated depth plus per-cell data availability."""

    grid: GeoGrid            # RAIN_ACCUM, mm
    missing_fraction: np.ndarray  # per cell, fraction of window frames missing

    def __post_init__(self) -> None:
        self.missing_fraction.setflags(write=False)


@dataclass(frozen=True)
class RainStats:
    """Per-region rainfall summary over one window."""

    region: str
    window_start: datetime
    window_end: datetime
    max_rate_mmh: float
    accum_mm: float
    persistence_h: float
    missing_fraction: float


def _frame_hours(stack: GridStack, dt_s: float | None) -> float:
    if dt_s is not None:
        if dt_s <= 0:
            raise ValueError(f"dt_s must be > 0, got {dt_s}")
        return dt_s / 3600.0
    return stack.cadence_s() / 3600.0


def accumulate(
    stack: GridStack,
    start: datetime,
    end: datetime,
    dt_s: float | None = None,
) -> Accumulation:
    """Cellwise sum of rate * dt (mm) over frames with start <= t < end.

    ``dt_s`` overrides the inferred uniform cadence (required for
    single-frame stacks). Missing cells count as zero depth.
    """
    if stack.variable is not Variable.RAIN_RATE:
        raise TypeError(f"accumulate needs RAIN_RATE frames, got {stack.variable.value}")
    frames = [f for f in stack if start <= f.time < end]
    if not frames:
        raise EmptyWindowError(f"no rain frames in [{start}, {end})")
    dt_h = _frame_hours(stack, dt_s)
    total = np.zeros(frames[0].values.shape)
    missing = np.zeros(frames[0].values.shape)
    for f in frames:
        finite = f.finite_mask
        total += np.where(finite, f.values, 0.0) * dt_h
        missing += ~finite
    grid = frames[0].with_values(
        total, variable=Variable.RAIN_ACCUM, units="mm", time=end
    )
    return Accumulation(grid, missing / len(frames))


def heavy_mask(rate: GeoGrid, r_heavy: float = R_HEAVY_DEFAULT_MMH) -> GeoGrid:
    """Boolean grid: 1 where finite rate >= ``r_heavy``; nodata kept."""
    if rate.variable is not Variable.RAIN_RATE:
        raise TypeError(f"heavy_mask needs a RAIN_RATE grid, got {rate.variable.value}")
    finite = rate.finite_mask
    out = np.where(finite, (rate.values >= r_heavy).astype(np.float64), rate.nodata)
    return rate.with_values(out, variable=Variable.FLOOD_MASK, units="bool")


def region_rain_stats(
    stack: GridStack,
    region: RegionBox,
    start: datetime,
    end: datetime,
    r_heavy: float = R_HEAVY_DEFAULT_MMH,
    dt_s: float | None = None,
) -> RainStats:
    """Rainfall summary over region cells and frames with start < t <= end.

    - max_rate_mmh: max finite rate over all (cell, frame) samples.
    - accum_mm: accumulated depth of the wettest cell in the region.
    - persistence_h: longest run of consecutive frames whose region-max
      rate reaches ``r_heavy``, converted to hours.
    - missing_fraction: missing share of all (cell, frame) samples.

    Frames whose region cells are all missing interrupt a heavy run; rain
    that was not observed never counts as heavy.
    """
    if stack.variable is not Variable.RAIN_RATE:
        raise TypeError(f"region_rain_stats needs RAIN_RATE frames, got {stack.variable.value}")
    rows, cols = region_indices(stack.geometry, region)
    if rows.size == 0 or cols.size == 0:
        raise EmptySubsetError(f"region {region.name!r} is outside the rain grid extent")
    frames = stack.between(start, end)
    if not frames:
        raise EmptyWindowError(f"no rain frames in ({start}, {end}]")
    dt_h = _frame_hours(stack, dt_s)

    max_rate = 0.0
    missing = 0
    heavy_flags: list[bool] = []
    accum = np.zeros((rows.size, cols.size))
    for f in frames:
        block = f.values[np.ix_(rows, cols)]
        finite = block != f.nodata
        missing += int((~finite).sum())
        vals = block[finite]
        frame_max = float(vals.max()) if vals.size else 0.0
        max_rate = max(max_rate, frame_max)
        heavy_flags.append(vals.size > 0 and frame_max >= r_heavy)
        accum += np.where(finite, block, 0.0) * dt_h

    longest = run = 0
    for flag in heavy_flags:
        run = run + 1 if flag else 0
        longest = max(longest, run)
    # A window whose edges fall inside frame intervals can admit more frame
    # coverage than its own span; persistence never exceeds the window.
    window_h = (end - start).total_seconds() / 3600.0
    persistence_h = min(longest * dt_h, window_h)

    return RainStats(
        region=region.name,
        window_start=start,
        window_end=end,
        max_rate_mmh=max_rate,
        accum_mm=float(accum.max()),
        persistence_h=persistence_h,
        missing_fraction=missing / (len(frames) * rows.size * cols.size),
    )
