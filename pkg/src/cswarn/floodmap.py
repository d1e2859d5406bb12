"""Radar change-detection flood mapping and warning verification.

Flooding smooths a wind-roughened land/sea surface, so flooded cells
darken in C-band backscatter: the decibel ratio of a post-event image
over a pre-event reference drops. Cells at or below the ratio threshold
(default -3 dB) are flagged, tiny 8-connected specks are removed, and the
result is a boolean flood mask. Brightening changes are deliberately
ignored.

Verification compares the mask against previously issued warnings per
region: a region counts as flooded when at least ``f_flood`` of its cells
are flagged, and as warned when any report at or before the flood time
reached WARNING. Hits, misses, and false alarms summarize into the usual
POD and FAR scores.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import datetime
from typing import Mapping, Sequence

import numpy as np

from .convection import label_array
from .fusion import WarnLevel, WarningReport
from .geogrid import GeoGrid, RegionBox, Variable, region_indices

logger = logging.getLogger(__name__)

THRESHOLD_DB_DEFAULT = -3.0
MIN_REGION_PX_DEFAULT = 8
F_FLOOD_DEFAULT = 0.01


class NoWarningsError(ValueError):
    """Validation attempted with no warning issued before the flood time."""


@dataclass(frozen=True)
class FloodMask:
    """Boolean flood grid plus how it was derived."""

    grid: GeoGrid
    flood_time: datetime
    reference_time: datetime | None = None
    threshold_db: float | None = None
    min_region_px: int | None = None

    def __post_init__(self) -> None:
        if self.grid.variable is not Variable.FLOOD_MASK:
            raise ValueError(f"flood mask must be FLOOD_MASK, got {self.grid.variable.value}")
        if self.reference_time is not None and not self.flood_time > self.reference_time:
            raise ValueError("flood time must be after the reference time")


def log_ratio_db(flood: GeoGrid, ref: GeoGrid) -> GeoGrid:
    """Cellwise 10*log10(flood/ref) in dB; nodata propagates.

    Nonpositive backscatter cannot be ratioed; such cells become nodata
    and their count is logged as a warning.
    """
    for grid, label in ((flood, "flood"), (ref, "reference")):
        if grid.variable is not Variable.NRCS:
            raise TypeError(f"{label} grid must be NRCS, got {grid.variable.value}")
    if not flood.same_geometry(ref):
        raise ValueError("flood and reference grids have different geometry")
    valid = flood.finite_mask & ref.finite_mask
    positive = valid & (flood.values > 0) & (ref.values > 0)
    bad = int((valid & ~positive).sum())
    if bad:
        logger.warning("%d nonpositive backscatter cells set to nodata", bad)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = 10.0 * np.log10(flood.values / ref.values)
    out = np.where(positive, ratio, flood.nodata)
    return flood.with_values(out, variable=Variable.LOG_RATIO, units="dB")


def flood_mask(
    ratio_db: GeoGrid,
    threshold_db: float = THRESHOLD_DB_DEFAULT,
    min_region_px: int = MIN_REGION_PX_DEFAULT,
    reference_time: datetime | None = None,
) -> FloodMask:
    """Threshold the ratio grid and drop specks below ``min_region_px``."""
    if min_region_px < 1:
        raise ValueError("min_region_px must be >= 1")
    finite = ratio_db.finite_mask
    flooded = finite & (ratio_db.values <= threshold_db)
    labels, count = label_array(flooded)
    if count:
        sizes = np.bincount(labels.ravel(), minlength=count + 1)
        keep = sizes >= min_region_px
        keep[0] = False
        flooded = keep[labels]
    out = np.where(finite, flooded.astype(np.float64), ratio_db.nodata)
    grid = ratio_db.with_values(out, variable=Variable.FLOOD_MASK, units="bool")
    return FloodMask(
        grid=grid,
        flood_time=ratio_db.time,
        reference_time=reference_time,
        threshold_db=threshold_db,
        min_region_px=min_region_px,
    )


def flooded_regions(
    mask: FloodMask,
    regions: Sequence[RegionBox],
    f_flood: float = F_FLOOD_DEFAULT,
) -> dict[str, bool]:
    """Region name -> whether its flooded-cell fraction reaches ``f_flood``."""
    out: dict[str, bool] = {}
    for region in regions:
        rows, cols = region_indices(mask.grid.geometry, region)
        if rows.size == 0 or cols.size == 0:
            out[region.name] = False
            continue
        block = mask.grid.values[np.ix_(rows, cols)]
        out[region.name] = float((block == 1.0).sum()) / block.size >= f_flood
    return out


@dataclass(frozen=True)
class ValidationScore:
    """Contingency counts of warnings vs observed flooding."""

    hits: int
    misses: int
    false_alarms: int
    correct_negatives: int
    outcomes: Mapping[str, str]  # region -> hit | miss | false_alarm | quiet
    flooded: Mapping[str, bool]
    warned: Mapping[str, bool]

    @property
    def pod(self) -> float | None:
        events = self.hits + self.misses
        return self.hits / events if events else None

    @property
    def far(self) -> float | None:
        warned = self.hits + self.false_alarms
        return self.false_alarms / warned if warned else None


def validate(
    warnings: Sequence[WarningReport],
    mask: FloodMask,
    regions: Sequence[RegionBox],
    f_flood: float = F_FLOOD_DEFAULT,
    min_level: WarnLevel = WarnLevel.WARNING,
) -> ValidationScore:
    """Score warnings issued at or before the flood time against the mask."""
    prior = [w for w in warnings if w.epoch <= mask.flood_time]
    if not prior:
        raise NoWarningsError(
            f"no warnings issued at or before the flood time {mask.flood_time}"
        )
    warned = {r.name: False for r in regions}
    for w in prior:
        if w.region in warned and w.level >= min_level:
            warned[w.region] = True
    flooded = flooded_regions(mask, regions, f_flood)

    outcomes: dict[str, str] = {}
    hits = misses = false_alarms = quiet = 0
    for region in regions:
        name = region.name
        if flooded[name] and warned[name]:
            outcomes[name] = "hit"
            hits += 1
        elif flooded[name]:
            outcomes[name] = "miss"
            misses += 1
        elif warned[name]:
            outcomes[name] = "false_alarm"
            false_alarms += 1
        else:
            outcomes[name] = "quiet"
            quiet += 1
    return ValidationScore(
        hits=hits,
        misses=misses,
        false_alarms=false_alarms,
        correct_negatives=quiet,
        outcomes=outcomes,
        flooded=flooded,
        warned=warned,
    )
