"""Indicator assembly, the warning rule table, and the per-epoch engine."""

from __future__ import annotations

import dataclasses
import math
from datetime import timedelta

import numpy as np
import pytest

from cswarn.convection import detect
from cswarn.fusion import (
    FrameDetections,
    FusionEngine,
    RegionIndicators,
    RuleSet,
    WarnLevel,
    build_indicators,
    decide,
    run_epoch,
)
from cswarn.geogrid import KM_PER_DEG, GridStack, RegionBox, Variable
from cswarn.scenario import generate, paper_replay_spec
from cswarn.tracking import Track
from cswarn.wind import WindCategory

from conftest import T0, make_grid, make_stack
from test_tracking import obj_at

REGION = RegionBox("R", 10.5, 12.5, 20.5, 22.5)


def indicators(region="R", epoch=T0, fraction=0.0, min_bt=None,
               wind=WindCategory.NONE, wind_flag=False, rain=0.0,
               persistence=0.0, approach=None, sources=None):
    return RegionIndicators(
        region=region, epoch=epoch, deep_cloud_fraction=fraction,
        min_bt_K=min_bt, wind_cat=wind, wind_no_observation=wind_flag,
        max_rain_mmh=rain, rain_persistence_h=persistence,
        approach_s=approach, source_count=sources or {},
    )


def detections_frame(bt_grid):
    return FrameDetections(time=bt_grid.time, geometry=bt_grid.geometry,
                           objects=tuple(detect(bt_grid)))


class TestRegionIndicatorsValidation:
    def test_fraction_outside_unit_interval_rejected(self):
        with pytest.raises(ValueError):
            indicators(fraction=1.5)
        with pytest.raises(ValueError):
            indicators(fraction=-0.1)

    def test_finite_approach_must_be_positive(self):
        with pytest.raises(ValueError):
            indicators(approach=0)
        assert indicators(approach=600).approach_s == 600

    def test_negative_rain_rejected(self):
        with pytest.raises(ValueError):
            indicators(rain=-1.0)


class TestBuildIndicators:
    def test_all_quiet(self):
        ind = build_indicators(T0, REGION, detections=[], tracks=[],
                               wind_cat_stacks=[], rain_stats=None)
        assert ind.deep_cloud_fraction == 0.0
        assert ind.min_bt_K is None
        assert ind.wind_cat == WindCategory.NONE
        assert ind.wind_no_observation is True
        assert ind.max_rain_mmh == 0.0
        assert ind.rain_persistence_h == 0.0
        assert ind.approach_s is None

    def test_region_fully_covered_by_cold_cloud(self):
        bt = make_grid(np.full((4, 4), 205.0))
        ind = build_indicators(T0, REGION, detections=[detections_frame(bt)],
                               tracks=[], wind_cat_stacks=[], rain_stats=None)
        assert ind.deep_cloud_fraction == 1.0
        assert ind.min_bt_K == 205.0

    def test_partial_coverage_fraction(self):
        values = np.full((4, 4), 280.0)
        values[0, 1] = 205.0    # fourth blob pixel, north of the region
        values[1, 1] = 205.0
        values[1, 2] = 205.0
        values[2, 1] = 205.0    # region block is rows 1-2 x cols 1-2
        bt = make_grid(values)
        ind = build_indicators(T0, REGION, detections=[detections_frame(bt)],
                               tracks=[], wind_cat_stacks=[], rain_stats=None)
        assert ind.deep_cloud_fraction == pytest.approx(0.75)

    def test_approach_is_min_over_tracks(self):
        lat = 16.0
        region = RegionBox("coast", 15.8, 16.2, 104.0, 106.0)
        deg = lambda km: km / (KM_PER_DEG * math.cos(math.radians(lat)))
        dlon = deg(10.0 * 600.0 / 1000.0)

        def westward(track_id, west_edge_gap_km):
            lon_last = region.lon_max + deg(west_edge_gap_km) + 0.25
            track = Track(track_id=track_id)
            for k in range(3):
                track.add(obj_at(k + 1, lat, lon_last + (2 - k) * dlon,
                                 time=T0 + timedelta(seconds=(k - 2) * 600)))
            return track

        near = westward(1, 35.9)    # arrives at the 3600 s horizon
        far = westward(2, 71.9)     # arrives at the 7200 s horizon
        ind = build_indicators(T0, region, detections=[], tracks=[far, near],
                               wind_cat_stacks=[], rain_stats=None)
        assert ind.approach_s == 3600

    def test_stale_tracks_are_ignored(self):
        lat, lon = 16.0, 106.5
        track = Track(track_id=1)
        old = T0 - timedelta(seconds=20000)
        track.add(obj_at(1, lat, lon, time=old))
        track.add(obj_at(2, lat, lon - 0.05, time=old + timedelta(seconds=600)))
        ind = build_indicators(T0, REGION, detections=[], tracks=[track],
                               wind_cat_stacks=[], rain_stats=None, window_s=10800)
        assert ind.approach_s is None


class TestDecide:
    def test_all_quiet_is_none(self):
        report = decide(indicators())
        assert report.level == WarnLevel.NONE
        assert report.triggered_rules == ()
        assert report.lead_time_s is None

    def test_severe_via_r3(self):
        ind = indicators(fraction=1.0, min_bt=200.0, wind=WindCategory.SEVERE,
                         rain=10.0, persistence=4.0)
        report = decide(ind)
        assert report.level == WarnLevel.SEVERE
        assert "R3" in report.triggered_rules
        assert report.lead_time_s is None   # nothing approaching

    def test_warning_from_severe_wind_approaching(self):
        ind = indicators(wind=WindCategory.SEVERE, approach=10000)
        report = decide(ind)
        assert report.level == WarnLevel.WARNING
        assert report.lead_time_s == 10000
        assert set(report.triggered_rules) == {"R1", "R2"}

    def test_watch_from_cloud_fraction_alone(self):
        report = decide(indicators(fraction=0.2))
        assert report.level == WarnLevel.WATCH
        assert report.triggered_rules == ("R1",)

    def test_watch_from_moderate_wind_alone(self):
        report = decide(indicators(wind=WindCategory.MODERATE))
        assert report.level == WarnLevel.WATCH

    def test_weak_wind_does_not_watch(self):
        report = decide(indicators(wind=WindCategory.WEAK))
        assert report.level == WarnLevel.NONE

    def test_warning_from_cloud_and_rain(self):
        report = decide(indicators(fraction=0.5, rain=9.0))
        assert report.level == WarnLevel.WARNING
        assert set(report.triggered_rules) == {"R1", "R2"}

    def test_lead_time_clamped_to_one_day(self):
        ind = indicators(wind=WindCategory.SEVERE, approach=86400)
        assert decide(ind).lead_time_s == 86400

    def test_level_equals_max_of_triggered_rules(self):
        rules = RuleSet()
        cases = [
            indicators(fraction=0.5),
            indicators(fraction=0.5, rain=9.0),
            indicators(fraction=0.5, rain=9.0, persistence=3.5, wind=WindCategory.SEVERE),
            indicators(wind=WindCategory.SEVERE, approach=3600),
        ]
        for ind in cases:
            report = decide(ind, rules)
            triggered = dict(rules.evaluate(ind))
            assert set(report.triggered_rules) == set(triggered)
            assert report.level == max(triggered.values(), default=WarnLevel.NONE)

    def test_custom_thresholds_respected(self):
        rules = RuleSet(min_cloud_fraction=0.5)
        assert decide(indicators(fraction=0.3), rules).level == WarnLevel.NONE
        assert decide(indicators(fraction=0.6), rules).level == WarnLevel.WATCH

    def test_monotone_under_single_field_worsening(self):
        base = indicators(fraction=0.15, rain=7.0, persistence=2.0,
                          wind=WindCategory.WEAK, approach=7200)
        worse_steps = [
            dict(fraction=0.25), dict(rain=9.0), dict(persistence=3.5),
            dict(wind=WindCategory.SEVERE), dict(approach=600),
        ]
        base_level = decide(base).level
        for step in worse_steps:
            fields = dict(fraction=0.15, rain=7.0, persistence=2.0,
                          wind=WindCategory.WEAK, approach=7200)
            fields.update(step)
            assert decide(indicators(**fields)).level >= base_level


class TestWarningReportInvariants:
    def test_elevated_level_requires_rules(self):
        with pytest.raises(ValueError):
            dataclasses.replace(decide(indicators()), level=WarnLevel.WATCH)

    def test_lead_time_present_iff_approaching(self):
        with_approach = decide(indicators(wind=WindCategory.SEVERE, approach=9000))
        assert with_approach.lead_time_s is not None
        without = decide(indicators(fraction=0.9, rain=10.0))
        assert without.lead_time_s is None


class TestRunEpoch:
    def test_empty_region_list(self):
        assert run_epoch([], T0) == []

    def test_duplicate_region_names_rejected(self):
        boxes = [RegionBox("R", 10.5, 12.5, 20.5, 22.5),
                 RegionBox("R", 10.6, 12.6, 20.6, 22.6)]
        with pytest.raises(ValueError, match="duplicate"):
            run_epoch(boxes, T0)

    def test_reports_sorted_by_region_name(self):
        boxes = [RegionBox("ZULU", 10.5, 11.5, 20.5, 21.5),
                 RegionBox("ALFA", 11.6, 12.5, 21.6, 22.5)]
        reports = run_epoch(boxes, T0)
        assert [r.region for r in reports] == ["ALFA", "ZULU"]

    def test_no_observation_safety(self):
        reports = run_epoch([REGION], T0)
        assert len(reports) == 1
        report = reports[0]
        assert report.level == WarnLevel.NONE
        assert report.indicators.wind_no_observation is True
        assert report.indicators.min_bt_K is None
        assert all(n == 0 for n in report.indicators.source_count.values())

    def test_quiet_stacks_stay_none(self):
        bt = make_stack([np.full((4, 4), 280.0)] * 3, variable=Variable.BT, dt_s=1800)
        rain = make_stack([np.zeros((4, 4))] * 3, variable=Variable.RAIN_RATE, dt_s=1800)
        epoch = T0 + timedelta(seconds=3600)
        reports = run_epoch([REGION], epoch, bt=bt, rain=rain)
        assert reports[0].level == WarnLevel.NONE
        assert reports[0].indicators.source_count == {"bt": 1, "rain": 1, "wind": 0}

    def test_cold_cloud_with_heavy_rain_warns(self):
        bt = make_stack([np.full((4, 4), 205.0)] * 3, variable=Variable.BT, dt_s=1800)
        rain = make_stack([np.full((4, 4), 9.0)] * 3, variable=Variable.RAIN_RATE, dt_s=1800)
        epoch = T0 + timedelta(seconds=3600)
        reports = run_epoch([REGION], epoch, bt=bt, rain=rain)
        assert reports[0].level >= WarnLevel.WARNING
        assert "R2" in reports[0].triggered_rules


class TestFusionEngine:
    def test_duplicate_regions_rejected_at_construction(self):
        with pytest.raises(ValueError, match="duplicate"):
            FusionEngine([REGION, REGION])

    def test_run_is_deterministic(self):
        bt = make_stack([np.full((4, 4), 205.0)] * 5, variable=Variable.BT, dt_s=1800)
        rain = make_stack([np.full((4, 4), 9.0)] * 5, variable=Variable.RAIN_RATE, dt_s=1800)
        end = T0 + timedelta(seconds=4 * 1800)
        runs = [FusionEngine([REGION], bt=bt, rain=rain).run(T0, end) for _ in range(2)]
        assert runs[0] == runs[1]

    def test_rain_stats_exposed_per_epoch(self):
        rain = make_stack([np.full((4, 4), 9.0)] * 3, variable=Variable.RAIN_RATE, dt_s=1800)
        engine = FusionEngine([REGION], rain=rain)
        stats = engine.rain_stats_at(T0 + timedelta(seconds=3600), REGION)
        assert stats is not None
        assert stats.max_rate_mmh == pytest.approx(9.0)
        assert engine.rain_stats_at(T0 + timedelta(days=30), REGION) is None


class TestWestwardScenarioLead:
    def test_downstream_region_warned_well_before_arrival(self):
        spec = dataclasses.replace(paper_replay_spec(), duration_s=14400)
        data = generate(spec, seed=0)
        regions = list(spec.regions)
        engine = FusionEngine(regions, bt=data.bt, rain=data.rain,
                              wind_speed=dict(data.wind))
        reports = engine.run(data.bt.frames[0].time, data.bt.frames[-1].time)

        arrival = data.truth.intersections["DN"]
        warned_at = min(r.epoch for r in reports
                        if r.region == "DN" and r.level >= WarnLevel.WARNING)
        assert (arrival - warned_at).total_seconds() >= 7200

        northern = [r for r in reports if r.region == "NA"]
        assert northern and all(r.level == WarnLevel.NONE for r in northern)
