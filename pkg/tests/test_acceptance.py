"""Acceptance gate: nine end-to-end criteria, one test (and one pytest -v
line) each.  Every test carries its own runtime budget; tolerances are
asserted exactly as stated, never loosened to make a run pass."""

from __future__ import annotations

import math
import time
from dataclasses import replace
from datetime import timedelta
from itertools import product

import numpy as np
import pytest

from cswarn import cli
from cswarn import floodmap as fm
from cswarn import scenario as sc
from cswarn.convection import convective_mask, detect, label_array, label_components, summarize
from cswarn.fusion import FusionEngine, RegionIndicators, RuleSet, WarnLevel, decide
from cswarn.geogrid import GridGeometry, GridStack, Variable, parse_time
from cswarn.precip import accumulate
from cswarn.tracking import Track, build_tracks, motion_vector
from cswarn.wind import (
    GmfGeometry,
    WindCategory,
    categorize,
    get_gmf,
    gmf_forward,
    gmf_invert,
    registered_gmfs,
)

from conftest import T0, make_grid, make_stack
from oracles import blob_stats, flood_mask_oracle, union_find_components

GMF_GEOM = GmfGeometry(incidence_deg=35.0, rel_azimuth_deg=0.0)


def bearing_error_deg(a: float, b: float) -> float:
    return abs(((a - b + 180.0) % 360.0) - 180.0)


def test_c1_threshold_constants_exact():
    t_start = time.perf_counter()

    speeds = [3.0, 5.0, 7.0, 10.0, 12.0, 15.0, 18.0, 25.0]
    expected = [
        WindCategory.NONE, WindCategory.WEAK, WindCategory.WEAK,
        WindCategory.MODERATE, WindCategory.MODERATE, WindCategory.SEVERE,
        WindCategory.SEVERE, WindCategory.SEVERE,
    ]
    assert [categorize(v) for v in speeds] == expected

    bt = make_grid([[220.0, 220.1], [219.9, 300.0]])
    mask = convective_mask(bt)
    assert mask.values.tolist() == [[1.0, 0.0], [1.0, 0.0]]

    gmf = get_gmf("synth1")
    above = 2.0 * gmf_forward(gmf, 25.0, GMF_GEOM)
    result = gmf_invert(gmf, above, GMF_GEOM)
    assert result.speed_mps == 25.0
    assert result.clipped == "high"

    assert time.perf_counter() - t_start < 1.0


def test_c2_gmf_round_trip_within_1e_3():
    t_start = time.perf_counter()

    speeds = [0.5 * k for k in range(51)]  # 0, 0.5, ..., 25
    assert "synth1" in registered_gmfs()
    for name in registered_gmfs():
        gmf = get_gmf(name)
        incidence = min(max(35.0, gmf.incidence_min), gmf.incidence_max)
        geom = GmfGeometry(incidence_deg=incidence, rel_azimuth_deg=0.0)
        worst = max(
            abs(v - gmf_invert(gmf, gmf_forward(gmf, v, geom), geom).speed_mps)
            for v in speeds
        )
        assert worst <= 1e-3, f"{name}: worst round-trip error {worst} m/s"

    assert time.perf_counter() - t_start < 1.0


def test_c3_tracking_within_5pct_5deg():
    t_start = time.perf_counter()

    geom = GridGeometry(lat_min=15.0, lon_min=105.0, dlat=0.02, dlon=0.02,
                        nrows=100, ncols=100)
    start = parse_time("2020-10-05T00:00:00Z")
    for speed, bearing in product((5.0, 10.0, 20.0), (0.0, 90.0, 270.0)):
        cell = sc.CellSpec(name="c", lat=16.0, lon=106.0,
                           speed_mps=speed, bearing_deg=bearing,
                           min_bt_K=200.0, radius_km=30.0)
        spec = sc.ScenarioSpec(geometry=geom, start_time=start,
                               duration_s=3600, cells=(cell,))
        data = sc.generate(spec)

        truth = {s.time: s for s in data.truth.centroids}
        frames = [detect(f) for f in data.bt]
        tracks = build_tracks(frames)
        assert len(tracks) == 1, f"{speed} m/s @ {bearing} deg: {len(tracks)} tracks"
        obs = tracks[0].observations
        assert len(obs) >= 3
        for k in range(3, len(obs) + 1):
            motion = motion_vector(Track(1, obs[:k]))
            want = truth[obs[k - 1].time]
            assert abs(motion.speed_mps - want.speed_mps) <= 0.05 * want.speed_mps, (
                f"{speed} m/s @ {bearing} deg, {k} frames: got {motion.speed_mps}"
            )
            assert bearing_error_deg(motion.bearing_deg, want.bearing_deg) <= 5.0, (
                f"{speed} m/s @ {bearing} deg, {k} frames: got {motion.bearing_deg}"
            )

    assert time.perf_counter() - t_start < 5.0


def test_c4_labeling_matches_union_find_oracle():
    t_start = time.perf_counter()

    rng = np.random.default_rng(42)
    geom = GridGeometry(lat_min=10.0, lon_min=20.0, dlat=0.1, dlon=0.1,
                        nrows=32, ncols=32)
    for i in range(200):
        fill = (0.2, 0.35, 0.5, 0.65)[i % 4]
        mask = rng.random((32, 32)) < fill
        bt = make_grid(np.where(mask, rng.uniform(180.0, 220.0, mask.shape), 280.0),
                       Variable.BT, geometry=geom)
        components = union_find_components(mask)

        labels, count = label_array(mask)
        assert count == len(components)
        seen_ids = set()
        for comp in components:
            ids = {int(labels[r, c]) for r, c in comp}
            assert len(ids) == 1, "oracle component split across labels"
            seen_ids.add(ids.pop())
        assert len(seen_ids) == len(components), "distinct components share a label"

        objects = summarize(bt, label_components(convective_mask(bt), min_area_px=1))
        assert len(objects) == len(components)
        for obj, comp in zip(objects, components):  # both in raster order
            stats = blob_stats(bt, comp)
            assert obj.pixel_count == stats["pixel_count"]
            assert obj.centroid_lat == pytest.approx(stats["centroid_lat"], rel=1e-12)
            assert obj.centroid_lon == pytest.approx(stats["centroid_lon"], rel=1e-12)
            assert obj.min_bt == pytest.approx(stats["min_bt"], rel=1e-12)
            assert obj.mean_bt == pytest.approx(stats["mean_bt"], rel=1e-12)
            assert obj.area_km2 == pytest.approx(stats["area_km2"], rel=1e-10)

    assert time.perf_counter() - t_start < 5.0


def test_c5_rain_conservation_and_additivity():
    t_start = time.perf_counter()

    rng = np.random.default_rng(7)
    n_frames, dt_s = 8, 1800

    # Conservation: accumulated depth equals the analytic integral of the
    # injected piecewise-constant rates to 1e-9 relative error.
    rates = [rng.uniform(0.0, 30.0, (6, 6)) for _ in range(n_frames)]
    stack = make_stack(rates, dt_s=dt_s)
    t0, t_end = stack[0].time, stack[-1].time + timedelta(seconds=dt_s)
    acc = accumulate(stack, t0, t_end)
    for r in range(6):
        for c in range(6):
            analytic = math.fsum(frame[r, c] * (dt_s / 3600.0) for frame in rates)
            assert abs(acc.grid.values[r, c] - analytic) <= 1e-9 * analytic

    # Additivity: with exactly representable rate*dt products, splitting the
    # window at any frame boundary changes nothing, bit for bit.
    quantized = [rng.integers(0, 120, (6, 6)) * 0.25 for _ in range(n_frames)]
    qstack = make_stack(quantized, dt_s=dt_s)
    whole = accumulate(qstack, t0, t_end).grid.values
    for k in range(1, n_frames):
        split = qstack[k].time
        first = accumulate(qstack, t0, split).grid.values
        second = accumulate(qstack, split, t_end).grid.values
        assert np.array_equal(first + second, whole), f"split at frame {k}"

    assert time.perf_counter() - t_start < 1.0


def test_c6_flood_mask_matches_oracle():
    t_start = time.perf_counter()

    rng = np.random.default_rng(11)
    geom = GridGeometry(lat_min=10.0, lon_min=20.0, dlat=0.01, dlon=0.01,
                        nrows=64, ncols=64)
    t_ref = parse_time("2020-10-05T00:00:00Z")
    t_flood = parse_time("2020-10-06T00:00:00Z")
    for _ in range(100):
        ref_vals = rng.uniform(0.005, 0.05, (64, 64))
        flood_vals = ref_vals * 10 ** (rng.uniform(-6.0, 3.0, (64, 64)) / 10.0)
        holes = rng.random((64, 64)) < 0.08
        ref_vals[holes] = -9999.0
        ref = make_grid(ref_vals, Variable.NRCS, geometry=geom, time=t_ref)
        flood = make_grid(flood_vals, Variable.NRCS, geometry=geom, time=t_flood)

        ratio = fm.log_ratio_db(flood, ref)
        reverse = fm.log_ratio_db(ref, flood)
        valid = ratio.finite_mask
        assert np.array_equal(valid, reverse.finite_mask)
        assert np.allclose(ratio.values[valid], -reverse.values[valid], atol=1e-9)

        got = fm.flood_mask(ratio, threshold_db=-3.0, min_region_px=8,
                            reference_time=t_ref)
        want = flood_mask_oracle(ratio.values, ratio.nodata, -3.0, 8)
        assert np.array_equal(got.grid.values, want)

    assert time.perf_counter() - t_start < 5.0


def test_c7_paper_replay_warns_dn_two_hours_early():
    t_start = time.perf_counter()

    spec = sc.paper_replay_spec()
    data = sc.generate(spec, seed=0)
    cfg = cli.EngineConfig()
    engine = FusionEngine(
        spec.regions,
        bt=data.bt,
        rain=data.rain,
        wind_speed=dict(data.wind),
        t_deep=cfg.t_deep,
        min_area_px=cfg.min_area_px,
        bins=cfg.bins,
        rules=cfg.rules(),
        window_s=cfg.window_s,
        max_gap_km=cfg.max_gap_km,
        fit_window=cfg.fit_window,
    )
    reports = engine.run(data.bt[0].time, data.bt[-1].time, cfg.epoch_s)

    arrival = data.truth.intersections["DN"]
    warned = [
        r.epoch for r in reports
        if r.region == "DN" and r.level >= WarnLevel.WARNING
    ]
    assert warned, "region DN never reached WARNING"
    lead_s = (arrival - min(warned)).total_seconds()
    assert lead_s >= 7200.0, f"DN warned only {lead_s} s before arrival"

    truth_grid = sc.truth_flood_grid(spec)
    mask = fm.FloodMask(grid=truth_grid, flood_time=truth_grid.time)
    score = fm.validate(reports, mask, spec.regions, f_flood=cfg.f_flood)
    assert score.pod == 1.0
    assert score.far == 0.0

    assert time.perf_counter() - t_start < 30.0


def test_c8_fusion_monotone_on_indicator_lattice():
    t_start = time.perf_counter()

    fractions = [round(0.1 * k, 1) for k in range(11)]
    winds = list(WindCategory)
    rains = [0.0, 8.0, 13.0]
    persists = [0.0, 3.0, 6.0]
    approaches = [None, 3600]
    rules = RuleSet()

    points = []
    for f, w, r, p, a in product(fractions, winds, rains, persists, approaches):
        ind = RegionIndicators(
            region="R", epoch=T0, deep_cloud_fraction=f, min_bt_K=200.0,
            wind_cat=w, wind_no_observation=False, max_rain_mmh=r,
            rain_persistence_h=p, approach_s=a, source_count={},
        )
        rank = (f, int(w), r, p, 0 if a is None else 1)
        points.append((rank, decide(ind, rules).level))

    for rank_a, level_a in points:
        for rank_b, level_b in points:
            if all(x <= y for x, y in zip(rank_a, rank_b)):
                assert level_a <= level_b, (
                    f"worsening {rank_a} -> {rank_b} lowered "
                    f"{level_a.name} to {level_b.name}"
                )

    assert time.perf_counter() - t_start < 5.0


PIPELINE_SPEC = """\
[scenario]
lat_min = 15
lon_min = 105
dlat = 0.05
dlon = 0.05
nrows = 60
ncols = 60
start = 2020-10-05T00:00:00Z
duration_s = 14400
noise_std = 0.4
flooded = W

[cell storm]
lat = 16.0
lon = 107.6
speed_mps = 8
bearing_deg = 270
min_bt = 190
radius_km = 45
wind_peak = 20
rain_peak = 14

[region W]
lat_min = 15.7
lat_max = 16.3
lon_min = 106.0
lon_max = 106.6

[region NA]
lat_min = 15.05
lat_max = 15.35
lon_min = 105.05
lon_max = 105.35
"""


def test_c9_pipeline_runs_are_byte_identical(tmp_path):
    t_start = time.perf_counter()

    spec = tmp_path / "scenario.ini"
    spec.write_text(PIPELINE_SPEC, encoding="utf-8")

    def run(root):
        root.mkdir()
        data = root / "data"
        regions = root / "regions.txt"
        flood = root / "flood_truth.gsf"
        assert cli.main([
            "synth", "--spec", str(spec), str(data), "--seed", "3",
            "--regions-out", str(regions), "--flood-truth-out", str(flood),
        ]) == 0
        assert cli.main([
            "detect", str(data / "bt.gsf"), "-o", str(root / "objects.csv"),
        ]) == 0
        assert cli.main([
            "track", str(data / "bt.gsf"), "-o", str(root / "tracks.csv"),
        ]) == 0
        assert cli.main([
            "fuse", str(data), str(regions), "-o", str(root / "warnings.csv"),
            "--rain-stats-out", str(root / "rain_stats.csv"),
        ]) == 0
        assert cli.main([
            "validate", str(root / "warnings.csv"), str(flood), str(regions),
            "-o", str(root / "validation.csv"),
        ]) == 0
        return {
            p.relative_to(root): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()
        }

    first = run(tmp_path / "a")
    second = run(tmp_path / "b")
    assert list(first) == list(second)
    for name in first:
        assert first[name] == second[name], f"{name} differs between runs"

    assert time.perf_counter() - t_start < 30.0
