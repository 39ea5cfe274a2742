"""End-to-end acceptance checks, one test per criterion.

Each test records its outcome in ``conftest.ACCEPTANCE``; the terminal
summary prints one PASS/FAIL line per criterion.
"""

from __future__ import annotations

import contextlib
import math
import time
from collections import Counter, defaultdict

import numpy as np
import pytest
from conftest import ACCEPTANCE, cross_world, straight_world

from roadlabel.cli import main
from roadlabel.config import ThresholdConfig
from roadlabel.datasetio import read_manifest
from roadlabel.evalkit import PredictionRecord, accuracy, mae, recommend
from roadlabel.geo import GeoPoint, PlanePoint, Projector, angdiff
from roadlabel.labelgen import (
    CATEGORICAL,
    CropSpec,
    LabeledSample,
    Task,
    label_driveable,
    label_heading_angle,
    label_intersection,
    q6,
)
from roadlabel.osmnet import parse_osm
from roadlabel.panograph import PanoMeta, load_pano_file
from roadlabel.panoimage import crop_ray_angles, sampling_map, unwarp
from roadlabel.roadmatch import build_index, filter_offroad
from roadlabel.synthkit import STRIPE, CityParams, GroundTruth, gen_city, render_features

pytestmark = pytest.mark.acceptance

R = 6_371_000.0


@contextlib.contextmanager
def criterion(n: int, desc: str):
    ACCEPTANCE[n] = (desc, False)
    yield
    ACCEPTANCE[n] = (desc, True)
    print(f"criterion {n}: PASS  {desc}")


# ---- 1: matcher exactness ---------------------------------------------------


def brute_nearest(segs: np.ndarray, q: np.ndarray, chunk: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Exhaustive nearest segment for every query row; ties go to the lowest row."""
    ax, ay, bx, by = (segs[:, i][None, :] for i in range(4))
    dx, dy = bx - ax, by - ay
    den = dx * dx + dy * dy
    best = np.empty(len(q), dtype=np.int64)
    dist = np.empty(len(q))
    for s in range(0, len(q), chunk):
        px, py = q[s : s + chunk, 0:1], q[s : s + chunk, 1:2]
        with np.errstate(invalid="ignore", divide="ignore"):
            t = np.where(den == 0, 0.0, ((px - ax) * dx + (py - ay) * dy) / den)
        cx = np.where(t <= 0, ax, np.where(t >= 1, bx, ax + t * dx))
        cy = np.where(t <= 0, ay, np.where(t >= 1, by, ay + t * dy))
        ex, ey = px - cx, py - cy
        d = np.sqrt(ex * ex + ey * ey)
        i = d.argmin(axis=1)
        best[s : s + chunk] = i
        dist[s : s + chunk] = d[np.arange(len(i)), i]
    return best, dist


def test_criterion_1_matcher_exactness():
    with criterion(1, "grid index equals brute force on >=50k segments, 10k queries, <10 s"):
        xml, _ = gen_city(CityParams(rows=160, cols=160, block_m=100.0, split_fraction=0.0, footway_fraction=0.0,
                                     rotation_deg=17.0, seed=1))
        net = parse_osm(xml)
        assert net.segment_count() >= 50_000
        proj = net.projector()
        keys, rows = [], []
        for wid in sorted(net.ways):
            pts = [proj.project(net.nodes[n].loc) for n in net.ways[wid].node_ids]
            for i in range(len(pts) - 1):
                keys.append((wid, i))
                rows.append((*pts[i], *pts[i + 1]))
        segs = np.array(rows)
        rng = np.random.default_rng(2024)
        lo, hi = segs[:, :2].min(0) - 100.0, segs[:, :2].max(0) + 100.0
        queries = rng.uniform(lo, hi, size=(10_000, 2))

        t0 = time.perf_counter()
        idx = build_index(net, proj)
        got = [idx.nearest(PlanePoint(x, y)) for x, y in queries]
        elapsed = time.perf_counter() - t0

        best, dist = brute_nearest(segs, queries)
        mismatches = sum(idx.keys[g[0]] != keys[b] or abs(g[1] - d) >= 1e-9 for g, b, d in zip(got, best, dist))
        assert mismatches == 0
        assert elapsed < 10.0, f"index build + queries took {elapsed:.2f}s"


# ---- 2: threshold fidelity -------------------------------------------------


def test_criterion_2_threshold_boundaries():
    with criterion(2, "six boundary cases: 10.5 m, 30 m, 100 m, 22.5 deg, 60 deg, 30 m heading exclusion"):
        cfg = ThresholdConfig()
        results = []
        # off-road cut: a pano exactly 10.5 m from the road is kept
        w = straight_world()
        m = w.match(w.pano("a", 500.0, 10.5, 90.0))
        kept, _ = filter_offroad([m], cfg)
        results.append(kept == [m])
        # junction 30 m away: positive; 100 m away: negative
        cw = cross_world()
        p = cw.pano("b", 30.0, 0.0, 90.0)
        results.append(label_intersection(cw.context(), p, cw.match(p)).label is True)
        p = cw.pano("c", 100.0, 0.0, 90.0)
        results.append(label_intersection(cw.context(), p, cw.match(p)).label is False)
        # crop 22.5 deg off the road is driveable
        p = w.pano("d", 500.0, 3.0, 90.0)
        [s] = label_driveable(w.context(), p, w.match(p), headings=[112.5])
        results.append(s.label is True)
        # heading-angle crop at exactly 60 deg off forward is allowed
        [s] = label_heading_angle(w.context(), p, w.match(p), offsets=[60.0])
        results.append(s.label == 60.0 and abs(angdiff(s.crop.heading_deg, 150.0)) < 1e-9)
        # heading-angle samples allowed exactly 30 m from a junction
        p = cw.pano("e", 30.0, 0.0, 90.0)
        results.append(len(label_heading_angle(cw.context(), p, cw.match(p), offsets=[0.0])) == 1)
        assert results == [True] * 6, results
        # and just past each boundary the outcome flips
        m2 = w.match(w.pano("a2", 500.0, 10.51, 90.0))
        assert filter_offroad([m2], cfg)[0] == []
        p = cw.pano("b2", 30.01, 0.0, 90.0)
        assert label_intersection(cw.context(), p, cw.match(p)) is None
        p = w.pano("d2", 500.0, 3.0, 90.0)
        assert label_driveable(w.context(), p, w.match(p), headings=[112.51])[0].label is False
        with pytest.raises(ValueError):
            label_heading_angle(w.context(), p, w.match(p), offsets=[60.01])


# ---- 3: end-to-end ground truth --------------------------------------------


def expected_presence(truth: GroundTruth, pid: str, cfg: ThresholdConfig) -> Counter:
    pt = truth.panos[pid]
    way = truth.ways[pt.way_id]
    jd = pt.junction_distance_m
    c: Counter = Counter()
    if jd is None or jd >= cfg.inter_neg_min_m or jd <= cfg.inter_pos_max_m:
        c[Task.INTERSECTION] = 1
    if jd is not None and jd <= cfg.inter_pos_max_m:
        c[Task.INTERSECTION_DISTANCE] = 1
    c[Task.DRIVEABLE] = 4
    if jd is None or jd >= cfg.heading_excl_m:
        c[Task.HEADING_ANGLE] = 1
    if way.bike_lane is not None:
        c[Task.BIKE_LANE] = 1
    if way.speed_mph is not None:
        c[Task.SPEED_LIMIT] = 1
    c[Task.ONE_WAY] = 1
    c[Task.WRONG_WAY] = 2
    if way.lanes is not None:
        c[Task.NUM_LANES] = 1
    return c


def truth_label_ok(s: LabeledSample, truth: GroundTruth, cfg: ThresholdConfig) -> bool:
    pt = truth.panos[s.pano_id]
    way = truth.ways[pt.way_id]
    h = s.crop.heading_deg
    if s.way_id != pt.way_id:
        return False
    t = s.task
    if t is Task.INTERSECTION:
        if pt.junction_distance_m is not None and pt.junction_distance_m <= cfg.inter_pos_max_m:
            return s.label is True and abs(angdiff(h, pt.junction_bearing_deg)) <= 1e-5
        return s.label is False and abs(angdiff(h, pt.forward_deg)) <= 1e-5
    if t is Task.INTERSECTION_DISTANCE:
        return abs(s.label - pt.junction_distance_m) <= 1e-6
    if t is Task.DRIVEABLE:
        return s.label is any(abs(angdiff(h, d)) <= cfg.driveable_tol_deg for d in pt.driveable_deg)
    if t is Task.HEADING_ANGLE:
        return abs(s.label - angdiff(h, pt.forward_deg)) <= 2e-6
    if t is Task.BIKE_LANE:
        return s.label is way.bike_lane
    if t is Task.SPEED_LIMIT:
        return s.label == q6(way.speed_mph)
    if t is Task.ONE_WAY:
        return s.label is (way.travel != "both")
    if t is Task.WRONG_WAY:
        return s.label is (abs(angdiff(h, pt.forward_deg + 180.0)) <= cfg.wrongway_tol_deg)
    if t is Task.NUM_LANES:
        return s.label == way.lanes
    return False


@pytest.fixture(scope="module")
def synth_city(tmp_path_factory):
    d = tmp_path_factory.mktemp("accept_city")
    assert main(["synth", "--out", str(d / "src"), "--rows", "4", "--cols", "5", "--rotation-deg", "12",
                 "--oneway-fraction", "0.4", "--bike-fraction", "0.4", "--spacing-m", "10", "--plaza", "4",
                 "--seed", "8"]) == 0
    return d


def test_criterion_3_end_to_end_ground_truth(synth_city):
    with criterion(3, "run-all on a synthetic city: every label equals generator truth across nine tasks"):
        src, out = synth_city / "src", synth_city / "run"
        assert main(["run-all", "--osm", str(src / "city.osm"), "--panos", str(src / "panos.jsonl"), "--out", str(out),
                     "--seed", "3"]) == 0
        truth = GroundTruth.load(src / "truth.json")
        cfg = ThresholdConfig()
        ways = list(truth.ways.values())
        assert {w.travel != "both" for w in ways} == {True, False}
        assert {w.bike_lane for w in ways} >= {True, False}
        assert len({w.speed_mph for w in ways if w.speed_mph}) > 1
        assert any(w.lanes for w in ways)

        # completeness on the unbalanced labels: every on-road pano, every task it qualifies for
        raw = read_manifest(out / "labels.jsonl").samples
        got: dict[str, Counter] = defaultdict(Counter)
        for s in raw:
            got[s.pano_id][s.task] += 1
        onroad = {pid for pid, pt in truth.panos.items() if not pt.offroad}
        assert set(got) == onroad
        for pid in onroad:
            assert got[pid] == expected_presence(truth, pid, cfg), pid
        assert {s.task for s in raw} == set(Task)

        # correctness on the final, balanced manifest (duplicates included)
        final = read_manifest(out / "manifest.jsonl").samples
        bad = [s.sample_id for s in final if not truth_label_ok(s, truth, cfg)]
        assert bad == []
        assert len(final) >= len(raw)


# ---- 4: projection -----------------------------------------------------------


def test_criterion_4_projection():
    with criterion(4, "crop center/edge rays exact, stripe localized within 1 px, seam continuous"):
        crop = CropSpec("p", 40.0)
        az, el = crop_ray_angles(crop, 113.5, 113.5)
        assert abs(angdiff(float(az), 40.0)) <= 1e-6 and abs(float(el)) <= 1e-6
        for u, expect in ((0.0, -50.0), (227.0, 50.0)):
            az, el = crop_ray_angles(crop, u, 113.5)
            assert abs(angdiff(float(az), 40.0 + expect)) <= 1e-6 and abs(float(el)) <= 1e-6
        # the sampling map's center pixel lands on the pano column for heading 40
        smap = sampling_map(crop, 832, 416, 10.0)
        col = (40.0 - (10.0 - 180.0)) / 360.0 * 832
        assert abs(smap[113, 113, 0] - col) <= 1e-6 and abs(smap[113, 113, 1] - 208.0) <= 1e-6

        for stripe in (0.0, 91.25, 200.0):
            img = render_features(30.0, stripe_deg=stripe)
            out = unwarp(img, PanoMeta("p", GeoPoint(0, 0), 30.0), CropSpec("p", stripe))
            cols = np.flatnonzero((out[113] == STRIPE).all(axis=1))
            assert cols.size and abs((cols.min() + cols.max()) / 2 - 113) <= 1

        az = (np.arange(832) + 0.5) / 832 * 360.0
        row = (127 + 100 * np.cos(np.radians(az))).round().astype(np.uint8)
        pano = np.repeat(np.repeat(row[None, :, None], 416, axis=0), 3, axis=2)
        seam = unwarp(pano, PanoMeta("p", GeoPoint(0, 0), 0.0), CropSpec("p", 180.0))
        assert np.abs(np.diff(seam[113].astype(int), axis=0)).max() <= 2


# ---- 5: split and balance -------------------------------------------------------


def test_criterion_5_split_balance_determinism(synth_city):
    with criterion(5, "80/20 longitude split, equal class counts, identical bytes for 1 and 8 workers"):
        src = synth_city / "src"
        outs = []
        for w in (1, 8):
            out = synth_city / f"w{w}"
            assert main(["run-all", "--osm", str(src / "city.osm"), "--panos", str(src / "panos.jsonl"),
                         "--out", str(out), "--seed", "5", "--workers", str(w)]) == 0
            outs.append(out)
        for name in ("panos.jsonl", "matches.jsonl", "labels.jsonl", "split.jsonl", "manifest.jsonl", "stats.json"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name

        split = read_manifest(outs[0] / "split.jsonl").samples
        panos = {p.pano_id: p for p in load_pano_file(outs[0] / "panos.jsonl")}
        lon = {pid: panos[pid].loc.lon_deg for pid in {s.pano_id for s in split}}
        train = {s.pano_id for s in split if s.split == "train"}
        test = {s.pano_id for s in split if s.split == "test"}
        assert not train & test and train | test == set(lon)
        n = len(lon)
        boundary = max(lon[p] for p in train)
        ties = sum(1 for v in lon.values() if v == boundary)
        assert math.ceil(0.8 * n) <= len(train) <= math.ceil(0.8 * n) + ties - 1
        assert max(lon[p] for p in train) < min(lon[p] for p in test)

        final = read_manifest(outs[0] / "manifest.jsonl").samples
        for task in CATEGORICAL:
            for sp in ("train", "test"):
                c = Counter(s.label for s in final if s.task is task and s.split == sp)
                if c:
                    assert c[True] == c[False], (task, sp, c)


# ---- 6: metrics oracle ---------------------------------------------------------


def _s(i: int, task: Task, label) -> LabeledSample:
    return LabeledSample(f"s{i}", CropSpec(f"p{i}", 0.0), task, label, 1, "test")


def test_criterion_6_metrics_oracle():
    with criterion(6, "hand-computed accuracy and MAE to 1e-12; injected noise MAE reproduced"):
        labels = [True, True, False, True, False, False, True, False, True, False]
        probs = [0.9, 0.4, 0.2, 0.5, 0.7, 0.1, 0.8, 0.49, 0.3, 0.0]
        # correct: 0, 2, 3 (0.5 counts positive), 5, 6, 7, 9 -> 7 of 10
        samples = [_s(i, Task.ONE_WAY, lab) for i, lab in enumerate(labels)]
        preds = [PredictionRecord(f"s{i}", Task.ONE_WAY, p) for i, p in enumerate(probs)]
        assert abs(accuracy(preds, samples, Task.ONE_WAY) - 70.0) <= 1e-12

        speeds = [25.0, 30.0, 35.0, 45.0, 25.0, 30.0, 50.0, 35.0, 40.0, 30.0]
        guesses = [27.0, 30.0, 31.0, 45.5, 20.0, 30.0, 49.0, 35.25, 40.0, 33.0]
        # |err|: 2, 0, 4, 0.5, 5, 0, 1, 0.25, 0, 3 -> 15.75 / 10
        samples = [_s(i, Task.SPEED_LIMIT, v) for i, v in enumerate(speeds)]
        preds = [PredictionRecord(f"s{i}", Task.SPEED_LIMIT, g) for i, g in enumerate(guesses)]
        assert abs(mae(preds, samples, Task.SPEED_LIMIT) - 1.575) <= 1e-12

        rng = np.random.default_rng(6)
        base = rng.uniform(-60, 60, 500).round(6)
        noise = rng.choice([-1.5, 1.5], 500)  # |noise| = 1.5 everywhere
        samples = [_s(i, Task.HEADING_ANGLE, float(v)) for i, v in enumerate(base)]
        preds = [PredictionRecord(f"s{i}", Task.HEADING_ANGLE, float(v + e)) for i, (v, e) in enumerate(zip(base, noise))]
        assert abs(mae(preds, samples, Task.HEADING_ANGLE) - 1.5) <= 1e-12


# ---- 7: recommendation worked example ----------------------------------------------


def test_criterion_7_speed_recommendation():
    with criterion(7, "50 mph truth, 30 mph prediction -> speed-limit-review with severity 20"):
        samples = [LabeledSample("a", CropSpec("p", 0.0), Task.SPEED_LIMIT, 50.0, 4242, "test")]
        [r] = recommend([PredictionRecord("a", Task.SPEED_LIMIT, 30.0)], samples)
        assert r.kind == "speed-limit-review" and r.way_id == 4242 and r.severity == 20.0


# ---- 8: geo kernel --------------------------------------------------------------


def test_criterion_8_projected_distance_vs_haversine():
    with criterion(8, "projected distance within 0.2% of haversine, 1000 pairs within 30 km, |lat|<=60"):
        rng = np.random.default_rng(88)
        worst = 0.0
        for _ in range(1000):
            lat, lon = rng.uniform(-60, 60), rng.uniform(-179, 179)
            brg, dist = rng.uniform(0, 360), rng.uniform(1.0, 30_000.0)
            p1, l1, t = map(math.radians, (lat, lon, brg))
            dd = dist / R
            p2 = math.asin(math.sin(p1) * math.cos(dd) + math.cos(p1) * math.sin(dd) * math.cos(t))
            l2 = l1 + math.atan2(math.sin(t) * math.sin(dd) * math.cos(p1), math.cos(dd) - math.sin(p1) * math.sin(p2))
            h = math.sin((p2 - p1) / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin((l2 - l1) / 2) ** 2
            oracle = 2 * R * math.asin(math.sqrt(h))
            q = Projector(GeoPoint(lat, lon)).project(GeoPoint(math.degrees(p2), math.degrees(l2)))
            worst = max(worst, abs(math.hypot(*q) - oracle) / oracle)
        assert worst <= 0.002, worst
