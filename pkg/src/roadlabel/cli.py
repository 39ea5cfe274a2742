"""Command-line entry point: ``roadlabel <stage> ...``.

Exit codes: 0 success, 2 invalid arguments or configuration, 3 missing
input file, 4 malformed or unusable data.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any

from .config import ConfigError, ThresholdConfig, read_config_file
from .datasetio import (
    Manifest,
    ManifestError,
    balance_all,
    file_digest,
    format_stats,
    read_manifest,
    split_by_longitude,
    stats,
    write_manifest,
)
from .evalkit import EvalError, evaluate, format_metrics, read_predictions, recommend, write_metrics, write_records
from .osmnet import JunctionMode, OsmParseError, dump_osm, filter_roads, load_osm
from .panograph import BBox, CrawlStats, DirectoryProvider, PanoFileError, PanoNotFound, bfs_crawl, load_pano_file, save_pano_file
from .pipeline import crop_samples, label_matches, make_context, match_panos, read_matches, summary_line, write_matches

log = logging.getLogger("roadlabel")

EXIT_OK, EXIT_VALIDATION, EXIT_MISSING, EXIT_DATA = 0, 2, 3, 4

THRESHOLD_HELP = {
    "offroad_max_m": "max panorama-to-road distance in meters; farther panoramas are dropped as off-road",
    "inter_pos_max_m": "junction distance (m) at or below which an intersection crop is positive",
    "inter_neg_min_m": "junction distance (m) at or above which an intersection crop is negative",
    "driveable_tol_deg": "max angle (deg) between a crop and a road direction for a driveable label",
    "heading_max_offset_deg": "max |offset| (deg) of heading-angle crops from the forward road heading",
    "heading_excl_m": "min junction distance (m) for heading-angle samples",
    "bike_crop_offset_deg": "bike-lane crop offset (deg) toward the curb side",
    "wrongway_tol_deg": "max angle (deg) from the forward/backward heading for right/wrong-way crops",
    "crop_fov_deg": "horizontal field of view of every crop (deg)",
    "crop_px": "crop width and height in pixels",
    "train_fraction": "fraction of panoramas (westernmost) assigned to train",
}


class StageError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _need(path: str | Path | None, what: str) -> Path:
    if path is None:
        raise StageError(f"missing required input: {what}", EXIT_VALIDATION)
    p = Path(path)
    if not p.exists():
        raise StageError(f"missing input {what}: {p}", EXIT_MISSING)
    return p


def _emit(stage: str, t0: float, **fields: Any) -> None:
    print(summary_line(stage, **fields, seconds=round(time.perf_counter() - t0, 3)), flush=True)


# ---- option groups -------------------------------------------------------


def _add_thresholds(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("thresholds")
    defaults = ThresholdConfig()
    for f in dataclasses.fields(ThresholdConfig):
        g.add_argument(
            "--" + f.name.replace("_", "-"),
            dest=f.name,
            type=int if f.name == "crop_px" else float,
            default=None,
            help=f"{THRESHOLD_HELP[f.name]} (default {getattr(defaults, f.name)})",
        )


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; command-line flags take precedence")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_label_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="global RNG seed (required for label/balance)")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default 1)")
    p.add_argument("--junction-mode", choices=[m.value for m in JunctionMode], default=None,
                   help="junction rule (default continuation-filtered)")
    p.add_argument("--handedness", choices=["right", "left"], default=None, help="traffic side (default right)")
    p.add_argument("--n-headings", type=int, default=None, help="driveable crops per panorama (default 4)")
    p.add_argument("--repeat", type=int, default=None, help="heading-angle draws per panorama (default 1)")


def _settings(args: argparse.Namespace) -> dict[str, Any]:
    """Merge config file values under command-line flags."""
    file_vals: dict[str, Any] = {}
    if getattr(args, "config", None):
        file_vals = read_config_file(_need(args.config, "--config"))
    merged = dict(file_vals)
    for k, v in vars(args).items():
        if v is not None and k not in ("func", "config"):
            merged[k] = v
    return merged


def _thresholds(s: dict[str, Any]) -> ThresholdConfig:
    names = {f.name for f in dataclasses.fields(ThresholdConfig)}
    return ThresholdConfig.from_dict({k: v for k, v in s.items() if k in names})


def _opt(s: dict[str, Any], key: str, default: Any) -> Any:
    v = s.get(key)
    return default if v is None else v


def _seed(s: dict[str, Any]) -> int:
    if s.get("seed") is None:
        raise StageError("--seed is required for this stage", EXIT_VALIDATION)
    return int(s["seed"])


# ---- stages ----------------------------------------------------------------


def cmd_ingest_osm(s: dict[str, Any]) -> None:
    t0 = time.perf_counter()
    raw = load_osm(_need(s.get("osm"), "--osm"))
    net = filter_roads(raw, include_service=bool(s.get("include_service")))
    Path(s["out"]).write_bytes(dump_osm(net))
    _emit("ingest-osm", t0, nodes=len(net.nodes), ways_total=len(raw.ways), roads=len(net.ways),
          dropped_ways=raw.dropped_ways, segments=net.segment_count())


def cmd_crawl(s: dict[str, Any]) -> None:
    t0 = time.perf_counter()
    provider = DirectoryProvider(_need(s.get("panos"), "--panos"), s.get("images"))
    seed = s.get("seed_pano") or min(provider.metas, default=None)
    if seed is None:
        raise StageError("pano file is empty", EXIT_DATA)
    bbox = BBox.parse(s["bbox"]) if s.get("bbox") else None
    st = CrawlStats()
    out = bfs_crawl(provider, seed, bbox, s.get("limit"), st, int(_opt(s, "workers", 1)))
    save_pano_file(out, s["out"])
    _emit("crawl", t0, seed=seed, emitted=len(out), missing_neighbors=st.missing_neighbors, outside_bbox=st.outside_bbox)


def cmd_match(s: dict[str, Any]) -> None:
    t0 = time.perf_counter()
    cfg = _thresholds(s)
    net = load_osm(_need(s.get("roads"), "--roads"))
    panos = load_pano_file(_need(s.get("panos"), "--panos"))
    _, run = match_panos(net, panos, cfg, float(_opt(s, "cell_size_m", 50.0)))
    write_matches(run, s["out"])
    _emit("match", t0, panos=len(panos), kept=len(run.kept), rejected=len(run.rejected),
          rejected_ids=sorted(m.pano_id for m in run.rejected)[:50])


def cmd_label(s: dict[str, Any]) -> None:
    t0 = time.perf_counter()
    cfg = _thresholds(s)
    seed = _seed(s)
    roads = _need(s.get("roads"), "--roads")
    pano_path = _need(s.get("panos"), "--panos")
    matches = read_matches(_need(s.get("matches"), "--matches"))
    net = load_osm(roads)
    panos = load_pano_file(pano_path)
    ctx = make_context(
        net, cfg, seed,
        junction_mode=_opt(s, "junction_mode", JunctionMode.CONTINUATION_FILTERED.value),
        right_hand=_opt(s, "handedness", "right") == "right",
        n_headings=int(_opt(s, "n_headings", 4)),
        repeat=int(_opt(s, "repeat", 1)),
    )
    samples = label_matches(ctx, panos, matches.kept, int(_opt(s, "workers", 1)))
    m = Manifest(samples, seed, cfg, {"osm": file_digest(roads), "panos": file_digest(pano_path)})
    write_manifest(m, s["out"])
    st = stats(m)
    _emit("label", t0, panos=len(matches.kept), samples=len(samples), junctions=len(ctx.junctions),
          per_task={k: v["count"] for k, v in st["tasks"].items()})


def cmd_crop(s: dict[str, Any]) -> None:
    t0 = time.perf_counter()
    m = read_manifest(_need(s.get("manifest"), "--manifest"))
    panos = load_pano_file(_need(s.get("panos"), "--panos"))
    n, missing = crop_samples(m.samples, panos, _need(s.get("images"), "--images"), s["out"], int(_opt(s, "workers", 1)))
    _emit("crop", t0, crops=n, panos_without_image=len(missing))


def cmd_split(s: dict[str, Any]) -> None:
    t0 = time.perf_counter()
    m = read_manifest(_need(s.get("manifest"), "--manifest"))
    panos = {p.pano_id: p for p in load_pano_file(_need(s.get("panos"), "--panos"))}
    frac = float(_opt(s, "train_fraction", m.thresholds.train_fraction))
    boundary, samples = split_by_longitude(m.samples, panos, frac)
    m.samples = samples
    m.thresholds = m.thresholds.override(train_fraction=frac)
    write_manifest(m, s["out"])
    ids = {sp: {x.pano_id for x in samples if x.split == sp} for sp in ("train", "test")}
    _emit("split", t0, boundary_lon=boundary, train_panos=len(ids["train"]), test_panos=len(ids["test"]),
          train_samples=sum(x.split == "train" for x in samples), test_samples=sum(x.split == "test" for x in samples))


def cmd_balance(s: dict[str, Any]) -> None:
    t0 = time.perf_counter()
    m = read_manifest(_need(s.get("manifest"), "--manifest"))
    seed = _seed(s)
    before = len(m.samples)
    m.samples = balance_all(m.samples, seed)
    write_manifest(m, s["out"], final=True)
    _emit("balance", t0, before=before, after=len(m.samples), duplicates=len(m.samples) - before)


def cmd_stats(s: dict[str, Any]) -> None:
    t0 = time.perf_counter()
    st = stats(read_manifest(_need(s.get("manifest"), "--manifest")))
    if s.get("out"):
        Path(s["out"]).write_text(json.dumps(st, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(format_stats(st), file=sys.stderr)
    _emit("stats", t0, total=st["total"])


def cmd_eval(s: dict[str, Any]) -> None:
    t0 = time.perf_counter()
    m = read_manifest(_need(s.get("manifest"), "--manifest"))
    preds = read_predictions(_need(s.get("predictions"), "--predictions"))
    split = s.get("split", "test")
    report = evaluate(preds, m, None if split == "all" else split, float(_opt(s, "decision_threshold", 0.5)))
    if s.get("out"):
        write_metrics(report, s["out"])
    print(format_metrics(report), file=sys.stderr)
    _emit("eval", t0, tasks=sorted(report))


def cmd_recommend(s: dict[str, Any]) -> None:
    t0 = time.perf_counter()
    m = read_manifest(_need(s.get("manifest"), "--manifest"))
    preds = read_predictions(_need(s.get("predictions"), "--predictions"))
    recs = recommend(preds, m, float(_opt(s, "speed_delta_mph", 10.0)), float(_opt(s, "oneway_prob", 0.9)))
    write_records(recs, s["out"])
    for r in recs[:20]:
        print(f"{r.kind:<24} way {r.way_id:<10} gt={r.ground_truth} model={r.model_value:.3f} severity={r.severity:.3f}",
              file=sys.stderr)
    _emit("recommend", t0, recommendations=len(recs))


def cmd_synth(s: dict[str, Any]) -> None:
    from .panoimage import write_png
    from .synthkit import CityParams, gen_city, gen_panos, render_pano

    t0 = time.perf_counter()
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    params = CityParams(
        rows=int(_opt(s, "rows", 4)), cols=int(_opt(s, "cols", 4)), block_m=float(_opt(s, "block_m", 240.0)),
        rotation_deg=float(_opt(s, "rotation_deg", 0.0)), oneway_fraction=float(_opt(s, "oneway_fraction", 0.4)),
        bike_fraction=float(_opt(s, "bike_fraction", 0.3)), split_fraction=float(_opt(s, "split_fraction", 0.2)),
        footway_fraction=float(_opt(s, "footway_fraction", 0.2)),
        diagonal_fraction=float(_opt(s, "diagonal_fraction", 0.0)),
        spur_fraction=float(_opt(s, "spur_fraction", 0.0)), seed=int(_opt(s, "seed", 0)),
    )
    xml, truth = gen_city(params)
    panos = gen_panos(
        truth, float(_opt(s, "spacing_m", 10.0)), float(_opt(s, "lateral_offset_m", 3.0)),
        float(_opt(s, "noise_m", 0.0)), int(_opt(s, "seed", 0)), plaza_count=int(_opt(s, "plaza", 0)),
    )
    (out / "city.osm").write_bytes(xml)
    save_pano_file(panos, out / "panos.jsonl")
    truth.save(out / "truth.json")
    rendered = 0
    if s.get("render"):
        (out / "images").mkdir(exist_ok=True)
        for p in panos:
            write_png(render_pano(p, truth), out / "images" / f"{p.pano_id}.png")
            rendered += 1
    _emit("synth", t0, ways=truth.road_count, junctions=len(truth.junctions), panos=len(panos),
          plaza=sum(t.offroad for t in truth.panos.values()), images=rendered)


def cmd_run_all(s: dict[str, Any]) -> None:
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    _seed(s)
    _need(s.get("osm"), "--osm")
    _need(s.get("panos"), "--panos")
    base = {k: v for k, v in s.items() if k not in ("out", "panos", "osm")}
    cmd_ingest_osm({**base, "osm": s["osm"], "out": out / "roads.osm"})
    cmd_crawl({**base, "panos": s["panos"], "out": out / "panos.jsonl"})
    cmd_match({**base, "roads": out / "roads.osm", "panos": out / "panos.jsonl", "out": out / "matches.jsonl"})
    cmd_label({**base, "roads": out / "roads.osm", "panos": out / "panos.jsonl", "matches": out / "matches.jsonl",
               "out": out / "labels.jsonl"})
    cmd_split({**base, "manifest": out / "labels.jsonl", "panos": out / "panos.jsonl", "out": out / "split.jsonl"})
    cmd_balance({**base, "manifest": out / "split.jsonl", "out": out / "manifest.jsonl"})
    cmd_stats({**base, "manifest": out / "manifest.jsonl", "out": out / "stats.json"})
    if s.get("images"):
        cmd_crop({**base, "manifest": out / "manifest.jsonl", "panos": out / "panos.jsonl", "images": s["images"],
                  "out": out / "crops"})


# ---- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="roadlabel", description="Map-to-street-view label transfer pipeline.")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name: str, func, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_, description=help_)
        _add_common(p)
        p.set_defaults(func=func)
        return p

    p = add("ingest-osm", cmd_ingest_osm, "parse an OSM extract (.osm or .osm.gz) and keep drivable roads")
    p.add_argument("--osm", help="input OSM XML")
    p.add_argument("--out", required=True, help="filtered OSM XML output")
    p.add_argument("--include-service", action="store_true", default=None, help="keep highway=service ways")

    p = add("crawl", cmd_crawl, "breadth-first crawl of a panorama metadata fixture")
    p.add_argument("--panos", help="panorama metadata JSONL")
    p.add_argument("--images", help="directory of <pano_id>.png images")
    p.add_argument("--seed-pano", help="start panorama id (default: smallest id)")
    p.add_argument("--bbox", help="min_lat,min_lon,max_lat,max_lon")
    p.add_argument("--limit", type=int, help="max panoramas to emit")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True, help="crawled panorama JSONL output")

    p = add("match", cmd_match, "match panoramas to their nearest road and drop off-road ones")
    p.add_argument("--roads", help="filtered OSM XML")
    p.add_argument("--panos", help="panorama metadata JSONL")
    p.add_argument("--out", required=True, help="matches JSONL output")
    p.add_argument("--cell-size-m", type=float, default=None, help="spatial index cell size (default 50)")
    _add_thresholds(p)

    p = add("label", cmd_label, "derive the nine attribute samples into an unsplit manifest")
    p.add_argument("--roads")
    p.add_argument("--panos")
    p.add_argument("--matches")
    p.add_argument("--out", required=True, help="manifest JSONL output")
    _add_label_opts(p)
    _add_thresholds(p)

    p = add("crop", cmd_crop, "render perspective crops for every manifest sample")
    p.add_argument("--manifest")
    p.add_argument("--panos")
    p.add_argument("--images")
    p.add_argument("--out", required=True, help="output directory for <sample_id>.png")
    p.add_argument("--workers", type=int, default=None)

    p = add("split", cmd_split, "assign train/test by a line of longitude")
    p.add_argument("--manifest")
    p.add_argument("--panos")
    p.add_argument("--out", required=True)
    p.add_argument("--train-fraction", type=float, default=None, help="train share of panoramas (default 0.8)")

    p = add("balance", cmd_balance, "duplicate minority classes within each split")
    p.add_argument("--manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)

    p = add("stats", cmd_stats, "per-task counts and label summaries")
    p.add_argument("--manifest")
    p.add_argument("--out", help="machine-readable stats JSON")

    p = add("eval", cmd_eval, "score a predictions file against a manifest")
    p.add_argument("--manifest")
    p.add_argument("--predictions")
    p.add_argument("--split", default="test", help="train, test or all")
    p.add_argument("--decision-threshold", type=float, default=None, help="binary decision threshold (default 0.5)")
    p.add_argument("--out", help="metrics JSONL output")

    p = add("recommend", cmd_recommend, "flag roads whose predicted attributes disagree with the map")
    p.add_argument("--manifest")
    p.add_argument("--predictions")
    p.add_argument("--speed-delta-mph", type=float, default=None, help="speed deviation to flag (default 10)")
    p.add_argument("--oneway-prob", type=float, default=None, help="one-way probability to flag two-way roads (default 0.9)")
    p.add_argument("--out", required=True)

    p = add("synth", cmd_synth, "generate a synthetic city fixture with ground truth")
    p.add_argument("--out", required=True, help="output directory")
    for flag, typ in (("rows", int), ("cols", int), ("block-m", float), ("rotation-deg", float),
                      ("oneway-fraction", float), ("bike-fraction", float), ("split-fraction", float),
                      ("footway-fraction", float), ("diagonal-fraction", float), ("spur-fraction", float),
                      ("spacing-m", float), ("lateral-offset-m", float), ("noise-m", float), ("plaza", int),
                      ("seed", int)):
        p.add_argument("--" + flag, type=typ, default=None)
    p.add_argument("--render", action="store_true", default=None, help="also render 832x416 panoramas")

    p = add("run-all", cmd_run_all, "ingest, crawl, match, label, split, balance, stats (and crop with --images)")
    p.add_argument("--osm")
    p.add_argument("--panos")
    p.add_argument("--images")
    p.add_argument("--seed-pano")
    p.add_argument("--bbox")
    p.add_argument("--limit", type=int)
    p.add_argument("--include-service", action="store_true", default=None)
    p.add_argument("--out", required=True, help="output directory")
    _add_label_opts(p)
    _add_thresholds(p)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        s = _settings(args)
        _thresholds(s)  # validate before any work starts
        args.func(s)
    except StageError as e:
        print(f"roadlabel: {e}", file=sys.stderr)
        return e.code
    except ConfigError as e:
        print(f"roadlabel: invalid configuration: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as e:
        print(f"roadlabel: missing input: {e.filename}", file=sys.stderr)
        return EXIT_MISSING
    except (OsmParseError, PanoFileError, PanoNotFound, ManifestError, EvalError, ValueError) as e:
        print(f"roadlabel: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
