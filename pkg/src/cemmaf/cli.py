"""Command-line entry point.

Subcommands: ``fixtures`` (train a desk-scale bundle + evaluation images),
``pn`` / ``pp`` (solve explanations and write reports plus image dumps),
``eval`` (batch metrics over reports and external rankings), ``segment``
(emit a superpixel label map).  Exit codes: 0 success, 1 error, 2 when a
solver finished its whole schedule without finding an explanation.

``CEMMAF_LOG`` (debug/info/warning/error) controls stderr verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, netpbm
from .bundle import BundleError, ModelBundle, load_bundle
from .config import ConfigError, RunConfig, load_config
from .csearch import NotFound
from .fixtures import FixtureError, FixtureSpec, generate_fixture_set, parse_fixture_spec
from .metrics import (
    ExplanationBatch,
    ExplanationRecord,
    MetricsError,
    aggregate_report,
    parse_rankings,
    pp_correlation,
)
from .pp import pp_score_trace, solve_pp
from .pn import solve_pn
from .report import bundle_sha256, pn_entry, pp_entry, read_json, write_json
from .segmentation import SegmentationError, apply_mask, export_label_map, grid_segment

log = logging.getLogger("cemmaf")

_ERRORS = (
    BundleError,
    ConfigError,
    FixtureError,
    MetricsError,
    SegmentationError,
    netpbm.NetpbmError,
    OSError,
    ValueError,
)


def _setup_logging() -> None:
    level = os.environ.get("CEMMAF_LOG", "warning").upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR"):
        level = "WARNING"
    logging.basicConfig(stream=sys.stderr, level=getattr(logging, level),
                        format="%(name)s %(levelname)s %(message)s")


def _load_run_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        config = replace(config, seed=args.seed)
    return config


def _gather_images(args) -> list[str]:
    paths = []
    if getattr(args, "image", None):
        paths.append(args.image)
    if getattr(args, "images", None):
        paths.extend(args.images)
    if not paths:
        raise ValueError("no input images: pass --image or --images")
    return paths


def _run_header(command: str, args, config: RunConfig) -> dict:
    return {
        "command": command,
        "bundle": str(args.bundle),
        "bundle_sha256": bundle_sha256(args.bundle),
        "config": config.as_dict(),
        "version": __version__,
    }


def _solve_many(solver, paths: list[str], jobs: int):
    if jobs <= 1:
        return [solver(p) for p in paths]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(solver, paths))


def cmd_fixtures(args) -> int:
    spec = parse_fixture_spec(Path(args.spec).read_text(encoding="ascii")) if args.spec else FixtureSpec()
    out = Path(args.out)
    manifest = generate_fixture_set(spec, args.seed, out)
    log.info("fixtures: accuracy=%.3f mae=%.4f", manifest["train_accuracy"],
             manifest["reconstruction_mae"])
    print(f"wrote bundle + {len(manifest['images'])} images to {out}")
    return 0


def cmd_pn(args) -> int:
    config = _load_run_config(args)
    bundle = load_bundle(args.bundle)
    paths = _gather_images(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    hp = config.pn_params()

    started = time.monotonic()
    results = _solve_many(lambda p: solve_pn(bundle, netpbm.read_image(p), hp), paths, args.jobs)
    elapsed = time.monotonic() - started

    entries = []
    for path, result in zip(paths, results):
        stem = Path(path).stem
        entry = {"id": stem, "image": str(path)}
        image = netpbm.read_image(path)
        t0 = bundle.predict(image)
        entry["t0"] = t0
        entry["t0_name"] = bundle.class_names[t0]
        entry["pn"] = pn_entry(result)
        if not isinstance(result, NotFound):
            dump = f"pn_{stem}.pgm" if bundle.image_shape[2] == 1 else f"pn_{stem}.ppm"
            netpbm.write_image(out / dump, result.image)
            entry["image_dump"] = dump
        entries.append(entry)

    report = _run_header("pn", args, config)
    report["class_names"] = list(bundle.class_names)
    report["images"] = entries
    if args.timings:
        report["timings"] = {"total_seconds": elapsed}
    write_json(out / "pn_report.json", report)
    log.info("pn: %d images in %.2fs", len(paths), elapsed)

    missing = sum(1 for r in results if isinstance(r, NotFound))
    return 2 if missing else 0


def cmd_pp(args) -> int:
    config = _load_run_config(args)
    bundle = load_bundle(args.bundle)
    paths = _gather_images(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    hp = config.pp_params()
    h, w, _ = bundle.image_shape
    partition = grid_segment(h, w, config.n_superpixels)
    export_label_map(out / "labels.pgm", partition)

    started = time.monotonic()
    results = _solve_many(
        lambda p: solve_pp(bundle, netpbm.read_image(p), partition, hp), paths, args.jobs
    )
    elapsed = time.monotonic() - started

    entries = []
    records = []
    for path, result in zip(paths, results):
        stem = Path(path).stem
        entry = {"id": stem, "image": str(path)}
        image = netpbm.read_image(path)
        t0 = bundle.predict(image)
        entry["t0"] = t0
        entry["t0_name"] = bundle.class_names[t0]
        entry["pp"] = pp_entry(result)
        if not isinstance(result, NotFound):
            dump = f"pp_{stem}.pgm" if bundle.image_shape[2] == 1 else f"pp_{stem}.ppm"
            netpbm.write_image(out / dump, result.image)
            entry["image_dump"] = dump
            corr = pp_correlation(result.score_trace)
            entry["pp"]["correlation"] = corr
            records.append(
                ExplanationRecord(
                    n_selected=len(result.selected),
                    predicted_class=result.predicted_class,
                    t0=result.t0,
                    score_trace=tuple(result.score_trace),
                )
            )
        entries.append(entry)

    report = _run_header("pp", args, config)
    report["class_names"] = list(bundle.class_names)
    report["n_superpixels"] = partition.n_superpixels
    report["labels_dump"] = "labels.pgm"
    report["images"] = entries
    if records:
        batch = ExplanationBatch(tuple(records))
        report["metrics"] = aggregate_report({"cemmaf": batch})[0]
    if args.timings:
        report["timings"] = {"total_seconds": elapsed}
    write_json(out / "pp_report.json", report)
    log.info("pp: %d images in %.2fs", len(paths), elapsed)

    missing = sum(1 for r in results if isinstance(r, NotFound))
    return 2 if missing else 0


def _resolve_image(path_str: str, report_path: Path) -> Path:
    p = Path(path_str)
    if p.is_file():
        return p
    alt = report_path.parent / p
    if alt.is_file():
        return alt
    raise ValueError(f"cannot locate image {path_str!r} referenced by {report_path}")


def cmd_eval(args) -> int:
    bundle = load_bundle(args.bundle)
    reports_dir = Path(args.reports)
    report_files = sorted(reports_dir.glob("**/*.json"))
    pp_reports = []
    for path in report_files:
        obj = read_json(path)
        if isinstance(obj, dict) and obj.get("command") == "pp":
            pp_reports.append((path, obj))
    if not pp_reports:
        raise ValueError(f"no pp reports found under {reports_dir}")

    records = []
    by_image: dict[str, tuple[Path, dict, dict]] = {}
    for path, obj in pp_reports:
        for entry in obj.get("images", []):
            if entry["pp"]["status"] != "found":
                continue
            records.append(
                ExplanationRecord(
                    n_selected=entry["pp"]["n_selected"],
                    predicted_class=entry["pp"]["predicted_class"],
                    t0=entry["pp"]["t0"],
                    score_trace=tuple(entry["pp"]["score_trace"]),
                )
            )
            by_image[entry["id"]] = (path, obj, entry)
    batches: dict[str, ExplanationBatch] = {"cemmaf": ExplanationBatch(tuple(records))}

    external: dict[str, list[ExplanationRecord]] = {}
    for rfile in args.rankings or []:
        for image_id, method, ids in parse_rankings(Path(rfile).read_text(encoding="ascii")):
            if image_id not in by_image:
                raise ValueError(f"ranking references unknown image id {image_id!r}")
            rpath, robj, entry = by_image[image_id]
            config = RunConfig(**robj["config"])
            image = netpbm.read_image(_resolve_image(entry["image"], rpath))
            h, w, _ = bundle.image_shape
            partition = grid_segment(h, w, config.n_superpixels)
            t0 = entry["t0"]
            trace = pp_score_trace(bundle, image, partition, ids, t0, config.background)
            mask = np.zeros(partition.n_superpixels)
            mask[list(ids)] = 1.0
            predicted = int(
                np.argmax(bundle.classify(apply_mask(image, partition, mask, config.background)))
            )
            external.setdefault(method, []).append(
                ExplanationRecord(
                    n_selected=len(ids),
                    predicted_class=predicted,
                    t0=t0,
                    score_trace=tuple(trace),
                )
            )
    for method, recs in external.items():
        if method in batches:
            raise ValueError(f"duplicate method name {method!r}")
        batches[method] = ExplanationBatch(tuple(recs))

    rows = aggregate_report(batches)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "eval_table.json", {"command": "eval", "rows": rows})
    header = f"{'method':<16}{'# PP Feat':>12}{'PP Acc':>10}{'PP Corr':>10}"
    print(header)
    for row in rows:
        corr = "-" if row["pp_correlation"] is None else f"{row['pp_correlation']:.3f}"
        print(f"{row['method']:<16}{row['pp_feature_count']:>12.1f}{row['pp_accuracy']:>10.1f}{corr:>10}")
    return 0


def cmd_segment(args) -> int:
    config = _load_run_config(args)
    image = netpbm.read_image(args.image)
    h, w = image.shape[:2]
    partition = grid_segment(h, w, config.n_superpixels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dest = out / f"{Path(args.image).stem}_labels.pgm"
    export_label_map(dest, partition)
    print(f"{partition.n_superpixels} superpixels -> {dest}")
    return 0


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cemmaf", description=__doc__)
    parser.add_argument("--version", action="version", version=f"cemmaf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, bundle=True):
        if bundle:
            p.add_argument("--bundle", required=True, help="bundle directory")
        p.add_argument("--config", help="key=value config file (defaults otherwise)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("fixtures", help="train a desk-scale fixture bundle + images")
    p.add_argument("--spec", help="fixture spec file (key=value); defaults otherwise")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_fixtures)

    for name, fn, helptext in (
        ("pn", cmd_pn, "solve pertinent negatives"),
        ("pp", cmd_pp, "solve pertinent positives"),
    ):
        p = sub.add_parser(name, help=helptext)
        add_common(p)
        p.add_argument("--image", help="one input image (PGM/PPM)")
        p.add_argument("--images", nargs="+", help="several input images")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers across images")
        p.add_argument("--timings", action="store_true",
                       help="embed wall-clock timings in the report (breaks run-to-run byte equality)")
        p.set_defaults(fn=fn)

    p = sub.add_parser("eval", help="aggregate metrics over reports and external rankings")
    p.add_argument("--bundle", required=True)
    p.add_argument("--reports", required=True, help="directory containing pn/pp reports")
    p.add_argument("--rankings", nargs="+", help="external ranking files")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("segment", help="write the superpixel label map for an image")
    p.add_argument("--image", required=True)
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_segment)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = _parser().parse_args(argv)
    try:
        return args.fn(args)
    except _ERRORS as exc:
        print(f"cemmaf: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
