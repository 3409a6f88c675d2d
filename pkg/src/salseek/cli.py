"""Command-line driver: ``salseek {detect,phantom,eval,bench}``.

Exit codes: 0 success, 1 configuration or I/O error, 2 (detect only) no
non-degenerate detection.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig
from .detection import Detection
from .entropy import EllipsoidWindow
from .parallel import available_workers
from .pipeline import ExhaustiveBudgetError, detect, hu_filter, jaccard, kadir_brady_exhaustive
from .volume import (
    PhantomError,
    PhantomSpec,
    VolumeIOError,
    atomic_write_bytes,
    ellipsoid_mask,
    load_ground_truth,
    load_volume,
    make_phantom,
    save_ground_truth,
    save_volume,
)

log = logging.getLogger("salseek")

EXIT_OK, EXIT_ERROR, EXIT_EMPTY = 0, 1, 2


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write_json(obj, path: str | None) -> None:
    text = _dump(obj)
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        atomic_write_bytes(path, text.encode())


def _sha256(path: Path) -> str:
    h = hashlib.sha256(path.read_bytes())
    raw = path.parent / _raw_name(path)
    if raw.exists():
        h.update(raw.read_bytes())
    return h.hexdigest()


def _raw_name(mhd: Path) -> str:
    for line in mhd.read_text().splitlines():
        if line.strip().startswith("ElementDataFile"):
            return line.split("=", 1)[1].strip()
    return ""


def gt_sidecar_path(mhd: str | Path) -> Path:
    mhd = Path(mhd)
    return mhd.with_name(mhd.stem + ".gt.json")


# ---------------------------------------------------------------------- detect


def _config_from_args(args) -> RunConfig:
    base = RunConfig.from_file(args.config).to_dict() if args.config else RunConfig().to_dict()
    overrides = {
        "method": args.method, "volume": args.volume, "bins": args.bins, "seeds": args.seeds,
        "k": args.k, "dedupe_radius": args.dedupe_radius, "workers": args.workers,
        "rng_seed": args.rng_seed, "out": args.out, "template": getattr(args, "template", None),
        "entropy_quantile": args.entropy_quantile,
    }
    if args.window is not None:
        try:
            lo, hi = args.window.split(":")
            overrides["window"] = (float(lo), float(hi))
        except ValueError as exc:
            raise ConfigError(f"--window expects LOW:HIGH, got {args.window!r}") from exc
    if args.scales is not None:
        try:
            overrides["scales"] = tuple(float(t) for t in args.scales.split(","))
        except ValueError as exc:
            raise ConfigError(f"--scales expects comma-separated numbers, got {args.scales!r}") from exc
    base.update({k: v for k, v in overrides.items() if v is not None})
    if base["volume"] is None:
        raise ConfigError("no volume given (--volume or config 'volume')")
    return RunConfig.from_dict(base)


def run_detect(cfg: RunConfig, workers: int | None = None):
    """Load, detect and assemble the JSON report; returns (report, detections)."""
    path = Path(cfg.volume)
    v = load_volume(path)
    iw = cfg.intensity_window(v)
    workers = cfg.workers if workers is None else workers
    t0 = time.perf_counter()
    res = detect(
        v, cfg.method, cfg.method_params(), cfg.seed_plan(), iw,
        k=cfg.k, dedupe_radius=cfg.dedupe_radius, entropy_quantile=cfg.entropy_quantile,
        min_pdf_diff=cfg.min_pdf_diff, workers=workers,
    )
    wall_ms = (time.perf_counter() - t0) * 1000.0
    header = {
        "version": __version__,
        "volume": {
            "path": str(path), "sha256": _sha256(path),
            "dims": list(v.dims), "spacing": list(v.spacing),
        },
        "config": cfg.to_dict(),
        "intensity_window": [iw.low, iw.high, iw.bins],
        "seed_count": len(res.raw),
        "flag_counts": dict(sorted(res.flag_counts.items())),
        "voxel_evals": res.voxel_evals,
        "wall_time_ms": wall_ms,
        "worker_count": workers,
    }
    report = {"header": header, "detections": [d.to_dict() for d in res.detections]}
    if cfg.template and res.detections:
        template = load_volume(cfg.template).data[:, :, 0]
        best = hu_filter(res.detections, v, template)
        report["hu_best"] = res.detections.index(best)
    return report, res.detections


def cmd_detect(args) -> int:
    try:
        cfg = _config_from_args(args)
        report, dets = run_detect(cfg)
        _write_json(report, cfg.out)
    except (ConfigError, VolumeIOError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    live = [d for d in dets if not d.degenerate]
    log.info("%d detections", len(live))
    return EXIT_OK if live else EXIT_EMPTY


# --------------------------------------------------------------------- phantom


def cmd_phantom(args) -> int:
    try:
        spec = PhantomSpec.from_json(args.spec)
        v, gt = make_phantom(spec)
        out = Path(args.out)
        save_volume(v, out)
        save_ground_truth(gt, gt_sidecar_path(out))
    except (PhantomError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


# ------------------------------------------------------------------------ eval


def evaluate(dets: list[Detection], gt, k: int | None = None) -> dict:
    """Per-region best-Jaccard matching of the top-``k`` detections."""
    dets = dets if k is None else dets[:k]
    masks = [ellipsoid_mask(gt.dims, d.center, d.H) for d in dets]
    table = np.zeros((len(dets), len(gt.regions)))
    for i, m in enumerate(masks):
        for j, r in enumerate(gt.regions):
            table[i, j] = jaccard(m, r.mask) if (m.any() or r.mask.any()) else 0.0
    per_region = []
    for j in range(len(gt.regions)):
        col = table[:, j] if len(dets) else np.zeros(0)
        best_i = int(np.argmax(col)) if col.size and col.max() > 0 else None
        per_region.append({
            "region": j,
            "best_detection": best_i,
            "jaccard": float(col[best_i]) if best_i is not None else 0.0,
        })
    matched = [r["jaccard"] for r in per_region if r["best_detection"] is not None]
    n = len(gt.regions)
    return {
        "k": len(dets),
        "regions": n,
        "recall": (len(matched) / n) if n else 0.0,
        "mean_jaccard": float(np.mean(matched)) if matched else 0.0,
        "per_region": per_region,
        "per_detection": [
            {
                "rank": i,
                "seed_index": d.seed_index,
                "best_region": int(np.argmax(table[i])) if table.shape[1] and table[i].max() > 0 else None,
                "jaccard": float(table[i].max()) if table.shape[1] else 0.0,
            }
            for i, d in enumerate(dets)
        ],
    }


def cmd_eval(args) -> int:
    try:
        with open(args.detections) as fh:
            report = json.load(fh)
        gt = load_ground_truth(args.groundtruth)
        dims = report.get("header", {}).get("volume", {}).get("dims")
        if dims is not None and tuple(dims) != tuple(gt.dims):
            raise ValueError(f"frame mismatch: detections on {dims}, ground truth {list(gt.dims)}")
        dets = [Detection.from_dict(d) for d in report.get("detections", [])]
        _write_json(evaluate(dets, gt, args.k), args.out)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


# ----------------------------------------------------------------------- bench


def _detections_digest(report: dict) -> str:
    return hashlib.sha256(json.dumps(report["detections"], sort_keys=True).encode()).hexdigest()


def bench(cfg: RunConfig, repeat: int, worker_counts, methods=None, exhaustive_scales=None) -> dict:
    """Median wall time per method and worker count, plus cross-worker digests."""
    methods = methods or [cfg.method]
    rows = []
    for method in methods:
        mcfg = RunConfig.from_dict({**cfg.to_dict(), "method": method,
                                    "params": cfg.params if method == cfg.method else {}})
        base = None
        digests = {}
        for w in worker_counts:
            times = []
            for _ in range(repeat):
                report, _ = run_detect(mcfg, workers=w)
                times.append(report["header"]["wall_time_ms"])
            digests[w] = _detections_digest(report)
            med = statistics.median(times)
            base = med if base is None else base
            rows.append({
                "method": method, "workers": w, "repeat": repeat,
                "median_ms": med, "samples_ms": times, "speedup": base / med,
                "low_confidence": repeat < 2, "detections_sha256": digests[w],
                "voxel_evals": report["header"]["voxel_evals"],
            })
        for r in rows:
            if r["method"] == method:
                r["identical_across_workers"] = len(set(digests.values())) == 1
    out = {"version": __version__, "volume": cfg.volume, "rows": rows,
           "available_workers": available_workers()}
    if exhaustive_scales:
        v = load_volume(cfg.volume)
        iw = cfg.intensity_window(v)
        times = []
        try:
            for _ in range(repeat):
                t0 = time.perf_counter()
                kb = kadir_brady_exhaustive(v, iw, exhaustive_scales)
                times.append((time.perf_counter() - t0) * 1000.0)
            out["exhaustive"] = {"median_ms": statistics.median(times), "samples_ms": times,
                                 "voxel_evals": kb.voxel_evals, "low_confidence": repeat < 2}
        except ExhaustiveBudgetError as exc:
            out["exhaustive"] = {"skipped": str(exc)}
    return out


def cmd_bench(args) -> int:
    try:
        cfg = _config_from_args(args)
        if args.worker_counts:
            counts = [int(t) for t in args.worker_counts.split(",")]
        else:
            counts = sorted({1, 2, 4, available_workers()})
        methods = args.methods.split(",") if args.methods else None
        ex = [float(t) for t in args.exhaustive_scales.split(",")] if args.exhaustive_scales else None
        _write_json(bench(cfg, args.repeat, counts, methods, ex), cfg.out)
    except (ConfigError, VolumeIOError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


# ------------------------------------------------------------------------ main


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration; flags override its values")
    p.add_argument("--method", choices=("quadrant", "shift", "abmsod"))
    p.add_argument("--volume", help="MetaImage .mhd to analyse")
    p.add_argument("--window", help="intensity window LOW:HIGH (default: volume range)")
    p.add_argument("--bins", type=int)
    p.add_argument("--seeds", help="lattice:S, lattice:SX,SY,SZ or random:N")
    p.add_argument("--scales", help="comma-separated initial window radii")
    p.add_argument("--k", type=int)
    p.add_argument("--dedupe-radius", type=float)
    p.add_argument("--entropy-quantile", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--rng-seed", type=int)
    p.add_argument("--out", help="output JSON path (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="salseek", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="detect salient regions in a volume")
    _add_run_flags(p)
    p.add_argument("--template", help="2D MetaImage for Hu-moment filtering of detections")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("phantom", help="render a phantom spec to MetaImage plus ground truth")
    p.add_argument("spec", help="phantom spec JSON")
    p.add_argument("out", help="output .mhd path; ground truth goes to <stem>.gt.json")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("eval", help="score detections against ground truth")
    p.add_argument("detections")
    p.add_argument("groundtruth")
    p.add_argument("--k", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time detection across worker counts")
    _add_run_flags(p)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--worker-counts", help="comma-separated (default 1,2,4,max)")
    p.add_argument("--methods", help="comma-separated methods to time (default: --method)")
    p.add_argument("--exhaustive-scales", help="also time the exhaustive scan at these scales")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
