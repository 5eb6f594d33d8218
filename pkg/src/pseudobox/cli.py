"""``pseudobox`` command line: correct, simulate, eval.

Exit codes: 0 success, 1 configuration error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, parse_config
from .correction import correct, mean_shift, select
from .errors import InvalidConfigError, InvalidInputError, PseudoboxError
from .exchange import ImageRecord, dumps, fmt_float, read_exchange, write_exchange
from .jitter import make_rng
from .report import report_csv, report_json
from .scoring import IdentityHead, OracleHead, RecordedHead, Scene
from .simulator import SceneError, aggregate_arm, evaluate, run_experiment

log = logging.getLogger("pseudobox")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 1, 2

# --flag -> config key
FLAG_KEYS = {
    "seed": "run.seed", "out": "run.out", "format": "run.format", "workers": "run.workers",
    "scenes": "run.scenes", "head": "run.head", "trace": "run.trace", "sweep": "run.sweep_axis",
    "values": "run.sweep_values", "sigma_j": "jitter.sigma_j", "n_j": "jitter.n_j", "n_r": "correction.n_r",
    "threshold": "correction.score_threshold", "lam": "loss.lambda", "rho": "oracle.rho",
    "kappa": "oracle.kappa", "tau": "oracle.tau",
}


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="flat key = value config file")
    shared.add_argument("--seed", type=str)
    shared.add_argument("--out", help="output directory")
    shared.add_argument("--format", choices=("json", "csv"))
    shared.add_argument("--workers", type=str)
    shared.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
    shared.add_argument("--sigma-j", dest="sigma_j")
    shared.add_argument("--n-j", dest="n_j")
    shared.add_argument("--n-r", dest="n_r")
    shared.add_argument("--threshold")
    shared.add_argument("--lambda", dest="lam")
    shared.add_argument("--rho")
    shared.add_argument("--kappa")
    shared.add_argument("--tau")
    shared.add_argument("--head", choices=("oracle", "identity", "recorded"))
    shared.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pseudobox", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("correct", parents=[shared], help="correct pseudo-labels in an exchange file")
    p.add_argument("input")
    p.add_argument("--trace", help="exchange file with source_box entries for --head recorded")
    p = sub.add_parser("simulate", parents=[shared], help="run a synthetic correction experiment")
    p.add_argument("--scenes")
    p.add_argument("--sweep", choices=("sigma_j", "lambda", "n_r", "n_j", "rho"))
    p.add_argument("--values", help="comma-separated sweep values")
    p = sub.add_parser("eval", parents=[shared], help="score thresholded detections against GT")
    p.add_argument("input")
    return parser


def config_from_args(args) -> RunConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise InvalidConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    for attr, key in FLAG_KEYS.items():
        v = getattr(args, attr, None)
        if v is not None:
            overrides[key] = v
    return parse_config(args.config, overrides)


def _meta(cfg: RunConfig) -> dict:
    return {"seed": cfg.seed, "config": cfg.echo()}


def _scene(rec: ImageRecord, cfg: RunConfig, need_gt: bool) -> Scene:
    if need_gt and rec.gt is None:
        raise InvalidInputError(f"image {rec.image_id!r} has no 'gt' field, required by the oracle head")
    k = rec.num_classes or cfg["scene.num_classes"]
    return Scene(rec.image_id, rec.width, rec.height, tuple(rec.gt or ()), k)


def _make_head(cfg: RunConfig):
    kind = cfg["run.head"]
    if kind == "oracle":
        return OracleHead(cfg.oracle())
    if kind == "identity":
        return IdentityHead()
    trace = cfg["run.trace"]
    if trace is None:
        raise InvalidConfigError("--head recorded needs --trace", key="run.trace")
    if not Path(trace).is_file():
        raise InvalidInputError(f"trace file not found: {trace}")
    traces = {}
    for rec in read_exchange(trace):
        if rec.sources is None:
            raise InvalidInputError(f"trace image {rec.image_id!r} lacks source_box entries")
        traces[rec.image_id] = [(s, d.box, d.scores) for s, d in zip(rec.sources, rec.detections)]
    return RecordedHead(traces)


def _write_table(path: Path, rows: list[dict], fmt: str, meta: dict):
    if fmt == "json":
        path.write_text(dumps({"meta": meta, "rows": rows}, indent=2) + "\n")
        return
    buf = io.StringIO()
    buf.write(f"# seed: {meta['seed']}\n# config: {json.dumps(meta['config'], sort_keys=True)}\n")
    cols = list(rows[0]) if rows else []
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow(["" if r[c] is None else repr(fmt_float(r[c])) if isinstance(r[c], float) else r[c]
                    for c in cols])
    path.write_text(buf.getvalue())


def cmd_correct(args, cfg: RunConfig) -> int:
    records = read_exchange(args.input)
    head = _make_head(cfg)
    corr = cfg.correction()
    out_dir = Path(cfg["run.out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs, summary = [], []
    for rec in records:
        scene = _scene(rec, cfg, need_gt=cfg["run.head"] == "oracle")
        pseudo = correct(head, scene, rec.detections, corr, make_rng(cfg.seed, rec.image_id, "correction"))
        outputs.append(ImageRecord(rec.image_id, rec.width, rec.height, rec.gt, pseudo.labels))
        scores = [d.confidence for d in pseudo.labels]
        summary.append({"image_id": rec.image_id, "kept": len(pseudo.labels),
                        "mean_score": float(np.mean(scores)) if scores else 0.0,
                        "mean_shift": mean_shift(pseudo)})
        print(f"{rec.image_id}\tkept={len(pseudo.labels)}\tmean_score={summary[-1]['mean_score']:.4f}"
              f"\tmean_shift={summary[-1]['mean_shift']:.3f}px")
    write_exchange(out_dir / "corrected.jsonl", outputs, meta=_meta(cfg), pin_labels=True)
    fmt = cfg["run.format"]
    _write_table(out_dir / f"summary.{fmt}", summary, fmt, _meta(cfg))
    print(f"{len(records)} images corrected -> {out_dir / 'corrected.jsonl'}")
    return EXIT_OK


def cmd_simulate(args, cfg: RunConfig) -> int:
    exp = cfg.experiment()
    report = run_experiment(exp, workers=cfg["run.workers"], echo=cfg.echo())
    out_dir = Path(cfg["run.out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report_json(report))
    (out_dir / "report.csv").write_text(report_csv(report))
    for row in report.rows:
        label = f"{row['sweep_axis']}={row['sweep_value']} " if row["sweep_axis"] else ""
        gain = row["iou_gain"]
        print(f"{label}iou_gain={'n/a' if gain is None else f'{gain:+.4f}'}")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    records = read_exchange(args.input)
    thr = cfg["correction.score_threshold"]
    results, rows = [], []
    for rec in records:
        scene = _scene(rec, cfg, need_gt=True)
        m = evaluate(select(rec.detections, thr), scene)
        results.append((m, 0))
        rows.append({"image_id": rec.image_id, "n_pred": m.n_pred, "n_gt": m.n_gt, "mean_iou": m.mean_iou,
                     "ap50": m.ap[0.5] if m.ap else None, "ap75": m.ap[0.75] if m.ap else None,
                     "precision": m.precision, "recall": m.recall})
    agg = aggregate_arm(results)
    out_dir = Path(cfg["run.out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    fmt = cfg["run.format"]
    _write_table(out_dir / f"eval.{fmt}", rows, fmt, _meta(cfg))
    (out_dir / "eval_summary.json").write_text(dumps({"meta": _meta(cfg), "summary": agg}, indent=2) + "\n")
    print(f"images={len(records)} mean_iou={agg['mean_iou']} ap50={agg['ap50']} ap75={agg['ap75']}")
    return EXIT_OK


COMMANDS = {"correct": cmd_correct, "simulate": cmd_simulate, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        return COMMANDS[args.command](args, cfg)
    except InvalidConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvalidInputError, SceneError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except PseudoboxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
