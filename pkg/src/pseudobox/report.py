"""JSON and flat-CSV serialisation of experiment reports (columns in docs/report_schema.md)."""

from __future__ import annotations

import csv
import io
import json

from .exchange import dumps, fmt_float
from .loss import ABLATION_VARIANTS
from .simulator import ExperimentReport

ARM_METRICS = ("n_scenes", "n_pseudo", "n_gt", "mean_iou", "ap50", "ap75", "ap", "precision", "recall",
               "score_iou_corr", "ap_excluded_scenes", "below_threshold")


def report_json(report: ExperimentReport) -> str:
    return dumps(report.to_dict(), indent=2) + "\n"


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(fmt_float(v))
    return str(v)


def csv_columns(report: ExperimentReport) -> list[str]:
    arms = report.header["arms"]
    rounds = max((len(r["stability"]) for r in report.rows), default=0)
    cols = ["sweep_axis", "sweep_value", "iou_gain"]
    cols += [f"{arm}_{m}" for arm in arms for m in ARM_METRICS]
    for k in range(1, rounds + 1):
        cols += [f"d_cls_r{k}_mean", f"d_cls_r{k}_std", f"d_loc_r{k}_mean", f"d_loc_r{k}_std"]
    cols += [f"student_iou_{v}" for v in ABLATION_VARIANTS]
    return cols


def report_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    buf.write(f"# seed: {report.seed}\n")
    buf.write(f"# config: {json.dumps(report.config, sort_keys=True)}\n")
    buf.write(f"# {report.header['ap_method']}\n")
    cols = csv_columns(report)
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for row in report.rows:
        flat = {"sweep_axis": row["sweep_axis"], "sweep_value": row["sweep_value"], "iou_gain": row["iou_gain"]}
        for arm, metrics in row["arms"].items():
            for m in ARM_METRICS:
                flat[f"{arm}_{m}"] = metrics[m]
        for st in row["stability"]:
            k = st["round"]
            for name in ("d_cls_mean", "d_cls_std", "d_loc_mean", "d_loc_std"):
                flat[f"{name[:5]}_r{k}_{name[6:]}"] = st[name]
        for v, value in row["student_iou"].items():
            flat[f"student_iou_{v}"] = value
        writer.writerow([_cell(flat.get(c)) for c in cols])
    return buf.getvalue()
