"""Serialisation of experiment logs: rounds.csv, summary.json, report.csv, comparisons.

Numbers are written with 17 significant digits and '\\n' line endings so that
identical runs produce byte-identical files.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from pathlib import Path
from typing import Sequence

from .fl import ExperimentResult, RoundRecord

METRICS = ("accuracy", "precision", "recall")


def fmt(x) -> str:
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, int):
        return str(x)
    return format(float(x), ".17g")


def round_header(n_operators: int, eval_sets: Sequence[str]) -> list[str]:
    ops = range(n_operators)
    cols = ["round", "strategy", "stalled"]
    cols += [f"loss_op{t}" for t in ops]
    cols += [f"acc_op{t}" for t in ops]
    cols += [f"pbar_op{t}" for t in ops]
    cols += ["valid_mask"]
    cols += [f"delta_op{t}" for t in ops]
    cols += [f"{s}_{m}" for s in eval_sets for m in METRICS]
    return cols


def round_row(rec: RoundRecord, eval_sets: Sequence[str]) -> list[str]:
    rep = rec.report
    n = len(rec.operator_loss)
    mask = "".join("1" if t in rep.valid else "0" for t in range(n))
    row = [str(rec.round), rec.strategy, fmt(rec.stalled)]
    row += [fmt(v) for v in rec.operator_loss]
    row += [fmt(v) for v in rec.operator_accuracy]
    row += [fmt(v) for v in rep.mean_similarity]
    row += [mask]
    row += [fmt(v) for v in rep.weights]
    row += [fmt(rec.evaluation[s][m]) for s in eval_sets for m in METRICS]
    return row


class RoundWriter:
    """Streams one CSV row per completed round, flushing after each."""

    def __init__(self, path, n_operators: int, eval_sets: Sequence[str]):
        self.eval_sets = tuple(eval_sets)
        self._fh = open(path, "w", newline="")
        self._csv = csv.writer(self._fh, lineterminator="\n")
        self._csv.writerow(round_header(n_operators, self.eval_sets))
        self._fh.flush()

    def write(self, rec: RoundRecord):
        self._csv.writerow(round_row(rec, self.eval_sets))
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def _clean(obj):
    if isinstance(obj, float):
        return None if math.isnan(obj) else obj
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def summary_dict(result: ExperimentResult, config: dict) -> dict:
    recs = result.records
    n_ops = len(result.operator_participants)
    excluded = [sum(1 for r in recs if t not in r.report.valid) for t in range(n_ops)]
    return _clean({
        "config": config,
        "rounds_completed": len(recs),
        "stalled_rounds": [r.round for r in recs if r.stalled],
        "excluded_rounds_per_operator": excluded,
        "operator_participants": result.operator_participants,
        "initial_evaluation": result.initial_evaluation,
        "final_evaluation": result.final_evaluation,
    })


def write_summary(path, result: ExperimentResult, config: dict):
    text = json.dumps(summary_dict(result, config), indent=2, sort_keys=True)
    Path(path).write_text(text + "\n")


def write_report(path, rows: Sequence[dict]):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["participant", "group", "n"] + list(METRICS))
        for r in rows:
            wr.writerow([r["participant"], r["group"], r["n"]] + [fmt(r[m]) for m in METRICS])


def write_timing(path, records: Sequence[RoundRecord]):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["round", "wall_time_s"])
        for r in records:
            wr.writerow([r.round, f"{r.wall_time:.6f}"])


def read_rounds(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def compare_runs(dirs: Sequence, metric: str = "") -> tuple[list[list[str]], list[list[str]]]:
    """Per-round table of one accuracy column across runs, and a final-metric summary.

    Runs of unequal length are truncated to the common prefix (with a warning).
    ``metric`` defaults to ``validation_accuracy`` or else the first accuracy column.
    """
    if len(dirs) < 2:
        raise ValueError("compare needs at least two run directories")
    logs = [read_rounds(Path(d) / "rounds.csv") for d in dirs]
    labels = [Path(d).name or str(d) for d in dirs]
    if len(set(labels)) != len(labels):
        labels = [str(d) for d in dirs]
    lengths = [len(lg) for lg in logs]
    common = min(lengths)
    if len(set(lengths)) > 1:
        warnings.warn(f"round counts differ {lengths}; comparing the first {common} rounds")
    if not metric:
        cols = [c for c in (logs[0][0].keys() if logs[0] else []) if c.endswith("_accuracy") and not c.startswith("acc_op")]
        metric = "validation_accuracy" if "validation_accuracy" in cols else (cols[0] if cols else "")
    if any(lg and metric not in lg[0] for lg in logs):
        raise ValueError(f"metric column {metric!r} missing from at least one run")
    table = [["round"] + [f"{lab}:{metric}" for lab in labels] + [f"delta:{lab}" for lab in labels[1:]]]
    for i in range(common):
        vals = [float(lg[i][metric]) for lg in logs]
        table.append([logs[0][i]["round"]] + [fmt(v) for v in vals] + [fmt(v - vals[0]) for v in vals[1:]])
    final_cols = [c for c in (logs[0][0].keys() if logs[0] else [])
                  if any(c.endswith("_" + m) for m in METRICS) and not c.startswith("acc_op")]
    summary = [["run", "strategy", "rounds"] + [f"final_{c}" for c in final_cols]
               + [f"final_{c}_delta" for c in final_cols if c.endswith("_accuracy")]]
    base = logs[0][common - 1] if common else {}
    for lab, lg in zip(labels, logs):
        last = lg[common - 1] if common else {}
        row = [lab, last.get("strategy", ""), str(common)]
        row += [fmt(float(last[c])) if last else "" for c in final_cols]
        row += [fmt(float(last[c]) - float(base[c])) if last else ""
                for c in final_cols if c.endswith("_accuracy")]
        summary.append(row)
    return table, summary


def write_table(path, rows: Sequence[Sequence[str]]):
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
