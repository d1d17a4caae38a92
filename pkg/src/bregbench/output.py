"""Result files and the plain-text comparison summary.

Files written to the output directory:

``table_macro_f1.csv``, ``table_ndcg.csv``, ``table_acc_rank.csv``
    one row per loss: Bregman flag, train/test percentage mean and standard
    deviation (3 decimals), successful repetitions, and top-of-column flags.
``curves_loss.csv`` / ``curves_delta.csv``
    long format ``loss,repetition,epoch,value``, reals at 17 significant digits.
``convergence.csv``
    converged epoch per loss for the repetition-mean curve and each repetition.
``report.json``
    the complete experiment report, per-repetition values included.
``summary.txt``
    the output of :func:`emit_comparison`.

Nothing time-dependent is written, so identical configs give identical bytes.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from . import metrics
from .data import format_real
from .divergences import LossId
from .experiment import METRICS, SPLITS, ExperimentReport

NA = "NA"
NOT_CONVERGED = "none"


def _pct(x: float) -> str:
    return f"{100.0 * x:.3f}"


def table_rows(report: ExperimentReport, metric: str) -> list[list[str]]:
    header = ["loss", "bregman", "train", "train_std", "test", "test_std", "repetitions_ok", "train_top", "test_top"]
    summaries = list(report.summaries.values())
    best = {}
    for side in SPLITS:
        shown = [_pct(s.mean[metric, side]) for s in summaries if not s.absent]
        best[side] = max(shown, key=float) if shown else None

    rows = [header]
    for s in summaries:
        row = [s.loss.value, str(int(s.loss.is_bregman))]
        if s.absent:
            row += [NA] * 4 + ["0", "0", "0"]
        else:
            cells = {side: _pct(s.mean[metric, side]) for side in SPLITS}
            for side in SPLITS:
                row += [cells[side], _pct(s.std[metric, side])]
            row.append(str(s.n_ok))
            row += [str(int(float(cells[side]) == float(best[side]))) for side in SPLITS]
        rows.append(row)
    return rows


def curve_rows(report: ExperimentReport, kind: str) -> list[list[str]]:
    rows = [["loss", "repetition", "epoch", "value"]]
    for cell in report.cells:
        if not cell.ok:
            continue
        history = cell.report.loss_history
        if kind == "loss":
            values = history
        else:
            try:
                values = metrics.convergence_delta(history)
            except Exception:
                continue
        rows += [[cell.loss.value, str(cell.repetition), str(t), format_real(v)] for t, v in enumerate(values)]
    return rows


def _epoch(value) -> str:
    return NOT_CONVERGED if value is None else str(value)


def convergence_rows(report: ExperimentReport) -> list[list[str]]:
    rows = [["loss", "curve", "epoch"]]
    for loss, s in report.summaries.items():
        rows.append([loss.value, "mean", NA if s.absent else _epoch(s.converged_epoch)])
        for cell in report.cells:
            if cell.loss is loss:
                rows.append([loss.value, str(cell.repetition), _epoch(cell.converged_epoch) if cell.ok else NA])
    return rows


def _write_rows(path: Path, rows):
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.writelines(",".join(row) + "\n" for row in rows)


def _jsonable(obj):
    if isinstance(obj, LossId):
        return obj.value
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, tuple):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, dict):
        return {str(_jsonable(k)): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_jsonable(v) for v in obj]
    return obj


def report_dict(report: ExperimentReport) -> dict:
    cfg = report.config
    config = {
        "dataset": {"synthetic": dataclasses.asdict(cfg.synthetic)} if cfg.synthetic else {"path": cfg.dataset_path},
        "train": {k: v for k, v in dataclasses.asdict(cfg.train).items() if k != "loss"},
        "losses": cfg.losses,
        "repetitions": cfg.repetitions,
        "seed_stride": cfg.seed_stride,
        "convergence_threshold": cfg.convergence_threshold,
        "train_fraction": cfg.train_fraction,
    }
    cells = []
    for c in report.cells:
        entry = {"loss": c.loss, "repetition": c.repetition, "seed": c.seed, "error": c.error}
        if c.ok:
            p = c.report.final_params
            entry.update(
                epochs_run=c.report.epochs_run,
                loss_history=c.report.loss_history,
                converged_epoch=c.converged_epoch,
                train=c.train_metrics.as_dict(),
                test=c.test_metrics.as_dict(),
                test_truth=None if c.truth_metrics is None else c.truth_metrics.as_dict(),
                final_params={"layer_sizes": p.layer_sizes, "weights": p.weights, "biases": p.biases},
            )
        cells.append(entry)
    aggregates = {}
    for loss, s in report.summaries.items():
        aggregates[loss.value] = {
            "bregman": loss.is_bregman,
            "repetitions_ok": s.n_ok,
            "errors": s.errors,
            "converged_epoch": s.converged_epoch,
            "mean_loss_history": s.mean_history,
            "mean": {m: {side: s.mean.get((m, side)) for side in SPLITS} for m in METRICS},
            "std": {m: {side: s.std.get((m, side)) for side in SPLITS} for m in METRICS},
        }
    return _jsonable({"config": config, "cells": cells, "aggregates": aggregates})


def write_outputs(report: ExperimentReport, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for metric in METRICS:
        _write_rows(out / f"table_{metric}.csv", table_rows(report, metric))
    _write_rows(out / "curves_loss.csv", curve_rows(report, "loss"))
    _write_rows(out / "curves_delta.csv", curve_rows(report, "delta"))
    _write_rows(out / "convergence.csv", convergence_rows(report))
    with (out / "report.json").open("w", encoding="utf-8") as fh:
        json.dump(report_dict(report), fh, indent=1)
        fh.write("\n")
    (out / "summary.txt").write_text(emit_comparison(report), encoding="utf-8")
    return out


def _ordered(items):
    """Sort (loss, key) pairs by key, breaking ties by loss name."""
    return sorted(items, key=lambda item: (item[1], item[0].value))


def convergence_order(report: ExperimentReport, threshold: float | None = None):
    """Losses that converge on their mean curve, by epoch; then the others."""
    converged, never, absent = [], [], []
    for loss, s in report.summaries.items():
        if s.absent:
            absent.append(loss)
            continue
        epoch = s.converged_epoch
        if threshold is not None:
            try:
                epoch = metrics.epochs_to_converge(s.mean_history, threshold)
            except Exception:
                epoch = None
        (never if epoch is None else converged).append((loss, epoch))
    by_name = lambda loss: loss.value  # noqa: E731
    return _ordered(converged), sorted((loss for loss, _ in never), key=by_name), sorted(absent, key=by_name)


def emit_comparison(report: ExperimentReport, threshold: float | None = None) -> str:
    """Human-readable ranking of losses per metric plus the convergence ordering."""
    cfg = report.config
    threshold = cfg.convergence_threshold if threshold is None else threshold
    width = max(len(s.loss.label) for s in report.summaries.values())
    lines = [f"Loss comparison over {cfg.repetitions} repetition(s), convergence threshold {threshold:g}", ""]

    for metric in METRICS:
        lines.append(f"{metric} (%, ranked by test mean; train in brackets)")
        present = [(loss, -s.mean[metric, "test"]) for loss, s in report.summaries.items() if not s.absent]
        for rank, (loss, _) in enumerate(_ordered(present), start=1):
            s = report.summaries[loss]
            lines.append(
                f"  {rank:2d}. {loss.label:<{width}}  {_pct(s.mean[metric, 'test'])} "
                f"+- {_pct(s.std[metric, 'test'])}  [{_pct(s.mean[metric, 'train'])}]"
            )
        for loss, s in report.summaries.items():
            if s.absent:
                lines.append(f"   -  {loss.label:<{width}}  absent (every repetition failed)")
        lines.append("")

    converged, never, absent = convergence_order(report, threshold)
    lines.append(f"convergence (first epoch after which the relative loss change stays below {threshold:g})")
    for rank, (loss, epoch) in enumerate(converged, start=1):
        lines.append(f"  {rank:2d}. {loss.label:<{width}}  epoch {epoch}")
    for loss in never:
        lines.append(f"   -  {loss.label:<{width}}  not converged")
    for loss in absent:
        lines.append(f"   -  {loss.label:<{width}}  absent (every repetition failed)")
    failed = [c for c in report.cells if not c.ok]
    if failed:
        lines += ["", f"{len(failed)} of {len(report.cells)} cell(s) failed:"]
        lines += [f"  {c.loss.value} repetition {c.repetition}: {c.error}" for c in failed]
    return "\n".join(lines) + "\n"
