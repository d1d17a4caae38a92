"""Loss-comparison sweep: every selected loss times every repetition.

Each cell splits the data 70/30 with its own seed, trains one network and
scores both sides.  Cells are isolated, so a numeric failure in one loss
does not stop the others.  Results are aggregated per loss as mean and
population standard deviation over the successful repetitions.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .config import ExperimentConfig
from .data import LabeledDataset, generate_synthetic, load_dataset, split
from .divergences import LossId
from .trainer import MetricBundle, TrainReport, evaluate, train

log = logging.getLogger(__name__)

METRICS = ("macro_f1", "ndcg", "acc_rank")
SPLITS = ("train", "test")


@dataclass
class CellResult:
    loss: LossId
    repetition: int
    seed: int
    report: TrainReport | None = None
    train_metrics: MetricBundle | None = None
    test_metrics: MetricBundle | None = None
    truth_metrics: MetricBundle | None = None
    converged_epoch: int | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class LossSummary:
    loss: LossId
    n_ok: int
    mean: dict = field(default_factory=dict)  # (metric, split) -> value
    std: dict = field(default_factory=dict)
    mean_history: np.ndarray | None = None
    converged_epoch: int | None = None  # on the repetition-mean loss curve
    errors: list = field(default_factory=list)

    @property
    def absent(self) -> bool:
        return self.n_ok == 0


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    cells: list
    summaries: dict  # LossId -> LossSummary

    @property
    def n_failed(self) -> int:
        return sum(not c.ok for c in self.cells)

    @property
    def exit_code(self) -> int:
        if self.n_failed == 0:
            return 0
        return 3 if self.n_failed == len(self.cells) else 2


def load_experiment_data(cfg: ExperimentConfig) -> LabeledDataset:
    if cfg.dataset_path is not None:
        return load_dataset(cfg.dataset_path)
    return generate_synthetic(cfg.synthetic)


def _converged(history, threshold):
    try:
        return metrics.epochs_to_converge(history, threshold)
    except Exception:  # a zero or single-epoch history has no defined delta
        return None


def run_cell(ds: LabeledDataset, cfg: ExperimentConfig, loss: LossId, repetition: int) -> CellResult:
    seed = cfg.seed_for(repetition)
    cell = CellResult(loss, repetition, seed)
    try:
        train_ds, test_ds = split(ds, cfg.train_fraction, seed)
        tcfg = cfg.train.replace(loss=loss, seed=seed)
        cell.report = train(train_ds, tcfg)
        cell.train_metrics = evaluate(cell.report.final_params, train_ds, tcfg.clip)
        cell.test_metrics = evaluate(cell.report.final_params, test_ds, tcfg.clip)
        if test_ds.truth is not None:
            cell.truth_metrics = evaluate(cell.report.final_params, test_ds, tcfg.clip, use_truth=True)
        cell.converged_epoch = _converged(cell.report.loss_history, cfg.convergence_threshold)
    except Exception as exc:  # isolate the cell, keep sweeping
        log.warning("cell %s/%d failed: %s", loss, repetition, exc)
        cell.report = None
        cell.error = f"{type(exc).__name__}: {exc}"
    return cell


def _run_cell_args(args):
    return run_cell(*args)


def summarize(cfg: ExperimentConfig, cells) -> dict:
    summaries = {}
    for loss in cfg.losses:
        mine = [c for c in cells if c.loss is loss]
        ok = [c for c in mine if c.ok]
        s = LossSummary(loss, len(ok), errors=[c.error for c in mine if not c.ok])
        if ok:
            for metric in METRICS:
                for side, attr in zip(SPLITS, ("train_metrics", "test_metrics")):
                    values = np.array([getattr(getattr(c, attr), metric) for c in ok])
                    s.mean[metric, side] = float(np.mean(values))
                    s.std[metric, side] = float(np.std(values))
            s.mean_history = np.mean([c.report.loss_history for c in ok], axis=0)
            s.converged_epoch = _converged(s.mean_history, cfg.convergence_threshold)
        summaries[loss] = s
    return summaries


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentReport:
    """Run the full sweep; with ``write`` the result files go to ``cfg.output_dir``."""
    ds = load_experiment_data(cfg)
    jobs = [(ds, cfg, loss, rep) for loss in cfg.losses for rep in range(cfg.repetitions)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            cells = list(pool.map(_run_cell_args, jobs))
    else:
        cells = [run_cell(*job) for job in jobs]
    report = ExperimentReport(cfg, cells, summarize(cfg, cells))
    if write:
        from .output import write_outputs

        write_outputs(report, cfg.output_dir)
    return report
