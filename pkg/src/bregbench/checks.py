"""Numerical property suite behind ``bench check`` and the acceptance tests.

Every check returns one or more :class:`CheckResult` lines.  Checks marked
non-gating report a diagnostic without affecting the overall verdict.
"""

from __future__ import annotations

import hashlib
import math
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import metrics
from .config import config_from_mapping
from .data import SynthConfig, generate_synthetic, split
from .divergences import (
    ALL_LOSSES,
    GENERATORS,
    LossId,
    bregman_from_phi,
    entropy,
    evaluate_loss,
    gradient_wrt_logits,
    gradient_wrt_prediction,
    loss_gradient,
    loss_value,
    softmax,
)
from .experiment import run_experiment
from .output import convergence_order
from .trainer import MlpParams, TrainConfig, _forward_cache, backward, evaluate_predictions, glorot_init, train

FD_STEP = 1e-5
GRAD_RTOL = 1e-4


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    gating: bool = True

    def line(self) -> str:
        tag = ("PASS" if self.passed else "FAIL") if self.gating else "INFO"
        return f"[{tag}] {self.name}: {self.detail}"


# -- sampling and oracles -----------------------------------------------------


def random_simplex(rng, n: int, k: int, floor: float = 0.0) -> np.ndarray:
    """Dirichlet(1) points; ``floor`` > 0 mixes in the uniform vector to stay interior."""
    x = rng.dirichlet(np.ones(k), size=n)
    return (1.0 - floor * k) * x + floor


def central_difference(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    grad = np.empty_like(x)
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = h
        grad[j] = (f(x + e) - f(x - e)) / (2.0 * h)
    return grad


def relative_error(analytic, numeric) -> float:
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / scale)


def project_to_simplex(v: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Euclidean projection onto {y >= floor, sum(y) = 1} (sort-based)."""
    k = len(v)
    total = 1.0 - k * floor
    u = np.sort(v - floor)[::-1]
    css = np.cumsum(u) - total
    rho = np.nonzero(u - css / np.arange(1, k + 1) > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - floor - theta, 0.0) + floor


def bregman_minimizer(loss: LossId, points: np.ndarray, tol: float = 1e-8, max_iter: int = 200_000) -> np.ndarray:
    """Projected gradient descent with backtracking on y -> mean_i d(x_i, y) over the simplex."""
    phi = GENERATORS[loss]

    def objective(y):
        return float(np.mean(bregman_from_phi(phi, points, np.broadcast_to(y, points.shape))))

    def grad(y):
        return np.mean(loss_gradient(loss, points, np.broadcast_to(y, points.shape)), axis=0)

    k = points.shape[1]
    y = np.full(k, 1.0 / k)
    f, step = objective(y), 1.0
    for _ in range(max_iter):
        g = grad(y)
        while True:
            y_new = project_to_simplex(y - step * g, floor=1e-9)
            diff = y_new - y
            f_new = objective(y_new)
            if f_new <= f + g @ diff + diff @ diff / (2.0 * step) + 1e-15:
                break
            step /= 2.0
        if np.max(np.abs(diff)) / step < tol:
            return y_new
        y, f = y_new, f_new
        step *= 2.0
    return y


# -- criteria -------------------------------------------------------------------


def check_divergences(n: int = 10_000, seed: int = 0):
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    ks = (2, 3, 5, 9)
    pairs = [(random_simplex(rng, n // len(ks), k), random_simplex(rng, n // len(ks), k)) for k in ks]
    worst_neg = {}
    worst_id = {}
    worst_gen = {}
    for loss in ALL_LOSSES:
        worst_neg[loss] = min(float(np.min(evaluate_loss(loss, p, q))) for p, q in pairs)
        if loss is not LossId.CROSS_ENTROPY:
            worst_id[loss] = max(float(np.max(evaluate_loss(loss, p, p))) for p, _ in pairs)
        if loss.is_bregman:
            worst_gen[loss] = max(
                float(np.max(np.abs(evaluate_loss(loss, p, q) - bregman_from_phi(GENERATORS[loss], p, q))))
                for p, q in pairs
            )
    elapsed = time.perf_counter() - start
    nonneg = min(worst_neg.values())
    ident = max(worst_id.values())
    gen = max(worst_gen.values())
    return [
        CheckResult("1 non-negativity (9 losses x 10k pairs)", nonneg >= -1e-12, f"min value {nonneg:.3e} (>= -1e-12)"),
        CheckResult("1 identity of indiscernibles", ident <= 1e-8, f"max d(p,p) {ident:.3e} (<= 1e-8, CE excluded)"),
        CheckResult("1 registry == generic Bregman generator", gen <= 1e-9, f"max |diff| {gen:.3e} (<= 1e-9)"),
        CheckResult("1 divergence suite runtime", elapsed < 10.0, f"{elapsed:.2f} s (< 10 s)"),
    ]


def check_decomposition(seed: int = 1):
    rng = np.random.default_rng(seed)
    p = random_simplex(rng, 10_000, 5)
    q = random_simplex(rng, 10_000, 5)
    gap = evaluate_loss(LossId.CROSS_ENTROPY, p, q) - evaluate_loss(LossId.FORWARD_KL, p, q) - entropy(p)
    worst = float(np.max(np.abs(gap)))
    p2 = random_simplex(rng, 1000, 5)
    z = rng.normal(0.0, 2.0, size=(1000, 5))
    g_ce = gradient_wrt_logits(LossId.CROSS_ENTROPY, p2, z)
    g_kl = gradient_wrt_logits(LossId.FORWARD_KL, p2, z)
    gdiff = float(np.max(np.abs(g_ce - g_kl)))
    closed = float(np.max(np.abs(g_ce - (softmax(z) - p2))))
    return [
        CheckResult("2 CE = H(p) + KL(p||q) over 10k pairs", worst <= 1e-9, f"max gap {worst:.3e} (<= 1e-9)"),
        CheckResult("2 logit gradient CE == forward KL", gdiff <= 1e-9, f"max |diff| {gdiff:.3e} over 1000 pairs (<= 1e-9)"),
        CheckResult("2 logit gradient CE == softmax(z) - p", closed <= 1e-9, f"max |diff| {closed:.3e}", gating=False),
    ]


def _prediction_errors(loss, rng, points):
    worst = 0.0
    for _ in range(points):
        k = int(rng.integers(2, 7))
        p = random_simplex(rng, 1, k, floor=0.1 / k)[0]
        q = random_simplex(rng, 1, k, floor=0.1 / k)[0]
        numeric = central_difference(lambda v: loss_value(loss, p, v), q)
        worst = max(worst, relative_error(gradient_wrt_prediction(loss, p, q), numeric))
    return worst


def _logit_errors(loss, rng, points):
    worst = 0.0
    for _ in range(points):
        k = int(rng.integers(2, 7))
        p = random_simplex(rng, 1, k, floor=0.1 / k)[0]
        z = rng.normal(0.0, 1.0, size=k)
        numeric = central_difference(lambda v: evaluate_loss(loss, p, softmax(v)), z)
        worst = max(worst, relative_error(gradient_wrt_logits(loss, p, z), numeric))
    return worst


def _hidden_preactivations(params: MlpParams, x: np.ndarray) -> list:
    out, h = [], x
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        a = h @ w + b
        out.append(a)
        h = np.maximum(a, 0.0)
    return out


def _mlp_point(rng, sizes):
    """Random params and input whose hidden pre-activations keep clear of the ReLU kink."""
    while True:
        params = glorot_init(sizes, int(rng.integers(2**32)))
        params.biases = [rng.normal(0.0, 0.3, size=b.shape) for b in params.biases]
        x = rng.normal(size=sizes[0])
        if all(np.min(np.abs(a)) > 1e-3 for a in _hidden_preactivations(params, x)):
            return params, x


def mlp_gradient_error(loss, rng, points: int = 20, sizes=(3, 4, 2)) -> float:
    worst = 0.0
    for _ in range(points):
        params, x = _mlp_point(rng, list(sizes))
        p = random_simplex(rng, 1, sizes[-1], floor=0.05)[0]

        def composed(vec):
            _, logits = _forward_cache(MlpParams.unflatten(vec, list(sizes)), x[None, :])
            return float(loss_value(loss, p[None, :], softmax(logits))[0])

        numeric = central_difference(composed, params.flatten())
        analytic = backward(params, x, p, loss).flatten()
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def check_gradients(points: int = 200, seed: int = 2):
    rng = np.random.default_rng(seed)
    results = []
    for space, fn, n in (
        ("prediction", _prediction_errors, points),
        ("logit", _logit_errors, points),
        ("3-4-2 MLP end-to-end", mlp_gradient_error, 20),
    ):
        errors = {loss: fn(loss, rng, n) for loss in ALL_LOSSES}
        loss, worst = max(errors.items(), key=lambda kv: kv[1])
        results.append(
            CheckResult(
                f"3 {space} gradients vs central differences",
                worst < GRAD_RTOL,
                f"worst relative error {worst:.2e} ({loss}), {n} points x 9 losses (< 1e-4)",
            )
        )
    return results


def check_trajectories(seed: int = 0):
    ds = generate_synthetic(SynthConfig(N=500, seed=seed))
    k = ds.k
    base = TrainConfig(epochs=20, deterministic_full_batch=True, seed=seed)
    ce = train(ds, base.replace(loss=LossId.CROSS_ENTROPY))
    kl = train(ds, base.replace(loss=LossId.FORWARD_KL))
    d_cekl = ce.final_params.max_abs_diff(kl.final_params)
    mse = train(ds, base.replace(loss=LossId.MSE))
    sse_scaled = train(ds, base.replace(loss=LossId.SQUARED_EUCLIDEAN, learning_rate=base.learning_rate / k))
    d_scaled = sse_scaled.final_params.max_abs_diff(mse.final_params)
    sse_equal = train(ds, base.replace(loss=LossId.SQUARED_EUCLIDEAN))
    d_equal = sse_equal.final_params.max_abs_diff(mse.final_params)
    sse_eps = train(ds, base.replace(loss=LossId.SQUARED_EUCLIDEAN, adam_epsilon=base.adam_epsilon * k))
    d_eps = sse_eps.final_params.max_abs_diff(mse.final_params)

    mb = TrainConfig(epochs=20, seed=seed)
    ce_mb = train(ds, mb.replace(loss=LossId.CROSS_ENTROPY))
    kl_mb = train(ds, mb.replace(loss=LossId.FORWARD_KL))
    d_mb = ce_mb.final_params.max_abs_diff(kl_mb.final_params)
    return [
        CheckResult("4 full-batch CE vs forward KL final params", d_cekl <= 1e-6, f"max-abs {d_cekl:.3e} (<= 1e-6)"),
        CheckResult(
            "4 full-batch SSE (lr/K) vs MSE final params", d_scaled <= 1e-6, f"max-abs {d_scaled:.3e} (<= 1e-6)"
        ),
        CheckResult(
            "4 SSE vs MSE at equal lr (diagnostic)", True, f"max-abs {d_equal:.3e}", gating=False
        ),
        CheckResult(
            "4 SSE vs MSE at equal lr, adam_epsilon x K (diagnostic)", True, f"max-abs {d_eps:.3e}", gating=False
        ),
        CheckResult(
            "4 mini-batch CE vs forward KL (probe)",
            True,
            f"max-abs {d_mb:.3e}; trajectories {'diverge' if d_mb > 1e-6 else 'coincide'}",
            gating=False,
        ),
    ]


def check_minimizer(seed: int = 3, n: int = 50, k: int = 5):
    rng = np.random.default_rng(seed)
    points = random_simplex(rng, n, k, floor=0.01)
    mean = points.mean(axis=0)
    results = []
    for loss in (l for l in ALL_LOSSES if l.is_bregman):
        y = bregman_minimizer(loss, points)
        err = float(np.max(np.abs(y - mean)))
        results.append(CheckResult(f"5 minimizer of sum d(x_i, .) is the mean [{loss}]", err <= 1e-3, f"max |y - mean| {err:.2e} (<= 1e-3)"))
    return results


def check_metrics(seed: int = 4):
    results = []

    def add(name, ok, detail=""):
        results.append(CheckResult(f"6 {name}", bool(ok), detail))

    f1 = metrics.macro_f1(np.eye(2)[[0, 0, 1, 1]], np.eye(2)[[0, 1, 1, 1]])
    add("macro F1 example", abs(f1 - 11 / 15) <= 1e-12 and abs(f1 - 0.733333) < 5e-7, f"{f1:.6f} (0.733333)")
    nd = metrics.ndcg([[0.8, 0.2]], [[0.2, 0.8]])
    log3 = math.log2(3.0)
    add("NDCG example", abs(nd - (0.2 + 0.8 / log3) / (0.8 + 0.2 / log3)) <= 1e-12 and abs(nd - 0.76091) < 5e-6, f"{nd:.5f} (0.76091)")
    t2 = [[0.7, 0.3], [0.4, 0.6]]
    add("acc_rank perfect K=2", metrics.accuracy_ranking_decrease(t2, t2) == 0.75, "0.75")
    add("acc_rank reversed K=2", metrics.accuracy_ranking_decrease(t2, [[0.3, 0.7], [0.6, 0.4]]) == 0.0, "0.0")
    a3 = metrics.accuracy_ranking_decrease([[0.5, 0.3, 0.2]], [[0.5, 0.2, 0.3]])
    add("acc_rank K=3 one match", abs(a3 - 1 / 3) <= 1e-15, f"{a3:.6f} (1/3)")

    rng = np.random.default_rng(seed)
    ok = True
    for k in (2, 3, 5, 9):
        t = random_simplex(rng, 200, k)
        q = random_simplex(rng, 200, k)
        a = metrics.accuracy_ranking_decrease(t, q)
        ok &= 0.0 <= a <= metrics.max_accuracy_ranking(k) + 1e-15
        ok &= abs(metrics.accuracy_ranking_decrease(t, t) - metrics.max_accuracy_ranking(k)) <= 1e-12
        ok &= 0.0 <= metrics.ndcg(t, q) <= 1.0 + 1e-12
        ok &= 0.0 <= metrics.macro_f1(t, q) <= 1.0
    add("metric ranges (acc_rank <= H_K/K, NDCG and F1 in [0, 1])", ok)

    add("rank_categories examples", (
        list(metrics.rank_categories([0.2, 0.5, 0.3])) == [1, 2, 0]
        and list(metrics.rank_categories([1 / 3, 1 / 3, 1 / 3])) == [0, 1, 2]
        and list(metrics.rank_categories([1.0, 0.0])) == [0, 1]
    ))
    add("convergence delta examples", (
        np.allclose(metrics.convergence_delta([10, 5, 4]), [0.5, 0.2], rtol=0, atol=1e-15)
        and list(metrics.convergence_delta([3, 3, 3])) == [0, 0]
        and list(metrics.convergence_delta([1, 2])) == [1.0]
        and metrics.epochs_to_converge([10, 5, 4.9, 4.85], 0.05) == 1
        and metrics.epochs_to_converge([2, 2, 2, 2]) == 0
        and metrics.epochs_to_converge([2.0 ** -i for i in range(10)]) is None
    ))

    p = random_simplex(rng, 10_000, 6)
    q = random_simplex(rng, 10_000, 6)
    geni = float(np.max(np.abs(evaluate_loss(LossId.GENERALIZED_I, p, q) - evaluate_loss(LossId.FORWARD_KL, p, q))))
    add("generalized I == forward KL on the simplex", geni <= 1e-12, f"max |diff| {geni:.2e} (<= 1e-12)")
    return results


SWEEP_CONFIG = {
    "repetitions": 4,
    "losses": "all",
    "convergence_threshold": 0.05,
    "dataset": {"synthetic": {"N": 2000, "d": 20, "K": 5, "annotators_per_item": 50, "seed": 0}},
    "train": {"hidden_sizes": [64], "epochs": 20, "batch_size": 128, "seed": 0},
}


def check_sweep(out_dir=None):
    with tempfile.TemporaryDirectory() as tmp:
        raw = dict(SWEEP_CONFIG, output_dir=str(out_dir or Path(tmp) / "sweep"))
        cfg = config_from_mapping(raw)
        start = time.perf_counter()
        report = run_experiment(cfg)
        elapsed = time.perf_counter() - start

    converged, never, absent = convergence_order(report)
    listed = [l for l, _ in converged] + never
    partition = sorted(listed, key=str) == sorted(cfg.losses, key=str) and not absent

    ds = generate_synthetic(cfg.synthetic)
    base_ndcg, base_f1 = [], []
    for rep in range(cfg.repetitions):
        _, test = split(ds, cfg.train_fraction, cfg.seed_for(rep))
        b = evaluate_predictions(test.targets, np.full_like(test.targets, 1.0 / test.k))
        base_ndcg.append(b.ndcg)
        base_f1.append(b.macro_f1)
    ce = report.summaries[LossId.CROSS_ENTROPY]
    gain_ndcg = ce.mean["ndcg", "test"] - float(np.mean(base_ndcg))
    gain_f1 = ce.mean["macro_f1", "test"] - float(np.mean(base_f1))

    by_f1 = sorted(
        (s for s in report.summaries.values() if not s.absent), key=lambda s: (s.mean["macro_f1", "test"], s.loss.value)
    )
    is_rank = [s.loss for s in by_f1].index(LossId.ITAKURA_SAITO) + 1 if LossId.ITAKURA_SAITO in [s.loss for s in by_f1] else None
    epochs_text = ", ".join(f"{l}={e}" for l, e in converged) + ("; not converged: " + ", ".join(map(str, never)) if never else "")
    return [
        CheckResult("7 sweep cells", len(report.cells) == 36 and report.n_failed == 0, f"{len(report.cells)} cells, {report.n_failed} failed"),
        CheckResult("7 sweep runtime", elapsed < 600.0, f"{elapsed:.1f} s (< 600 s)"),
        CheckResult("7 every loss converged or reported non-converged", partition, epochs_text),
        CheckResult("7 CE beats uniform baseline on test NDCG", gain_ndcg >= 0.05, f"+{gain_ndcg:.4f} (>= 0.05)"),
        CheckResult("7 CE beats uniform baseline on test macro F1", gain_f1 >= 0.15, f"+{gain_f1:.4f} (>= 0.15)"),
        CheckResult(
            "7 Itakura-Saito in bottom two by test macro F1 (diagnostic)",
            is_rank is not None and is_rank <= 2,
            f"rank {is_rank} of {len(by_f1)} from the bottom",
            gating=False,
        ),
    ]


DETERMINISM_CONFIG = {
    "repetitions": 2,
    "losses": ["mse", "cross_entropy", "itakura_saito"],
    "dataset": {"synthetic": {"N": 300, "d": 6, "K": 4, "annotators_per_item": 20, "seed": 11}},
    "train": {"hidden_sizes": [8], "epochs": 4, "batch_size": 64, "seed": 5},
}


def _digest(directory: Path) -> dict:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(directory.iterdir())}


def check_determinism():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        (tmp / "bench.yaml").write_text(yaml.safe_dump(dict(DETERMINISM_CONFIG, output_dir="out")))
        digests = []
        codes = []
        for _ in range(2):
            proc = subprocess.run(
                [sys.executable, "-m", "bregbench.cli", "run", "--config", str(tmp / "bench.yaml"), "--quiet"],
                capture_output=True,
                text=True,
            )
            codes.append(proc.returncode)
            digests.append(_digest(tmp / "out") if (tmp / "out").exists() else {})
    same = codes == [0, 0] and digests[0] == digests[1] and len(digests[0]) == 8
    return [CheckResult("8 two `bench run` processes give byte-identical files", same, f"{len(digests[0])} files, exit codes {codes}")]


CRITERIA = {
    "divergences": check_divergences,
    "decomposition": check_decomposition,
    "gradients": check_gradients,
    "trajectories": check_trajectories,
    "minimizer": check_minimizer,
    "metrics": check_metrics,
    "sweep": check_sweep,
    "determinism": check_determinism,
}


def run_all(names=None, echo=print) -> list[CheckResult]:
    results = []
    for name, fn in CRITERIA.items():
        if names and name not in names:
            continue
        for r in fn():
            echo(r.line())
            results.append(r)
    return results
