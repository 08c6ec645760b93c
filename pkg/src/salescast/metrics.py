"""MSE/RMSE evaluation, forecast-curve export, and the four-model benchmark."""

from __future__ import annotations

import csv
import math
import statistics
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .data import NormStats, WindowedDataset, eval_batches, prepare_datasets, quarter_str
from .errors import BenchmarkError, DimensionError, DivergedTrainingError, SalescastError
from .models import KINDS, Model, ModelSpec, build, forward
from .synth import generate_benchmark_suite, write_csv
from .tensor import RngStream
from .train import TrainConfig, train

DISPLAY_NAMES = {"cnn_lstm": "CNN-LSTM", "cnn": "CNN", "lstm": "LSTM", "rnn": "RNN"}


@dataclass
class MetricsReport:
    mse: float
    rmse: float
    n: int
    pairs: list  # (quarter id "YYYY-Qn", actual, predicted), denormalized units
    mse_normalized: float = math.nan
    rmse_normalized: float = math.nan


def evaluate(m: Model, test: WindowedDataset, stats: NormStats | None = None) -> MetricsReport:
    """Infer-mode evaluation in chronological order, metrics in raw units.

    Stateful kinds reset state once at the start of the sequence and then
    carry it batch to batch (one batch per quarter). Model parameters are
    never mutated.
    """
    stats = stats or test.stats
    if test.n_channels != m.spec.input_channels or test.window_len != m.spec.window_len:
        raise DimensionError(
            f"dataset ({test.n_channels} ch, window {test.window_len}) does not "
            f"match model spec ({m.spec.input_channels} ch, window {m.spec.window_len})"
        )
    m.reset_states()
    pairs = []
    se_raw = 0.0
    se_norm = 0.0
    for idx in eval_batches(test):
        y_hat, _ = forward(m, test.x[idx], "infer")
        for row, i in enumerate(idx):
            pred_n = float(y_hat[row, 0])
            act_n = float(test.y[i, 0])
            pred = stats.inverse("salesvolume", pred_n)
            act = stats.inverse("salesvolume", act_n)
            se_raw += (pred - act) ** 2
            se_norm += (pred_n - act_n) ** 2
            pairs.append((quarter_str(test.target_quarters[i]), act, pred))
    n = len(test)
    mse = se_raw / n if n else math.nan
    mse_n = se_norm / n if n else math.nan
    return MetricsReport(
        mse=mse, rmse=math.sqrt(mse), n=n, pairs=pairs,
        mse_normalized=mse_n, rmse_normalized=math.sqrt(mse_n),
    )


def export_curve(report: MetricsReport, path):
    """Write the actual-vs-predicted curve as quarter,actual,predicted CSV."""
    if not report.pairs:
        raise SalescastError("cannot export an empty report")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quarter", "actual", "predicted"])
        for quarter, actual, predicted in report.pairs:
            w.writerow([quarter, repr(actual), repr(predicted)])


def format_metrics(report: MetricsReport, verbose: bool = False) -> str:
    lines = [
        f"samples {report.n}",
        f"MSE     {report.mse:.6f}",
        f"RMSE    {report.rmse:.6f}",
    ]
    if verbose:
        lines.append(f"MSE  (normalized) {report.mse_normalized:.6f}")
        lines.append(f"RMSE (normalized) {report.rmse_normalized:.6f}")
    return "\n".join(lines) + "\n"


@dataclass
class BenchmarkRun:
    dataset: str
    seed: int
    kind: str
    mse: float
    rmse: float
    diverged: bool = False


@dataclass
class BenchmarkTable:
    medians: dict  # kind -> (mse, rmse)
    runs: list = field(default_factory=list)  # BenchmarkRun breakdown

    def to_text(self) -> str:
        lines = ["Model     MSE      RMSE"]
        for kind in KINDS:
            mse, rmse = self.medians[kind]
            lines.append(f"{DISPLAY_NAMES[kind]:<9} {mse:<8.3f} {rmse:.3f}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        lines = ["model,mse,rmse"]
        for kind in KINDS:
            mse, rmse = self.medians[kind]
            lines.append(f"{DISPLAY_NAMES[kind]},{mse!r},{rmse!r}")
        return "\n".join(lines) + "\n"

    def runs_csv(self) -> str:
        lines = ["dataset,seed,model,mse,rmse,diverged"]
        for r in self.runs:
            lines.append(
                f"{r.dataset},{r.seed},{DISPLAY_NAMES[r.kind]},{r.mse!r},"
                f"{r.rmse!r},{int(r.diverged)}"
            )
        return "\n".join(lines) + "\n"


def run_single(csv_path, kind: str, seed: int, cfg: TrainConfig,
               window_len: int = 8, split_frac: float = 0.8):
    """Preprocess, train, and evaluate one model; returns (model, report, history)."""
    train_set, test_set, stats, vocabs, _ = prepare_datasets(
        csv_path, window_len=window_len, split_frac=split_frac
    )
    spec = ModelSpec(kind=kind, input_channels=train_set.n_channels,
                     window_len=window_len)
    run_cfg = replace(cfg, seed=seed)
    model = build(spec, RngStream(seed))
    history = train(model, train_set, test_set, run_cfg)
    report = evaluate(model, test_set, stats)
    return model, report, history


def benchmark(dataset_paths, seeds, cfg: TrainConfig, window_len: int = 8,
              split_frac: float = 0.8, kinds=KINDS) -> BenchmarkTable:
    """Train and evaluate every kind on every (dataset, seed); median table.

    A diverged run is recorded, warned about, and excluded from medians; if
    every run of a kind diverges the benchmark fails.
    """
    if not dataset_paths or not seeds:
        raise BenchmarkError("benchmark needs at least one dataset and one seed")
    runs = []
    medians = {}
    for kind in kinds:
        mses = []
        for name, path in dataset_paths:
            for seed in seeds:
                try:
                    _, report, _ = benchmark_run = run_single(
                        path, kind, seed, cfg, window_len, split_frac
                    )
                    runs.append(BenchmarkRun(name, seed, kind, report.mse, report.rmse))
                    mses.append(report.mse)
                except DivergedTrainingError:
                    warnings.warn(f"{kind} diverged on {name} seed {seed}; excluded")
                    runs.append(BenchmarkRun(name, seed, kind, math.nan, math.nan,
                                             diverged=True))
        if not mses:
            raise BenchmarkError(f"every {kind} run diverged")
        med = statistics.median(mses)
        medians[kind] = (med, math.sqrt(med))
    return BenchmarkTable(medians=medians, runs=runs)


def materialize_suite(suite_seed: int, out_dir) -> list:
    """Write the fixed benchmark suite CSVs to disk; returns (name, path) pairs."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name, cfg in generate_benchmark_suite(suite_seed):
        path = os.path.join(out_dir, f"{name}.csv")
        write_csv(cfg, path)
        paths.append((name, path))
    return paths
