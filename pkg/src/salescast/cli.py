"""Command-line surface tying data, models, training, and evaluation together.

Subcommands: synth, train, evaluate, predict, benchmark, export-curve.
Defaults < config file (`key = value`, `#` comments) < CLI flags. Report
paths write a rendered PNG figure next to each delimited output.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import os
import sys

from . import data as D
from . import figures, metrics, synth
from .errors import ConfigError, SalescastError
from .models import KINDS, ModelSpec, build
from .tensor import RngStream
from .train import TrainConfig, load_model, save_model, train

_TRAIN_KEYS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
_SYNTH_KEYS = {f.name: f.type for f in dataclasses.fields(synth.SynthConfig)}
_EXTRA_KEYS = {"window", "split", "kind", "use_region", "benchmark_seeds"}
KNOWN_KEYS = set(_TRAIN_KEYS) | set(_SYNTH_KEYS) | _EXTRA_KEYS


def parse_config_file(path) -> dict:
    """Flat `key = value` config; `#` starts a comment; unknown keys rejected."""
    cfg = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in KNOWN_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            cfg[key] = value
    return cfg


def _coerce(value: str, like):
    if isinstance(like, bool):
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {value!r}")
    if like is None or isinstance(like, float):
        if value.lower() in ("none", ""):
            return None
        if value.lower() in ("true", "yes"):
            return True
        if value.lower() in ("false", "no"):
            return False
        return float(value)
    if isinstance(like, int):
        return int(value)
    return value


def build_train_config(file_cfg: dict, seed) -> TrainConfig:
    cfg = TrainConfig()
    for key, value in file_cfg.items():
        if key in _TRAIN_KEYS:
            try:
                setattr(cfg, key, _coerce(value, getattr(cfg, key)))
            except ValueError as exc:
                raise ConfigError(f"config key {key}: {exc}") from None
    if seed is not None:
        cfg.seed = seed
    return cfg


def build_synth_config(file_cfg: dict, seed) -> synth.SynthConfig:
    cfg = synth.SynthConfig(
        n_drugs=6, trend_slope=1.5, seasonal_amplitude=8.0,
        noise_std=2.0, price_elasticity=-0.3, price_walk_std=1.0,
    )
    for key, value in file_cfg.items():
        if key in _SYNTH_KEYS:
            try:
                setattr(cfg, key, _coerce(value, getattr(cfg, key)))
            except ValueError as exc:
                raise ConfigError(f"config key {key}: {exc}") from None
    if seed is not None:
        cfg.seed = seed
    return cfg


def _opt(file_cfg, args, key, default, cast):
    flag = getattr(args, key.replace("-", "_"), None)
    if flag is not None:
        return flag
    if key in file_cfg:
        return cast(file_cfg[key])
    return default


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _figure_path(out_path) -> str:
    root, _ = os.path.splitext(out_path)
    return root + ".png"


def _prepare_for_model(model, data_path, split_frac):
    """Reprocess a CSV with the preprocessing state stored in the model."""
    meta = model.meta
    if meta is None:
        raise SalescastError("model file carries no preprocessing metadata")
    stats = D.NormStats.from_dict(meta["stats"])
    vocabs = meta["vocabs"]
    rows = D.parse_csv(data_path)
    records, _ = D.clean(rows)
    records, _ = D.encode_categoricals(records)  # standardizes strings
    series = D.time_align(records, gap_fill=bool(meta.get("gap_fill", False)))
    series_list = [series[k] for k in sorted(series)]
    normed = D.apply_normalization(series_list, stats)
    ds = D.windowize(normed, vocabs, stats, window_len=meta["window_len"],
                     use_region=meta.get("use_region", True))
    all_quarters = sorted({q for s in series_list for q in s.quarters})
    train_ds, test_ds = D.chronological_split(ds, all_quarters, split_frac)
    return ds, train_ds, test_ds, series_list, stats, vocabs


def cmd_synth(args, file_cfg):
    cfg = build_synth_config(file_cfg, args.seed)
    synth.write_csv(cfg, args.out)
    print(f"wrote {cfg.n_drugs} drugs x {cfg.n_quarters} quarters to {args.out}")
    return 0


def cmd_train(args, file_cfg):
    window = _opt(file_cfg, args, "window", 8, int)
    split = _opt(file_cfg, args, "split", 0.8, float)
    kind = _opt(file_cfg, args, "kind", "cnn_lstm", str)
    cfg = build_train_config(file_cfg, args.seed)
    train_set, test_set, stats, vocabs, report = D.prepare_datasets(
        args.data, window_len=window, split_frac=split,
        use_region=_opt(file_cfg, args, "use_region", True, bool),
    )
    if report:
        sys.stderr.write(D.format_drop_report(report))
    spec = ModelSpec(kind=kind, input_channels=train_set.n_channels, window_len=window)
    model = build(spec, RngStream(cfg.seed))
    history = train(model, train_set, test_set, cfg)
    model.meta = {
        "stats": stats.to_dict(),
        "vocabs": vocabs,
        "window_len": window,
        "split_frac": split,
        "use_region": _opt(file_cfg, args, "use_region", True, bool),
        "channel_names": train_set.channel_names,
    }
    save_model(model, args.out)
    history_path = os.path.splitext(args.out)[0] + ".history.csv"
    _write(history_path, history.to_csv())
    figures.render_history(history, _figure_path(history_path))
    final = history.final_train_mse()
    print(f"trained {kind} for {cfg.epochs} epochs; final train MSE {final:.6f}")
    print(f"model: {args.out}")
    print(f"history: {history_path}")
    return 0


def cmd_evaluate(args, file_cfg):
    model = load_model(args.model)
    split = _opt(file_cfg, args, "split", model.meta.get("split_frac", 0.8) if model.meta else 0.8, float)
    _, _, test_ds, _, stats, _ = _prepare_for_model(model, args.data, split)
    report = metrics.evaluate(model, test_ds, stats)
    sys.stdout.write(metrics.format_metrics(report, verbose=True))
    if args.out:
        metrics.export_curve(report, args.out)
        figures.render_curve(report, _figure_path(args.out))
        print(f"curve: {args.out}")
    return 0


def cmd_predict(args, file_cfg):
    model = load_model(args.model)
    _, _, _, series_list, stats, vocabs = _prepare_for_model(model, args.data, 0.8)
    meta = model.meta
    window = meta["window_len"]
    print("drug,quarter,predicted_volume")
    for s in series_list:
        if len(s) < window:
            raise SalescastError(
                f"{s.drug}: needs at least {window} quarters for one forecast"
            )
        feats = D.series_features(s, vocabs, meta.get("use_region", True))
        x = feats[:, -window:][None, :, :]
        model.reset_states()
        y_hat, _ = metrics.forward(model, x, "infer")
        pred = stats.inverse("salesvolume", float(y_hat[0, 0]))
        nq = D.next_quarter(s.quarters[-1])
        print(f"{s.drug},{D.quarter_str(nq)},{pred!r}")
    return 0


def cmd_benchmark(args, file_cfg):
    suite_seed = args.seed if args.seed is not None else 1
    n_seeds = int(file_cfg.get("benchmark_seeds", 5))
    out_base = args.out or "benchmark"
    cfg = build_train_config(file_cfg, None)
    if "epochs" not in file_cfg:
        cfg.epochs = 40  # benchmark default; full 200 is slow x 100 runs
    if "batch_size" not in file_cfg:
        cfg.batch_size = 6  # aligns each stateful batch with one target quarter
    if "shuffle" not in file_cfg:
        cfg.shuffle = False  # every kind trains chronologically in the benchmark
    suite_dir = out_base + "_data"
    datasets = metrics.materialize_suite(suite_seed, suite_dir)
    seeds = [suite_seed * 100 + i for i in range(n_seeds)]
    window = _opt(file_cfg, args, "window", 12, int)
    split = _opt(file_cfg, args, "split", 0.8, float)
    table = metrics.benchmark(datasets, seeds, cfg, window_len=window, split_frac=split)
    sys.stdout.write(table.to_text())
    _write(out_base + ".csv", table.to_csv())
    _write(out_base + "_runs.csv", table.runs_csv())
    figures.render_benchmark(table, out_base + ".png")
    print(f"table: {out_base}.csv  runs: {out_base}_runs.csv  figure: {out_base}.png")
    return 0


def cmd_export_curve(args, file_cfg):
    model = load_model(args.model)
    full_ds, _, _, _, stats, _ = _prepare_for_model(model, args.data, 0.8)
    report = metrics.evaluate(model, full_ds, stats)
    metrics.export_curve(report, args.out)
    figures.render_curve(report, _figure_path(args.out))
    print(f"curve: {args.out}  figure: {_figure_path(args.out)}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="salescast",
        description="CNN-LSTM quarterly sales forecasting toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, data=False, model=False, out_required=False):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="random seed")
        if data:
            p.add_argument("--data", required=True, help="input CSV")
        if model:
            p.add_argument("--model", required=True, help="model file")
        p.add_argument("--out", required=out_required, help="output path")
        p.add_argument("--window", type=int, help="input window length (quarters)")
        p.add_argument("--split", type=float, help="chronological train fraction")

    p = sub.add_parser("synth", help="write a synthetic dataset CSV")
    common(p, out_required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train a model on a CSV")
    common(p, data=True, out_required=True)
    p.add_argument("--kind", choices=KINDS, help="model kind (default cnn_lstm)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a trained model")
    common(p, data=True, model=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("predict", help="forecast the next quarter per drug")
    common(p, data=True, model=True)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("benchmark", help="run the four-model comparison suite")
    common(p)
    p.set_defaults(fn=cmd_benchmark)

    p = sub.add_parser("export-curve", help="export actual-vs-predicted curve")
    common(p, data=True, model=True, out_required=True)
    p.set_defaults(fn=cmd_export_curve)
    return parser


def cli_main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    file_cfg = {}
    if args.config:
        try:
            file_cfg = parse_config_file(args.config)
        except (OSError, SalescastError) as exc:
            sys.stderr.write(f"error: {exc}\n")
            return 1
    try:
        return args.fn(args, file_cfg)
    except SalescastError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


def main():  # console-script entry point
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
