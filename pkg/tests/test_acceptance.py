"""Acceptance suite: one test per release criterion, one printed line each.

Run with `pytest tests/test_acceptance.py -s` to see the pass/fail lines as
they happen. The benchmark criterion trains 100 models and dominates runtime.
"""

import contextlib
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from salescast import cli
from salescast import data as D
from salescast import synth as S
from salescast.errors import CorruptModelError
from salescast.metrics import benchmark, materialize_suite
from salescast.models import KINDS, ModelSpec, build, forward, param_count
from salescast.tensor import RngStream
from salescast.train import MAGIC, TrainConfig, load_model, save_model, train

TESTS_DIR = Path(__file__).parent


@contextlib.contextmanager
def criterion(n, desc):
    try:
        yield
    except BaseException:
        print(f"\ncriterion {n} ({desc}): FAIL")
        raise
    else:
        print(f"\ncriterion {n} ({desc}): PASS")


def test_criterion_1_reference_scores_internally_consistent():
    # published comparison table: each RMSE must be sqrt(MSE) within 0.001
    table = {
        "CNN-LSTM": (1.150, 1.072),
        "CNN": (3.526, 1.878),
        "LSTM": (1.956, 1.399),
        "RNN": (2.026, 1.423),
    }
    with criterion(1, "reference-score sqrt consistency"):
        for name, (mse, rmse) in table.items():
            assert abs(math.sqrt(mse) - rmse) < 0.001, name


def test_criterion_2_gradient_checks_pass_quickly():
    with criterion(2, "finite-difference gradient checks under 60s"):
        t0 = time.time()
        proc = subprocess.run(
            [sys.executable, "-m", "pytest", str(TESTS_DIR / "test_gradcheck.py"),
             "-q", "--no-header", "-p", "no:cacheprovider"],
            capture_output=True, text=True,
        )
        elapsed = time.time() - t0
        assert proc.returncode == 0, proc.stdout[-2000:]
        assert elapsed < 60.0, f"gradcheck suite took {elapsed:.1f}s"


def closed_form_param_count(spec: ModelSpec) -> int:
    total = 0
    in_ch = spec.input_channels
    for k, out_ch in spec.conv:
        total += out_ch * in_ch * k + out_ch  # conv kernel + bias
        total += 2 * out_ch                   # batchnorm gamma + beta
        in_ch = out_ch
    if spec.kind == "cnn":
        total += spec.output_dim * (in_ch * spec.pooled_len) + spec.output_dim
        return total
    if spec.kind in ("lstm", "rnn"):
        in_dim = spec.input_channels
        total = 0
    else:
        in_dim = in_ch
    for _ in range(spec.lstm_layers):
        if spec.kind == "rnn":
            total += spec.hidden * in_dim + spec.hidden * spec.hidden + spec.hidden
        else:
            total += 4 * (spec.hidden * in_dim + spec.hidden * spec.hidden + spec.hidden)
        in_dim = spec.hidden
    total += spec.output_dim * spec.hidden + spec.output_dim
    return total


def test_criterion_3_architecture_conformance():
    with criterion(3, "hybrid architecture shape and parameter count"):
        spec = ModelSpec(kind="cnn_lstm", input_channels=7)
        assert spec.conv == ((3, 64), (5, 128))
        assert spec.lstm_layers == 2 and spec.hidden == 128
        assert spec.dropout_rate == 0.3
        assert spec.window_len == 8 and spec.pooled_len == 2  # pool 2 twice
        assert spec.output_dim == 1
        m = build(spec, RngStream(0))
        assert param_count(m) == closed_form_param_count(spec)
        for kind in KINDS:
            ms = ModelSpec(kind=kind, input_channels=7)
            mm = build(ms, RngStream(0))
            assert param_count(mm) == closed_form_param_count(ms), kind
            y, _ = forward(mm, np.zeros((3, 7, 8)), "infer")
            assert y.shape == (3, 1), kind


def noiseless_16_sample_set(tmp_path):
    cfg = S.SynthConfig(n_drugs=1, n_quarters=24, base_volume=100.0,
                        trend_slope=1.0, seasonal_amplitude=8.0, seed=2)
    path = tmp_path / "clean.csv"
    S.write_csv(cfg, path)
    records, _ = D.clean(D.parse_csv(path))
    records, vocabs = D.encode_categoricals(records)
    series = D.time_align(records)
    series_list = [series[k] for k in sorted(series)]
    with pytest.warns(UserWarning):  # constant channels in a noiseless set
        normed, stats = D.normalize(series_list, split_point=24)
    return D.windowize(normed, vocabs, stats, window_len=8)


def test_criterion_4_overfits_small_noiseless_set(tmp_path):
    with criterion(4, "overfit 16 noiseless samples to MSE < 1e-2"):
        ds = noiseless_16_sample_set(tmp_path)
        assert len(ds) == 16
        spec = ModelSpec(kind="cnn_lstm", input_channels=ds.n_channels)
        model = build(spec, RngStream(1))
        t0 = time.time()
        history = train(model, ds, None, TrainConfig(epochs=500, seed=1))
        elapsed = time.time() - t0
        best = min(tr for tr, _ in history.epochs)
        assert best < 1e-2, f"best train MSE {best}"
        assert elapsed < 120.0, f"took {elapsed:.1f}s"


def test_criterion_6_pipeline_oracles():
    with criterion(6, "pipeline oracles: cleaning, windows, stats, leakage"):
        t0 = time.time()
        # cleaning drops exactly the sentinel-bearing rows
        def row(price, vol, q):
            return {"drugname": "d", "price": price, "date": (2015 + q // 4, q % 4 + 1),
                    "form": "t", "company": "c", "region": "r", "salesvolume": vol,
                    "effectiveness": 1.0, "userevaluate": 1.0}
        rows = [row(1.0, 10.0, 0), row(-99.0, 10.0, 1), row(1.0, float("nan"), 2),
                row(1.0, 10.0, 3), row(1.0, -99.0, 4)]
        kept, report = D.clean(rows)
        assert [r.date for r in kept] == [(2015, 1), (2015, 4)]
        assert report == {"price": 1, "salesvolume": 2}

        # window counts match brute-force enumeration everywhere
        def toy(n):
            return D.QuarterlySeries(
                drug="d", quarters=[(2015 + i // 4, i % 4 + 1) for i in range(n)],
                price=np.ones(n), sales_volume=np.arange(n, dtype=float),
                effectiveness=np.ones(n), user_evaluate=np.ones(n),
                form=["t"] * n, company=["c"] * n, region=["r"] * n)
        stats = D.NormStats(mean={c: 0.0 for c in D.NUMERIC_CHANNELS},
                            std={c: 1.0 for c in D.NUMERIC_CHANNELS})
        vocabs = {"form": ["t"], "company": ["c"], "region": ["r"]}
        for length in range(9, 61):
            for window in range(2, 13):
                brute = sum(1 for i in range(length) if i + window < length)
                assert D.window_count(length, window) == brute
                if brute > 0 and length >= window + 1:
                    ds = D.windowize([toy(length)], vocabs, stats, window_len=window)
                    assert len(ds) == brute, (length, window)

        # normalization stats depend only on the training slice
        a, b = toy(12), toy(12)
        b.sales_volume[10:] = 1e6
        sa = D.compute_stats([a], 10)
        sb = D.compute_stats([b], 10)
        assert sa.mean == sb.mean and sa.std == sb.std

        # no leakage: every target is the quarter after its window, and test
        # targets all fall after every training target
        ds = D.windowize([toy(40)], vocabs, stats, window_len=8)
        vol = ds.channel_names.index("salesvolume")
        for i in range(len(ds)):
            assert ds.y[i, 0] == ds.x[i, vol, -1] + 1.0
        quarters = sorted({q for q in toy(40).quarters})
        tr, te = D.chronological_split(ds, quarters, 0.8)
        assert max(tr.target_quarters) < min(te.target_quarters)
        assert time.time() - t0 < 10.0


def test_criterion_7_end_to_end_determinism(tmp_path, capsys):
    with criterion(7, "generate/train/evaluate byte-identical across reruns"):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("epochs = 3\nbatch_size = 6\n")
        outputs = []
        for run in ("a", "b"):
            d = tmp_path / run
            d.mkdir()
            csv_path, model_path = d / "sales.csv", d / "model.bin"
            assert cli.cli_main(["synth", "--out", str(csv_path), "--seed", "3"]) == 0
            assert cli.cli_main(["train", "--data", str(csv_path), "--out",
                                 str(model_path), "--config", str(cfg),
                                 "--seed", "3"]) == 0
            capsys.readouterr()
            assert cli.cli_main(["evaluate", "--data", str(csv_path),
                                 "--model", str(model_path)]) == 0
            metrics_text = capsys.readouterr().out
            outputs.append((csv_path.read_bytes(), model_path.read_bytes(),
                            (d / "model.history.csv").read_bytes(), metrics_text))
        assert outputs[0] == outputs[1]


def test_criterion_8_serialization_round_trip(tmp_path):
    with criterion(8, "model files round-trip and reject corruption"):
        spec = ModelSpec(kind="cnn_lstm", input_channels=4, conv=((3, 4), (5, 6)),
                         hidden=5)
        m = build(spec, RngStream(6))
        path = tmp_path / "m.bin"
        save_model(m, path)
        m2 = load_model(path)
        x = RngStream(8).normal(0.0, 1.0, (3, 4, 8))
        assert np.array_equal(forward(m, x, "infer")[0], forward(m2, x, "infer")[0])

        blob = bytearray(path.read_bytes())
        bad_magic = bytearray(blob)
        bad_magic[0] ^= 0xFF
        (tmp_path / "bad1.bin").write_bytes(bytes(bad_magic))
        with pytest.raises(CorruptModelError):
            load_model(tmp_path / "bad1.bin")

        flipped = bytearray(blob)
        flipped[len(MAGIC) + 4 + (len(blob) // 2)] ^= 0x01
        (tmp_path / "bad2.bin").write_bytes(bytes(flipped))
        with pytest.raises(CorruptModelError):
            load_model(tmp_path / "bad2.bin")


def test_criterion_5_benchmark_reproduces_model_ranking(tmp_path):
    with criterion(5, "benchmark medians: hybrid best, lstm beats cnn, <15min"):
        t0 = time.time()
        datasets = materialize_suite(1, tmp_path / "suite")
        cfg = TrainConfig(epochs=40, batch_size=6, shuffle=False)
        seeds = [100 + i for i in range(5)]
        table = benchmark(datasets, seeds, cfg, window_len=12)
        elapsed = time.time() - t0
        med = {k: v[0] for k, v in table.medians.items()}
        print(f"\n{table.to_text()}({elapsed:.0f}s)")
        for baseline in ("cnn", "lstm", "rnn"):
            assert med["cnn_lstm"] < med[baseline], (
                f"cnn_lstm {med['cnn_lstm']:.2f} !< {baseline} {med[baseline]:.2f}")
        assert med["lstm"] < med["cnn"], (
            f"lstm {med['lstm']:.2f} !< cnn {med['cnn']:.2f}")
        assert elapsed < 900.0, f"benchmark took {elapsed:.0f}s"
