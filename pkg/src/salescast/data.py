"""CSV ingestion and preprocessing: clean, encode, align, normalize, window.

Expected input schema (header names matched case-insensitively):
Drugname, Price, Date, Form, Company, Region, SalesVolume, Effectiveness,
UserEvaluate. Dates are ISO "YYYY-MM-DD" (mapped to their calendar quarter)
or "YYYY-Qn".

The pipeline order is: parse_csv -> clean -> encode_categoricals ->
time_align -> normalize -> windowize. `prepare_datasets` runs the whole
chain and performs the chronological train/test split.
"""

from __future__ import annotations

import csv
import math
import re
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyDatasetError,
    GapError,
    InsufficientDataError,
    SchemaError,
)

COLUMNS = (
    "drugname", "price", "date", "form", "company", "region",
    "salesvolume", "effectiveness", "userevaluate",
)
NUMERIC_COLUMNS = ("price", "salesvolume", "effectiveness", "userevaluate")
CATEGORICAL_COLUMNS = ("form", "company", "region")
# numeric input channels, in fixed order, followed by one-hot blocks
NUMERIC_CHANNELS = ("price", "salesvolume", "effectiveness", "userevaluate")

MISSING = None  # marker for unparseable / absent values
_QUARTER_RE = re.compile(r"^(\d{4})-Q([1-4])$")
_ISO_RE = re.compile(r"^(\d{4})-(\d{2})-(\d{2})$")


def quarter_str(q: tuple) -> str:
    return f"{q[0]}-Q{q[1]}"


def parse_quarter(text: str):
    """Parse "YYYY-Qn" or an ISO date into a (year, quarter) pair."""
    text = text.strip()
    m = _QUARTER_RE.match(text)
    if m:
        return (int(m.group(1)), int(m.group(2)))
    m = _ISO_RE.match(text)
    if m:
        month = int(m.group(2))
        if not 1 <= month <= 12:
            return MISSING
        return (int(m.group(1)), (month - 1) // 3 + 1)
    return MISSING


def next_quarter(q: tuple) -> tuple:
    year, qi = q
    return (year + 1, 1) if qi == 4 else (year, qi + 1)


def _parse_number(text):
    try:
        return float(text)
    except (TypeError, ValueError):
        return MISSING


def parse_csv(path) -> list:
    """Read the raw CSV into typed row dicts.

    Unparseable numerics and dates become missing markers so that `clean`
    can count them per column; they are not errors here.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        names = [h.strip().lower() for h in header]
        missing_cols = [c for c in COLUMNS if c not in names]
        if missing_cols:
            raise SchemaError(f"{path}: missing required columns {missing_cols}")
        idx = {c: names.index(c) for c in COLUMNS}
        rows = []
        for raw in reader:
            if not raw or all(not cell.strip() for cell in raw):
                continue
            row = {}
            for col in COLUMNS:
                cell = raw[idx[col]].strip() if idx[col] < len(raw) else ""
                if col in NUMERIC_COLUMNS:
                    row[col] = _parse_number(cell) if cell else MISSING
                elif col == "date":
                    row[col] = parse_quarter(cell) if cell else MISSING
                else:
                    row[col] = cell if cell else MISSING
            rows.append(row)
    return rows


@dataclass
class SalesRecord:
    drugname: str
    price: float
    date: tuple  # (year, quarter)
    form: str
    company: str
    region: str
    sales_volume: float
    effectiveness: float
    user_evaluate: float


def _row_invalid_column(row):
    """First column making the row invalid, or None if the row is clean."""
    for col in COLUMNS:
        v = row.get(col, MISSING)
        if v is MISSING:
            return col
        if col in NUMERIC_COLUMNS:
            if math.isnan(v) or math.isinf(v) or v == -99:
                return col
            if col in ("price", "salesvolume") and v < 0:
                return col
    return None


def clean(rows) -> tuple:
    """Drop rows containing missing-value sentinels; tally drops per column."""
    records = []
    report = {}
    for row in rows:
        bad = _row_invalid_column(row)
        if bad is not None:
            report[bad] = report.get(bad, 0) + 1
            continue
        records.append(SalesRecord(
            drugname=row["drugname"],
            price=row["price"],
            date=row["date"],
            form=row["form"],
            company=row["company"],
            region=row["region"],
            sales_volume=row["salesvolume"],
            effectiveness=row["effectiveness"],
            user_evaluate=row["userevaluate"],
        ))
    if not records:
        raise EmptyDatasetError("cleaning removed every row")
    return records, report


def format_drop_report(report: dict) -> str:
    if not report:
        return "no rows dropped\n"
    lines = [f"{col}: {n} row(s) dropped" for col, n in sorted(report.items())]
    return "\n".join(lines) + "\n"


def dump_csv(records, path):
    """Write cleaned records back out in the input schema (audit dump)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["Drugname", "Price", "Date", "Form", "Company", "Region",
                    "SalesVolume", "Effectiveness", "UserEvaluate"])
        for r in records:
            w.writerow([r.drugname, repr(r.price), quarter_str(r.date), r.form,
                        r.company, r.region, repr(r.sales_volume),
                        repr(r.effectiveness), repr(r.user_evaluate)])


_WS_RE = re.compile(r"\s+")


def standardize_category(text: str) -> str:
    return _WS_RE.sub(" ", text.strip()).casefold()


def encode_categoricals(records) -> tuple:
    """Standardize categorical strings and build one-hot vocabularies.

    Vocabularies keep first-appearance order over the record stream; unknown
    categories later encode to an all-zero block.
    """
    vocabs = {c: [] for c in CATEGORICAL_COLUMNS}
    out = []
    for r in records:
        vals = {}
        for col in CATEGORICAL_COLUMNS:
            v = standardize_category(getattr(r, col))
            vals[col] = v
            if v not in vocabs[col]:
                vocabs[col].append(v)
        out.append(SalesRecord(
            drugname=r.drugname.strip(),
            price=r.price, date=r.date,
            form=vals["form"], company=vals["company"], region=vals["region"],
            sales_volume=r.sales_volume,
            effectiveness=r.effectiveness,
            user_evaluate=r.user_evaluate,
        ))
    return out, vocabs


def one_hot(value: str, vocab: list) -> np.ndarray:
    vec = np.zeros(len(vocab))
    if value in vocab:
        vec[vocab.index(value)] = 1.0
    return vec


@dataclass
class QuarterlySeries:
    drug: str
    quarters: list  # ascending (year, quarter) pairs, no gaps
    price: np.ndarray
    sales_volume: np.ndarray
    effectiveness: np.ndarray
    user_evaluate: np.ndarray
    form: list
    company: list
    region: list

    def __len__(self):
        return len(self.quarters)

    def numeric(self, channel: str) -> np.ndarray:
        return getattr(self, {"salesvolume": "sales_volume",
                              "userevaluate": "user_evaluate"}.get(channel, channel))


def time_align(records, gap_fill: bool = False) -> dict:
    """Bucket records into per-drug quarterly series.

    Several records in the same quarter aggregate: sales volumes sum; price,
    effectiveness and user rating are volume-weighted averages; categoricals
    come from the quarter's highest-volume record. Interior missing quarters
    raise GapError unless gap_fill is set, in which case numeric channels are
    linearly interpolated and categoricals carried forward.
    """
    by_drug = {}
    for r in records:
        by_drug.setdefault(r.drugname, {}).setdefault(r.date, []).append(r)
    series = {}
    for drug, quarters in by_drug.items():
        qs = sorted(quarters)
        full = []
        q = qs[0]
        while q <= qs[-1]:
            full.append(q)
            q = next_quarter(q)
        gaps = [q for q in full if q not in quarters]
        if gaps and not gap_fill:
            raise GapError(f"{drug}: missing quarter {quarter_str(gaps[0])}")

        price, vol, eff, ue = [], [], [], []
        form, company, region = [], [], []
        for q in full:
            if q in quarters:
                recs = quarters[q]
                total = sum(r.sales_volume for r in recs)
                vol.append(total)
                if total > 0:
                    wavg = lambda f: sum(f(r) * r.sales_volume for r in recs) / total
                else:
                    wavg = lambda f: sum(f(r) for r in recs) / len(recs)
                price.append(wavg(lambda r: r.price))
                eff.append(wavg(lambda r: r.effectiveness))
                ue.append(wavg(lambda r: r.user_evaluate))
                top = max(recs, key=lambda r: r.sales_volume)
                form.append(top.form)
                company.append(top.company)
                region.append(top.region)
            else:
                price.append(None)
                vol.append(None)
                eff.append(None)
                ue.append(None)
                form.append(form[-1])
                company.append(company[-1])
                region.append(region[-1])
        arrays = [_interp(price), _interp(vol), _interp(eff), _interp(ue)]
        series[drug] = QuarterlySeries(
            drug=drug, quarters=full,
            price=arrays[0], sales_volume=arrays[1],
            effectiveness=arrays[2], user_evaluate=arrays[3],
            form=form, company=company, region=region,
        )
    return series


def _interp(values) -> np.ndarray:
    arr = np.array([np.nan if v is None else v for v in values], dtype=np.float64)
    if np.isnan(arr).any():
        idx = np.arange(len(arr))
        good = ~np.isnan(arr)
        arr[~good] = np.interp(idx[~good], idx[good], arr[good])
    return arr


@dataclass
class NormStats:
    """Per-channel z-score statistics, computed on the training slice only."""

    mean: dict  # channel -> float
    std: dict  # channel -> float (population std; 1.0 if degenerate)

    def transform(self, channel: str, x):
        return (x - self.mean[channel]) / self.std[channel]

    def inverse(self, channel: str, x):
        return x * self.std[channel] + self.mean[channel]

    def to_dict(self):
        return {"mean": self.mean, "std": self.std}

    @classmethod
    def from_dict(cls, d):
        return cls(mean=dict(d["mean"]), std=dict(d["std"]))


def compute_stats(series_list, train_quarters: int) -> NormStats:
    """Pool the first `train_quarters` quarters of every series per channel."""
    mean, std = {}, {}
    for ch in NUMERIC_CHANNELS:
        pooled = np.concatenate([s.numeric(ch)[:train_quarters] for s in series_list])
        mean[ch] = float(pooled.mean())
        sd = float(pooled.std())  # population std
        if sd == 0.0:
            warnings.warn(f"channel {ch!r} is constant on the training slice; std forced to 1")
            sd = 1.0
        std[ch] = sd
    return NormStats(mean=mean, std=std)


def apply_normalization(series_list, stats: NormStats) -> list:
    """Z-score numeric channels with precomputed (training-time) stats."""
    out = []
    for s in series_list:
        out.append(QuarterlySeries(
            drug=s.drug, quarters=list(s.quarters),
            price=stats.transform("price", s.price),
            sales_volume=stats.transform("salesvolume", s.sales_volume),
            effectiveness=stats.transform("effectiveness", s.effectiveness),
            user_evaluate=stats.transform("userevaluate", s.user_evaluate),
            form=list(s.form), company=list(s.company), region=list(s.region),
        ))
    return out


def normalize(series_list, split_point: int) -> tuple:
    """Z-score numeric channels with stats from quarters [0, split_point)."""
    stats = compute_stats(series_list, split_point)
    return apply_normalization(series_list, stats), stats


@dataclass
class WindowedDataset:
    """Supervised samples: window of quarters in, next-quarter volume out."""

    x: np.ndarray  # [n, channels, window_len]
    y: np.ndarray  # [n, 1], normalized target volume
    target_quarters: list  # (year, quarter) per sample
    drugs: list  # drug name per sample
    stats: NormStats
    vocabs: dict
    channel_names: list
    window_len: int = 8

    def __len__(self):
        return self.x.shape[0]

    @property
    def n_channels(self):
        return self.x.shape[1]

    def subset(self, idx) -> "WindowedDataset":
        idx = list(idx)
        return WindowedDataset(
            x=self.x[idx], y=self.y[idx],
            target_quarters=[self.target_quarters[i] for i in idx],
            drugs=[self.drugs[i] for i in idx],
            stats=self.stats, vocabs=self.vocabs,
            channel_names=self.channel_names, window_len=self.window_len,
        )


def channel_layout(vocabs: dict, use_region: bool = True) -> list:
    names = list(NUMERIC_CHANNELS)
    cats = [c for c in CATEGORICAL_COLUMNS if use_region or c != "region"]
    for col in cats:
        names += [f"{col}={v}" for v in vocabs[col]]
    return names


def series_features(s: QuarterlySeries, vocabs: dict, use_region: bool = True) -> np.ndarray:
    """Feature matrix [channels, n_quarters] in channel_layout order."""
    n = len(s)
    rows = [s.price, s.sales_volume, s.effectiveness, s.user_evaluate]
    cats = [c for c in CATEGORICAL_COLUMNS if use_region or c != "region"]
    for col in cats:
        vocab = vocabs[col]
        block = np.zeros((len(vocab), n))
        values = getattr(s, col)
        for t, v in enumerate(values):
            if v in vocab:
                block[vocab.index(v), t] = 1.0
        rows.append(block)
    return np.vstack([np.atleast_2d(r) for r in rows])


def window_count(length: int, window_len: int, horizon: int = 1) -> int:
    return max(0, length - window_len - horizon + 1)


def windowize(series_list, vocabs, stats, window_len: int = 8, horizon: int = 1,
              use_region: bool = True) -> WindowedDataset:
    """Slide a step-1 window over every series; target is the next quarter.

    Samples are ordered chronologically by target quarter (ties broken by
    drug name), so a prefix split of the sample list is a chronological split.
    """
    min_len = window_len + horizon
    xs, ys, tqs, drugs = [], [], [], []
    for s in series_list:
        if len(s) < min_len:
            raise InsufficientDataError(
                f"{s.drug}: series has {len(s)} quarters, needs >= {min_len} "
                f"for window {window_len} + horizon {horizon}"
            )
        feats = series_features(s, vocabs, use_region)
        for i in range(window_count(len(s), window_len, horizon)):
            xs.append(feats[:, i : i + window_len])
            target_idx = i + window_len + horizon - 1
            ys.append([s.sales_volume[target_idx]])
            tqs.append(s.quarters[target_idx])
            drugs.append(s.drug)
    order = sorted(range(len(xs)), key=lambda i: (tqs[i], drugs[i]))
    return WindowedDataset(
        x=np.stack([xs[i] for i in order]),
        y=np.array([ys[i] for i in order]),
        target_quarters=[tqs[i] for i in order],
        drugs=[drugs[i] for i in order],
        stats=stats, vocabs=vocabs,
        channel_names=channel_layout(vocabs, use_region),
        window_len=window_len,
    )


def chronological_split(ds: WindowedDataset, quarters: list, split_frac: float = 0.8):
    """Split samples by target quarter at the split_frac point of the quarter axis."""
    uniq = sorted(set(quarters))
    n_train_q = max(1, int(math.floor(len(uniq) * split_frac)))
    boundary = uniq[n_train_q - 1]
    train_idx = [i for i, q in enumerate(ds.target_quarters) if q <= boundary]
    test_idx = [i for i, q in enumerate(ds.target_quarters) if q > boundary]
    return ds.subset(train_idx), ds.subset(test_idx)


def eval_batches(ds: WindowedDataset):
    """Chronological evaluation batches: one batch per target quarter.

    When every quarter covers the same drugs in the same order, batching per
    quarter keeps each recurrent state row aligned with one drug as the state
    carries quarter to quarter. Otherwise fall back to one sample at a time.
    """
    groups = []
    for i, q in enumerate(ds.target_quarters):
        if groups and groups[-1][0] == q:
            groups[-1][1].append(i)
        else:
            groups.append((q, [i]))
    drug_rows = [tuple(ds.drugs[i] for i in idx) for _, idx in groups]
    if len(set(drug_rows)) == 1:
        return [idx for _, idx in groups]
    return [[i] for i in range(len(ds))]


def prepare_datasets(path, window_len: int = 8, split_frac: float = 0.8,
                     gap_fill: bool = False, use_region: bool = True):
    """Full pipeline: CSV -> (train_set, test_set, stats, vocabs, report)."""
    rows = parse_csv(path)
    records, report = clean(rows)
    records, vocabs = encode_categoricals(records)
    series = time_align(records, gap_fill=gap_fill)
    series_list = [series[k] for k in sorted(series)]
    n_quarters = min(len(s) for s in series_list)
    split_point = max(1, int(math.floor(n_quarters * split_frac)))
    normed, stats = normalize(series_list, split_point)
    all_quarters = sorted({q for s in series_list for q in s.quarters})
    ds = windowize(normed, vocabs, stats, window_len=window_len, use_region=use_region)
    train_set, test_set = chronological_split(ds, all_quarters, split_frac)
    return train_set, test_set, stats, vocabs, report
