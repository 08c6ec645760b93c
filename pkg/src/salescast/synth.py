"""Deterministic synthetic quarterly-sales generator.

Stands in for the private sales dataset: emits CSVs in the ingestion schema
with controllable trend, annual seasonality, price coupling, and noise.

Per drug d and quarter q (q = 0..n_quarters-1):

    volume(d, q) = max(0, base_d + slope_d*q + amp_d*sin(2*pi*q/period)
                         + elasticity*(price(d, q) - mean_q price(d, q)) + eps)

with eps ~ Normal(0, noise_std) from the seeded stream. The per-drug
coefficients are deterministic functions of the config and the drug index
(no hidden random draws), so a noise-free dataset is exactly reproducible
from its closed form.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from .tensor import RngStream

FORMS = ("tablet", "capsule", "injection", "syrup", "powder", "cream")
COMPANIES = ("alpha pharma", "betacure", "gammalabs", "delta med",
             "epsilon bio", "zeta health", "eta oncology", "theta rx")
REGIONS = ("africa", "north america", "asia", "middle east", "europe")


@dataclass
class SynthConfig:
    n_drugs: int = 1
    n_quarters: int = 40
    base_volume: float = 100.0
    trend_slope: float = 0.0
    seasonal_amplitude: float = 0.0
    seasonal_period: int = 4
    noise_std: float = 0.0
    price_elasticity: float = 0.0  # <= 0
    base_price: float = 50.0
    price_walk_std: float = 0.0
    seed: int = 0
    n_forms: int = 3
    n_companies: int = 4
    n_regions: int = 5
    start_year: int = 2015
    # per-drug spread of base/slope/amplitude, deterministic in the drug index
    drug_spread: float = 0.15


def _drug_coeffs(cfg: SynthConfig, d: int):
    """Deterministic per-drug base/slope/amplitude; drug 0 uses the config as-is."""
    factor = 1.0 + cfg.drug_spread * d
    return cfg.base_volume * factor, cfg.trend_slope * factor, cfg.seasonal_amplitude * factor


def closed_form_volume(cfg: SynthConfig, d: int, q: int, price: float,
                       mean_price: float) -> float:
    """The noise-free volume formula; the oracle for generated data."""
    base, slope, amp = _drug_coeffs(cfg, d)
    v = (base + slope * q + amp * np.sin(2.0 * np.pi * q / cfg.seasonal_period)
         + cfg.price_elasticity * (price - mean_price))
    return max(0.0, float(v))


def generate_rows(cfg: SynthConfig) -> list:
    """Generate one dataset as row dicts in the ingestion schema."""
    rng = RngStream(cfg.seed)
    rows = []
    for d in range(cfg.n_drugs):
        drug = f"drug_{d:02d}"
        form = FORMS[d % max(1, min(cfg.n_forms, len(FORMS)))]
        company = COMPANIES[d % max(1, min(cfg.n_companies, len(COMPANIES)))]
        region = REGIONS[d % max(1, min(cfg.n_regions, len(REGIONS)))]
        # seeded random walk around the per-drug base price
        base_price = cfg.base_price * (1.0 + 0.1 * d)
        steps = rng.normal(0.0, cfg.price_walk_std, cfg.n_quarters)
        prices = base_price + np.cumsum(steps)
        prices = np.maximum(prices, 0.01 * cfg.base_price)
        mean_price = float(prices.mean())
        effectiveness = 60.0 + 4.0 * (d % 8)
        user_eval = 3.0 + 0.2 * (d % 8)
        eff_jitter = rng.normal(0.0, 0.5, cfg.n_quarters) if cfg.noise_std > 0 else np.zeros(cfg.n_quarters)
        ue_jitter = rng.normal(0.0, 0.05, cfg.n_quarters) if cfg.noise_std > 0 else np.zeros(cfg.n_quarters)
        noise = rng.normal(0.0, cfg.noise_std, cfg.n_quarters) if cfg.noise_std > 0 else np.zeros(cfg.n_quarters)
        for q in range(cfg.n_quarters):
            vol = closed_form_volume(cfg, d, q, float(prices[q]), mean_price)
            vol = max(0.0, vol + float(noise[q]))
            year = cfg.start_year + q // 4
            rows.append({
                "Drugname": drug,
                "Price": repr(float(prices[q])),
                "Date": f"{year}-Q{q % 4 + 1}",
                "Form": form,
                "Company": company,
                "Region": region,
                "SalesVolume": repr(vol),
                "Effectiveness": repr(effectiveness + float(eff_jitter[q])),
                "UserEvaluate": repr(user_eval + float(ue_jitter[q])),
            })
    return rows


def rows_to_csv_text(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def generate_csv(cfg: SynthConfig) -> str:
    return rows_to_csv_text(generate_rows(cfg))


def write_csv(cfg: SynthConfig, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(generate_csv(cfg))


def generate_benchmark_suite(seed: int) -> list:
    """The fixed 5-dataset comparison suite: (name, SynthConfig) pairs.

    Spans low/medium observation noise crossed with weak/strong seasonality,
    at both annual (period 4) and biennial (period 8) cycles; all 6 drugs x
    40 quarters.
    """
    base = SynthConfig(
        n_drugs=6, n_quarters=40, base_volume=100.0, trend_slope=0.2,
        seasonal_amplitude=10.0, noise_std=8.0, price_elasticity=-0.3,
        price_walk_std=1.0, seed=seed,
    )
    suite = [
        ("seasonal_base", replace(base, seed=seed * 1000 + 1)),
        ("med_noise_strong_season", replace(base, noise_std=9.0,
                                            seasonal_amplitude=15.0,
                                            seed=seed * 1000 + 2)),
        ("low_noise_strong_biennial", replace(base, noise_std=6.0,
                                              seasonal_period=8,
                                              seasonal_amplitude=15.0,
                                              seed=seed * 1000 + 3)),
        ("med_noise_weak_season", replace(base, noise_std=9.0,
                                          seasonal_amplitude=6.0,
                                          seed=seed * 1000 + 4)),
        ("weak_biennial", replace(base, seasonal_period=8,
                                  seasonal_amplitude=6.0,
                                  seed=seed * 1000 + 5)),
    ]
    return suite
