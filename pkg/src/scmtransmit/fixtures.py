"""Seeded synthetic data: factor-model SCM panels and the bundled pipeline fixture."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .panel import PanelDataset
from .scm import PredictorSpec, ScmConfig


@dataclass(frozen=True)
class FactorPanel:
    data: PanelDataset
    config: ScmConfig
    true_weights: np.ndarray
    effect: float


def factor_panel(
    seed: int,
    n_donors: int = 6,
    effect: float = 0.30,
    noise: float = 0.02,
    periods: tuple[int, int] = (1990, 2009),
    treatment: int = 2002,
    n_covariates: int = 2,
) -> FactorPanel:
    """Two-factor panel; the treated unit is a convex donor mix plus ``effect`` from ``treatment`` on."""
    rng = np.random.default_rng(seed)
    years = np.arange(periods[0], periods[1] + 1)
    T = len(years)
    factors = np.cumsum(rng.normal(0.05, 0.15, size=(T, 2)), axis=0)
    loadings = rng.uniform(0.5, 1.5, size=(n_donors, 2))
    level = rng.uniform(5.0, 8.0, size=n_donors)
    w = rng.dirichlet(np.full(n_donors, 0.7))
    Y0 = level[None, :] + factors @ loadings.T + rng.normal(0, noise, size=(T, n_donors))
    y1 = level @ w + factors @ (loadings.T @ w) + rng.normal(0, noise, size=T)
    y1 = y1 + effect * (years >= treatment)
    cov_load = rng.normal(0, 1, size=(n_covariates, 2))
    recs = []
    donors = [f"D{j:02d}" for j in range(n_donors)]
    for j, d in enumerate(donors):
        for t, y in zip(years, Y0[:, j]):
            recs.append((d, int(t), "y", float(y)))
        for c in range(n_covariates):
            x = float(cov_load[c] @ loadings[j] + rng.normal(0, 0.05))
            for t in years:
                recs.append((d, int(t), f"x{c}", x))
    for t, y in zip(years, y1):
        recs.append(("TR", int(t), "y", float(y)))
    for c in range(n_covariates):
        x = float(cov_load[c] @ (loadings.T @ w) + rng.normal(0, 0.05))
        for t in years:
            recs.append(("TR", int(t), f"x{c}", x))
    pre = (int(years[0]), treatment - 1)
    lags = tuple(int(p) for p in np.linspace(pre[0], pre[1], 4).round().astype(int))
    cfg = ScmConfig(
        treated="TR",
        donors=tuple(donors),
        outcome="y",
        pre_window=pre,
        treatment_period=treatment,
        predictors=tuple(PredictorSpec(f"x{c}", pre) for c in range(n_covariates)),
        outcome_lags=tuple(sorted(set(lags))),
        post_windows=((treatment, int(years[-1])),),
    )
    return FactorPanel(PanelDataset.from_records(recs), cfg, w, effect)


# ------------------------------------------------------------------ bundled fixture

BALTICS = ("EST", "LTU", "LVA")
EU03 = ("POL", "SVK", "SVN")
WB3 = ("BIH", "MKD", "SRB")
CORE_DONORS = ("BGR", "HRV", "ROU")
WB3_DONORS = ("ALB", "BGR", "HRV", "MNE", "ROU")
YEARS = range(1998, 2024)
MACRO_YEARS = range(2000, 2024)

CONFIG_TEMPLATE = """\
# scmtransmit experiment config (schema version 1)
version: 1
data:
  panel: panel.csv
  macro: macro.csv
variables:
  - {name: lmc_eur, source: mc_eur, transform: log, aggregate: sum_then_log}
  - {name: log_gdp, source: gdp_eur, transform: log, aggregate: sum_then_log}
  - {name: lturnover_eur, source: turnover_eur, transform: log, aggregate: sum_then_log}
  - {name: ln_firm_pop, source: firms, transform: per_capita_log, population: pop, aggregate: mean}
  - {name: cpi, source: cpi, aggregate: mean}
  - {name: trade_gdp, source: trade_gdp, aggregate: mean}
  - {name: reg_q, source: reg_q, aggregate: mean}
aggregates:
  BALTICS: [EST, LTU, LVA]
  EU03: [POL, SVK, SVN]
  WB3: [BIH, MKD, SRB]
scm:
  - name: BALTICS
    treated: BALTICS
    donors: [BGR, HRV, ROU]
    outcome: lmc_eur
    predictors:
      - {variable: cpi, window: [1998, 2003]}
      - {variable: ln_firm_pop, window: [1998, 2003]}
      - {variable: log_gdp, window: [1998, 2003]}
      - {variable: lturnover_eur, window: [1998, 2003]}
      - {variable: reg_q, window: [1998, 2003]}
      - {variable: trade_gdp, window: [1998, 2003]}
    outcome_lags: [1998, 2000, 2001, 2003]
    pre_window: [1998, 2003]
    treatment_period: 2004
    post_windows: [[2004, 2006], [2004, 2023]]
  - name: EU03
    treated: EU03
    donors: [BGR, HRV, ROU]
    outcome: lmc_eur
    predictors:
      - {variable: ln_firm_pop, window: [1998, 2003]}
      - {variable: log_gdp, window: [1998, 2003]}
      - {variable: lturnover_eur, window: [1998, 2003]}
      - {variable: reg_q, window: [1998, 2003]}
      - {variable: trade_gdp, window: [1998, 2003]}
    outcome_lags: [1998, 2000, 2001, 2002, 2003]
    pre_window: [1998, 2003]
    treatment_period: 2004
    post_windows: [[2004, 2006], [2004, 2023]]
  - name: WB3
    treated: WB3
    donors: [ALB, BGR, HRV, MNE, ROU]
    outcome: lmc_eur
    predictors:
      - {variable: cpi, window: [2001, 2008]}
      - {variable: log_gdp, window: [2001, 2008]}
      - {variable: trade_gdp, window: [2001, 2008]}
    outcome_lags: [2001, 2004, 2006, 2008]
    pre_window: [2001, 2008]
    treatment_period: 2009
    post_windows: [[2009, 2011], [2009, 2023]]
robustness:
  k: 3
  k_values: [2, 3]
  fits:
    BALTICS:
      fake_periods: [2002, 2003]
      windows: [[2004, 2006], [2004, 2010], [2004, 2015], [2004, 2019], [2004, 2022]]
    EU03:
      fake_periods: [2002, 2003]
      windows: [[2004, 2006], [2004, 2010], [2004, 2015], [2004, 2019], [2004, 2022]]
transfer:
  source: BALTICS
  net_of: EU03
  target: WB3
  origin: 2009
  shares: [1.0, 0.5]
  scale: true
  band: {k: 3, percentiles: [5, 95]}
shocks:
  countries: [BIH, MKD, SRB]
  hac_lag: 2
  weights: null
  rate_units: percent
lp:
  horizons: [0, 1, 2, 3, 4]
  controls: [inflation, gdp_growth, reserves_change]
  trend: none
  hac_lag_rule: horizon
  confidence: 0.9
  integrated_share: 1.0
"""


def _split(total_log: np.ndarray, shares: np.ndarray) -> np.ndarray:
    """Constituent levels whose sum is ``exp(total_log)``."""
    return np.exp(total_log)[:, None] * shares[None, :]


def bundled_frames(seed: int = 7) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Long-format annual panel and macro frames for the demo pipeline."""
    rng = np.random.default_rng(seed)
    years = np.array(list(YEARS))
    T = len(years)
    macro_years = np.array(list(MACRO_YEARS))

    # regional policy shocks feed the common market factor
    policy = rng.normal(0, 0.5, size=(len(macro_years), len(WB3)))
    common = policy.mean(axis=1)
    shock_by_year = dict(zip(macro_years, common))
    f1_innov = rng.normal(0.08, 0.12, size=T) - np.array([0.25 * shock_by_year.get(t, 0.0) for t in years])
    f2_innov = rng.normal(0.0, 0.10, size=T)
    factors = np.column_stack([np.cumsum(f1_innov), np.cumsum(f2_innov)])

    donors = sorted(set(CORE_DONORS) | set(WB3_DONORS))
    load = {d: rng.uniform(0.6, 1.4, size=2) for d in donors}
    base = {d: rng.uniform(7.0, 9.5) for d in donors}
    lmc = {d: base[d] + factors @ load[d] + rng.normal(0, 0.04, size=T) for d in donors}
    cov = {
        d: {
            "cpi": rng.uniform(3.0, 12.0),
            "trade_gdp": rng.uniform(55.0, 95.0),
            "reg_q": rng.uniform(-0.2, 0.8),
            "lfp": rng.uniform(-3.0, -1.8),
            "lgdp": rng.uniform(9.5, 11.5),
            "lto": rng.uniform(5.0, 7.5),
        }
        for d in donors
    }

    rows: list[tuple[str, int, str, float]] = []

    def emit(unit: str, lmc_path, c: dict, pop: float) -> None:
        for i, t in enumerate(years):
            drift = 0.02 * (t - years[0])
            rows.append((unit, int(t), "mc_eur", float(np.exp(lmc_path[i]))))
            rows.append((unit, int(t), "gdp_eur", float(np.exp(c["lgdp"] + drift))))
            rows.append((unit, int(t), "turnover_eur", float(np.exp(c["lto"] + 0.5 * drift))))
            rows.append((unit, int(t), "pop", pop))
            rows.append((unit, int(t), "firms", float(pop * np.exp(c["lfp"]))))
            rows.append((unit, int(t), "cpi", float(c["cpi"] * np.exp(-0.03 * (t - years[0])))))
            rows.append((unit, int(t), "trade_gdp", c["trade_gdp"]))
            rows.append((unit, int(t), "reg_q", c["reg_q"]))

    for d in donors:
        emit(d, lmc[d], cov[d], float(rng.uniform(200.0, 800.0)))

    def aggregate(members, pool, effect_path, conc):
        w = rng.dirichlet(np.full(len(pool), conc))
        target = sum(wj * lmc[p] for wj, p in zip(w, pool)) + rng.normal(0, 0.05, size=T) + effect_path
        shares = rng.dirichlet(np.full(len(members), 4.0))
        levels = _split(target, shares)
        mix = {k: sum(wj * cov[p][k] for wj, p in zip(w, pool)) for k in cov[pool[0]]}
        for m_i, m in enumerate(members):
            c = dict(mix)
            dev = rng.normal(0, 0.05)
            c["cpi"] = mix["cpi"] * (1 + dev)
            c["lgdp"] = mix["lgdp"] + np.log(shares[m_i] * len(members))
            c["lto"] = mix["lto"] + np.log(shares[m_i] * len(members))
            emit(m, np.log(levels[:, m_i]), c, float(rng.uniform(150.0, 400.0)))

    rel = years - 2004
    baltic_effect = np.where(rel >= 0, 0.45 * (1 - np.exp(-(rel + 1) / 1.5)) * np.exp(-np.maximum(rel - 3, 0) / 15), 0.0)
    eu_effect = np.where(rel >= 0, 0.20 * (1 - np.exp(-(rel + 1) / 2.0)), 0.0)
    aggregate(BALTICS, list(CORE_DONORS), baltic_effect, 1.5)
    aggregate(EU03, list(CORE_DONORS), eu_effect, 1.5)
    aggregate(WB3, list(WB3_DONORS), np.zeros(T), 1.0)
    panel = pd.DataFrame(rows, columns=["unit", "period", "variable", "value"])

    mrows = []
    for k, c in enumerate(WB3):
        n = len(macro_years)
        g = 3.0 + np.cumsum(rng.normal(0, 0.3, size=n)) * 0.3 + rng.normal(0, 1.0, size=n)
        pi = 3.0 + np.cumsum(rng.normal(0, 0.3, size=n)) * 0.3 + rng.normal(0, 0.8, size=n)
        g_f = 0.6 * g + 1.2 + rng.normal(0, 0.4, size=n)
        pi_f = 0.6 * pi + 1.0 + rng.normal(0, 0.4, size=n)
        res = rng.normal(0, 1.0, size=n)
        rate = np.empty(n)
        rate[0] = 8.0
        for t in range(1, n):
            d_rate = (
                0.5 + 0.05 * g_f[t] + 0.08 * pi_f[t] - 0.02 * g[t - 1] + 0.06 * pi[t - 1]
                - 0.4 * res[t - 1] - 0.10 * rate[t - 1] + policy[t, k]
            )
            rate[t] = rate[t - 1] + d_rate
        for t_i, t in enumerate(macro_years):
            for var, arr in (
                ("rate", rate),
                ("gdp_growth", g),
                ("gdp_growth_forecast", g_f),
                ("inflation", pi),
                ("inflation_forecast", pi_f),
                ("reserves_change", res),
            ):
                mrows.append((c, int(t), var, float(arr[t_i])))
    macro = pd.DataFrame(mrows, columns=["unit", "period", "variable", "value"])
    return panel, macro


def write_bundled_fixture(out_dir: str | Path, seed: int = 7) -> Path:
    """Write ``panel.csv``, ``macro.csv`` and ``config.yaml``; returns the config path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    panel, macro = bundled_frames(seed)
    for frame, name in ((panel, "panel.csv"), (macro, "macro.csv")):
        frame.to_csv(out / name, index=False, float_format="%.10g", lineterminator="\n")
    cfg = out / "config.yaml"
    cfg.write_text(CONFIG_TEMPLATE, encoding="utf-8")
    return cfg


def bundled_config_path() -> Path:
    return Path(__file__).parent / "data" / "fixture" / "config.yaml"
