"""End-to-end orchestration of both stages from an :class:`ExperimentConfig`."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .config import ExperimentConfig
from .inference import Battery, k_screen, run_battery
from .localproj import Differential, LpResult, differential, run_lp_with_integration
from .panel import AggregateRule, PanelDataset, Transform, apply_transform
from .scm import ScmFit, SearchOptions, periods_in, solve_weights
from .shocks import ShockSeries, TaylorColumns, build_shock_series
from .transfer import (
    EffectProfile,
    SimulatedPath,
    build_profile,
    enforce_disjoint_donors,
    harmonize_scale,
    net_gap,
    placebo_band,
    simulate_path,
)

LOGGER = logging.getLogger(__name__)

INTENSITY_NOTE = "integration intensity is the standardised simulated transfer gap (assumption)"
SCENARIO_NOTE = "transfer paths are scenarios, not causal estimates for the target"


def _level(panel: PanelDataset, unit: str, source: str, population: str | None) -> pd.Series:
    s = panel.series(unit, source).astype(float)
    if population:
        pop = panel.series(unit, population).astype(float)
        common = s.index.intersection(pop.index)
        s = s.loc[common] / pop.loc[common]
    return s


def prepare_panel(cfg: ExperimentConfig, panel: PanelDataset) -> PanelDataset:
    """Add derived variables for every unit and every configured aggregate."""
    records = [panel.frame]
    for v in cfg.variables:
        transform = Transform.LOG if v.transform is Transform.PER_CAPITA_LOG else v.transform
        levels = {}
        for unit in panel.units:
            if not panel.has(unit, v.source) or (v.population and not panel.has(unit, v.population)):
                continue
            levels[unit] = _level(panel, unit, v.source, v.population)
            if v.name != v.source or transform is not Transform.NONE:
                out = apply_transform(levels[unit], transform)
                records.append(_long(unit, v.name, out))
        for agg, members in sorted(cfg.aggregates.items()):
            if not all(m in levels for m in members):
                continue
            table = pd.concat([levels[m].rename(m) for m in sorted(members)], axis=1, join="inner").dropna()
            if table.empty:
                continue
            if v.aggregate is AggregateRule.SUM_THEN_LOG:
                total = table.sum(axis=1)
                if (total <= 0).any():
                    raise ValueError(f"aggregate {agg!r}: nonpositive {v.source!r} sum")
                out = np.log(total)
            else:
                out = apply_transform(table.mean(axis=1), transform)
            records.append(_long(agg, v.name, out))
    frame = pd.concat(records, ignore_index=True)
    frame = frame.drop_duplicates(["unit", "period", "variable"], keep="last")
    return PanelDataset(frame, panel.frequency)


def _long(unit: str, variable: str, series: pd.Series) -> pd.DataFrame:
    return pd.DataFrame(
        {"unit": unit, "period": series.index.astype(np.int64), "variable": variable, "value": series.to_numpy(float)}
    )


@dataclass
class TransferResult:
    source: str
    net_of: str
    target: str
    net: pd.Series
    profile_raw: EffectProfile
    profile: EffectProfile
    paths: dict[float, SimulatedPath]
    band_runs: int
    notes: tuple[str, ...] = (SCENARIO_NOTE,)


@dataclass
class Stage1Result:
    fits: dict[str, ScmFit]
    batteries: dict[str, Battery]
    transfer: TransferResult | None
    failures: dict[str, str] = field(default_factory=dict)


@dataclass
class Stage2Result:
    shocks: ShockSeries
    baseline: LpResult
    integrated: LpResult
    d_beta: Differential
    d_g: Differential
    notes: tuple[str, ...] = (INTENSITY_NOTE,)


def run_stage1(
    cfg: ExperimentConfig, panel: PanelDataset, workers: int = 1, options: SearchOptions | None = None
) -> Stage1Result:
    data = prepare_panel(cfg, panel)
    fits: dict[str, ScmFit] = {}
    batteries: dict[str, Battery] = {}
    failures: dict[str, str] = {}
    for fc in cfg.fits:
        LOGGER.info("fitting %s", fc.name)
        try:
            fits[fc.name] = solve_weights(fc, data, options)
        except Exception as exc:
            failures[f"fit:{fc.name}"] = f"{type(exc).__name__}: {exc}"
            LOGGER.error("fit %s failed: %s", fc.name, exc)
    for name, fit in fits.items():
        rob = cfg.robustness.get(name)
        LOGGER.info("robustness battery for %s", name)
        try:
            batteries[name] = run_battery(
                fit,
                data,
                K=cfg.k,
                ks=cfg.k_values,
                fake_periods=rob.fake_periods if rob else (),
                windows=rob.windows if rob else (),
                options=options,
                workers=workers,
            )
        except Exception as exc:
            failures[f"battery:{name}"] = f"{type(exc).__name__}: {exc}"
            LOGGER.error("battery %s failed: %s", name, exc)
    transfer = None
    if cfg.transfer is not None:
        try:
            transfer = _transfer(cfg, fits, batteries)
        except Exception as exc:
            failures["transfer"] = f"{type(exc).__name__}: {exc}"
            LOGGER.error("transfer failed: %s", exc)
    return Stage1Result(fits, batteries, transfer, failures)


def _transfer(cfg: ExperimentConfig, fits: dict[str, ScmFit], batteries: dict[str, Battery]) -> TransferResult:
    t = cfg.transfer
    src, ref, tgt = fits[t.source], fits[t.net_of], fits[t.target]
    target_units = {tgt.config.treated, *cfg.aggregates.get(tgt.config.treated, ())}
    enforce_disjoint_donors(set(src.donors) | set(ref.donors), target_units)
    src_origin = src.config.treatment_period
    net_all = net_gap(src.gap, ref.gap)
    net = net_all[net_all.index >= src_origin]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        raw = build_profile(net, src_origin, set(src.donors) | set(ref.donors))
    profile = raw
    if t.scale:
        tgt_pre = tgt.gap.reindex(periods_in(tgt.config.pre_window)).dropna()
        src_pre = net_all.reindex(periods_in(src.config.pre_window)).dropna()
        profile = harmonize_scale(raw, tgt_pre, src_pre)
    band_lo = band_hi = None
    n_band = 0
    battery = batteries.get(t.target)
    if battery is not None and tgt.diagnostics.pre_rmspe > 0:
        admissible = k_screen(battery.placebos, tgt.diagnostics.pre_rmspe, t.band_k)
        n_band = len(admissible)
        if n_band >= 2:
            band_lo, band_hi = placebo_band(admissible, tgt.synthetic, t.origin, t.band_percentiles)
    paths = {}
    for s in t.shares:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            p = simulate_path(tgt, profile, s, t.origin, target_units)
        if band_lo is not None:
            p = SimulatedPath(p.baseline, p.share, p.simulated, p.sim_gap, p.origin,
                              band_lo.reindex(p.baseline.index), band_hi.reindex(p.baseline.index))
        paths[s] = p
    notes = [SCENARIO_NOTE]
    if np.mean(list(raw.deltas.values())) < 0:
        notes.append("net effect profile is negative on average; transferred with its sign")
    if n_band < 2:
        notes.append(f"placebo band omitted: {n_band} admissible target placebos")
    return TransferResult(t.source, t.net_of, t.target, net, raw, profile, paths, n_band, tuple(notes))


def _country_frames(macro: PanelDataset, countries, variables) -> dict[str, pd.DataFrame]:
    out = {}
    for c in countries:
        out[c] = pd.DataFrame({v: macro.series(c, v) for v in variables}).sort_index()
    return out


def run_stage2(cfg: ExperimentConfig, macro: PanelDataset, baseline: pd.Series, integrated: pd.Series,
               intensity: pd.Series) -> Stage2Result:
    """Shocks, baseline and integrated local projections, and their differentials."""
    sc = cfg.shocks
    cols = TaylorColumns(**sc.columns)
    frames = _country_frames(macro, sc.countries, sorted(set(vars(cols).values())))
    shocks = build_shock_series(frames, sc.hac_lag, sc.weights, cols, sc.rate_units)
    spec = cfg.lp
    controls = None
    if spec.controls:
        ctl = _country_frames(macro, sc.countries, spec.controls)
        controls = sum(ctl[c] for c in sorted(ctl)) / len(ctl)
    shock = shocks.aggregate
    base = run_lp_with_integration(baseline, shock, intensity, spec, controls, scenario="baseline")
    integ = run_lp_with_integration(integrated, shock, intensity, spec, controls, scenario="integrated")
    return Stage2Result(shocks, base, integ, differential(integ, base, "beta"), differential(integ, base, "g"))


def stage2_inputs(transfer: TransferResult, share: float) -> tuple[pd.Series, pd.Series, pd.Series]:
    path = transfer.paths[share]
    return path.baseline, path.simulated, path.sim_gap
