"""Robustness battery: placebos in space and time, leave-one-out, alternative
post windows, K-screening and the permutation p-value."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import pandas as pd

from .panel import PanelDataset
from .scm import (
    ScmConfig,
    ScmError,
    ScmFit,
    SearchOptions,
    Window,
    compute_diagnostics,
    periods_in,
    short_label,
    solve_weights,
    window_label,
)

LOGGER = logging.getLogger(__name__)

DEFAULT_KS = (1, 2, 3, 5)


@dataclass(frozen=True)
class PlaceboRun:
    pseudo_treated: str
    fit: ScmFit | None
    admissible_under_k: Mapping[float, bool] = field(default_factory=dict)
    error: str | None = None

    @property
    def pre_rmspe(self) -> float:
        return self.fit.diagnostics.pre_rmspe if self.fit is not None else math.nan


@dataclass(frozen=True)
class PermutationResult:
    treated_ratio: float
    placebo_ratios: tuple[float, ...]
    K: float
    n_admissible: int
    n_ge: int
    p_right: float
    window: str = ""


def _fit_or_error(args) -> tuple[ScmFit | None, str | None]:
    config, data, options = args
    try:
        return solve_weights(config, data, options), None
    except Exception as exc:  # recorded per run, never fatal to the battery
        return None, f"{type(exc).__name__}: {exc}"


def _map(fn: Callable, items: list, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def placebo_in_space(
    config: ScmConfig,
    data: PanelDataset,
    treated_pre: float | None = None,
    ks: Iterable[float] = DEFAULT_KS,
    options: SearchOptions | None = None,
    workers: int = 1,
) -> list[PlaceboRun]:
    """Refit with each donor as pseudo-treated; the true treated unit never enters a pool."""
    if len(config.donors) < 2:
        raise ScmError("placebo-in-space needs at least 2 donors")
    jobs = []
    for d in sorted(config.donors):
        pool = tuple(x for x in config.donors if x != d)
        jobs.append((replace(config, treated=d, donors=pool, name=f"{config.name}:placebo:{d}"), data, options))
    results = _map(_fit_or_error, jobs, workers)
    runs = []
    for (cfg, _, _), (fit, err) in zip(jobs, results):
        adm = {}
        if fit is not None and treated_pre is not None:
            adm = {k: fit.diagnostics.pre_rmspe <= k * treated_pre for k in ks}
        runs.append(PlaceboRun(cfg.treated, fit, adm, err))
    return runs


def k_screen(runs: Sequence[PlaceboRun], treated_pre: float, K: float) -> list[PlaceboRun]:
    """Keep placebos whose pre-RMSPE is at most ``K`` times the treated unit's."""
    if not treated_pre > 0:
        raise ScmError("treated pre-RMSPE must be positive for K-screening")
    limit = K * treated_pre
    return [r for r in runs if r.fit is not None and r.fit.diagnostics.pre_rmspe <= limit]


def permutation_p(
    runs: Sequence[PlaceboRun], treated_ratio: float, window: str, K: float = math.nan
) -> PermutationResult:
    """One-sided add-one permutation p-value on the post/pre ratio for ``window``.

    A placebo with an undefined ratio (perfect pre-fit) counts as an exceedance.
    """
    ratios = tuple(float(r.fit.diagnostics.ratio[window]) for r in runs if r.fit is not None)
    n_ge = sum(1 for x in ratios if math.isnan(x) or x >= treated_ratio)
    n = len(ratios)
    return PermutationResult(treated_ratio, ratios, K, n, n_ge, (1 + n_ge) / (1 + n), window)


def _shift_windows(config: ScmConfig, start: int) -> tuple[Window, ...]:
    return tuple((start, b) for _, b in config.post_windows)


def placebo_in_time(
    config: ScmConfig,
    data: PanelDataset,
    fake_periods: Sequence[int],
    options: SearchOptions | None = None,
    workers: int = 1,
) -> pd.DataFrame:
    """Refit as if treatment happened at each fake period.

    Pre-window, predictor windows and outcome lags are truncated to end before
    the fake period. Post windows are measured from the fake period to the
    original window ends and labelled accordingly.
    """
    lo, _ = config.pre_window
    jobs = []
    errors: dict[int, str] = {}
    for fake in fake_periods:
        if not lo < fake < config.treatment_period:
            raise ScmError(
                f"fake period {fake} must lie strictly after {lo} and strictly before the treatment period "
                f"{config.treatment_period}"
            )
        if fake - lo < 3:
            errors[fake] = f"truncated pre-window {lo}-{fake - 1} shorter than 3 periods"
            continue
        preds = tuple(
            replace(p, window=(p.window[0], min(p.window[1], fake - 1)))
            for p in config.predictors
            if p.window[0] <= fake - 1
        )
        cfg = replace(
            config,
            pre_window=(lo, fake - 1),
            treatment_period=fake,
            predictors=preds,
            outcome_lags=tuple(p for p in config.outcome_lags if p < fake),
            post_windows=_shift_windows(config, fake),
            name=f"{config.name}:fake:{fake}",
        )
        jobs.append((fake, (cfg, data, options)))
    results = _map(_fit_or_error, [j for _, j in jobs], workers)
    rows = []
    fits = dict(zip([f for f, _ in jobs], results))
    for fake in sorted(set(fake_periods)):
        row: dict = {"fake": fake}
        if fake in errors:
            row["error"] = errors[fake]
        else:
            fit, err = fits[fake]
            if fit is None:
                row["error"] = err
            else:
                row.update(_diag_columns(fit, fit.config.post_windows))
                row["pre_window"] = window_label(fit.config.pre_window, fit.frequency)
        rows.append(row)
    return pd.DataFrame(rows)


def _diag_columns(fit: ScmFit, windows: Sequence[Window]) -> dict:
    out = {"preR": fit.diagnostics.pre_rmspe}
    for w in windows:
        lab = window_label(w, fit.frequency)
        tag = short_label(w, fit.frequency)
        out[f"postR_{tag}"] = fit.diagnostics.post_rmspe[lab]
        out[f"ratio_{tag}"] = fit.diagnostics.ratio[lab]
    return out


def leave_one_out(
    config: ScmConfig, data: PanelDataset, options: SearchOptions | None = None, workers: int = 1
) -> pd.DataFrame:
    """Refit once per dropped donor."""
    if len(config.donors) < 3:
        raise ScmError("leave-one-out needs at least 3 donors")
    jobs = []
    for d in sorted(config.donors):
        pool = tuple(x for x in config.donors if x != d)
        jobs.append((d, (replace(config, donors=pool, name=f"{config.name}:loo:{d}"), data, options)))
    results = _map(_fit_or_error, [j for _, j in jobs], workers)
    rows = []
    for (dropped, _), (fit, err) in zip(jobs, results):
        row: dict = {"dropped_donor": dropped}
        if fit is None:
            row["error"] = err
        else:
            row.update(_diag_columns(fit, config.post_windows))
            row["weights"] = ";".join(f"{k}={v:.4f}" for k, v in fit.weight_map().items())
        rows.append(row)
    return pd.DataFrame(rows)


def alternative_windows(fit: ScmFit, windows: Sequence[Window]) -> pd.DataFrame:
    """Post/pre RMSPE ratio for each window against the fit's fixed pre-RMSPE."""
    t0 = fit.config.treatment_period
    lo, hi = int(fit.gap.index.min()), int(fit.gap.index.max())
    rows = []
    for w in windows:
        w = (int(w[0]), int(w[1]))
        lab = window_label(w, fit.frequency)
        if w[0] != t0:
            raise ScmError(f"window {lab} must start at the treatment period {t0}")
        if w[1] > hi or w[0] < lo or any(p not in fit.gap.index for p in periods_in(w)):
            raise ScmError(f"window {lab} extends beyond the data")
        d = compute_diagnostics(fit.gap, fit.config.pre_window, [w], fit.frequency)
        rows.append({"window": lab, "preR": d.pre_rmspe, "postR": d.post_rmspe[lab], "ratio": d.ratio[lab]})
    return pd.DataFrame(rows, columns=["window", "preR", "postR", "ratio"])


def placebo_space_table(runs: Sequence[PlaceboRun], windows: Sequence[Window]) -> pd.DataFrame:
    rows = []
    for r in sorted(runs, key=lambda r: r.pseudo_treated):
        row: dict = {"treated": r.pseudo_treated}
        if r.fit is None:
            row["error"] = r.error
        else:
            row.update(_diag_columns(r.fit, windows))
            for k, ok in sorted(r.admissible_under_k.items()):
                row[f"admissible_k{k:g}"] = ok
        rows.append(row)
    return pd.DataFrame(rows)


@dataclass(frozen=True)
class Battery:
    """Everything the robustness battery produces for one treated fit."""

    fit: ScmFit
    placebos: list[PlaceboRun]
    permutation: dict[str, PermutationResult]
    placebo_time: pd.DataFrame
    loo: pd.DataFrame | None
    windows: pd.DataFrame
    K: float
    notes: tuple[str, ...] = ()


def run_battery(
    fit: ScmFit,
    data: PanelDataset,
    K: float = 3,
    ks: Iterable[float] = DEFAULT_KS,
    fake_periods: Sequence[int] = (),
    windows: Sequence[Window] = (),
    options: SearchOptions | None = None,
    workers: int = 1,
) -> Battery:
    cfg = fit.config
    pre = fit.diagnostics.pre_rmspe
    ks = sorted(set(ks) | {K})
    notes = []
    runs = placebo_in_space(cfg, data, pre, ks, options, workers)
    perms: dict[str, PermutationResult] = {}
    if pre > 0:
        admissible = k_screen(runs, pre, K)
        for w in cfg.post_windows:
            lab = window_label(w, fit.frequency)
            perms[lab] = permutation_p(admissible, fit.diagnostics.ratio[lab], lab, K)
    else:
        notes.append("treated pre-RMSPE is 0; K-screen and permutation test skipped")
    ptime = placebo_in_time(cfg, data, fake_periods, options, workers) if fake_periods else pd.DataFrame()
    if len(fake_periods):
        notes.append(
            "placebo-in-time post windows are measured from each fake period, not from the true treatment period"
        )
    loo = leave_one_out(cfg, data, options, workers) if len(cfg.donors) >= 3 else None
    alt = alternative_windows(fit, windows) if windows else pd.DataFrame(columns=["window", "preR", "postR", "ratio"])
    return Battery(fit, runs, perms, ptime, loo, alt, K, tuple(notes))
