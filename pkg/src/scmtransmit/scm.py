"""Synthetic control fits: donor weights on the simplex, paths, gaps and RMSPE.

Donor weights ``W`` minimise ``(X1 - X0 W)' V (X1 - X0 W)`` for a diagonal
predictor weighting ``V``; ``V`` itself is chosen to minimise the treated
unit's pre-window outcome MSPE under ``W(V)``. The inner problem runs in
:mod:`scmtransmit.kernels`, the outer search is a deterministic
multiplicative pattern search over the simplex with restarts.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from . import kernels
from .panel import ANNUAL, MONTHLY, PanelDataset, PanelError, format_period

LOGGER = logging.getLogger(__name__)

Window = tuple[int, int]


class ScmError(ValueError):
    """Invalid SCM configuration or an unusable predictor set."""


class ScmWarning(UserWarning):
    """Dropped predictor rows, degenerate donors and similar recoverable issues."""


class ConvergenceError(RuntimeError):
    """The inner weight solver hit its iteration cap; ``best`` holds the last iterate."""

    def __init__(self, message: str, best: np.ndarray, objective: float):
        super().__init__(message)
        self.best = best
        self.objective = objective


def window_label(window: Window, frequency: str = ANNUAL) -> str:
    """``startYYYY-endYYYY`` label used in every emitted table."""
    start, end = window
    if frequency == MONTHLY:
        return f"{format_period(start, frequency).replace('-', '')}-{format_period(end, frequency).replace('-', '')}"
    return f"{start:04d}-{end:04d}"


def short_label(window: Window, frequency: str = ANNUAL) -> str:
    """Compact column suffix, e.g. ``0406`` for 2004-2006."""
    if frequency == ANNUAL:
        return f"{window[0] % 100:02d}{window[1] % 100:02d}"
    return window_label(window, frequency)


def periods_in(window: Window) -> list[int]:
    return list(range(window[0], window[1] + 1))


@dataclass(frozen=True)
class PredictorSpec:
    variable: str
    window: Window

    def __post_init__(self) -> None:
        object.__setattr__(self, "window", (int(self.window[0]), int(self.window[1])))
        if self.window[0] > self.window[1]:
            raise ScmError(f"predictor {self.variable!r}: window start after end")

    @property
    def label(self) -> str:
        return self.variable


@dataclass(frozen=True)
class ScmConfig:
    treated: str
    donors: tuple[str, ...]
    outcome: str
    pre_window: Window
    treatment_period: int
    predictors: tuple[PredictorSpec, ...] = ()
    outcome_lags: tuple[int, ...] = ()
    post_windows: tuple[Window, ...] = ()
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "donors", tuple(self.donors))
        object.__setattr__(self, "predictors", tuple(self.predictors))
        object.__setattr__(self, "outcome_lags", tuple(int(p) for p in self.outcome_lags))
        object.__setattr__(self, "post_windows", tuple((int(a), int(b)) for a, b in self.post_windows))
        object.__setattr__(self, "pre_window", (int(self.pre_window[0]), int(self.pre_window[1])))
        if not self.name:
            object.__setattr__(self, "name", self.treated)
        if self.treated in self.donors:
            raise ScmError(f"treated unit {self.treated!r} is in its own donor pool")
        if len(set(self.donors)) != len(self.donors):
            raise ScmError("donor pool has duplicates")
        if not self.donors:
            raise ScmError("donor pool is empty")
        lo, hi = self.pre_window
        if lo > hi:
            raise ScmError("pre_window start after end")
        if hi >= self.treatment_period:
            raise ScmError("pre_window must end strictly before the treatment period")
        for lag in self.outcome_lags:
            if not lo <= lag <= hi:
                raise ScmError(f"outcome lag {lag} outside pre_window {self.pre_window}")
        for a, b in self.post_windows:
            if a > b:
                raise ScmError(f"post window ({a}, {b}) start after end")


@dataclass(frozen=True)
class FitDiagnostics:
    pre_rmspe: float
    post_rmspe: Mapping[str, float] = field(default_factory=dict)
    ratio: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class ScmFit:
    config: ScmConfig
    weights: np.ndarray
    predictor_labels: tuple[str, ...]
    v_weights: np.ndarray
    treated_predictors: np.ndarray
    donor_predictors: np.ndarray
    treated_path: pd.Series
    synthetic: pd.Series
    gap: pd.Series
    diagnostics: FitDiagnostics
    objective: float
    pre_mspe: float
    history: tuple[float, ...] = ()
    dropped_rows: tuple[str, ...] = ()
    notes: tuple[str, ...] = ()
    frequency: str = ANNUAL

    @property
    def donors(self) -> tuple[str, ...]:
        return self.config.donors

    def weight_map(self) -> dict[str, float]:
        return {d: float(w) for d, w in zip(self.donors, self.weights)}

    def balance_table(self) -> pd.DataFrame:
        """Treated vs synthetic predictor values in their native units."""
        synth = self.donor_predictors @ self.weights
        return pd.DataFrame(
            {
                "metric": list(self.predictor_labels),
                "treated": self.treated_predictors,
                "synthetic": synth,
                "difference": self.treated_predictors - synth,
            }
        )

    def to_dict(self) -> dict:
        return {
            "name": self.config.name,
            "treated": self.config.treated,
            "treatment_period": self.config.treatment_period,
            "pre_window": list(self.config.pre_window),
            "donor_weights": self.weight_map(),
            "predictor_weights": {k: float(v) for k, v in zip(self.predictor_labels, self.v_weights)},
            "dropped_rows": list(self.dropped_rows),
            "objective": self.objective,
            "pre_mspe": self.pre_mspe,
            "diagnostics": {
                "pre_rmspe": self.diagnostics.pre_rmspe,
                "post_rmspe": dict(self.diagnostics.post_rmspe),
                "ratio": dict(self.diagnostics.ratio),
            },
            "paths": {
                "period": [int(p) for p in self.gap.index],
                "actual": self.treated_path.loc[self.gap.index].tolist(),
                "synthetic": self.synthetic.loc[self.gap.index].tolist(),
                "gap": self.gap.tolist(),
            },
            "notes": list(self.notes),
        }


# ---------------------------------------------------------------- building blocks


def rmspe(gap: pd.Series, window: Window) -> float:
    """Root mean squared gap over the inclusive ``window``."""
    periods = periods_in(window)
    if not periods:
        raise ScmError(f"empty window {window}")
    missing = [p for p in periods if p not in gap.index]
    if missing:
        raise ScmError(f"window {window} not covered by gap series (missing {missing[0]})")
    vals = gap.loc[periods].to_numpy(float)
    return math.sqrt(float(np.mean(vals * vals)))


def rmspe_ratio(diag: FitDiagnostics, label: str) -> float:
    if diag.pre_rmspe == 0:
        raise ScmError("pre-window RMSPE is 0 (perfect pre-fit); post/pre ratio undefined")
    return diag.post_rmspe[label] / diag.pre_rmspe


def compute_diagnostics(
    gap: pd.Series, pre_window: Window, post_windows: Sequence[Window], frequency: str = ANNUAL
) -> FitDiagnostics:
    pre = rmspe(gap, pre_window)
    post = {}
    ratio = {}
    for w in post_windows:
        lab = window_label(w, frequency)
        post[lab] = rmspe(gap, w)
        ratio[lab] = post[lab] / pre if pre > 0 else float("nan")
    return FitDiagnostics(pre, post, ratio)


def synthetic_path(
    fit_or_weights: ScmFit | Mapping[str, float],
    data: PanelDataset,
    periods: Window | Sequence[int] | None = None,
    outcome: str | None = None,
) -> pd.Series:
    """Weighted donor outcome ``sum_j W_j Y_jt``.

    ``periods`` may be an inclusive window or an explicit list; when omitted
    the path covers every period where all donors are observed.
    """
    if isinstance(fit_or_weights, ScmFit):
        weights = fit_or_weights.weight_map()
        outcome = outcome or fit_or_weights.config.outcome
    else:
        weights = dict(fit_or_weights)
        if outcome is None:
            raise ScmError("outcome variable required with a bare weight map")
    donors = list(weights)
    table = data.wide(outcome, donors)
    if periods is None:
        table = table.dropna()
    else:
        plist = periods_in(periods) if isinstance(periods, tuple) and len(periods) == 2 else list(periods)
        table = table.reindex(plist)
        for p in plist:
            for d in donors:
                if pd.isna(table.at[p, d]):
                    raise PanelError(f"donor {d!r} missing {outcome!r} at period {p}")
    w = np.array([weights[d] for d in donors])
    return pd.Series(table.to_numpy(float) @ w, index=table.index.astype(np.int64), name="synthetic")


def predictor_matrix(config: ScmConfig, data: PanelDataset) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Raw predictor rows: window means of each covariate, then outcome lags.

    Returns ``(labels, X1, X0)`` with ``X1`` of shape (k,) and ``X0`` of
    shape (k, J).
    """
    units = [config.treated, *config.donors]
    labels: list[str] = []
    rows: list[np.ndarray] = []
    for spec in config.predictors:
        table = data.wide(spec.variable, units).reindex(periods_in(spec.window))
        missing = [(u, int(p)) for p in table.index for u in units if pd.isna(table.at[p, u])]
        if missing:
            raise PanelError(f"predictor {spec.variable!r} missing at {missing[:5]}")
        labels.append(spec.label)
        rows.append(table.mean(axis=0).to_numpy(float))
    if config.outcome_lags:
        table = data.wide(config.outcome, units)
        for lag in config.outcome_lags:
            if lag not in table.index or table.loc[lag].isna().any():
                raise PanelError(f"outcome {config.outcome!r} missing at lag period {lag}")
            labels.append(f"{config.outcome}({lag})")
            rows.append(table.loc[lag].to_numpy(float))
    if not rows:
        raise ScmError("no predictors configured")
    mat = np.vstack(rows)
    return labels, mat[:, 0], mat[:, 1:]


def _screen_rows(labels, X1, X0) -> tuple[np.ndarray, list[str], list[str]]:
    """Standardise rows to unit cross-unit sd; drop constant and duplicate rows."""
    full = np.column_stack([X1, X0])
    keep: list[int] = []
    dropped: list[str] = []
    scaled: list[np.ndarray] = []
    for i, lab in enumerate(labels):
        row = full[i]
        sd = float(np.std(row, ddof=1))
        if not sd > 1e-12 * (1.0 + float(np.max(np.abs(row)))):
            warnings.warn(f"predictor row {lab!r} is constant across units; dropped", ScmWarning, stacklevel=3)
            dropped.append(lab)
            continue
        # proportional rows carry the same information and leave V unidentified
        z = row / sd
        if any(np.allclose(z, s, rtol=0, atol=1e-10) for s in scaled):
            warnings.warn(f"predictor row {lab!r} duplicates an earlier row; dropped", ScmWarning, stacklevel=3)
            dropped.append(lab)
            continue
        scaled.append(z)
        keep.append(i)
    return np.array(keep, dtype=int), dropped, [labels[i] for i in keep]


def solve_inner(X1: np.ndarray, X0: np.ndarray, v: np.ndarray, max_iter: int = 10_000, tol: float = 1e-10):
    """Donor weights for a fixed diagonal ``v``; returns ``(W, objective)``."""
    Xv = X0 * v[:, None]
    H = X0.T @ Xv
    c = Xv.T @ X1
    d = float(X1 @ (v * X1))
    lip = 2.0 * float(np.linalg.eigvalsh(H)[-1]) if H.shape[0] > 1 else 0.0
    w, f, n_iter, ok = kernels.solve_simplex_qp(H, c, d, lip, max_iter, tol)
    if not ok:
        raise ConvergenceError(f"weight solver did not converge in {max_iter} iterations", np.asarray(w), f)
    w = np.maximum(np.asarray(w, dtype=float), 0.0)
    w /= w.sum()
    return w, max(float(f), 0.0)


@dataclass(frozen=True)
class SearchOptions:
    """Outer V search settings."""

    rho0: float = 4.0
    rho_min: float = 1.001
    max_sweeps: int = 60
    floor: float = 1e-12
    restarts: int = 1
    inner_max_iter: int = 10_000
    inner_tol: float = 1e-10


def _pattern_search(loss, v0, f0, opts: SearchOptions, history: list[float], best: list):
    """Coordinate-wise multiplicative search over the simplex."""
    v, f = v0, f0
    rho = opts.rho0
    sweeps = 0
    k = v.shape[0]
    while rho > opts.rho_min and sweeps < opts.max_sweeps:
        improved = False
        for i in range(k):
            for factor in (rho, 1.0 / rho):
                cand = v.copy()
                cand[i] *= factor
                cand = np.maximum(cand / cand.sum(), opts.floor)
                cand /= cand.sum()
                fc = loss(cand)
                if fc < f * (1.0 - 1e-12):
                    v, f = cand, fc
                    improved = True
                    break
        sweeps += 1
        if f < best[1]:
            best[0], best[1] = v, f
        history.append(best[1])
        if not improved:
            rho = math.sqrt(rho)
    return v, f


def _start_points(labels: list[str], outcome: str, k: int) -> list[np.ndarray]:
    starts = [np.full(k, 1.0 / k)]
    is_lag = np.array([lab.startswith(f"{outcome}(") for lab in labels])
    if is_lag.any() and not is_lag.all():
        v = np.where(is_lag, 0.9 / is_lag.sum(), 0.1 / (~is_lag).sum())
        starts.append(v / v.sum())
    return starts


def solve_weights(config: ScmConfig, data: PanelDataset, options: SearchOptions | None = None) -> ScmFit:
    """Fit the synthetic control for ``config`` (nested V/W optimisation).

    The problem is solved with donors in sorted order and mapped back, so
    the result does not depend on how the donor pool is listed.
    """
    canon = tuple(sorted(config.donors))
    if canon == config.donors:
        return _solve_weights(config, data, options)
    fit = _solve_weights(replace(config, donors=canon), data, options)
    idx = [canon.index(d) for d in config.donors]
    return replace(fit, config=config, weights=fit.weights[idx], donor_predictors=fit.donor_predictors[:, idx])


def _solve_weights(config: ScmConfig, data: PanelDataset, options: SearchOptions | None) -> ScmFit:
    opts = options or SearchOptions()
    notes: list[str] = []
    labels, X1_raw, X0_raw = predictor_matrix(config, data)
    units = [config.treated, *config.donors]
    outcome = data.wide(config.outcome, units)
    pre_periods = periods_in(config.pre_window)
    pre = outcome.reindex(pre_periods)
    if pre.isna().any().any():
        bad = [(u, int(p)) for p in pre.index for u in units if pd.isna(pre.at[p, u])]
        raise PanelError(f"outcome {config.outcome!r} missing in pre_window at {bad[:5]}")
    Y1 = pre[config.treated].to_numpy(float)
    Y0 = pre[list(config.donors)].to_numpy(float)
    for j, d in enumerate(config.donors):
        if np.ptp(Y0[:, j]) == 0:
            msg = f"donor {d!r} has a constant outcome over the pre-window"
            warnings.warn(msg, ScmWarning, stacklevel=2)
            notes.append(msg)

    J = len(config.donors)
    history: list[float] = []
    if J == 1:
        keep = np.arange(len(labels))
        dropped: list[str] = []
        kept_labels = list(labels)
        W = np.ones(1)
        V = np.full(len(labels), 1.0 / len(labels))
        objective = float(np.sum((X1_raw - X0_raw[:, 0]) ** 2) / len(labels))
        notes.append("single donor: weight forced to 1")
    else:
        keep, dropped, kept_labels = _screen_rows(labels, X1_raw, X0_raw)
        notes.extend(f"dropped predictor row {d}" for d in dropped)
        if len(keep) < 2:
            raise ScmError(f"fewer than 2 usable predictor rows (kept {kept_labels})")
        full = np.column_stack([X1_raw[keep], X0_raw[keep]])
        sd = np.std(full, axis=1, ddof=1)
        X1 = X1_raw[keep] / sd
        X0 = X0_raw[keep] / sd[:, None]

        def loss(v: np.ndarray) -> float:
            try:
                w, _ = solve_inner(X1, X0, v, opts.inner_max_iter, opts.inner_tol)
            except ConvergenceError:
                return math.inf
            r = Y1 - Y0 @ w
            return float(np.mean(r * r))

        k = len(keep)
        best = [None, math.inf]
        starts = _start_points(kept_labels, config.outcome, k)
        for v0 in starts:
            f0 = loss(v0)
            if f0 < best[1]:
                best[0], best[1] = v0, f0
            history.append(best[1])
            _pattern_search(loss, v0, f0, opts, history, best)
        for _ in range(opts.restarts):
            if best[0] is None:
                break
            _pattern_search(loss, best[0], best[1], opts, history, best)
        if best[0] is None:
            raise ScmError("no predictor weighting produced a convergent weight solve")
        V = best[0]
        W, objective = solve_inner(X1, X0, V, opts.inner_max_iter, opts.inner_tol)

    synth_all = synthetic_path(dict(zip(config.donors, W)), data, outcome=config.outcome)
    treated = data.series(config.treated, config.outcome)
    common = synth_all.index.intersection(treated.index)
    gap = (treated.loc[common] - synth_all.loc[common]).rename("gap")
    for w in config.post_windows:
        if w[1] > gap.index.max() or w[0] < gap.index.min():
            raise ScmError(f"post window {window_label(w, data.frequency)} extends beyond the data")
    diag = compute_diagnostics(gap, config.pre_window, config.post_windows, data.frequency)
    resid = Y1 - Y0 @ W
    return ScmFit(
        config=config,
        weights=W,
        predictor_labels=tuple(kept_labels),
        v_weights=np.asarray(V, dtype=float),
        treated_predictors=X1_raw[keep],
        donor_predictors=X0_raw[keep],
        treated_path=treated,
        synthetic=synth_all,
        gap=gap,
        diagnostics=diag,
        objective=float(objective),
        pre_mspe=float(np.mean(resid * resid)),
        history=tuple(history),
        dropped_rows=tuple(dropped),
        notes=tuple(notes),
        frequency=data.frequency,
    )
