"""Local-projection impulse responses and scenario differentials.

For each horizon ``h`` the cumulative change ``y[t+h] - y[t-1]`` is
regressed on the shock at ``t``, an intercept, an optional linear trend and
contemporaneous controls. Standard errors are Newey-West; bands are
symmetric normal intervals.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Mapping

import numpy as np
import pandas as pd

from .shocks import ShockError, newey_west_cov

LOGGER = logging.getLogger(__name__)


class LpError(ValueError):
    pass


class Trend(str, enum.Enum):
    NONE = "none"
    LINEAR = "linear"


class LagRule(str, enum.Enum):
    HORIZON = "horizon"  # max(h, 1)
    HORIZON_PLUS_ONE = "horizon_plus_one"
    FIXED = "fixed"


@dataclass(frozen=True)
class LpSpec:
    horizons: tuple[int, ...]
    controls: tuple[str, ...] = ()
    trend: Trend = Trend.NONE
    lag_rule: LagRule = LagRule.HORIZON
    fixed_lag: int = 2
    confidence: float = 0.90

    def __post_init__(self) -> None:
        object.__setattr__(self, "horizons", tuple(int(h) for h in self.horizons))
        object.__setattr__(self, "controls", tuple(self.controls))
        object.__setattr__(self, "trend", Trend(self.trend))
        object.__setattr__(self, "lag_rule", LagRule(self.lag_rule))
        h = self.horizons
        if not h or h[0] < 0 or any(b <= a for a, b in zip(h, h[1:])):
            raise LpError("horizons must be strictly increasing and start at >= 0")
        if not 0 < self.confidence < 1:
            raise LpError("confidence must lie in (0, 1)")

    def hac_lag(self, h: int) -> int:
        if self.lag_rule is LagRule.FIXED:
            return self.fixed_lag
        if self.lag_rule is LagRule.HORIZON_PLUS_ONE:
            return h + 1
        return max(h, 1)

    @property
    def z(self) -> float:
        return NormalDist().inv_cdf(0.5 + self.confidence / 2)


@dataclass(frozen=True)
class Estimate:
    value: float
    se: float
    ci_lo: float
    ci_hi: float
    n: int = 0


def _estimate(value: float, se: float, z: float, n: int = 0) -> Estimate:
    return Estimate(value, se, value - z * se, value + z * se, n)


@dataclass(frozen=True)
class LpResult:
    scenario: str
    beta: Mapping[int, Estimate]
    g: Mapping[int, Estimate] | None = None
    unavailable: tuple[int, ...] = ()
    spec: LpSpec | None = None
    notes: tuple[str, ...] = ()

    def frame(self) -> pd.DataFrame:
        rows = []
        for h in sorted(self.beta):
            b = self.beta[h]
            row = {"h": h, "beta": b.value, "se": b.se, "ci_lo": b.ci_lo, "ci_hi": b.ci_hi, "n": b.n}
            if self.g is not None:
                g = self.g[h]
                row.update({"g": g.value, "g_se": g.se, "g_ci_lo": g.ci_lo, "g_ci_hi": g.ci_hi})
            rows.append(row)
        return pd.DataFrame(rows)


@dataclass(frozen=True)
class Differential:
    kind: str
    per_horizon: Mapping[int, Estimate]
    notes: tuple[str, ...] = field(
        default=("difference se assumes independence across scenarios; both share data, so it understates dependence",)
    )

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {"h": h, "value": e.value, "se": e.se, "ci_lo": e.ci_lo, "ci_hi": e.ci_hi}
                for h, e in sorted(self.per_horizon.items())
            ],
            columns=["h", "value", "se", "ci_lo", "ci_hi"],
        )


def _standardize(x: pd.Series, what: str) -> pd.Series:
    sd = float(x.std(ddof=1)) if len(x) > 1 else 0.0
    if not sd > 0:
        raise LpError(f"{what} is constant; its effect is not identified")
    return (x - x.mean()) / sd


def _frame(outcome: pd.Series, shock: pd.Series, controls: pd.DataFrame | None) -> pd.DataFrame:
    lo = int(min(outcome.index.min(), shock.index.min()))
    hi = int(max(outcome.index.max(), shock.index.max()))
    idx = pd.RangeIndex(lo, hi + 1)
    df = pd.DataFrame({"y": outcome.reindex(idx), "shock": shock.reindex(idx)}, index=idx)
    if controls is not None:
        for c in controls.columns:
            df[f"ctl_{c}"] = controls[c].reindex(idx)
    return df


def _run(
    outcome: pd.Series,
    shock: pd.Series,
    spec: LpSpec,
    controls: pd.DataFrame | None,
    intensity: pd.Series | None,
    scenario: str,
) -> LpResult:
    if spec.controls:
        if controls is None:
            raise LpError(f"controls {list(spec.controls)} requested but none supplied")
        missing = [c for c in spec.controls if c not in controls.columns]
        if missing:
            raise LpError(f"control columns missing: {missing}")
        controls = controls[list(spec.controls)]
    else:
        controls = None
    df = _frame(outcome, shock, controls)
    shock_obs = df["shock"].dropna()
    if len(shock_obs) < 2 or not float(shock_obs.std(ddof=1)) > 0:
        raise LpError("shock series has zero variance")
    if intensity is not None:
        common = shock_obs.index.intersection(intensity.dropna().index)
        m = _standardize(intensity.loc[common].astype(float), "integration intensity")
        df["intensity"] = m.reindex(df.index)
        df["interaction"] = df["shock"] * df["intensity"]
    base_cols = ["const", "shock"] + (["intensity", "interaction"] if intensity is not None else [])
    if spec.trend is Trend.LINEAR:
        base_cols.append("trend")
    base_cols += [c for c in df.columns if c.startswith("ctl_")]
    df["const"] = 1.0
    df["trend"] = df.index.to_numpy(float) - df.index[0]
    z = spec.z
    beta: dict[int, Estimate] = {}
    g: dict[int, Estimate] = {}
    unavailable = []
    for h in spec.horizons:
        work = df.copy()
        work["dy"] = df["y"].shift(-h) - df["y"].shift(1)
        work = work[["dy", *base_cols]].dropna()
        k = len(base_cols)
        lag = spec.hac_lag(h)
        if len(work) < k + 2 or lag >= len(work):
            unavailable.append(h)
            continue
        X = work[base_cols].to_numpy(float)
        y = work["dy"].to_numpy(float)
        if np.linalg.matrix_rank(X) < k:
            unavailable.append(h)
            LOGGER.warning("horizon %d: regressors are collinear; marked unavailable", h)
            continue
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ coef
        try:
            cov = newey_west_cov(resid, X, lag)
        except ShockError:
            unavailable.append(h)
            continue
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
        beta[h] = _estimate(float(coef[1]), float(se[1]), z, len(y))
        if intensity is not None:
            g[h] = _estimate(float(coef[3]), float(se[3]), z, len(y))
    notes = ()
    if intensity is not None:
        notes = ("integration intensity is the standardised simulated transfer gap (assumption)",)
    return LpResult(scenario, beta, g if intensity is not None else None, tuple(unavailable), spec, notes)


def run_lp(
    outcome: pd.Series,
    shock: pd.Series,
    spec: LpSpec,
    controls: pd.DataFrame | None = None,
    scenario: str = "baseline",
) -> LpResult:
    """Impulse responses ``beta_h`` of ``outcome`` to ``shock``."""
    return _run(outcome, shock, spec, controls, None, scenario)


def run_lp_with_integration(
    outcome: pd.Series,
    shock: pd.Series,
    intensity: pd.Series,
    spec: LpSpec,
    controls: pd.DataFrame | None = None,
    scenario: str = "baseline",
) -> LpResult:
    """As :func:`run_lp`, adding standardised ``intensity`` and ``shock * intensity``.

    ``g_h`` is the coefficient on the interaction.
    """
    return _run(outcome, shock, spec, controls, intensity, scenario)


def differential(res_int: LpResult, res_base: LpResult, kind: str = "beta", confidence: float | None = None) -> Differential:
    """Integrated-minus-baseline coefficients with ``se = sqrt(se_int^2 + se_base^2)``."""
    if kind not in ("beta", "g"):
        raise LpError(f"unknown differential kind {kind!r}")
    a = res_int.beta if kind == "beta" else res_int.g
    b = res_base.beta if kind == "beta" else res_base.g
    if a is None or b is None:
        raise LpError(f"both results must carry {kind} coefficients")
    common = sorted(set(a) & set(b))
    if not common:
        raise LpError("results share no horizons")
    if confidence is None:
        confidence = res_int.spec.confidence if res_int.spec is not None else 0.90
    z = NormalDist().inv_cdf(0.5 + confidence / 2)
    out = {}
    for h in common:
        val = a[h].value - b[h].value
        se = math.sqrt(a[h].se ** 2 + b[h].se ** 2)
        out[h] = _estimate(val, se, z)
    return Differential("DELTA_BETA" if kind == "beta" else "DELTA_G", out)
