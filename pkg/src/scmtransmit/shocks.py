"""Monetary-policy shocks from an amended Taylor rule.

Per country, the rate change is regressed on one-year-ahead output and
inflation forecasts, lagged output growth, inflation, reserve change and
the lagged rate. Residuals are standardised with a sign chosen so that a
positive shock is a tightening, then averaged across countries and
re-standardised.
"""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import pandas as pd

LOGGER = logging.getLogger(__name__)

RATE_UNITS = {"percent": 1.0, "pp": 1.0, "bp": 0.01, "basis_points": 0.01}


class ShockError(ValueError):
    pass


class ShockWarning(UserWarning):
    pass


def newey_west_cov(residuals, regressors, lag: int) -> np.ndarray:
    """HAC sandwich ``(X'X)^-1 S (X'X)^-1`` with Bartlett weights ``1 - l/(lag+1)``.

    No small-sample correction; ``lag=0`` is White's HC0.
    """
    u = np.asarray(residuals, dtype=float)
    X = np.asarray(regressors, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = u.shape[0]
    if lag < 0:
        raise ShockError("HAC lag must be nonnegative")
    if lag >= n:
        raise ShockError(f"HAC lag {lag} must be below the sample size {n}")
    scores = X * u[:, None]
    S = scores.T @ scores
    for ell in range(1, lag + 1):
        w = 1.0 - ell / (lag + 1.0)
        G = scores[ell:].T @ scores[:-ell]
        S += w * (G + G.T)
    bread = np.linalg.inv(X.T @ X)
    cov = bread @ S @ bread
    return 0.5 * (cov + cov.T)


@dataclass(frozen=True)
class OlsResult:
    params: np.ndarray
    cov: np.ndarray
    residuals: np.ndarray
    r_squared: float
    n: int

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


def _collinear_pair(X: np.ndarray, names: list[str]) -> tuple[str, str] | None:
    rank = np.linalg.matrix_rank(X)
    if rank == X.shape[1]:
        return None
    for i, j in itertools.combinations(range(X.shape[1]), 2):
        if np.linalg.matrix_rank(X[:, [i, j]]) < 2:
            return names[i], names[j]
    # dependence involves more than two columns: report the first column that
    # is spanned by its predecessors and the predecessor it leans on most
    for j in range(1, X.shape[1]):
        if np.linalg.matrix_rank(X[:, : j + 1]) <= j:
            coef, *_ = np.linalg.lstsq(X[:, :j], X[:, j], rcond=None)
            return names[int(np.argmax(np.abs(coef)))], names[j]
    return names[0], names[1]


def ols(y, X, names: list[str] | None = None, hac_lag: int = 0) -> OlsResult:
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    names = names or [f"x{i}" for i in range(X.shape[1])]
    pair = _collinear_pair(X, names)
    if pair is not None:
        raise ShockError(f"perfect multicollinearity between {pair[0]!r} and {pair[1]!r}")
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    sst = float(np.sum((y - y.mean()) ** 2))
    ssr = float(resid @ resid)
    r2 = 1.0 - ssr / sst if sst > 0 else 1.0
    cov = newey_west_cov(resid, X, hac_lag)
    return OlsResult(beta, cov, resid, min(max(r2, 0.0), 1.0), len(y))


@dataclass(frozen=True)
class TaylorColumns:
    """Variable names of the Taylor-rule inputs in the macro panel."""

    rate: str = "rate"
    output_forecast: str = "gdp_growth_forecast"
    inflation_forecast: str = "inflation_forecast"
    output: str = "gdp_growth"
    inflation: str = "inflation"
    reserves_change: str = "reserves_change"


COEF_NAMES = (
    "const",
    "output_forecast",
    "inflation_forecast",
    "output_lag",
    "inflation_lag",
    "reserves_change_lag",
    "rate_lag",
)


@dataclass(frozen=True)
class TaylorFit:
    country: str
    coefficients: Mapping[str, float]
    hac_ses: Mapping[str, float]
    hac_lag: int
    residuals: pd.Series
    rate_changes: pd.Series
    r_squared: float
    n: int

    def to_dict(self) -> dict:
        return {
            "country": self.country,
            "coefficients": dict(self.coefficients),
            "hac_se": dict(self.hac_ses),
            "hac_lag": self.hac_lag,
            "r_squared": self.r_squared,
            "n": self.n,
            "periods": [int(p) for p in self.residuals.index],
        }


def taylor_design(country_data: pd.DataFrame, columns: TaylorColumns | None = None, rate_scale: float = 1.0):
    """Dependent variable and regressors after lag construction and listwise deletion.

    Forecast columns at ``t`` are the one-year-ahead forecasts available at ``t``.
    """
    c = columns or TaylorColumns()
    df = country_data.sort_index()
    full = pd.RangeIndex(int(df.index.min()), int(df.index.max()) + 1)
    df = df.reindex(full)
    rate = df[c.rate] * rate_scale
    design = pd.DataFrame(
        {
            "d_rate": rate - rate.shift(1),
            "const": 1.0,
            "output_forecast": df[c.output_forecast],
            "inflation_forecast": df[c.inflation_forecast],
            "output_lag": df[c.output].shift(1),
            "inflation_lag": df[c.inflation].shift(1),
            "reserves_change_lag": df[c.reserves_change].shift(1),
            "rate_lag": rate.shift(1),
        },
        index=full,
    ).dropna()
    return design["d_rate"], design[list(COEF_NAMES)]


def fit_taylor(
    country: str,
    country_data: pd.DataFrame,
    hac_lag: int = 2,
    columns: TaylorColumns | None = None,
    rate_units: str = "percent",
) -> TaylorFit:
    """OLS of the amended Taylor rule with Newey-West standard errors."""
    try:
        scale = RATE_UNITS[rate_units]
    except KeyError:
        raise ShockError(f"unknown rate units {rate_units!r}") from None
    y, X = taylor_design(country_data, columns, scale)
    if len(y) < X.shape[1] + 1:
        raise ShockError(f"{country}: {len(y)} usable observations, need at least {X.shape[1] + 1}")
    res = ols(y.to_numpy(), X.to_numpy(), list(COEF_NAMES), hac_lag)
    se = res.se
    return TaylorFit(
        country=country,
        coefficients={k: float(v) for k, v in zip(COEF_NAMES, res.params)},
        hac_ses={k: float(v) for k, v in zip(COEF_NAMES, se)},
        hac_lag=hac_lag,
        residuals=pd.Series(res.residuals, index=y.index, name=country),
        rate_changes=y.rename(country),
        r_squared=res.r_squared,
        n=res.n,
    )


def standardize_shock(fit: TaylorFit, rate_changes: pd.Series | None = None) -> tuple[pd.Series, int]:
    """Signed standardised residuals ``z = s (u - mean) / sd`` with ``s = sign(corr(d_rate, u))``."""
    u = fit.residuals
    di = fit.rate_changes if rate_changes is None else rate_changes
    common = u.index.intersection(di.index)
    if len(common) < 3:
        raise ShockError(f"{fit.country}: residuals and rate changes share fewer than 3 periods")
    u = u.loc[common].astype(float)
    di = di.loc[common].astype(float)
    sd = float(u.std(ddof=1))
    if not sd > 0:
        raise ShockError(f"{fit.country}: residuals have zero standard deviation")
    corr = float(np.corrcoef(di.to_numpy(), u.to_numpy())[0, 1]) if di.std(ddof=1) > 0 else 0.0
    if corr > 0:
        sign = 1
    elif corr < 0:
        sign = -1
    else:
        warnings.warn(f"{fit.country}: zero correlation between rate changes and residuals; sign set to +1",
                      ShockWarning, stacklevel=2)
        sign = 1
    z = sign * (u - u.mean()) / sd
    return z.rename(fit.country), sign


def aggregate_shocks(per_country: Mapping[str, pd.Series], weights: Mapping[str, float] | None = None) -> pd.Series:
    """Weighted sum of country shocks on their common periods, re-standardised."""
    if not per_country:
        raise ShockError("no country shocks to aggregate")
    names = sorted(per_country)
    w = normalize_weights(names, weights)
    table = pd.concat([per_country[k].rename(k) for k in names], axis=1, join="inner").dropna()
    if table.empty:
        raise ShockError("country shock series share no periods")
    combo = sum(w[k] * table[k] for k in names)
    sd = float(combo.std(ddof=1)) if len(combo) > 1 else 0.0
    scale = float(np.max(np.abs(table.to_numpy())))
    if not sd > 1e-12 * max(scale, 1.0):
        raise ShockError("weighted shock sum has zero standard deviation")
    return ((combo - combo.mean()) / sd).rename("aggregate")


def normalize_weights(names, weights: Mapping[str, float] | None) -> dict[str, float]:
    if weights is None:
        return {k: 1.0 / len(names) for k in names}
    if set(weights) != set(names):
        raise ShockError("weights must name exactly the aggregated countries")
    raw = np.array([float(weights[k]) for k in names])
    if np.any(raw < 0) or not raw.sum() > 0:
        raise ShockError("weights must be nonnegative with a positive sum")
    raw = raw / raw.sum()
    return dict(zip(names, raw))


@dataclass(frozen=True)
class ShockSeries:
    per_country: Mapping[str, pd.Series]
    signs: Mapping[str, int]
    weights: Mapping[str, float]
    aggregate: pd.Series
    fits: Mapping[str, TaylorFit] = field(default_factory=dict)

    def frame(self) -> pd.DataFrame:
        out = pd.concat(
            [self.per_country[k].rename(f"z_{k}") for k in sorted(self.per_country)] + [self.aggregate], axis=1
        )
        out.index.name = "period"
        return out.sort_index()


def build_shock_series(
    country_frames: Mapping[str, pd.DataFrame],
    hac_lag: int = 2,
    weights: Mapping[str, float] | None = None,
    columns: TaylorColumns | None = None,
    rate_units: str = "percent",
) -> ShockSeries:
    fits = {k: fit_taylor(k, country_frames[k], hac_lag, columns, rate_units) for k in sorted(country_frames)}
    z, signs = {}, {}
    for k, f in fits.items():
        z[k], signs[k] = standardize_shock(f)
    w = normalize_weights(sorted(z), weights)
    return ShockSeries(z, signs, w, aggregate_shocks(z, w), fits)
