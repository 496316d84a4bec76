"""Effect-transfer scenarios: net gaps, relative-time profiles, scale
harmonisation, simulated with-integration paths and placebo bands.

Transfer outputs are scenarios, never causal estimates for the target; every
:class:`SimulatedPath` carries ``scenario=True``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .inference import PlaceboRun
from .scm import ScmFit

LOGGER = logging.getLogger(__name__)


class TransferError(ValueError):
    pass


class DisjointDonorError(TransferError):
    """A transfer target (or a constituent) sits in a source donor pool."""


class TransferWarning(UserWarning):
    pass


@dataclass(frozen=True)
class EffectProfile:
    origin_period: int
    deltas: Mapping[int, float]
    scaled: bool = False
    scale_factor: float = 1.0
    source_donors: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        keys = sorted(self.deltas)
        if keys != list(range(len(keys))):
            raise TransferError("profile keys must be consecutive from 0")
        if not self.scaled and self.scale_factor != 1.0:
            raise TransferError("unscaled profile must have scale_factor 1")

    @property
    def horizon(self) -> int:
        return len(self.deltas) - 1

    def as_series(self) -> pd.Series:
        return pd.Series({r: self.deltas[r] for r in sorted(self.deltas)}, dtype=float, name="delta")


@dataclass(frozen=True)
class SimulatedPath:
    baseline: pd.Series
    share: float
    simulated: pd.Series
    sim_gap: pd.Series
    origin: int
    band_lo: pd.Series | None = None
    band_hi: pd.Series | None = None
    scenario: bool = True

    def frame(self) -> pd.DataFrame:
        out = pd.DataFrame(
            {"baseline": self.baseline, "simulated": self.simulated, "sim_gap": self.sim_gap}
        )
        out["band_lo"] = self.band_lo.reindex(out.index) if self.band_lo is not None else np.nan
        out["band_hi"] = self.band_hi.reindex(out.index) if self.band_hi is not None else np.nan
        out.index.name = "period"
        return out


def enforce_disjoint_donors(source_donors: Iterable[str], target_units: Iterable[str]) -> None:
    """Raise if any target unit is in a donor pool used to build the profile."""
    clash = sorted(set(source_donors) & set(target_units))
    if clash:
        raise DisjointDonorError(
            f"disjoint-donor rule violated: transfer target units {clash} appear in a source donor pool"
        )


def net_gap(gap_a: pd.Series, gap_b: pd.Series, from_period: int | None = None) -> pd.Series:
    """``gap_a - gap_b`` on their common periods (from ``from_period`` on, if given)."""
    common = gap_a.index.intersection(gap_b.index)
    if from_period is not None:
        common = common[common >= from_period]
    if len(common) == 0:
        raise TransferError("gap series do not overlap")
    common = common.sort_values()
    return (gap_a.loc[common] - gap_b.loc[common]).rename("net_gap")


def build_profile(net: pd.Series, origin: int, source_donors: Iterable[str] = ()) -> EffectProfile:
    """Re-index ``net`` to relative time ``r = t - origin``; stops at the first missing period."""
    if origin not in net.index or pd.isna(net.loc[origin]):
        raise TransferError(f"net series not defined at origin {origin}")
    deltas = {}
    r = 0
    while origin + r in net.index and not pd.isna(net.loc[origin + r]):
        deltas[r] = float(net.loc[origin + r])
        r += 1
    later = net.index[(net.index > origin + r - 1)]
    if len(later):
        warnings.warn(
            f"net series has a hole at {origin + r}; profile truncated at r={r - 1}", TransferWarning, stacklevel=2
        )
    return EffectProfile(origin, deltas, source_donors=frozenset(source_donors))


def profile_from_fits(
    fit_a: ScmFit, fit_b: ScmFit, origin: int | None = None, target_units: Iterable[str] = ()
) -> EffectProfile:
    """Net profile of ``fit_a`` minus ``fit_b``, checking the disjoint-donor rule."""
    donors = set(fit_a.donors) | set(fit_b.donors)
    enforce_disjoint_donors(donors, target_units)
    origin = fit_a.config.treatment_period if origin is None else origin
    return build_profile(net_gap(fit_a.gap, fit_b.gap, origin), origin, donors)


def harmonize_scale(profile: EffectProfile, target_pre_gaps: pd.Series, source_pre_net: pd.Series) -> EffectProfile:
    """Multiply every delta by ``sd(target pre gaps) / sd(source pre net)`` (sample sds)."""
    if len(target_pre_gaps) < 2 or len(source_pre_net) < 2:
        raise TransferError("scale harmonisation needs at least 2 pre-period points on each side")
    sd_t = float(np.std(np.asarray(target_pre_gaps, dtype=float), ddof=1))
    sd_s = float(np.std(np.asarray(source_pre_net, dtype=float), ddof=1))
    if not sd_s > 0:
        raise TransferError("source pre-period net series has zero standard deviation")
    factor = sd_t / sd_s
    scaled = {r: d * factor for r, d in profile.deltas.items()}
    return replace(profile, deltas=scaled, scaled=True, scale_factor=profile.scale_factor * factor)


def simulate_path(
    baseline: ScmFit | pd.Series,
    profile: EffectProfile,
    s: float,
    origin: int,
    target_units: Iterable[str] = (),
) -> SimulatedPath:
    """Baseline plus ``s * delta_(t - origin)`` from ``origin`` on.

    Periods past the end of the profile are dropped with a warning.
    """
    if not 0.0 <= s <= 1.0:
        raise TransferError(f"transfer share {s} outside [0, 1]")
    enforce_disjoint_donors(profile.source_donors, target_units)
    base = baseline.synthetic if isinstance(baseline, ScmFit) else baseline
    base = base.sort_index().astype(float)
    if origin not in base.index:
        raise TransferError(f"baseline not defined at origin {origin}")
    last = origin + profile.horizon
    if base.index.max() > last:
        warnings.warn(
            f"effect profile ends at r={profile.horizon}; simulated path truncated at {last}",
            TransferWarning,
            stacklevel=2,
        )
        base = base.loc[:last]
    rel = base.index.to_numpy() - origin
    gap = np.zeros(len(base))
    for i, r in enumerate(rel):
        if r >= 0:
            gap[i] = s * profile.deltas[int(r)]
    sim_gap = pd.Series(gap, index=base.index, name="sim_gap")
    simulated = base.copy()
    post = rel >= 0
    simulated[post] = base[post] + sim_gap[post]
    return SimulatedPath(base.rename("baseline"), float(s), simulated.rename("simulated"), sim_gap, origin)


def placebo_band(
    runs: Sequence[PlaceboRun],
    baseline: pd.Series,
    origin: int,
    percentiles: tuple[float, float] = (5, 95),
) -> tuple[pd.Series, pd.Series]:
    """Percentile band of placebo gaps in relative time, added to ``baseline``.

    Each run's gaps are aligned on its own treatment period; the band at
    target period ``t`` uses the placebo gaps at ``r = t - origin``.
    Percentiles interpolate linearly between order statistics.
    """
    good = [r for r in runs if r.fit is not None]
    if len(good) < 2:
        raise TransferError("placebo band needs at least 2 admissible runs")
    lo_p, hi_p = percentiles
    if not 0 <= lo_p <= hi_p <= 100:
        raise TransferError(f"bad percentiles {percentiles}")
    rel = []
    for r in good:
        g = r.fit.gap
        t0 = r.fit.config.treatment_period
        rel.append(pd.Series(g.to_numpy(float), index=g.index - t0))
    table = pd.concat(rel, axis=1).dropna()
    base = baseline.sort_index()
    r_target = base.index - origin
    lo, hi = {}, {}
    for t, r in zip(base.index, r_target):
        if r in table.index:
            vals = table.loc[r].to_numpy(float)
            lo[t] = base.loc[t] + float(np.percentile(vals, lo_p))
            hi[t] = base.loc[t] + float(np.percentile(vals, hi_p))
    return pd.Series(lo, dtype=float, name="band_lo"), pd.Series(hi, dtype=float, name="band_hi")
