"""Long-format panel data: CSV ingestion, transforms and aggregate units.

Periods are plain integers. Annual panels use the calendar year; monthly
panels use ``year * 12 + month``.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

LOGGER = logging.getLogger(__name__)

ANNUAL = "annual"
MONTHLY = "monthly"


class PanelError(ValueError):
    """Raised for malformed or incomplete panel data."""


class Transform(str, enum.Enum):
    NONE = "none"
    LOG = "log"
    PER_CAPITA_LOG = "per_capita_log"


class AggregateRule(str, enum.Enum):
    SUM_THEN_LOG = "sum_then_log"
    MEAN = "mean"
    WEIGHTED_MEAN = "weighted_mean"


@dataclass(frozen=True)
class VariableSpec:
    name: str
    transform: Transform = Transform.NONE
    units: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "transform", Transform(self.transform))


@dataclass(frozen=True)
class AggregateSpec:
    name: str
    constituents: tuple[str, ...]
    rule: AggregateRule = AggregateRule.SUM_THEN_LOG
    weights: Mapping[str, float] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "constituents", tuple(self.constituents))
        object.__setattr__(self, "rule", AggregateRule(self.rule))
        if not self.constituents:
            raise PanelError(f"aggregate {self.name!r} has no constituents")
        if len(set(self.constituents)) != len(self.constituents):
            raise PanelError(f"aggregate {self.name!r} has duplicate constituents")
        if self.rule is AggregateRule.WEIGHTED_MEAN:
            if self.weights is None:
                raise PanelError(f"aggregate {self.name!r}: WEIGHTED_MEAN needs weights")
            if set(self.weights) != set(self.constituents):
                raise PanelError(f"aggregate {self.name!r}: weights must cover exactly the constituents")
            w = np.array([self.weights[c] for c in self.constituents], dtype=float)
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise PanelError(f"aggregate {self.name!r}: weights must be nonnegative and sum to 1")


@dataclass(frozen=True)
class CsvSchema:
    """Column names used when reading a long-format CSV."""

    unit: str = "unit"
    period: str = "period"
    variable: str = "variable"
    value: str = "value"


@dataclass(frozen=True)
class IngestReport:
    rows_read: int
    rows_dropped: int


def parse_period(text: str) -> tuple[int, str]:
    """Parse ``2004`` (annual) or ``2004-07`` (monthly) into ``(index, frequency)``."""
    text = text.strip()
    if len(text) == 4 and text.isdigit():
        return int(text), ANNUAL
    parts = text.split("-")
    if len(parts) == 2 and len(parts[0]) == 4 and parts[0].isdigit() and parts[1].isdigit():
        month = int(parts[1])
        if 1 <= month <= 12:
            return int(parts[0]) * 12 + month, MONTHLY
    raise PanelError(f"unparseable period {text!r}")


def format_period(period: int, frequency: str) -> str:
    if frequency == MONTHLY:
        year, month = divmod(period - 1, 12)
        return f"{year:04d}-{month + 1:02d}"
    return f"{period:04d}"


@dataclass(frozen=True)
class PanelDataset:
    """Immutable long-format panel of ``(unit, period, variable) -> value``."""

    frame: pd.DataFrame
    frequency: str = ANNUAL
    report: IngestReport | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        frame = self.frame.loc[:, ["unit", "period", "variable", "value"]].copy()
        frame["unit"] = frame["unit"].astype(str)
        frame["variable"] = frame["variable"].astype(str)
        frame["period"] = frame["period"].astype(np.int64)
        frame["value"] = frame["value"].astype(float)
        if frame.duplicated(["unit", "period", "variable"]).any():
            dup = frame[frame.duplicated(["unit", "period", "variable"], keep=False)].iloc[0]
            raise PanelError(f"duplicate observation for ({dup.unit}, {dup.period}, {dup.variable})")
        frame = frame.sort_values(["unit", "variable", "period"], kind="mergesort").reset_index(drop=True)
        object.__setattr__(self, "frame", frame)
        if self.frequency not in (ANNUAL, MONTHLY):
            raise PanelError(f"unknown frequency {self.frequency!r}")

    @classmethod
    def from_records(
        cls, records: Iterable[tuple[str, int, str, float]], frequency: str = ANNUAL
    ) -> "PanelDataset":
        frame = pd.DataFrame(list(records), columns=["unit", "period", "variable", "value"])
        return cls(frame, frequency)

    @cached_property
    def _lookup(self) -> dict[tuple[str, str], pd.Series]:
        out = {}
        for (unit, var), grp in self.frame.groupby(["unit", "variable"], sort=True):
            out[(unit, var)] = pd.Series(grp["value"].to_numpy(), index=grp["period"].to_numpy(), name=unit)
        return out

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def units(self) -> list[str]:
        return sorted(self.frame["unit"].unique())

    @property
    def variables(self) -> list[str]:
        return sorted(self.frame["variable"].unique())

    def has(self, unit: str, variable: str) -> bool:
        return (unit, variable) in self._lookup

    def series(self, unit: str, variable: str) -> pd.Series:
        try:
            return self._lookup[(unit, variable)].copy()
        except KeyError:
            raise PanelError(f"no observations for unit {unit!r}, variable {variable!r}") from None

    def value(self, unit: str, period: int, variable: str) -> float:
        s = self.series(unit, variable)
        if period not in s.index:
            raise PanelError(f"missing value for ({unit}, {period}, {variable})")
        return float(s.loc[period])

    def wide(self, variable: str, units: Sequence[str]) -> pd.DataFrame:
        """Periods x units table; absent cells are NaN."""
        return pd.concat([self.series(u, variable).rename(u) for u in units], axis=1).sort_index()

    def with_series(self, unit: str, variable: str, series: pd.Series) -> "PanelDataset":
        """Return a new dataset with ``series`` added (replacing any existing values)."""
        keep = ~((self.frame["unit"] == unit) & (self.frame["variable"] == variable))
        extra = pd.DataFrame(
            {"unit": unit, "period": series.index.astype(np.int64), "variable": variable, "value": series.to_numpy(float)}
        )
        return PanelDataset(pd.concat([self.frame[keep], extra], ignore_index=True), self.frequency)


def ingest_csv(path: str | Path, schema: CsvSchema | None = None) -> PanelDataset:
    """Read a long-format CSV into a :class:`PanelDataset`.

    Exact duplicate rows are dropped; duplicates with conflicting values,
    unparseable numbers and mixed annual/monthly periods are errors.
    """
    schema = schema or CsvSchema()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    seen: dict[tuple[str, int, str], float] = {}
    frequency = None
    rows_read = 0
    dropped = 0
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        for col in (schema.unit, schema.period, schema.variable, schema.value):
            if col not in cols:
                raise PanelError(f"{path}: missing column {col!r}")
        for row in reader:
            rows_read += 1
            line = reader.line_num
            try:
                period, freq = parse_period(row[schema.period])
            except PanelError as exc:
                raise PanelError(f"{path}:{line}: {exc}") from None
            if frequency is None:
                frequency = freq
            elif freq != frequency:
                raise PanelError(f"{path}:{line}: mixed frequency ({frequency} and {freq})")
            raw = row[schema.value].strip()
            try:
                value = float(raw)
            except ValueError:
                raise PanelError(f"{path}:{line}: unparseable value {raw!r}") from None
            if not math.isfinite(value):
                raise PanelError(f"{path}:{line}: non-finite value {raw!r}")
            key = (row[schema.unit].strip(), period, row[schema.variable].strip())
            if key in seen:
                if seen[key] != value:
                    raise PanelError(
                        f"{path}:{line}: conflicting values for ({key[0]}, {row[schema.period].strip()}, {key[2]}): "
                        f"{seen[key]!r} vs {value!r}"
                    )
                dropped += 1
                continue
            seen[key] = value
    report = IngestReport(rows_read=rows_read, rows_dropped=dropped)
    LOGGER.info("read %d rows from %s (%d duplicates dropped)", rows_read, path, dropped)
    frame = pd.DataFrame([(u, p, v, x) for (u, p, v), x in seen.items()], columns=["unit", "period", "variable", "value"])
    return PanelDataset(frame, frequency or ANNUAL, report)


def apply_transform(
    series: pd.Series, transform: Transform | str, population: pd.Series | None = None
) -> pd.Series:
    """Elementwise transform. ``PER_CAPITA_LOG`` needs an aligned ``population`` series."""
    transform = Transform(transform)
    if transform is Transform.NONE:
        return series.copy()
    values = series.astype(float)
    if transform is Transform.PER_CAPITA_LOG:
        if population is None:
            raise PanelError("PER_CAPITA_LOG requires a population series")
        missing = series.index.difference(population.index)
        if len(missing):
            raise PanelError(f"population missing at period {missing[0]}")
        pop = population.loc[series.index].astype(float)
        bad = pop[pop <= 0]
        if len(bad):
            raise PanelError(f"nonpositive population at period {bad.index[0]}")
        values = values / pop
    bad = values[~(values > 0)]
    if len(bad):
        raise PanelError(f"log of nonpositive value {bad.iloc[0]!r} at period {bad.index[0]}")
    return np.log(values)


def build_aggregate(
    dataset: PanelDataset,
    spec: AggregateSpec,
    variable: VariableSpec | str,
    periods: Sequence[int] | None = None,
) -> pd.Series:
    """Combine constituent series into one aggregate series.

    SUM_THEN_LOG returns ``ln(sum_k x_kt)`` and ignores the variable's own
    transform; MEAN and WEIGHTED_MEAN average the raw values and then apply
    the variable's transform. Without ``periods`` the result covers exactly
    the periods where every constituent is observed; with ``periods`` any
    missing constituent value is an error.
    """
    if isinstance(variable, str):
        variable = VariableSpec(variable)
    table = dataset.wide(variable.name, spec.constituents) if all(
        dataset.has(u, variable.name) for u in spec.constituents
    ) else None
    if table is None:
        absent = [u for u in spec.constituents if not dataset.has(u, variable.name)]
        raise PanelError(f"aggregate {spec.name!r}: no {variable.name!r} data for {absent}")
    if periods is not None:
        table = table.reindex(list(periods))
        missing = [(u, int(p)) for p in table.index for u in spec.constituents if pd.isna(table.at[p, u])]
        if missing:
            raise PanelError(f"aggregate {spec.name!r}: missing {variable.name!r} at {missing}")
    else:
        table = table.dropna()
        if table.empty:
            raise PanelError(f"aggregate {spec.name!r}: constituents share no {variable.name!r} periods")

    if spec.rule is AggregateRule.SUM_THEN_LOG:
        # sorted columns keep the sum order-independent
        total = table[sorted(spec.constituents)].sum(axis=1)
        bad = total[~(total > 0)]
        if len(bad):
            raise PanelError(f"aggregate {spec.name!r}: nonpositive sum at period {bad.index[0]}")
        out = np.log(total)
    else:
        if spec.rule is AggregateRule.MEAN:
            out = table[sorted(spec.constituents)].mean(axis=1)
        else:
            w = pd.Series(spec.weights, dtype=float)
            out = (table[sorted(spec.constituents)] * w[sorted(spec.constituents)]).sum(axis=1)
        out = apply_transform(out, variable.transform)
    out.name = spec.name
    out.index = out.index.astype(np.int64)
    return out
