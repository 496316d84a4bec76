"""Experiment configuration: YAML schema (version 1), loading and validation.

Validation is total. Everything the pipeline touches (files, units,
variables, the disjoint-donor rule) is checked before any computation runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .localproj import LagRule, LpSpec, Trend
from .panel import AggregateRule, PanelDataset, Transform, ingest_csv
from .scm import PredictorSpec, ScmConfig, ScmError

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DerivedVariable:
    name: str
    source: str
    transform: Transform = Transform.NONE
    aggregate: AggregateRule = AggregateRule.MEAN
    population: str | None = None


@dataclass(frozen=True)
class RobustnessSpec:
    fake_periods: tuple[int, ...] = ()
    windows: tuple[tuple[int, int], ...] = ()


@dataclass(frozen=True)
class TransferSpec:
    source: str
    net_of: str
    target: str
    origin: int
    shares: tuple[float, ...] = (1.0, 0.5)
    scale: bool = True
    band_k: float = 3
    band_percentiles: tuple[float, float] = (5, 95)


@dataclass(frozen=True)
class ShockSpec:
    countries: tuple[str, ...]
    hac_lag: int = 2
    weights: dict[str, float] | None = None
    rate_units: str = "percent"
    columns: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentConfig:
    path: Path
    panel_path: Path
    macro_path: Path | None
    variables: tuple[DerivedVariable, ...]
    aggregates: dict[str, tuple[str, ...]]
    fits: tuple[ScmConfig, ...]
    k: float = 3
    k_values: tuple[float, ...] = (2, 3)
    robustness: dict[str, RobustnessSpec] = field(default_factory=dict)
    transfer: TransferSpec | None = None
    shocks: ShockSpec | None = None
    lp: LpSpec | None = None
    integrated_share: float = 1.0
    output_dir: Path | None = None

    def fit(self, name: str) -> ScmConfig:
        for f in self.fits:
            if f.name == name:
                return f
        raise ConfigError(f"no SCM fit named {name!r}")


def _req(d: dict, key: str, where: str) -> Any:
    if key not in d:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return d[key]


def _window(x, where: str) -> tuple[int, int]:
    if not isinstance(x, (list, tuple)) or len(x) != 2:
        raise ConfigError(f"{where}: window must be a [start, end] pair")
    return int(x[0]), int(x[1])


def parse_config(raw: dict, path: Path) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    if raw.get("version") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config version {raw.get('version')!r} (expected {SCHEMA_VERSION})")
    base = path.parent
    data = _req(raw, "data", "config")
    panel_path = base / _req(data, "panel", "data")
    macro_path = base / data["macro"] if data.get("macro") else None

    variables = []
    for i, v in enumerate(raw.get("variables") or []):
        where = f"variables[{i}]"
        try:
            variables.append(
                DerivedVariable(
                    name=_req(v, "name", where),
                    source=v.get("source", v["name"]),
                    transform=Transform(v.get("transform", "none")),
                    aggregate=AggregateRule(v.get("aggregate", "mean")),
                    population=v.get("population"),
                )
            )
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None
        if variables[-1].transform is Transform.PER_CAPITA_LOG and not variables[-1].population:
            raise ConfigError(f"{where}: per_capita_log needs a population variable")
        if variables[-1].aggregate is AggregateRule.WEIGHTED_MEAN:
            raise ConfigError(f"{where}: weighted_mean aggregation is not configurable per variable")

    aggregates = {}
    for name, members in (raw.get("aggregates") or {}).items():
        if not isinstance(members, list) or not members:
            raise ConfigError(f"aggregate {name!r}: constituents must be a non-empty list")
        if len(set(members)) != len(members):
            raise ConfigError(f"aggregate {name!r}: duplicate constituents")
        aggregates[str(name)] = tuple(str(m) for m in members)

    fits = []
    for i, f in enumerate(_req(raw, "scm", "config") or []):
        where = f"scm[{i}]"
        try:
            donors = tuple(_req(f, "donors", where))
            if len(donors) < 2:
                raise ConfigError(f"{where}: at least 2 donors required")
            fits.append(
                ScmConfig(
                    name=str(f.get("name", f.get("treated"))),
                    treated=str(_req(f, "treated", where)),
                    donors=donors,
                    outcome=str(_req(f, "outcome", where)),
                    pre_window=_window(_req(f, "pre_window", where), where),
                    treatment_period=int(_req(f, "treatment_period", where)),
                    predictors=tuple(
                        PredictorSpec(p["variable"], _window(p["window"], where)) for p in f.get("predictors") or []
                    ),
                    outcome_lags=tuple(f.get("outcome_lags") or ()),
                    post_windows=tuple(_window(w, where) for w in f.get("post_windows") or ()),
                )
            )
        except (ScmError, KeyError, TypeError) as exc:
            raise ConfigError(f"{where}: {exc}") from None
    names = [f.name for f in fits]
    if len(set(names)) != len(names):
        raise ConfigError("SCM fit names must be unique")

    rob = raw.get("robustness") or {}
    robustness = {}
    for name, spec in (rob.get("fits") or {}).items():
        spec = spec or {}
        robustness[str(name)] = RobustnessSpec(
            fake_periods=tuple(int(x) for x in spec.get("fake_periods") or ()),
            windows=tuple(_window(w, f"robustness.{name}") for w in spec.get("windows") or ()),
        )

    transfer = None
    if raw.get("transfer"):
        t = raw["transfer"]
        band = t.get("band") or {}
        transfer = TransferSpec(
            source=str(_req(t, "source", "transfer")),
            net_of=str(_req(t, "net_of", "transfer")),
            target=str(_req(t, "target", "transfer")),
            origin=int(_req(t, "origin", "transfer")),
            shares=tuple(float(s) for s in t.get("shares", (1.0, 0.5))),
            scale=bool(t.get("scale", True)),
            band_k=float(band.get("k", rob.get("k", 3))),
            band_percentiles=tuple(float(p) for p in band.get("percentiles", (5, 95))),
        )
        if any(not 0 <= s <= 1 for s in transfer.shares):
            raise ConfigError("transfer.shares must lie in [0, 1]")

    shocks = None
    if raw.get("shocks"):
        s = raw["shocks"]
        shocks = ShockSpec(
            countries=tuple(str(c) for c in _req(s, "countries", "shocks")),
            hac_lag=int(s.get("hac_lag", 2)),
            weights=s.get("weights"),
            rate_units=str(s.get("rate_units", "percent")),
            columns=dict(s.get("columns") or {}),
        )

    lp = None
    integrated_share = 1.0
    if raw.get("lp"):
        l = raw["lp"]
        rule = str(l.get("hac_lag_rule", "horizon"))
        fixed = 2
        if rule.startswith("fixed"):
            fixed = int(rule.split(":")[1]) if ":" in rule else int(l.get("hac_lag", 2))
            rule = "fixed"
        try:
            lp = LpSpec(
                horizons=tuple(_req(l, "horizons", "lp")),
                controls=tuple(l.get("controls") or ()),
                trend=Trend(l.get("trend", "none")),
                lag_rule=LagRule(rule),
                fixed_lag=fixed,
                confidence=float(l.get("confidence", 0.90)),
            )
        except ValueError as exc:
            raise ConfigError(f"lp: {exc}") from None
        integrated_share = float(l.get("integrated_share", 1.0))

    return ExperimentConfig(
        path=path,
        panel_path=panel_path,
        macro_path=macro_path,
        variables=tuple(variables),
        aggregates=aggregates,
        fits=tuple(fits),
        k=float(rob.get("k", 3)),
        k_values=tuple(float(k) for k in rob.get("k_values", (2, 3))),
        robustness=robustness,
        transfer=transfer,
        shocks=shocks,
        lp=lp,
        integrated_share=integrated_share,
        output_dir=(base / raw["output_dir"]) if raw.get("output_dir") else None,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(raw, path)


def validate(cfg: ExperimentConfig) -> tuple[PanelDataset, PanelDataset | None]:
    """Check every reference against the data; returns the ingested panels."""
    for p in (cfg.panel_path, cfg.macro_path):
        if p is not None and not p.exists():
            raise ConfigError(f"data file {p} not found")
    panel = ingest_csv(cfg.panel_path)
    macro = ingest_csv(cfg.macro_path) if cfg.macro_path is not None else None
    raw_units = set(panel.units)
    raw_vars = set(panel.variables)
    derived = {v.name: v for v in cfg.variables}
    known_units = raw_units | set(cfg.aggregates)
    for agg, members in cfg.aggregates.items():
        if agg in raw_units:
            raise ConfigError(f"aggregate name {agg!r} collides with a unit in the panel")
        missing = [m for m in members if m not in raw_units]
        if missing:
            raise ConfigError(f"aggregate {agg!r}: unknown units {missing}")
    for v in cfg.variables:
        for src in filter(None, (v.source, v.population)):
            if src not in raw_vars:
                raise ConfigError(f"variable {v.name!r}: source {src!r} not in panel")

    def check_var(unit: str, var: str, where: str) -> None:
        units = cfg.aggregates.get(unit, (unit,))
        if var in derived:
            d = derived[var]
            need = [d.source] + ([d.population] if d.population else [])
        else:
            if unit in cfg.aggregates:
                raise ConfigError(f"{where}: {var!r} must be a declared variable to aggregate {unit!r}")
            need = [var]
        for u in units:
            for n in need:
                if not panel.has(u, n):
                    raise ConfigError(f"{where}: unit {u!r} has no {n!r} data")

    for f in cfg.fits:
        where = f"scm {f.name!r}"
        for u in (f.treated, *f.donors):
            if u not in known_units:
                raise ConfigError(f"{where}: unknown unit {u!r}")
            check_var(u, f.outcome, where)
            for p in f.predictors:
                check_var(u, p.variable, where)
    fit_names = {f.name for f in cfg.fits}
    for name, spec in cfg.robustness.items():
        if name not in fit_names:
            raise ConfigError(f"robustness: unknown fit {name!r}")
        f = cfg.fit(name)
        for w in spec.windows:
            if w[0] != f.treatment_period:
                raise ConfigError(f"robustness {name!r}: window {w} must start at {f.treatment_period}")
        for fake in spec.fake_periods:
            if not f.pre_window[0] < fake < f.treatment_period:
                raise ConfigError(f"robustness {name!r}: fake period {fake} outside the pre-window")
    if cfg.transfer is not None:
        t = cfg.transfer
        for n in (t.source, t.net_of, t.target):
            if n not in fit_names:
                raise ConfigError(f"transfer: unknown fit {n!r}")
        target = cfg.fit(t.target).treated
        target_units = {target, *cfg.aggregates.get(target, ())}
        for n in (t.source, t.net_of):
            clash = sorted(target_units & set(cfg.fit(n).donors))
            if clash:
                raise ConfigError(
                    f"disjoint-donor rule for transfer: target units {clash} are in the donor pool of {n!r}"
                )
    if cfg.shocks is not None:
        if macro is None:
            raise ConfigError("shocks configured but data.macro is missing")
        from .shocks import RATE_UNITS, TaylorColumns

        cols = TaylorColumns(**cfg.shocks.columns)
        if cfg.shocks.rate_units not in RATE_UNITS:
            raise ConfigError(f"shocks: unknown rate units {cfg.shocks.rate_units!r}")
        for c in cfg.shocks.countries:
            for var in vars(cols).values():
                if not macro.has(c, var):
                    raise ConfigError(f"shocks: country {c!r} has no {var!r} in the macro panel")
        if cfg.shocks.weights is not None and set(cfg.shocks.weights) != set(cfg.shocks.countries):
            raise ConfigError("shocks.weights must name exactly the shock countries")
        if macro.frequency != panel.frequency:
            raise ConfigError("macro and panel data must share one frequency")
    if cfg.lp is not None:
        if cfg.shocks is None or cfg.transfer is None:
            raise ConfigError("lp requires shocks and transfer sections")
        for c in cfg.shocks.countries:
            for v in cfg.lp.controls:
                if not macro.has(c, v):
                    raise ConfigError(f"lp: control {v!r} missing for {c!r}")
        if not 0 <= cfg.integrated_share <= 1:
            raise ConfigError("lp.integrated_share must lie in [0, 1]")
    return panel, macro
