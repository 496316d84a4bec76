"""Command-line entry point: ``scmtransmit {validate,run,stage1,stage2,report,fixture}``."""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import warnings
from pathlib import Path

from . import output
from .config import ConfigError, ExperimentConfig, load_config, validate
from .fixtures import bundled_config_path, write_bundled_fixture
from .panel import PanelError

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INVALID = 2

MANAGED = ("stage1", "stage2", "report.md", output.MANIFEST)


def _prepare_out(out: Path, keep_stage1: bool = False) -> None:
    """Clear files from a previous run; refuse to write into unrelated content."""
    if out.exists():
        if not out.is_dir():
            raise ConfigError(f"output path {out} is not a directory")
        foreign = [p.name for p in out.iterdir() if p.name not in MANAGED]
        if foreign:
            raise ConfigError(f"output directory {out} contains unrelated files: {sorted(foreign)[:5]}")
        for name in MANAGED:
            if keep_stage1 and name == "stage1":
                continue
            p = out / name
            if p.is_dir():
                shutil.rmtree(p)
            elif p.exists():
                p.unlink()
    out.mkdir(parents=True, exist_ok=True)


def _load(args) -> tuple[ExperimentConfig, object, object]:
    cfg = load_config(args.config or bundled_config_path())
    panel, macro = validate(cfg)
    return cfg, panel, macro


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    if args.out:
        return Path(args.out)
    if cfg.output_dir is not None:
        return cfg.output_dir
    raise ConfigError("no output directory: pass --out or set output_dir in the config")


def _stage1(cfg, panel, out: Path, workers: int) -> tuple[object, dict[str, str]]:
    from .pipeline import run_stage1

    res = run_stage1(cfg, panel, workers=workers)
    failures = {f"stage1:{k}": v for k, v in res.failures.items()}
    try:
        output.emit_tables(stage1=res, out=out)
        output.emit_plot_data(stage1=res, out=out)
    except output.OutputError:
        raise
    except Exception as exc:
        failures["stage1:emit"] = f"{type(exc).__name__}: {exc}"
    share = cfg.integrated_share if cfg.lp is not None else 1.0
    output.write_json(out / "stage1" / "state.json", output.stage1_state(res, share))
    return res, failures


def _stage2(cfg, macro, out: Path) -> dict[str, str]:
    from .pipeline import run_stage2

    if cfg.shocks is None or cfg.lp is None:
        return {}
    state_path = out / "stage1" / "state.json"
    if not state_path.exists():
        return {"stage2": f"{state_path} not found; run stage1 first"}
    state = json.loads(state_path.read_text(encoding="utf-8"))
    tr = state.get("transfer")
    if not tr:
        return {"stage2": "stage 1 produced no transfer path; stage 2 skipped"}
    try:
        res = run_stage2(
            cfg,
            macro,
            output.series_from_dict(tr["baseline"]),
            output.series_from_dict(tr["simulated"]),
            output.series_from_dict(tr["sim_gap"]),
        )
    except Exception as exc:
        LOGGER.error("stage 2 failed: %s", exc)
        return {"stage2": f"{type(exc).__name__}: {exc}"}
    output.emit_tables(stage2=res, out=out)
    output.emit_plot_data(stage2=res, out=out)
    summary = {
        "delta_beta": {str(h): vars(e) for h, e in sorted(res.d_beta.per_horizon.items())},
        "delta_g": {str(h): vars(e) for h, e in sorted(res.d_g.per_horizon.items())},
        "notes": list(res.notes) + list(res.d_g.notes),
    }
    output.write_json(out / "stage2" / "state.json", summary)
    return {}


def _previous_failures(out: Path) -> dict[str, str]:
    m = out / output.MANIFEST
    if not m.exists():
        return {}
    return {k: v for k, v in json.loads(m.read_text(encoding="utf-8")).get("failures", {}).items()
            if k.startswith("stage1")}


def write_report(out: Path) -> Path:
    """Human-readable summary assembled from the stage state files."""
    lines = ["# Run report", ""]
    s1 = out / "stage1" / "state.json"
    if s1.exists():
        state = json.loads(s1.read_text(encoding="utf-8"))
        for name, fit in sorted(state["fits"].items()):
            d = fit["diagnostics"]
            lines.append(f"## {name} (treated {fit['treated']}, treatment {fit['treatment_period']})")
            lines.append("")
            lines.append("| donor | weight |")
            lines.append("|---|---|")
            for k, v in sorted(fit["donor_weights"].items()):
                lines.append(f"| {k} | {v:.4f} |")
            lines.append("")
            lines.append(f"pre-RMSPE {d['pre_rmspe']:.4f}")
            for w in sorted(d["post_rmspe"]):
                lines.append(f"- {w}: post-RMSPE {d['post_rmspe'][w]:.4f}, ratio {d['ratio'][w]:.4f}")
            lines.append("")
            lines += [f"Note: {n}" for n in state.get("battery_notes", {}).get(name, [])]
            lines.append("")
        tr = state.get("transfer")
        if tr:
            gap = tr["sim_gap"]["value"]
            lines.append(f"## Transfer scenario for {tr['target']} (share {tr['share']:g})")
            lines.append("")
            lines.append(f"scale factor {tr['scale_factor']:.4f}; peak simulated gap {max(gap):.4f}")
            lines.append("These paths are scenarios, not causal estimates for the target.")
            lines += [f"Note: {n}" for n in tr.get("notes", [])[1:]]
            lines.append("")
        if state.get("failures"):
            lines.append("## Stage 1 failures")
            lines += [f"- {k}: {v}" for k, v in sorted(state["failures"].items())]
            lines.append("")
    s2 = out / "stage2" / "state.json"
    if s2.exists():
        state = json.loads(s2.read_text(encoding="utf-8"))
        lines.append("## Differential integration sensitivity")
        lines.append("")
        lines.append("| h | delta_g | se | delta_beta | se |")
        lines.append("|---|---|---|---|---|")
        for h in sorted(state["delta_g"], key=int):
            g, b = state["delta_g"][h], state["delta_beta"][h]
            lines.append(f"| {h} | {g['value']:.4f} | {g['se']:.4f} | {b['value']:.4f} | {b['se']:.4f} |")
        lines.append("")
        lines += [f"Note: {n}" for n in state["notes"]]
        lines.append("")
    path = out / "report.md"
    path.write_text("\n".join(lines), encoding="utf-8")
    return path


def _finish(out: Path, failures: dict[str, str], stages) -> int:
    write_report(out)
    output.write_manifest(out, failures, stages)
    if failures:
        for k, v in sorted(failures.items()):
            LOGGER.error("%s: %s", k, v)
        return EXIT_FAILED
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg, panel, macro = _load(args)
    print(f"config OK: {len(cfg.fits)} SCM fits, panel {len(panel)} rows"
          + (f", macro {len(macro)} rows" if macro is not None else ""))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg, panel, macro = _load(args)
    out = _out_dir(args, cfg)
    _prepare_out(out)
    _, failures = _stage1(cfg, panel, out, args.workers)
    failures.update(_stage2(cfg, macro, out))
    return _finish(out, failures, ["stage1", "stage2"])


def cmd_stage1(args) -> int:
    cfg, panel, _ = _load(args)
    out = _out_dir(args, cfg)
    _prepare_out(out)
    _, failures = _stage1(cfg, panel, out, args.workers)
    return _finish(out, failures, ["stage1"])


def cmd_stage2(args) -> int:
    cfg, _, macro = _load(args)
    out = _out_dir(args, cfg)
    if not (out / "stage1" / "state.json").exists():
        raise ConfigError(f"{out} holds no stage 1 state; run stage1 first")
    failures = _previous_failures(out)
    _prepare_out(out, keep_stage1=True)
    failures.update(_stage2(cfg, macro, out))
    return _finish(out, failures, ["stage1", "stage2"])


def cmd_report(args) -> int:
    out = Path(args.out) if args.out else _out_dir(args, load_config(args.config or bundled_config_path()))
    if not (out / "stage1" / "state.json").exists():
        raise ConfigError(f"{out} holds no pipeline results")
    manifest = out / output.MANIFEST
    prev = json.loads(manifest.read_text(encoding="utf-8")) if manifest.exists() else {}
    path = write_report(out)
    output.write_manifest(out, prev.get("failures", {}), prev.get("stages", []))
    print(path.read_text(encoding="utf-8"))
    return EXIT_OK


def cmd_fixture(args) -> int:
    if not args.out:
        raise ConfigError("fixture needs --out")
    cfg = write_bundled_fixture(Path(args.out), seed=args.seed)
    print(cfg)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scmtransmit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="verb", required=True)
    verbs = {
        "validate": (cmd_validate, "check the config against the data without computing"),
        "run": (cmd_run, "run both stages and write the report bundle"),
        "stage1": (cmd_stage1, "synthetic-control fits, robustness battery and transfer"),
        "stage2": (cmd_stage2, "shocks and local projections from saved stage 1 results"),
        "report": (cmd_report, "rebuild report.md and the manifest from saved results"),
        "fixture": (cmd_fixture, "write the synthetic fixture (panel, macro, config)"),
    }
    for name, (fn, help_) in verbs.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="experiment config (YAML); defaults to the bundled fixture")
        p.add_argument("--out", help="output directory")
        p.add_argument("--workers", type=int, default=1, help="worker processes for placebo refits")
        p.add_argument("--seed", type=int, default=7, help="fixture generation seed (never used by estimation)")
        p.set_defaults(func=fn)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore")
            return args.func(args)
    except (ConfigError, PanelError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except output.OutputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
