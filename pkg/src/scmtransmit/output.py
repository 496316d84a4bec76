"""Writers for tables, plot data, stage state and the run manifest.

Tables render numbers with 4 decimals and have a JSON mirror; plot data keep
full float precision. Nothing here embeds timestamps or absolute paths, so
identical results give byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import pandas as pd

from .inference import Battery
from .scm import ScmFit, short_label, window_label

LOGGER = logging.getLogger(__name__)

TABLE_DECIMALS = 4
MANIFEST = "manifest.json"

PLACEBO_TIME_COLUMNS = ["fake", "pre_window", "preR", "error"]
LOO_COLUMNS = ["dropped_donor", "preR", "error"]
WINDOW_COLUMNS = ["window", "preR", "postR", "ratio"]
PERMUTATION_COLUMNS = ["window", "treated_ratio", "K", "n_admissible", "n_ge", "p_right"]
DIFF_COLUMNS = ["h", "value", "se", "ci_lo", "ci_hi"]
TRANSFER_COLUMNS = ["period", "baseline", "simulated", "sim_gap", "band_lo", "band_hi"]


class OutputError(OSError):
    pass


def _cell(value: Any, decimals: int | None) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return ""
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if decimals is None:
            return repr(v)
        text = f"{v:.{decimals}f}"
        return "0." + "0" * decimals if text == "-0." + "0" * decimals else text
    return str(value)


def _json_value(value: Any, decimals: int | None) -> Any:
    if value is None:
        return None
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if not math.isfinite(v):
            return None if math.isnan(v) else str(v)
        return round(v, decimals) + 0.0 if decimals is not None else v
    return str(value)


def _ensure_dir(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {path}: {exc}") from None


def write_csv(path: Path, frame: pd.DataFrame, decimals: int | None = TABLE_DECIMALS, mirror: bool = True) -> list[Path]:
    """Write ``frame`` (index ignored) as CSV and, optionally, a JSON mirror."""
    _ensure_dir(path.parent)
    cols = [str(c) for c in frame.columns]
    rows = [[v for v in rec] for rec in frame.itertuples(index=False, name=None)]
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for rec in rows:
                w.writerow([_cell(v, decimals) for v in rec])
        written = [path]
        if mirror:
            jpath = path.with_suffix(".json")
            payload = {"columns": cols, "rows": [[_json_value(v, decimals) for v in rec] for rec in rows]}
            jpath.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")
            written.append(jpath)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from None
    return written


def write_json(path: Path, payload: Any) -> Path:
    _ensure_dir(path.parent)
    try:
        path.write_text(json.dumps(_jsonable(payload), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from None
    return path


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return _json_value(obj, None)


def _with_columns(frame: pd.DataFrame | None, columns: Sequence[str]) -> pd.DataFrame:
    if frame is None or frame.empty:
        return pd.DataFrame(columns=list(columns))
    extra = [c for c in frame.columns if c not in columns]
    ordered = [c for c in columns if c in frame.columns] + extra
    return frame[ordered]


def share_tag(s: float) -> str:
    return f"s{int(round(s * 100)):03d}"


# ---------------------------------------------------------------- table builders


def weights_table(fit: ScmFit) -> pd.DataFrame:
    return pd.DataFrame({"donor": list(fit.donors), "weight": [float(w) for w in fit.weights]})


def balance_table(fit: ScmFit) -> pd.DataFrame:
    out = fit.balance_table()
    out["v_weight"] = [float(v) for v in fit.v_weights]
    return out


def diagnostics_table(fit: ScmFit) -> pd.DataFrame:
    d = fit.diagnostics
    row: dict = {"unit": fit.config.treated, "pre_RMSPE": d.pre_rmspe}
    for w in fit.config.post_windows:
        lab, tag = window_label(w, fit.frequency), short_label(w, fit.frequency)
        row[f"post_RMSPE_{tag}"] = d.post_rmspe[lab]
        row[f"ratio_{tag}"] = d.ratio[lab]
    return pd.DataFrame([row])


def placebo_space_frame(battery: Battery) -> pd.DataFrame:
    from .inference import placebo_space_table

    windows = battery.fit.config.post_windows
    cols = ["treated", "preR"]
    for w in windows:
        tag = short_label(w, battery.fit.frequency)
        cols += [f"postR_{tag}", f"ratio_{tag}"]
    return _with_columns(placebo_space_table(battery.placebos, windows), cols)


def permutation_frame(battery: Battery) -> pd.DataFrame:
    rows = [
        {
            "window": p.window,
            "treated_ratio": p.treated_ratio,
            "K": p.K,
            "n_admissible": p.n_admissible,
            "n_ge": p.n_ge,
            "p_right": p.p_right,
        }
        for _, p in sorted(battery.permutation.items())
    ]
    return _with_columns(pd.DataFrame(rows), PERMUTATION_COLUMNS)


def battery_tables(battery: Battery) -> dict[str, pd.DataFrame]:
    return {
        "placebo_space": placebo_space_frame(battery),
        "permutation": permutation_frame(battery),
        "placebo_time": _with_columns(battery.placebo_time, PLACEBO_TIME_COLUMNS),
        "leave_one_out": _with_columns(battery.loo, LOO_COLUMNS),
        "alt_windows": _with_columns(battery.windows, WINDOW_COLUMNS),
    }


# ---------------------------------------------------------------- stage emitters


def emit_stage1_tables(res, out: Path) -> list[Path]:
    files: list[Path] = []
    tdir = out / "stage1" / "tables"
    for name, fit in sorted(res.fits.items()):
        files += write_csv(tdir / f"{name}_weights.csv", weights_table(fit))
        files += write_csv(tdir / f"{name}_balance.csv", balance_table(fit))
        files += write_csv(tdir / f"{name}_diagnostics.csv", diagnostics_table(fit))
    for name, battery in sorted(res.batteries.items()):
        for kind, frame in battery_tables(battery).items():
            files += write_csv(tdir / f"{name}_{kind}.csv", frame)
    if res.transfer is not None:
        t = res.transfer
        prof = pd.DataFrame(
            {
                "r": sorted(t.profile.deltas),
                "delta_raw": [t.profile_raw.deltas[r] for r in sorted(t.profile.deltas)],
                "delta": [t.profile.deltas[r] for r in sorted(t.profile.deltas)],
            }
        )
        files += write_csv(tdir / "transfer_profile.csv", prof)
    return files


def emit_stage1_plots(res, out: Path) -> list[Path]:
    files: list[Path] = []
    pdir = out / "stage1" / "plots"
    for name, fit in sorted(res.fits.items()):
        idx = fit.gap.index
        fig1 = pd.DataFrame(
            {"period": idx, "actual": fit.treated_path.loc[idx].to_numpy(), "synthetic": fit.synthetic.loc[idx].to_numpy()}
        )
        files += write_csv(pdir / f"fig1_{name}.csv", fig1, decimals=None, mirror=False)
        files += write_csv(
            pdir / f"fig2_{name}.csv", pd.DataFrame({"period": idx, "gap": fit.gap.to_numpy()}), decimals=None, mirror=False
        )
    for name, battery in sorted(res.batteries.items()):
        rows = []
        for run in sorted(battery.placebos, key=lambda r: r.pseudo_treated):
            if run.fit is None:
                continue
            for p, g in run.fit.gap.items():
                rows.append({"unit": run.pseudo_treated, "period": int(p), "gap": float(g)})
        for p, g in battery.fit.gap.items():
            rows.append({"unit": battery.fit.config.treated, "period": int(p), "gap": float(g)})
        frame = pd.DataFrame(rows, columns=["unit", "period", "gap"]).sort_values(["unit", "period"], kind="mergesort")
        files += write_csv(pdir / f"fig5_placebo_gaps_{name}.csv", frame, decimals=None, mirror=False)
    if res.transfer is not None:
        for s, path in sorted(res.transfer.paths.items(), reverse=True):
            frame = path.frame().reset_index()
            files += write_csv(
                pdir / f"transfer_{res.transfer.target}_{share_tag(s)}.csv",
                frame[TRANSFER_COLUMNS],
                decimals=None,
                mirror=False,
            )
    return files


def emit_stage2_tables(res, out: Path) -> list[Path]:
    files: list[Path] = []
    tdir = out / "stage2" / "tables"
    rows = []
    for c, fit in sorted(res.shocks.fits.items()):
        for k in fit.coefficients:
            rows.append(
                {"country": c, "term": k, "coef": fit.coefficients[k], "hac_se": fit.hac_ses[k],
                 "r_squared": fit.r_squared, "n": fit.n, "hac_lag": fit.hac_lag}
            )
    files += write_csv(tdir / "taylor.csv", pd.DataFrame(rows))
    files.append(write_json(tdir / "taylor_fits.json", {c: f.to_dict() for c, f in sorted(res.shocks.fits.items())}))
    shocks = res.shocks.frame().reset_index()
    files += write_csv(tdir / "shocks.csv", shocks)
    files += write_csv(tdir / "lp_baseline.csv", res.baseline.frame())
    files += write_csv(tdir / "lp_integrated.csv", res.integrated.frame())
    files += write_csv(tdir / "delta_beta.csv", _with_columns(res.d_beta.frame(), DIFF_COLUMNS))
    files += write_csv(tdir / "delta_g.csv", _with_columns(res.d_g.frame(), DIFF_COLUMNS))
    files.append(
        write_json(
            tdir / "lp_notes.json",
            {
                "unavailable": {"baseline": list(res.baseline.unavailable), "integrated": list(res.integrated.unavailable)},
                "notes": list(res.notes) + list(res.d_g.notes),
                "shock_signs": dict(sorted(res.shocks.signs.items())),
                "shock_weights": dict(sorted(res.shocks.weights.items())),
            },
        )
    )
    return files


def emit_stage2_plots(res, out: Path) -> list[Path]:
    files: list[Path] = []
    pdir = out / "stage2" / "plots"
    rows = []
    for lp in (res.baseline, res.integrated):
        for h in sorted(lp.beta):
            e = lp.beta[h]
            rows.append({"scenario": lp.scenario, "h": h, "value": e.value, "ci_lo": e.ci_lo, "ci_hi": e.ci_hi})
    files += write_csv(pdir / "fig8_beta.csv", pd.DataFrame(rows, columns=["scenario", "h", "value", "ci_lo", "ci_hi"]),
                       decimals=None, mirror=False)
    for fig, diff in (("fig9_delta_g", res.d_g), ("fig10_delta_beta", res.d_beta)):
        frame = _with_columns(diff.frame(), DIFF_COLUMNS).sort_values("h", kind="mergesort")
        files += write_csv(pdir / f"{fig}.csv", frame[["h", "value", "ci_lo", "ci_hi"]], decimals=None, mirror=False)
    return files


def emit_tables(stage1=None, stage2=None, out: Path | str = ".") -> list[Path]:
    out = Path(out)
    files = []
    if stage1 is not None:
        files += emit_stage1_tables(stage1, out)
    if stage2 is not None:
        files += emit_stage2_tables(stage2, out)
    return files


def emit_plot_data(stage1=None, stage2=None, out: Path | str = ".") -> list[Path]:
    out = Path(out)
    files = []
    if stage1 is not None:
        files += emit_stage1_plots(stage1, out)
    if stage2 is not None:
        files += emit_stage2_plots(stage2, out)
    return files


# ---------------------------------------------------------------- state and manifest


def _series_dict(s: pd.Series | None) -> dict | None:
    if s is None:
        return None
    return {"period": [int(p) for p in s.index], "value": [float(v) for v in s.to_numpy(float)]}


def series_from_dict(d: dict) -> pd.Series:
    return pd.Series(d["value"], index=pd.Index(d["period"], dtype=np.int64), dtype=float)


def stage1_state(res, share: float) -> dict:
    """What stage 2 needs, at full precision."""
    state: dict = {
        "fits": {n: f.to_dict() for n, f in sorted(res.fits.items())},
        "battery_notes": {n: list(b.notes) for n, b in sorted(res.batteries.items())},
        "failures": dict(res.failures),
    }
    if res.transfer is not None and share in res.transfer.paths:
        p = res.transfer.paths[share]
        state["transfer"] = {
            "target": res.transfer.target,
            "share": share,
            "origin": p.origin,
            "scale_factor": res.transfer.profile.scale_factor,
            "baseline": _series_dict(p.baseline),
            "simulated": _series_dict(p.simulated),
            "sim_gap": _series_dict(p.sim_gap),
            "scenario": True,
            "notes": list(res.transfer.notes),
        }
    return state


def file_hash(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, failures: dict[str, str] | None = None, stages: Iterable[str] = ()) -> Path:
    """List every file under ``out`` (except the manifest) with its sha256."""
    out = Path(out)
    entries = []
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != MANIFEST:
            rel = p.relative_to(out).as_posix()
            entries.append({"path": rel, "sha256": file_hash(p), "bytes": p.stat().st_size})
    entries.sort(key=lambda e: e["path"])
    failures = dict(sorted((failures or {}).items()))
    payload = {
        "status": "failed" if failures else "ok",
        "failures": failures,
        "stages": list(stages),
        "files": entries,
    }
    return write_json(out / MANIFEST, payload)
