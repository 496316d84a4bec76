from __future__ import annotations

import math
from types import SimpleNamespace

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scmtransmit.fixtures import factor_panel
from scmtransmit.inference import (
    PlaceboRun,
    alternative_windows,
    k_screen,
    leave_one_out,
    permutation_p,
    placebo_in_space,
    placebo_in_time,
    placebo_space_table,
    run_battery,
)
from scmtransmit.panel import PanelDataset
from scmtransmit.scm import FitDiagnostics, PredictorSpec, ScmConfig, ScmError, solve_weights


def fake_run(name: str, pre: float, ratio: float, window: str = "w") -> PlaceboRun:
    diag = FitDiagnostics(pre, {window: ratio * pre}, {window: ratio})
    return PlaceboRun(name, SimpleNamespace(diagnostics=diag))


def test_permutation_examples():
    runs = [fake_run(n, 0.3, r) for n, r in (("BGR", 0.89), ("HRV", 1.19), ("ROU", 1.32))]
    res = permutation_p(runs, 1.85, "w", K=3)
    assert (res.n_admissible, res.n_ge, res.p_right) == (3, 0, 0.25)
    assert permutation_p([], 2.0, "w").p_right == 1.0
    runs = [fake_run(str(i), 0.3, r) for i, r in enumerate((1.0, 3.0, 2.5, 0.5))]
    assert permutation_p(runs, 2.0, "w").p_right == pytest.approx(0.6, abs=0)


def test_nan_placebo_ratio_counts_as_exceedance():
    run = PlaceboRun("X", SimpleNamespace(diagnostics=FitDiagnostics(0.0, {"w": 0.1}, {"w": math.nan})))
    assert permutation_p([run], 5.0, "w").n_ge == 1


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 10), max_size=8), st.floats(0, 10), st.floats(0, 10))
def test_p_monotone_in_treated_ratio(ratios, a, b):
    runs = [fake_run(str(i), 1.0, r) for i, r in enumerate(ratios)]
    lo, hi = sorted((a, b))
    p_lo = permutation_p(runs, lo, "w")
    p_hi = permutation_p(runs, hi, "w")
    assert p_hi.p_right <= p_lo.p_right
    for p in (p_lo, p_hi):
        assert p.p_right == (1 + p.n_ge) / (1 + p.n_admissible)
        assert 1 / (1 + p.n_admissible) <= p.p_right <= 1


def test_k_screen_examples():
    runs = [fake_run("BGR", 0.64, 0.89), fake_run("HRV", 0.31, 1.19), fake_run("ROU", 0.32, 1.32)]
    assert len(k_screen(runs, 0.33, 3)) == 3
    assert [r.pseudo_treated for r in k_screen(runs, 0.33, 2)] == ["BGR", "HRV", "ROU"]
    assert k_screen(runs, 0.33, 0) == []
    failed = PlaceboRun("X", None, error="boom")
    assert k_screen(runs + [failed], 0.33, 3) == k_screen(runs, 0.33, 3)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 5), max_size=8), st.floats(0.01, 2), st.floats(0, 10), st.floats(0, 10))
def test_k_screen_monotone(pres, treated_pre, k1, k2):
    runs = [fake_run(str(i), p, 1.0) for i, p in enumerate(pres)]
    lo, hi = sorted((k1, k2))
    kept_lo = {r.pseudo_treated for r in k_screen(runs, treated_pre, lo)}
    kept_hi = {r.pseudo_treated for r in k_screen(runs, treated_pre, hi)}
    assert kept_lo <= kept_hi


@pytest.fixture(scope="module")
def planted():
    fp = factor_panel(3, n_donors=4)
    return fp, solve_weights(fp.config, fp.data)


def test_placebo_in_space_pools(planted):
    fp, fit = planted
    runs = placebo_in_space(fp.config, fp.data, fit.diagnostics.pre_rmspe)
    assert [r.pseudo_treated for r in runs] == sorted(fp.config.donors)
    for r in runs:
        assert r.fit is not None
        assert fp.config.treated not in r.fit.donors
        assert r.pseudo_treated not in r.fit.donors
        assert set(r.fit.diagnostics.ratio) == set(fit.diagnostics.ratio)
        for k, ok in r.admissible_under_k.items():
            assert ok == (r.fit.diagnostics.pre_rmspe <= k * fit.diagnostics.pre_rmspe)


def test_placebo_two_donor_pool_forces_weight():
    fp = factor_panel(1, n_donors=2)
    runs = placebo_in_space(fp.config, fp.data)
    assert all(r.fit.weights.tolist() == [1.0] for r in runs)


def test_placebo_failure_recorded(planted):
    fp, _ = planted
    frame = fp.data.frame
    victim = fp.config.donors[0]
    # the victim is pseudo-treated or a donor in every run, so every run fails and is recorded
    frame = frame[~((frame.unit == victim) & frame.variable.str.startswith("x"))]
    cfg = ScmConfig(**{**vars(fp.config), "donors": fp.config.donors})
    runs = placebo_in_space(cfg, PanelDataset(frame))
    errs = {r.pseudo_treated: r.error for r in runs}
    assert all(v is not None for v in errs.values())
    table = placebo_space_table(runs, cfg.post_windows)
    assert "error" in table.columns


def test_placebo_in_time(planted):
    fp, fit = planted
    t0 = fp.config.treatment_period
    table = placebo_in_time(fp.config, fp.data, [t0 - 3, t0 - 1])
    assert list(table["fake"]) == [t0 - 3, t0 - 1]
    for _, row in table.iterrows():
        end = int(row["pre_window"].split("-")[1])
        assert end < row["fake"]
    with pytest.raises(ScmError):
        placebo_in_time(fp.config, fp.data, [t0])
    lo = fp.config.pre_window[0]
    short = placebo_in_time(fp.config, fp.data, [lo + 2])
    assert "shorter than 3" in short.loc[0, "error"]


def test_leave_one_out(planted):
    fp, fit = planted
    table = leave_one_out(fp.config, fp.data)
    assert list(table["dropped_donor"]) == sorted(fp.config.donors)
    two = ScmConfig(**{**vars(fp.config), "donors": fp.config.donors[:2]})
    with pytest.raises(ScmError):
        leave_one_out(two, fp.data)


def test_leave_one_out_unused_donor_noop():
    fp = factor_panel(0, n_donors=5)
    fit = solve_weights(fp.config, fp.data)
    unused = [d for d, w in fit.weight_map().items() if w < 1e-9]
    assert unused
    table = leave_one_out(fp.config, fp.data).set_index("dropped_donor")
    for d in unused:
        assert abs(table.loc[d, "preR"] - fit.diagnostics.pre_rmspe) <= 1e-6


def test_alternative_windows(planted):
    fp, fit = planted
    t0 = fp.config.treatment_period
    end = int(fit.gap.index.max())
    table = alternative_windows(fit, [(t0, t0 + 2), (t0, end)])
    assert list(table["window"]) == [f"{t0}-{t0 + 2}", f"{t0}-{end}"]
    np.testing.assert_allclose(table["ratio"] * table["preR"], table["postR"], atol=1e-12)
    with pytest.raises(ScmError, match="beyond"):
        alternative_windows(fit, [(t0, end + 1)])
    with pytest.raises(ScmError, match="start at"):
        alternative_windows(fit, [(t0 + 1, end)])


def test_alternative_window_zero_gap():
    recs = []
    for t in range(2000, 2006):
        recs += [("A", t, "y", 1.0 + 0.1 * t), ("B", t, "y", 3.0 - 0.1 * t), ("A", t, "x", 1.0), ("B", t, "x", 2.0)]
        y = 0.5 * (1.0 + 0.1 * t) + 0.5 * (3.0 - 0.1 * t) + (0.1 if t < 2004 and t % 2 else 0.0)
        recs += [("T", t, "y", y if t != 2005 else y + 1), ("T", t, "x", 1.5)]
    cfg = ScmConfig("T", ("A", "B"), "y", (2000, 2003), 2004, (PredictorSpec("x", (2000, 2003)),), (2000, 2002),
                    ((2004, 2005),))
    fit = solve_weights(cfg, PanelDataset.from_records(recs))
    assert fit.gap.loc[2004] == pytest.approx(0.0, abs=1e-9)
    table = alternative_windows(fit, [(2004, 2004)])
    assert table.loc[0, "ratio"] == pytest.approx(0.0, abs=1e-8)


def test_battery_workers_agree(planted):
    fp, fit = planted
    t0 = fp.config.treatment_period
    a = run_battery(fit, fp.data, K=3, fake_periods=[t0 - 2], windows=[(t0, t0 + 2)], workers=1)
    b = run_battery(fit, fp.data, K=3, fake_periods=[t0 - 2], windows=[(t0, t0 + 2)], workers=2)
    pd.testing.assert_frame_equal(a.placebo_time, b.placebo_time)
    pd.testing.assert_frame_equal(a.loo, b.loo)
    assert a.permutation == b.permutation


def _iid_panel(seed: int, n_donors: int = 4) -> tuple[ScmConfig, PanelDataset]:
    rng = np.random.default_rng(seed)
    units = [f"U{i}" for i in range(n_donors + 1)]
    recs = []
    for u in units:
        for t in range(2000, 2016):
            recs.append((u, t, "y", float(rng.normal())))
        recs.append((u, 2000, "x", float(rng.normal())))
    cfg = ScmConfig(units[0], tuple(units[1:]), "y", (2000, 2009), 2010, (PredictorSpec("x", (2000, 2000)),),
                    (2001, 2004, 2007, 2009), ((2010, 2015),))
    return cfg, PanelDataset.from_records(recs)


@pytest.mark.slow
def test_null_rank_frequency():
    """Under no effect the treated ratio tops all placebos about 1/(N+1) of the time."""
    n_seeds, n_donors = 200, 4
    top = 0
    for seed in range(n_seeds):
        cfg, data = _iid_panel(seed, n_donors)
        fit = solve_weights(cfg, data)
        runs = placebo_in_space(cfg, data)
        lab = next(iter(fit.diagnostics.ratio))
        res = permutation_p(runs, fit.diagnostics.ratio[lab], lab)
        top += res.n_ge == 0
    freq = top / n_seeds
    nominal = 1 / (n_donors + 1)
    se = math.sqrt(nominal * (1 - nominal) / n_seeds)
    assert abs(freq - nominal) <= 3 * se, freq
