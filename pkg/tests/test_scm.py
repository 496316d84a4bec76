from __future__ import annotations

import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from scmtransmit import _kernels_py, kernels
from scmtransmit.fixtures import factor_panel
from scmtransmit.panel import PanelDataset, PanelError
from scmtransmit.scm import (
    ConvergenceError,
    FitDiagnostics,
    PredictorSpec,
    ScmConfig,
    ScmError,
    ScmWarning,
    compute_diagnostics,
    rmspe,
    rmspe_ratio,
    solve_inner,
    solve_weights,
    synthetic_path,
    window_label,
)

try:
    from scmtransmit import _kernels as _kernels_c
except ImportError:
    _kernels_c = None

YEARS = range(2000, 2012)


def simplex_grid(step: float = 0.01) -> np.ndarray:
    n = int(round(1 / step))
    pts = [(i, j, n - i - j) for i in range(n + 1) for j in range(n + 1 - i)]
    return np.array(pts, dtype=float) / n


def grid_objective(X1, X0, v, grid) -> float:
    r = X1[None, :] - grid @ X0.T
    return float(np.min(np.sum(v[None, :] * r * r, axis=1)))


def panel_from_paths(paths: dict[str, np.ndarray], covs: dict[str, dict[str, float]]) -> PanelDataset:
    recs = []
    for u, ys in paths.items():
        for t, y in zip(YEARS, ys):
            recs.append((u, t, "y", float(y)))
            for name, val in covs[u].items():
                recs.append((u, t, name, float(val)))
    return PanelDataset.from_records(recs)


def basic_config(donors, **kw) -> ScmConfig:
    args = dict(
        treated="T",
        donors=tuple(donors),
        outcome="y",
        pre_window=(2000, 2007),
        treatment_period=2008,
        predictors=(PredictorSpec("x", (2000, 2007)), PredictorSpec("z", (2000, 2007))),
        outcome_lags=(2000, 2003, 2007),
        post_windows=((2008, 2010), (2008, 2011)),
    )
    args.update(kw)
    return ScmConfig(**args)


@pytest.fixture
def three_donors():
    rng = np.random.default_rng(11)
    paths = {u: 5 + np.cumsum(rng.normal(0.1, 0.2, len(YEARS))) for u in ("A", "B", "C")}
    covs = {u: {"x": rng.normal(), "z": rng.normal()} for u in ("A", "B", "C")}
    return paths, covs


# ----------------------------------------------------------------- oracle


def test_grid_oracle_three_donors():
    rng = np.random.default_rng(2024)
    grid = simplex_grid(0.01)
    for _ in range(25):
        X0 = rng.normal(size=(4, 3))
        X1 = rng.normal(size=4)
        v = rng.dirichlet(np.ones(4))
        w, f = solve_inner(X1, X0, v)
        assert abs(w.sum() - 1) < 1e-8 and np.all(w >= 0)
        assert f <= grid_objective(X1, X0, v, grid) + 1e-4


def test_exact_match_donor(three_donors):
    paths, covs = three_donors
    paths["T"] = paths["B"].copy()
    covs["T"] = dict(covs["B"])
    fit = solve_weights(basic_config("ABC"), panel_from_paths(paths, covs))
    assert fit.weight_map()["B"] == pytest.approx(1.0, abs=1e-6)
    assert fit.diagnostics.pre_rmspe == pytest.approx(0.0, abs=1e-6)


def test_midpoint_two_donors(three_donors):
    paths, covs = three_donors
    paths["T"] = 0.5 * (paths["A"] + paths["C"])
    covs["T"] = {k: 0.5 * (covs["A"][k] + covs["C"][k]) for k in ("x", "z")}
    fit = solve_weights(basic_config("AC"), panel_from_paths(paths, covs))
    np.testing.assert_allclose(fit.weights, [0.5, 0.5], atol=1e-6)


# ----------------------------------------------------------------- paths and diagnostics


def test_synthetic_path_examples():
    ds = PanelDataset.from_records(
        [("D1", 2000, "y", 5.0), ("D1", 2001, "y", 6.0), ("D2", 2000, "y", 4.0), ("D2", 2001, "y", 8.0)]
    )
    s = synthetic_path({"D1": 1.0, "D2": 0.0}, ds, (2000, 2001), outcome="y")
    assert s.tolist() == [5.0, 6.0]
    ds2 = PanelDataset.from_records(
        [("D1", 2000, "y", 4.0), ("D1", 2001, "y", 4.0), ("D2", 2000, "y", 6.0), ("D2", 2001, "y", 8.0)]
    )
    s = synthetic_path({"D1": 0.5, "D2": 0.5}, ds2, (2000, 2001), outcome="y")
    assert s.tolist() == [5.0, 6.0]
    with pytest.raises(PanelError, match="D1.*2002"):
        synthetic_path({"D1": 0.5, "D2": 0.5}, ds2, [2000, 2002], outcome="y")


def test_rmspe_examples():
    g = pd.Series([0.0, 0.0, 0.0], index=[1, 2, 3])
    assert rmspe(g, (1, 3)) == 0.0
    g = pd.Series([0.3, -0.4], index=[1, 2])
    assert rmspe(g, (1, 2)) == pytest.approx(0.353553, abs=1e-6)
    with pytest.raises(ScmError):
        rmspe(g, (3, 2))
    with pytest.raises(ScmError):
        rmspe(g, (1, 3))


def test_rmspe_ratio_examples():
    d = FitDiagnostics(0.3329, {"2004-2006": 0.8728}, {})
    assert rmspe_ratio(d, "2004-2006") == pytest.approx(2.6218, abs=5e-5)
    d = FitDiagnostics(0.23, {"2004-2006": 0.66}, {})
    assert rmspe_ratio(d, "2004-2006") == pytest.approx(2.8696, abs=5e-5)
    d = FitDiagnostics(0.5, {"w": 0.5}, {})
    assert rmspe_ratio(d, "w") == 1.0
    with pytest.raises(ScmError, match="perfect pre-fit"):
        rmspe_ratio(FitDiagnostics(0.0, {"w": 0.1}, {}), "w")


def test_diagnostics_zero_pre_gives_nan_ratio():
    g = pd.Series([0.0, 0.0, 1.0], index=[1, 2, 3])
    d = compute_diagnostics(g, (1, 2), [(3, 3)])
    assert math.isnan(d.ratio["3-3"] if "3-3" in d.ratio else d.ratio[window_label((3, 3))])


def test_window_labels():
    assert window_label((2004, 2006)) == "2004-2006"


# ----------------------------------------------------------------- fit invariants


@pytest.fixture(scope="module")
def planted():
    fp = factor_panel(5)
    return fp, solve_weights(fp.config, fp.data)


def test_fit_invariants(planted):
    fp, fit = planted
    assert abs(fit.weights.sum() - 1) < 1e-8 and np.all(fit.weights >= 0)
    assert abs(fit.v_weights.sum() - 1) < 1e-8 and np.all(fit.v_weights >= 0)
    Y = fp.data.wide("y", list(fit.donors))
    np.testing.assert_allclose(fit.synthetic.loc[Y.index].to_numpy(), Y.to_numpy() @ fit.weights, atol=1e-10)
    for lab, post in fit.diagnostics.post_rmspe.items():
        assert abs(fit.diagnostics.ratio[lab] * fit.diagnostics.pre_rmspe - post) < 1e-9
    h = np.array(fit.history)
    assert np.all(np.diff(h) <= 0)
    assert fit.pre_mspe == pytest.approx(h[-1], rel=1e-9, abs=1e-15)


def test_fit_is_deterministic(planted):
    fp, fit = planted
    again = solve_weights(fp.config, fp.data)
    assert np.array_equal(fit.weights, again.weights)
    assert np.array_equal(fit.v_weights, again.v_weights)


def test_scale_equivariance(planted):
    fp, fit = planted
    frame = fp.data.frame.copy()
    mask = frame["variable"].str.startswith("x")
    frame.loc[mask, "value"] *= 1000.0
    scaled = solve_weights(fp.config, PanelDataset(frame))
    np.testing.assert_allclose(scaled.weights, fit.weights, atol=1e-6)


def test_donor_permutation(planted):
    fp, fit = planted
    perm = tuple(reversed(fp.config.donors))
    other = solve_weights(ScmConfig(**{**vars(fp.config), "donors": perm}), fp.data)
    wmap = other.weight_map()
    for d, w in fit.weight_map().items():
        assert wmap[d] == pytest.approx(w, abs=1e-6)
    np.testing.assert_allclose(other.synthetic.to_numpy(), fit.synthetic.to_numpy(), rtol=0, atol=1e-12)


def test_serialization(planted):
    import json

    _, fit = planted
    d = json.loads(json.dumps(fit.to_dict()))
    assert set(d["donor_weights"]) == set(fit.donors)
    assert len(d["paths"]["gap"]) == len(fit.gap)
    bal = fit.balance_table()
    np.testing.assert_allclose(bal["difference"], bal["treated"] - bal["synthetic"])


# ----------------------------------------------------------------- errors and warnings


def test_config_validation():
    with pytest.raises(ScmError, match="own donor pool"):
        basic_config(("T", "A"))
    with pytest.raises(ScmError, match="duplicates"):
        basic_config(("A", "A"))
    with pytest.raises(ScmError, match="strictly before"):
        basic_config("AB", pre_window=(2000, 2008))
    with pytest.raises(ScmError, match="outside pre_window"):
        basic_config("AB", outcome_lags=(2009,))


def test_constant_predictor_dropped(three_donors):
    paths, covs = three_donors
    paths["T"] = 0.3 * paths["A"] + 0.7 * paths["C"]
    covs["T"] = {"x": 1.0, "z": 0.2}
    for u in "ABC":
        covs[u]["x"] = 1.0
    with pytest.warns(ScmWarning, match="constant"):
        fit = solve_weights(basic_config("ABC"), panel_from_paths(paths, covs))
    assert "x" in " ".join(fit.dropped_rows)


def test_too_few_predictor_rows(three_donors):
    paths, covs = three_donors
    paths["T"] = paths["A"]
    covs["T"] = covs["A"]
    cfg = basic_config("ABC", predictors=(PredictorSpec("x", (2000, 2007)),), outcome_lags=())
    with pytest.raises(ScmError, match="fewer than 2"):
        solve_weights(cfg, panel_from_paths(paths, covs))


def test_degenerate_donor_warns(three_donors):
    paths, covs = three_donors
    paths["A"] = np.full(len(YEARS), 5.0)
    paths["T"] = 0.5 * (paths["A"] + paths["B"])
    covs["T"] = {k: 0.5 * (covs["A"][k] + covs["B"][k]) for k in ("x", "z")}
    with pytest.warns(ScmWarning, match="constant outcome"):
        solve_weights(basic_config("ABC"), panel_from_paths(paths, covs))


def test_single_donor_forced(three_donors):
    paths, covs = three_donors
    paths["T"] = paths["A"] + 0.1
    covs["T"] = covs["A"]
    fit = solve_weights(basic_config("A"), panel_from_paths(paths, covs))
    assert fit.weights.tolist() == [1.0]


def test_post_window_beyond_data(three_donors):
    paths, covs = three_donors
    paths["T"] = paths["A"]
    covs["T"] = covs["A"]
    with pytest.raises(ScmError, match="beyond the data"):
        solve_weights(basic_config("ABC", post_windows=((2008, 2015),)), panel_from_paths(paths, covs))


def test_missing_predictor_error(three_donors):
    paths, covs = three_donors
    paths["T"] = paths["A"]
    covs["T"] = covs["A"]
    ds = panel_from_paths(paths, covs)
    frame = ds.frame[~((ds.frame.unit == "B") & (ds.frame.variable == "x") & (ds.frame.period == 2003))]
    with pytest.raises(PanelError, match="'B', 2003"):
        solve_weights(basic_config("ABC"), PanelDataset(frame))


def test_convergence_error_carries_best():
    rng = np.random.default_rng(0)
    X0 = rng.normal(size=(5, 4))
    X1 = rng.normal(size=5)
    with pytest.raises(ConvergenceError) as info:
        solve_inner(X1, X0, np.full(5, 0.2), max_iter=2)
    assert info.value.best.shape == (4,)
    assert np.isfinite(info.value.objective)


# ----------------------------------------------------------------- kernels


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-1e3, 1e3)))
def test_projection_on_simplex(v):
    p = _kernels_py.project_simplex(v)
    assert abs(p.sum() - 1) < 1e-9 and np.all(p >= 0)
    np.testing.assert_allclose(_kernels_py.project_simplex(p), p, atol=1e-12)
    # optimality: <v - p, q - p> <= 0 for every vertex q
    for i in range(len(v)):
        q = np.zeros_like(v)
        q[i] = 1.0
        assert float((v - p) @ (q - p)) <= 1e-7 * (1 + np.abs(v).max())


def test_projection_brute_force():
    rng = np.random.default_rng(3)
    grid = simplex_grid(0.02)
    for _ in range(20):
        v = rng.normal(size=3)
        p = _kernels_py.project_simplex(v)
        best = grid[np.argmin(np.sum((grid - v) ** 2, axis=1))]
        assert np.sum((p - v) ** 2) <= np.sum((best - v) ** 2) + 1e-12


@pytest.mark.skipif(_kernels_c is None, reason="compiled extension not built")
def test_backends_agree():
    rng = np.random.default_rng(9)
    for _ in range(30):
        j = int(rng.integers(2, 8))
        X0 = rng.normal(size=(6, j))
        X1 = rng.normal(size=6)
        v = rng.dirichlet(np.ones(6))
        H = X0.T @ (v[:, None] * X0)
        c = X0.T @ (v * X1)
        d = float(X1 @ (v * X1))
        lip = 2 * float(np.linalg.eigvalsh(H)[-1])
        a = _kernels_py.solve_simplex_qp(H, c, d, lip, 10_000, 1e-10)
        b = _kernels_c.solve_simplex_qp(H, c, d, lip, 10_000, 1e-10)
        np.testing.assert_allclose(np.asarray(a[0]), np.asarray(b[0]), atol=1e-12)
        assert a[2] == b[2] and a[3] == b[3]
        np.testing.assert_allclose(np.asarray(_kernels_c.project_simplex(X1)), _kernels_py.project_simplex(X1), atol=1e-15)


def test_backend_flag():
    assert kernels.BACKEND in ("cython", "python")


def test_pure_python_env(monkeypatch):
    import importlib

    monkeypatch.setenv("SCMTRANSMIT_PURE_PYTHON", "1")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND == "python"
    finally:
        monkeypatch.delenv("SCMTRANSMIT_PURE_PYTHON")
        importlib.reload(kernels)
