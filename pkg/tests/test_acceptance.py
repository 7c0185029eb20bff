"""Acceptance criteria, one test per criterion.

Each test records a [PASS]/[FAIL] line that is repeated in the terminal
summary under "acceptance criteria".
"""

import time
from pathlib import Path

import numpy as np
import pytest

from helpers import finite_difference
from votetrans.cli import main
from votetrans.genesis import generate
from votetrans.goodman import fit_goodman
from votetrans.lens import bias_correlation, two_by_two_geometry
from votetrans.logit import (
    CovariateDesign,
    DesignEntry,
    SharesObjective,
    _prepare,
    fit_logit_ols,
    fit_logit_wls,
    wls_objective,
)
from votetrans.scenarios import fig_units, get_scenario
from votetrans.seam import ipf
from votetrans.tables import UnitMargins, aggregate_units
from votetrans.verdict import fit_individual_logistic, reconstruct_overall


def _estimates(margins, design):
    ols = fit_logit_ols(margins, design)
    wls = fit_logit_wls(margins, design)
    return {
        "goodman": fit_goodman(margins).table,
        "king-ols": reconstruct_overall(ols, design, margins),
        "bp-wls": reconstruct_overall(wls, design, margins),
    }


def test_constant_consistency(acceptance):
    t0 = time.perf_counter()
    errors = {k: [] for k in ("goodman", "king-ols", "bp-wls")}
    for seed in range(50):
        sc = get_scenario("constant", 2000, seed)
        data = generate(sc.spec)
        truth = aggregate_units(data.units)
        for k, table in _estimates(data.margins(), sc.design).items():
            errors[k].append(np.abs(table - truth))
    elapsed = time.perf_counter() - t0
    mean = {k: float(np.mean(v)) for k, v in errors.items()}
    worst = {k: float(np.max(v)) for k, v in errors.items()}
    ok = all(m < 0.01 for m in mean.values()) and all(w <= 0.03 for w in worst.values()) and elapsed < 120
    detail = "; ".join(f"{k} mean {mean[k]:.4f} max {worst[k]:.4f}" for k in errors) + f"; {elapsed:.1f}s"
    acceptance("1 constant-table consistency", ok, detail)
    assert ok, detail


def _diagonal_check(n_units, seed):
    sc = get_scenario("diagonal-covariate", n_units, seed)
    data = generate(sc.spec)
    truth = aggregate_units(data.units)
    est = _estimates(data.margins(), sc.design)
    logit_err = max(float(np.max(np.abs(est[k] - truth))) for k in ("king-ols", "bp-wls"))
    goodman_excess = float(np.min(np.diag(est["goodman"]) - np.diag(truth)))
    ok = logit_err <= 0.02 and goodman_excess >= 0.05
    detail = (f"truth diag {np.round(np.diag(truth), 3).tolist()}, goodman diag "
              f"{np.round(np.diag(est['goodman']), 3).tolist()}; worst OLS/WLS cell error {logit_err:.4f}, "
              f"smallest Goodman diagonal excess {goodman_excess:.3f}")
    return ok, detail


def test_diagonal_covariate_pattern(acceptance):
    ok, detail = _diagonal_check(2000, 0)
    acceptance("2 diagonal-covariate pattern (N=2000)", ok, detail)
    assert ok, detail


@pytest.mark.slow
def test_diagonal_covariate_pattern_full_scale(acceptance):
    t0 = time.perf_counter()
    ok, detail = _diagonal_check(20_000, 0)
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 600
    detail += f"; {elapsed:.0f}s"
    acceptance("2 diagonal-covariate pattern (N=20000)", ok, detail)
    assert ok, detail


def test_mixture_pattern(acceptance):
    sc = get_scenario("mixture", 2000, 0)
    data = generate(sc.spec)
    margins = data.margins()
    truth = aggregate_units(data.units)
    oracle = fit_individual_logistic(data.units, sc.design)
    oracle_err = float(np.max(np.abs(reconstruct_overall(oracle, sc.design, margins) - truth)))
    ols = reconstruct_overall(fit_logit_ols(margins, sc.design), sc.design, margins)
    wls = reconstruct_overall(fit_logit_wls(margins, sc.design), sc.design, margins)
    ols_err = float(np.max(np.abs(ols - truth)))
    wls_err = float(np.max(np.abs(wls - truth)))
    rho = bias_correlation(data.units)
    # proportion choosing the second option against the second row share, in each row
    corr = [float(rho[i, 1, 1]) for i in range(2)]
    ok = oracle_err < 5e-4 and ols_err >= 0.03 and wls_err >= 0.03 and max(abs(c) for c in corr) > 0.2
    detail = (f"oracle {oracle_err:.1e}; OLS worst {ols_err:.3f}; WLS worst {wls_err:.3f}; "
              f"corr(f_i2, x_2) {corr[0]:.2f}, {corr[1]:.2f}")
    acceptance("3 mixture pattern", ok, detail)
    assert ok, detail


def test_ipf(acceptance):
    rng = np.random.default_rng(2024)
    worst_margin = worst_ratio = 0.0
    fixed_ok = True
    for _ in range(1000):
        R, C = rng.integers(2, 6, size=2)
        seed = rng.uniform(0.01, 10.0, size=(R, C))
        rows = rng.uniform(1.0, 1000.0, R)
        cols = rng.dirichlet(np.ones(C)) * rows.sum()
        t = ipf(seed, rows, cols).table
        worst_margin = max(worst_margin, np.abs(t.sum(axis=1) - rows).max(), np.abs(t.sum(axis=0) - cols).max())
        if (R, C) == (2, 2):
            before = seed[0, 0] * seed[1, 1] / (seed[0, 1] * seed[1, 0])
            after = t[0, 0] * t[1, 1] / (t[0, 1] * t[1, 0])
            worst_ratio = max(worst_ratio, abs(after / before - 1))
        res = ipf(seed, seed.sum(axis=1), seed.sum(axis=0))
        fixed_ok &= res.iterations == 0 and np.array_equal(res.table, seed)
    ok = worst_margin <= 1e-8 and worst_ratio <= 1e-8 and fixed_ok
    detail = f"worst margin error {worst_margin:.1e}; worst odds-ratio change {worst_ratio:.1e}; fixed points exact {fixed_ok}"
    acceptance("4 IPF margins, odds ratios, fixed points", ok, detail)
    assert ok, detail


def _random_problem(rng):
    R, C = (int(v) for v in rng.integers(2, 5, size=2))
    N = int(rng.integers(20, 60))
    data = []
    for k in range(N):
        n = int(rng.integers(100, 3000))
        data.append(UnitMargins(f"u{k}", rng.multinomial(n, rng.dirichlet(np.full(R, 2.0))),
                                rng.multinomial(n, rng.dirichlet(np.full(C, 2.0))), {"z": float(rng.normal())}))
    entries = {}
    for _ in range(int(rng.integers(0, 4))):
        cell = (int(rng.integers(R)), int(rng.integers(C)))
        source = f"row_margin:{int(rng.integers(R))}" if rng.random() < 0.7 else "external:z"
        entries[(cell, source)] = DesignEntry(cell, source)
    return data, CovariateDesign(tuple(entries.values())), C


def _rel_error(obj, theta):
    g = obj.gradient(theta)
    fd = finite_difference(obj.value, theta)
    return float(np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-12))


def test_gradients(acceptance):
    rng = np.random.default_rng(5)
    worst = {"ols": 0.0, "wls": 0.0}
    for _ in range(100):
        data, design, C = _random_problem(rng)
        m, Z, _ = _prepare(data, design)
        ols = SharesObjective(m, design, Z, m.sizes / m.sizes.sum())
        theta = rng.normal(0.0, 1.0, ols.n_params)
        worst["ols"] = max(worst["ols"], _rel_error(ols, theta))
        yhat = rng.dirichlet(np.full(C, 3.0), size=m.n_units)
        wls = wls_objective(data, design, yhat, float(rng.uniform(0.0, 0.02)))
        worst["wls"] = max(worst["wls"], _rel_error(wls, theta))
    ok = max(worst.values()) < 1e-5
    detail = f"worst relative error OLS {worst['ols']:.1e}, WLS {worst['wls']:.1e}"
    acceptance("5 analytic gradients", ok, detail)
    assert ok, detail


def test_geometry(acceptance):
    geo = {name: two_by_two_geometry(fig_units(name)) for name in ("fig1a", "fig1b", "fig2a", "fig2b")}
    checks = {
        "fig1a slope negative, unit slopes positive": geo["fig1a"].slope < 0 and np.all(geo["fig1a"].unit_slopes > 0),
        "fig1b slope above every unit slope": geo["fig1b"].slope > geo["fig1b"].unit_slopes.max(),
        "fig2a points collinear": np.max(np.abs(geo["fig2a"].y2 - geo["fig2a"].intercept
                                                - geo["fig2a"].slope * geo["fig2a"].x2)) < 1e-12,
        "fig2b slope equals unit slope": abs(geo["fig2b"].slope - 0.2) <= 1e-6
        and np.allclose(geo["fig2b"].unit_slopes, 0.2, atol=1e-12),
    }
    on_segment = max(float(g.on_segment_error().max()) for g in geo.values())
    ok = all(checks.values()) and on_segment <= 1e-12
    detail = (f"slopes {', '.join(f'{k} {g.slope:.3f}' for k, g in geo.items())}; "
              f"max off-segment {on_segment:.1e}; failed: {[k for k, v in checks.items() if not v]}")
    acceptance("6 line geometry signatures", ok, detail)
    assert ok, detail


def _csvs(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*.csv"))}


def test_determinism(acceptance, tmp_path):
    results = []
    for scenario in ("diagonal-covariate", "mixture"):
        a, b, c = (tmp_path / f"{scenario}-{k}" for k in "abc")
        base = ["report", "--scenario", scenario, "--n-units", "300", "--seed", "9", "--adjust-margins",
                "--groups", "10"]
        assert main(base + ["--workers", "1", "--out", str(a)]) == 0
        assert main(["report", "--manifest", str(a / "manifest.json"), "--out", str(b)]) == 0
        assert main(base + ["--workers", "3", "--out", str(c)]) == 0
        ca, cb, cc = _csvs(a), _csvs(b), _csvs(c)
        results.append(len(ca) >= 5 and ca == cb == cc)
    ok = all(results)
    acceptance("7 bit-identical report CSVs", ok, f"manifest rerun and 1 vs 3 workers identical: {results}")
    assert ok
