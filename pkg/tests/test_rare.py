import csv
import json
import math

import numpy as np
import pytest
from scipy.stats import norm

from bbmld import fkpp
from bbmld.params import ModelParams
from bbmld.rare import (
    CSV_COLUMNS, correction_scan, default_levels, estimate_naive, estimate_splitting, exceedance_table,
    fit_rate, hit_matrix, splitting_score, write_rows_csv, write_summary_json,
)


def test_fit_rate_recovers_exact_slope():
    t = np.array([2.0, 3.0, 4.0, 5.0])
    n = 10**6
    hits = np.round(n * 0.3 * np.exp(-0.7 * t))
    psi, se, chi2, used, flags = fit_rate(t, hits, n)
    assert psi == pytest.approx(0.7, abs=2e-3) and used.all() and not flags
    assert chi2 < 1


def test_fit_rate_flags_and_excludes():
    t = np.array([1.0, 2.0, 3.0, 4.0])
    psi, se, chi2, used, flags = fit_rate(t, [500, 100, 5, 0], 1000)
    assert math.isnan(psi)
    assert used.tolist() == [True, True, False, False]
    assert any("zero-count at t=4" in f for f in flags)
    assert any("fit-underdetermined" in f for f in flags)


def test_preconditions():
    with pytest.raises(ValueError, match="n_runs"):
        estimate_naive("bbm", None, 1.0, [1, 2, 3], 50, 0)
    with pytest.raises(ValueError, match="t_grid"):
        estimate_naive("bbm", None, 1.0, [3, 2, 1], 500, 0)


def test_typical_velocity_gives_zero_rate():
    est = estimate_naive("bbm", None, 0.0, [6, 8, 10, 12], 2000, seed=1)
    assert np.all(est.p_hat > 0.95)
    assert abs(est.psi_hat) < 0.02


def test_dfs_matches_fkpp():
    est = estimate_naive("bbm", None, 1.5, [3.0], 20000, seed=2)
    p = fkpp.tail_probability(1.5, 3.0)
    assert abs(est.points[0].p_hat - p) < 4 * est.points[0].stderr
    assert est.bias_bound < 1e-9


def test_event_engine_matches_fkpp():
    est = estimate_naive("bbm", None, 1.5, [3.0], 5000, seed=2, engine="event")
    p = fkpp.tail_probability(1.5, 3.0)
    assert abs(est.points[0].p_hat - p) < 4 * est.points[0].stderr


def test_seed_reproducibility_and_independence():
    a = estimate_naive("bbm", None, 1.8, [2, 3, 4], 20000, seed=10)
    b = estimate_naive("bbm", None, 1.8, [2, 3, 4], 20000, seed=10)
    c = estimate_naive("bbm", None, 1.8, [2, 3, 4], 20000, seed=11)
    assert a.summary() == b.summary()
    assert abs(a.psi_hat - c.psi_hat) < 4 * math.hypot(a.psi_stderr, c.psi_stderr)


def test_workers_do_not_change_results():
    p = ModelParams("bbm")
    h1 = hit_matrix(p, 1.5, np.array([1.0, 2.0]), 3000, 4, workers=1)[0]
    h2 = hit_matrix(p, 1.5, np.array([1.0, 2.0]), 3000, 4, workers=2)[0]
    np.testing.assert_array_equal(h1, h2)


def test_exceedance_monotone_in_v():
    tab = exceedance_table(ModelParams("nbbm", N=20), [0.5, 1.0, 1.5, 2.0], [1.0, 2.0, 3.0], 500, 3)
    assert np.all(np.diff(tab, axis=0) <= 0)


def test_score_properties():
    p = ModelParams("bbm")
    assert splitting_score(p, 2.0, 5.0, 0.0, 0.0) == pytest.approx(-5 * (2.0**2 / 2 - 1))
    assert splitting_score(p, 2.0, 5.0, 3.0, 10.0) == 0.0
    assert splitting_score(p, 2.0, 5.0, 5.0, 9.9) == -math.inf
    lev = default_levels(p, 2.0, 5.0)
    assert lev == sorted(lev) and lev[0] > -5 and lev[-1] < 0


def test_splitting_toy_gaussian_tail():
    p = ModelParams("bbm", branch_rate=0.0)
    res = estimate_splitting("bbm", p, 4.0, 1.0, n_per_level=400, seed=7, n_macro=24)
    exact = norm.sf(4.0)
    assert abs(res.p_hat - exact) < 3 * res.stderr
    assert res.starved == 0


def test_single_infinite_level_is_naive():
    res = estimate_splitting("bbm", None, 1.5, 3.0, levels=[-math.inf], n_per_level=500, seed=1, n_macro=8)
    assert res.stage_fractions[0] == 1.0
    assert abs(res.p_hat - fkpp.tail_probability(1.5, 3.0)) < 4 * res.stderr


def test_splitting_agrees_with_naive():
    naive = estimate_naive("bbm", None, 1.8, [4.0], 40000, seed=5)
    split = estimate_splitting("bbm", None, 1.8, 4.0, n_per_level=300, seed=5, n_macro=16)
    pt = naive.points[0]
    assert abs(pt.p_hat - split.p_hat) < 3 * math.hypot(pt.stderr, split.stderr)


def test_splitting_other_models_run():
    for p in (ModelParams("lbbm", L=2.0), ModelParams("nbbm", N=16), ModelParams("cbrw", mu=0.5)):
        res = estimate_splitting(p.model, p, 2.0, 3.0, n_per_level=50, seed=2, n_macro=4)
        assert 0.0 <= res.p_hat <= 1.0


def test_starvation_flagged():
    res = estimate_splitting("bbm", None, 4.0, 6.0, n_per_level=2, seed=0, n_macro=3)
    assert res.starved > 0 and res.flags
    assert res.upper_bound > 0


def test_scan_validation():
    with pytest.raises(ValueError):
        correction_scan("lbbm", [ModelParams("lbbm", L=1.0), ModelParams("lbbm", L=2.0, sigma=2.0)],
                        1.8, [1, 2, 3], 200, 0)


def test_scan_structure(tmp_path):
    plist = [ModelParams("lbbm", L=L) for L in (0.5, 1.0, 2.0)]
    res = correction_scan("lbbm", plist, 1.5, [1.0, 2.0, 3.0], 2000, seed=3)
    assert res.control == "L" and len(res.rows) == 3
    assert res.reference.model == "bbm"
    for r in res.rows:
        assert r.delta == pytest.approx(r.psi_hat - res.reference.psi_hat)
    write_summary_json(tmp_path / "s.json", res.summary())
    assert json.loads((tmp_path / "s.json").read_text())["control"] == "L"


def test_rows_csv(tmp_path):
    est = estimate_naive("bbm", None, 1.0, [1, 2, 3], 200, seed=1)
    write_rows_csv(tmp_path / "r.csv", est.rows(control="x"))
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert tuple(rows[0].keys()) == CSV_COLUMNS and len(rows) == 3
