import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest
from scipy import stats

from bbmld.analytic import skellam_logpmf
from bbmld.params import ModelParams
from bbmld.sim import (
    ObservableSeries, advance, coupled_nbbm, initial_state, make_rng, replica_manifest, sample_observables,
    simulate, step_bbm, step_cbrw, step_lbbm, step_nbbm, write_manifest,
)

T = np.array([1.0, 2.0, 3.0])


def test_params_validation_names_field():
    with pytest.raises(ValueError, match="sigma"):
        ModelParams(sigma=-1)
    with pytest.raises(ValueError, match="model"):
        ModelParams(model="xbbm")
    with pytest.raises(ValueError, match="N"):
        ModelParams(model="nbbm", N=0)
    assert ModelParams(sigma=0.5).checkpoint_interval == pytest.approx(0.0025)


def test_seed_is_mandatory():
    with pytest.raises(ValueError, match="seed"):
        initial_state(ModelParams())


@pytest.mark.parametrize("params", [
    ModelParams("bbm"), ModelParams("lbbm", L=1.5), ModelParams("nbbm", N=10),
    ModelParams("cbrw", mu=0.5), ModelParams("cbrw", mu=0.0, sigma=0.5),
], ids=str)
def test_same_seed_same_path(params):
    a = simulate(params, 3.0, T, seed=11)[1]
    b = simulate(params, 3.0, T, seed=11)[1]
    c = simulate(params, 3.0, T, seed=12)[1]
    np.testing.assert_array_equal(a.x_max, b.x_max)
    np.testing.assert_array_equal(a.count, b.count)
    assert not np.array_equal(a.x_max, c.x_max) or not np.array_equal(a.count, c.count)
    assert np.all(a.x_min <= a.x_max)


def test_lbbm_span_and_nbbm_capacity():
    # elimination runs on the checkpoint grid, so between checkpoints the span
    # can exceed L by a few diffusive steps of size sqrt(check_dt)
    p = ModelParams("lbbm", L=1.0, check_dt=1e-3)
    xm, cnt, xn = sample_observables(p, np.linspace(0.5, 5, 10), 30, seed=3)
    assert np.all(xm - xn <= 1.0 + 8 * math.sqrt(2e-3))
    assert np.any(xm - xn > 0.5)
    q = ModelParams("nbbm", N=7)
    xm, cnt, xn = sample_observables(q, np.linspace(0.5, 5, 10), 30, seed=3)
    assert cnt.max() <= 7 and np.all(np.diff(cnt, axis=1) >= 0)


def test_infinite_l_and_uncapped_n_reproduce_bbm():
    # with no active selection the engines consume the stream exactly like BBM
    base = simulate(ModelParams("bbm"), 3.0, T, seed=5)[1]
    for p in (ModelParams("lbbm"), ModelParams("nbbm", N=10**9)):
        s = simulate(p, 3.0, T, seed=5)[1]
        np.testing.assert_array_equal(s.x_max, base.x_max)
        np.testing.assert_array_equal(s.count, base.count)


def test_step_functions_check_model():
    st = initial_state(ModelParams("bbm"), seed=1)
    assert step_bbm(st, 1.0).time == 1.0
    with pytest.raises(ValueError):
        step_cbrw(st, 1.0)
    st2 = step_lbbm(st.copy(), 1.0, ModelParams("lbbm", L=1.0))
    assert st2.params.model == "lbbm"
    st3 = step_nbbm(st.copy(), 1.0, ModelParams("nbbm", N=3))
    assert st3.count <= 3


def test_advance_does_not_mutate_input():
    st = initial_state(ModelParams("bbm"), seed=2)
    before = st.positions.copy()
    advance(st.copy(), 2.0)
    np.testing.assert_array_equal(st.positions, before)
    assert st.time == 0.0


def test_mean_population_growth():
    # E[count(t)] = exp(b t) for BBM
    _, cnt, _ = sample_observables(ModelParams("bbm"), [2.0], 4000, seed=8)
    m, se = cnt.mean(), cnt.std() / math.sqrt(cnt.size)
    assert abs(m - math.exp(2.0)) < 4 * se


def test_brownian_marginal_without_branching():
    p = ModelParams("bbm", sigma=1.5, branch_rate=0.0)
    xm = sample_observables(p, [2.0], 3000, seed=4)[0][:, 0]
    assert stats.kstest(xm / (1.5 * math.sqrt(2.0)), "norm").pvalue > 1e-3


def test_cbrw_single_walker_is_skellam():
    t = 3.0
    p = ModelParams("cbrw", branch_rate=0.0, mu=1.0)
    xm = sample_observables(p, [t], 4000, seed=9)[0][:, 0].astype(int)
    ks = np.arange(-6, 7)
    probs = np.exp([skellam_logpmf(k, t) for k in ks])
    obs = np.array([(xm == k).sum() for k in ks])
    exp_ = probs * xm.size
    tail_obs = xm.size - obs.sum()
    tail_exp = xm.size - exp_.sum()
    chi2 = ((obs - exp_) ** 2 / exp_).sum() + (tail_obs - tail_exp) ** 2 / tail_exp
    assert stats.chi2.sf(chi2, ks.size) > 1e-3


def test_cbrw_coalescence_limits_population():
    free = sample_observables(ModelParams("cbrw", mu=0.0), [4.0], 200, seed=1)[1]
    coal = sample_observables(ModelParams("cbrw", mu=5.0), [4.0], 200, seed=1)[1]
    assert coal.mean() < free.mean()


def test_lbbm_collapse_seen():
    p = ModelParams("lbbm", L=2.0)
    times = np.arange(1, 501) * 0.02
    _, cnt, _ = sample_observables(p, times, 100, seed=6, positions=np.zeros(64))
    assert (cnt.min(axis=1) == 1).mean() >= 0.05


def test_coupling_holds():
    p = ModelParams("nbbm", N=8)
    rng = np.random.default_rng(0)
    for i in range(50):
        y = rng.normal(size=8)
        x = np.sort(y)[::-1] + rng.exponential(size=8)
        res = coupled_nbbm(x, y, 4.0, p, seed=i)
        assert res.domination_held and res.n_checks > res.n_events
        x2 = np.concatenate([x, rng.normal(size=8)])
        res2 = coupled_nbbm(x2, y, 4.0, p, N_x=16, seed=i)
        assert res2.domination_held


def test_coupling_rejects_bad_start():
    with pytest.raises(ValueError):
        coupled_nbbm([0.0], [1.0], 1.0, ModelParams("nbbm", N=2), seed=0)


def test_series_csv_roundtrip(tmp_path):
    s = simulate(ModelParams("bbm"), 2.0, [0.5, 1.0, 2.0], seed=3)[1]
    s.to_csv(tmp_path / "s.csv")
    r = ObservableSeries.from_csv(tmp_path / "s.csv")
    np.testing.assert_array_equal(r.x_max, s.x_max)
    np.testing.assert_array_equal(r.count, s.count)
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "t,x_max,count,x_min"


def test_manifest_json(tmp_path):
    m = replica_manifest(ModelParams("lbbm", L=2.0), 5, 0.1)
    write_manifest(tmp_path / "m.json", m)
    d = json.loads((tmp_path / "m.json").read_text())
    assert d["seed"] == 5 and d["params"]["L"] == 2.0 and d["model"] == "lbbm"


def test_streams_differ():
    a = make_rng(1, 0).random()
    assert a != make_rng(1, 1).random() and a == make_rng(1, 0).random()


_BACKEND_SCRIPT = r"""
import json, numpy as np
from bbmld import backend
from bbmld.params import ModelParams
from bbmld.sim import simulate, coupled_nbbm
from bbmld import kernels
from bbmld.sim import make_rng
out = {"backend": backend()}
for name, p in [("bbm", ModelParams("bbm")), ("lbbm", ModelParams("lbbm", L=1.0)),
                ("nbbm", ModelParams("nbbm", N=5)), ("cbrw", ModelParams("cbrw", mu=0.3))]:
    s = simulate(p, 2.5, [0.5, 1.5, 2.5], seed=21)[1]
    out[name] = [s.x_max.tolist(), s.count.tolist()]
h, m, n = kernels.bbm_hits_dfs(np.array([1.0, 2.0]), np.array([1.5, 3.0]), 1.0, 1.0, 1e-9, make_rng(3, 0))
out["dfs"] = [h.tolist(), float(m), int(n)]
c = coupled_nbbm([1.0, 0.5], [0.0, -1.0], 2.0, ModelParams("nbbm", N=2), obs_times=[1.0, 2.0], seed=4)
out["coupling"] = [c.series_y.x_max.tolist(), c.n_events]
print(json.dumps(out))
"""


def _run_backend(disable):
    env = dict(os.environ, BBMLD_DISABLE_JIT="1" if disable else "0")
    res = subprocess.run([sys.executable, "-c", _BACKEND_SCRIPT], env=env, capture_output=True, text=True,
                         check=True)
    return json.loads(res.stdout)


def test_backends_bit_identical():
    jit = _run_backend(False)
    py = _run_backend(True)
    assert py.pop("backend") == "numpy"
    jit.pop("backend")
    assert jit == py
