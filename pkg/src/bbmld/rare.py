"""Estimating P(X_max(t) >= v t) and the rate function from simulations.

Two estimators are provided. The naive one counts, over independent replicas,
how often the leader is beyond ``v t``; the rate ``psi`` is then minus the
slope of a weighted log-linear fit. Multilevel splitting reaches much smaller
probabilities by cloning the population whenever a crude log-committor of the
target event improves past successive levels.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .params import ModelParams
from .sim import advance, initial_state, make_rng, sample_observables

NAIVE = "naive"
SPLITTING = "splitting"

CSV_COLUMNS = ("model", "control", "v", "t", "method", "P_hat", "stderr", "n")


@dataclass
class EstimatePoint:
    t: float
    p_hat: float
    stderr: float
    n_runs: int
    method: str = NAIVE
    hits: int = 0


@dataclass
class LDEstimate:
    """Tail probabilities at several times and the fitted rate ``psi_hat``.

    ``psi_stderr`` is a delete-a-block jackknife over replicas, which accounts
    for the correlation between times computed from the same replicas;
    ``fit`` also carries the plain weighted-least-squares error.
    ``bias_bound`` bounds the downward bias of every ``p_hat`` introduced by
    pruning (zero when nothing was pruned).
    """

    model: str
    v: float
    points: list
    psi_hat: float
    psi_stderr: float
    seed: int
    fit: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    bias_bound: float = 0.0
    engine: str = ""

    @property
    def times(self) -> np.ndarray:
        return np.array([p.t for p in self.points])

    @property
    def p_hat(self) -> np.ndarray:
        return np.array([p.p_hat for p in self.points])

    def rows(self, control: str = "") -> list:
        return [{"model": self.model, "control": control, "v": self.v, "t": p.t, "method": p.method,
                 "P_hat": p.p_hat, "stderr": p.stderr, "n": p.n_runs} for p in self.points]

    def summary(self) -> dict:
        return {"model": self.model, "v": self.v, "psi_hat": self.psi_hat, "psi_stderr": self.psi_stderr,
                "seed": self.seed, "fit": self.fit, "flags": list(self.flags),
                "bias_bound": self.bias_bound, "engine": self.engine,
                "points": [asdict(p) for p in self.points]}


def binomial_stderr(hits, n):
    """Binomial standard error with a half-count floor, so it is never zero."""
    p = (np.asarray(hits, dtype=float) + 0.5) / (n + 1.0)
    return np.sqrt(p * (1.0 - p) / n)


def _wls(t, y, w):
    sw = w.sum()
    tm = (w * t).sum() / sw
    ym = (w * y).sum() / sw
    stt = (w * (t - tm) ** 2).sum()
    slope = (w * (t - tm) * (y - ym)).sum() / stt
    resid = y - (ym + slope * (t - tm))
    return slope, math.sqrt(1.0 / stt), float((w * resid**2).sum())


def fit_rate(times, hits, n_runs: int, min_hits: float = 10.0):
    """Weighted fit of ``ln P_hat`` against ``t``.

    Times with ``P_hat < min_hits / n_runs`` are left out. Weights are
    ``1 / stderr(ln P_hat)^2`` by the delta method. Returns
    ``(psi_hat, stderr, reduced_chi2, used_mask, flags)``; ``psi_hat`` is
    NaN when fewer than three times remain.
    """
    times = np.asarray(times, dtype=float)
    hits = np.asarray(hits, dtype=float)
    p = hits / n_runs
    se = binomial_stderr(hits, n_runs)
    used = p >= min_hits / n_runs
    flags = []
    for t, h, u in zip(times, hits, used):
        if h == 0:
            flags.append(f"zero-count at t={t:g}")
        elif not u:
            flags.append(f"low-count at t={t:g} excluded from fit")
    if used.sum() < 3:
        flags.append("fit-underdetermined: fewer than 3 usable times")
        return math.nan, math.nan, math.nan, used, flags
    y = np.log(p[used])
    w = (p[used] / se[used]) ** 2
    slope, slope_se, chi2 = _wls(times[used], y, w)
    return -slope, slope_se, chi2 / (used.sum() - 2), used, flags


def _jackknife_psi(times, hit_matrix, used, n_blocks):
    n = hit_matrix.shape[0]
    n_blocks = min(n_blocks, n)
    edges = np.linspace(0, n, n_blocks + 1).astype(int)
    block = np.add.reduceat(hit_matrix.astype(np.int64), edges[:-1], axis=0)
    total = block.sum(axis=0)
    t = times[used]
    psis = []
    for g in range(n_blocks):
        m = n - (edges[g + 1] - edges[g])
        h = (total - block[g])[used].astype(float)
        if np.any(h == 0):
            continue
        p = h / m
        w = (p / binomial_stderr(h, m)) ** 2
        psis.append(-_wls(t, np.log(p), w)[0])
    if len(psis) < 2:
        return math.nan
    psis = np.array(psis)
    k = psis.size
    return float(math.sqrt((k - 1) / k * ((psis - psis.mean()) ** 2).sum()))


# ---------------------------------------------------------------------------
# naive Monte Carlo


def _dfs_chunk(args):
    times, levels, sigma, b, prune_tol, seed, lo, hi = args
    hits = np.zeros((hi - lo, times.size), np.bool_)
    pruned = 0.0
    for i in range(lo, hi):
        h, m, _ = kernels.bbm_hits_dfs(times, levels, sigma, b, prune_tol, make_rng(seed, i))
        hits[i - lo] = h
        pruned += m
    return hits, pruned


def _engine_chunk(args):
    params, times, seed, lo, hi = args
    # replica i keeps stream (seed, i) whatever the chunking
    out = np.empty((hi - lo, times.size))
    for i in range(lo, hi):
        out[i - lo] = _replica_xmax(params, times, seed, i)
    return out


def _replica_xmax(params, times, seed, i):
    state = initial_state(params, rng=make_rng(seed, i))
    return advance(state, float(times[-1]), times).series.x_max


def _chunks(n, workers):
    k = max(1, min(workers * 4, n // 1000 or 1))
    edges = np.linspace(0, n, k + 1).astype(int)
    return list(zip(edges[:-1], edges[1:]))


def _map(fn, jobs, workers):
    if workers <= 1 or len(jobs) == 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def hit_matrix(params: ModelParams, v: float, times, n_runs: int, seed: int, engine: str = "auto",
               prune_tol: float = 1e-12, workers: int = 1):
    """Boolean ``(n_runs, len(times))`` indicators of ``X_max(t) >= v t``.

    ``engine="dfs"`` (the default for plain BBM) explores each genealogy
    depth first with first-moment pruning; ``engine="event"`` runs the full
    event simulation. Returns ``(hits, bias_bound, engine)``.
    """
    times = np.asarray(times, dtype=float)
    if engine == "auto":
        engine = "dfs" if params.model == "bbm" else "event"
    if engine == "dfs":
        if params.model != "bbm":
            raise ValueError("engine: the depth-first engine only handles plain BBM")
        jobs = [(times, v * times, params.sigma, params.branch_rate, float(prune_tol), seed, lo, hi)
                for lo, hi in _chunks(n_runs, workers)]
        parts = _map(_dfs_chunk, jobs, workers)
        hits = np.concatenate([p[0] for p in parts])
        return hits, sum(p[1] for p in parts) / n_runs, engine
    if engine != "event":
        raise ValueError(f"engine: unknown engine {engine!r}")
    jobs = [(params, times, seed, lo, hi) for lo, hi in _chunks(n_runs, workers)]
    xmax = np.concatenate(_map(_engine_chunk, jobs, workers))
    return xmax >= v * times, 0.0, engine


def _check_grid(t_grid, n_runs):
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size < 1 or np.any(t <= 0) or np.any(np.diff(t) <= 0):
        raise ValueError("t_grid: must be positive and strictly increasing")
    if n_runs < 100:
        raise ValueError(f"n_runs: need at least 100 replicas, got {n_runs}")
    return t


def _resolve(model, params):
    params = ModelParams() if params is None else params
    if model is not None and params.model != model.lower():
        params = params.with_(model=model)
    return params


def estimate_naive(model: str, params: ModelParams | None, v: float, t_grid, n_runs: int, seed: int,
                   engine: str = "auto", prune_tol: float = 1e-12, workers: int = 1,
                   n_blocks: int = 20) -> LDEstimate:
    """Naive Monte Carlo estimate of the tail and of ``psi(v)``.

    Replica ``i`` uses stream ``(seed, i)``, so the result does not depend
    on ``workers``.
    """
    params = _resolve(model, params)
    times = _check_grid(t_grid, n_runs)
    hits, bias, engine = hit_matrix(params, v, times, n_runs, seed, engine, prune_tol, workers)
    k = hits.sum(axis=0)
    se = binomial_stderr(k, n_runs)
    points = [EstimatePoint(float(t), float(h) / n_runs, float(s), int(n_runs), NAIVE, int(h))
              for t, h, s in zip(times, k, se)]
    psi, wls_se, chi2, used, flags = fit_rate(times, k, n_runs)
    jk = _jackknife_psi(times, hits, used, n_blocks) if math.isfinite(psi) else math.nan
    fit = {"wls_stderr": wls_se, "jackknife_stderr": jk, "reduced_chi2": chi2,
           "fit_times": [float(t) for t in times[used]]}
    psi_se = jk if math.isfinite(jk) else wls_se
    return LDEstimate(params.model, float(v), points, float(psi), float(psi_se), int(seed), fit, flags,
                      float(bias), engine)


def exceedance_table(params: ModelParams, v_grid, t_grid, n_runs: int, seed: int) -> np.ndarray:
    """``P_hat[i, j]`` for ``v_grid[i]`` and ``t_grid[j]`` from one set of replicas.

    Sharing replicas makes ``P_hat`` nonincreasing in ``v`` pathwise.
    """
    times = _check_grid(t_grid, n_runs)
    xmax = sample_observables(params, times, n_runs, seed)[0]
    v = np.asarray(v_grid, dtype=float)
    return (xmax[None, :, :] >= v[:, None, None] * times[None, None, :]).mean(axis=1)


# ---------------------------------------------------------------------------
# multilevel splitting


@dataclass
class SplittingResult:
    p_hat: float
    stderr: float
    levels: list
    n_per_level: int
    n_macro: int
    stage_fractions: list
    starved: int
    upper_bound: float
    bias_bound: float
    seed: int

    @property
    def flags(self) -> list:
        out = []
        if self.starved:
            out.append(f"level starvation in {self.starved}/{self.n_macro} macro-replications")
        return out

    def summary(self) -> dict:
        d = asdict(self)
        d["flags"] = self.flags
        return d


def _score_args(params, v, t):
    fkind = kernels.F_LATTICE if params.model == "cbrw" else kernels.F_GAUSS
    return v, t, fkind, params.sigma


def splitting_score(params: ModelParams, v: float, t: float, time: float, x_max: float) -> float:
    """Importance score of a population whose leader is at ``x_max`` at ``time``.

    ``min(0, tau (b - f(gap / tau)))`` with ``gap = v t - x_max`` and
    ``tau = t - time``: a log-committor proxy for ``X_max(t) >= v t`` that is
    0 once the leader is past ``v t`` and ``-inf`` at ``t`` otherwise.
    """
    v, t_end, fkind, fsigma = _score_args(params, v, t)
    return float(kernels.split_score(time, x_max, v, t_end, fkind, fsigma, params.branch_rate))


def default_levels(params: ModelParams, v: float, t: float, ratio: float = 5.0) -> list:
    """Evenly spaced levels between the initial score and 0, about ``ln(ratio)`` apart."""
    s0 = splitting_score(params, v, t, 0.0, 0.0)
    if s0 >= 0.0:
        return []
    k = max(1, math.ceil(-s0 / math.log(ratio)))
    return [s0 * (1.0 - j / (k + 1.0)) for j in range(1, k + 1)]


def _one_macro(params, v, t, levels, n, grid, seed, m, tol):
    target = _score_args(params, v, t)
    b = params.branch_rate
    start = initial_state(params, rng=make_rng(seed, m, 0, 0))
    entries = [(start, -1)]
    weight = 1.0
    bias = 0.0
    fractions = []

    def score(state):
        if state.count == 0:
            return -math.inf
        return float(kernels.split_score(state.time, state.x_max, target[0], t, target[2], target[3], b))

    for k, lev in enumerate(list(levels) + [None]):
        pick = make_rng(seed, m, k + 1).integers(len(entries), size=n)
        nxt = []
        pruned = 0.0
        for j in range(n):
            state, idx = entries[pick[j]]
            if lev is None:
                if idx == grid.size - 1:
                    ok = state.x_max >= v * t
                else:
                    res = advance(state.copy(rng=make_rng(seed, m, k + 1, j + 1)), t, grid[idx + 1:],
                                  target=target, prune_tol=tol)
                    pruned += res.pruned
                    ok = res.state.count > 0 and len(res.series) == grid.size - idx - 1 and res.state.x_max >= v * t
                if ok:
                    nxt.append(None)
                continue
            if score(state) >= lev:
                nxt.append((state, idx))
                continue
            if idx == grid.size - 1 or state.count == 0:
                continue
            res = advance(state.copy(rng=make_rng(seed, m, k + 1, j + 1)), t, grid[idx + 1:],
                          stop_level=lev, target=target, prune_tol=tol)
            pruned += res.pruned
            if res.stopped:
                nxt.append((res.state, idx + len(res.series)))
        bias += weight * pruned / n
        frac = len(nxt) / n
        fractions.append(frac)
        if not nxt:
            return 0.0, fractions, True, weight * 3.0 / n, bias
        weight *= frac
        entries = nxt
    return weight, fractions, False, weight, bias


def estimate_splitting(model: str, params: ModelParams | None, v: float, t: float, levels=None,
                       n_per_level: int = 500, seed: int = 0, n_macro: int = 16,
                       obs_dt: float | None = None, prune_tol: float | None = None):
    """Fixed-effort multilevel splitting estimate of ``P(X_max(t) >= v t)``.

    The importance score (see ``splitting_score``) is evaluated on an
    observation grid of spacing ``obs_dt`` (default ``t / 100``). A stage
    resamples ``n_per_level`` clones among the populations that reached the
    previous level, copies each full configuration and runs it until the
    score reaches the next level; a final stage runs to ``t`` and checks the
    event. The product of stage fractions is unbiased. ``n_macro``
    independent repetitions give the standard error. Levels at ``-inf`` are
    crossed at once, so ``levels=[-inf]`` is the naive estimator.

    For plain BBM, particles whose first-moment bound on reaching ``v t`` is
    below ``prune_tol`` (default ``1e-6 exp(s0)`` with ``s0`` the initial
    score) are dropped; ``bias_bound`` estimates the total dropped bound.
    """
    params = _resolve(model, params)
    if levels is None:
        levels = default_levels(params, v, t)
    levels = [float(x) for x in levels]
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("levels: must be strictly increasing")
    if n_per_level < 1 or n_macro < 2:
        raise ValueError("n_per_level must be >= 1 and n_macro >= 2")
    n_obs = max(1, int(round(t / (obs_dt if obs_dt else t / 100.0))))
    grid = np.linspace(t / n_obs, t, n_obs)
    grid[-1] = t
    if prune_tol is None:
        s0 = splitting_score(params, v, t, 0.0, 0.0)
        prune_tol = 1e-6 * math.exp(s0) if params.model == "bbm" else 0.0
    est, fracs, upper, bias = [], [], [], []
    starved = 0
    for m in range(n_macro):
        p, fr, st, ub, bb = _one_macro(params, v, t, levels, n_per_level, grid, seed, m, prune_tol)
        est.append(p)
        fracs.append(fr)
        upper.append(ub)
        bias.append(bb)
        starved += st
    est = np.array(est)
    n_st = len(levels) + 1
    reached = [[f[k] for f in fracs if len(f) > k] for k in range(n_st)]
    mean_fr = [float(np.mean(x)) if x else math.nan for x in reached]
    return SplittingResult(float(est.mean()), float(est.std(ddof=1) / math.sqrt(n_macro)), levels,
                           int(n_per_level), int(n_macro), mean_fr, int(starved),
                           float(np.mean(upper)), float(np.mean(bias)), int(seed))


# ---------------------------------------------------------------------------
# finite-size correction scans

CONTROLS = {"lbbm": "L", "nbbm": "N", "cbrw": "mu"}


@dataclass
class ScanRow:
    control: str
    value: float
    psi_hat: float
    psi_stderr: float
    delta: float
    delta_stderr: float
    estimate: LDEstimate


@dataclass
class ScanResult:
    model: str
    control: str
    v: float
    reference: LDEstimate
    rows: list
    decay_exponent: float = math.nan
    decay_stderr: float = math.nan
    inconclusive: bool = False

    def summary(self) -> dict:
        return {"model": self.model, "control": self.control, "v": self.v,
                "reference": self.reference.summary(),
                "rows": [{"value": r.value, "psi_hat": r.psi_hat, "psi_stderr": r.psi_stderr,
                          "delta": r.delta, "delta_stderr": r.delta_stderr} for r in self.rows],
                "decay_exponent": self.decay_exponent, "decay_stderr": self.decay_stderr,
                "inconclusive": self.inconclusive}


def _control_of(params_list):
    keys = ("L", "N", "mu")
    varying = [k for k in keys if len({getattr(p, k) for p in params_list}) > 1]
    base = params_list[0].to_dict()
    for p in params_list[1:]:
        d = p.to_dict()
        other = [k for k in d if k not in keys and d[k] != base[k]]
        if other:
            raise ValueError(f"params_list: only one control may vary, {other} differ too")
    if len(varying) > 1:
        raise ValueError(f"params_list: only one control may vary, got {varying}")
    if varying:
        return varying[0]
    return CONTROLS.get(params_list[0].model, "L")


def _decay_coordinate(control, value, sigma):
    if control == "L":
        return value / sigma
    if control == "N":
        return math.log(value)
    return math.log(1.0 / value)


def derived_seed(seed: int, i: int) -> int:
    """A 63-bit seed for sub-experiment ``i`` of a run seeded with ``seed``."""
    return int(np.random.SeedSequence([int(seed), int(i)]).generate_state(2, np.uint64)[0] >> np.uint64(1))


def reference_params(params: ModelParams) -> ModelParams:
    """The selection-free system a controlled model is compared with."""
    if params.model == "cbrw":
        return params.with_(mu=0.0)
    return params.with_(model="bbm")


def correction_scan(model: str, params_list, v: float, t_grid, n_runs: int, seed: int,
                    reference: LDEstimate | None = None, workers: int = 1) -> ScanResult:
    """``psi_hat`` for each control value and its excess over the free system.

    The free reference (BBM, or BRW for the CBRW) uses ``seed`` itself and
    control value ``i`` uses ``derived_seed(seed, i + 1)``, so all estimates
    are independent. The decay exponent is the slope of ``-ln delta``
    against ``L / sigma``, ``ln N`` or ``ln(1/mu)`` over the values with
    ``delta > 0``; it is only fitted with at least three such values.
    """
    params_list = [_resolve(model, p) for p in params_list]
    if not params_list:
        raise ValueError("params_list: empty")
    control = _control_of(params_list)
    if reference is None:
        ref_params = reference_params(params_list[0])
        reference = estimate_naive(ref_params.model, ref_params, v, t_grid, n_runs, seed,
                                   engine="event", workers=workers)
    rows = []
    for i, p in enumerate(params_list):
        est = estimate_naive(p.model, p, v, t_grid, n_runs, derived_seed(seed, i + 1), workers=workers)
        d = est.psi_hat - reference.psi_hat
        dse = math.hypot(est.psi_stderr, reference.psi_stderr)
        rows.append(ScanRow(control, float(getattr(p, control)), est.psi_hat, est.psi_stderr, d, dse, est))
    result = ScanResult(params_list[0].model, control, float(v), reference, rows)
    order = sorted(rows, key=lambda r: _decay_coordinate(control, r.value, params_list[0].sigma))
    for a, b in zip(order, order[1:]):
        if b.delta - a.delta > 2.0 * math.hypot(a.delta_stderr, b.delta_stderr):
            result.inconclusive = True
    pos = [r for r in order if r.delta > 0 and math.isfinite(r.delta)]
    if len(pos) >= 3:
        x = np.array([_decay_coordinate(control, r.value, params_list[0].sigma) for r in pos])
        y = np.log([r.delta for r in pos])
        w = np.array([(r.delta / r.delta_stderr) ** 2 for r in pos])
        slope, slope_se, _ = _wls(x, y, w)
        result.decay_exponent, result.decay_stderr = -slope, slope_se
    return result


# ---------------------------------------------------------------------------
# output


def write_rows_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(r[k])) if isinstance(r[k], (float, np.floating)) else r[k])
                        for k in CSV_COLUMNS})


def write_summary_json(path, summary: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj
