"""Particle systems: state, stepping, observation series and couplings."""
from __future__ import annotations

import csv
import json
import math
import time as _time
from dataclasses import dataclass

import numpy as np

from . import kernels
from .params import ModelParams

_NO_OBS = np.empty(0)


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for ``(seed, *stream)``; replica ``i`` of a run uses ``(seed, i)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, stream)])))


@dataclass
class ParticleSystemState:
    """Configuration of one system at ``time``.

    Continuous models keep ``positions`` (with stable integer ``ids``); the
    CBRW keeps site ``counts`` on a window starting at lattice index
    ``offset``.
    """

    params: ModelParams
    time: float
    rng: np.random.Generator
    positions: np.ndarray | None = None
    ids: np.ndarray | None = None
    next_id: int = 0
    counts: np.ndarray | None = None
    offset: int = 0
    n_events: int = 0

    @property
    def is_lattice(self) -> bool:
        return self.counts is not None

    @property
    def count(self) -> int:
        if self.is_lattice:
            return int(self.counts.sum())
        return int(self.positions.shape[0])

    @property
    def x_max(self) -> float:
        if self.is_lattice:
            occ = np.flatnonzero(self.counts)
            return self.params.sigma * (occ[-1] + self.offset)
        return float(self.positions.max())

    @property
    def x_min(self) -> float:
        if self.is_lattice:
            occ = np.flatnonzero(self.counts)
            return self.params.sigma * (occ[0] + self.offset)
        return float(self.positions.min())

    def sorted_positions(self) -> np.ndarray:
        """Positions in decreasing order (lattice sites repeated by occupancy)."""
        if self.is_lattice:
            sites = np.repeat(np.arange(self.counts.shape[0]) + self.offset, self.counts)
            return self.params.sigma * sites[::-1].astype(float)
        return np.sort(self.positions)[::-1]

    def copy(self, rng: np.random.Generator | None = None) -> "ParticleSystemState":
        return ParticleSystemState(
            params=self.params,
            time=self.time,
            rng=rng if rng is not None else self.rng,
            positions=None if self.positions is None else self.positions.copy(),
            ids=None if self.ids is None else self.ids.copy(),
            next_id=self.next_id,
            counts=None if self.counts is None else self.counts.copy(),
            offset=self.offset,
            n_events=self.n_events,
        )


def initial_state(params: ModelParams, seed: int | None = None, positions=None,
                  rng: np.random.Generator | None = None) -> ParticleSystemState:
    """One particle at the origin unless ``positions`` is given."""
    if rng is None:
        if seed is None:
            raise ValueError("seed: an explicit seed is required")
        rng = make_rng(seed)
    pos = np.zeros(1) if positions is None else np.asarray(positions, dtype=float).copy()
    if pos.ndim != 1 or pos.shape[0] < 1:
        raise ValueError("positions: need at least one particle")
    if params.model == "cbrw":
        sites = np.rint(pos / params.sigma).astype(np.int64)
        if not np.allclose(sites * params.sigma, pos):
            raise ValueError("positions: CBRW particles must sit on lattice sites")
        lo, hi = int(sites.min()), int(sites.max())
        width = max(64, 2 * (hi - lo + 1))
        offset = lo - (width - (hi - lo + 1)) // 2
        counts = np.zeros(width, np.int64)
        np.add.at(counts, sites - offset, 1)
        return ParticleSystemState(params, 0.0, rng, counts=counts, offset=offset)
    if params.model == "nbbm" and pos.shape[0] > params.N:
        raise ValueError(f"positions: {pos.shape[0]} particles exceed N={params.N}")
    if params.model == "lbbm" and pos.max() - pos.min() > params.L:
        raise ValueError("positions: initial span exceeds L")
    ids = np.arange(pos.shape[0], dtype=np.int64)
    return ParticleSystemState(params, 0.0, rng, positions=pos, ids=ids, next_id=int(pos.shape[0]))


@dataclass
class ObservableSeries:
    times: np.ndarray
    x_max: np.ndarray
    count: np.ndarray
    x_min: np.ndarray

    def __post_init__(self):
        n = len(self.times)
        if not (len(self.x_max) == len(self.count) == len(self.x_min) == n):
            raise ValueError("series lengths differ")
        if n > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("observation times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    def rows(self):
        for t, a, c, b in zip(self.times, self.x_max, self.count, self.x_min):
            yield float(t), float(a), int(c), float(b)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "x_max", "count", "x_min"])
            for t, a, c, b in self.rows():
                w.writerow([repr(t), repr(a), c, repr(b)])

    @classmethod
    def from_csv(cls, path) -> "ObservableSeries":
        data = np.genfromtxt(path, delimiter=",", names=True, dtype=float)
        data = np.atleast_1d(data)
        return cls(data["t"], data["x_max"], data["count"].astype(np.int64), data["x_min"])


@dataclass
class _Advance:
    state: ParticleSystemState
    series: ObservableSeries
    stopped: bool
    max_count: int = 0
    pruned: float = 0.0


def _obs_array(obs_times, t0, until):
    if obs_times is None:
        return _NO_OBS
    obs = np.asarray(obs_times, dtype=float)
    if obs.size and (obs[0] <= t0 or obs[-1] > until or np.any(np.diff(obs) <= 0)):
        raise ValueError("observation times must be increasing and lie in (time, until]")
    return obs


def advance(state: ParticleSystemState, until: float, obs_times=None, stop_level: float = -math.inf,
            target=None, prune_tol: float = 0.0) -> _Advance:
    """Evolve a copy of ``state`` to ``until`` under its model's dynamics.

    ``target = (v, t_end, fkind, fsigma)`` configures the splitting score used
    with ``stop_level``; the run then halts at the first observation time
    whose score reaches the level. ``prune_tol`` drops hopeless BBM particles
    at observation times (see ``kernels.evolve_continuous``).
    """
    if not until > state.time:
        raise ValueError(f"until={until} must exceed the current time {state.time}")
    p = state.params
    obs = _obs_array(obs_times, state.time, until)
    n = obs.shape[0]
    out_max = np.zeros(n)
    out_cnt = np.zeros(n, np.int64)
    out_min = np.zeros(n)
    v, t_end, fkind, fsigma = target if target is not None else (0.0, until, kernels.F_GAUSS, 1.0)
    new = state.copy()
    pruned = 0.0
    if state.is_lattice:
        cnt, off, t, n_out, stopped, n_ev, max_count = kernels.evolve_cbrw(
            new.counts, new.offset, state.time, until, p.sigma, p.branch_rate, p.mu, obs,
            out_max, out_cnt, out_min, new.rng, stop_level, v, t_end)
        new.counts, new.offset = cnt, off
    else:
        selection = kernels.SEL_NONE
        L = math.inf
        if p.model == "lbbm" and math.isfinite(p.L):
            selection, L = kernels.SEL_L, p.L
        elif p.model == "nbbm":
            selection = kernels.SEL_N
        cap = max(16, 2 * new.positions.shape[0])
        pos = np.empty(cap)
        ids = np.empty(cap, np.int64)
        k = new.positions.shape[0]
        pos[:k] = new.positions
        ids[:k] = new.ids
        pos, ids, count, next_id, t, n_out, stopped, n_ev, max_count, pruned = kernels.evolve_continuous(
            pos, ids, k, new.next_id, state.time, until, p.sigma, p.branch_rate, selection, L,
            p.N, p.checkpoint_interval, obs, out_max, out_cnt, out_min, new.rng,
            stop_level, v, t_end, fkind, fsigma, float(prune_tol))
        new.positions = pos[:count].copy()
        new.ids = ids[:count].copy()
        new.next_id = int(next_id)
    new.time = float(t)
    new.n_events += int(n_ev)
    series = ObservableSeries(obs[:n_out].copy(), out_max[:n_out], out_cnt[:n_out], out_min[:n_out])
    return _Advance(new, series, bool(stopped), int(max_count), float(pruned))


def _step(state, until, model):
    if state.params.model != model:
        raise ValueError(f"state holds a {state.params.model} system, not {model}")
    return advance(state, until).state


def step_bbm(state: ParticleSystemState, until: float) -> ParticleSystemState:
    """Exact branching Brownian motion up to ``until``."""
    return _step(state, until, "bbm")


def step_lbbm(state: ParticleSystemState, until: float, params: ModelParams | None = None) -> ParticleSystemState:
    """L-BBM: particles more than ``L`` behind the leader are removed.

    The rule is enforced at branching events and on a checkpoint grid of
    spacing ``params.checkpoint_interval``; between checkpoints a laggard can
    briefly survive, a bias that shrinks with the checkpoint spacing.
    """
    if params is not None:
        state = _with_params(state, params)
    return _step(state, until, "lbbm")


def step_nbbm(state: ParticleSystemState, until: float, params: ModelParams | None = None) -> ParticleSystemState:
    """N-BBM: a branching beyond ``N`` particles removes the leftmost (oldest on ties)."""
    if params is not None:
        state = _with_params(state, params)
    return _step(state, until, "nbbm")


def step_cbrw(state: ParticleSystemState, until: float, params: ModelParams | None = None) -> ParticleSystemState:
    """Coalescing branching random walk by the Gillespie algorithm."""
    if params is not None:
        state = _with_params(state, params)
    return _step(state, until, "cbrw")


def _with_params(state, params):
    new = state.copy()
    new.params = params
    return new


def simulate(params: ModelParams, until: float, obs_times, seed: int, positions=None):
    """One replica from a single particle (or ``positions``); returns ``(state, series)``."""
    state = initial_state(params, seed=seed, positions=positions)
    res = advance(state, until, obs_times)
    return res.state, res.series


def sample_observables(params: ModelParams, times, n_runs: int, seed: int, positions=None):
    """``(x_max, count, x_min)`` arrays of shape ``(n_runs, len(times))``.

    Replica ``i`` uses stream ``(seed, i)`` so any subset can be recomputed.
    """
    times = np.asarray(times, dtype=float)
    xmax = np.empty((n_runs, times.size))
    cnt = np.empty((n_runs, times.size), np.int64)
    xmin = np.empty((n_runs, times.size))
    for i in range(n_runs):
        state = initial_state(params, rng=make_rng(seed, i), positions=positions)
        s = advance(state, float(times[-1]), times).series
        xmax[i], cnt[i], xmin[i] = s.x_max, s.count, s.x_min
    return xmax, cnt, xmin


def replica_manifest(params: ModelParams, seed: int, wall_time: float, **extra) -> dict:
    return {"seed": int(seed), "model": params.model, "params": params.to_dict(),
            "wall_time": float(wall_time), **extra}


def write_manifest(path, manifest: dict) -> None:
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"not serialisable: {type(obj).__name__}")


# ---------------------------------------------------------------------------
# couplings


@dataclass
class CouplingResult:
    domination_held: bool
    n_checks: int
    n_events: int
    series_x: ObservableSeries
    series_y: ObservableSeries


def coupled_nbbm(x_init, y_init, until: float, params: ModelParams, N_x: int | None = None,
                 obs_times=None, seed: int = 0, rng: np.random.Generator | None = None) -> CouplingResult:
    """Couple an ``N_x``-BBM started at ``x_init`` with an ``N``-BBM started at ``y_init``.

    Requires ``|x_init| >= |y_init|`` and, after sorting both in decreasing
    order, ``x_(i) >= y_(i)`` for every ``i <= |y_init|``. Paired particles
    share Brownian increments and branching clocks. ``N_x`` defaults to
    ``params.N``.
    """
    x = np.sort(np.asarray(x_init, dtype=float))[::-1].copy()
    y = np.sort(np.asarray(y_init, dtype=float))[::-1].copy()
    cap_y = int(params.N)
    cap_x = cap_y if N_x is None else int(N_x)
    if cap_x < cap_y:
        raise ValueError("N_x must be >= N")
    if x.size < y.size or x.size > cap_x or y.size > cap_y or y.size < 1:
        raise ValueError("initial sizes must satisfy 1 <= |y| <= |x| within capacities")
    if np.any(x[: y.size] < y):
        raise ValueError("x_init must dominate y_init coordinatewise after sorting")
    if rng is None:
        rng = make_rng(seed)
    obs = _obs_array(obs_times, 0.0, until)
    out_x = np.zeros((obs.size, 3))
    out_y = np.zeros((obs.size, 3))
    held, n_checks, n_events = kernels.coupled_nbbm(
        x, y, cap_x, cap_y, 0.0, until, params.sigma, params.branch_rate, obs, out_x, out_y, rng)

    def series(out):
        return ObservableSeries(obs.copy(), out[:, 0].copy(), out[:, 1].astype(np.int64), out[:, 2].copy())

    return CouplingResult(bool(held), int(n_checks), int(n_events), series(out_x), series(out_y))


def timed(fn, *args, **kwargs):
    t0 = _time.perf_counter()
    out = fn(*args, **kwargs)
    return out, _time.perf_counter() - t0
