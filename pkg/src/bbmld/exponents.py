"""Correction exponents of the selected / coalescing systems.

A particle that must end beyond ``v t`` (the "red" particle) is killed when,
after some branching, it slows down to velocity ``y`` for a while and the
subtree born there overtakes it. The optimal slowdown solves a transcendental
equation in ``y``; all of them are solved here in the dual variable
``lam = f'(y)``, where they become one-dimensional roots of convex functions
of ``g``:

* L-BBM wall regime:  ``v_c lam1 - g(lam1) = v_c lam0 - g(lam0)``
* L-BBM free regime:  ``g(lam1) + g(lam0 - lam1) - g(lam0) + 1 = 0``
* N-BBM / CBRW wall:  ``(g(lam1) + r) / lam1 = (g(lam0) + r) / lam0``
* N-BBM free regime:  ``lam1 = lam0 / 2``

with ``lam0 = f'(v)``. :func:`kill_exponent_bruteforce` maximises the kill
probability directly over the slowdown duration and distance and is kept
independent of all of the above.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .analytic import LAM_XTOL, RateFunction, as_rate, critical_velocity
from .params import ModelParams

WALL = "wall-at-capacity"
FREE = "free-optimum"
CONJECTURED = "conjectured"

_EPS = 4 * np.finfo(float).eps


class NoRootError(ArithmeticError):
    """A slowdown equation had no admissible root (cannot happen for valid kernels)."""


class ConvergenceError(ArithmeticError):
    """The brute-force optimiser failed to locate an interior maximum."""


@dataclass(frozen=True)
class ExponentResult:
    model: str
    v: float
    y: float
    exponent: float
    regime: str
    lam0: float
    lam1: float

    def as_row(self) -> dict:
        return {"model": self.model, "v": self.v, "y": self.y, "regime": self.regime, "exponent": self.exponent}


def _root(fun, a, b):
    return brentq(fun, a, b, xtol=LAM_XTOL, rtol=_EPS, maxiter=500)


def _critical(rate: RateFunction, r: float, v_c: float | None) -> tuple[float, float]:
    v_c_true, lam_c = critical_velocity(rate, r)
    if v_c is not None and not math.isclose(v_c, v_c_true, rel_tol=1e-8, abs_tol=1e-12):
        raise ValueError(f"v_c={v_c} inconsistent with f (expected {v_c_true})")
    return v_c_true, lam_c


def _check_supercritical(v, v_c):
    if not v > v_c:
        raise ValueError(f"need v > v_c, got v={v}, v_c={v_c}")


def _wall_root(rate: RateFunction, lam0: float, lam_c: float, r: float) -> float:
    """Root ``lam1`` in ``(0, lam_c)`` of ``(g+r)/lam`` matching its value at ``lam0``."""
    def h(lam):
        return (rate.g(lam) + r) / lam

    target = h(lam0)
    lo = 0.5 * lam_c
    while h(lo) <= target:
        lo *= 0.5
        if lo < 1e-300:
            raise NoRootError("no root of the wall equation below lam_c")
    return _root(lambda lam: h(lam) - target, lo, lam_c)


# ---------------------------------------------------------------------------
# L-BBM


def alpha_lbbm(v: float, f, v_c: float | None = None) -> ExponentResult:
    """Exponent ``alpha(v)`` of ``exp(-alpha L / sigma)`` for the L-BBM.

    Both slowdown regimes are evaluated; the free regime is admissible only
    when the subtree tip ``y + L/s`` runs at least at ``v_c``. The admissible
    candidate with the larger kill probability wins.
    """
    rate = as_rate(f)
    v_c, lam_c = _critical(rate, 1.0, v_c)
    _check_supercritical(v, v_c)
    lam0 = rate.df(v)

    def wall(lam):
        return v_c * lam - rate.g(lam)

    target = wall(lam0)
    lo, step = lam_c, 1.0 / rate.sigma
    while wall(lo) >= target:
        lo = lam_c - step
        step *= 2.0
        if step > 1e6:
            raise NoRootError("no root of the wall condition for the L-BBM")
    lam1 = _root(lambda lam: wall(lam) - target, lo, lam_c)
    best = ExponentResult("lbbm", v, rate.velocity(lam1), rate.sigma * (lam0 - lam1), WALL, lam0, lam1)

    def free(lam):
        return rate.g(lam) + rate.g(lam0 - lam) - rate.g(lam0) + 1.0

    if free(0.5 * lam0) < 0:
        lam1f = _root(free, 0.0, 0.5 * lam0)
        if lam0 - lam1f >= lam_c * (1.0 - 1e-12):
            alpha = rate.sigma * (lam0 - lam1f)
            if alpha < best.exponent:
                best = ExponentResult("lbbm", v, rate.velocity(lam1f), alpha, FREE, lam0, lam1f)
    return best


def lbbm_breakpoint(f) -> float:
    """Velocity where the L-BBM switches from the wall to the free regime."""
    rate = as_rate(f)
    _, lam_c = critical_velocity(rate, 1.0)

    def tip_at_vc(lam0):
        return rate.g(lam0 - lam_c) + rate.g(lam_c) - rate.g(lam0) + 1.0

    hi = 2.0 * lam_c
    while tip_at_vc(hi) > 0:
        hi *= 2.0
    return rate.velocity(_root(tip_at_vc, lam_c, hi))


# ---------------------------------------------------------------------------
# N-BBM


def beta_nbbm(v: float, f, v_c: float | None = None, conjectured: bool = False) -> ExponentResult:
    """Exponent ``beta(v)`` of ``N**-beta`` for the N-BBM.

    With ``conjectured=True`` the first-branch formula is reported for every
    ``v`` (the extension that would hold if the lower bound on ``Q_N`` were
    sharp), tagged with regime ``"conjectured"``.
    """
    rate = as_rate(f)
    v_c, lam_c = _critical(rate, 1.0, v_c)
    _check_supercritical(v, v_c)
    lam0 = rate.df(v)
    lam1 = _wall_root(rate, lam0, lam_c, 1.0)
    wall = ExponentResult("nbbm", v, rate.velocity(lam1), lam0 / lam1 - 1.0, WALL, lam0, lam1)
    if conjectured:
        return ExponentResult("nbbm", v, wall.y, wall.exponent, CONJECTURED, lam0, lam1)
    half = 0.5 * lam0
    beta_free = rate.g(lam0) - 2.0 * rate.g(half)
    if beta_free < wall.exponent:
        return ExponentResult("nbbm", v, rate.velocity(half), beta_free, FREE, lam0, half)
    return wall


def _doubling_velocity(rate: RateFunction, r: float) -> float:
    """``v`` with ``g(lam0) - 2 g(lam0/2) = r``, i.e. where ``f'(v) = 2 f'(y)``."""
    def excess(lam):
        return rate.g(lam) - 2.0 * rate.g(0.5 * lam) - r

    hi = 1.0 / rate.sigma
    while excess(hi) < 0:
        hi *= 2.0
    return rate.velocity(_root(excess, 0.0, hi))


def nbbm_vstar(f) -> float:
    """Crossover velocity of the two N-BBM regimes (where beta = 1)."""
    return _doubling_velocity(as_rate(f), 1.0)


# ---------------------------------------------------------------------------
# CBRW


def gamma_cbrw(v: float, f, r: float, v_c: float | None = None) -> ExponentResult:
    """Exponent ``gamma(v)`` of ``mu**gamma`` for the coalescing branching walk."""
    rate = as_rate(f)
    v_c, lam_c = _critical(rate, r, v_c)
    _check_supercritical(v, v_c)
    lam0 = rate.df(v)
    lam1 = _wall_root(rate, lam0, lam_c, r)
    gamma = lam0 / lam1 - 1.0
    if gamma >= 1.0:
        return ExponentResult("cbrw", v, rate.velocity(lam1), 1.0, FREE, lam0, lam1)
    return ExponentResult("cbrw", v, rate.velocity(lam1), gamma, WALL, lam0, lam1)


def cbrw_v1(f, r: float) -> float:
    """Velocity beyond which ``gamma = 1``."""
    return _doubling_velocity(as_rate(f), r)


# ---------------------------------------------------------------------------
# brute-force oracle


def _argmax(fun, a: float, b: float, xatol: float):
    res = minimize_scalar(lambda x: -fun(x), bounds=(a, b), method="bounded",
                          options={"xatol": xatol, "maxiter": 1000})
    if not res.success:
        raise ConvergenceError(f"bounded search on [{a}, {b}] failed: {res.message}")
    best_x, best = res.x, -res.fun
    for x in (a, b):
        val = fun(x)
        if val > best:
            best_x, best = x, val
    return best_x, best


def _max_over_y(F, v: float, scale: float):
    """Maximise a concave ``F(y)`` known to peak at ``y <= v``."""
    step = 0.1 * scale
    pts = [v]
    vals = [F(v)]
    k = 0
    while len(vals) < 3 or vals[-1] > vals[-2]:
        pts.append(v - step * (2.0**k))
        vals.append(F(pts[-1]))
        k += 1
        if k > 80:
            raise ConvergenceError(f"no maximum in y below v={v}")
    i = int(np.argmax(vals))
    a = pts[min(i + 1, len(pts) - 1)]
    b = pts[max(i - 1, 0)]
    return _argmax(F, a, b, xatol=1e-12 * max(scale, abs(v)))


def _objective(model: str, rate: RateFunction, v: float, r: float):
    f, fv, dfv = rate.f, rate.f(v), rate.df(v)

    def log_p(s, y):
        # log P(x=ys, s) for a red particle conditioned to speed v
        return -s * (f(y) - fv - (y - v) * dfv)

    if model == "lbbm":
        def F(s, y):
            return log_p(s, y) + min(0.0, s * (r - f(y + 1.0 / s)))
    elif model == "nbbm":
        def F(s, y):
            return log_p(s, y) + min(0.0, s * (r - f(y)) - 1.0)
    elif model == "cbrw":
        def F(s, y):
            return log_p(s, y) + min(0.0, s * (r - f(y)) - 1.0)
    else:
        raise ValueError(f"no kill exponent for model {model!r}")
    return F


def kill_exponent_bruteforce(v: float, model: str, f, params: ModelParams | None = None,
                             full_output: bool = False):
    """Kill exponent by direct maximisation over slowdown time ``s`` and speed ``y``.

    The budget (L, ln N or ln 1/mu) is scaled to one, which is exact because
    every term is positively homogeneous in ``(s, x, budget)``. The log kill
    probability is jointly concave in ``(s, x)``, so a nested search (inner
    over ``y`` at fixed ``s``, outer over ``s`` after a log-grid pre-scan)
    finds the global maximum. N-BBM slowdowns obey ``s >= ln N``; the CBRW
    allows ``s -> 0`` where the kill probability tends to ``mu``.

    Returns the exponent in the model's unit (``alpha`` per L/sigma, ``beta``
    per ln N, ``gamma`` per ln 1/mu); with ``full_output`` also ``(s, y)``.
    """
    model = model.lower()
    rate = as_rate(f)
    if model in ("lbbm", "nbbm"):
        r = 1.0
    else:
        r = params.branch_rate if params is not None else 1.0
    v_c, _ = critical_velocity(rate, r)
    _check_supercritical(v, v_c)
    F = _objective(model, rate, v, r)
    yscale = v
    tscale = 1.0 / r

    def phi(s):
        return _max_over_y(lambda y: F(s, y), v, yscale)

    s_min = {"lbbm": 0.0, "nbbm": 1.0, "cbrw": 0.0}[model]
    grid = np.geomspace(1e-3 * tscale if s_min == 0 else s_min, 1e5 * tscale, 161)
    vals = np.array([phi(s)[1] for s in grid])
    if model == "cbrw":
        grid = np.concatenate(([0.0], grid))
        vals = np.concatenate(([-1.0], vals))
    i = int(np.argmax(vals))
    if i == len(grid) - 1:
        raise ConvergenceError(f"{model} v={v}: optimum beyond s={grid[-1]}")
    a = grid[max(i - 1, 0)]
    b = grid[i + 1]
    lo_edge = a if a > 0 else 1e-12 * b
    s_star, best = _argmax(lambda s: phi(s)[1], lo_edge, b, xatol=1e-13 * b)
    if model == "cbrw" and -1.0 >= best:
        s_star, best = 0.0, -1.0
    y_star = phi(s_star)[0] if s_star > 0 else float("nan")
    exponent = -best * (rate.sigma if model == "lbbm" else 1.0)
    if not math.isfinite(exponent) or exponent < -1e-12:
        raise ConvergenceError(f"{model} v={v}: invalid optimum {best} at s={s_star}")
    if full_output:
        return exponent, s_star, y_star
    return exponent


def closed_form(model: str, v: float, f, params: ModelParams | None = None,
                conjectured: bool = False) -> ExponentResult:
    model = model.lower()
    if model == "lbbm":
        return alpha_lbbm(v, f)
    if model == "nbbm":
        return beta_nbbm(v, f, conjectured=conjectured)
    if model == "cbrw":
        r = params.branch_rate if params is not None else 1.0
        return gamma_cbrw(v, f, r)
    raise ValueError(f"no correction exponent for model {model!r}")
