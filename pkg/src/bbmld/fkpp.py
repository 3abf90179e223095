"""Finite differences for the FKPP equation with a step initial condition.

``P(x, t)``, the probability that the rightmost BBM particle is beyond ``x``
at time ``t``, solves

    dP/dt = (sigma^2 / 2) d2P/dx2 + b (P - P^2),   P(x, 0) = 1 - theta(x),

so the integrator is a deterministic oracle for the law of the BBM maximum.
The scheme is explicit Euler in time with central differences in space.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from ._jit import USING_NUMBA, njit

log = logging.getLogger(__name__)


class BoundaryError(RuntimeError):
    """The front came too close to the edge of the domain, or never crosses a level."""


class StabilityError(ValueError):
    """The time step breaks the explicit-scheme stability bound."""


@dataclass
class FrontProfile:
    """Values of ``P`` on the grid ``x_lo + i dx`` at time ``t``.

    ``clamped`` accumulates how much clipping to ``[0, 1]`` has changed the
    values so far; ``shift_cells`` counts cells dropped by the moving window.
    """

    dx: float
    x_lo: float
    values: np.ndarray
    t: float = 0.0
    sigma: float = 1.0
    rate: float = 1.0
    clamped: float = 0.0
    shift_cells: int = 0

    @property
    def x_hi(self) -> float:
        return self.x_lo + (self.values.size - 1) * self.dx

    @property
    def x(self) -> np.ndarray:
        return self.x_lo + self.dx * np.arange(self.values.size)

    def at(self, x: float) -> float:
        """``P(x, t)`` by linear interpolation (1 left of the domain, 0 right of it)."""
        return float(np.interp(x, self.x, self.values, left=1.0, right=0.0))

    def check(self, atol: float = 1e-12) -> None:
        """Raise ``AssertionError`` if a profile invariant is broken."""
        p = self.values
        assert p.min() >= 0.0 and p.max() <= 1.0, "P outside [0, 1]"
        assert np.all(np.diff(p) <= atol), "P not nonincreasing in x"
        assert p[0] == 1.0 and p[-1] == 0.0, "boundary values not pinned"

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "P"])
            for x, p in zip(self.x, self.values):
                w.writerow([repr(float(x)), repr(float(p))])


def step_profile(x_lo: float = -40.0, x_hi: float = 120.0, dx: float = 0.05, sigma: float = 1.0,
                 rate: float = 1.0) -> FrontProfile:
    """Step initial condition ``1 - theta(x)`` with the value 1/2 at the origin."""
    if not (dx > 0 and x_hi > x_lo):
        raise ValueError("need dx > 0 and x_hi > x_lo")
    n = int(round((x_hi - x_lo) / dx)) + 1
    x = x_lo + dx * np.arange(n)
    p = np.where(x < 0, 1.0, 0.0)
    p[np.abs(x) < 0.5 * dx] = 0.5
    p[0], p[-1] = 1.0, 0.0
    return FrontProfile(dx, float(x_lo), p, 0.0, float(sigma), float(rate))


@njit
def _steps_loop(p, n_steps, dt, dx, sigma, rate):
    d = 0.5 * sigma * sigma * dt / (dx * dx)
    n = p.shape[0]
    q = p.copy()
    clamped = 0.0
    for _ in range(n_steps):
        for i in range(1, n - 1):
            pi = p[i]
            y = pi + d * (p[i + 1] - 2.0 * pi + p[i - 1]) + dt * rate * pi * (1.0 - pi)
            if y < 0.0:
                clamped -= y
                y = 0.0
            elif y > 1.0:
                clamped += y - 1.0
                y = 1.0
            q[i] = y
        for i in range(1, n - 1):
            p[i] = q[i]
    return clamped


def _steps_numpy(p, n_steps, dt, dx, sigma, rate):
    d = 0.5 * sigma * sigma * dt / (dx * dx)
    clamped = 0.0
    for _ in range(n_steps):
        mid = p[1:-1]
        y = mid + d * (p[2:] - 2.0 * mid + p[:-2]) + dt * rate * mid * (1.0 - mid)
        c = np.clip(y, 0.0, 1.0)
        clamped += float(np.abs(y - c).sum())
        p[1:-1] = c
    return clamped


_steps = _steps_loop if USING_NUMBA else _steps_numpy


def front_position(profile: FrontProfile, level: float = 0.5) -> float:
    """Where ``P`` crosses ``level``, by linear interpolation between grid points."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"level: must lie in (0, 1), got {level}")
    p = profile.values
    below = np.flatnonzero(p < level)
    if below.size == 0 or below[0] == 0:
        raise BoundaryError(f"P never crosses {level} inside [{profile.x_lo}, {profile.x_hi}]")
    j = int(below[0])
    frac = (p[j - 1] - level) / (p[j - 1] - p[j])
    return profile.x_lo + (j - 1 + frac) * profile.dx


def _recentre(profile: FrontProfile, margin: float) -> FrontProfile:
    x_half = front_position(profile, 0.5)
    mid = 0.5 * (profile.x_lo + profile.x_hi)
    k = int((x_half - mid) / profile.dx) if x_half > mid else 0
    if k > 0:
        vals = np.concatenate([profile.values[k:], np.zeros(k)])
        vals[0] = 1.0
        profile = replace(profile, values=vals, x_lo=profile.x_lo + k * profile.dx,
                          shift_cells=profile.shift_cells + k)
    _check_margin(profile, margin)
    return profile


def integrate_fkpp(profile: FrontProfile, until: float, dt: float, moving_window: bool = True,
                   chunk: float = 0.5) -> FrontProfile:
    """Advance ``profile`` to time ``until`` with explicit steps of size ``dt``.

    Every ``chunk`` time units the front is located; once the 1/2-level
    passes mid-domain the window slides right (cells pinned at 1 dropped on
    the left, zeros appended on the right). A front closer than ``10 sigma``
    to either edge raises ``BoundaryError``.
    """
    if until < profile.t:
        raise ValueError(f"until={until} precedes the profile time {profile.t}")
    if not dt > 0 or dt > profile.dx**2 / max(profile.sigma**2, 1e-300):
        raise StabilityError(f"dt={dt} violates dt <= dx^2/sigma^2 = {profile.dx**2 / profile.sigma**2}")
    if profile.rate * dt >= 1.0:
        raise StabilityError("rate * dt must be < 1")
    margin = 10.0 * profile.sigma
    p = profile.values.copy()
    out = replace(profile, values=p)
    n_total = int(math.floor((until - profile.t) / dt + 1e-9))
    per_chunk = max(1, int(round(chunk / dt)))
    done = 0
    while done < n_total:
        k = min(per_chunk, n_total - done)
        out.clamped += _steps(out.values, k, dt, out.dx, out.sigma, out.rate)
        done += k
        out.t = profile.t + done * dt
        if moving_window:
            out = _recentre(out, margin)
        else:
            _check_margin(out, margin)
    rest = until - out.t
    if rest > 1e-12:
        out.clamped += _steps(out.values, 1, rest, out.dx, out.sigma, out.rate)
    out.t = float(until)
    if out.clamped > 0:
        log.debug("fkpp: clamping changed values by %.3e in total", out.clamped)
    return out


def _check_margin(profile, margin):
    x_half = front_position(profile, 0.5)
    if x_half - profile.x_lo < margin or profile.x_hi - x_half < margin:
        raise BoundaryError(f"front at {x_half:.3f} within {margin} of the domain edge at t={profile.t:.3f}")


def front_trajectory(profile: FrontProfile, times, dt: float, level: float = 0.5, **kwargs):
    """``(profile_at_last_time, positions)`` of the ``level`` crossing at each of ``times``."""
    xs = []
    for t in times:
        profile = integrate_fkpp(profile, float(t), dt, **kwargs)
        xs.append(front_position(profile, level))
    return profile, np.array(xs)


def tail_probability(v: float, t: float, sigma: float = 1.0, dx: float = 0.02, dt: float | None = None,
                     rate: float = 1.0, width: float | None = None) -> float:
    """``P(X_max(t) >= v t)`` for BBM from the FKPP solution."""
    dt = 0.5 * dx * dx / sigma**2 if dt is None else dt
    x = v * t
    span = max(abs(x), math.sqrt(2.0 * rate) * sigma * t) + 40.0 * sigma
    width = span if width is None else width
    prof = step_profile(-40.0 * sigma, width, dx, sigma, rate)
    prof = integrate_fkpp(prof, t, dt, moving_window=False)
    return prof.at(x)


def write_trajectory_csv(path, times, positions, level: float = 0.5) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", f"x_{level:g}"])
        for t, x in zip(times, positions):
            w.writerow([repr(float(t)), repr(float(x))])
