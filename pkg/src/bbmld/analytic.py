"""Single-particle rate functions, their Legendre duals and closed forms.

A walk is described either by a jump kernel (displacement -> rate) or by the
Gaussian special case. Everything downstream works with a
:class:`RateFunction`, which exposes the cumulant rate ``g(lam)``, the rate
function ``f(v)`` and the exact slope ``f'(v) = lam`` with ``v = g'(lam)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln, logsumexp

SQRT2 = math.sqrt(2.0)
LAM_XTOL = 1e-13
# exp() overflows just above 709.78
_EXP_MAX = 700.0


class DomainError(ValueError):
    """Argument outside the domain where a rate function is defined."""


# ---------------------------------------------------------------------------
# jump kernels


@dataclass(frozen=True)
class JumpKernel:
    """Rates ``rho(y)`` of a continuous-time walk jumping by ``y``."""

    displacements: tuple[float, ...]
    rates: tuple[float, ...]

    def __post_init__(self):
        ys = tuple(float(y) for y in self.displacements)
        rs = tuple(float(r) for r in self.rates)
        object.__setattr__(self, "displacements", ys)
        object.__setattr__(self, "rates", rs)
        if len(ys) != len(rs) or not ys:
            raise ValueError("kernel needs matching, non-empty displacement and rate lists")
        if len(set(ys)) != len(ys):
            raise ValueError("kernel displacements must be distinct")
        if not all(math.isfinite(y) for y in ys) or not all(math.isfinite(r) for r in rs):
            raise ValueError("kernel entries must be finite")
        if any(r <= 0 for r in rs):
            raise ValueError("kernel rates must be strictly positive")
        if any(y == 0 for y in ys):
            raise ValueError("zero displacement is not a jump")
        if not (any(y > 0 for y in ys) and any(y < 0 for y in ys)):
            raise ValueError("kernel needs at least one positive and one negative displacement")

    @classmethod
    def nearest_neighbor(cls, sigma: float = 1.0) -> "JumpKernel":
        """Jumps of +-sigma at rate 1/2 each."""
        if not sigma > 0:
            raise ValueError("sigma must be > 0")
        return cls((sigma, -sigma), (0.5, 0.5))

    @classmethod
    def from_pairs(cls, pairs) -> "JumpKernel":
        pairs = list(pairs)
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))

    @property
    def y(self) -> np.ndarray:
        return np.asarray(self.displacements)

    @property
    def rho(self) -> np.ndarray:
        return np.asarray(self.rates)

    @property
    def total_rate(self) -> float:
        return float(sum(self.rates))

    @property
    def is_symmetric(self) -> bool:
        table = dict(zip(self.displacements, self.rates))
        return all(table.get(-y) == r for y, r in table.items())

    def log_moment(self, lam: float) -> float:
        """``log sum rho(y) exp(lam*y)``, safe for large ``|lam*y|``."""
        return float(logsumexp(lam * self.y, b=self.rho))

    def to_text(self) -> str:
        return "".join(f"{y!r} {r!r}\n" for y, r in zip(self.displacements, self.rates))


def load_kernel(path) -> JumpKernel:
    """Read a kernel table: one ``y rate`` pair per line, ``#`` starts a comment."""
    pairs = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'y rate', got {raw!r}")
        pairs.append((float(parts[0]), float(parts[1])))
    return JumpKernel.from_pairs(pairs)


def g_lattice(lam: float, sigma: float) -> float:
    """Cumulant rate of the nearest-neighbour walk, ``cosh(lam*sigma) - 1``."""
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    return math.cosh(lam * sigma) - 1.0


def g_general(lam: float, kernel: JumpKernel) -> float:
    """``sum rho(y) (exp(lam*y) - 1)``; raises OverflowError when not representable."""
    a = lam * kernel.y
    if np.max(np.abs(a)) <= _EXP_MAX:
        return float(np.dot(kernel.rho, np.expm1(a)))
    lm = kernel.log_moment(lam)
    if lm > _EXP_MAX:
        raise OverflowError(f"g({lam}) overflows for this kernel")
    return math.exp(lm) - kernel.total_rate


def dg_general(lam: float, kernel: JumpKernel) -> float:
    a = lam * kernel.y
    if np.max(a) > _EXP_MAX:
        raise OverflowError(f"g'({lam}) overflows for this kernel")
    return float(np.dot(kernel.rho * kernel.y, np.exp(a)))


def d2g_general(lam: float, kernel: JumpKernel) -> float:
    a = lam * kernel.y
    if np.max(a) > _EXP_MAX:
        raise OverflowError(f"g''({lam}) overflows for this kernel")
    return float(np.dot(kernel.rho * kernel.y**2, np.exp(a)))


def f_rw(v: float, sigma: float) -> float:
    """Closed-form rate function of the nearest-neighbour walk (even in ``v``)."""
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    u = v / sigma
    return 1.0 - math.hypot(1.0, u) + u * math.asinh(u)


def _solve_slope(v: float, dg, scale: float) -> float:
    """Solve ``dg(lam) = v`` for increasing ``dg`` by expanding a bracket."""
    if not math.isfinite(v):
        raise DomainError(f"velocity must be finite, got {v}")
    lo, hi = -scale, scale
    try:
        while dg(lo) > v:
            lo *= 2.0
        while dg(hi) < v:
            hi *= 2.0
    except OverflowError as exc:
        raise DomainError(f"v={v} lies outside the representable range of g'") from exc
    if dg(lo) == v:
        return lo
    if dg(hi) == v:
        return hi
    return brentq(lambda lam: dg(lam) - v, lo, hi, xtol=LAM_XTOL, rtol=4 * np.finfo(float).eps, maxiter=500)


def legendre_f(v: float, kernel: JumpKernel) -> tuple[float, float]:
    """Rate function by Legendre transform of ``g``.

    Returns ``(f(v), lam0)`` with ``g'(lam0) = v``; ``lam0`` is also ``f'(v)``.
    """
    scale = 1.0 / max(abs(y) for y in kernel.displacements)
    lam0 = _solve_slope(v, lambda lam: dg_general(lam, kernel), scale)
    f = -g_general(lam0, kernel) + lam0 * dg_general(lam0, kernel)
    return f, lam0


# ---------------------------------------------------------------------------
# rate-function handles


class RateFunction:
    """Evaluable rate function ``f`` together with its Legendre dual ``g``."""

    sigma: float

    def g(self, lam: float) -> float:
        raise NotImplementedError

    def dg(self, lam: float) -> float:
        raise NotImplementedError

    def f(self, v: float) -> float:
        raise NotImplementedError

    def df(self, v: float) -> float:
        """``f'(v)``, equal to the dual variable ``lam`` solving ``g'(lam) = v``."""
        raise NotImplementedError

    def velocity(self, lam: float) -> float:
        """Inverse of :meth:`df`: the velocity ``g'(lam)``."""
        return self.dg(lam)

    @staticmethod
    def gaussian(sigma: float = 1.0) -> "GaussianRate":
        return GaussianRate(sigma)

    @staticmethod
    def lattice(sigma: float = 1.0) -> "LatticeRate":
        return LatticeRate(sigma)

    @staticmethod
    def from_kernel(kernel: JumpKernel) -> "KernelRate":
        return KernelRate(kernel)


class GaussianRate(RateFunction):
    """Brownian motion with variance ``sigma**2`` per unit time."""

    def __init__(self, sigma: float = 1.0):
        if not sigma > 0:
            raise ValueError("sigma must be > 0")
        self.sigma = float(sigma)

    def g(self, lam):
        return 0.5 * (self.sigma * lam) ** 2

    def dg(self, lam):
        return self.sigma**2 * lam

    def f(self, v):
        return v * v / (2.0 * self.sigma**2)

    def df(self, v):
        return v / self.sigma**2

    def __repr__(self):
        return f"GaussianRate(sigma={self.sigma!r})"


class LatticeRate(RateFunction):
    """Nearest-neighbour lattice walk with closed-form ``f`` and ``f'``."""

    def __init__(self, sigma: float = 1.0):
        if not sigma > 0:
            raise ValueError("sigma must be > 0")
        self.sigma = float(sigma)

    def g(self, lam):
        return g_lattice(lam, self.sigma)

    def dg(self, lam):
        return self.sigma * math.sinh(lam * self.sigma)

    def f(self, v):
        return f_rw(v, self.sigma)

    def df(self, v):
        return math.asinh(v / self.sigma) / self.sigma

    def __repr__(self):
        return f"LatticeRate(sigma={self.sigma!r})"


class KernelRate(RateFunction):
    """General jump kernel; ``f`` from numerical Legendre transform."""

    def __init__(self, kernel: JumpKernel):
        self.kernel = kernel
        self.sigma = math.sqrt(d2g_general(0.0, kernel))
        self._scale = 1.0 / max(abs(y) for y in kernel.displacements)

    def g(self, lam):
        return g_general(lam, self.kernel)

    def dg(self, lam):
        return dg_general(lam, self.kernel)

    def f(self, v):
        return legendre_f(v, self.kernel)[0]

    def df(self, v):
        return _solve_slope(v, self.dg, self._scale)

    def __repr__(self):
        return f"KernelRate({self.kernel!r})"


def as_rate(obj) -> RateFunction:
    if isinstance(obj, RateFunction):
        return obj
    if isinstance(obj, JumpKernel):
        return KernelRate(obj)
    raise TypeError(f"expected RateFunction or JumpKernel, got {type(obj).__name__}")


# ---------------------------------------------------------------------------
# large-deviation functions of the free systems


def psi_bbm(v: float, sigma: float) -> float:
    """Rate of ``P(X_max(t) >= v t)`` for BBM, valid for ``v >= sqrt(2) sigma``."""
    return v * v / (2.0 * sigma * sigma) - 1.0


def psi_brw(v: float, kernel, r: float) -> float:
    """``f(v) - r`` for a branching walk with branching rate ``r``."""
    if not r > 0:
        raise ValueError("r must be > 0")
    if isinstance(kernel, JumpKernel):
        return legendre_f(v, kernel)[0] - r
    return as_rate(kernel).f(v) - r


def critical_velocity(kernel, r: float = 1.0) -> tuple[float, float]:
    """Typical front speed of a branching walk.

    Minimises ``(g(lam) + r) / lam`` over ``lam > 0`` by solving its
    stationarity condition ``lam g'(lam) - g(lam) = r`` (the left side is
    increasing for ``lam > 0``). Returns ``(v_c, lam_c)``.
    """
    if not r > 0:
        raise ValueError("r must be > 0")
    rate = as_rate(kernel)
    if isinstance(rate, GaussianRate):
        lam_c = math.sqrt(2.0 * r) / rate.sigma
        return rate.dg(lam_c), lam_c

    def excess(lam):
        return lam * rate.dg(lam) - rate.g(lam) - r

    hi = 1.0 / rate.sigma
    while excess(hi) < 0:
        hi *= 2.0
    lam_c = brentq(excess, 0.0, hi, xtol=LAM_XTOL, rtol=4 * np.finfo(float).eps, maxiter=500)
    v_c = rate.dg(lam_c)
    f_c = legendre_f(v_c, kernel)[0] if isinstance(kernel, JumpKernel) else rate.f(v_c)
    if abs(f_c - r) > 1e-9 * max(1.0, r):
        raise ArithmeticError(f"critical velocity check failed: f(v_c)={f_c}, r={r}")
    return v_c, lam_c


def psi_bbm_negative(v: float, sigma: float) -> float:
    """Rate of ``P(X_max(t) <= v t)`` for BBM started from one particle, ``v <= v_c``."""
    v_c = SQRT2 * sigma
    if v > v_c:
        raise ValueError(f"v={v} exceeds v_c={v_c}; use psi_bbm")
    if v > -(SQRT2 - 1.0) * v_c:
        return 2.0 * (SQRT2 - 1.0) * (1.0 - v / v_c)
    return 1.0 + (v / v_c) ** 2


def qn_lower_bound(x: float, t: float, sigma: float, N: int) -> float:
    """Lower bound ``min(1, exp(t - x^2 / (2 sigma^2 (t - ln N))))``.

    This is a lower estimate for the probability of having ``N`` particles to
    the right of ``x`` at time ``t``; it is not claimed to be the true value.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if not t > math.log(N):
        raise ValueError(f"need t > ln N, got t={t}, ln N={math.log(N)}")
    expo = t - x * x / (2.0 * sigma * sigma * (t - math.log(N)))
    return 1.0 if expo >= 0 else math.exp(expo)


# ---------------------------------------------------------------------------
# exact law of the nearest-neighbour walk


def skellam_logpmf(k: int, t: float) -> float:
    """``log P(N+ - N- = k)`` with ``N+-`` independent Poisson(t/2), by direct summation."""
    k = int(k)
    mean = 0.5 * t
    n0 = max(0, -k)
    n1 = int(mean + abs(k) + 40.0 * math.sqrt(mean + 1.0) + 50)
    n = np.arange(n0, n1 + 1, dtype=float)
    log_terms = (n + k) * math.log(mean) - gammaln(n + k + 1) + n * math.log(mean) - gammaln(n + 1)
    return float(logsumexp(log_terms)) - t


def walk_rate_exact(v: float, t: float, sigma: float = 1.0) -> float:
    """``-ln P(X(t) = ceil(v t / sigma) sigma) / t`` for the nearest-neighbour walk."""
    k = math.ceil(v * t / sigma - 1e-12)
    return -skellam_logpmf(k, t) / t
