import math

import numpy as np
import pytest

from bbmld.analytic import GaussianRate, JumpKernel, KernelRate, LatticeRate, critical_velocity
from bbmld.exponents import (
    CONJECTURED, FREE, WALL, alpha_lbbm, beta_nbbm, cbrw_v1, closed_form, gamma_cbrw,
    kill_exponent_bruteforce, lbbm_breakpoint, nbbm_vstar,
)
from bbmld.params import ModelParams

G = GaussianRate(1.0)
LAT = LatticeRate(1.0)
V_C = math.sqrt(2.0)


def test_gaussian_reference_points():
    a = alpha_lbbm(1.6, G)
    assert a.regime == WALL
    assert a.exponent == pytest.approx(2 * math.sqrt(2) * (1.6 - V_C) / V_C, rel=1e-12)
    assert alpha_lbbm(1.5 * V_C, G).exponent == pytest.approx(math.sqrt(2), rel=1e-9)
    a3 = alpha_lbbm(3.0, G)
    assert a3.regime == FREE
    assert a3.exponent == pytest.approx((3 + math.sqrt(5)) / 2, rel=1e-12)
    assert beta_nbbm(1.7, G).exponent == pytest.approx(0.445, rel=1e-12)
    assert beta_nbbm(2.0, G).exponent == pytest.approx(1.0, rel=1e-12)
    assert beta_nbbm(3.0, G).exponent == pytest.approx(2.25, rel=1e-12)
    assert beta_nbbm(3.0, G).y == pytest.approx(1.5)


def test_breakpoints_gaussian():
    assert lbbm_breakpoint(G) == pytest.approx(1.5 * V_C, rel=1e-10)
    assert nbbm_vstar(G) == pytest.approx(2.0, rel=1e-10)
    assert cbrw_v1(G, 1.0) == pytest.approx(2.0, rel=1e-10)
    assert cbrw_v1(G, 0.25) == pytest.approx(math.sqrt(2) * math.sqrt(0.5), rel=1e-10)


def test_conjectured_branch():
    r = beta_nbbm(3.0, G, conjectured=True)
    assert r.regime == CONJECTURED
    assert r.exponent == pytest.approx(9 / 2 - 1, rel=1e-12)


def test_subcritical_rejected():
    with pytest.raises(ValueError):
        alpha_lbbm(1.0, G)
    with pytest.raises(ValueError):
        gamma_cbrw(0.5, LAT, 1.0)


# [DERIVED] nearest-neighbour values frozen from kill_exponent_bruteforce
LATTICE_FROZEN = [
    ("lbbm", 1.8106554738459835, 1.0, 0.31890421),
    ("nbbm", 1.8106554738459835, 1.0, 0.28348540),
    ("lbbm", 3.0, 1.0, 1.34401968),
    ("nbbm", 3.0, 1.0, 1.27704711),
]


@pytest.mark.parametrize("model,v,r,expected", LATTICE_FROZEN)
def test_lattice_frozen_values(model, v, r, expected):
    res = closed_form(model, v, LAT, ModelParams(model, branch_rate=r))
    assert res.exponent == pytest.approx(expected, rel=1e-6)


def test_cbrw_lattice_frozen():
    v_c, _ = critical_velocity(LAT, 0.5)
    assert gamma_cbrw(1.2 * v_c, LAT, 0.5).exponent == pytest.approx(0.33020022, rel=1e-6)


def test_lattice_breakpoints_frozen():
    assert lbbm_breakpoint(LAT) == pytest.approx(2.79211575, rel=1e-8)
    assert nbbm_vstar(LAT) == pytest.approx(2.54245976, rel=1e-8)
    assert cbrw_v1(LAT, 0.5) == pytest.approx(1.63224188, rel=1e-8)


@pytest.mark.parametrize("model", ["lbbm", "nbbm", "cbrw"])
@pytest.mark.parametrize("rate", [G, LAT], ids=["gauss", "lattice"])
def test_bruteforce_agrees(model, rate):
    r = 0.5 if model == "cbrw" else 1.0
    v_c, _ = critical_velocity(rate, r)
    params = ModelParams(model, branch_rate=r)
    for v in v_c * np.array([1.05, 1.4, 1.9, 2.6]):
        exact = closed_form(model, v, rate, params).exponent
        assert kill_exponent_bruteforce(v, model, rate, params) == pytest.approx(exact, rel=1e-6)


def test_kernel_and_lattice_agree():
    kr = KernelRate(JumpKernel.nearest_neighbor(1.0))
    for v in (1.7, 2.5, 4.0):
        assert alpha_lbbm(v, kr).exponent == pytest.approx(alpha_lbbm(v, LAT).exponent, rel=1e-8)
        assert beta_nbbm(v, kr).exponent == pytest.approx(beta_nbbm(v, LAT).exponent, rel=1e-8)
        assert gamma_cbrw(v, kr, 1.0).exponent == pytest.approx(gamma_cbrw(v, LAT, 1.0).exponent, rel=1e-8)


def test_asymmetric_kernel_bruteforce():
    rate = KernelRate(JumpKernel((1.0, -1.0, 2.0), (0.4, 0.5, 0.1)))
    v_c, _ = critical_velocity(rate, 1.0)
    for model in ("lbbm", "nbbm"):
        v = 1.5 * v_c
        exact = closed_form(model, v, rate).exponent
        assert kill_exponent_bruteforce(v, model, rate) == pytest.approx(exact, rel=1e-6)


def test_small_r_plateau_and_optimiser():
    r = 1e-4
    v_c = math.sqrt(2 * r)
    res = gamma_cbrw(1.2 * v_c, G, r)
    assert res.exponent == pytest.approx(1.44 - 1, rel=1e-10)
    assert res.y == pytest.approx(v_c**2 / (1.2 * v_c), rel=1e-10)
    assert gamma_cbrw(1.6 * v_c, G, r).exponent == 1.0
    p = ModelParams("cbrw", branch_rate=r)
    assert kill_exponent_bruteforce(1.6 * v_c, "cbrw", G, p) == pytest.approx(1.0, rel=1e-6)


def test_exponents_increase_with_v():
    vs = np.linspace(1.52, 4.0, 30)
    for fn in (lambda v: alpha_lbbm(v, G), lambda v: beta_nbbm(v, G), lambda v: gamma_cbrw(v, LAT, 1.0)):
        e = [fn(v).exponent for v in vs]
        assert np.all(np.diff(e) >= -1e-12)
