import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rkcq.heat_sphere import (
    HeatExperimentConfig,
    SphereSymbol,
    default_psi,
    mu_n,
    run_heat_convergence,
    solve_heat_density,
    spherical_bessel_j,
    spherical_hankel_h1,
    vanishing_order,
)
from rkcq.opcalc import CqContext, apply_transfer_function, sample_stages
from rkcq.tableau import builtin_tableau

mp.mp.dps = 30


def j_oracle(n, z):
    z = mp.mpc(z)
    return complex(mp.sqrt(mp.pi / (2 * z)) * mp.besselj(n + mp.mpf(1) / 2, z))


def h1_oracle(n, z):
    z = mp.mpc(z)
    return complex(mp.sqrt(mp.pi / (2 * z)) * mp.hankel1(n + mp.mpf(1) / 2, z))


def test_j0_and_origin():
    assert spherical_bessel_j(0, 1.0) == pytest.approx(math.sin(1.0), abs=1e-15)
    assert spherical_bessel_j(0, 0.0) == 1.0
    for n in range(1, 6):
        assert spherical_bessel_j(n, 0.0) == 0.0


def test_j2_at_i_closed_form():
    z = 1j
    closed = (3 / z**3 - 1 / z) * np.sin(z) - 3 / z**2 * np.cos(z)
    assert spherical_bessel_j(2, z) == pytest.approx(closed, rel=1e-14)


def test_h0_examples():
    assert spherical_hankel_h1(0, 1j) == pytest.approx(-math.exp(-1), rel=1e-15)
    for y in (5.0, 40.0, 300.0):
        assert abs(spherical_hankel_h1(0, 1j * y)) == pytest.approx(math.exp(-y) / y, rel=1e-10)
    with pytest.raises(ZeroDivisionError):
        spherical_hankel_h1(1, 0.0)


@pytest.mark.parametrize("n", [0, 1, 2, 5, 10])
@pytest.mark.parametrize("z", [0.3, 2.5 + 1j, 1j * 4.0, 7.0 - 3j, 1j * 25.0 + 3.0, 0.01j])
def test_against_mpmath(n, z):
    assert spherical_bessel_j(n, z) == pytest.approx(j_oracle(n, z), rel=1e-11, abs=1e-300)
    assert spherical_hankel_h1(n, z) == pytest.approx(h1_oracle(n, z), rel=1e-11)


def _deriv(f, n, z):
    # f_0' = -f_1, f_n' = f_{n-1} - (n+1)/z f_n
    if n == 0:
        return -f(1, z)
    return f(n - 1, z) - (n + 1) / z * f(n, z)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(0, 8), re=st.floats(0.2, 15), im=st.floats(-5, 5))
def test_wronskian(n, re, im):
    # both products grow like e^{2|Im z|} and cancel to i/z^2, so |Im z| is kept moderate
    z = complex(re, im)
    j, h = spherical_bessel_j(n, z), spherical_hankel_h1(n, z)
    w = j * _deriv(spherical_hankel_h1, n, z) - _deriv(spherical_bessel_j, n, z) * h
    assert w == pytest.approx(1j / z**2, rel=1e-9)


def test_mu0_closed_form():
    for kappa in (0.1, 1.0, 4.0, 30.0):
        assert mu_n(0, kappa) == pytest.approx((1 - math.exp(-2 * kappa)) / (2 * kappa), rel=1e-13)
    assert mu_n(0, 1.0) == pytest.approx(0.432332358, abs=1e-9)


@pytest.mark.parametrize("n", [0, 1, 2, 3, 10])
def test_mu_small_argument_limit(n):
    assert mu_n(n, 1e-6) == pytest.approx(1 / (2 * n + 1), rel=1e-5)
    with pytest.raises(ZeroDivisionError):
        mu_n(n, 0.0)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(0, 10), re=st.floats(0.01, 100), im=st.floats(-100, 100))
def test_symbol_coercive_and_real_symmetric(n, re, im):
    s = complex(re, im)
    val = SphereSymbol(n).forward(s)
    assert val.real > 0
    assert SphereSymbol(n).forward(s.conjugate()) == pytest.approx(val.conjugate(), rel=1e-12)


def test_n2_at_one_plus_i():
    v = mu_n(2, 1 + 1j)
    assert np.isfinite(v) and v != 0 and v.real > 0


def test_degree_range():
    with pytest.raises(ValueError):
        SphereSymbol(11)
    with pytest.raises(ValueError):
        spherical_bessel_j(-1, 1.0)


def test_vanishing_order():
    assert vanishing_order(default_psi) == pytest.approx(12, abs=0.2)
    assert vanishing_order(lambda t: t**3) == pytest.approx(3, abs=1e-9)
    assert vanishing_order(lambda t: 0.0) == math.inf


def test_incompatible_psi_rejected():
    with pytest.raises(ValueError, match="vanishes"):
        HeatExperimentConfig(psi=lambda t: t**4, tableau=builtin_tableau("radau_iia_5"))
    with pytest.raises(ValueError):
        HeatExperimentConfig(ks=[0.1, 0.2])


def test_zero_data_gives_zero_density():
    cfg = HeatExperimentConfig(psi=lambda t: np.zeros_like(np.asarray(t, dtype=float)))
    out = solve_heat_density(cfg, 6.0 / 32)
    assert np.abs(out.stages).max() == 0.0


def test_forward_symbol_round_trip():
    cfg = HeatExperimentConfig()
    k = 6.0 / 64
    lam = solve_heat_density(cfg, k)
    ctx = CqContext(cfg.tableau, k, 64)
    back = apply_transfer_function(ctx, SphereSymbol(2).forward, lam)
    g = sample_stages(cfg.tableau, k, 64, cfg.psi)
    assert np.abs(back.stages - g.stages).max() <= 1e-7


def test_backward_euler_first_order():
    rep = run_heat_convergence(HeatExperimentConfig(tableau=builtin_tableau("radau_iia_1")))
    assert abs(rep.median_eoc() - 1.0) <= 0.15


def test_radau3_halving_ratio():
    rep = run_heat_convergence(HeatExperimentConfig())
    ratios = rep.errors[:-1] / rep.errors[1:]
    assert np.all(np.abs(np.log2(ratios) - 3.5) <= 0.3)
    assert rep.metadata["degree"] == 2 and rep.quantity == "density"


def test_radau5_rate_window():
    rep = run_heat_convergence(HeatExperimentConfig(tableau=builtin_tableau("radau_iia_5")))
    assert 5.0 <= rep.median_eoc() <= 6.3


def test_threaded_levels_identical():
    cfg = HeatExperimentConfig(ks=[6.0 / 32, 6.0 / 64])
    assert run_heat_convergence(cfg).levels == run_heat_convergence(cfg, workers=2).levels
