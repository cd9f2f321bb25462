import math

import numpy as np
import pytest
from scipy import integrate, stats

from bmvd.drift import smooth_bump, two_bump
from bmvd.geometry import STAR, DomainError, DomainSpec, ModelParams
from bmvd.simulator import (SimConfig, bin_measure, estimate_density, girsanov_weight, occupation_and_exit,
                            simulate_full, simulate_radial, skew_bm_cdf, skew_bm_density, step_skew)


@pytest.mark.parametrize("x", [-0.7, 0.0, 0.4])
@pytest.mark.parametrize("eta", [-0.5, 0.0, 0.22])
def test_skew_density_normalised_and_matches_cdf(x, eta):
    t = 0.3
    mass = integrate.quad(lambda y: skew_bm_density(t, x, y, eta), -10, 0, points=[x])[0]
    mass += integrate.quad(lambda y: skew_bm_density(t, x, y, eta), 0, 10, points=[x])[0]
    assert mass == pytest.approx(1.0, abs=1e-10)
    ys = np.array([-1.0, -0.2, 0.0, 0.3, 1.1])
    num = [integrate.quad(lambda y: skew_bm_density(t, x, y, eta), -10, v, points=[0.0, x] if v > 0 else None,
                          limit=200)[0] for v in ys]
    np.testing.assert_allclose(skew_bm_cdf(t, x, ys, eta), num, atol=1e-9)


def test_skew_from_zero_positive_mass():
    eta = 0.3
    assert 1 - skew_bm_cdf(0.5, 0.0, 0.0, eta) == pytest.approx((1 + eta) / 2)


def test_step_skew_zero_eta_is_gaussian():
    rng = np.random.default_rng(0)
    n = 1_000_000
    y0 = rng.uniform(-1, 1, n)
    y1 = step_skew(y0, 0.01, 0.0, rng)
    ref = y0 + 0.1 * np.random.default_rng(1).standard_normal(n)
    assert stats.ks_2samp(y1 - y0, ref - y0).pvalue > 1e-3


@pytest.mark.parametrize("x0", [0.0, 0.15, -0.3])
def test_step_skew_exact_single_step(x0):
    eta, dt = 0.4, 0.05
    rng = np.random.default_rng(2)
    y = step_skew(np.full(400_000, x0), dt, eta, rng)
    res = stats.kstest(y, lambda v: skew_bm_cdf(dt, x0, v, eta))
    assert res.pvalue > 1e-3


def test_radial_reproducible_across_workers(params):
    a = simulate_radial(0.0, SimConfig(dt=1e-2, T=0.1, n_paths=70_000, seed=3, workers=1), params)
    b = simulate_radial(0.0, SimConfig(dt=1e-2, T=0.1, n_paths=70_000, seed=3, workers=3), params)
    np.testing.assert_array_equal(a.y, b.y)
    c = simulate_radial(0.0, SimConfig(dt=1e-2, T=0.1, n_paths=70_000, seed=4), params)
    assert not np.array_equal(a.y, c.y)


def test_full_reproducible_with_girsanov(params):
    cfg = dict(dt=1e-2, T=0.1, n_paths=5000, seed=9, mode="girsanov", drift=two_bump())
    a = simulate_full(STAR, SimConfig(**cfg), params)
    b = simulate_full(STAR, SimConfig(**cfg, workers=2), params)
    np.testing.assert_array_equal(a.logw, b.logw)
    np.testing.assert_array_equal(a.y, b.y)


def test_config_guards():
    with pytest.raises(DomainError):
        SimConfig(dt=1.0, T=0.5)
    with pytest.raises(DomainError):
        SimConfig(mode="girsanov")
    with pytest.raises(DomainError):
        SimConfig(dt=1e-2, band=0.1)
    with pytest.raises(DomainError):
        SimConfig(mode="foo")


def test_estimate_density_normalisation_and_se(params):
    edges = np.linspace(-2, 2, 41)
    cfg = SimConfig(dt=5e-3, T=0.1, n_paths=40_000, seed=1)
    ens = simulate_radial(0.0, cfg, params)
    tab = estimate_density(ens, edges, params)
    assert tab.mass.sum() + tab.out_mass == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(tab.density * bin_measure(edges, params), tab.mass)
    big = estimate_density(simulate_radial(0.0, SimConfig(dt=5e-3, T=0.1, n_paths=160_000, seed=2), params),
                           edges, params)
    ratio = tab.mass_se.mean() / big.mass_se.mean()
    assert ratio == pytest.approx(2.0, rel=0.1)
    with pytest.raises(DomainError):
        estimate_density(ens, edges[::-1], params)


def test_bin_measure_annuli(params):
    m = bin_measure([-1.0, 0.0, 1.0], params)
    assert m[0] == pytest.approx(params.p)
    assert m[1] == pytest.approx(math.pi * (1.25 ** 2 - 0.25 ** 2))


def test_girsanov_weights_are_martingale(params):
    for T in (0.05, 0.2):
        ens = simulate_full(STAR, SimConfig(dt=2e-3, T=T, n_paths=40_000, seed=5, mode="girsanov",
                                            drift=two_bump()), params)
        w = ens.weights
        assert abs(w.mean() - 1) <= 3 * w.std(ddof=1) / math.sqrt(w.size)


def test_girsanov_weight_of_stored_path(params):
    d = smooth_bump()
    y = np.array([-0.5, -0.52, -0.49])
    dW = np.array([[0.01, 0.0], [-0.02, 0.0]])
    w, clipped = girsanov_weight({"y": y, "dW": dW}, d, 1e-3, params)
    b = d.leg(0.5 * np.ones(1))[0], d.leg(np.array([0.52]))[0]
    expo = b[0] * 0.01 + b[1] * -0.02 - 0.5 * (b[0] ** 2 + b[1] ** 2) * 1e-3
    assert w == pytest.approx(math.exp(expo))
    assert not clipped


def test_occupation_identity_tiny_domain(params):
    D = DomainSpec(0.1, 0.35)
    edges = np.linspace(-0.1, 0.1, 11)
    cfg = SimConfig(dt=1e-5, T=0.2, n_paths=4000, seed=7)
    ex = occupation_and_exit(STAR, cfg, params, D, edges)
    assert ex.frac_alive == 0.0
    assert ex.mean_exit < 0.02
    assert ex.occupation_total == pytest.approx(ex.mean_exit, rel=1e-9)


def test_short_horizon_warns(params):
    D = DomainSpec(1.0, 2.0)
    with pytest.warns(RuntimeWarning):
        occupation_and_exit(STAR, SimConfig(dt=1e-3, T=0.01, n_paths=500, seed=0), params, D,
                            np.linspace(-1, 1.75, 5))


def test_dt_guard_for_small_eps():
    with pytest.raises(DomainError):
        simulate_radial(0.0, SimConfig(dt=0.01, T=0.1, n_paths=10), ModelParams(0.05, 1.0))
