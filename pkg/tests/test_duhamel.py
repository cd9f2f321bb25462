import math

import numpy as np
import pytest
from scipy.linalg import expm

from bmvd.drift import constant, smooth_bump, two_bump, zero
from bmvd.duhamel import (REGIME_VARIANT, SpaceTimeGrid, _log_ratio_pair, calibrate_t1, drift_operator,
                          extend_time, full_matrix, resolvent_check, sample_regime, sum_series,
                          verify_convolution_inequality)
from bmvd.geometry import DomainError, ModelParams
from bmvd.kernels import log_envelope_values, log_gradient_envelope_values
from bmvd.radial_pde import SpectralPropagator, build_grid


@pytest.fixture(scope="module")
def prop():
    return SpectralPropagator(build_grid(3.0, 3.0, ModelParams(0.25, 1.0), h=0.03))


def expm_kernel(prop, drift, t):
    """Oracle: exp(t (A + b.grad)) W^{-1} on the active nodes."""
    A = -(prop.phi * prop.lam) @ prop.phi.T * prop.w[None, :]
    L = A + drift_operator(prop, drift)
    return expm(t * L) / prop.w[None, :]


def test_driftless_series_is_the_semigroup(prop):
    res = sum_series(SpaceTimeGrid(prop, 0.25, 16), zero(), [0.0])
    assert res.state.n_levels == 1
    np.testing.assert_allclose(res.values[-1, 0], prop.kernel(0.25, [prop.local_index(0.0)])[0], rtol=1e-12)


def test_summed_series_matches_matrix_exponential(prop):
    drift = smooth_bump()
    stg = SpaceTimeGrid(prop, 0.25, 64)
    K = full_matrix(stg, drift)
    ref = expm_kernel(prop, drift, 0.25)
    err = np.max(np.sum(np.abs(K - ref) * prop.w[None, :], axis=1))
    assert err < 1e-4


def test_series_contracts_and_converges(prop):
    drift = smooth_bump()
    res = sum_series(SpaceTimeGrid(prop, 0.25, 32), drift, [-0.5, 0.0])
    assert res.state.converged
    assert max(res.state.ratios) < 0.5
    mass = res.values[-1] @ prop.w
    np.testing.assert_allclose(mass, 1.0, atol=1e-4)


def test_calibrate_window(prop):
    T1, ratios = calibrate_t1(prop, smooth_bump(), 0.0)
    assert T1 in [2.0 ** -k for k in range(1, 9)]
    assert max(ratios) <= 0.5


def test_extend_time_matches_exponential(prop):
    drift = smooth_bump()
    res = sum_series(SpaceTimeGrid(prop, 0.25, 32), drift, [0.0])
    times, vals = extend_time(res, drift, 1.0)
    assert times[-1] == pytest.approx(1.0)
    ref = expm_kernel(prop, drift, 1.0)[prop.local_index(0.0)]
    assert np.sum(np.abs(vals[-1] - ref) * prop.w) < 1e-3


def test_resolvent_identity(prop):
    f = np.exp(-((prop.y + 0.3) / 0.3) ** 2)
    rep = resolvent_check(prop, smooth_bump(), 10.0, f, n_max=4, n_steps=64)
    assert rep.residual <= rep.budget
    assert all(r < 1 for r in rep.term_ratios)


def test_resolvent_rejects_odd_steps(prop):
    with pytest.raises(DomainError):
        resolvent_check(prop, smooth_bump(), 10.0, np.ones(prop.y.size), n_steps=30)


def test_plane_drift_without_radial_form_rejected(prop):
    with pytest.raises(DomainError):
        drift_operator(prop, two_bump())


@pytest.mark.parametrize("regime", range(1, 8))
def test_regime_samplers(regime):
    ux, thx, uy, thy = sample_regime(regime, 50, np.random.default_rng(regime))
    leg_x, leg_y = ux < 0, uy < 0
    expect = {1: (True, True), 2: (True, False), 3: (False, True), 4: (False, True)}
    if regime in expect:
        assert np.all(leg_x == expect[regime][0]) and np.all(leg_y == expect[regime][1])
    else:
        assert not leg_x.any() and not leg_y.any()
    if regime == 3:
        assert np.all(ux <= 1)
    if regime == 4:
        assert np.all(ux >= 1)


def test_zero_drift_gives_zero_ratios():
    rep = verify_convolution_inequality(2, zero(), ModelParams(), times=[0.1, 0.2], n_pairs=3)
    assert rep.max_ratio == [0.0, 0.0]


def test_battery_guards(prop):
    with pytest.raises(DomainError):
        verify_convolution_inequality(8, constant(), ModelParams())
    with pytest.raises(DomainError):
        verify_convolution_inequality(1, constant(), ModelParams(), alpha=1.0, beta=0.5)
    with pytest.raises(DomainError):
        verify_convolution_inequality(5, smooth_bump(), ModelParams(), mode="kernel", prop=prop)


def _brute(t, ux, thx, uy, thy, v, a=0.25, b=0.5, eps=0.25):
    """Single-node midpoint rule in s and a 2-D grid in z."""
    s = r = t / 2
    rho = np.linspace(1e-5, 8, 1200)
    dr = rho[1] - rho[0]
    ph = np.linspace(0, 2 * np.pi, 900, endpoint=False)
    Rg, Pg = np.meshgrid(rho + eps, ph, indexing="ij")

    def dist(u, th):
        if u < 0:
            return None
        R = u + eps
        return np.sqrt(np.maximum(R ** 2 + Rg ** 2 - 2 * R * Rg * np.cos(Pg - th), 0))

    f1 = np.exp(log_envelope_values(v, a, r, ux, Rg - eps, dist(ux, thx)))
    f2 = np.exp(log_gradient_envelope_values(s, Rg - eps, uy, b, dist(uy, thy)))
    plane = np.sum(f1 * f2 * Rg) * dr * (ph[1] - ph[0])
    z = np.linspace(1e-5, 8, 16000)
    leg = np.sum(np.exp(log_envelope_values(v, a, r, ux, -z)) * np.exp(log_gradient_envelope_values(s, -z, uy, b)))
    leg *= z[1] - z[0]
    if ux >= 0 and uy >= 0:
        d = math.sqrt((ux + eps) ** 2 + (uy + eps) ** 2 - 2 * (ux + eps) * (uy + eps) * math.cos(thx - thy))
    else:
        d = abs(ux - uy)
    # the Chebyshev map with one node sits at s = t/2 with weight pi t / 2
    return math.pi * t / 2 * (plane + leg) / math.exp(log_envelope_values(v, a, t, ux, uy, d))


@pytest.mark.parametrize("case", [(0.5, 0.3, 1.2, 2.0, 0), (-0.6, 0.0, 0.8, 1.0, 0), (0.4, 0.0, 0.6, 1.0, 3)])
def test_closed_form_angular_integral_against_grid(case):
    ux, thx, uy, thy, v = case
    t = 0.5
    fast = math.exp(_log_ratio_pair(t, ux, thx, uy, thy, constant(), ModelParams(), v, 0.25, 0.5, 48.0, 1))
    assert fast == pytest.approx(_brute(t, ux, thx, uy, thy, v), rel=5e-3)


def test_regime_variant_map():
    assert REGIME_VARIANT == {1: 0, 2: 0, 3: 1, 4: 2, 5: 3, 6: 4, 7: 5}


def test_battery_small_run_monotone():
    rep = verify_convolution_inequality(2, constant(), ModelParams(), times=[1 / 16, 1 / 8, 1 / 4], n_pairs=3)
    assert rep.monotone
    assert rep.decrease_fraction > 0.3
    assert rep.to_json().startswith("{")


def test_kernel_mode_leg_drift(prop):
    rep = verify_convolution_inequality(1, smooth_bump(), ModelParams(), times=[1 / 8, 1 / 4], n_pairs=2,
                                        mode="kernel", prop=prop, n_s=8)
    assert all(np.isfinite(rep.max_ratio))
    assert rep.max_ratio[0] <= rep.max_ratio[1]
