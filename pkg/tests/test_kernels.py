import math

import numpy as np
import pytest

from bmvd.geometry import STAR, DomainError, Leg, ModelParams, plane_distance, polar_point, rho_signed
from bmvd.kernels import (BoundReport, EnvelopeVariant, SandwichData, envelope, envelope_values, fit_sandwich,
                          gradient_envelope_values, log_envelope_values, log_gradient_envelope_values,
                          table_to_points)
from bmvd.radial_pde import build_grid, solve_kernel


def sample(rng, n, lo=-3.0, hi=3.0):
    ux = rng.uniform(lo, hi, n)
    uy = rng.uniform(lo, hi, n)
    thx = rng.uniform(-math.pi, math.pi, n)
    thy = rng.uniform(-math.pi, math.pi, n)
    return ux, uy, plane_distance(ux, thx, uy, thy, 0.25)


@pytest.mark.parametrize("variant", [0, 1, 2, 3, 5])
def test_envelope_symmetric(variant, rng):
    ux, uy, d = sample(rng, 5000)
    t = rng.uniform(0.01, 2.0, ux.size)
    a = envelope_values(variant, 0.7, t, ux, uy, d)
    b = envelope_values(variant, 0.7, t, uy, ux, d)
    np.testing.assert_allclose(a, b, rtol=1e-14)


def test_variant4_threshold_breaks_symmetry():
    a = log_envelope_values(4, 1.0, 1.0, 100.0, 10.0, 90.0, M=48.0)
    b = log_envelope_values(4, 1.0, 1.0, 10.0, 100.0, 90.0, M=48.0)
    assert a > b + 100


@pytest.mark.parametrize("variant", range(6))
def test_envelope_positive_and_decreasing_in_distance(variant, rng):
    t = 0.3
    ux = np.full(200, 0.4)
    uy = np.full(200, 0.6)
    d = np.linspace(0.2, 1.3, 200)
    v = envelope_values(variant, 0.5, t, ux, uy, d)
    assert np.all(v > 0)
    assert np.all(np.diff(v) <= 0)


@pytest.mark.parametrize("variant", [0, 1, 2])
def test_leg_envelope_decreasing_in_alpha(variant, rng):
    ux, uy, d = sample(rng, 1000)
    lo = envelope_values(variant, 0.3, 0.5, ux, uy, d)
    hi = envelope_values(variant, 0.6, 0.5, ux, uy, d)
    assert np.all(hi <= lo * (1 + 1e-14))


def test_envelope_guards():
    with pytest.raises(DomainError):
        envelope_values(0, 1.0, 0.0, -1.0, -1.0)
    with pytest.raises(DomainError):
        envelope_values(9, 1.0, 1.0, -1.0, -1.0)
    with pytest.raises(DomainError):
        EnvelopeVariant(0, alpha=-1.0)


def test_scalar_envelope_uses_euclidean_distance(params):
    x = polar_point(0.5, 0.0, params)
    y = polar_point(0.5, math.pi / 2, params)
    var = EnvelopeVariant(0, 0.5)
    d = math.hypot(0.75, 0.75)
    assert envelope(var, 0.2, x, y, params) == pytest.approx(envelope_values(0, 0.5, 0.2, 0.5, 0.5, d))
    assert envelope(var, 0.2, STAR, Leg(1.0), params) == pytest.approx(math.exp(-0.5 / 0.2) / math.sqrt(0.2))


@pytest.mark.parametrize("variant", range(6))
def test_log_envelope_matches_linear(variant, rng):
    ux, uy, d = sample(rng, 4000, -4, 4)
    for t in (0.02, 0.3, 1.7):
        lin = envelope_values(variant, 0.4, t, ux, uy, d, M=1.5)
        lg = log_envelope_values(variant, 0.4, t, ux, uy, d, M=1.5)
        ok = lin > 1e-250
        np.testing.assert_allclose(lg[ok], np.log(lin[ok]), rtol=1e-12, atol=1e-12)


def test_log_gradient_matches_linear(rng):
    ux, uy, d = sample(rng, 4000)
    for s in (0.01, 0.4):
        lin = gradient_envelope_values(s, ux, uy, 0.5, d)
        lg = log_gradient_envelope_values(s, ux, uy, 0.5, d)
        ok = lin > 1e-250
        np.testing.assert_allclose(lg[ok], np.log(lin[ok]), rtol=1e-12, atol=1e-12)


def test_log_envelope_finite_where_linear_underflows():
    v = log_envelope_values(0, 1.0, 1e-3, -5.0, 5.0)
    assert math.isfinite(v)
    assert envelope_values(0, 1.0, 1e-3, -5.0, 5.0) == 0.0


def test_triangle_helpers_over_many_tuples():
    """Quadratic triangle inequality and the radial exponent bounds used by
    the envelopes, over 1e5 random tuples."""
    rng = np.random.default_rng(5)
    n = 100_000
    u = rng.uniform(-3, 3, (3, n))
    th = rng.uniform(-math.pi, math.pi, (3, n))
    dxy = plane_distance(u[0], th[0], u[1], th[1], 0.25)
    dyz = plane_distance(u[1], th[1], u[2], th[2], 0.25)
    dxz = plane_distance(u[0], th[0], u[2], th[2], 0.25)
    rxy, ryz, rxz = rho_signed(u[0], u[1], dxy), rho_signed(u[1], u[2], dyz), rho_signed(u[0], u[2], dxz)
    assert np.all(rxz <= rxy + ryz + 1e-12)
    assert np.all(rxz ** 2 <= 2 * (rxy ** 2 + ryz ** 2) + 1e-12)
    # mixed pairs: (|x| + |y|)^2 / 2 <= |x|^2 + |y|^2 <= (|x| + |y|)^2
    mixed = (u[0] < 0) != (u[1] < 0)
    s2 = u[0, mixed] ** 2 + u[1, mixed] ** 2
    assert np.all(0.5 * rxy[mixed] ** 2 <= s2 + 1e-12)
    assert np.all(s2 <= rxy[mixed] ** 2 + 1e-12)


def test_fit_sandwich_on_exact_envelope():
    rng = np.random.default_rng(7)
    t = rng.uniform(0.05, 1.0, 3000)
    ux = -rng.uniform(0, 2, t.size)
    uy = -rng.uniform(0, 2, t.size)
    vals = 3.0 * envelope_values(0, 1.0, t, ux, uy)
    rep = fit_sandwich(SandwichData(t, ux, uy, vals), variant=0, rel_floor=0.0)
    assert rep.alpha_up <= 1.0 + 1e-9 <= rep.alpha_low
    assert rep.c_up == pytest.approx(3.0, rel=0.05)
    assert rep.c_low == pytest.approx(3.0, rel=0.05)


def test_fit_sandwich_brackets_driftless_kernel(params):
    grid = build_grid(4.0, 4.0, params, h=1e-2)
    times = np.linspace(0.05, 1.0, 8)
    tab = solve_kernel(-0.5, 1.0, grid, times=times)
    rep = fit_sandwich(tab)
    pts = table_to_points(tab)
    keep = np.zeros(pts.values.size, bool)
    for tv in np.unique(pts.t):
        sl = pts.t == tv
        keep[sl] = pts.values[sl] > 1e-10 * pts.values[sl].max()
    pts = pts.select(keep)
    up = rep.c_up * envelope_values(0, rep.alpha_up, pts.t, pts.u_x, pts.u_y)
    lo = rep.c_low * envelope_values(0, rep.alpha_low, pts.t, pts.u_x, pts.u_y)
    assert np.all(pts.values <= up * (1 + 1e-12))
    assert np.all(pts.values >= lo * (1 - 1e-12))
    assert rep.alpha_low > rep.alpha_up
    assert BoundReport.from_json(rep.to_json()) == rep


def test_fit_sandwich_rejects_negative_values():
    data = SandwichData(np.ones(3), -np.ones(3), -np.ones(3), np.array([1.0, -1.0, 1.0]))
    with pytest.raises(DomainError):
        fit_sandwich(data)


def test_plane_source_table_rejected(params):
    grid = build_grid(2.0, 2.0, params, h=2e-2)
    tab = solve_kernel(0.5, 0.1, grid, times=[0.1])
    with pytest.raises(DomainError):
        table_to_points(tab)
