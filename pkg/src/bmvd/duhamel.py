"""Duhamel series for the drifted kernel on a radial grid.

The driftless semi-discrete kernel is ``K(t) = Phi exp(-t Lambda) Phi^T``
(see :class:`~bmvd.radial_pde.SpectralPropagator`).  Levels are stored by
their coefficients in the eigenbasis, ``k_n(t)[x, y] = sum_m c_n(t)[x, m]
Phi[y, m]``, and the recursion

    k_n(t, x, y) = int_0^t sum_z k_{n-1}(t - s, x, z) w_z (T p(s, ., y))(z) ds

becomes ``c_n(t) = int_0^t exp(-(t - tau) Lambda) g_{n-1}(tau) d tau`` with
``g_{n-1} = c_{n-1} E`` and ``E = Phi^T W T Phi``.  Here ``T`` is the
discrete ``b . grad`` operator acting on the source variable.  Level 1 is
integrated exactly (divided differences of exponentials); higher levels use
a second-order exponential integrator on a uniform time grid.  The
integrable endpoint singularities of the time integral are therefore
handled analytically by the exponentials rather than by quadrature.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special

from .drift import DriftSpec
from .geometry import DomainError, ModelParams
from .kernels import (envelope_values, gradient_envelope_values, gradient_plane_terms,
                      log_envelope_values, log_gradient_envelope_values, plane_terms)
from .radial_pde import Grid1D, KernelTable, SpectralPropagator, solve_kernel


# ---------------------------------------------------------------------------
# discrete b . grad
# ---------------------------------------------------------------------------

def _three_point(xm, x0, xp):
    """Weights of the second-order derivative at ``x0`` from (xm, x0, xp)."""
    h1, h2 = x0 - xm, xp - x0
    return (-h2 / (h1 * (h1 + h2)), (h2 - h1) / (h1 * h2), h1 / (h2 * (h1 + h2)))


def _one_sided(x0, x1, x2):
    d1, d2 = x1 - x0, x2 - x0
    return (-(d1 + d2) / (d1 * d2), d2 / (d1 * (d2 - d1)), -d1 / (d2 * (d2 - d1)))


def derivative_matrix(y, i0=None):
    """Second-order finite-difference ``d/dy`` on nodes ``y``.

    Central (non-uniform) in the interior and one-sided at the ends.  When
    ``i0`` is given, the row of the interface node is left empty: the two
    sides are handled separately by :func:`drift_operator`.
    """
    n = y.size
    D = np.zeros((n, n))
    for j in range(1, n - 1):
        D[j, j - 1:j + 2] = _three_point(y[j - 1], y[j], y[j + 1])
    D[0, :3] = _one_sided(y[0], y[1], y[2])
    D[-1, [-1, -2, -3]] = _one_sided(y[-1], y[-2], y[-3])
    if i0 is not None:
        D[i0] = 0.0
    return D


def drift_operator(prop: SpectralPropagator, drift: Optional[DriftSpec]):
    """Matrix of ``f -> b . grad f`` on the active nodes.

    On the leg ``b . grad = b d/dr = mu d/dy`` with ``mu(y) = -b_leg(-y)``.
    The interface node splits its dual cell: the leg half uses the left
    one-sided derivative, the plane half the right one.
    """
    g = prop.grid
    y = prop.y
    n = y.size
    if drift is None or drift.is_zero:
        return np.zeros((n, n))
    i0 = int(np.searchsorted(prop.idx, g.i0))
    mu = drift.radial(y)
    D = derivative_matrix(y, i0)
    T = mu[:, None] * D
    if 2 <= i0 <= n - 3:
        wl = g.measure(0.5 * (y[i0 - 1] + y[i0]), 0.0)
        wr = g.measure(0.0, 0.5 * (y[i0] + y[i0 + 1]))
        mu_l = float(drift.radial(np.array([-1e-12]))[0])
        mu_r = float(drift.radial(np.array([1e-12]))[0])
        row = np.zeros(n)
        row[[i0, i0 - 1, i0 - 2]] += wl * mu_l * np.array(_one_sided(y[i0], y[i0 - 1], y[i0 - 2]))
        row[[i0, i0 + 1, i0 + 2]] += wr * mu_r * np.array(_one_sided(y[i0], y[i0 + 1], y[i0 + 2]))
        T[i0] = row / prop.w[i0]
    return T


def grad_kernel_table(prop: SpectralPropagator, s, targets, max_ratio=0.5):
    """``d/dz p(s, z, y)`` for all active ``z`` and the given target nodes.

    Uses the symmetry of the driftless kernel: the gradient in the first
    argument is the derivative matrix applied to the kernel columns.

    Raises
    ------
    DomainError
        If the grid spacing exceeds ``max_ratio * sqrt(s)`` somewhere on the
        effective support, where differences cannot resolve the kernel.
    """
    if not s > 0:
        raise DomainError("s must be positive")
    cols = np.atleast_1d(targets)
    K = prop.kernel(s, cols).T
    D = derivative_matrix(prop.y)
    h = np.diff(prop.y)
    mass = np.abs(K).max(axis=1)
    support = mass > 1e-8 * mass.max()
    hs = np.maximum(np.concatenate([h, [h[-1]]]), np.concatenate([[h[0]], h]))
    if np.any(hs[support] > max_ratio * math.sqrt(s)):
        raise DomainError(f"grid too coarse to difference the kernel at s={s}")
    return D @ K


# ---------------------------------------------------------------------------
# exponential integrator helpers
# ---------------------------------------------------------------------------

def _phi1(a):
    a = np.asarray(a, float)
    small = np.abs(a) < 1e-8
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.expm1(a) / a
    return np.where(small, 1.0 + 0.5 * a, out)


def _psi(a):
    """``int_0^1 v exp(a v) dv``."""
    a = np.asarray(a, float)
    small = np.abs(a) < 1e-2
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = (np.exp(a) * (a - 1.0) + 1.0) / (a * a)
    series = 0.5 + a / 3.0 + a * a / 8.0 + a ** 3 / 30.0
    return np.where(small, series, out)


def _dd_exp(lam, t):
    """Matrix ``int_0^t exp(-s lam_m) exp(-(t - s) lam_l) ds`` indexed [l, m]."""
    lo = np.minimum(lam[:, None], lam[None, :])
    gap = np.abs(lam[:, None] - lam[None, :])
    return t * np.exp(-t * lo) * _phi1(-t * gap)


# ---------------------------------------------------------------------------
# series
# ---------------------------------------------------------------------------

@dataclass
class SpaceTimeGrid:
    """Spectral propagator plus a uniform time grid ``t_j = j * dt``."""

    prop: SpectralPropagator
    T: float
    n_steps: int = 64

    @property
    def times(self):
        return np.linspace(0.0, self.T, self.n_steps + 1)

    @property
    def dt(self):
        return self.T / self.n_steps


@dataclass
class SeriesState:
    """Diagnostics of a summed series."""

    norms: list
    ratios: list
    tail_bounds: list
    n_levels: int
    converged: bool
    alpha_norm: float
    t_window: float
    message: str = ""

    def to_json(self):
        return json.dumps({
            "norms": [float(v) for v in self.norms],
            "ratios": [float(v) for v in self.ratios],
            "tail_bounds": [float(v) for v in self.tail_bounds],
            "n_levels": self.n_levels,
            "converged": self.converged,
            "alpha_norm": self.alpha_norm,
            "t_window": self.t_window,
            "message": self.message,
        }, indent=2, sort_keys=True)


class DuhamelSeries:
    """Level-by-level construction of ``k_n`` from a set of source nodes.

    Parameters
    ----------
    stg : SpaceTimeGrid
    drift : DriftSpec
    sources : sequence of float
        Signed coordinates of the sources (snapped to nodes).
    """

    def __init__(self, stg: SpaceTimeGrid, drift: Optional[DriftSpec], sources: Sequence[float]):
        self.stg = stg
        self.prop = stg.prop
        self.drift = drift
        self.rows = np.array([self.prop.local_index(s) for s in np.atleast_1d(sources)])
        self.sources = self.prop.y[self.rows]
        self.T_op = drift_operator(self.prop, drift)
        phi = self.prop.phi
        self.E = phi.T @ ((self.prop.w[:, None] * self.T_op) @ phi)
        self.lam = self.prop.lam
        self._levels = []

    # level coefficients: array (n_times, n_src, n_modes)
    def level0(self):
        t = self.stg.times
        return self.prop.phi[self.rows][None, :, :] * np.exp(-np.outer(t, self.lam))[:, None, :]

    def level1(self):
        t = self.stg.times
        PR = self.prop.phi[self.rows]
        out = np.zeros((t.size,) + PR.shape)
        for j in range(1, t.size):
            out[j] = PR @ (self.E * _dd_exp(self.lam, t[j]))
        return out

    def next_level(self, prev):
        """Exponential integrator for levels >= 2 (``prev`` starts at 0)."""
        dt = self.stg.dt
        a = -self.lam * dt
        decay = np.exp(a)
        w_new = dt * (_phi1(a) - _psi(a))
        w_old = dt * _psi(a)
        g = prev @ self.E
        out = np.zeros_like(prev)
        for j in range(1, prev.shape[0]):
            out[j] = decay * out[j - 1] + w_new * g[j] + w_old * g[j - 1]
        return out

    def to_values(self, coef):
        """Kernel values ``(n_times, n_src, n_nodes)`` from coefficients."""
        return coef @ self.prop.phi.T

    def levels(self, n_max):
        c = [self.level0()]
        if n_max >= 1:
            c.append(self.level1())
        while len(c) <= n_max:
            c.append(self.next_level(c[-1]))
        return c


def envelope_norm(values, times, src_y, node_y, alpha=0.25, rel_floor=1e-8):
    """``sup |k| / p^0_{0,alpha}`` over ``t > 0`` and nodes where the envelope
    is above ``rel_floor`` times its slice maximum."""
    best = 0.0
    for j, t in enumerate(times):
        if t <= 0:
            continue
        for i, x in enumerate(np.atleast_1d(src_y)):
            env = envelope_values(0, alpha, t, x, node_y)
            ok = env > rel_floor * env.max()
            best = max(best, float(np.max(np.abs(values[j, i, ok]) / env[ok])))
    return best


@dataclass
class SeriesResult:
    times: np.ndarray
    values: np.ndarray          # (n_times, n_src, n_nodes), summed p^b
    level_values: list          # per-level values (n_times, n_src, n_nodes)
    state: SeriesState
    sources: np.ndarray
    prop: SpectralPropagator

    def table(self, i=0) -> KernelTable:
        g = self.prop.grid
        full = np.zeros((self.times.size - 1, g.n_nodes))
        full[:, self.prop.idx] = self.values[1:, i, :]
        return KernelTable(g, self.times[1:], full, float(self.sources[i]), {"method": "duhamel"})


def sum_series(stg: SpaceTimeGrid, drift: Optional[DriftSpec], sources, tol=1e-8, n_max=40,
               alpha_norm=0.25, keep_levels=True) -> SeriesResult:
    """Sum ``k_0 + k_1 + ...`` until the envelope-norm tail bound is small.

    Stops when ``r_n < 1`` and ``r_n / (1 - r_n) * ||k_{n+1}|| < tol * ||k_0||``.
    Two consecutive ratios ``>= 1`` abort with a recommendation to shorten
    the window.
    """
    ser = DuhamelSeries(stg, drift, sources)
    times = stg.times
    y = ser.prop.y
    src_y = ser.sources
    c = ser.level0()
    v = ser.to_values(c)
    total = v.copy()
    levels = [v] if keep_levels else []
    norms = [envelope_norm(v, times, src_y, y, alpha_norm)]
    ratios, tails = [], []
    converged, msg = False, ""
    if drift is None or drift.is_zero:
        state = SeriesState(norms, [0.0], [0.0], 1, True, alpha_norm, stg.T, "zero drift")
        return SeriesResult(times, total, levels, state, src_y, ser.prop)
    bad = 0
    for n in range(1, n_max + 1):
        c = ser.level1() if n == 1 else ser.next_level(c)
        v = ser.to_values(c)
        total += v
        if keep_levels:
            levels.append(v)
        norms.append(envelope_norm(v, times, src_y, y, alpha_norm))
        r = norms[-1] / norms[-2] if norms[-2] > 0 else 0.0
        ratios.append(r)
        tail = r / (1 - r) * norms[-1] if r < 1 else math.inf
        tails.append(tail)
        bad = bad + 1 if r >= 1 else 0
        if bad >= 2:
            msg = (f"non-contraction: r_n >= 1 at levels {n - 1} and {n}; "
                   f"reduce the window below T={stg.T}")
            raise DomainError(msg)
        if r < 1 and tail < tol * norms[0]:
            converged = True
            break
    state = SeriesState(norms, ratios, tails, len(norms), converged, alpha_norm, stg.T, msg)
    return SeriesResult(times, total, levels, state, src_y, ser.prop)


def calibrate_t1(prop: SpectralPropagator, drift: DriftSpec, source, candidates=None, r_max=0.5,
                 n_steps=64, n_check=6):
    """Largest window ``T`` from ``candidates`` with ``r_n <= r_max`` for the
    first ``n_check`` ratios."""
    candidates = [2.0 ** -k for k in range(1, 9)] if candidates is None else sorted(candidates, reverse=True)
    for T in candidates:
        stg = SpaceTimeGrid(prop, T, n_steps)
        ser = DuhamelSeries(stg, drift, [source])
        c = ser.levels(n_check)
        norms = [envelope_norm(ser.to_values(ci), stg.times, ser.sources, prop.y) for ci in c]
        ratios = [norms[i + 1] / norms[i] for i in range(len(norms) - 1)]
        if max(ratios) <= r_max:
            return T, ratios
    raise DomainError("no candidate window gives contraction")


def full_matrix(stg: SpaceTimeGrid, drift: DriftSpec, tol=1e-10, n_max=60):
    """Summed drifted kernel from every active node at the final time."""
    ser = DuhamelSeries(stg, drift, stg.prop.y)
    c = ser.level0()
    total = c[-1].copy()
    for n in range(1, n_max + 1):
        c = ser.level1() if n == 1 else ser.next_level(c)
        total += c[-1]
        if np.max(np.abs(c[-1])) < tol * np.max(np.abs(total)) and n > 2:
            break
    return total @ stg.prop.phi.T


def extend_time(result: SeriesResult, drift: DriftSpec, T_target, n_out=None):
    """Extend a summed table on ``(0, T1]`` to ``(0, T_target]``.

    For ``t = q T1 + r`` the kernel is ``p^b(r) (W P^b(T1))^q`` with the
    products taken by m_p-quadrature.  Returns ``(times, values)`` for the
    first source, values of shape ``(n_times, n_nodes)``.
    """
    stg = SpaceTimeGrid(result.prop, result.times[-1], result.times.size - 1)
    T1 = stg.T
    P1 = full_matrix(stg, drift)
    w = result.prop.w
    WP = w[:, None] * P1
    base = result.values[:, 0, :]
    out_t, out_v = [], []
    cur, q = base, 0
    while True:
        for j in range(1, base.shape[0]):
            t = q * T1 + result.times[j]
            if t > T_target + 1e-12:
                return np.array(out_t), np.array(out_v)
            out_t.append(t)
            out_v.append(cur[j])
        q += 1
        cur = cur @ WP


def drifted_pde_reference(grid: Grid1D, drift: DriftSpec, source, times, dt_factor=0.5):
    """Drifted Crank-Nicolson solve used as the external oracle."""
    return solve_kernel(source, max(times), grid, drift=drift, times=times, dt_factor=dt_factor)


def l1_on_grid(prop: SpectralPropagator, values, table: KernelTable, t):
    """``sum_j w_j |u_j - table(t, y_j)|`` with the table interpolated to
    the propagator nodes."""
    ref = np.interp(prop.y, table.grid.y, table.at(t))
    return float(np.sum(prop.w * np.abs(values - ref)))


# ---------------------------------------------------------------------------
# resolvent identity
# ---------------------------------------------------------------------------

@dataclass
class ResolventReport:
    alpha: float
    n_max: int
    residual: float
    budget: float
    budget_terms: dict
    term_norms: list
    term_ratios: list

    def to_json(self):
        return json.dumps({k: (v if not isinstance(v, np.ndarray) else v.tolist())
                           for k, v in self.__dict__.items()}, indent=2, sort_keys=True)


def resolvent_check(prop: SpectralPropagator, drift: DriftSpec, alpha, f, n_max=4, sources=None,
                    T=None, n_steps=128, tol=1e-12) -> ResolventReport:
    """Compare two evaluations of the drifted resolvent at ``sources``.

    Left: Laplace transform ``int_0^T e^{-alpha t} sum_y p^b(t, x, y) f(y) w_y dt``
    of the summed series (Simpson in time) plus a tail bound.  Right:
    ``sum_{n <= n_max} G (b . grad G)^n f`` with driftless resolvents
    ``G = (alpha - A)^{-1}``.  The error budget adds the Simpson error
    estimate (difference with the half-resolution rule), the time-step error
    of the series (difference with a run on twice as many steps), the
    Laplace tail beyond ``T`` and the geometric tail of the right side.
    """
    f = np.asarray(f, float)
    y = prop.y
    if sources is None:
        sources = y[np.linspace(0, y.size - 1, 9).round().astype(int)[1:-1]]
    if T is None:
        T = 40.0 / alpha
    Tm = drift_operator(prop, drift)

    # right side
    terms, v = [], prop.resolvent(alpha, f)
    terms.append(v)
    for _ in range(n_max):
        v = prop.resolvent(alpha, Tm @ v)
        terms.append(v)
    rows = np.array([prop.local_index(s) for s in np.atleast_1d(sources)])
    rhs = np.sum([tv[rows] for tv in terms], axis=0)
    tn = [float(np.max(np.abs(tv))) for tv in terms]
    tr = [tn[i + 1] / tn[i] if tn[i] > 0 else 0.0 for i in range(len(tn) - 1)]
    if tr and tr[-1] >= 1:
        raise DomainError(f"resolvent series does not contract at alpha={alpha}")
    r_last = tr[-1] if tr else 0.0
    rhs_tail = tn[-1] * r_last / (1 - r_last) if tr else 0.0

    def lhs(n_st):
        stg = SpaceTimeGrid(prop, T, n_st)
        res = sum_series(stg, drift, sources, tol=tol, keep_levels=False)
        integrand = res.values @ (prop.w * f)          # (n_times, n_src)
        wt = np.exp(-alpha * stg.times)[:, None] * integrand
        h = stg.dt
        simpson = h / 3 * (wt[0] + wt[-1] + 4 * wt[1:-1:2].sum(0) + 2 * wt[2:-1:2].sum(0))
        h2 = 2 * h
        coarse = wt[::2]
        simpson2 = h2 / 3 * (coarse[0] + coarse[-1] + 4 * coarse[1:-1:2].sum(0) + 2 * coarse[2:-1:2].sum(0))
        return simpson, simpson2, integrand

    if n_steps % 4:
        raise DomainError("n_steps must be a multiple of 4")
    L1, L1c, integ = lhs(n_steps)
    L2, _, _ = lhs(2 * n_steps)
    quad_err = np.abs(L1 - L1c) / 15.0
    step_err = np.abs(L2 - L1)
    laplace_tail = math.exp(-alpha * T) * float(np.max(np.abs(integ[-1]))) / alpha
    residual = float(np.max(np.abs(L2 - rhs)))
    budget_terms = {
        "simpson": float(quad_err.max()),
        "time_step": float(step_err.max()),
        "laplace_tail": laplace_tail,
        "series_tail": rhs_tail,
    }
    budget = sum(budget_terms.values())
    return ResolventReport(float(alpha), n_max, residual, budget, budget_terms, tn, tr)


# ---------------------------------------------------------------------------
# convolution inequality battery
# ---------------------------------------------------------------------------

REGIME_VARIANT = {1: 0, 2: 0, 3: 1, 4: 2, 5: 3, 6: 4, 7: 5}
REGIME_LABELS = {
    1: "leg -> leg",
    2: "leg -> plane",
    3: "plane |x|<=1 -> leg",
    4: "plane |x|>1 -> leg",
    5: "plane -> plane, |y|>=M",
    6: "plane |x|>=2M -> plane |y|<M",
    7: "plane |x|<2M -> plane |y|<M",
}

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
_KS = np.array([0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.5, 6.5, 9.0, 13.0])


def sample_regime(regime, n, rng, M=48.0):
    """Draw ``n`` pairs for a regime.

    Returns ``(u_x, th_x, u_y, th_y)``; angles are ignored on the leg.
    """
    u = rng.uniform
    th_x = u(0, 2 * math.pi, n)
    th_y = u(0, 2 * math.pi, n)
    if regime == 1:
        return -u(0.05, 2.0, n), th_x, -u(0.05, 2.0, n), th_y
    if regime == 2:
        return -u(0.05, 2.0, n), th_x, u(0.05, 2.0, n), th_y
    if regime == 3:
        return u(0.05, 1.0, n), th_x, -u(0.05, 2.0, n), th_y
    if regime == 4:
        return u(1.0, 3.0, n), th_x, -u(0.05, 2.0, n), th_y
    if regime == 5:
        return u(M - 1.0, M + 2.0, n), th_x, u(M, M + 2.0, n), th_x + u(-0.02, 0.02, n)
    if regime == 6:
        return u(2 * M, 2 * M + 2.0, n), th_x, u(M - 3.0, M - 0.01, n), th_x + u(-0.02, 0.02, n)
    if regime == 7:
        return u(0.05, 2 * M - 0.01, n), th_x, u(0.05, M - 0.01, n), th_y
    raise DomainError(f"unknown regime {regime!r}; choose from 1..7")


def _composite(points, lo, hi):
    """Gauss-Legendre nodes and weights on ``[lo, hi]`` split at ``points``."""
    br = np.unique(np.clip(np.concatenate([[lo, hi], points]), lo, hi))
    br = br[np.concatenate([[True], np.diff(br) > 1e-14 * max(1.0, hi)])]
    a, b = br[:-1], br[1:]
    half = 0.5 * (b - a)
    x = (0.5 * (a + b))[:, None] + half[:, None] * _GL_X[None, :]
    w = half[:, None] * _GL_W[None, :]
    return x.ravel(), w.ravel()


def _breaks(centres, sigmas):
    c = np.asarray(centres, float)[:, None, None]
    s = np.asarray(sigmas, float)[None, :, None]
    k = np.concatenate([-_KS[1:], _KS])[None, None, :]
    return (c + s * k).ravel()


def _radial_b(drift, rho, eps):
    """``|b|`` on the plane as a function of ``|z| - eps``; must be rotation invariant."""
    R = rho + eps
    b0 = np.abs(drift.plane(R, np.zeros_like(R)))
    for ang in (0.7, 2.1, 4.0):
        bt = np.abs(drift.plane(R * math.cos(ang), R * math.sin(ang)))
        if not np.allclose(bt, b0, rtol=1e-9, atol=1e-12):
            raise DomainError("envelope mode needs a rotation-invariant plane drift")
    return b0


def _log_ratio_pair(t, ux, thx, uy, thy, drift, params, variant, alpha, beta, M, n_s):
    """log of LHS/RHS for one pair using the envelope bound for the gradient."""
    eps = params.eps
    x_leg, y_leg = ux < 0, uy < 0
    ax, ay = abs(ux), abs(uy)
    Rx, Ry = ax + eps, ay + eps
    if not (x_leg or y_leg):
        dxy = math.sqrt(max(Rx * Rx + Ry * Ry - 2 * Rx * Ry * math.cos(thx - thy), 0.0))
    else:
        dxy = abs(ux - uy)
    log_rhs = log_envelope_values(variant, alpha, t, ux, uy, dxy, M)

    th, wth = np.polynomial.legendre.leggauss(n_s)
    th = 0.5 * math.pi * (th + 1)
    ss = 0.5 * t * (1 - np.cos(th))
    ds = 0.5 * math.pi * wth * 0.5 * t * np.sin(th)

    acc = []
    for s, w_s in zip(ss, ds):
        r = t - s
        sig = [math.sqrt(r / (2 * alpha)), math.sqrt(s / (2 * beta)),
               math.sqrt(r / (8 * alpha)), math.sqrt(s / (4 * beta))]
        # leg part
        if not drift.is_zero:
            zc = [0.0, ax if x_leg else 0.0, ay if y_leg else 0.0]
            hi = max(zc) + 14 * max(sig[:2])
            z, wz = _composite(_breaks(zc, sig), 0.0, hi)
            z, wz = z[z > 0], wz[z > 0]
            bz = np.abs(drift.leg(z))
            with np.errstate(divide="ignore"):
                lz = (log_envelope_values(variant, alpha, r, ux, -z, None, M)
                      + log_gradient_envelope_values(s, -z, uy, beta)
                      + np.log(bz) + np.log(wz * params.p))
            acc.append(np.logaddexp.reduce(lz) + math.log(w_s))
        if drift.leg_only:
            continue
        # plane part, angular integral done in closed form
        zc = [0.0, 0.0 if x_leg else ax, 0.0 if y_leg else ay]
        if x_leg:
            first = None
        else:
            first = plane_terms(variant, alpha, r, ax, 1.0, M)
        if not (x_leg or y_leg):
            # centres of the Gaussian products, one per pair of exponents
            for k1 in {k for _, k in first if k > 0}:
                for k2 in (beta,):
                    q1, q2 = k1 / r, k2 / s
                    cx = (q1 * Rx * math.cos(thx) + q2 * Ry * math.cos(thy)) / (q1 + q2)
                    cy = (q1 * Rx * math.sin(thx) + q2 * Ry * math.sin(thy)) / (q1 + q2)
                    zc.append(max(math.hypot(cx, cy) - eps, 0.0))
                    sig.append(1.0 / math.sqrt(2 * (q1 + q2)))
        hi = max(zc) + 14 * max(sig[:2])
        rho, wr = _composite(_breaks(zc, sig), 0.0, hi)
        keep = rho > 0
        rho, wr = rho[keep], wr[keep]
        Rz = rho + eps
        bz = _radial_b(drift, rho, eps)
        with np.errstate(divide="ignore"):
            base = np.log(bz) + np.log(wr * Rz)
        if x_leg:
            first = [(log_envelope_values(variant, alpha, r, ux, rho, None, M), 0.0)]
        else:
            first = plane_terms(variant, alpha, r, ax, rho, M)
        if y_leg:
            second = [(log_gradient_envelope_values(s, rho, uy, beta), 0.0)]
        else:
            second = gradient_plane_terms(s, rho, ay, beta)
        parts = []
        for la, k1 in first:
            for lb, k2 in second:
                c1 = 2 * k1 * Rx * Rz / r if not x_leg else 0.0 * Rz
                c2 = 2 * k2 * Rz * Ry / s if not y_leg else 0.0 * Rz
                mag = np.abs(c1 * np.exp(1j * thx) + c2 * np.exp(1j * thy))
                quad = (-(k1 * (Rx * Rx + Rz * Rz) / r if not x_leg else 0.0)
                        - (k2 * (Rz * Rz + Ry * Ry) / s if not y_leg else 0.0))
                ang = math.log(2 * math.pi) + np.log(special.i0e(mag)) + mag
                parts.append(la + lb + quad + ang + base)
        acc.append(np.logaddexp.reduce(np.concatenate(parts)) + math.log(w_s))
    if not acc:
        return -np.inf
    return float(np.logaddexp.reduce(acc)) - log_rhs


def _log_ratio_kernel(t, ux, uy, drift, prop, variant, alpha, M, n_s):
    """Same ratio with the gradient of the driftless kernel from ``prop``."""
    D = derivative_matrix(prop.y, prop.grid.i0)
    iy = prop.local_index(uy)
    leg = prop.y < 0
    bz = np.abs(drift.radial(prop.y)) * leg
    th, wth = np.polynomial.legendre.leggauss(n_s)
    th = 0.5 * math.pi * (th + 1)
    ss = 0.5 * t * (1 - np.cos(th))
    ds = 0.5 * math.pi * wth * 0.5 * t * np.sin(th)
    total = noise = 0.0
    for s, w_s in zip(ss, ds):
        ks = prop.kernel(s, [iy])[0]
        grad = np.abs(D @ ks)
        env = envelope_values(variant, alpha, t - s, ux, prop.y, None, M)
        total += w_s * float(np.sum(env * bz * grad * prop.w))
        # round-off level of the spectral kernel, spread over the leg
        noise += w_s * 1e-14 * float(np.max(np.abs(ks)) / np.min(np.diff(prop.y))) * float(np.sum(env * bz * prop.w))
    if total <= 100 * noise:
        return math.nan
    rhs = envelope_values(variant, alpha, t, ux, uy, None, M)
    return math.log(total) - math.log(rhs)


@dataclass
class ConvolutionReport:
    regime: int
    variant: int
    alpha: float
    beta: float
    times: list
    max_ratio: list
    monotone: bool
    decrease_fraction: float
    mode: str
    n_pairs: int
    n_skipped: int = 0

    def to_json(self):
        return json.dumps(self.__dict__, indent=2, sort_keys=True)


def verify_convolution_inequality(regime, drift: DriftSpec, params: ModelParams, alpha=0.25,
                                  beta=0.5, times=None, n_pairs=8, seed=0, mode="envelope",
                                  prop: Optional[SpectralPropagator] = None, M=48.0, n_s=32):
    """Numerically evaluate the ratio of the drift convolution to the envelope.

    For every ``t`` the quantity

        int_0^t int_E p^0(t - s, x, z) |b(z)| G(s, z, y) m_p(dz) ds / p^0(t, x, y)

    is maximised over ``n_pairs`` sampled ``(x, y)`` of the regime, where
    ``G`` is the gradient bound (``mode="envelope"``) or the absolute
    gradient of the driftless kernel computed from ``prop``
    (``mode="kernel"``, leg-supported drifts and regimes 1-4 only).  The time
    integral uses ``s = t (1 - cos theta) / 2`` which removes both endpoint
    singularities.  Work is done in log space so the far regimes do not
    underflow.

    In kernel mode pairs whose left side sits at the round-off level of the
    spectral kernel are skipped and counted in ``n_skipped``.

    Returns
    -------
    ConvolutionReport
        ``max_ratio`` per time, whether it is non-decreasing in ``t`` and
        the fractional decrease between the two smallest times (a halving
        when ``times`` are dyadic).
    """
    if regime not in REGIME_VARIANT:
        raise DomainError(f"unknown regime {regime!r}; choose from 1..7")
    if not (alpha > 0 and beta >= alpha):
        raise DomainError("need 0 < alpha <= beta")
    variant = REGIME_VARIANT[regime]
    if times is None:
        times = [2.0 ** -k for k in range(7, -1, -1)]
    times = sorted(float(t) for t in times)
    rng = np.random.default_rng(seed)
    ux, thx, uy, thy = sample_regime(regime, n_pairs, rng, M)
    if mode == "kernel":
        if prop is None or not drift.leg_only or regime > 4:
            raise DomainError("kernel mode needs a propagator, a leg drift and regime 1-4")
        ux = prop.y[[prop.local_index(v) for v in ux]]
        uy = prop.y[[prop.local_index(v) for v in uy]]
    elif mode != "envelope":
        raise DomainError(f"unknown gradient mode {mode!r}")
    curve = []
    n_skipped = 0
    for t in times:
        best = -np.inf
        for i in range(n_pairs):
            if mode == "kernel":
                lr = _log_ratio_kernel(t, ux[i], uy[i], drift, prop, variant, alpha, M, n_s)
            else:
                lr = _log_ratio_pair(t, ux[i], thx[i], uy[i], thy[i], drift, params, variant,
                                     alpha, beta, M, n_s)
            if math.isnan(lr):
                n_skipped += 1
            else:
                best = max(best, lr)
        curve.append(float(np.exp(best)))
    curve_a = np.array(curve)
    monotone = bool(np.all(np.diff(curve_a) >= -1e-9 * curve_a[1:]))
    dec = float(1 - curve_a[0] / curve_a[1]) if len(curve) > 1 and curve_a[1] > 0 else math.nan
    return ConvolutionReport(regime, variant, float(alpha), float(beta), times, curve,
                             monotone, dec, mode, int(n_pairs), n_skipped)
