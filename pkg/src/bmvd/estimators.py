"""scikit-learn style wrappers around the functional modules.

The estimators hold only constructor parameters until ``fit``; fitted state
lives in attributes with a trailing underscore.  Input arrays are checked
with :mod:`sklearn.utils.validation`.  Rows of ``X`` are signed radial
coordinates (``u < 0`` on the leg, ``0`` at a*), optionally followed by a
time or an angle column as documented per estimator.
"""
from __future__ import annotations


import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import drift as drift_mod
from .duhamel import SpaceTimeGrid, sum_series
from .geometry import DomainError, DomainSpec, ModelParams, from_signed
from .green import green_pairs
from .kernels import SandwichData, envelope_values, fit_sandwich
from .radial_pde import SpectralPropagator, build_grid
from .simulator import SimConfig, estimate_density, simulate_full, simulate_radial


def _drift(name, kw):
    return None if name in (None, "zero") else drift_mod.preset(name, **(kw or {}))


def _interp_rows(y, vals, u):
    """Linear interpolation of ``vals`` (last axis on nodes ``y``) at ``u``."""
    i = np.clip(np.searchsorted(y, u) - 1, 0, y.size - 2)
    f = (u - y[i]) / (y[i + 1] - y[i])
    return (1 - f) * vals[..., i] + f * vals[..., i + 1]


class RadialKernelEstimator(BaseEstimator):
    """Driftless semi-discrete kernel on a truncated radial grid.

    ``predict`` takes rows ``(t, u_x, u_y)`` and returns the density against
    m_p.  Sources are snapped to the nearest node, targets interpolated.
    """

    def __init__(self, eps=0.25, p=1.0, h=0.01, L_leg=4.0, L_plane=4.0):
        self.eps = eps
        self.p = p
        self.h = h
        self.L_leg = L_leg
        self.L_plane = L_plane

    def fit(self, X=None, y=None):
        self.params_ = ModelParams(self.eps, self.p)
        self.grid_ = build_grid(self.L_leg, self.L_plane, self.params_, h=self.h)
        self.prop_ = SpectralPropagator(self.grid_)
        return self

    def predict(self, X):
        check_is_fitted(self, "prop_")
        X = check_array(X, ensure_min_features=3)
        if np.any(X[:, 0] <= 0):
            raise DomainError("times must be positive")
        out = np.empty(X.shape[0])
        for k, (t, ux, uy) in enumerate(X[:, :3]):
            row = self.prop_.kernel(t, [self.prop_.local_index(ux)])[0]
            out[k] = _interp_rows(self.prop_.y, row, uy)
        return out


class MonteCarloDensity(BaseEstimator):
    """Histogram density of simulated endpoints.

    ``fit`` simulates from ``x0`` (signed coordinate) up to ``T``;
    ``transform`` maps endpoints to bin indices and ``score_samples``
    returns log densities against m_p (``-inf`` in empty bins).
    """

    def __init__(self, x0=0.0, T=0.25, dt=1e-3, n_paths=100_000, seed=0, eps=0.25, p=1.0,
                 n_bins=100, span=2.5, full=False, drift=None, drift_params=None, mode="none"):
        self.x0 = x0
        self.T = T
        self.dt = dt
        self.n_paths = n_paths
        self.seed = seed
        self.eps = eps
        self.p = p
        self.n_bins = n_bins
        self.span = span
        self.full = full
        self.drift = drift
        self.drift_params = drift_params
        self.mode = mode

    def fit(self, X=None, y=None):
        params = ModelParams(self.eps, self.p)
        cfg = SimConfig(dt=self.dt, T=self.T, n_paths=int(self.n_paths), seed=self.seed,
                        mode=self.mode, drift=_drift(self.drift, self.drift_params))
        ens = (simulate_full if self.full else simulate_radial)(self.x0, cfg, params)
        self.edges_ = np.linspace(-self.span, self.span, self.n_bins + 1)
        self.table_ = estimate_density(ens, self.edges_, params)
        self.params_ = params
        return self

    def transform(self, X):
        check_is_fitted(self, "table_")
        X = check_array(X, ensure_min_features=1)
        return np.searchsorted(self.edges_, X[:, 0], side="right") - 1

    def score_samples(self, X):
        idx = self.transform(X)
        inside = (idx >= 0) & (idx < self.n_bins)
        out = np.full(idx.shape, -np.inf)
        with np.errstate(divide="ignore"):
            out[inside] = np.log(self.table_.density[idx[inside]])
        return out


class EnvelopeSandwich(BaseEstimator):
    """Two-sided envelope fit.

    ``X`` has columns ``(t, u_x, u_y)`` and an optional Euclidean distance
    for plane pairs; ``y`` holds kernel values.  ``predict`` returns the
    upper bound ``c_up p^0(alpha_up)`` and ``transform`` both bounds.
    """

    def __init__(self, variant=0, alphas=None, rtol=0.05, rel_floor=1e-10, M=48.0):
        self.variant = variant
        self.alphas = alphas
        self.rtol = rtol
        self.rel_floor = rel_floor
        self.M = M

    @staticmethod
    def _split(X):
        d = X[:, 3] if X.shape[1] > 3 else None
        return X[:, 0], X[:, 1], X[:, 2], d

    def fit(self, X, y):
        X = check_array(X, ensure_min_features=3)
        y = check_array(np.asarray(y, float).reshape(-1, 1)).ravel()
        t, ux, uy, d = self._split(X)
        data = SandwichData(t, ux, uy, y, d)
        self.report_ = fit_sandwich(data, self.variant, self.alphas, rel_floor=self.rel_floor,
                                    rtol=self.rtol, M=self.M)
        return self

    def transform(self, X):
        check_is_fitted(self, "report_")
        X = check_array(X, ensure_min_features=3)
        t, ux, uy, d = self._split(X)
        r = self.report_
        lo = r.c_low * envelope_values(self.variant, r.alpha_low, t, ux, uy, d, self.M)
        hi = r.c_up * envelope_values(self.variant, r.alpha_up, t, ux, uy, d, self.M)
        return np.column_stack([lo, hi])

    def predict(self, X):
        return self.transform(X)[:, 1]

    def score(self, X, y):
        """Fraction of samples inside the fitted band."""
        b = self.transform(X)
        y = np.asarray(y, float)
        return float(np.mean((y >= b[:, 0] * (1 - 1e-9)) & (y <= b[:, 1] * (1 + 1e-9))))


class DuhamelEstimator(BaseEstimator):
    """Drifted kernel from the summed Duhamel series.

    ``fit(X)`` takes source coordinates (one column).  ``predict`` takes
    rows ``(t, u_x, u_y)`` with ``t`` on the fitted time grid and ``u_x``
    among the fitted sources.
    """

    def __init__(self, drift="smooth_bump", drift_params=None, T=0.5, n_steps=64, h=0.02,
                 L_leg=3.0, L_plane=3.0, eps=0.25, p=1.0, tol=1e-8):
        self.drift = drift
        self.drift_params = drift_params
        self.T = T
        self.n_steps = n_steps
        self.h = h
        self.L_leg = L_leg
        self.L_plane = L_plane
        self.eps = eps
        self.p = p
        self.tol = tol

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_features=1)
        params = ModelParams(self.eps, self.p)
        grid = build_grid(self.L_leg, self.L_plane, params, h=self.h)
        self.prop_ = SpectralPropagator(grid)
        stg = SpaceTimeGrid(self.prop_, self.T, self.n_steps)
        self.result_ = sum_series(stg, _drift(self.drift, self.drift_params), X[:, 0], tol=self.tol,
                                  keep_levels=False)
        self.sources_ = self.prop_.y[[self.prop_.local_index(s) for s in X[:, 0]]]
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        X = check_array(X, ensure_min_features=3)
        times = self.result_.times
        out = np.empty(X.shape[0])
        for k, (t, ux, uy) in enumerate(X[:, :3]):
            i = int(np.argmin(np.abs(times - t)))
            if abs(times[i] - t) > 1e-9 * max(1.0, t):
                raise DomainError(f"t = {t} is not on the fitted time grid")
            j = int(np.argmin(np.abs(self.sources_ - ux)))
            if abs(self.sources_[j] - ux) > 0.5 * self.h + 1e-12:
                raise DomainError(f"source {ux} was not fitted")
            out[k] = _interp_rows(self.prop_.y, self.result_.values[i, j], uy)
        return out


class GreenEstimator(BaseEstimator):
    """Green function of the killed process for drifts vanishing on the plane.

    ``predict`` rows are ``(u_x, theta_x, u_y, theta_y)``; angles are
    ignored on the leg.
    """

    def __init__(self, leg_length=1.0, plane_radius=2.0, eps=0.25, p=1.0, h=5e-3,
                 drift=None, drift_params=None):
        self.leg_length = leg_length
        self.plane_radius = plane_radius
        self.eps = eps
        self.p = p
        self.h = h
        self.drift = drift
        self.drift_params = drift_params

    def fit(self, X=None, y=None):
        self.params_ = ModelParams(self.eps, self.p)
        self.domain_ = DomainSpec(self.leg_length, self.plane_radius).validate(self.params_)
        self.drift_ = _drift(self.drift, self.drift_params)
        return self

    def predict(self, X):
        check_is_fitted(self, "domain_")
        X = check_array(X, ensure_min_features=4)
        xs = [from_signed(u, self.params_, th) for u, th in X[:, :2]]
        ys = [from_signed(u, self.params_, th) for u, th in X[:, 2:4]]
        return green_pairs(self.domain_, xs, ys, self.params_, self.drift_, h=self.h)

    def score_samples(self, X):
        return np.log(self.predict(X))
