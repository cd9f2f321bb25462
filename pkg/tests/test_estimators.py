import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from bmvd.estimators import (DuhamelEstimator, EnvelopeSandwich, GreenEstimator, MonteCarloDensity,
                             RadialKernelEstimator)
from bmvd.geometry import DomainError, DomainSpec, ModelParams
from bmvd.green import radial_green
from bmvd.kernels import envelope_values

ESTIMATORS = [RadialKernelEstimator(h=0.02), MonteCarloDensity(n_paths=2000, dt=1e-2), EnvelopeSandwich(),
              DuhamelEstimator(n_steps=16, h=0.05), GreenEstimator(h=0.02)]


@pytest.mark.parametrize("est", ESTIMATORS, ids=lambda e: type(e).__name__)
def test_clone_and_params(est):
    c = clone(est)
    assert c.get_params() == est.get_params()
    assert c is not est
    key = sorted(est.get_params())[0]
    c.set_params(**{key: est.get_params()[key]})


def test_not_fitted():
    with pytest.raises(NotFittedError):
        RadialKernelEstimator().predict([[0.1, 0.0, 0.0]])


def test_radial_kernel_estimator_mass():
    est = RadialKernelEstimator(h=0.02, L_leg=4.0, L_plane=4.0).fit()
    y = est.prop_.y
    X = np.column_stack([np.full(y.size, 0.2), np.zeros(y.size), y])
    v = est.predict(X)
    assert v @ est.prop_.w == pytest.approx(1.0, abs=1e-8)
    with pytest.raises(DomainError):
        est.predict([[0.0, 0.0, 0.0]])


def test_monte_carlo_density_scores():
    est = MonteCarloDensity(n_paths=20_000, dt=1e-2, T=0.1, seed=1, n_bins=20, span=1.5).fit()
    s = est.score_samples([[0.0], [5.0]])
    assert np.isfinite(s[0]) and s[1] == -np.inf
    assert est.transform([[-1.5], [1.49]]).tolist() == [0, 19]


def test_envelope_sandwich_band_covers_data():
    rng = np.random.default_rng(0)
    t = rng.uniform(0.05, 1, 500)
    ux, uy = -rng.uniform(0, 1, 500), -rng.uniform(0, 1, 500)
    y = 2.0 * envelope_values(0, 0.8, t, ux, uy)
    X = np.column_stack([t, ux, uy])
    est = EnvelopeSandwich(rel_floor=0.0).fit(X, y)
    assert est.score(X, y) == 1.0
    assert est.transform(X).shape == (500, 2)


def test_duhamel_estimator_predicts_on_fitted_grid():
    est = DuhamelEstimator(T=0.25, n_steps=16, h=0.05).fit([[0.0]])
    t = est.result_.times[-1]
    v = est.predict([[t, 0.0, -0.5], [t, 0.0, 0.5]])
    assert np.all(v > 0)
    with pytest.raises(DomainError):
        est.predict([[0.123, 0.0, 0.0]])


def test_green_estimator_matches_closed_form():
    est = GreenEstimator(h=0.01).fit()
    X = np.array([[-0.3, 0.0, 0.5, 1.0], [0.4, 0.0, -0.6, 0.0]])
    ref = radial_green(DomainSpec(1.0, 2.0), X[:, 0], X[:, 2], ModelParams())
    np.testing.assert_allclose(est.predict(X), ref, rtol=1e-3)
    assert np.all(np.isfinite(est.score_samples(X)))
