"""Green functions of the killed process on symmetric domains.

Three estimators are provided:

* :func:`green_exact` - driftless closed form.  Radial pairs use the 1-D
  scale-function formula, plane pairs add the Dirichlet Green function of the
  annulus ``eps < |x| < R`` (method of images in the Fourier variable) to
  ``h(x) G(a*, y)`` where ``h`` is the probability to reach a* before
  ``|x| = R``.
* :func:`green_pde` / :func:`green_pairs` - semi-discrete radial operator
  (with leg-supported or radial drift), integrated in time.
* :func:`green_mc` - occupation times of simulated paths.

All Green functions are densities against m_p.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.linalg import expm
from scipy.sparse.linalg import splu

from .drift import DriftSpec
from .geometry import (STAR, DomainError, DomainSpec, EPoint, Leg, ModelParams, Plane, delta_D, delta_U2,
                       euclid, kind, leg_point, polar_point, rho, signed_radial_embed)
from .radial_pde import Grid1D, _Stepper, domain_grid, radial_drift_edges
from .simulator import SimConfig, occupation_and_exit

CASES = ("leg/leg", "plane/plane", "mixed")


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------

def scale(y, params: ModelParams):
    """Scale function of the radial coordinate, ``s(0) = 0``."""
    y = np.asarray(y, float)
    with np.errstate(invalid="ignore", divide="ignore"):
        plane = np.log((np.maximum(y, 0.0) + params.eps) / params.eps) / (2 * math.pi)
    return np.where(y < 0, y / params.p, plane)


def radial_green(D: DomainSpec, u_x, u_y, params: ModelParams):
    """Driftless Green function for a pair of which one point is radial.

    ``G = 2 (s(x ^ y) - s(-l)) (s(c) - s(x v y)) / (s(c) - s(-l))`` with
    ``c = R - eps``.  Valid when at least one point is on the leg or at a*,
    or for the angular average of a plane column.
    """
    u_x, u_y = np.broadcast_arrays(np.asarray(u_x, float), np.asarray(u_y, float))
    a = float(scale(-D.leg_length, params))
    c = float(scale(D.plane_extent(params), params))
    lo = scale(np.minimum(u_x, u_y), params)
    hi = scale(np.maximum(u_x, u_y), params)
    return 2 * (lo - a) * (c - hi) / (c - a)


def annulus_green(r1, th1, r2, th2, eps, R, n_images=16):
    """Dirichlet Green function of ``-Delta/2`` on ``eps < |x| < R``.

    Summing the Fourier modes against the geometric expansion of
    ``1 / (1 - (eps/R)^{2n})`` turns each image family into a logarithm.
    """
    r1, th1, r2, th2 = np.broadcast_arrays(*(np.asarray(v, float) for v in (r1, th1, r2, th2)))
    rl, rg = np.minimum(r1, r2), np.maximum(r1, r2)
    c = np.cos(th1 - th2)
    q2 = (eps / R) ** 2
    rhos = (rl / rg, rl * rg / R ** 2, eps ** 2 / (rl * rg), eps ** 2 * rg / (rl * R ** 2))
    signs = (-1.0, 1.0, 1.0, -1.0)
    out = 2 * np.log(rl / eps) * np.log(R / rg) / math.log(R / eps)
    for k in range(n_images):
        f = q2 ** k
        for z0, sg in zip(rhos, signs):
            z = z0 * f
            with np.errstate(divide="ignore"):
                out = out + sg * np.log(1 - 2 * z * c + z * z)
    return out / (2 * math.pi)


def hit_star_prob(norm_x, D: DomainSpec, params: ModelParams):
    """``P_x(reach a* before |x| = R)`` from the plane."""
    return np.log(D.plane_radius / np.asarray(norm_x, float)) / math.log(D.plane_radius / params.eps)


def green_exact(D: DomainSpec, x: EPoint, y: EPoint, params: ModelParams) -> float:
    """Driftless Green function ``G_D(x, y)`` against m_p (x != y)."""
    D.validate(params)
    if not (D.contains(x, params) and D.contains(y, params)):
        raise DomainError("both points must lie in the domain")
    if x == y:
        raise DomainError("Green function is infinite on the diagonal")
    ux = signed_radial_embed(x, params)
    uy = signed_radial_embed(y, params)
    if isinstance(x, Plane) and isinstance(y, Plane):
        g = annulus_green(x.norm, x.angle, y.norm, y.angle, params.eps, D.plane_radius)
        return float(g + hit_star_prob(x.norm, D, params) * radial_green(D, 0.0, uy, params))
    return float(radial_green(D, ux, uy, params))


def leg_interval_green(x, y, length, p=1.0):
    """Green function of ``d^2/2`` on ``(0, length)`` against ``p`` Lebesgue."""
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    lo, hi = np.minimum(x, y), np.maximum(x, y)
    return 2 * lo * (length - hi) / (length * p)


# ---------------------------------------------------------------------------
# PDE estimator
# ---------------------------------------------------------------------------

def generator(grid: Grid1D, drift: Optional[DriftSpec] = None):
    """Sparse forward generator on the active nodes (densities vs m~)."""
    mu = radial_drift_edges(grid, drift)
    st = _Stepper(grid, mu)
    n = st.idx.size
    S = sparse.diags([st.off, st.diag, st.off], [-1, 0, 1], format="csc")
    Q = -S
    if mu is not None:
        cols = st.drift_divergence(np.eye(n))
        Q = Q - sparse.csc_matrix(cols)
    return sparse.diags(1.0 / st.w) @ Q, st


@dataclass
class GreenColumn:
    """Green function column ``G(x0, .)`` on the nodes of a radial grid."""

    y: np.ndarray
    values: np.ndarray
    weights: np.ndarray
    source: float
    T: float
    residual_mass: float
    meta: dict = field(default_factory=dict)

    def total(self) -> float:
        """``int G(x0, y) m_p(dy)``, the mean exit time."""
        return float(self.values @ self.weights)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["y", "green", "m_weight"])
            for row in zip(self.y, self.values, self.weights):
                wr.writerow([repr(float(v)) for v in row])


def _source_coord(x0, params):
    if isinstance(x0, (Leg, Plane)) or x0 is STAR:
        return signed_radial_embed(x0, params)
    return float(x0)


def green_pde(D: DomainSpec, x0, drift: Optional[DriftSpec] = None, grid: Optional[Grid1D] = None,
              params: Optional[ModelParams] = None, h=5e-3, T_max=1e4, mass_tol=1e-6, T0=0.25) -> GreenColumn:
    """Green column from the killed radial operator.

    ``G = int_0^T exp(tQ) delta dt = Q^{-1}(exp(TQ) - I) delta`` integrates
    the semi-discrete flow exactly in time; ``T`` doubles from ``T0`` until
    the surviving mass drops below ``mass_tol``.  For a plane source the
    column is the angular average.

    Raises
    ------
    DomainError
        When the mass floor is not reached by ``T_max``.
    """
    if grid is None:
        if params is None:
            raise DomainError("give either a grid or model parameters")
        grid = domain_grid(D, params, h=h)
    params = grid.params
    D.validate(params)
    Q, st = generator(grid, drift)
    u0 = _source_coord(x0, params)
    if not (-D.leg_length < u0 < D.plane_extent(params)):
        raise DomainError("source outside the domain")
    j = int(np.searchsorted(st.idx, grid.node_index(u0)))
    delta = np.zeros(st.idx.size)
    delta[j] = 1.0 / st.w[j]
    T = float(T0)
    E = expm(Q.toarray() * T)
    while True:
        tail = E @ delta
        mass = float(st.w @ tail)
        if mass < mass_tol:
            break
        if 2 * T > T_max:
            raise DomainError(f"mass {mass:.3g} left at T_max = {T_max}; absorption too slow")
        E = E @ E
        T *= 2
    g = splu(Q.tocsc()).solve(tail - delta)
    full = np.zeros(grid.n_nodes)
    full[st.idx] = g
    return GreenColumn(grid.y.copy(), full, grid.w.copy(), float(grid.y[st.idx[j]]), T, mass,
                       {"drift": "zero" if drift is None else drift.name})


def green_matrix(grid: Grid1D, drift: Optional[DriftSpec] = None):
    """``G[i, j] = G(y_i, y_j)`` for all active node pairs (``T = infinity``).

    Column ``j`` of ``-Q^{-1}`` is the occupation density of a path started
    at node ``j``, hence the transpose.
    """
    Q, st = generator(grid, drift)
    G = -np.linalg.inv(Q.toarray()) / st.w[None, :]
    return st.idx, G.T


def _interp_matrix(y, G, ux, uy):
    """Bilinear interpolation of a node matrix at ``(ux, uy)``."""
    def lin(u):
        i = np.clip(np.searchsorted(y, u) - 1, 0, y.size - 2)
        f = (u - y[i]) / (y[i + 1] - y[i])
        return i, f
    i, fi = lin(ux)
    j, fj = lin(uy)
    return ((1 - fi) * (1 - fj) * G[i, j] + fi * (1 - fj) * G[i + 1, j]
            + (1 - fi) * fj * G[i, j + 1] + fi * fj * G[i + 1, j + 1])


def green_pairs(D: DomainSpec, xs, ys, params: ModelParams, drift: Optional[DriftSpec] = None,
                h=5e-3) -> np.ndarray:
    """``G^b_D(x, y)`` for lists of points and a drift vanishing on the plane.

    Radial pairs come from the discrete Green matrix.  For a plane ``x`` the
    path runs driftless until it reaches a*, so
    ``G(x, y) = G_annulus(x, y) + h(x) G(a*, y)`` (the annulus term only for
    plane ``y``).
    """
    if drift is not None and not (drift.leg_only or drift.is_zero):
        raise DomainError("green_pairs needs a drift supported on the leg; use green_mc")
    grid = domain_grid(D, params, h=h)
    idx, G = green_matrix(grid, drift)
    yfull = grid.y
    Gfull = np.zeros((yfull.size, yfull.size))
    Gfull[np.ix_(idx, idx)] = G
    out = np.empty(len(xs))
    for k, (x, y) in enumerate(zip(xs, ys)):
        uy = signed_radial_embed(y, params)
        if isinstance(x, Plane):
            val = hit_star_prob(x.norm, D, params) * _interp_matrix(yfull, Gfull, 0.0, uy)
            if isinstance(y, Plane):
                val += annulus_green(x.norm, x.angle, y.norm, y.angle, params.eps, D.plane_radius)
        else:
            val = _interp_matrix(yfull, Gfull, signed_radial_embed(x, params), uy)
        out[k] = float(val)
    return out


# ---------------------------------------------------------------------------
# Monte Carlo estimator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LegInterval:
    """Domain ``(a, b)`` inside the leg, away from a*."""

    a: float
    b: float

    def __post_init__(self):
        if not (0 < self.a < self.b):
            raise DomainError("leg interval needs 0 < a < b")


@dataclass
class GreenMC:
    edges: np.ndarray
    green: np.ndarray
    se: np.ndarray
    mean_exit: float
    mean_exit_se: float
    frac_alive: float

    @property
    def centers(self):
        return 0.5 * (self.edges[1:] + self.edges[:-1])


def _leg_interval_mc(I: LegInterval, r0, config: SimConfig, drift, params, edges):
    """Occupation of BM on a leg interval, killed at both ends (exact bridge test)."""
    n_steps = config.n_steps
    dt = config.T / n_steps
    edges = np.asarray(edges, float)
    nb = edges.size - 1
    meas = params.p * np.diff(edges)
    root = np.random.SeedSequence(config.seed)
    n_batches = max(2, int(math.ceil(config.n_paths / 4096)))
    sizes = np.full(n_batches, config.n_paths // n_batches)
    sizes[: config.n_paths - sizes.sum()] += 1
    occ = np.zeros((n_batches, nb))
    texit = []
    for bi, (size, ss) in enumerate(zip(sizes, root.spawn(n_batches))):
        rng = np.random.default_rng(ss)
        r = np.full(size, float(r0))
        alive = np.ones(size, bool)
        te = np.full(size, config.T)
        for k in range(n_steps):
            if not alive.any():
                break
            ra = r[alive]
            b = 0.0 if drift is None else drift.leg(ra)
            new = ra + b * dt + math.sqrt(dt) * rng.standard_normal(ra.size)
            # bridge crossing probability of either end
            pa = np.exp(-2 * np.maximum(ra - I.a, 0) * np.maximum(new - I.a, 0) / dt)
            pb = np.exp(-2 * np.maximum(I.b - ra, 0) * np.maximum(I.b - new, 0) / dt)
            u = rng.random(ra.size)
            killed = (new <= I.a) | (new >= I.b) | (u < pa + pb)
            # occupation over the step credited at the start point (left rule)
            keep = ~killed
            h = np.histogram(ra, bins=edges)[0] * dt
            occ[bi] += h
            ids = np.flatnonzero(alive)
            te[ids[killed]] = (k + 1) * dt
            r[ids] = new
            alive[ids[killed]] = False
        texit.append(te)
    n = sizes.sum()
    tot = occ.sum(0) / n
    per = occ / sizes[:, None]
    se = np.sqrt(np.sum(sizes[:, None] * (per - tot) ** 2, 0) / (n * (n_batches - 1)))
    te = np.concatenate(texit)
    alive_frac = float(np.mean(te >= config.T))
    return GreenMC(edges, tot / meas, se / meas, float(te.mean()), float(te.std(ddof=1) / math.sqrt(n)),
                   alive_frac)


def green_mc(D, x0, params: ModelParams, config: Optional[SimConfig] = None, drift: Optional[DriftSpec] = None,
             edges=None, n_bins=40) -> GreenMC:
    """Green column ``G(x0, .)`` over signed-coordinate bins from occupation times.

    ``D`` is a :class:`~bmvd.geometry.DomainSpec` (the bins then give the
    angular average over plane shells) or a :class:`LegInterval`, where
    ``x0`` is a leg radius and plain 1-D paths are used.
    """
    if config is None:
        config = SimConfig(dt=1e-4, T=8.0, n_paths=20000, seed=0)
    if isinstance(D, LegInterval):
        if edges is None:
            edges = np.linspace(D.a, D.b, n_bins + 1)
        r0 = x0.r if isinstance(x0, Leg) else float(x0)
        return _leg_interval_mc(D, r0, config, drift, params, edges)
    if edges is None:
        edges = np.linspace(-D.leg_length, D.plane_extent(params), n_bins + 1)
    if drift is not None and config.drift is None:
        mode = config.mode if config.mode != "none" else "euler_maruyama"
        config = SimConfig(**{**config.__dict__, "drift": drift, "mode": mode})
    ex = occupation_and_exit(x0, config, params, D, edges)
    return GreenMC(ex.edges, ex.green, ex.green_se, ex.mean_exit, ex.mean_exit_se, ex.frac_alive)


# ---------------------------------------------------------------------------
# comparison form and reports
# ---------------------------------------------------------------------------

def classify(x: EPoint, y: EPoint) -> str:
    kx = "plane" if isinstance(x, Plane) else "leg"
    ky = "plane" if isinstance(y, Plane) else "leg"
    if kx == ky:
        return "leg/leg" if kx == "leg" else "plane/plane"
    return "mixed"


def thm110_form(D: DomainSpec, x: EPoint, y: EPoint, params: ModelParams) -> float:
    """Three-case comparison function for the Green function on ``D``."""
    if x == y:
        raise DomainError("comparison form is undefined on the diagonal")
    dx, dy = delta_D(x, D, params), delta_D(y, D, params)
    case = classify(x, y)
    if case == "leg/leg":
        return min(dx, dy)
    if case == "mixed":
        return dx * dy
    d = euclid(x, y, params)
    return dx * dy + math.log1p(delta_U2(x, D, params) * delta_U2(y, D, params) / d ** 2)


@dataclass
class GreenReport:
    """Estimates of ``G`` against the comparison form, grouped by case."""

    pairs: list
    estimate: list
    form: list
    cases: list
    constants: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (len(self.pairs) == len(self.estimate) == len(self.form) == len(self.cases)):
            raise DomainError("report columns differ in length")
        if any(c not in CASES for c in self.cases):
            raise DomainError("unknown case label")

    def ratios(self):
        return np.asarray(self.estimate, float) / np.asarray(self.form, float)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def fit_green(report: GreenReport) -> dict:
    """Per-case ``min``/``max`` of estimate / form and their spread."""
    r = report.ratios()
    cases = np.asarray(report.cases)
    out = {}
    for c in CASES:
        sel = r[cases == c]
        if sel.size == 0:
            continue
        lo, hi = float(sel.min()), float(sel.max())
        out[c] = {"c_low": lo, "c_up": hi, "spread": hi / lo if lo > 0 else math.inf, "n": int(sel.size)}
    report.constants = out
    return out


def _point_payload(x, params):
    if isinstance(x, Plane):
        return ["plane", x.x1, x.x2]
    if isinstance(x, Leg):
        return ["leg", x.r]
    return ["star"]


def sample_pairs(D: DomainSpec, params: ModelParams, n_pairs=200, seed=0, min_sep=0.015):
    """Pairs in ``D`` drawn half on the leg, half on the plane (uniform area).

    Pairs closer than ``min_sep`` in rho are redrawn (diagonal exclusion).
    """
    rng = np.random.default_rng(seed)
    R, eps, l = D.plane_radius, params.eps, D.leg_length

    def draw():
        if rng.random() < 0.5:
            return leg_point(rng.uniform(0.0, l) or l / 2)
        r = math.sqrt(rng.uniform(eps ** 2, R ** 2))
        return polar_point(max(r - eps, 1e-9), rng.uniform(0, 2 * math.pi), params)

    pairs = []
    while len(pairs) < n_pairs:
        x, y = draw(), draw()
        if rho(x, y, params) >= min_sep:
            pairs.append((x, y))
    return pairs


def green_report(D: DomainSpec, params: ModelParams, drift: Optional[DriftSpec] = None, n_pairs=200,
                 seed=0, h=5e-3) -> GreenReport:
    """Sample pairs, estimate ``G^b_D`` and compare with :func:`thm110_form`."""
    pairs = sample_pairs(D, params, n_pairs, seed, min_sep=3 * h)
    xs, ys = [p[0] for p in pairs], [p[1] for p in pairs]
    est = green_pairs(D, xs, ys, params, drift, h=h)
    form = [thm110_form(D, x, y, params) for x, y in pairs]
    rep = GreenReport([[_point_payload(x, params), _point_payload(y, params)] for x, y in pairs],
                      est.tolist(), form, [classify(x, y) for x, y in pairs],
                      meta={"leg_length": D.leg_length, "plane_radius": D.plane_radius,
                            "eps": params.eps, "p": params.p, "h": h,
                            "drift": "zero" if drift is None else drift.name, "seed": seed})
    fit_green(rep)
    return rep
