"""Canonical Gaussian-type envelopes on E and two-sided constant fits.

Six envelope families are provided (``variant`` 0..5).  They agree on
leg/leg pairs and differ in the exponent constants of the mixed and
plane/plane branches.  Everything is vectorised over signed radial
coordinates; see :func:`envelope_values`.  For plane/plane pairs the
Euclidean distance must be supplied separately because it is not a function
of the two radii alone.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import DomainError, EPoint, ModelParams, euclid, kind, pair_geometry, signed_radial_embed

M_DEFAULT = 48.0
VARIANTS = (0, 1, 2, 3, 4, 5)


@dataclass(frozen=True)
class EnvelopeVariant:
    variant_id: int = 0
    alpha: float = 1.0
    M: float = M_DEFAULT

    def __post_init__(self):
        if self.variant_id not in VARIANTS:
            raise DomainError(f"unknown envelope variant {self.variant_id!r}")
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise DomainError("alpha must be positive")
        if not self.M > 0:
            raise DomainError("M must be positive")

    def with_alpha(self, alpha):
        return EnvelopeVariant(self.variant_id, float(alpha), self.M)


def _two_term(t, ax, ay, d, a1, a2):
    st = np.sqrt(t)
    first = np.exp(-a1 * (ax * ax + ay * ay) / t) / st
    cx = np.minimum(1.0, ax / st)
    cy = np.minimum(1.0, ay / st)
    return first + cx * cy * np.exp(-a2 * d * d / t) / t


def envelope_values(variant, alpha, t, u_x, u_y, dxy=None, M=M_DEFAULT):
    """Evaluate ``p^0_{variant, alpha}(t, x, y)`` on arrays.

    Parameters
    ----------
    variant : int
        Envelope family, 0..5.
    alpha : float
        Exponent constant.
    t : array_like
        Positive times.
    u_x, u_y : array_like
        Signed radial coordinates (negative on the leg, 0 at a*).
    dxy : array_like, optional
        Euclidean distance used on plane/plane pairs.  Defaults to
        ``|u_x - u_y|`` (radially aligned pairs).
    M : float
        Threshold constant of variants 4 and 5.

    Returns
    -------
    ndarray
        Envelope values, broadcast over the inputs.
    """
    if variant not in VARIANTS:
        raise DomainError(f"unknown envelope variant {variant!r}")
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise DomainError("envelope requires t > 0")
    ax, ay, lx, ly, d = pair_geometry(u_x, u_y, dxy)
    t = np.broadcast_to(t, ax.shape)
    a = float(alpha)
    st = np.sqrt(t)

    leg_leg = np.exp(-a * (ax - ay) ** 2 / t) / st
    mix_c = 4.0 if variant in (3, 4) else 1.0
    mixed = np.exp(-mix_c * a * (ax * ax + ay * ay) / t) / st

    mx = np.maximum(ax, ay)
    if variant in (0, 1, 2, 3):
        far_c = 2.0 if variant == 2 else 1.0
        near2 = 2.0 if variant == 1 else 1.0
        far = np.exp(-far_c * a * d * d / t) / t
        near = _two_term(t, ax, ay, d, a, near2 * a)
        pp = np.where(mx > 1.0, far, near)
    elif variant == 4:
        pp = _two_term(t, ax, ay, d, a, a)
        pp = np.where((ax >= 2 * M) & (ay < M), np.exp(-a * (ax - ay) ** 2 / t) / t, pp)
        pp = np.where(ay >= M, np.exp(-2 * a * d * d / t) / t, pp)
    else:
        pp = np.where(mx > 4 * M, np.exp(-2 * a * d * d / t) / t,
                      _two_term(t, ax, ay, d, a, 2 * a))

    out = np.where(lx & ly, leg_leg, np.where(lx | ly, mixed, pp))
    return out if out.ndim else float(out)


def _pair_args(x: EPoint, y: EPoint, params: ModelParams):
    ux = signed_radial_embed(x, params)
    uy = signed_radial_embed(y, params)
    d = euclid(x, y, params) if kind(x) != "leg" and kind(y) != "leg" else abs(ux - uy)
    return ux, uy, d


def envelope(variant: EnvelopeVariant, t: float, x: EPoint, y: EPoint, params: ModelParams) -> float:
    """Scalar envelope ``p^0_{k,alpha}(t, x, y)`` for two points of E."""
    if not t > 0:
        raise DomainError("envelope requires t > 0")
    ux, uy, d = _pair_args(x, y, params)
    return float(envelope_values(variant.variant_id, variant.alpha, t, ux, uy, d, variant.M))


def gradient_envelope_values(t, u_x, u_y, beta, dxy=None):
    """Gradient bound in the ``x`` variable, vectorised.

    ``(1/sqrt t) p^0_{0,beta}`` when a leg point is involved or the plane pair
    has ``max(|x|_rho, |y|_rho) >= 1``; otherwise the two-term small-radius
    form ``t^-1 exp(-beta(|x|^2+|y|^2)/t) + t^-3/2 (1 ^ |y|/sqrt t) exp(-beta d^2/t)``.
    """
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise DomainError("gradient envelope requires t > 0")
    ax, ay, lx, ly, d = pair_geometry(u_x, u_y, dxy)
    t = np.broadcast_to(t, ax.shape)
    st = np.sqrt(t)
    base = envelope_values(0, beta, t, u_x, u_y, dxy) / st
    small = (np.exp(-beta * (ax * ax + ay * ay) / t) / t
             + np.minimum(1.0, ay / st) * np.exp(-beta * d * d / t) / (t * st))
    plane_pair = ~lx & ~ly
    out = np.where(plane_pair & (np.maximum(ax, ay) < 1.0), small, base)
    return out if out.ndim else float(out)


def gradient_envelope(t: float, x: EPoint, y: EPoint, params: ModelParams, beta: float) -> float:
    if not t > 0:
        raise DomainError("gradient envelope requires t > 0")
    ux, uy, d = _pair_args(x, y, params)
    return float(gradient_envelope_values(t, ux, uy, beta, d))


# ---------------------------------------------------------------------------
# sandwich fits
# ---------------------------------------------------------------------------

@dataclass
class BoundReport:
    """Two-sided comparison of an empirical kernel with an envelope family.

    ``c_up`` bounds ``empirical / envelope(alpha_up)`` from above and
    ``c_low`` bounds ``empirical / envelope(alpha_low)`` from below.
    ``ratio_min`` is the smallest ratio against the upper envelope and
    ``ratio_max`` the largest against the lower one; they measure how loose
    each side is.
    """

    c_low: float
    c_up: float
    alpha_low: float
    alpha_up: float
    ratio_min: float
    ratio_max: float
    n_points: int
    variant: int = 0
    quantiles: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "BoundReport":
        return cls(**json.loads(text))


@dataclass
class SandwichData:
    """Flat evaluation set for :func:`fit_sandwich`."""

    t: np.ndarray
    u_x: np.ndarray
    u_y: np.ndarray
    values: np.ndarray
    dxy: np.ndarray | None = None

    def select(self, mask):
        return SandwichData(self.t[mask], self.u_x[mask], self.u_y[mask], self.values[mask],
                            None if self.dxy is None else self.dxy[mask])


def table_to_points(table, t_window=None) -> SandwichData:
    """Flatten a radial ``KernelTable`` into (t, u_x, u_y, value) points.

    The table stores densities against the speed measure, which coincide
    with m_p-densities for a source on the leg or at a*.
    """
    times = np.asarray(table.times, float)
    y = np.asarray(table.grid.y, float)
    vals = np.asarray(table.values, float)
    keep = times > 0
    if t_window is not None:
        keep &= (times >= t_window[0] - 1e-12) & (times <= t_window[1] + 1e-12)
    tt, yy = np.meshgrid(times[keep], y, indexing="ij")
    src = float(table.source)
    if src > 0:
        raise DomainError("plane sources give angle dependent kernels; use a leg or star source")
    return SandwichData(tt.ravel(), np.full(tt.size, src), yy.ravel(), vals[keep].ravel())


def log_alpha_grid(lo=1e-2, hi=1e2, per_decade=64):
    n = int(round(per_decade * math.log10(hi / lo))) + 1
    return np.logspace(math.log10(lo), math.log10(hi), n)


def _ratio_extremes(data: SandwichData, variant, alphas, M, workers=1):
    def one(a):
        env = envelope_values(variant, a, data.t, data.u_x, data.u_y, data.dxy, M)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            r = data.values / env
        ok = np.isfinite(r) & (env > 1e-290)
        if not ok.any():
            return np.nan, np.nan
        return float(r[ok].max()), float(r[ok].min())

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            res = list(ex.map(one, alphas))
    else:
        res = [one(a) for a in alphas]
    res = np.array(res)
    return res[:, 0], res[:, 1]


def fit_sandwich(empirical, variant=0, alphas=None, t_window=None, rel_floor=1e-10,
                 rtol=0.05, M=M_DEFAULT, workers=1) -> BoundReport:
    """Fit two-sided constants between an empirical kernel and an envelope.

    For every candidate ``alpha`` the extreme ratios
    ``C_up(alpha) = max emp/env`` and ``C_low(alpha) = min emp/env`` are
    computed.  Both are nondecreasing in ``alpha``, so the plain ratio
    ``C_up / C_low`` is minimised at the ends of any grid.  Instead the
    upper exponent is the largest ``alpha`` whose ``C_up`` stays within a
    factor ``1 + rtol`` of its smallest value, and the lower exponent is the
    smallest ``alpha > alpha_up`` at which ``C_low`` reaches its plateau
    within the same factor.

    Parameters
    ----------
    empirical : KernelTable or SandwichData
        Kernel values, positive on the support.
    variant : int
        Envelope family.
    alphas : array_like, optional
        Search grid; defaults to 64 log-spaced points per decade on [1e-2, 1e2].
    t_window : tuple, optional
        Restrict the evaluation to ``t_window[0] <= t <= t_window[1]``.
    rel_floor : float
        Cells below ``rel_floor`` times the largest value of their time slice
        are treated as outside the numerical support.
    """
    data = empirical if isinstance(empirical, SandwichData) else table_to_points(empirical, t_window)
    if t_window is not None and isinstance(empirical, SandwichData):
        data = data.select((data.t >= t_window[0]) & (data.t <= t_window[1]))
    if data.values.size == 0:
        raise DomainError("empty table")
    if np.any(data.values < -1e-12):
        raise DomainError("negative kernel values in the empirical table")
    # support floor per time slice
    keep = np.zeros(data.values.size, bool)
    for tv in np.unique(data.t):
        sl = data.t == tv
        vmax = data.values[sl].max()
        keep[sl] = data.values[sl] > max(rel_floor * vmax, 1e-300)
    data = data.select(keep)
    if data.values.size == 0:
        raise DomainError("no table cell above the support floor")

    alphas = log_alpha_grid() if alphas is None else np.sort(np.asarray(alphas, float))
    cu, cl = _ratio_extremes(data, variant, alphas, M, workers)
    if np.all(np.isnan(cu)):
        raise DomainError("envelope underflows on the whole evaluation set")
    cu_min = np.nanmin(cu)
    iu = np.flatnonzero(cu <= cu_min * (1 + rtol))[-1]
    if iu + 1 >= alphas.size:
        raise DomainError("upper exponent hits the end of the alpha grid; widen the grid")
    rest = slice(iu + 1, None)
    cl_rest = cl[rest]
    cl_max = np.nanmax(cl_rest)
    il = iu + 1 + np.flatnonzero(cl_rest >= cl_max / (1 + rtol))[0]

    a_up, a_low = float(alphas[iu]), float(alphas[il])
    env_up = envelope_values(variant, a_up, data.t, data.u_x, data.u_y, data.dxy, M)
    env_low = envelope_values(variant, a_low, data.t, data.u_x, data.u_y, data.dxy, M)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        r_up = data.values / env_up
        r_low = data.values / env_low
    r_up = r_up[np.isfinite(r_up)]
    r_low = r_low[np.isfinite(r_low)]
    qs = {f"q{int(q * 100):02d}": float(np.quantile(r_up, q)) for q in (0.05, 0.5, 0.95)}
    return BoundReport(
        c_low=float(cl[il]),
        c_up=float(cu[iu]),
        alpha_low=a_low,
        alpha_up=a_up,
        ratio_min=float(r_up.min()),
        ratio_max=float(r_low.max()),
        n_points=int(data.values.size),
        variant=int(variant),
        quantiles=qs,
    )


# ---------------------------------------------------------------------------
# log-space term decomposition (used by the convolution battery)
# ---------------------------------------------------------------------------

def _log_min1(a, st):
    with np.errstate(divide="ignore"):
        return np.log(np.minimum(1.0, a / st))


def plane_terms(variant, alpha, t, ax, ay, M=M_DEFAULT):
    """Plane/plane envelope as ``sum_k A_k exp(-kappa_k d^2 / t)``.

    Returns a list of ``(log A_k, kappa_k)``; ``log A_k`` is ``-inf`` where
    the term's branch is inactive.  Branch conditions only involve the radii,
    so the angular dependence sits entirely in ``d^2``.
    """
    ax, ay = np.broadcast_arrays(np.asarray(ax, float), np.asarray(ay, float))
    a = float(alpha)
    lt = math.log(t)
    st = math.sqrt(t)
    ninf = -np.inf
    mx = np.maximum(ax, ay)

    def two(mask, k2):
        first = np.where(mask, -0.5 * lt - a * (ax * ax + ay * ay) / t, ninf)
        second = np.where(mask, -lt + _log_min1(ax, st) + _log_min1(ay, st), ninf)
        return [(first, 0.0), (second, k2 * a)]

    if variant in (0, 1, 2, 3):
        far = mx > 1.0
        far_c = 2.0 if variant == 2 else 1.0
        near2 = 2.0 if variant == 1 else 1.0
        return [(np.where(far, -lt, ninf), far_c * a)] + two(~far, near2)
    if variant == 4:
        A = ay >= M
        B = (ax >= 2 * M) & (ay < M) & ~A
        rest = ~A & ~B
        return ([(np.where(A, -lt, ninf), 2 * a),
                 (np.where(B, -lt - a * (ax - ay) ** 2 / t, ninf), 0.0)] + two(rest, 1.0))
    far = mx > 4 * M
    return [(np.where(far, -lt, ninf), 2 * a)] + two(~far, 2.0)


def log_envelope_values(variant, alpha, t, u_x, u_y, dxy=None, M=M_DEFAULT):
    """``log p^0_{variant, alpha}`` without underflow (vectorised)."""
    t = float(t)
    ax, ay, lx, ly, d = pair_geometry(u_x, u_y, dxy)
    a = float(alpha)
    lt = math.log(t)
    leg_leg = -0.5 * lt - a * (ax - ay) ** 2 / t
    mix_c = 4.0 if variant in (3, 4) else 1.0
    mixed = -0.5 * lt - mix_c * a * (ax * ax + ay * ay) / t
    terms = plane_terms(variant, a, t, ax, ay, M)
    pp = np.logaddexp.reduce([la - k * d * d / t for la, k in terms], axis=0)
    out = np.where(lx & ly, leg_leg, np.where(lx | ly, mixed, pp))
    return out if out.ndim else float(out)


def gradient_plane_terms(s, az, ay, beta):
    """Terms of the gradient bound for plane/plane pairs (first argument z)."""
    az, ay = np.broadcast_arrays(np.asarray(az, float), np.asarray(ay, float))
    ls = math.log(s)
    ss = math.sqrt(s)
    ninf = -np.inf
    big = np.maximum(az, ay) >= 1.0
    t0 = [(la - 0.5 * ls, k) for la, k in plane_terms(0, beta, s, az, ay)]
    t0 = [(np.where(big, la, ninf), k) for la, k in t0]
    small = [(np.where(big, ninf, -ls - beta * (az * az + ay * ay) / s), 0.0),
             (np.where(big, ninf, -1.5 * ls + _log_min1(ay, ss)), float(beta))]
    return t0 + small


def log_gradient_envelope_values(s, u_z, u_y, beta, dzy=None):
    s = float(s)
    az, ay, lz, ly, d = pair_geometry(u_z, u_y, dzy)
    base = log_envelope_values(0, beta, s, u_z, u_y, dzy) - 0.5 * math.log(s)
    pp = np.logaddexp.reduce([la - k * d * d / s for la, k in gradient_plane_terms(s, az, ay, beta)], axis=0)
    out = np.where(~lz & ~ly, pp, base)
    return out if out.ndim else float(out)
