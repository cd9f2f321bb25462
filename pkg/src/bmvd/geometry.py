"""State space E = D_eps u {a*} u R_+, the reference measure m_p and the
geodesic metric rho.

Points are immutable values. ``Leg(r)`` lives on the half-line at distance
``r`` from the darning point, ``Plane(x1, x2)`` on the plane outside the
shorted disc, and ``STAR`` is the darning point itself.

Most numerical code works with the signed radial coordinate
``u = -r`` on the leg, ``0`` at the star and ``|x| - eps`` on the plane, see
:func:`signed_radial_embed`.  The vectorised helpers at the bottom of the
module operate on arrays of signed coordinates plus an optional Euclidean
distance for plane/plane pairs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

EPS_TOL = 1e-12


class DomainError(ValueError):
    """Raised when a point or parameter lies outside the admissible set."""


@dataclass(frozen=True)
class ModelParams:
    """Model constants.

    Parameters
    ----------
    eps : float
        Radius of the shorted disc, ``0 < eps <= 1/4``.
    p : float
        Weight of Lebesgue measure on the leg.
    """

    eps: float = 0.25
    p: float = 1.0

    def __post_init__(self):
        eps, p = float(self.eps), float(self.p)
        if not (math.isfinite(eps) and 0.0 < eps <= 0.25):
            raise DomainError(f"eps must lie in (0, 1/4], got {self.eps!r}")
        if not (math.isfinite(p) and p > 0.0):
            raise DomainError(f"p must be positive, got {self.p!r}")
        object.__setattr__(self, "eps", eps)
        object.__setattr__(self, "p", p)

    @property
    def circumference(self) -> float:
        return 2.0 * math.pi * self.eps

    @property
    def eta(self) -> float:
        c = self.circumference
        return (c - self.p) / (c + self.p)

    @property
    def prob_plane(self) -> float:
        """Probability that an excursion from a* enters the plane."""
        return 0.5 * (1.0 + self.eta)

    @property
    def leg_weight(self) -> float:
        return self.p

    @property
    def plane_weight(self) -> float:
        return 1.0


@dataclass(frozen=True)
class Leg:
    r: float

    def __post_init__(self):
        r = float(self.r)
        if not (math.isfinite(r) and r > 0.0):
            raise DomainError(f"leg coordinate must be positive, got {self.r!r}")
        object.__setattr__(self, "r", r)


class _Star:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "STAR"

    def __reduce__(self):
        return (_Star, ())

    def __eq__(self, other):
        return isinstance(other, _Star)

    def __hash__(self):
        return hash("a*")


STAR = _Star()
Star = _Star


@dataclass(frozen=True)
class Plane:
    x1: float
    x2: float

    def __post_init__(self):
        object.__setattr__(self, "x1", float(self.x1))
        object.__setattr__(self, "x2", float(self.x2))
        if not (math.isfinite(self.x1) and math.isfinite(self.x2)):
            raise DomainError("plane coordinates must be finite")

    @property
    def norm(self) -> float:
        return math.hypot(self.x1, self.x2)

    @property
    def angle(self) -> float:
        return math.atan2(self.x2, self.x1)


EPoint = Union[Leg, _Star, Plane]


def leg_point(r: float) -> EPoint:
    """Leg point, with ``r == 0`` normalised to the star."""
    r = float(r)
    if abs(r) <= EPS_TOL:
        return STAR
    return Leg(r)


def plane_point(x1: float, x2: float, params: ModelParams) -> EPoint:
    """Plane point; ``|x| = eps`` (within 1e-12) becomes the star.

    Raises
    ------
    DomainError
        If the point lies strictly inside the shorted disc.
    """
    n = math.hypot(x1, x2)
    if abs(n - params.eps) <= EPS_TOL:
        return STAR
    if n < params.eps:
        raise DomainError(f"point ({x1}, {x2}) lies inside the shorted disc")
    return Plane(x1, x2)


def polar_point(rho: float, theta: float, params: ModelParams) -> EPoint:
    """Plane point at distance ``rho`` from a* and angle ``theta``."""
    if rho < -EPS_TOL:
        raise DomainError("rho-distance must be nonnegative")
    if abs(rho) <= EPS_TOL:
        return STAR
    rad = params.eps + rho
    return Plane(rad * math.cos(theta), rad * math.sin(theta))


def from_signed(u: float, params: ModelParams, theta: float = 0.0) -> EPoint:
    """Inverse of :func:`signed_radial_embed` (the angle must be supplied)."""
    if abs(u) <= EPS_TOL:
        return STAR
    if u < 0:
        return Leg(-u)
    return polar_point(u, theta, params)


def _check_plane(x: Plane, params: ModelParams) -> None:
    if x.norm < params.eps - EPS_TOL:
        raise DomainError(f"{x!r} lies inside the shorted disc of radius {params.eps}")


def rho_norm(x: EPoint, params: ModelParams) -> float:
    """rho-distance from ``x`` to the darning point."""
    if isinstance(x, Leg):
        return x.r
    if isinstance(x, Plane):
        _check_plane(x, params)
        return max(x.norm - params.eps, 0.0)
    return 0.0


def euclid(x: EPoint, y: EPoint, params: ModelParams) -> float:
    """Euclidean distance for plane/plane pairs.

    The star is not a point of the plane; against a plane point it is
    assigned the distance ``|y|_rho``, the distance from the disc.
    """
    if isinstance(x, Plane) and isinstance(y, Plane):
        return math.hypot(x.x1 - y.x1, x.x2 - y.x2)
    if isinstance(x, Plane):
        return rho_norm(x, params)
    if isinstance(y, Plane):
        return rho_norm(y, params)
    return 0.0


def rho(x: EPoint, y: EPoint, params: ModelParams) -> float:
    """Geodesic (shortest path) distance on E."""
    if isinstance(x, Leg) and isinstance(y, Leg):
        return abs(x.r - y.r)
    if isinstance(x, Plane) and isinstance(y, Plane):
        return min(euclid(x, y, params), rho_norm(x, params) + rho_norm(y, params))
    return rho_norm(x, params) + rho_norm(y, params)


def measure_weight(x: EPoint, params: ModelParams) -> float:
    """Density of m_p against Lebesgue measure at ``x`` (0 at the star)."""
    if isinstance(x, Leg):
        return params.p
    if isinstance(x, Plane):
        return 1.0
    return 0.0


def signed_radial_embed(x: EPoint, params: ModelParams) -> float:
    if isinstance(x, Leg):
        return -x.r
    if isinstance(x, Plane):
        return rho_norm(x, params)
    return 0.0


def kind(x: EPoint) -> str:
    if isinstance(x, Leg):
        return "leg"
    if isinstance(x, Plane):
        return "plane"
    return "star"


@dataclass(frozen=True)
class DomainSpec:
    """Rotationally symmetric domain: ``(0, l)`` on the leg and the annulus
    ``eps < |x| < R`` on the plane, glued at a*."""

    leg_length: float = 1.0
    plane_radius: float = 2.0
    contains_star: bool = True

    def __post_init__(self):
        object.__setattr__(self, "leg_length", float(self.leg_length))
        object.__setattr__(self, "plane_radius", float(self.plane_radius))
        if not (self.leg_length > 0 and math.isfinite(self.leg_length)):
            raise DomainError("leg_length must be positive")
        if not (self.plane_radius > 0 and math.isfinite(self.plane_radius)):
            raise DomainError("plane_radius must be positive")

    def validate(self, params: ModelParams) -> "DomainSpec":
        if self.plane_radius <= params.eps:
            raise DomainError("plane_radius must exceed eps")
        return self

    def plane_extent(self, params: ModelParams) -> float:
        """Length of the plane side in the signed radial coordinate."""
        return self.plane_radius - params.eps

    def contains(self, x: EPoint, params: ModelParams) -> bool:
        self.validate(params)
        if isinstance(x, Leg):
            return x.r < self.leg_length
        if isinstance(x, Plane):
            return params.eps - EPS_TOL <= x.norm < self.plane_radius
        return self.contains_star


def delta_D(x: EPoint, D: DomainSpec, params: ModelParams) -> float:
    """rho-distance from ``x`` to the complement of ``D``."""
    if not D.contains(x, params):
        raise DomainError(f"{x!r} is not in the domain {D!r}")
    l, c = D.leg_length, D.plane_extent(params)
    if isinstance(x, Leg):
        return min(l - x.r, x.r + c)
    if isinstance(x, Plane):
        xr = rho_norm(x, params)
        return min(D.plane_radius - x.norm, xr + l)
    return min(l, c)


def delta_U2(x: EPoint, D: DomainSpec, params: ModelParams) -> float:
    """Distance to the boundary of the plane part of ``D``.

    The plane part is the annulus ``eps < |x| < R``; its boundary consists of
    the circle ``|x| = eps`` (collapsed to a*) and ``|x| = R``.
    """
    if not isinstance(x, Plane):
        return 0.0
    return max(min(x.norm - params.eps, D.plane_radius - x.norm), 0.0)


# ---------------------------------------------------------------------------
# vectorised helpers on signed coordinates
# ---------------------------------------------------------------------------

def pair_geometry(u_x, u_y, dxy=None):
    """Broadcast signed coordinates into the quantities the envelopes use.

    Parameters
    ----------
    u_x, u_y : array_like
        Signed radial coordinates.
    dxy : array_like, optional
        Euclidean distance for plane/plane pairs.  When omitted the pair is
        assumed radially aligned, ``|u_x - u_y|``.

    Returns
    -------
    ax, ay : ndarray
        rho-norms ``|u|``.
    leg_x, leg_y : ndarray of bool
        Leg membership.
    d : ndarray
        Euclidean distance (meaningful for plane/plane pairs).
    """
    u_x = np.asarray(u_x, dtype=float)
    u_y = np.asarray(u_y, dtype=float)
    if dxy is None:
        d = np.abs(u_x - u_y)
    else:
        d = np.asarray(dxy, dtype=float)
    u_x, u_y, d = np.broadcast_arrays(u_x, u_y, d)
    return np.abs(u_x), np.abs(u_y), u_x < 0, u_y < 0, d


def rho_signed(u_x, u_y, dxy=None):
    """Vectorised rho on signed coordinates (see :func:`pair_geometry`)."""
    ax, ay, lx, ly, d = pair_geometry(u_x, u_y, dxy)
    both_leg = lx & ly
    out = np.where(both_leg, np.abs(ax - ay), ax + ay)
    both_plane = ~lx & ~ly
    return np.where(both_plane, np.minimum(d, ax + ay), out)


def plane_distance(ux, thx, uy, thy, eps):
    """Euclidean distance between plane points given as (rho-norm, angle)."""
    rx = np.asarray(ux, float) + eps
    ry = np.asarray(uy, float) + eps
    c = np.cos(np.asarray(thx, float) - np.asarray(thy, float))
    return np.sqrt(np.maximum(rx * rx + ry * ry - 2.0 * rx * ry * c, 0.0))
