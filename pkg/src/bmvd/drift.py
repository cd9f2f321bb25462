"""Scalar drift fields on E and named presets.

A drift is a pair of bounded functions: ``b_leg(r)`` on the half-line and
``b_plane(x1, x2)`` on the plane.  On the plane the drift acts through
``b * (d/dx1 + d/dx2)``, i.e. as the vector field ``(b, b)``.

The radial PDE and the Duhamel code can only use drifts whose action on
radial functions is again radial.  That is the case for leg-supported drifts;
for synthetic studies a drift may also carry an explicit radial
representative ``b_radial(y)`` for ``y > 0`` (the "effective radial" mode).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .geometry import DomainError


def _zero(*args):
    return np.zeros(np.broadcast(*[np.asarray(a) for a in args]).shape)


@dataclass(frozen=True)
class DriftSpec:
    """Bounded scalar drift with declared integrability data.

    Parameters
    ----------
    b_leg : callable
        ``b_leg(r)`` for ``r > 0``, vectorised.
    b_plane : callable
        ``b_plane(x1, x2)``, vectorised.
    b_radial : callable, optional
        Effective radial drift ``b_radial(y)`` on the plane side (``y`` is the
        distance from a*).  Only used by the 1-D oracles.
    cap : float
        Sup bound imposed on pointwise evaluations.
    norms, exponents : tuple
        Declared ``(|b_1|_{p1}, |b_2|_{p2})`` and ``(p1, p2)``.
    """

    b_leg: Callable = _zero
    b_plane: Callable = _zero
    b_radial: Optional[Callable] = None
    cap: float = 50.0
    name: str = "custom"
    leg_only: bool = False
    norms: tuple = (math.nan, math.nan)
    exponents: tuple = (math.inf, math.inf)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        p1, p2 = self.exponents
        if not (p1 > 1):
            raise DomainError("leg exponent p1 must lie in (1, inf]")
        if not (p2 > 2):
            raise DomainError("plane exponent p2 must lie in (2, inf]")
        if not self.cap > 0:
            raise DomainError("drift cap must be positive")

    @property
    def is_zero(self) -> bool:
        return self.name == "zero"

    def _check(self, v):
        v = np.asarray(v, dtype=float)
        if np.any(~np.isfinite(v)) or np.any(np.abs(v) > self.cap):
            raise DomainError(f"drift value beyond the configured cap {self.cap}")
        return v

    def leg(self, r):
        return self._check(self.b_leg(np.asarray(r, float)))

    def plane(self, x1, x2):
        return self._check(self.b_plane(np.asarray(x1, float), np.asarray(x2, float)))

    def radial(self, y):
        """Drift of the signed coordinate ``y`` for radial functions.

        On the leg ``y = -r`` so the drift is ``-b_leg(-y)``.  On the plane
        side the effective radial representative is used when given; a
        plane drift without one is rejected because its action is not
        radial.
        """
        y = np.asarray(y, dtype=float)
        out = np.zeros_like(y)
        neg = y < 0
        if np.any(neg):
            out[neg] = -self.leg(-y[neg])
        pos = y > 0
        if np.any(pos):
            if self.b_radial is not None:
                out[pos] = self._check(self.b_radial(y[pos]))
            elif not self.leg_only and not self.is_zero:
                raise DomainError("plane drift has no radial representative; "
                                  "use a leg-supported drift or set b_radial")
        return out

    def abs_sup(self, y):
        return float(np.max(np.abs(self.radial(y)))) if np.size(y) else 0.0


def zero():
    return DriftSpec(name="zero", leg_only=True, norms=(0.0, 0.0))


def const_leg(c=0.5, a=0.0, b=math.inf):
    """``b = c`` on the leg interval ``[a, b)``, zero elsewhere."""
    def f(r):
        r = np.asarray(r, float)
        return np.where((r >= a) & (r < b), c, 0.0)
    return DriftSpec(b_leg=f, name="const_leg", leg_only=True, norms=(abs(c), 0.0),
                     params={"c": c, "a": a, "b": b})


def smooth_bump(amplitude=1.0, center=0.5, width=0.15):
    """Gaussian bump on the leg: ``A exp(-(r - r0)^2 / (2 w^2))``."""
    def f(r):
        r = np.asarray(r, float)
        return amplitude * np.exp(-0.5 * ((r - center) / width) ** 2)
    return DriftSpec(b_leg=f, name="smooth_bump", leg_only=True, norms=(abs(amplitude), 0.0),
                     params={"amplitude": amplitude, "center": center, "width": width})


def two_bump(amplitude_leg=0.8, center_leg=0.5, width_leg=0.2,
             amplitude_plane=0.8, center_plane=(0.75, 0.0), width_plane=0.3):
    """Smooth bumps on the leg and on the plane (non-radial)."""
    cx, cy = center_plane

    def fl(r):
        r = np.asarray(r, float)
        return amplitude_leg * np.exp(-0.5 * ((r - center_leg) / width_leg) ** 2)

    def fp(x1, x2):
        x1 = np.asarray(x1, float)
        x2 = np.asarray(x2, float)
        return amplitude_plane * np.exp(-0.5 * ((x1 - cx) ** 2 + (x2 - cy) ** 2) / width_plane ** 2)

    return DriftSpec(b_leg=fl, b_plane=fp, name="two_bump",
                     norms=(abs(amplitude_leg), abs(amplitude_plane)),
                     params={"amplitude_leg": amplitude_leg, "center_leg": center_leg,
                             "width_leg": width_leg, "amplitude_plane": amplitude_plane,
                             "center_plane": list(center_plane), "width_plane": width_plane})


def constant(c=1.0):
    """``b = c`` everywhere on E."""
    def fl(r):
        return np.full(np.shape(r), float(c))

    def fp(x1, x2):
        return np.full(np.broadcast(np.asarray(x1), np.asarray(x2)).shape, float(c))

    return DriftSpec(b_leg=fl, b_plane=fp, name="constant", norms=(abs(c), abs(c)),
                     params={"c": c})


def radial_table(y_nodes, values, name="custom"):
    """Drift given as a table of the signed coordinate ``y``.

    Values at ``y < 0`` define ``b_leg(r) = -value(-r)``; values at ``y > 0``
    become the effective radial representative.  Linear interpolation.
    """
    y_nodes = np.asarray(y_nodes, float)
    values = np.asarray(values, float)
    if y_nodes.ndim != 1 or y_nodes.shape != values.shape or np.any(np.diff(y_nodes) <= 0):
        raise DomainError("drift table needs increasing nodes and matching values")

    def fl(r):
        return -np.interp(-np.asarray(r, float), y_nodes, values, left=0.0, right=0.0)

    def fr(y):
        return np.interp(np.asarray(y, float), y_nodes, values, left=0.0, right=0.0)

    has_plane = bool(np.any(values[y_nodes > 0] != 0))
    return DriftSpec(b_leg=fl, b_radial=fr if has_plane else None, name=name,
                     leg_only=not has_plane, params={"nodes": y_nodes.tolist(), "values": values.tolist()})


PRESETS = {
    "zero": zero,
    "const_leg": const_leg,
    "smooth_bump": smooth_bump,
    "two_bump": two_bump,
    "constant": constant,
}


def preset(name, **kwargs) -> DriftSpec:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise DomainError(f"unknown drift preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(**kwargs)
