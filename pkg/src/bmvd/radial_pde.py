"""Finite-volume solver for the signed radial process.

The signed coordinate ``y`` is negative on the leg and equal to ``|x|_rho``
on the plane.  Its generator is ``(1 / (2 m'(y))) d/dy (m'(y) d/dy)`` with
speed density ``m'(y) = p`` for ``y < 0`` and ``2 pi (y + eps)`` for
``y > 0``.  On a vertex-centred grid with a node at 0 the operator is
assembled from

* dual-cell weights ``w_j = integral of m'`` over the dual cell of node j;
* edge conductances ``a_e = h_e / integral_e dy / m'(y)`` (exact harmonic
  averages, logarithmic on the plane side).

With ``S`` the symmetric stiffness matrix of the form
``(1/2) sum_e a_e (f_{j+1} - f_j)(g_{j+1} - g_j)`` the generator is
``A = -W^{-1} S``, self-adjoint in the weighted inner product by
construction.  The interface condition at 0 is never imposed: it emerges
from the two one-sided weights.

Densities are stored against the speed measure.  For a source on the leg or
at a*, those coincide with m_p-densities on E (rotational symmetry), which
is what :func:`kernel_to_E` relies on.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded, eigh_tridiagonal

from .drift import DriftSpec
from .geometry import DomainError, DomainSpec, EPoint, ModelParams, kind, signed_radial_embed

ABSORBING = "absorbing"
TRUNCATION = "truncation"
MIN_CELLS = 16


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------

def _side_nodes(L, h, growth, h_max):
    pts = [0.0]
    step = h
    while pts[-1] < L - 1e-12:
        nxt = pts[-1] + step
        if nxt > L - 0.5 * step:
            nxt = L
        pts.append(min(nxt, L))
        step = min(step * growth, h_max)
    pts[-1] = L
    return np.array(pts)


@dataclass(frozen=True, eq=False)
class Grid1D:
    """Vertex-centred grid on ``[-L_leg, L_plane]`` with a node at 0.

    Attributes
    ----------
    y : ndarray
        Node coordinates, increasing.
    i0 : int
        Index of the node at 0.
    w : ndarray
        Dual-cell speed-measure weights.
    a : ndarray
        Edge conductances (length ``len(y) - 1``).
    bc : tuple of str
        Boundary tags (left, right), each ``absorbing`` or ``truncation``.
    curvature : bool
        When false the plane-side speed density is frozen at ``2 pi eps``,
        which removes the ``1/(2(y + eps))`` drift and leaves a pure
        interface (skew) problem.
    """

    y: np.ndarray
    params: ModelParams
    bc: tuple = (TRUNCATION, TRUNCATION)
    curvature: bool = True
    i0: int = field(init=False)
    w: np.ndarray = field(init=False)
    a: np.ndarray = field(init=False)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.ndim != 1 or np.any(np.diff(y) <= 0):
            raise DomainError("grid nodes must be strictly increasing")
        hits = np.flatnonzero(y == 0.0)
        if hits.size != 1:
            raise DomainError("grid must contain the interface node y = 0")
        for tag in self.bc:
            if tag not in (ABSORBING, TRUNCATION):
                raise DomainError(f"unknown boundary tag {tag!r}")
        i0 = int(hits[0])
        if i0 < MIN_CELLS or y.size - 1 - i0 < MIN_CELLS:
            raise DomainError(f"grid needs at least {MIN_CELLS} cells on each side of 0")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "i0", i0)
        object.__setattr__(self, "w", self._dual_weights(y))
        object.__setattr__(self, "a", self._conductances(y))

    # speed measure ------------------------------------------------------
    def density(self, y):
        """Speed density ``m'(y)`` (right limit at 0)."""
        y = np.asarray(y, float)
        eps, p = self.params.eps, self.params.p
        plane = 2 * math.pi * (np.maximum(y, 0.0) + eps) if self.curvature else np.full_like(y, 2 * math.pi * eps)
        return np.where(y < 0, p, plane)

    def measure(self, lo, hi):
        """Speed measure of ``[lo, hi]`` (vectorised, ``lo <= hi``)."""
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        p, eps = self.params.p, self.params.eps
        leg = p * (np.minimum(hi, 0.0) - np.minimum(lo, 0.0))
        a, b = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
        if self.curvature:
            plane = math.pi * ((b + eps) ** 2 - (a + eps) ** 2)
        else:
            plane = 2 * math.pi * eps * (b - a)
        return leg + plane

    def _dual_weights(self, y):
        mid = 0.5 * (y[1:] + y[:-1])
        lo = np.concatenate([[y[0]], mid])
        hi = np.concatenate([mid, [y[-1]]])
        return self.measure(lo, hi)

    def _conductances(self, y):
        h = np.diff(y)
        left, right = y[:-1], y[1:]
        eps, p = self.params.eps, self.params.p
        a = np.empty_like(h)
        leg = right <= 0
        a[leg] = p / h[leg]
        pl = ~leg
        if self.curvature:
            a[pl] = 2 * math.pi / np.log((right[pl] + eps) / (left[pl] + eps))
        else:
            a[pl] = 2 * math.pi * eps / h[pl]
        return a

    # derived ------------------------------------------------------------
    @property
    def n_nodes(self):
        return self.y.size

    @property
    def h(self):
        return np.diff(self.y)

    @property
    def h_min(self):
        return float(self.h.min())

    @property
    def active(self):
        """Indices of the unknowns (absorbing end nodes are pinned to 0)."""
        lo = 1 if self.bc[0] == ABSORBING else 0
        hi = self.y.size - 1 if self.bc[1] == ABSORBING else self.y.size
        return np.arange(lo, hi)

    def stiffness_bands(self):
        """Diagonal and super-diagonal of ``S`` on all nodes."""
        diag = np.zeros(self.y.size)
        diag[:-1] += 0.5 * self.a
        diag[1:] += 0.5 * self.a
        return diag, -0.5 * self.a

    def stiffness_matrix(self, active_only=True):
        """Dense ``S`` (for tests and small grids)."""
        d, e = self.stiffness_bands()
        S = np.diag(d) + np.diag(e, 1) + np.diag(e, -1)
        if active_only:
            idx = self.active
            S = S[np.ix_(idx, idx)]
        return S

    def generator_matrix(self):
        """Dense ``A = -W^{-1} S`` on the active nodes."""
        idx = self.active
        return -self.stiffness_matrix() / self.w[idx][:, None]

    def node_index(self, y0, tol=None):
        """Index of the node nearest to ``y0``."""
        j = int(np.argmin(np.abs(self.y - y0)))
        tol = 0.5 * max(self.h[max(j - 1, 0)], self.h[min(j, self.h.size - 1)]) if tol is None else tol
        if abs(self.y[j] - y0) > tol + 1e-12:
            raise DomainError(f"point {y0} is outside the grid span [{self.y[0]}, {self.y[-1]}]")
        return j

    def edge_density(self):
        """Speed density at edge midpoints."""
        return self.density(0.5 * (self.y[1:] + self.y[:-1]))

    def same_as(self, other) -> bool:
        return (self.params == other.params and self.bc == other.bc and self.curvature == other.curvature
                and self.y.shape == other.y.shape and bool(np.all(self.y == other.y)))


def build_grid(L_leg, L_plane, params: ModelParams, h=1e-2, growth=1.0, h_max=None,
               bc=(TRUNCATION, TRUNCATION), curvature=True) -> Grid1D:
    """Grid graded away from the interface.

    Cells start at width ``h`` next to 0 and grow geometrically by
    ``growth`` up to ``h_max``.  ``growth = 1`` gives a uniform grid.
    """
    if not (L_leg > 0 and L_plane > 0):
        raise DomainError("grid extents must be positive")
    if not (h > 0 and growth >= 1.0):
        raise DomainError("need h > 0 and growth >= 1")
    h_max = h if h_max is None else max(h_max, h)
    left = _side_nodes(L_leg, h, growth, h_max)
    right = _side_nodes(L_plane, h, growth, h_max)
    if left.size - 1 < MIN_CELLS or right.size - 1 < MIN_CELLS:
        raise DomainError(f"resolution too coarse: need at least {MIN_CELLS} cells per side")
    y = np.concatenate([-left[::-1], right[1:]])
    return Grid1D(y, params, tuple(bc), curvature)


def domain_grid(D: DomainSpec, params: ModelParams, h=1e-2, growth=1.0, h_max=None) -> Grid1D:
    """Grid spanning a symmetric domain with absorbing ends."""
    D.validate(params)
    return build_grid(D.leg_length, D.plane_extent(params), params, h, growth, h_max,
                      bc=(ABSORBING, ABSORBING))


# ---------------------------------------------------------------------------
# kernel tables
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class KernelTable:
    """Kernel values ``k(t_i, source, y_j)`` against the speed measure."""

    grid: Grid1D
    times: np.ndarray
    values: np.ndarray
    source: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, float)
        self.values = np.asarray(self.values, float)
        if self.values.shape != (self.times.size, self.grid.n_nodes):
            raise DomainError("values must have shape (n_times, n_nodes)")

    @property
    def params(self):
        return self.grid.params

    def mass(self):
        return self.values @ self.grid.w

    def time_index(self, t, tol=1e-9):
        j = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[j] - t) > tol * max(1.0, abs(t)):
            raise DomainError(f"t = {t} is not an output time")
        return j

    def at(self, t):
        return self.values[self.time_index(t)]

    def to_lebesgue(self):
        """Density of the signed coordinate against Lebesgue measure."""
        return self.values * self.grid.density(self.grid.y)[None, :]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "y", "value", "m_weight"])
            for i, t in enumerate(self.times):
                for yj, vj, wj in zip(self.grid.y, self.values[i], self.grid.w):
                    wr.writerow([repr(float(t)), repr(float(yj)), repr(float(vj)), repr(float(wj))])

    @classmethod
    def from_csv(cls, path, params: ModelParams, bc=(TRUNCATION, TRUNCATION), curvature=True, source=0.0):
        t, y, v, _ = read_kernel_csv(path)
        grid = Grid1D(y, params, tuple(bc), curvature)
        return cls(grid, t, v, source)


def read_kernel_csv(path):
    """Return ``(times, y, values, m_weight)`` from a kernel CSV."""
    rows = []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header != ["t", "y", "value", "m_weight"]:
            raise DomainError(f"unexpected kernel CSV header {header}")
        for r in rd:
            rows.append([float(c) for c in r])
    arr = np.array(rows)
    times = np.unique(arr[:, 0])
    n_t = times.size
    n_y = arr.shape[0] // n_t
    y = arr[:n_y, 1]
    return times, y, arr[:, 2].reshape(n_t, n_y), arr[:n_y, 3]


# ---------------------------------------------------------------------------
# time stepping
# ---------------------------------------------------------------------------

class _Stepper:
    """Crank-Nicolson for diffusion, explicit upwind for drift.

    Works on a block of right-hand sides (one column per source).
    """

    def __init__(self, grid: Grid1D, mu_edges=None):
        self.grid = grid
        self.idx = grid.active
        d, e = grid.stiffness_bands()
        self.diag = d[self.idx]
        self.off = e[self.idx[:-1]]
        self.w = grid.w[self.idx]
        self.mu = mu_edges
        self._factors = {}

    def _factor(self, theta_dt):
        key = float(theta_dt)
        if key not in self._factors:
            ab = np.zeros((2, self.idx.size))
            ab[0, 1:] = theta_dt * self.off
            ab[1] = self.w + theta_dt * self.diag
            self._factors[key] = cholesky_banded(ab)
        return self._factors[key]

    def apply_S(self, k):
        out = self.diag[:, None] * k
        out[:-1] += self.off[:, None] * k[1:]
        out[1:] += self.off[:, None] * k[:-1]
        return out

    def drift_divergence(self, k):
        """Net upwind mass outflow per node for the active block ``k``."""
        g = self.grid
        full = np.zeros((g.n_nodes, k.shape[1]))
        full[self.idx] = k
        mu = self.mu
        flux = np.where(mu[:, None] > 0, full[:-1], full[1:]) * (mu * g.edge_density())[:, None]
        div = np.zeros_like(full)
        div[:-1] += flux
        div[1:] -= flux
        return div[self.idx]

    def step(self, k, dt, theta=0.5):
        rhs = self.w[:, None] * k - (1 - theta) * dt * self.apply_S(k)
        if self.mu is not None:
            rhs -= dt * self.drift_divergence(k)
        return cho_solve_banded((self._factor(theta * dt), False), rhs)


def _segment_steps(times, dt_target):
    prev, out = 0.0, []
    for t in times:
        n = max(1, int(math.ceil((t - prev) / dt_target - 1e-9)))
        out.append((n, (t - prev) / n))
        prev = t
    return out


def _evolve(grid: Grid1D, k0, times, dt_target, mu_edges=None, rannacher=4):
    """Propagate a block of initial data, returning values at ``times``.

    The first ``rannacher`` steps are implicit Euler half-steps, which damps
    the high-frequency content of delta initial data before the
    Crank-Nicolson steps take over.
    """
    st = _Stepper(grid, mu_edges)
    k = np.array(k0, dtype=float)
    out = np.zeros((len(times),) + k.shape)
    startup = rannacher
    for i, (n, dt) in enumerate(_segment_steps(times, dt_target)):
        for _ in range(n):
            if startup > 0:
                k = st.step(k, 0.5 * dt, theta=1.0)
                k = st.step(k, 0.5 * dt, theta=1.0)
                startup -= 2
            else:
                k = st.step(k, dt)
        out[i] = k
    return out


def radial_drift_edges(grid: Grid1D, drift: Optional[DriftSpec]):
    if drift is None or drift.is_zero:
        return None
    mid = 0.5 * (grid.y[1:] + grid.y[:-1])
    return drift.radial(mid)


def drift_time_step(grid: Grid1D, mu_edges, dt):
    """Halve ``dt`` until the explicit transport Courant number is <= 1/2.

    Raises when the cell Peclet number ``2 |mu| h`` reaches 2, which no time
    step can cure.
    """
    if mu_edges is None:
        return dt
    h = grid.h
    pe = 2 * np.abs(mu_edges) * h
    if np.any(pe >= 2.0):
        raise DomainError(f"cell Peclet number {pe.max():.3g} >= 2; refine the grid")
    vmax = float(np.max(np.abs(mu_edges) / h)) if mu_edges.size else 0.0
    while vmax * dt > 0.5:
        dt *= 0.5
    return dt


def default_times(T, n_out=20):
    return np.linspace(0.0, T, n_out + 1)[1:]


def solve_kernel(x0, T, grid: Grid1D, drift: Optional[DriftSpec] = None, domain: Optional[DomainSpec] = None,
                 times: Optional[Sequence[float]] = None, dt_factor=1.0, rannacher=4) -> KernelTable:
    """Transition kernel of the signed radial process from ``x0``.

    Parameters
    ----------
    x0 : float or EPoint
        Source, as a signed coordinate or a point of E.  Snapped to the
        nearest node.
    T : float
        Horizon.
    grid : Grid1D
        Spatial grid; absorbing tags kill the process at the ends.
    drift : DriftSpec, optional
        Radial drift (leg-supported, or with a radial representative).
    domain : DomainSpec, optional
        When given, the grid ends must coincide with the domain boundary and
        carry absorbing tags.
    times : sequence of float, optional
        Output times in ``(0, T]``; defaults to 20 equispaced times.
    dt_factor : float
        Target time step is ``dt_factor * h_min``.

    Returns
    -------
    KernelTable
        Densities with respect to the speed measure.
    """
    params = grid.params
    if not isinstance(x0, (int, float, np.floating)):
        x0 = signed_radial_embed(x0, params)
    if not T > 0:
        raise DomainError("horizon must be positive")
    if domain is not None:
        domain.validate(params)
        ok = (grid.bc == (ABSORBING, ABSORBING) and abs(grid.y[0] + domain.leg_length) < 1e-9
              and abs(grid.y[-1] - domain.plane_extent(params)) < 1e-9)
        if not ok:
            raise DomainError("grid does not match the Dirichlet domain; use domain_grid")
    times = default_times(T) if times is None else np.asarray(sorted(set(float(t) for t in times)))
    if times[0] <= 0 or times[-1] > T + 1e-12:
        raise DomainError("output times must lie in (0, T]")
    j0 = grid.node_index(float(x0))
    if j0 not in set(grid.active.tolist()):
        raise DomainError("source lies on an absorbing boundary")
    mu = radial_drift_edges(grid, drift)
    dt = drift_time_step(grid, mu, dt_factor * grid.h_min)
    idx = grid.active
    k0 = np.zeros((idx.size, 1))
    k0[np.searchsorted(idx, j0), 0] = 1.0 / grid.w[j0]
    vals = _evolve(grid, k0, times, dt, mu, rannacher)[:, :, 0]
    full = np.zeros((times.size, grid.n_nodes))
    full[:, idx] = vals
    meta = {"drift": None if drift is None else drift.name, "dt": dt, "dt_factor": dt_factor,
            "rannacher": rannacher, "killed": ABSORBING in grid.bc}
    return KernelTable(grid, times, full, float(grid.y[j0]), meta)


def solve_many(sources_idx, T_times, grid: Grid1D, dt, drift=None, rannacher=4):
    """Kernels from several source nodes, shape ``(n_times, n_src, n_nodes)``."""
    idx = grid.active
    pos = np.searchsorted(idx, sources_idx)
    k0 = np.zeros((idx.size, len(sources_idx)))
    k0[pos, np.arange(len(sources_idx))] = 1.0 / grid.w[np.asarray(sources_idx)]
    mu = radial_drift_edges(grid, drift)
    vals = _evolve(grid, k0, np.asarray(T_times, float), dt, mu, rannacher)
    full = np.zeros((vals.shape[0], grid.n_nodes, vals.shape[2]))
    full[:, idx, :] = vals
    return np.transpose(full, (0, 2, 1))


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def kernel_to_E(table: KernelTable, y: EPoint, t=None):
    """m_p-density at the point ``y`` of E.

    For a source on the leg or at a*, the law of the signed coordinate has
    speed-measure density ``k``; by rotational symmetry the m_p-density at a
    plane point ``y`` is the same number, since m' is the circumference of
    the circle ``|y|_rho = const``.  On the leg m' = p matches m_p.  A plane
    source is only radial against leg or star targets.
    """
    if table.source > 0 and kind(y) == "plane":
        raise DomainError("plane source and plane target are not a radial configuration")
    u = signed_radial_embed(y, table.params)
    g = table.grid
    if u < g.y[0] or u > g.y[-1]:
        raise DomainError("target outside the grid span")
    if t is None:
        return np.array([np.interp(u, g.y, row) for row in table.values])
    return float(np.interp(u, g.y, table.at(t)))


def _one_sided_derivative(x, f):
    """Derivative at ``x[0]`` of the Lagrange interpolant through 3 points."""
    x0, x1, x2 = x
    f0, f1, f2 = f
    d1, d2 = x1 - x0, x2 - x0
    return (f0 * (-(d1 + d2) / (d1 * d2)) + f1 * (d2 / (d1 * (d2 - d1))) - f2 * (d1 / (d2 * (d2 - d1))))


def flux_at_star(table: KernelTable, t) -> float:
    """Net weighted flux through a*: ``(p f'(0-) - 2 pi eps f'(0+)) / 2``.

    One-sided derivatives are second-order three-point differences.  Zero
    for the exact kernel.
    """
    g = table.grid
    k = table.at(t)
    i = g.i0
    dl = _one_sided_derivative(g.y[[i, i - 1, i - 2]], k[[i, i - 1, i - 2]])
    dr = _one_sided_derivative(g.y[[i, i + 1, i + 2]], k[[i, i + 1, i + 2]])
    return 0.5 * (g.params.p * dl - 2 * math.pi * g.params.eps * dr)


def boundary_flux(table: KernelTable, t, side="right") -> float:
    """Outward flux ``(1/2) m' df/dn`` at an absorbing end.

    Negative when mass leaves the domain.
    """
    g = table.grid
    k = table.at(t)
    if side == "right":
        j = [g.n_nodes - 1, g.n_nodes - 2, g.n_nodes - 3]
        sgn = 1.0
    else:
        j = [0, 1, 2]
        sgn = -1.0
    d = _one_sided_derivative(g.y[j], k[j])
    return 0.5 * float(g.density(g.y[j[0]])) * sgn * d


def chapman_kolmogorov_residual(table: KernelTable, s, t, n_targets=41, other: KernelTable = None,
                                rel_support=1e-6) -> float:
    """``max_y |sum_z k(s,x0,z) k(t-s,z,y) w_z - k(t,x0,y)|``.

    The inner kernel ``k(t-s, z, y)`` is obtained through the symmetry of the
    driftless kernel as the solve started at the target ``y``.  Targets are
    ``n_targets`` nodes spread over the support of ``k(t, x0, .)``.

    Parameters
    ----------
    table : KernelTable
        Driftless table containing both ``s`` and ``t`` (and ``t - s``).
    other : KernelTable, optional
        A second table that must share the parameters; mismatches are
        rejected.
    """
    if other is not None and not table.grid.same_as(other.grid):
        raise DomainError("tables were computed on different grids or parameters")
    if table.meta.get("drift"):
        raise DomainError("the symmetric reduction needs a driftless table")
    g = table.grid
    ks = table.at(s)
    kt = table.at(t)
    support = np.flatnonzero((kt > rel_support * kt.max()) & np.isin(np.arange(g.n_nodes), g.active))
    pick = support[np.unique(np.linspace(0, support.size - 1, n_targets).round().astype(int))]
    dt = table.meta.get("dt", g.h_min)
    inner = solve_many(pick, [t - s], g, dt, rannacher=table.meta.get("rannacher", 4))[0]
    comp = inner @ (ks * g.w)
    return float(np.max(np.abs(comp - kt[pick])))


# ---------------------------------------------------------------------------
# exact-in-time semi-discrete propagator
# ---------------------------------------------------------------------------

class SpectralPropagator:
    """Eigen-decomposition of the semi-discrete generator.

    ``A = -W^{-1} S`` is similar to the symmetric ``W^{-1/2} S W^{-1/2}``.
    With orthonormal eigenvectors ``Q`` and ``Phi = W^{-1/2} Q`` the kernel
    matrix against the speed measure is ``K(t) = Phi exp(-t Lambda) Phi^T``.
    Time enters exactly, which the Duhamel code relies on.
    """

    def __init__(self, grid: Grid1D):
        self.grid = grid
        self.idx = grid.active
        d, e = grid.stiffness_bands()
        w = grid.w[self.idx]
        sw = np.sqrt(w)
        dd = d[self.idx] / w
        ee = e[self.idx[:-1]] / (sw[:-1] * sw[1:])
        lam, Q = eigh_tridiagonal(dd, ee)
        self.lam = np.maximum(lam, 0.0)
        self.phi = Q / sw[:, None]
        self.w = w

    @property
    def y(self):
        return self.grid.y[self.idx]

    def local_index(self, y0):
        j = self.grid.node_index(y0)
        pos = np.searchsorted(self.idx, j)
        if pos >= self.idx.size or self.idx[pos] != j:
            raise DomainError("source on an absorbing boundary")
        return int(pos)

    def kernel(self, t, rows):
        """Rows ``K(t)[rows, :]`` on the active nodes."""
        rows = np.atleast_1d(rows)
        return (self.phi[rows] * np.exp(-t * self.lam)) @ self.phi.T

    def matrix(self, t):
        return (self.phi * np.exp(-t * self.lam)) @ self.phi.T

    def resolvent(self, alpha, f):
        """``(alpha - A)^{-1} f`` for functions ``f`` on the active nodes."""
        coef = self.phi.T @ (self.w * f)
        return self.phi @ (coef / (alpha + self.lam))

    def to_table(self, source_y, times) -> KernelTable:
        r = self.local_index(source_y)
        vals = np.stack([self.kernel(t, r)[0] for t in times])
        full = np.zeros((len(times), self.grid.n_nodes))
        full[:, self.idx] = vals
        return KernelTable(self.grid, np.asarray(times, float), full, float(source_y), {"method": "spectral"})
