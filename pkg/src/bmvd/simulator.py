"""Monte Carlo engine for the process on E.

State of a path: the signed radial coordinate ``y`` (negative on the leg)
and, on the plane, the angle ``theta``.  The interface is crossed with an
exact skew Brownian step.  Paths are generated in fixed-size chunks, each
owning a child stream of ``SeedSequence(seed)``, so results do not depend on
the number of worker threads.
"""
from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .drift import DriftSpec
from .geometry import DomainError, DomainSpec, EPoint, ModelParams, from_signed, kind, signed_radial_embed

LOG_CLIP = 50.0
CHUNK = 1 << 15
SUB_BATCH = 1024


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``band`` is the half-width of the strip ``|y| < band`` in which plane
    paths move in radial/angular coordinates; defaults to ``3 sqrt(dt)``.
    """

    dt: float = 1e-3
    T: float = 0.25
    n_paths: int = 100_000
    seed: int = 0
    band: Optional[float] = None
    mode: str = "none"
    drift: Optional[DriftSpec] = None
    curvature: bool = True
    workers: int = 1
    chunk: int = CHUNK

    def __post_init__(self):
        if not (self.dt > 0 and self.T > 0 and self.dt <= self.T + 1e-15):
            raise DomainError("need 0 < dt <= T")
        if self.n_paths < 1:
            raise DomainError("n_paths must be >= 1")
        if self.mode not in ("none", "euler_maruyama", "girsanov"):
            raise DomainError(f"unknown drift mode {self.mode!r}")
        if self.mode != "none" and self.drift is None:
            raise DomainError("drift mode requires a DriftSpec")
        if self.band is not None and self.band < 3 * math.sqrt(self.dt) - 1e-15:
            raise DomainError("interface band must be at least 3 sqrt(dt)")

    @property
    def delta(self):
        return 3 * math.sqrt(self.dt) if self.band is None else self.band

    @property
    def n_steps(self):
        return max(1, int(round(self.T / self.dt)))


@dataclass
class PathEnsemble:
    """Endpoints with log Girsanov weights and RNG provenance."""

    y: np.ndarray
    theta: np.ndarray
    logw: np.ndarray
    params: ModelParams
    seed: int
    streams: list
    n_clipped: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.y.size

    @property
    def weights(self):
        return np.exp(np.minimum(self.logw, LOG_CLIP))

    @property
    def endpoints(self):
        th = np.nan_to_num(self.theta)
        return [from_signed(float(u), self.params, float(a)) for u, a in zip(self.y, th)]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["y", "theta", "weight"])
            for u, a, w in zip(self.y, self.theta, self.weights):
                wr.writerow([repr(float(u)), repr(float(a)), repr(float(w))])


# ---------------------------------------------------------------------------
# skew Brownian motion
# ---------------------------------------------------------------------------

def skew_bm_density(t, x, y, eta):
    """Lebesgue transition density of skew Brownian motion.

    ``P(positive excursion) = (1 + eta) / 2``.  For ``x >= 0``::

        y > 0:  phi(y - x) + eta phi(y + x)
        y < 0:  (1 - eta) phi(y - x)

    and the mirror image for ``x < 0``.
    """
    t = float(t)
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    s = math.sqrt(t)

    def phi(z):
        return np.exp(-0.5 * (z / s) ** 2) / (s * math.sqrt(2 * math.pi))

    pos_src = phi(y - x) + np.where(y >= 0, eta * phi(np.abs(y) + np.abs(x)), -eta * phi(y - x))
    neg_src = phi(y - x) + np.where(y <= 0, -eta * phi(np.abs(y) + np.abs(x)), eta * phi(y - x))
    return np.where(x >= 0, pos_src, neg_src)


def skew_bm_cdf(t, x, y, eta):
    """Distribution function of skew BM at ``y`` (vectorised in ``y``)."""
    from scipy.special import ndtr

    s = math.sqrt(t)
    y = np.asarray(y, float)
    x = float(x)
    if x >= 0:
        # mass on the negative side: (1 - eta) Phi((y - x)/s) for y <= 0
        neg = (1 - eta) * ndtr((np.minimum(y, 0.0) - x) / s)
        pos = ndtr((y - x) / s) - ndtr(-x / s) + eta * (ndtr((y + x) / s) - ndtr(x / s))
        return np.where(y <= 0, neg, (1 - eta) * ndtr(-x / s) + np.maximum(pos, 0.0))
    return 1.0 - skew_bm_cdf(t, -x, -y, -eta)


def step_skew(y, dt, eta, rng, normals=None, return_hit=False):
    """One exact step of skew Brownian motion, vectorised.

    The magnitude evolves as reflecting Brownian motion
    ``|y| + sqrt(dt) N`` reflected at 0.  The step touched 0 when the
    unreflected proposal is nonpositive, or otherwise with the Brownian
    bridge probability ``exp(-2 |y| m / dt)``.  After a touch the sign is
    positive with probability ``(1 + eta) / 2``; otherwise the old sign is
    kept.

    Parameters
    ----------
    y : ndarray
        Current positions.
    dt : float
        Step size.
    eta : float
        Skewness in ``[-1, 1]``.
    rng : numpy.random.Generator
    normals : ndarray, optional
        Pre-drawn standard normals (used for Girsanov bookkeeping).
    return_hit : bool
        Also return the mask of paths that touched 0.

    Returns
    -------
    ndarray
        New positions (and the touch mask when requested).
    """
    y = np.asarray(y, float)
    a = np.abs(y)
    z = rng.standard_normal(y.shape) if normals is None else normals
    prop = a + math.sqrt(dt) * z
    m = np.abs(prop)
    u = rng.random(y.shape)
    with np.errstate(over="ignore"):
        hit = (prop <= 0) | (u < np.exp(-2.0 * a * m / dt))
    v = rng.random(y.shape)
    sign = np.where(y < 0, -1.0, 1.0)
    new_sign = np.where(v < 0.5 * (1 + eta), 1.0, -1.0)
    # a path sitting at 0 has no old sign; always resample it
    hit |= a == 0
    sign = np.where(hit, new_sign, sign)
    if return_hit:
        return sign * m, hit
    return sign * m


# ---------------------------------------------------------------------------
# chunked parallel driver
# ---------------------------------------------------------------------------

def _chunks(n, size):
    starts = list(range(0, n, size))
    return [(s, min(size, n - s)) for s in starts]


def _run_chunks(fn, cfg: SimConfig):
    parts = _chunks(cfg.n_paths, cfg.chunk)
    seqs = np.random.SeedSequence(cfg.seed).spawn(len(parts))
    jobs = [(i, size, np.random.default_rng(seqs[i])) for i, (_, size) in enumerate(parts)]
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            out = list(ex.map(lambda j: fn(*j), jobs))
    else:
        out = [fn(*j) for j in jobs]
    return out, list(range(len(parts)))


def _check_dt(cfg: SimConfig, params: ModelParams):
    # explicit 1/(2(y+eps)) step must stay well below eps
    if cfg.curvature and cfg.dt / (2 * params.eps) > 0.25 * params.eps:
        raise DomainError(f"dt={cfg.dt} too large for eps={params.eps}: the radial drift step "
                          "exceeds a quarter of the disc radius")


def _x0_coords(x0, params):
    if isinstance(x0, (int, float, np.floating)):
        return float(x0), 0.0
    u = signed_radial_embed(x0, params)
    th = x0.angle if kind(x0) == "plane" else 0.0
    return u, th


def simulate_radial(x0, config: SimConfig, params: ModelParams) -> PathEnsemble:
    """Signed radial process: Euler drift ``1/(2(y+eps))`` on ``y > 0``
    followed by an exact skew step.

    With ``config.curvature = False`` the drift is switched off and the
    output is exact skew Brownian motion.  An optional leg drift
    (``config.drift``) is applied in Euler-Maruyama form.
    """
    _check_dt(config, params)
    u0, _ = _x0_coords(x0, params)
    eta, eps, dt = params.eta, params.eps, config.dt
    drift = config.drift if config.mode == "euler_maruyama" else None
    n_steps = config.n_steps
    dt = config.T / n_steps

    def run(i, size, rng):
        y = np.full(size, u0)
        for _ in range(n_steps):
            if config.curvature:
                y = y + np.where(y > 0, dt / (2 * (np.maximum(y, 0) + eps)), 0.0)
            if drift is not None:
                y = y + dt * drift.radial(y)
            y = step_skew(y, dt, eta, rng)
        return y

    outs, streams = _run_chunks(run, config)
    y = np.concatenate(outs)
    return PathEnsemble(y, np.full(y.size, np.nan), np.zeros(y.size), params, config.seed, streams,
                        extra={"kind": "radial", "dt": dt})


# ---------------------------------------------------------------------------
# full-space simulation
# ---------------------------------------------------------------------------

def _full_step(y, th, logw, cfg: SimConfig, params: ModelParams, rng, dt):
    """Advance all paths by one step; returns (y, theta, logw)."""
    eps, eta = params.eps, params.eta
    sdt = math.sqrt(dt)
    mode = cfg.mode
    drift = cfg.drift
    em = mode == "euler_maruyama"
    track = mode == "girsanov"
    delta = cfg.delta

    radial = y < delta
    bulk = ~radial

    # --- leg and interface band: radial + angular coordinates -----------
    if radial.any():
        yr = y[radial]
        tr = th[radial]
        zr = rng.standard_normal(yr.shape)
        za = rng.standard_normal(yr.shape)
        on_leg = yr < 0
        on_pl = yr > 0
        rad = np.maximum(yr, 0.0) + eps
        ypre = yr + np.where(on_pl, dt / (2 * rad), 0.0)
        if drift is not None and (em or track):
            bl = np.where(on_leg, drift.leg(np.maximum(-yr, 1e-300)), 0.0)
            c, s = np.cos(tr), np.sin(tr)
            bp = np.where(on_pl, drift.plane(rad * c, rad * s), 0.0)
            if em:
                ypre = ypre - dt * bl + dt * bp * (c + s)
                tr = tr + np.where(on_pl, dt * bp * (c - s) / rad, 0.0)
            if track:
                # leg: drift b in the r direction, r = -y
                inc_leg = bl * (-sdt * zr) - 0.5 * bl * bl * dt
                inc_pl = bp * ((c + s) * sdt * zr + (c - s) * sdt * za) - bp * bp * dt
                logw[radial] += np.where(on_leg, inc_leg, inc_pl)
        ynew, touched = step_skew(ypre, dt, eta, rng, normals=np.where(ypre < 0, -zr, zr), return_hit=True)
        tr = tr + np.where(on_pl, sdt * za / rad, 0.0)
        reenter = touched & (ynew > 0)
        if reenter.any():
            tr[reenter] = rng.uniform(-math.pi, math.pi, reenter.sum())
        y[radial] = ynew
        th[radial] = tr

    # --- plane bulk: Cartesian Euler-Maruyama --------------------------
    if bulk.any():
        yb = y[bulk]
        tb = th[bulk]
        rad = yb + eps
        x1, x2 = rad * np.cos(tb), rad * np.sin(tb)
        z1 = rng.standard_normal(yb.shape)
        z2 = rng.standard_normal(yb.shape)
        if drift is not None and (em or track):
            b = drift.plane(x1, x2)
            if track:
                logw[bulk] += b * sdt * (z1 + z2) - b * b * dt
            if em:
                x1 = x1 + b * dt
                x2 = x2 + b * dt
        x1 = x1 + sdt * z1
        x2 = x2 + sdt * z2
        r = np.hypot(x1, x2)
        yn = r - eps
        tn = np.arctan2(x2, x1)
        inside = yn < 0
        if inside.any():
            k = inside.sum()
            up = rng.random(k) < 0.5 * (1 + eta)
            mag = -yn[inside]
            yn[inside] = np.where(up, mag, -mag)
            tn[inside] = np.where(up, rng.uniform(-math.pi, math.pi, k), 0.0)
        y[bulk] = yn
        th[bulk] = tn
    return y, th, logw


def simulate_full(x0, config: SimConfig, params: ModelParams, domain: Optional[DomainSpec] = None,
                  occupation_bins=None) -> PathEnsemble:
    """Full-space simulation on E.

    Plane paths away from a* take Cartesian Euler-Maruyama steps; paths on
    the leg or within ``config.delta`` of a* are advanced in radial and
    angular coordinates with the radial part resolved by an exact skew step.
    After touching a* the angle is redrawn uniformly.

    In ``girsanov`` mode the paths are driftless and ``logw`` accumulates
    the discretised exponent: on the leg ``b dW - b^2 dt / 2``, on the plane
    ``b (dW1 + dW2) - b^2 dt`` (drift vector ``(b, b)``).

    When ``domain`` is given, paths are killed on leaving it (with a
    Brownian-bridge correction for crossings within a step) and the
    weighted occupation time of ``occupation_bins`` (signed-coordinate edges)
    is recorded in ``extra``.
    """
    _check_dt(config, params)
    u0, th0 = _x0_coords(x0, params)
    n_steps = config.n_steps
    dt = config.T / n_steps
    if domain is not None:
        domain.validate(params)
        lo, hi = -domain.leg_length, domain.plane_extent(params)
        if not (lo < u0 < hi):
            raise DomainError("start point outside the domain")
    edges = None if occupation_bins is None else np.asarray(occupation_bins, float)

    def run(i, size, rng):
        y = np.full(size, u0)
        th = np.full(size, th0)
        logw = np.zeros(size)
        alive = np.ones(size, bool)
        t_exit = np.full(size, np.nan)
        y_exit = np.full(size, np.nan)
        nb = 0 if edges is None else edges.size - 1
        sub = np.arange(size) // SUB_BATCH
        n_sub = int(sub[-1]) + 1
        occ = None if edges is None else np.zeros(n_sub * nb)
        for step in range(n_steps):
            idx = np.flatnonzero(alive) if domain is not None else None
            if idx is not None and idx.size == 0:
                break
            if idx is None:
                y, th, logw = _full_step(y, th, logw, config, params, rng, dt)
                continue
            ya, ta, la = y[idx], th[idx], logw[idx]
            if occ is not None:
                w = np.exp(np.minimum(la, LOG_CLIP))
                b = np.searchsorted(edges, ya, side="right") - 1
                ok = (b >= 0) & (b < nb)
                cell = sub[idx[ok]] * nb + b[ok]
                occ += dt * np.bincount(cell, weights=w[ok], minlength=occ.size)
            yold = ya.copy()
            ya, ta, la = _full_step(ya, ta, la, config, params, rng, dt)
            out = (ya <= lo) | (ya >= hi)
            # bridge correction for excursions beyond an end within the step
            inside = ~out
            d_lo = np.maximum(yold - lo, 0) * np.maximum(ya - lo, 0)
            d_hi = np.maximum(hi - yold, 0) * np.maximum(hi - ya, 0)
            pc = np.exp(-2 * d_lo / dt) + np.exp(-2 * d_hi / dt)
            cross = inside & (rng.random(ya.size) < pc)
            out |= cross
            y[idx], th[idx], logw[idx] = ya, ta, la
            gone = idx[out]
            alive[gone] = False
            t_exit[gone] = (step + 1) * dt
            y_exit[gone] = np.where(ya[out] > 0, hi, lo)
        res = {"y": y, "th": th, "logw": logw}
        if domain is not None:
            res.update(alive=alive, t_exit=t_exit, y_exit=y_exit,
                       occ=None if occ is None else occ.reshape(n_sub, nb),
                       sub_sizes=np.bincount(sub))
        return res

    outs, streams = _run_chunks(run, config)
    y = np.concatenate([o["y"] for o in outs])
    th = np.concatenate([o["th"] for o in outs])
    logw = np.concatenate([o["logw"] for o in outs])
    th = np.where(y > 0, th, np.nan)
    extra = {"kind": "full", "dt": dt, "mode": config.mode}
    if domain is not None:
        alive = np.concatenate([o["alive"] for o in outs])
        extra["alive"] = alive
        extra["t_exit"] = np.concatenate([o["t_exit"] for o in outs])
        extra["y_exit"] = np.concatenate([o["y_exit"] for o in outs])
        if edges is not None:
            occ = np.zeros(edges.size - 1)
            for o in outs:  # fixed chunk order
                occ += o["occ"].sum(axis=0)
            extra["occupation"] = occ
            extra["occupation_by_batch"] = np.concatenate([o["occ"] for o in outs])
            extra["batch_sizes"] = np.concatenate([o["sub_sizes"] for o in outs])
            extra["edges"] = edges
    n_clipped = int(np.sum(logw > LOG_CLIP))
    return PathEnsemble(y, th, logw, params, config.seed, streams, n_clipped, extra)


def girsanov_weight(record, drift: DriftSpec, dt, params: ModelParams):
    """Weight of one stored driftless path.

    Parameters
    ----------
    record : dict
        ``y`` (signed positions, length n+1), ``theta`` (angles, ignored off
        the plane) and the driving increments ``dW`` of shape ``(n, 2)``:
        on the leg the first column is the increment of the leg coordinate;
        on the plane both Cartesian components.
    drift : DriftSpec
    dt : float

    Returns
    -------
    weight : float
        ``exp`` of the discretised exponent, clipped at ``e^50``.
    clipped : bool
    """
    y = np.asarray(record["y"], float)[:-1]
    th = np.asarray(record.get("theta", np.zeros(y.size + 1)), float)[:-1]
    dW = np.asarray(record["dW"], float).reshape(y.size, -1)
    band = record.get("band", 0.0)
    leg = y < 0
    pl = y > band
    expo = 0.0
    if leg.any():
        b = drift.leg(-y[leg])
        expo += float(np.sum(b * dW[leg, 0]) - 0.5 * np.sum(b * b) * dt)
    if pl.any():
        rad = y[pl] + params.eps
        b = drift.plane(rad * np.cos(th[pl]), rad * np.sin(th[pl]))
        expo += float(np.sum(b * (dW[pl, 0] + dW[pl, 1])) - np.sum(b * b) * dt)
    clipped = expo > LOG_CLIP
    return math.exp(min(expo, LOG_CLIP)), clipped


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

def bin_measure(edges, params: ModelParams, curvature=True):
    """m_p-measure of signed-coordinate bins (annuli on the plane side).

    With ``curvature = False`` the plane side carries the constant density
    ``2 pi eps`` (pure interface problem).
    """
    edges = np.asarray(edges, float)
    lo, hi = edges[:-1], edges[1:]
    p, eps = params.p, params.eps
    leg = p * (np.minimum(hi, 0) - np.minimum(lo, 0))
    a, b = np.maximum(lo, 0), np.maximum(hi, 0)
    plane = math.pi * ((b + eps) ** 2 - (a + eps) ** 2) if curvature else 2 * math.pi * eps * (b - a)
    return leg + plane


@dataclass
class EmpiricalTable:
    """Weighted histogram of endpoints over signed-coordinate bins."""

    edges: np.ndarray
    mass: np.ndarray
    mass_se: np.ndarray
    density: np.ndarray
    se: np.ndarray
    out_mass: float
    n: int
    ess: float

    @property
    def centers(self):
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["lo", "hi", "mass", "mass_se", "density", "se"])
            for row in zip(self.edges[:-1], self.edges[1:], self.mass, self.mass_se, self.density, self.se):
                wr.writerow([repr(float(v)) for v in row])


def estimate_density(ensemble: PathEnsemble, edges, params: ModelParams = None, curvature=True) -> EmpiricalTable:
    """m_p-density estimate with per-bin standard errors.

    Masses are means of ``w * 1[bin]``; their standard errors use the
    sample variance of the same products, which accounts for the spread of
    the Girsanov weights.
    """
    if ensemble.n == 0:
        raise DomainError("empty ensemble")
    params = ensemble.params if params is None else params
    edges = np.asarray(edges, float)
    if edges.ndim != 1 or np.any(np.diff(edges) <= 0):
        raise DomainError("bin edges must be increasing")
    meas = bin_measure(edges, params, curvature)
    if np.any(meas <= 0):
        raise DomainError("bins must have positive measure")
    w = ensemble.weights
    n = ensemble.n
    b = np.searchsorted(edges, ensemble.y, side="right") - 1
    ok = (b >= 0) & (b < edges.size - 1)
    s1 = np.bincount(b[ok], weights=w[ok], minlength=edges.size - 1)
    s2 = np.bincount(b[ok], weights=w[ok] ** 2, minlength=edges.size - 1)
    mass = s1 / n
    var = np.maximum(s2 / n - mass ** 2, 0.0)
    mse = np.sqrt(var / max(n - 1, 1))
    out_mass = float(np.sum(w[~ok]) / n)
    ess = float(w.sum() ** 2 / np.sum(w * w))
    return EmpiricalTable(edges, mass, mse, mass / meas, mse / meas, out_mass, n, ess)


def angle_histogram(ensemble: PathEnsemble, n_sectors=36):
    """Counts of plane endpoints per angular sector."""
    th = ensemble.theta[ensemble.y > 0]
    b = np.floor((th + math.pi) / (2 * math.pi) * n_sectors).astype(int) % n_sectors
    return np.bincount(b, minlength=n_sectors)


@dataclass
class ExitStats:
    occupation: np.ndarray
    occupation_se: np.ndarray
    green: np.ndarray
    green_se: np.ndarray
    edges: np.ndarray
    mean_exit: float
    mean_exit_se: float
    occupation_total: float
    occupation_total_se: float
    frac_alive: float
    warnings: list


def occupation_and_exit(x0, config: SimConfig, params: ModelParams, domain: DomainSpec, edges) -> ExitStats:
    """Occupation measure and exit statistics for the killed process.

    The Green function column is the weighted occupation time per bin
    divided by the bin's m_p-measure.  Standard errors come from batch means
    over batches of 1024 paths.
    """
    ens = simulate_full(x0, config, params, domain=domain, occupation_bins=edges)
    ex = ens.extra
    sizes = ex["batch_sizes"].astype(float)
    occ_c = ex["occupation_by_batch"] / sizes[:, None]
    n = ens.n
    occ = ex["occupation"] / n
    k = len(sizes)
    if k > 1:
        occ_se = np.sqrt(np.sum(sizes[:, None] * (occ_c - occ) ** 2, axis=0) / (n * (k - 1)))
    else:
        occ_se = np.full_like(occ, np.nan)
    meas = bin_measure(edges, params)
    w = ens.weights
    t_exit = np.where(np.isnan(ex["t_exit"]), config.T, ex["t_exit"])
    mean_exit = float(np.mean(w * t_exit))
    mean_exit_se = float(np.std(w * t_exit, ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    tot_c = occ_c.sum(axis=1)
    tot = float(occ.sum())
    tot_se = float(np.sqrt(np.sum(sizes * (tot_c - tot) ** 2) / (n * (k - 1)))) if k > 1 else math.nan
    frac_alive = float(np.mean(ex["alive"]))
    msgs = []
    if frac_alive > 0.01:
        msg = f"horizon too short: {100 * frac_alive:.2f}% of paths have not exited"
        msgs.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return ExitStats(occ, occ_se, occ / meas, occ_se / meas, np.asarray(edges, float), mean_exit, mean_exit_se,
                     tot, tot_se, frac_alive, msgs)
