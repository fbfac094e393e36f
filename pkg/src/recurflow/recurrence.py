"""Recurrence verification: discrete measure-preserving maps and flows.

The discrete checker iterates set images of an injective map under a
weighted (possibly non-summable) measure and records every horizon step at
which the image meets the starting set, together with the growth of the
swept union; sublinear union growth is the hypothesis that forces returns.
The continuous scans sample starts from the invariant weight, integrate
the flow, and report first-return statistics; return times are unbounded
in theory, so the scans report fractions rather than asserting them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dfield

import numpy as np

from .dynamics import FlowConfig, rk4_step, rk4_stream
from .errors import InputError, ModelError
from .fields import VectorField


class DiscreteSystem:
    """Injective map on a countable state space with per-state weights.

    States are arbitrary hashables; the map and weight are callables.  For
    permutation-backed systems use :meth:`from_permutation` (states are
    0..n-1).  Injectivity and measure preservation are verified exhaustively
    on the states actually visited.
    """

    def __init__(self, step, weight, name="discrete", states=None):
        self.step = step
        self.weight = weight
        self.name = name
        self.states = states  # full state list when finite, else None

    @classmethod
    def from_permutation(cls, perm, weights=None, name="permutation"):
        perm = np.asarray(perm, dtype=int)
        n = len(perm)
        if sorted(perm.tolist()) != list(range(n)):
            raise ModelError("not a permutation of 0..n-1")
        if weights is None:
            weights = np.ones(n)
        weights = np.asarray(weights, dtype=float)
        if np.any(weights < 0):
            raise InputError("weights must be nonnegative")
        return cls(step=lambda s: int(perm[s]),
                   weight=lambda s: float(weights[s]),
                   name=name, states=list(range(n)))

    @classmethod
    def cycle(cls, n):
        """Cyclic rotation on n states with uniform weights."""
        return cls.from_permutation(np.roll(np.arange(n), -1), name=f"cycle:{n}")

    @classmethod
    def random_permutation(cls, n, seed, weights=None):
        rng = np.random.default_rng(seed)
        return cls.from_permutation(rng.permutation(n), weights,
                                    name=f"perm:{n}:{seed}")

    @classmethod
    def translation_1d(cls):
        """k -> k+1 on the integers with counting measure.

        Preserves the measure but the swept union grows linearly, so the
        recurrence hypothesis fails; no returns occur.
        """
        return cls(step=lambda k: k + 1, weight=lambda k: 1.0,
                   name="translation")

    @classmethod
    def rotation_lattice(cls, p=0.75, alpha=1.0):
        """Quarter-turn (k1,k2) -> (-k2,k1) on Z^2 with weights psi(k).

        The rotation preserves |k|, hence the weights; balls are invariant
        so the union growth is bounded and every orbit returns (period 4).
        """
        def w(k):
            return (k[0] ** 2 + k[1] ** 2 + alpha ** 2) ** (-p)

        return cls(step=lambda k: (-k[1], k[0]), weight=w,
                   name="rotation_lattice")

    def verify_injective(self, states):
        seen = {}
        for s in states:
            img = self.step(s)
            if img in seen and seen[img] != s:
                raise ModelError(
                    f"map is not injective: {s} and {seen[img]} share image {img}")
            seen[img] = s

    def verify_preserving(self, states, tol=1e-12):
        """Check weight(T(s)) == weight(s) on the given states.

        For an injective map this is exactly preservation of the measure on
        singletons.
        """
        for s in states:
            if abs(self.weight(self.step(s)) - self.weight(s)) > tol:
                raise ModelError(
                    f"weights are not preserved at state {s}")

    def weight_of(self, states):
        return float(sum(self.weight(s) for s in states))


@dataclass
class RecurrenceReport:
    """Return events and orbit growth of a discrete recurrence check."""

    set_spec: str
    horizon: int
    return_events: list
    orbit_growth: list
    growth_slope: float
    returned: bool
    extras: dict = dfield(default_factory=dict)

    def to_dict(self):
        return {"set": self.set_spec, "horizon": self.horizon,
                "return_events": list(self.return_events),
                "orbit_growth": list(self.orbit_growth),
                "growth_slope": self.growth_slope,
                "returned": self.returned, **self.extras}


def poincare_discrete_check(system, U, n_max, check_preservation=True):
    """Iterate images of U and record intersections with U up to n_max.

    orbit_growth[n] is the weight of the union of the first n+1 images;
    its least-squares slope diagnoses the sublinear-growth hypothesis.
    """
    U = list(U)
    if not U:
        raise InputError("U must be nonempty")
    u_weight = system.weight_of(U)
    if u_weight <= 0:
        raise InputError("U must have positive measure")
    u_set = set(U)
    current = list(U)
    union = set(U)
    growth = [system.weight_of(union)]
    events = []
    for n in range(1, n_max + 1):
        system.verify_injective(current)
        if check_preservation:
            system.verify_preserving(current)
        current = [system.step(s) for s in current]
        if len(set(current)) != len(current):
            raise ModelError("map is not injective on the visited states")
        if u_set.intersection(current):
            events.append(n)
        fresh = [s for s in current if s not in union]
        union.update(fresh)
        growth.append(growth[-1] + system.weight_of(fresh))
    ns = np.arange(len(growth))
    slope = float(np.polyfit(ns, np.array(growth), 1)[0]) if len(growth) > 1 else 0.0
    return RecurrenceReport(
        set_spec=f"{system.name}:U({len(U)} states)", horizon=n_max,
        return_events=events, orbit_growth=growth, growth_slope=slope,
        returned=bool(events))


@dataclass
class ReturnScanReport:
    """First-return statistics of a flow from a ball."""

    center: tuple
    radius: float
    tau: float
    horizon: float
    n_particles: int
    seed: int
    return_fraction: float
    return_times: np.ndarray
    histogram: tuple
    left_core_fraction: float = 0.0

    def to_dict(self):
        bins, counts = self.histogram
        return {"center": list(self.center), "radius": self.radius,
                "tau": self.tau, "horizon": self.horizon,
                "n_particles": self.n_particles, "seed": self.seed,
                "return_fraction": self.return_fraction,
                "left_core_fraction": self.left_core_fraction,
                "histogram_bins": [float(b) for b in bins],
                "histogram_counts": [int(c) for c in counts]}


def _sample_ball_uniform(center, radius, n, rng):
    dim = len(center)
    out = np.empty((n, dim))
    got = 0
    while got < n:
        cand = rng.uniform(-radius, radius, size=(2 * (n - got) + 8, dim))
        keep = cand[(cand ** 2).sum(axis=1) < radius ** 2][: n - got]
        out[got: got + len(keep)] = keep
        got += len(keep)
    return center + out


def _sample_ball_mu(psi, center, radius, n, rng):
    """Rejection sampling from psi dx restricted to the ball."""
    # psi peaks at the ball point closest to the origin
    c = np.asarray(center, float)
    nc = np.linalg.norm(c)
    nearest = c * max(0.0, 1.0 - radius / nc) if nc > 0 else c
    psi_max = float(psi.psi(nearest))
    out = np.empty((n, len(c)))
    got = 0
    while got < n:
        cand = _sample_ball_uniform(c, radius, 2 * (n - got) + 8, rng)
        accept = rng.uniform(0, 1, len(cand)) < psi.psi(cand) / psi_max
        keep = cand[accept][: n - got]
        out[got: got + len(keep)] = keep
        got += len(keep)
    return out


def continuous_return_scan(flow_field, center, radius, tau, horizon,
                           n_particles=1000, seed=0, cfg=None, psi=None):
    """Flow particles from a ball and record first re-entry after tau.

    Starts are sampled from psi dx restricted to the ball when psi is
    given (the corrected-flow case), otherwise uniformly.  A particle
    "returns" at the first sampled time t >= tau with |x(t)-center| <
    radius; sampling at the integrator step bounds missed crossings by
    step * sup-speed.  Returned particles are dropped from the ensemble.
    """
    if tau <= 0:
        raise InputError("tau must be positive")
    if radius <= 0:
        raise InputError("radius must be positive")
    cfg = cfg or FlowConfig(step=1e-2)
    rng = np.random.default_rng(seed)
    center = np.asarray(center, dtype=float)
    if psi is not None:
        X = _sample_ball_mu(psi, center, radius, n_particles, rng)
    else:
        X = _sample_ball_uniform(center, radius, n_particles, rng)
    h = cfg.step
    n_steps = int(round(horizon / h))
    alive = np.arange(n_particles)
    return_times = np.full(n_particles, np.nan)
    left_core = np.zeros(n_particles, dtype=bool)
    has_core = hasattr(flow_field, "in_core")

    t = 0.0
    for k in range(n_steps):
        X = rk4_step(lambda s: flow_field.eval(s), X, h)
        t = (k + 1) * h
        if not np.all(np.isfinite(X)):
            raise InputError(f"non-finite state at t={t:.6g}")
        if has_core:
            left_core[alive] |= ~flow_field.in_core(X)
        if t >= tau:
            inside = ((X - center) ** 2).sum(axis=1) < radius ** 2
            if inside.any():
                return_times[alive[inside]] = t
                X = X[~inside]
                alive = alive[~inside]
                if len(alive) == 0:
                    break
    returned = np.isfinite(return_times)
    frac = float(returned.mean())
    times = return_times[returned]
    bins = np.linspace(tau, horizon, 21)
    counts, _ = np.histogram(times, bins=bins)
    return ReturnScanReport(
        center=tuple(center), radius=radius, tau=tau, horizon=horizon,
        n_particles=n_particles, seed=seed, return_fraction=frac,
        return_times=times, histogram=(bins, counts),
        left_core_fraction=float(left_core.mean()))


@dataclass
class PoissonScanReport:
    """Near-return distances of grid points under forward flow."""

    window: tuple
    grid_shape: tuple
    horizon: float
    eps_r: float
    min_distances: np.ndarray
    fraction_near: float

    def to_dict(self):
        return {"window": [list(w) for w in self.window],
                "grid_shape": list(self.grid_shape),
                "horizon": self.horizon, "eps_r": self.eps_r,
                "fraction_near": self.fraction_near,
                "min_distances": [float(v) for v in self.min_distances]}


def poisson_stability_scan(flow_field, window, grid_n=11, horizon=50.0,
                           eps_r=0.1, tau=0.5, cfg=None):
    """Fraction of grid points whose forward orbit comes back within eps_r.

    For each lattice point x in the window, tracks min over sampled
    t in [tau, horizon] of |phi^t(x) - x|.
    """
    cfg = cfg or FlowConfig(step=1e-2)
    (x_lo, x_hi), (y_lo, y_hi) = window
    gx = np.linspace(x_lo, x_hi, grid_n)
    gy = np.linspace(y_lo, y_hi, grid_n)
    X0 = np.stack(np.meshgrid(gx, gy, indexing="ij"), axis=-1).reshape(-1, 2)
    X = X0.copy()
    h = cfg.step
    n_steps = int(round(horizon / h))
    min_d = np.full(len(X0), np.inf)

    def cb(k, t, x):
        if t >= tau:
            d = np.linalg.norm(x - X0, axis=1)
            np.minimum(min_d, d, out=min_d)

    rk4_stream(lambda s: flow_field.eval(s), X, h, n_steps, cb)
    frac = float((min_d <= eps_r).mean())
    return PoissonScanReport(window=window, grid_shape=(grid_n, grid_n),
                             horizon=horizon, eps_r=eps_r,
                             min_distances=min_d, fraction_near=frac)


def near_return_search(flow_field, x0, horizon, tau=0.5, cfg=None,
                       refine_tol=1e-9):
    """Best near-return (t*, |phi^t*(x0) - x0|) over t in [tau, horizon].

    Scans at the integrator step, then refines the best bracket by golden
    section with a 10x finer step.  Diagnostic input for closing-type
    arguments; no perturbation is constructed.
    """
    if horizon <= tau:
        raise InputError("horizon must exceed tau")
    cfg = cfg or FlowConfig(step=1e-2)
    x0 = np.asarray(x0, dtype=float)
    h = cfg.step
    n_steps = int(round(horizon / h))
    states = np.empty((n_steps + 1, len(x0)))
    states[0] = x0
    X = x0[None, :].copy()

    def cb(k, t, x):
        states[k] = x[0]

    rk4_stream(lambda s: flow_field.eval(s), X, h, n_steps, cb)
    times = np.arange(n_steps + 1) * h
    dist = np.linalg.norm(states - x0[None, :], axis=1)
    mask = times >= tau
    k_best = np.argmax(mask) + int(np.argmin(dist[mask]))
    t_best = times[k_best]

    # refine on [t_best - h, t_best + h] from the cached state two steps back
    k_lo = max(0, k_best - 1)
    base_state = states[k_lo]
    base_t = times[k_lo]
    fine = FlowConfig(step=h / 10.0)

    def d_of(t):
        if t < base_t + 1e-15:
            return float(np.linalg.norm(base_state - x0))
        from .dynamics import flow_map
        xe = flow_map(flow_field, base_state, t - base_t, fine)
        return float(np.linalg.norm(xe - x0))

    lo = max(tau, t_best - h)
    hi = min(horizon, t_best + h)
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c1 = b - invphi * (b - a)
    c2 = a + invphi * (b - a)
    f1, f2 = d_of(c1), d_of(c2)
    while b - a > refine_tol:
        if f1 < f2:
            b, c2, f2 = c2, c1, f1
            c1 = b - invphi * (b - a)
            f1 = d_of(c1)
        else:
            a, c1, f1 = c1, c2, f2
            c2 = a + invphi * (b - a)
            f2 = d_of(c2)
    t_star = 0.5 * (a + b)
    return t_star, d_of(t_star)
