"""Small-norm point-to-point control synthesis.

The planner composes a feedback-like corrector term with a piecewise
constant planning control: the executed control is

    u(t) = W(x(t_j)) + u~(t_j)   frozen over each integrator step,

so the planned trajectory is literally a trajectory of x' = V(x) + u(t)
with piecewise-constant u, and re-simulation against the original V with
the stored schedule reproduces it step for step.

Search: forward expansion over a spatial cell grid.  From each reached
state, integrate the corrected flow for a window tau under a finite set of
constant controls; every cell the window crosses is marked.  A window
endpoint's neighborhood of radius tau * (budget headroom) / 2 is exactly
reachable by tweaking the window control, which is how the final target is
claimed (each tweak is re-simulated, never assumed).  Between control
windows the planner coasts along the free corrected flow, marking cells
along the orbit; recurrence of the corrected flow is what makes coasting
productive.  NOT_REACHED always means budget exhaustion, never proven
infeasibility.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field as dfield

import numpy as np

from .errors import ConfigurationError, InputError
from .dynamics import rk4_step

REACHED = "REACHED"
NOT_REACHED = "NOT_REACHED"


def step1_ball_radius(tau, delta, u_norm):
    """Radius tau*(delta - u_norm)/2 of the window-endpoint reachable ball."""
    if tau <= 0:
        raise InputError("tau must be positive")
    if u_norm >= delta:
        raise InputError("control norm must stay strictly below the budget")
    return tau * (delta - u_norm) / 2.0


@dataclass
class ControlSchedule:
    """Piecewise-constant control: values[k] on [breakpoints[k], breakpoints[k+1])."""

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.breakpoints = np.asarray(self.breakpoints, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if len(self.breakpoints) != len(self.values) + 1:
            raise InputError("need len(breakpoints) == len(values) + 1")
        if len(self.values) and np.any(np.diff(self.breakpoints) <= 0):
            raise InputError("breakpoints must be increasing")

    @property
    def sup_norm(self):
        if len(self.values) == 0:
            return 0.0
        return float(np.linalg.norm(self.values, axis=1).max())

    @property
    def duration(self):
        return float(self.breakpoints[-1] - self.breakpoints[0])

    def value_at(self, t):
        k = np.searchsorted(self.breakpoints, t, side="right") - 1
        k = np.clip(k, 0, len(self.values) - 1)
        return self.values[k]

    def coalesced(self):
        """Merge adjacent pieces with identical values."""
        if len(self.values) <= 1:
            return self
        keep = [0]
        for k in range(1, len(self.values)):
            if not np.array_equal(self.values[k], self.values[keep[-1]]):
                keep.append(k)
        bps = np.append(self.breakpoints[keep], self.breakpoints[-1])
        return ControlSchedule(bps, self.values[keep])

    def to_dict(self):
        return {"breakpoints": [float(b) for b in self.breakpoints],
                "values": [[float(v) for v in row] for row in self.values]}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["breakpoints"]), np.array(d["values"]))

    @classmethod
    def empty(cls, dim):
        return cls(np.array([0.0]), np.zeros((0, dim)))


@dataclass
class ReachSpec:
    """Point-to-point task and planner resolution parameters."""

    x0: np.ndarray
    y0: np.ndarray
    delta: float
    arrival_tol: float = 0.1
    horizon: float = 2000.0
    tau: float = 1.0
    cell_size: float | None = None
    step: float = 0.02
    coast_time: float | None = None
    control_quantum: float | None = None
    margin: float = 0.9
    window_pad: float = 8.0

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.y0 = np.asarray(self.y0, dtype=float)
        if self.delta <= 0:
            raise InputError("delta must be positive")
        if self.arrival_tol <= 0:
            raise InputError("arrival_tol must be positive")
        if self.x0.shape != self.y0.shape:
            raise InputError("x0 and y0 must have the same dimension")
        # control windows must hold an integer number of integrator steps
        n = max(1, round(self.tau / self.step))
        self.tau = n * self.step

    @property
    def dim(self):
        return len(self.x0)

    def resolved_cell(self):
        return self.cell_size if self.cell_size is not None else 0.6 * self.arrival_tol

    def resolved_coast(self):
        return self.coast_time if self.coast_time is not None else 50.0 * self.tau

    def search_window(self):
        lo = np.minimum(self.x0, self.y0) - self.window_pad
        hi = np.maximum(self.x0, self.y0) + self.window_pad
        return lo, hi


@dataclass
class ReachResult:
    """Planner output: schedule plus its own re-simulation."""

    status: str
    schedule: ControlSchedule
    times: np.ndarray
    states: np.ndarray
    arrival_error: float
    expanded_cells: int
    budget: dict
    frontier_stats: dict = dfield(default_factory=dict)

    @property
    def reached(self):
        return self.status == REACHED

    def to_dict(self):
        return {"status": self.status,
                "arrival_error": float(self.arrival_error),
                "expanded_cells": int(self.expanded_cells),
                "budget": self.budget,
                "frontier_stats": self.frontier_stats,
                "schedule": self.schedule.to_dict(),
                "sup_norm": self.schedule.sup_norm,
                "duration": float(self.times[-1]) if len(self.times) else 0.0}


@dataclass
class VerifyReport:
    passed: bool
    arrival_residual: float
    sup_norm: float
    delta: float
    arrival_tol: float
    endpoint: np.ndarray

    def to_dict(self):
        return {"passed": bool(self.passed),
                "arrival_residual": float(self.arrival_residual),
                "sup_norm": float(self.sup_norm), "delta": float(self.delta),
                "arrival_tol": float(self.arrival_tol),
                "endpoint": [float(v) for v in self.endpoint]}


def compass_directions(dim):
    """Unit control directions: 8 compass in 2-D, 26 in 3-D."""
    dirs = []
    for combo in itertools.product((-1.0, 0.0, 1.0), repeat=dim):
        v = np.array(combo)
        n = np.linalg.norm(v)
        if n > 0:
            dirs.append(v / n)
    return np.array(dirs)


def control_set(delta_tilde, dim, quantum=None):
    """Constant window controls: compass directions x quantized magnitudes.

    Magnitudes are multiples of `quantum` up to delta_tilde/2, so enlarging
    the budget with the same quantum only ever appends controls (the search
    explores a superset).  quantum=None uses the single magnitude
    delta_tilde/2.
    """
    half = delta_tilde / 2.0
    if quantum is None:
        mags = [half]
    else:
        m = int(math.floor(half / quantum + 1e-12))
        mags = [quantum * k for k in range(1, m + 1)]
    dirs = compass_directions(dim)
    out = [np.zeros(dim)]
    for mag in mags:
        for d in dirs:
            out.append(mag * d)
    return np.array(out)


class _Protocol:
    """Shared step protocol: u frozen over each RK4 step of x' = V + u."""

    def __init__(self, V, corrected, step):
        self.V = V
        self.corrected = corrected  # CorrectedField or None
        self.h = step

    def w_at(self, x):
        if self.corrected is None:
            return np.zeros_like(x)
        return self.corrected.eval_corrector(x)

    def advance(self, X, u_tilde, n_steps, snapshots=None):
        """March a batch (n, d) with constant planning control u_tilde.

        With snapshots given (preallocated (n_steps, n, d)), stores the
        state after every step.
        """
        X = np.array(X, copy=True)
        for k in range(n_steps):
            u = self.w_at(X) + u_tilde

            def rhs(s, u=u):
                return self.V.eval(s) + u
            X = rk4_step(rhs, X, self.h)
            if snapshots is not None:
                snapshots[k] = X
        return X


class _CellGrid:
    """Dense visited grid over the search window with per-cell records."""

    def __init__(self, lo, hi, cell):
        self.lo = lo
        self.cell = cell
        self.shape = tuple(int(math.ceil((h - l) / cell)) + 1
                           for l, h in zip(lo, hi))
        self.strides = np.array(
            [int(np.prod(self.shape[j + 1:], dtype=np.int64))
             for j in range(len(self.shape))], dtype=np.int64)
        self.visited = np.zeros(int(np.prod(self.shape, dtype=np.int64)), dtype=bool)
        self.parent = {}
        self.seg_ctrl = {}
        self.seg_steps = {}
        self.seg_kind = {}
        self.state = {}
        self.arrival = {}

    def index_of(self, pts):
        """Flat cell indices (or -1 when outside the window)."""
        pts = np.atleast_2d(pts)
        ij = np.floor((pts - self.lo) / self.cell).astype(np.int64)
        ok = np.ones(len(pts), dtype=bool)
        for j, n in enumerate(self.shape):
            ok &= (ij[:, j] >= 0) & (ij[:, j] < n)
        flat = (ij * self.strides).sum(axis=1)
        flat[~ok] = -1
        return flat

    def claim(self, flat, st, t, par, ctrl, steps, kind):
        self.visited[flat] = True
        self.parent[flat] = par
        self.seg_ctrl[flat] = ctrl
        self.seg_steps[flat] = steps
        self.seg_kind[flat] = kind
        self.state[flat] = st
        self.arrival[flat] = t


def plan_reach(V, corrector_field, spec, corrected=None):
    """Grid-expansion planner for steering x0 to y0 with |u| < delta.

    corrector_field may be None (plan against V alone).  `corrected` is an
    optional prebuilt grid-backed CorrectedField to reuse; otherwise one is
    built over the search window.  Deterministic: no randomness, fixed
    merge order.
    """
    dim = spec.dim
    if V.dim != dim:
        raise InputError("field dimension does not match the spec")
    h = spec.step
    lo, hi = spec.search_window()

    if corrector_field is not None and corrected is None:
        from .dynamics import CorrectedField
        window = ((lo[0] - 1.0, hi[0] + 1.0), (lo[1] - 1.0, hi[1] + 1.0))
        corrected = CorrectedField(V, corrector_field, window)
    s_w = 0.0 if corrected is None else 1.05 * corrected.sup_w + 1e-9
    if s_w >= spec.delta:
        raise ConfigurationError(
            f"corrector sup {s_w:.3g} exhausts the control budget "
            f"{spec.delta}; increase alpha")
    delta_tilde = spec.margin * (spec.delta - s_w)
    budget = {"delta": spec.delta, "delta_w": s_w, "delta_tilde": delta_tilde}

    proto = _Protocol(V, corrected, h)
    controls = control_set(delta_tilde, dim, spec.control_quantum)
    tau_steps = round(spec.tau / h)
    r_ball = spec.tau * delta_tilde / 4.0
    coast_steps = round(spec.resolved_coast() / h)

    # trivial task
    if np.linalg.norm(spec.y0 - spec.x0) <= spec.arrival_tol:
        sched = ControlSchedule.empty(dim)
        return ReachResult(REACHED, sched, np.array([0.0]),
                           spec.x0[None].copy(),
                           float(np.linalg.norm(spec.y0 - spec.x0)),
                           expanded_cells=0, budget=budget)

    grid = _CellGrid(lo, hi, spec.resolved_cell())
    target_flat = int(grid.index_of(spec.y0[None])[0])
    root = int(grid.index_of(spec.x0[None])[0])
    if root < 0 or target_flat < 0:
        raise InputError("x0/y0 must lie inside the search window")
    grid.claim(root, spec.x0.copy(), 0.0, None, np.zeros(dim), 0, "root")

    frontier = [root]
    waves = 0
    found = False

    def merge_block(snap_block, parents_arr, t0_arr, k_offset, u, kind):
        """Vectorized claim of unvisited in-window cells from snapshots.

        snap_block: (n_steps_block, n, d) states; returns newly claimed
        flat indices, or None plus True when the target was claimed.
        """
        nb, n, _ = snap_block.shape
        pts = snap_block.reshape(nb * n, dim)
        flat = grid.index_of(pts)
        ok = flat >= 0
        ok &= ~grid.visited[np.where(flat >= 0, flat, 0)] | ~ok
        # times: t0 + (k_offset + step_in_block) * h, particle-major layout
        steps = (np.arange(nb)[:, None] + k_offset + 1).repeat(n, axis=1)
        times = t0_arr[None, :] + steps * h
        times = times.reshape(nb * n)
        within = times <= spec.horizon + 1e-12
        ok &= within
        idx = np.nonzero(ok)[0]
        if len(idx) == 0:
            return []
        # first claim wins: order by (cell, time, block order)
        order = np.lexsort((idx, times[idx], flat[idx]))
        idx = idx[order]
        cells_sorted = flat[idx]
        first = np.ones(len(idx), dtype=bool)
        first[1:] = cells_sorted[1:] != cells_sorted[:-1]
        idx = idx[first]
        new = []
        for i in idx:
            f = int(flat[i])
            if grid.visited[f]:
                continue
            par = int(parents_arr[i % n])
            kstep = int(i // n) + k_offset + 1
            grid.claim(f, pts[i].copy(), float(times[i]), par, u, kstep, kind)
            new.append(f)
        return new

    while frontier and not found:
        waves += 1
        exp = [c for c in frontier
               if grid.arrival[c] + spec.tau <= spec.horizon + 1e-12]
        if not exp:
            break
        starts = np.array([grid.state[c] for c in exp])
        t0s = np.array([grid.arrival[c] for c in exp])
        parents_arr = np.array(exp)
        new_cells = []
        endpoints = []  # (endpoint state, parent cell, window control)

        snap = np.empty((tau_steps, len(exp), dim))
        for u in controls:
            proto.advance(starts, u, tau_steps, snapshots=snap)
            endpoints.append((snap[-1].copy(), u))
            new_cells += merge_block(snap, parents_arr, t0s, 0, u, "control")
            if grid.visited[target_flat]:
                found = True
                break

        # endpoint tweaks: claim the target when it sits in the exact
        # reachable ball around a window endpoint
        if not found and r_ball > 0:
            for z_end, u in endpoints:
                err = spec.y0[None, :] - z_end
                close = np.linalg.norm(err, axis=1) <= r_ball
                for i in np.nonzero(close)[0]:
                    u_tweak = u + err[i] / spec.tau
                    z = proto.advance(starts[[i]], u_tweak, tau_steps)[0]
                    f = int(grid.index_of(z[None])[0])
                    t_end = t0s[i] + spec.tau
                    if f >= 0 and not grid.visited[f] and t_end <= spec.horizon:
                        grid.claim(f, z, t_end, int(parents_arr[i]), u_tweak,
                                   tau_steps, "tweak")
                        new_cells.append(f)
                        if f == target_flat:
                            found = True
                            break
                if found:
                    break

        # free-flow coasting from control-type cells, in blocks
        if not found and coast_steps > 0:
            cidx = [i for i, c in enumerate(exp)
                    if grid.seg_kind[c] in ("root", "control", "tweak")]
            if cidx:
                X = starts[cidx].copy()
                cpar = parents_arr[cidx]
                ct0 = t0s[cidx]
                block = 250
                done = 0
                while done < coast_steps and not found:
                    nb = min(block, coast_steps - done)
                    snapc = np.empty((nb, len(X), dim))
                    X = proto.advance(X, np.zeros(dim), nb, snapshots=snapc)
                    new_cells += merge_block(snapc, cpar, ct0, done,
                                             np.zeros(dim), "coast")
                    done += nb
                    if grid.visited[target_flat]:
                        found = True

        frontier = new_cells

    stats = {"waves": waves, "cells_marked": len(grid.parent),
             "last_frontier": len(frontier),
             "max_time_reached": max(grid.arrival.values()) if grid.arrival else 0.0}

    if not grid.visited[target_flat]:
        sched = ControlSchedule.empty(dim)
        return ReachResult(NOT_REACHED, sched, np.array([0.0]),
                           spec.x0[None].copy(), math.inf,
                           expanded_cells=len(grid.parent), budget=budget,
                           frontier_stats=stats)

    # backtrack the segment chain
    chain = []
    key = target_flat
    while grid.parent[key] is not None:
        chain.append((grid.seg_ctrl[key], grid.seg_steps[key]))
        key = grid.parent[key]
    chain.reverse()

    # final exact re-simulation, recording the composed control
    times, states, u_series = _resimulate(proto, spec.x0, chain)
    sched = ControlSchedule(times, u_series).coalesced()
    arrival_error = float(np.linalg.norm(states[-1] - spec.y0))
    return ReachResult(REACHED, sched, times, states, arrival_error,
                       expanded_cells=len(grid.parent), budget=budget,
                       frontier_stats=stats)


def _resimulate(proto, x0, chain):
    """Single-trajectory rerun of a segment chain under the step protocol."""
    h = proto.h
    x = np.asarray(x0, float).copy()
    times = [0.0]
    states = [x.copy()]
    u_series = []
    t = 0.0
    for u_tilde, n_steps in chain:
        for _ in range(n_steps):
            u = proto.w_at(x[None])[0] + u_tilde
            u_series.append(u)

            def rhs(s, u=u):
                return proto.V.eval(s) + u
            x = rk4_step(rhs, x[None], h)[0]
            t += h
            times.append(t)
            states.append(x.copy())
    return (np.array(times), np.array(states),
            np.array(u_series).reshape(-1, len(x0)))


def verify_schedule(V, result, spec):
    """Re-integrate x' = V(x) + u(t) with the stored schedule and check it.

    Passes iff the endpoint lands within arrival_tol of y0 and the control
    sup-norm stays strictly below delta.  Uses the same integrator step as
    the planner, so an unperturbed schedule reproduces the planned path.
    """
    sched = result.schedule
    h = spec.step
    x = spec.x0.copy()
    if len(sched.values) == 0:
        residual = float(np.linalg.norm(x - spec.y0))
        return VerifyReport(residual <= spec.arrival_tol, residual, 0.0,
                            spec.delta, spec.arrival_tol, x)
    T = sched.breakpoints[-1] - sched.breakpoints[0]
    n_steps = int(round(T / h))
    for j in range(n_steps):
        u = sched.value_at(sched.breakpoints[0] + j * h + 0.5 * h)

        def rhs(s, u=u):
            return V.eval(s) + u
        x = rk4_step(rhs, x[None], h)[0]
    residual = float(np.linalg.norm(x - spec.y0))
    sup = sched.sup_norm
    passed = residual <= spec.arrival_tol and sup < spec.delta
    return VerifyReport(passed, residual, sup, spec.delta, spec.arrival_tol, x)
