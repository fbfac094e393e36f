"""Velocity fields: declarative construction, evaluation, FD calculus.

A :class:`VectorField` is a bounded velocity field with a declared sup
bound, an optional Lipschitz bound and a wavenumber bound used by the
quadrature modules to grade node counts.  Built-in kinds are serializable
(JSON spec / CSV grids) so CLI runs are reproducible; test-only fields can
wrap arbitrary callables behind the same contract.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field as dfield
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InputError

_BUILTIN_KINDS = ("constant", "shear_sin", "taylor_green", "grid_sampled",
                  "sum", "scaled", "custom")


@dataclass
class VectorField:
    """Bounded velocity field on R^dim.

    Parameters
    ----------
    kind : str
        One of constant, shear_sin, taylor_green, grid_sampled, sum,
        scaled, custom.
    dim : int
        Space dimension.
    params : dict
        Kind-specific parameters (children fields, constants, grid data).
    sup_bound : float
        Declared bound on |field(x)| over all of R^dim.
    lip_bound : float or None
        Declared Lipschitz bound, None if unknown.
    wavenumber_bound : float
        Bound on the spatial frequency content (rad per length unit);
        0 for constant fields.  Quadrature modules use it to choose node
        counts, so it must not underestimate.
    """

    kind: str
    dim: int
    params: dict
    sup_bound: float
    lip_bound: float | None = None
    wavenumber_bound: float = 1.0
    name: str = ""
    _evaluator: object = dfield(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in _BUILTIN_KINDS:
            raise InputError(f"unknown field kind {self.kind!r}")
        if self.dim < 1:
            raise InputError("dim must be a positive integer")
        if self.sup_bound < 0:
            raise InputError("sup_bound must be nonnegative")
        if self._evaluator is None:
            self._evaluator = _build_evaluator(self)

    # -- construction helpers -------------------------------------------

    @classmethod
    def constant(cls, c):
        c = np.asarray(c, dtype=float)
        return cls(kind="constant", dim=c.size, params={"c": c},
                   sup_bound=float(np.linalg.norm(c)), lip_bound=0.0,
                   wavenumber_bound=0.0, name="constant")

    @classmethod
    def shear_sin(cls):
        """Planar shear (0, sin x1): incompressible, zero mean at scale 2*pi."""
        return cls(kind="shear_sin", dim=2, params={}, sup_bound=1.0,
                   lip_bound=1.0, wavenumber_bound=1.0, name="shear_sin")

    @classmethod
    def taylor_green(cls):
        """Cellular vortex field (-sin x1 cos x2, cos x1 sin x2)."""
        return cls(kind="taylor_green", dim=2, params={}, sup_bound=1.0,
                   lip_bound=1.0, wavenumber_bound=1.0, name="taylor_green")

    @classmethod
    def grid_sampled(cls, axes, values):
        """Multilinear interpolation of node values, tiled periodically.

        axes: per-axis strictly increasing node coordinates.
        values: array of shape (*n_nodes, dim) with node velocities.
        The first/last nodes along each axis must agree (the tiling period
        is max-min), otherwise periodic tiling could not be continuous.
        """
        axes = [np.asarray(a, dtype=float) for a in axes]
        values = np.asarray(values, dtype=float)
        dim = len(axes)
        if values.shape != tuple(len(a) for a in axes) + (dim,):
            raise InputError("grid values shape does not match axes")
        for a in axes:
            if len(a) < 2 or np.any(np.diff(a) <= 0):
                raise InputError("grid axes must be strictly increasing")
        for j in range(dim):
            first = np.take(values, 0, axis=j)
            last = np.take(values, -1, axis=j)
            if not np.allclose(first, last, atol=1e-9):
                raise InputError(
                    "grid boundary values do not match along axis "
                    f"{j}; periodic tiling would be discontinuous")
        sup = float(np.linalg.norm(values, axis=-1).max())
        spacing = min(float(np.diff(a).min()) for a in axes)
        return cls(kind="grid_sampled", dim=dim,
                   params={"axes": axes, "values": values},
                   sup_bound=sup, lip_bound=None,
                   wavenumber_bound=math.pi / spacing, name="grid")

    @classmethod
    def grid_from_csv(cls, path, dim):
        """Load a grid field from a CSV with header x1..xd,v1..vd."""
        axes, values = load_grid_csv(path, dim)
        return cls.grid_sampled(axes, values)

    @classmethod
    def sum_of(cls, f, g):
        if f.dim != g.dim:
            raise InputError("cannot sum fields of different dimension")
        lip = None
        if f.lip_bound is not None and g.lip_bound is not None:
            lip = f.lip_bound + g.lip_bound
        return cls(kind="sum", dim=f.dim, params={"children": (f, g)},
                   sup_bound=f.sup_bound + g.sup_bound, lip_bound=lip,
                   wavenumber_bound=max(f.wavenumber_bound, g.wavenumber_bound),
                   name=f"sum({f.name},{g.name})")

    @classmethod
    def scaled(cls, f, gain=1.0, stretch=1.0):
        """gain * f(stretch * x); both factors preserve incompressibility."""
        lip = None if f.lip_bound is None else abs(gain) * abs(stretch) * f.lip_bound
        return cls(kind="scaled", dim=f.dim,
                   params={"child": f, "gain": float(gain), "stretch": float(stretch)},
                   sup_bound=abs(gain) * f.sup_bound, lip_bound=lip,
                   wavenumber_bound=abs(stretch) * f.wavenumber_bound,
                   name=f"scaled({f.name})")

    @classmethod
    def from_callable(cls, fn, dim, sup_bound, lip_bound=None,
                      wavenumber_bound=1.0, name="custom"):
        """Wrap a callable taking (..., dim) arrays.  Not serializable.

        Evaluations are checked against the declared sup bound at runtime.
        """
        return cls(kind="custom", dim=dim, params={"fn": fn},
                   sup_bound=float(sup_bound), lip_bound=lip_bound,
                   wavenumber_bound=wavenumber_bound, name=name)

    # -- evaluation ------------------------------------------------------

    def eval(self, x):
        """Evaluate at x of shape (..., dim); returns the same shape."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise InputError(
                f"point dimension {x.shape[-1]} != field dimension {self.dim}")
        out = self._evaluator(x)
        if self.kind == "custom":
            norms = np.linalg.norm(out, axis=-1)
            if not np.all(np.isfinite(out)):
                raise ConfigurationError(f"field {self.name!r} returned non-finite values")
            if norms.size and norms.max() > self.sup_bound * (1.0 + 1e-12):
                raise ConfigurationError(
                    f"field {self.name!r} exceeded its declared sup bound: "
                    f"{norms.max():.6g} > {self.sup_bound:.6g}")
        return out

    def __call__(self, x):
        return self.eval(x)

    # -- serialization ----------------------------------------------------

    def to_spec(self):
        """JSON-able declarative spec; raises for custom fields."""
        if self.kind == "constant":
            return {"kind": "constant", "dim": self.dim,
                    "params": {"c": self.params["c"].tolist()}}
        if self.kind in ("shear_sin", "taylor_green"):
            return {"kind": self.kind, "dim": self.dim, "params": {}}
        if self.kind == "sum":
            f, g = self.params["children"]
            return {"kind": "sum", "dim": self.dim,
                    "params": {"terms": [f.to_spec(), g.to_spec()]}}
        if self.kind == "scaled":
            return {"kind": "scaled", "dim": self.dim,
                    "params": {"child": self.params["child"].to_spec(),
                               "gain": self.params["gain"],
                               "stretch": self.params["stretch"]}}
        if self.kind == "grid_sampled":
            return {"kind": "grid", "dim": self.dim,
                    "params": {"axes": [a.tolist() for a in self.params["axes"]],
                               "values": self.params["values"].tolist()}}
        raise InputError(f"field kind {self.kind!r} is not serializable")

    @classmethod
    def from_spec(cls, spec, base_dir="."):
        """Build a field from a JSON spec dict."""
        kind = spec.get("kind")
        dim = int(spec.get("dim", 2))
        params = spec.get("params", {}) or {}
        if kind == "constant":
            return cls.constant(params["c"])
        if kind == "shear_sin":
            return cls.shear_sin()
        if kind == "taylor_green":
            return cls.taylor_green()
        if kind == "sum":
            terms = [cls.from_spec(t, base_dir) for t in params["terms"]]
            out = terms[0]
            for t in terms[1:]:
                out = cls.sum_of(out, t)
            return out
        if kind == "scaled":
            child = cls.from_spec(params["child"], base_dir)
            return cls.scaled(child, gain=params.get("gain", 1.0),
                              stretch=params.get("stretch", 1.0))
        if kind in ("grid", "grid_sampled"):
            if "csv" in params:
                axes, values = load_grid_csv(Path(base_dir) / params["csv"], dim)
            else:
                axes = [np.asarray(a, float) for a in params["axes"]]
                values = np.asarray(params["values"], float)
            return cls.grid_sampled(axes, values)
        raise InputError(f"unknown field spec kind {kind!r}")


def _build_evaluator(f):
    kind = f.kind
    if kind == "constant":
        c = f.params["c"]

        def ev(x):
            return np.broadcast_to(c, x.shape).copy()
        return ev
    if kind == "shear_sin":
        def ev(x):
            out = np.zeros_like(x)
            out[..., 1] = np.sin(x[..., 0])
            return out
        return ev
    if kind == "taylor_green":
        def ev(x):
            out = np.empty_like(x)
            out[..., 0] = -np.sin(x[..., 0]) * np.cos(x[..., 1])
            out[..., 1] = np.cos(x[..., 0]) * np.sin(x[..., 1])
            return out
        return ev
    if kind == "sum":
        fa, fb = f.params["children"]

        def ev(x):
            return fa.eval(x) + fb.eval(x)
        return ev
    if kind == "scaled":
        child = f.params["child"]
        gain = f.params["gain"]
        stretch = f.params["stretch"]
        if stretch == 1.0:
            def ev(x):
                return gain * child.eval(x)
        else:
            def ev(x):
                return gain * child.eval(stretch * x)
        return ev
    if kind == "grid_sampled":
        return _GridInterpolator(f.params["axes"], f.params["values"])
    if kind == "custom":
        return f.params["fn"]
    raise InputError(f"unknown field kind {kind!r}")


class _GridInterpolator:
    """Piecewise multilinear interpolation with periodic tiling."""

    def __init__(self, axes, values):
        self.axes = axes
        self.values = values
        self.mins = np.array([a[0] for a in axes])
        self.periods = np.array([a[-1] - a[0] for a in axes])
        self.dim = len(axes)

    def __call__(self, x):
        lead = x.shape[:-1]
        pts = x.reshape(-1, self.dim)
        # wrap into the fundamental box
        pts = self.mins + np.mod(pts - self.mins, self.periods)
        idx = []
        frac = []
        for j, a in enumerate(self.axes):
            i = np.clip(np.searchsorted(a, pts[:, j], side="right") - 1,
                        0, len(a) - 2)
            idx.append(i)
            frac.append((pts[:, j] - a[i]) / (a[i + 1] - a[i]))
        out = np.zeros((len(pts), self.dim))
        for corner in range(2 ** self.dim):
            w = np.ones(len(pts))
            loc = []
            for j in range(self.dim):
                bit = (corner >> j) & 1
                w = w * (frac[j] if bit else (1.0 - frac[j]))
                loc.append(idx[j] + bit)
            out += w[:, None] * self.values[tuple(loc)]
        return out.reshape(*lead, self.dim)


def load_grid_csv(path, dim):
    """Read a grid CSV (header x1..xd,v1..vd, row-major nodes).

    Returns (axes, values) suitable for VectorField.grid_sampled.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = [f"x{i+1}" for i in range(dim)] + [f"v{i+1}" for i in range(dim)]
        if [h.strip() for h in header] != expected:
            raise InputError(
                f"grid CSV header must be {','.join(expected)}, got {header}")
        rows = np.array([[float(v) for v in row] for row in reader if row])
    coords = rows[:, :dim]
    vels = rows[:, dim:]
    axes = [np.unique(coords[:, j]) for j in range(dim)]
    shape = tuple(len(a) for a in axes)
    if np.prod(shape) != len(rows):
        raise InputError("grid CSV does not contain a full tensor grid")
    # order rows into the tensor grid
    index = np.zeros(len(rows), dtype=int)
    for j in range(dim):
        pos = np.searchsorted(axes[j], coords[:, j])
        index = index * shape[j] + pos
    if len(np.unique(index)) != len(rows):
        raise InputError("grid CSV contains duplicate nodes")
    values = np.empty(shape + (dim,))
    values.reshape(-1, dim)[index] = vels
    return axes, values


def write_grid_csv(path, axes, values):
    """Write a grid field CSV in the format load_grid_csv reads."""
    dim = len(axes)
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    vals = np.asarray(values).reshape(-1, dim)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i+1}" for i in range(dim)] +
                        [f"v{i+1}" for i in range(dim)])
        for xrow, vrow in zip(mesh, vals):
            writer.writerow([repr(float(v)) for v in xrow] +
                            [repr(float(v)) for v in vrow])


# -- finite-difference calculus ------------------------------------------

def eval_field(f, x):
    """Functional alias for f.eval(x)."""
    return f.eval(x)


def divergence_fd(f, x, h=1e-4):
    """Central-difference divergence at x (shape (..., dim) -> (...))."""
    if h <= 0:
        raise InputError("FD step h must be positive")
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1])
    for i in range(f.dim):
        e = np.zeros(f.dim)
        e[i] = h
        out = out + (f.eval(x + e)[..., i] - f.eval(x - e)[..., i]) / (2.0 * h)
    return out


def jacobian_fd(f, x, h=1e-4):
    """Central-difference Jacobian; row i is the gradient of component i."""
    if h <= 0:
        raise InputError("FD step h must be positive")
    x = np.asarray(x, dtype=float)
    jac = np.zeros(x.shape[:-1] + (f.dim, f.dim))
    for j in range(f.dim):
        e = np.zeros(f.dim)
        e[j] = h
        diff = (f.eval(x + e) - f.eval(x - e)) / (2.0 * h)
        jac[..., :, j] = diff
    return jac


def partial_derivative_field(f, j, h=1e-4):
    """The finite-difference field x -> d f / d x_j, wrapped as a field.

    The sup bound uses the declared Lipschitz bound when available,
    otherwise wavenumber * sup (valid for band-limited fields).
    """
    if not 0 <= j < f.dim:
        raise InputError(f"axis {j} out of range for dim {f.dim}")
    if f.lip_bound is not None:
        sup = f.lip_bound
    else:
        sup = f.wavenumber_bound * f.sup_bound + 1e-9

    e = np.zeros(f.dim)
    e[j] = h

    def ev(x):
        return (f.eval(x + e) - f.eval(x - e)) / (2.0 * h)

    return VectorField.from_callable(
        ev, f.dim, sup_bound=sup * (1.0 + 1e-9),
        wavenumber_bound=f.wavenumber_bound,
        name=f"d({f.name})/dx{j+1}")
