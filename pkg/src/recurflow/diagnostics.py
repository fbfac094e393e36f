"""Finite-scale drift and flux diagnostics.

The drift functional is the box average  |ell^-d * int_{x+[0,ell]^d} V|,
maximised over sampled box corners; the flux functional is the normalized
flux through axis-aligned (d-1)-boxes and through spheres/caps.  Vanishing
of these quantities as the scale grows is an asymptotic property, so the
module reports finite-scale values and leaves the verdict to the caller.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dfield

import numpy as np

from .errors import InputError
from .quadrules import (circle_rule, composite_gauss_legendre, gauss_legendre,
                        sphere_area, sphere_rule)
from .fields import partial_derivative_field


@dataclass
class DriftReport:
    """Per-scale suprema of the box-average drift functional."""

    scales: list
    sup_box_average: list
    centers_sampled: int
    seed: int
    field_name: str = ""
    extras: dict = dfield(default_factory=dict)

    def rows(self):
        return list(zip(self.scales, self.sup_box_average))

    def to_dict(self):
        return {"field": self.field_name, "scales": list(self.scales),
                "sup_box_average": list(self.sup_box_average),
                "centers_sampled": self.centers_sampled, "seed": self.seed}


def _axis_rule(f, ell, quad_n):
    """Composite GL rule along one box axis, graded by the field wavenumber."""
    k = max(f.wavenumber_bound, 0.0)
    panels = max(1, int(math.ceil(ell * max(k, 1e-12) / 5.0)))
    return composite_gauss_legendre(0.0, ell, panels, quad_n)


def mean_drift_box(f, ell, centers, quad_n=32):
    """Max over centers of |ell^-d * integral of V over x + [0, ell]^d|.

    Tensor-product composite Gauss-Legendre quadrature; quad_n nodes per
    panel, panel width ~5/wavenumber along each axis.
    """
    if ell <= 0:
        raise InputError("box side ell must be positive")
    if quad_n < 2:
        raise InputError("quad_n must be at least 2")
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if centers.shape[0] == 0:
        raise InputError("need at least one box corner")
    if centers.shape[1] != f.dim:
        raise InputError("center dimension does not match field")
    x1, w1 = _axis_rule(f, ell, quad_n)
    grids = np.meshgrid(*([x1] * f.dim), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)       # (q, d)
    wgrid = np.ones(len(nodes))
    for j in range(f.dim):
        wgrid = wgrid * np.meshgrid(*([w1] * f.dim), indexing="ij")[j].ravel()
    best = 0.0
    for c in centers:
        vals = f.eval(c[None, :] + nodes)                        # (q, d)
        avg = (wgrid[:, None] * vals).sum(axis=0) / ell ** f.dim
        best = max(best, float(np.linalg.norm(avg)))
    return best


def mean_flux_box(f, center, normal_axis, ell, quad_n=32):
    """Normalized flux |ell^-(d-1) * int_Q V.n| through an axis-aligned box.

    Q is the (d-1)-box of side ell centered at `center`, normal to
    `normal_axis` (unit coordinate normal).
    """
    if ell <= 0:
        raise InputError("box side ell must be positive")
    if not 0 <= normal_axis < f.dim:
        raise InputError(f"normal axis {normal_axis} out of range")
    center = np.asarray(center, dtype=float)
    tang = [j for j in range(f.dim) if j != normal_axis]
    x1, w1 = _axis_rule(f, ell, quad_n)
    x1 = x1 - 0.5 * ell                                          # centered
    if f.dim == 2:
        nodes = np.tile(center, (len(x1), 1))
        nodes[:, tang[0]] += x1
        w = w1
    elif f.dim == 3:
        g0, g1 = np.meshgrid(x1, x1, indexing="ij")
        nodes = np.tile(center, (g0.size, 1))
        nodes[:, tang[0]] += g0.ravel()
        nodes[:, tang[1]] += g1.ravel()
        w = np.outer(w1, w1).ravel()
    else:
        raise InputError("flux boxes support dim 2 and 3 only")
    vn = f.eval(nodes)[:, normal_axis]
    return abs(float((w * vn).sum())) / ell ** (f.dim - 1)


def mean_flux_sphere(f, center, radius, quad_n=64, cap_direction=None,
                     cap_chord=None):
    """Surface-averaged flux magnitude through a sphere or spherical cap.

    Full sphere: |int_{|y-c|=R} V.n dH| / area.  With cap_direction (unit
    vector) and cap_chord r, restricts to the cap {s : |s - dir| < r} of
    the unit sphere, scaled to radius R (normalization uses cap area).
    """
    if radius <= 0:
        raise InputError("radius must be positive")
    center = np.asarray(center, dtype=float)
    k = max(f.wavenumber_bound, 0.0)
    n_ang = max(quad_n, int(math.ceil(2.0 * k * radius + 16)))
    if cap_direction is None:
        if f.dim == 2:
            s, w = circle_rule(n_ang)
        elif f.dim == 3:
            s, w = sphere_rule(max(8, n_ang // 2), n_ang)
        else:
            raise InputError("sphere flux supports dim 2 and 3 only")
        area = sphere_area(f.dim, radius)
    else:
        s, w, area = _cap_rule(f.dim, np.asarray(cap_direction, float),
                               cap_chord, radius, n_ang)
    vals = f.eval(center[None, :] + radius * s)
    vn = np.einsum("md,md->m", vals, s)
    flux = float((w * vn).sum()) * radius ** (f.dim - 1)
    return abs(flux) / area


def _cap_rule(dim, direction, chord, radius, n_ang):
    """Quadrature on the cap {s on unit sphere : |s - dir| < chord}."""
    if chord is None or not 0 < chord <= 2:
        raise InputError("cap_chord must lie in (0, 2]")
    nrm = np.linalg.norm(direction)
    if nrm == 0:
        raise InputError("cap_direction must be a nonzero vector")
    direction = direction / nrm
    gamma = math.acos(max(-1.0, 1.0 - chord ** 2 / 2.0))   # polar half-angle
    if dim == 2:
        th0 = math.atan2(direction[1], direction[0])
        th, w = gauss_legendre(n_ang, th0 - gamma, th0 + gamma)
        s = np.stack([np.cos(th), np.sin(th)], axis=-1)
        area = 2.0 * gamma * radius
        return s, w, area
    if dim == 3:
        # polar cap around `direction`: GL in cos(theta), trapezoid azimuth
        mu, wmu = gauss_legendre(max(8, n_ang // 2), math.cos(gamma), 1.0)
        saz, waz = circle_rule(n_ang)
        sin_th = np.sqrt(np.clip(1.0 - mu ** 2, 0.0, None))
        local = np.empty((len(mu), len(saz), 3))
        local[..., 0] = sin_th[:, None] * saz[None, :, 0]
        local[..., 1] = sin_th[:, None] * saz[None, :, 1]
        local[..., 2] = mu[:, None]
        w = (wmu[:, None] * waz[None, :]).ravel()
        # rotate e3 -> direction
        rot = _rotation_to(direction)
        s = local.reshape(-1, 3) @ rot.T
        area = 2.0 * math.pi * (1.0 - math.cos(gamma)) * radius ** 2
        return s, w, area
    raise InputError("caps support dim 2 and 3 only")


def _rotation_to(direction):
    """Rotation matrix sending e3 to the given unit vector."""
    e3 = np.array([0.0, 0.0, 1.0])
    v = np.cross(e3, direction)
    c = float(e3 @ direction)
    if np.linalg.norm(v) < 1e-14:
        return np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx / (1.0 + c)


def sample_centers(dim, extent, n_lattice, n_random, seed):
    """Deterministic lattice corners plus seeded uniform corners."""
    axes = [np.linspace(-extent, extent, n_lattice) for _ in range(dim)]
    lattice = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    rng = np.random.default_rng(seed)
    random = rng.uniform(-extent, extent, size=(n_random, dim))
    return np.concatenate([lattice, random], axis=0)


def drift_sweep(f, scales, quad_n=32, n_lattice=3, n_random=8, seed=0,
                extent=None):
    """DriftReport of mean_drift_box over increasing scales.

    Box corners are a deterministic lattice over [-extent, extent]^d plus
    seeded uniform corners (extent defaults to the largest scale).
    Deterministic for a fixed seed.
    """
    scales = list(scales)
    if not scales:
        raise InputError("scales must be nonempty")
    if any(b <= a for a, b in zip(scales[:-1], scales[1:])):
        raise InputError("scales must be strictly increasing")
    sups = []
    centers_used = 0
    for ell in scales:
        ext = extent if extent is not None else ell
        centers = sample_centers(f.dim, ext, n_lattice, n_random, seed)
        centers_used = len(centers)
        sups.append(mean_drift_box(f, ell, centers, quad_n=quad_n))
    return DriftReport(scales=scales, sup_box_average=sups,
                       centers_sampled=centers_used, seed=seed,
                       field_name=f.name)


def derivative_drift(f, scales, h=1e-4, **sweep_kwargs):
    """Drift sweeps of each finite-difference partial dV/dx_j.

    Returns {j: DriftReport}.
    """
    out = {}
    for j in range(f.dim):
        dfj = partial_derivative_field(f, j, h=h)
        out[j] = drift_sweep(dfj, scales, **sweep_kwargs)
    return out
