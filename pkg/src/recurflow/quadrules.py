"""Quadrature rules used across the toolkit.

All rules return plain (nodes, weights) arrays so callers can evaluate
integrands in batch.  Gauss-Legendre panels handle smooth non-periodic
directions; the periodic angular direction uses midpoint-offset trapezoid
nodes, which are spectrally accurate for smooth periodic integrands and
keep antipodal node pairs exact (so parity cancellations survive in
floating point).
"""
from __future__ import annotations

import math

import numpy as np


def gauss_legendre(n, a, b):
    """Gauss-Legendre nodes/weights on [a, b]."""
    x, w = np.polynomial.legendre.leggauss(int(n))
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w


def composite_gauss_legendre(a, b, panels, nodes_per_panel):
    """Composite Gauss-Legendre rule with `panels` equal panels on [a, b]."""
    edges = np.linspace(a, b, int(panels) + 1)
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        x, w = gauss_legendre(nodes_per_panel, lo, hi)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def circle_rule(n):
    """Midpoint trapezoid rule on the unit circle.

    Returns unit vectors (n, 2) and equal weights summing to 2*pi.
    n is rounded up to the next even integer.
    """
    n = int(n) + (int(n) % 2)
    theta = 2.0 * np.pi * (np.arange(n) + 0.5) / n
    s = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    w = np.full(n, 2.0 * np.pi / n)
    return s, w


def sphere_rule(n_polar, n_azimuth):
    """Product rule on the unit 2-sphere: GL in cos(polar) x trapezoid azimuth.

    Returns unit vectors (m, 3) and weights summing to 4*pi.
    """
    mu, wmu = gauss_legendre(n_polar, -1.0, 1.0)
    s_az, w_az = circle_rule(n_azimuth)
    sin_th = np.sqrt(np.clip(1.0 - mu ** 2, 0.0, None))
    pts = np.empty((len(mu), len(s_az), 3))
    pts[..., 0] = sin_th[:, None] * s_az[None, :, 0]
    pts[..., 1] = sin_th[:, None] * s_az[None, :, 1]
    pts[..., 2] = mu[:, None]
    w = wmu[:, None] * w_az[None, :]
    return pts.reshape(-1, 3), w.reshape(-1)


def unit_sphere_nodes(dim, n_angular):
    """Dispatch a surface rule for S^(dim-1), dim in {2, 3}."""
    if dim == 2:
        return circle_rule(n_angular)
    if dim == 3:
        n_pol = max(4, int(n_angular) // 2)
        return sphere_rule(n_pol, n_angular)
    raise ValueError(f"unsupported dimension {dim}")


def unit_ball_volume(dim):
    """Volume of the unit ball in R^dim."""
    return math.pi ** (dim / 2.0) / math.gamma(dim / 2.0 + 1.0)


def sphere_area(dim, radius=1.0):
    """Surface measure of the sphere of given radius in R^dim."""
    return dim * unit_ball_volume(dim) * radius ** (dim - 1)
