"""Shared brute-force oracles importable from tests (kept free of project logic)."""

import numpy as np


def grid_radius_integral(vertices, n=1000):
    v = np.asarray(vertices, dtype=float)
    xmin, ymin = v.min(axis=0)
    xmax, ymax = v.max(axis=0)
    xs = np.linspace(xmin, xmax, n)
    ys = np.linspace(ymin, ymax, n)
    dx = (xmax - xmin) / (n - 1)
    dy = (ymax - ymin) / (n - 1)
    X, Y = np.meshgrid(xs, ys)
    inside = np.zeros(X.shape, dtype=bool)
    m = len(v)
    j = m - 1
    for i in range(m):
        xi, yi = v[i]
        xj, yj = v[j]
        cond = (yi > Y) != (yj > Y)
        slope = (xj - xi) * (Y - yi) / (yj - yi + 1e-300) + xi
        inside ^= cond & (X < slope)
        j = i
    r = np.hypot(X, Y)
    return float(np.sum(r[inside]) * dx * dy)
