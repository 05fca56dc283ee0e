"""Independent reference implementations shared by the unit and acceptance tests."""

import numpy as np

from tagdiff.md import resolve_collision


def brute_force_flow(x, v, eps, T, dt=1e-5):
    """Fixed-step flight with overlap detection, bisection to contact, specular reflection."""
    x, v = x.copy(), v.copy()
    n = x.shape[0]
    iu, ju = np.triu_indices(n, 1)

    def overlaps(y):
        dx = y[iu] - y[ju]
        dx -= np.round(dx)
        return np.flatnonzero(np.einsum("ij,ij->i", dx, dx) < eps * eps)

    t = 0.0
    while t < T - 1e-15:
        h = min(dt, T - t)
        hit = overlaps(x + h * v)
        if hit.size == 0:
            x += h * v
            t += h
            continue
        lo, hi = 0.0, h
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if overlaps(x + mid * v).size:
                hi = mid
            else:
                lo = mid
        x += hi * v
        t += hi
        for k in overlaps(x):
            i, j = iu[k], ju[k]
            om = x[i] - x[j]
            om -= np.round(om)
            om /= np.linalg.norm(om)
            if np.dot(v[i] - v[j], om) < 0:
                v[i], v[j] = resolve_collision(v[i], v[j], om)
    return x % 1.0, v
