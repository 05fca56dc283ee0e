"""Torus geometry on the unit torus T^d, d in {2, 3}.

The jitted kernels (``_wrap``, ``_min_image``, ``_contact_time``) are shared
with the event-driven engine; the public wrappers validate their input.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


class OverlapError(ValueError):
    """Two spheres are closer than their diameter (outside the phase space)."""


@njit(cache=True)
def _wrap(x):
    out = np.empty_like(x)
    for a in range(x.shape[0]):
        y = x[a] - math.floor(x[a])
        # x slightly below an integer can round up to exactly 1.0
        if y >= 1.0:
            y -= 1.0
        out[a] = y
    return out


@njit(cache=True)
def _min_image(dx):
    out = np.empty_like(dx)
    for a in range(dx.shape[0]):
        out[a] = dx[a] - math.ceil(dx[a] - 0.5)
    return out


@njit(cache=True)
def _image_root(dx, dv, eps2):
    """Smallest t >= 0 with |dx + t dv| = eps for an approaching pair, else inf.

    A pair that already overlaps slightly while approaching returns 0.
    """
    b = 0.0
    a = 0.0
    r2 = 0.0
    for c in range(dx.shape[0]):
        b += dx[c] * dv[c]
        a += dv[c] * dv[c]
        r2 += dx[c] * dx[c]
    if b >= 0.0 or a == 0.0:
        return np.inf
    cc = r2 - eps2
    disc = b * b - a * cc
    if disc < 0.0:
        return np.inf
    if cc <= 0.0:
        return 0.0
    # cancellation-free form of (-b - sqrt(disc)) / a
    return cc / (-b + math.sqrt(disc))


@njit(cache=True)
def _contact_time(dx, dv, eps, t_max):
    """Earliest contact over periodic images within (0, t_max]; inf if none."""
    d = dx.shape[0]
    vmax = 0.0
    for c in range(d):
        vmax = max(vmax, abs(dv[c]))
    if vmax == 0.0:
        return np.inf
    reach = int(math.ceil(t_max * vmax)) + 1
    width = 2 * reach + 1
    total = width ** d
    eps2 = eps * eps
    best = np.inf
    y = np.empty(d)
    for code in range(total):
        rem = code
        for c in range(d):
            k = rem % width - reach
            rem //= width
            y[c] = dx[c] - k
        t = _image_root(y, dv, eps2)
        if t < best:
            best = t
    if best > t_max:
        return np.inf
    return best


def _as_vector(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float).reshape(-1)
    if arr.size not in (2, 3):
        raise ValueError(f"{name} must have 2 or 3 components, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite components: {arr}")
    return arr


def wrap(raw) -> np.ndarray:
    """Reduce a point modulo 1 into [0, 1)^d."""
    return _wrap(_as_vector(raw, "point"))


def wrap_array(x: np.ndarray) -> np.ndarray:
    """Vectorised ``wrap`` over the last axis of an array of points."""
    y = x - np.floor(x)
    y[y >= 1.0] -= 1.0
    return y


def min_image(x, y) -> np.ndarray:
    """Shortest representative of x - y; exact half-period ties give +1/2."""
    return _min_image(_as_vector(x, "x") - _as_vector(y, "y"))


def min_image_array(dx: np.ndarray) -> np.ndarray:
    """Vectorised minimum image of raw differences."""
    return dx - np.ceil(dx - 0.5)


def torus_distance(x, y) -> float:
    return float(np.linalg.norm(min_image(x, y)))


def contact_time(dx, dv, eps: float, t_max: float) -> float | None:
    """First time in (0, t_max] at which two spheres of diameter ``eps`` touch.

    ``dx`` is the (minimum-image) separation x_i - x_j and ``dv`` the relative
    velocity v_i - v_j.  All periodic images with |k|_inf <= ceil(t_max |dv|_inf) + 1
    are searched.  Returns ``None`` when no contact occurs.
    """
    dx = _as_vector(dx, "dx")
    dv = _as_vector(dv, "dv")
    if dx.size != dv.size:
        raise ValueError("dx and dv have different dimensions")
    if not eps > 0 or not t_max > 0:
        raise ValueError("eps and t_max must be positive")
    if np.linalg.norm(_min_image(dx)) <= eps:
        raise OverlapError(f"separation {dx} is within eps={eps}")
    t = _contact_time(dx, dv, float(eps), float(t_max))
    return None if math.isinf(t) else float(t)


def unit_ball_volume(d: int) -> float:
    """Volume kappa_d of the unit ball in R^d (kappa_1 = 2)."""
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)
