"""Linear Boltzmann operator for a tagged hard sphere in a Maxwellian bath.

Two independent routes are provided:

* stochastic: the velocity-jump process with generator alpha L, sampled
  exactly by thinning a majorant Poisson clock;
* deterministic: a discrete-velocity matrix for L on a tensor grid, the
  solution b of L b = v and the diffusion coefficient kappa = (1/d) <v.b>.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import integrate, special

from .equilibrium import DensityPerturbation, eval_maxwellian, sample_maxwellian
from .geometry import unit_ball_volume, wrap_array

SYM_DEFECT_MAX = 2e-2
# post-collision values are interpolated in the symmetric form phi sqrt(M_beta)
INTERP_TILT = 0.5
SPLIT_ERROR_MAX = 1e-3


class GridTooCoarseError(ValueError):
    """The discrete operator is too far from self-adjoint to be trusted."""


class SplittingError(RuntimeError):
    """Time-step halving changed the evolved field by more than the tolerance."""


# --- jump rate -------------------------------------------------------------

def mean_speed(beta: float, dim: int) -> float:
    """E|V| for V ~ M_beta in R^dim."""
    return math.sqrt(2.0 / beta) * math.gamma((dim + 1) / 2) / math.gamma(dim / 2)


def _noncentral_mean_norm(mu: float, sigma: float, dim: int) -> float:
    """E|X| for X ~ N(mu e, sigma^2 I) by radial quadrature.

    The angular average of exp(r mu cos / sigma^2) is the modified Bessel
    profile Gamma(d/2) (2/z)^(d/2-1) I_(d/2-1)(z); ``ive`` keeps it finite.
    """
    if mu == 0.0:
        return sigma * math.sqrt(2.0) * math.gamma((dim + 1) / 2) / math.gamma(dim / 2)
    nu = dim / 2 - 1
    norm = 1.0 / (sigma**dim * 2 ** (dim / 2 - 1) * math.gamma(dim / 2))
    c = math.gamma(dim / 2)

    def density(r):
        z = r * mu / sigma**2
        ang = c * (2.0 / z) ** nu * special.ive(nu, z) if z > 0 else 1.0
        return norm * r ** (dim - 1) * math.exp(-((r - mu) ** 2) / (2 * sigma**2)) * ang

    lo = max(0.0, mu - 12 * sigma)
    hi = mu + 12 * sigma
    pts = [p for p in (mu,) if lo < p < hi]
    first, _ = integrate.quad(lambda r: r * density(r), lo, hi, points=pts,
                              epsabs=0.0, epsrel=1e-11, limit=200)
    return first


def jump_rate(v, beta: float) -> float | np.ndarray:
    """a_beta(v) = kappa_{d-1} E|v - V1|, V1 ~ M_beta (total collision rate at unit alpha)."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    v = np.asarray(v, dtype=float)
    dim = v.shape[-1]
    speeds = np.linalg.norm(v.reshape(-1, dim), axis=1)
    sigma = 1.0 / math.sqrt(beta)
    kap = unit_ball_volume(dim - 1)
    out = np.array([kap * _noncentral_mean_norm(float(s), sigma, dim) for s in speeds])
    return float(out[0]) if v.ndim == 1 else out.reshape(v.shape[:-1])


# --- jump sampling ---------------------------------------------------------

def _random_unit(rng, n: int, dim: int) -> np.ndarray:
    u = rng.normal(size=(n, dim))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def _propose_partners(v: np.ndarray, beta: float, rng) -> np.ndarray:
    """v1 from the tilted law proportional to (|v| + |v1|) M_beta(v1)."""
    n, dim = v.shape
    speed = np.linalg.norm(v, axis=1)
    ev = mean_speed(beta, dim)
    plain = rng.random(n) * (speed + ev) < speed
    v1 = sample_maxwellian(rng, n, dim, beta)
    # |v1| M(v1) has a chi(d+1) radius and a uniform direction
    r = np.sqrt(rng.chisquare(dim + 1, size=n) / beta)
    tilted = r[:, None] * _random_unit(rng, n, dim)
    return np.where(plain[:, None], v1, tilted)


def _cosine_hemisphere(u: np.ndarray, rng) -> np.ndarray:
    """nu with density proportional to (u.nu)_+ on the unit sphere."""
    n, dim = u.shape
    if dim == 2:
        s = 2.0 * rng.random(n) - 1.0
        c = np.sqrt(1.0 - s * s)
        perp = np.stack([-u[:, 1], u[:, 0]], axis=1)
        return c[:, None] * u + s[:, None] * perp
    c = np.sqrt(rng.random(n))
    w = _random_unit(rng, n, dim)
    w -= np.sum(w * u, axis=1, keepdims=True) * u
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    return c[:, None] * u + np.sqrt(1.0 - c * c)[:, None] * w


def _jump_attempt(v: np.ndarray, beta: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """One proposal of the two-stage rejection sampler per row of v.

    Returns (post-jump velocities, accepted mask); rejected rows keep v.
    """
    v1 = _propose_partners(v, beta, rng)
    g = v - v1
    gn = np.linalg.norm(g, axis=1)
    accept = rng.random(v.shape[0]) * (np.linalg.norm(v, axis=1) + np.linalg.norm(v1, axis=1)) < gn
    accept &= gn > 0
    u = g / np.where(gn > 0, gn, 1.0)[:, None]
    nu = _cosine_hemisphere(u, rng)
    vp = v - np.sum(g * nu, axis=1, keepdims=True) * nu
    return np.where(accept[:, None], vp, v), accept


def sample_jump(v, beta: float, rng: np.random.Generator) -> np.ndarray:
    """Post-collision velocity v' = v + (nu.(v1 - v)) nu with (v1, nu) ~ M_beta(v1)((v-v1).nu)_+."""
    arr = np.asarray(v, dtype=float)
    v2 = np.atleast_2d(arr)
    todo = np.arange(v2.shape[0])
    out = v2.copy()
    while todo.size:
        vp, ok = _jump_attempt(v2[todo], beta, rng)
        out[todo[ok]] = vp[ok]
        todo = todo[~ok]
    return out[0] if arr.ndim == 1 else out


def majorant_rate(v: np.ndarray, alpha: float, beta: float) -> np.ndarray:
    """alpha kappa_{d-1} (|v| + E|V1|) >= alpha a_beta(v): the thinning clock rate."""
    dim = v.shape[-1]
    return alpha * unit_ball_volume(dim - 1) * (np.linalg.norm(v, axis=-1)
                                               + mean_speed(beta, dim))


# --- jump paths ------------------------------------------------------------

PATH_SCHEMA = "tagdiff.jump_path/v1"


@dataclass(frozen=True)
class JumpPath:
    """Free flight between velocity jumps; position reconstructed exactly."""

    x0: np.ndarray
    v0: np.ndarray
    jump_times: np.ndarray
    velocities: np.ndarray
    horizon: float
    n_proposals: int = 0

    @property
    def n_jumps(self) -> int:
        return self.jump_times.shape[0]

    def breakpoints(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Times, unwrapped positions and velocities at start, jumps and horizon."""
        times = np.concatenate([[0.0], self.jump_times, [self.horizon]])
        vel = np.vstack([self.v0[None], self.velocities, self.velocities[-1:]
                         if self.n_jumps else self.v0[None]])
        steps = np.diff(times)[:, None] * vel[:-1]
        xs = self.x0 + np.vstack([np.zeros_like(self.x0)[None], np.cumsum(steps, axis=0)])
        return times, xs, vel

    def unwrapped(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        times, xs, vel = self.breakpoints()
        k = np.clip(np.searchsorted(times, t, side="right") - 1, 0, times.size - 1)
        return xs[k] + (t - times[k])[:, None] * vel[k]

    def position(self, t) -> np.ndarray:
        return wrap_array(self.unwrapped(t))

    def to_csv(self, path) -> None:
        times, xs, vel = self.breakpoints()
        d = self.x0.size
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema: {PATH_SCHEMA}\n")
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{a + 1}" for a in range(d)] + [f"v{a + 1}" for a in range(d)])
            for t, x, v in zip(times, wrap_array(xs), vel):
                w.writerow([f"{t:.17g}"] + [f"{c:.17g}" for c in x] + [f"{c:.17g}" for c in v])


def simulate_jump_path(x0, v0, alpha: float, beta: float, t_end: float,
                       rng: np.random.Generator) -> JumpPath:
    """Tagged particle in the Maxwellian bath: free flight plus jumps at rate alpha a_beta(v).

    The jump clock is realised by thinning: proposals arrive at the majorant
    rate alpha kappa_{d-1}(|v| + E|V1|) and each one is a single attempt of
    the rejection sampler, so accepted proposals form the exact clock.
    """
    if alpha < 0 or not t_end > 0:
        raise ValueError("need alpha >= 0 and t_end > 0")
    x0 = np.asarray(x0, dtype=float).copy()
    v = np.asarray(v0, dtype=float).copy()
    times, vels = [], []
    t = 0.0
    proposals = 0
    if alpha > 0:
        while True:
            lam = float(majorant_rate(v, alpha, beta))
            t += rng.exponential(1.0 / lam)
            if t >= t_end:
                break
            proposals += 1
            vp, ok = _jump_attempt(v[None], beta, rng)
            if ok[0]:
                v = vp[0]
                times.append(t)
                vels.append(v.copy())
    d = x0.size
    return JumpPath(x0, np.asarray(v0, dtype=float).copy(), np.array(times),
                    np.array(vels).reshape(-1, d), float(t_end), proposals)


@dataclass(frozen=True)
class EnsembleSamples:
    """Many independent jump paths observed at common times."""

    times: np.ndarray
    unwrapped: np.ndarray   # (n_paths, n_times, d)
    velocities: np.ndarray  # (n_paths, n_times, d)
    n_jumps: np.ndarray
    n_proposals: np.ndarray

    @property
    def positions(self) -> np.ndarray:
        return wrap_array(self.unwrapped)


def simulate_ensemble(x0: np.ndarray, v0: np.ndarray, alpha: float, beta: float,
                      sample_times, rng: np.random.Generator) -> EnsembleSamples:
    """Vectorised ``simulate_jump_path`` over rows of (x0, v0), sampled at given times."""
    x = np.array(x0, dtype=float)
    v = np.array(v0, dtype=float)
    n, d = x.shape
    s = np.asarray(sample_times, dtype=float)
    if np.any(np.diff(s) < 0) or s[0] < 0:
        raise ValueError("sample_times must be non-negative and sorted")
    m = s.size
    out_x = np.empty((n, m, d))
    out_v = np.empty((n, m, d))
    t = np.zeros(n)
    nxt = np.zeros(n, dtype=np.int64)
    jumps = np.zeros(n, dtype=np.int64)
    props = np.zeros(n, dtype=np.int64)
    active = np.arange(n)
    while active.size:
        va = v[active]
        lam = majorant_rate(va, alpha, beta) if alpha > 0 else np.zeros(active.size)
        with np.errstate(divide="ignore"):
            tn = t[active] + np.where(lam > 0, rng.exponential(1.0, active.size) / lam, np.inf)
        # record every sample instant passed before the next proposal
        while True:
            idx = nxt[active]
            pending = idx < m
            sel = pending.copy()
            sel[pending] = s[idx[pending]] <= tn[pending]
            if not sel.any():
                break
            rows = active[sel]
            k = idx[sel]
            dt = s[k] - t[rows]
            out_x[rows, k] = x[rows] + dt[:, None] * v[rows]
            out_v[rows, k] = v[rows]
            nxt[rows] += 1
        done = nxt[active] >= m
        live = active[~done]
        if not live.size:
            break
        tl = tn[~done]
        x[live] += (tl - t[live])[:, None] * v[live]
        t[live] = tl
        vp, ok = _jump_attempt(v[live], beta, rng)
        v[live] = vp
        props[live] += 1
        jumps[live] += ok
        active = live
    return EnsembleSamples(s, out_x, out_v, jumps, props)


# --- velocity grid and the operator matrix ---------------------------------

def _hemisphere_rule(dim: int, n_polar: int, n_azimuth: int):
    """Nodes (cos, sin-components) and weights for f(nu)(u.nu)_+ over the sphere.

    Returns cos(theta) (Q,), the transverse coordinates (Q, d-1) and weights
    (Q,) including the (u.nu) factor; the weights sum to kappa_{d-1}.
    """
    if dim == 2:
        x, w = np.polynomial.legendre.leggauss(n_polar)
        theta = 0.5 * np.pi * x
        wt = 0.5 * np.pi * w * np.cos(theta)
        return np.cos(theta), np.sin(theta)[:, None], wt
    x, w = np.polynomial.legendre.leggauss(n_polar)
    mu = 0.5 * (x + 1.0)
    wmu = 0.5 * w * mu
    phi = 2 * np.pi * (np.arange(n_azimuth) + 0.5) / n_azimuth
    c = np.repeat(mu, n_azimuth)
    sn = np.sqrt(1.0 - c * c)
    trans = np.stack([sn * np.tile(np.cos(phi), n_polar), sn * np.tile(np.sin(phi), n_polar)],
                     axis=1)
    wt = np.repeat(wmu, n_azimuth) * (2 * np.pi / n_azimuth)
    return c, trans, wt


@dataclass(frozen=True)
class VelocityGrid:
    """Tensor grid on [-V_max, V_max]^d with Maxwellian quadrature weights."""

    n: int
    dim: int = 2
    beta: float = 1.0
    v_max: float | None = None
    n_polar: int = 16
    n_azimuth: int = 12
    axis: np.ndarray = field(init=False, repr=False)
    nodes: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)
    raw_mass: float = field(init=False)

    def __post_init__(self):
        if self.dim not in (2, 3) or self.n < 3:
            raise ValueError("need dim in {2, 3} and n >= 3")
        vmax = 6.0 / math.sqrt(self.beta) if self.v_max is None else float(self.v_max)
        object.__setattr__(self, "v_max", vmax)
        raw = np.linspace(-vmax, vmax, self.n)
        axis = 0.5 * (raw - raw[::-1])     # exactly odd, so v -> -v maps nodes to nodes
        mesh = np.meshgrid(*([axis] * self.dim), indexing="ij")
        nodes = np.stack([m.ravel() for m in mesh], axis=1)
        h = axis[1] - axis[0]
        w = eval_maxwellian(nodes, self.beta) * h**self.dim
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "raw_mass", float(w.sum()))
        object.__setattr__(self, "weights", w / w.sum())

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    @property
    def spacing(self) -> float:
        return float(self.axis[1] - self.axis[0])

    def maxwellian(self) -> np.ndarray:
        return eval_maxwellian(self.nodes, self.beta)

    def mean(self, f: np.ndarray) -> np.ndarray:
        """Integral of f against M_beta (first axis of f indexes nodes)."""
        return np.tensordot(self.weights, f, axes=(0, 0))

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        return float(np.sum(self.weights * f * g))

    def reflect_index(self) -> np.ndarray:
        """Index permutation of v -> -v."""
        return np.arange(self.size)[::-1]


@njit(cache=True)
def _assemble_gain(nodes, weights, v_max, h, n, cth, trans, wq, beta, tilt):
    m, d = nodes.shape
    q = cth.shape[0]
    gain = np.zeros((m, m))
    loss = np.zeros(m)
    u = np.empty(d)
    e1 = np.empty(d)
    e2 = np.empty(d)
    nu = np.empty(d)
    vp = np.empty(d)
    base = np.empty(d, dtype=np.int64)
    frac = np.empty(d)
    for i in range(m):
        for j in range(m):
            gn = 0.0
            for a in range(d):
                u[a] = nodes[i, a] - nodes[j, a]
                gn += u[a] * u[a]
            if gn == 0.0:
                continue
            gn = math.sqrt(gn)
            for a in range(d):
                u[a] /= gn
            if d == 2:
                e1[0] = -u[1]
                e1[1] = u[0]
            else:
                # orthonormal frame around u
                if abs(u[0]) < 0.9:
                    e1[0], e1[1], e1[2] = 0.0, -u[2], u[1]
                else:
                    e1[0], e1[1], e1[2] = u[2], 0.0, -u[0]
                s = math.sqrt(e1[0] ** 2 + e1[1] ** 2 + e1[2] ** 2)
                for a in range(3):
                    e1[a] /= s
                e2[0] = u[1] * e1[2] - u[2] * e1[1]
                e2[1] = u[2] * e1[0] - u[0] * e1[2]
                e2[2] = u[0] * e1[1] - u[1] * e1[0]
            base_w = weights[j] * gn
            for k in range(q):
                for a in range(d):
                    nu[a] = cth[k] * u[a] + trans[k, 0] * e1[a]
                    if d == 3:
                        nu[a] += trans[k, 1] * e2[a]
                wk = base_w * wq[k]
                loss[i] += wk
                # v' = v - (g.nu) nu with g.nu = |g| cos(theta)
                for a in range(d):
                    vp[a] = nodes[i, a] - gn * cth[k] * nu[a]
                    s = (vp[a] + v_max) / h
                    if s < 0.0:
                        s = 0.0
                    if s > n - 1:
                        s = n - 1.0
                    b = int(math.floor(s))
                    if b > n - 2:
                        b = n - 2
                    base[a] = b
                    frac[a] = s - b
                # tilt relative to the clamped point so far-out v' are not amplified
                e_vp = 0.0
                for a in range(d):
                    y = base[a] + frac[a]
                    e_vp += (y * h - v_max) ** 2
                for corner in range(2 ** d):
                    wc = wk
                    idx = 0
                    e_c = 0.0
                    for a in range(d):
                        bit = (corner >> (d - 1 - a)) & 1
                        wc *= frac[a] if bit else 1.0 - frac[a]
                        idx = idx * n + base[a] + bit
                    for a in range(d):
                        e_c += nodes[idx, a] * nodes[idx, a]
                    gain[i, idx] += wc * math.exp(-0.5 * beta * tilt * (e_c - e_vp))
    return gain, loss


@dataclass(frozen=True)
class OperatorMatrix:
    """L = diag(loss) - K_sym, self-adjoint in the M_beta-weighted inner product."""

    grid: VelocityGrid
    matrix: np.ndarray
    loss: np.ndarray
    quadrature_rate: np.ndarray
    sym_defect: float

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.matrix @ f

    def symmetric_form(self) -> np.ndarray:
        """W^(1/2) L W^(-1/2), a symmetric matrix with the same spectrum."""
        s = np.sqrt(self.grid.weights)
        a = s[:, None] * self.matrix / s[None, :]
        return 0.5 * (a + a.T)

    def eigh(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigenvalues and W-orthonormal eigenvectors (columns) of L."""
        lam, u = np.linalg.eigh(self.symmetric_form())
        return lam, u / np.sqrt(self.grid.weights)[:, None]

    def spectral_gap(self) -> float:
        lam = np.linalg.eigvalsh(self.symmetric_form())
        return float(lam[1])


def self_adjoint_defect(grid: VelocityGrid, op: np.ndarray, degree: int = 3) -> float:
    """max |<K f, g>_M - <f, K g>_M| / (||K f|| ||g||) over monomials f, g of degree <= 3."""
    v = grid.nodes
    w = grid.weights
    exps = [e for e in np.ndindex(*([degree + 1] * grid.dim)) if sum(e) <= degree]
    P = np.stack([np.prod(v ** np.array(e), axis=1) for e in exps], axis=1)
    KP = op @ P
    A = P.T @ (w[:, None] * KP)
    nk = np.sqrt(np.einsum("ij,i,ij->j", KP, w, KP))
    npp = np.sqrt(np.einsum("ij,i,ij->j", P, w, P))
    return float(np.max(np.abs(A - A.T) / np.outer(npp, nk)))


def assemble_L(grid: VelocityGrid, beta: float | None = None) -> OperatorMatrix:
    """Discrete-velocity linear Boltzmann operator on ``grid``.

    The gain operator integrates over partner nodes (Maxwellian weights) and
    a Gauss rule on the hemisphere facing v - v1.  Post-collision values
    phi(v') are interpolated multilinearly in the symmetric variable
    phi sqrt(M_beta), clamped at the box.  K is then averaged with its
    weighted adjoint and the loss diagonal is set to the row sums of the
    symmetrised K, so constants are exactly in the kernel.
    ``quadrature_rate`` keeps kappa_{d-1} sum_j w_j |v_i - v_j| for comparison
    with ``jump_rate``; ``sym_defect`` is measured before averaging.
    """
    if beta is not None and beta != grid.beta:
        raise ValueError("grid was built for a different beta")
    cth, trans, wq = _hemisphere_rule(grid.dim, grid.n_polar, grid.n_azimuth)
    gain, qrate = _assemble_gain(grid.nodes, grid.weights, grid.v_max, grid.spacing,
                                 grid.n, cth, trans, wq, grid.beta, INTERP_TILT)
    w = grid.weights
    defect = self_adjoint_defect(grid, gain)
    if defect > SYM_DEFECT_MAX:
        raise GridTooCoarseError(f"symmetrisation defect {defect:.3g} > {SYM_DEFECT_MAX}")
    ksym = 0.5 * (gain + gain.T * w[None, :] / w[:, None])
    loss = ksym.sum(axis=1)
    mat = np.diag(loss) - ksym
    return OperatorMatrix(grid, mat, loss, qrate, defect)


# --- solves ----------------------------------------------------------------

@dataclass(frozen=True)
class CGResult:
    x: np.ndarray
    residual: float
    iterations: int
    converged: bool


def weighted_cg(apply, rhs: np.ndarray, weights: np.ndarray, tol: float = 1e-10,
                max_iter: int = 5000) -> CGResult:
    """Conjugate gradients for a W-self-adjoint positive operator on mean-zero functions.

    The right-hand side and every iterate are projected onto {f : <f, 1>_W = 0};
    ``residual`` is ||rhs - A x||_W / ||rhs||_W.
    """
    def proj(f):
        return f - np.dot(weights, f)

    def dot(f, g):
        return float(np.dot(weights, f * g))

    b = proj(rhs)
    bn = math.sqrt(dot(b, b))
    x = np.zeros_like(b)
    if bn == 0.0:
        return CGResult(x, 0.0, 0, True)
    r = b.copy()
    p = r.copy()
    rr = dot(r, r)
    it = 0
    for it in range(1, max_iter + 1):
        ap = proj(apply(p))
        step = rr / dot(p, ap)
        x += step * p
        r -= step * ap
        rr_new = dot(r, r)
        if math.sqrt(rr_new) <= tol * bn:
            rr = rr_new
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    x = proj(x)
    res = b - proj(apply(x))
    resn = math.sqrt(dot(res, res)) / bn
    return CGResult(x, resn, it, resn <= 10 * tol)


class SolverStagnation(RuntimeError):
    def __init__(self, what: str, residual: float):
        super().__init__(f"CG for {what} stagnated at relative residual {residual:.3g}")
        self.residual = residual


def solve_vector_b(grid: VelocityGrid, L: OperatorMatrix, tol: float = 1e-11) -> np.ndarray:
    """b with L b_k = v_k and <b_k>_M = 0; shape (n_nodes, d)."""
    out = np.empty((grid.size, grid.dim))
    for k in range(grid.dim):
        res = weighted_cg(L.apply, grid.nodes[:, k], grid.weights, tol=tol)
        if not res.converged:
            raise SolverStagnation(f"b_{k + 1}", res.residual)
        out[:, k] = res.x
    return out


def kappa_from_b(grid: VelocityGrid, b: np.ndarray) -> float:
    """kappa = (1/d) sum_k <v_k b_k>_M."""
    return float(np.sum(grid.weights[:, None] * grid.nodes * b) / grid.dim)


def radial_fit_residual(grid: VelocityGrid, b: np.ndarray, degree: int = 10) -> float:
    """Relative weighted residual of the best fit b(v) ~ gamma(|v|) v, gamma a polynomial in |v|^2."""
    r2 = np.sum(grid.nodes**2, axis=1)
    scale = grid.v_max**2
    basis = np.stack([(r2 / scale) ** p for p in range(degree + 1)], axis=1)
    # least squares over all components: b_k = sum_p c_p basis_p v_k
    design = np.concatenate([basis * grid.nodes[:, [k]] for k in range(grid.dim)], axis=0)
    target = b.T.ravel()
    wts = np.tile(np.sqrt(grid.weights), grid.dim)
    coef, *_ = np.linalg.lstsq(design * wts[:, None], target * wts, rcond=None)
    resid = (design @ coef - target) * wts
    return float(np.linalg.norm(resid) / np.linalg.norm(target * wts))


@dataclass(frozen=True)
class KappaDeterministic:
    kappa: float
    grid_n: int
    v_max: float
    beta: float
    dim: int
    sym_defect: float
    residual_mean: float


def kappa_on_grid(n: int, beta: float = 1.0, dim: int = 2, **grid_kw) -> KappaDeterministic:
    grid = VelocityGrid(n, dim, beta, **grid_kw)
    L = assemble_L(grid)
    b = solve_vector_b(grid, L)
    return KappaDeterministic(kappa_from_b(grid, b), n, grid.v_max, beta, dim,
                              L.sym_defect, float(np.abs(grid.mean(b)).max()))


def richardson_kappa(beta: float = 1.0, dim: int = 2, sizes=(15, 20, 25)) -> tuple[float, list]:
    """Extrapolate kappa(h) = kappa* + c2 h^2 + c4 h^4 through three grid sizes."""
    runs = [kappa_on_grid(n, beta, dim) for n in sizes]
    h = np.array([2 * r.v_max / (r.grid_n - 1) for r in runs])
    k = np.array([r.kappa for r in runs])
    design = np.stack([np.ones_like(h), h**2, h**4], axis=1)
    coef = np.linalg.solve(design, k)
    return float(coef[0]), runs


# Richardson extrapolation over n in {15, 20, 25}, V_max = 6, d = 2, beta = 1;
# regenerate with scripts/freeze_kappa.py.  kappa_beta = KAPPA_REF_D2 / sqrt(beta).
KAPPA_REF_D2 = 0.2893776681762647


def kappa_reference(beta: float = 1.0, dim: int = 2) -> float:
    if dim == 2 and math.isfinite(KAPPA_REF_D2):
        return KAPPA_REF_D2 / math.sqrt(beta)
    return richardson_kappa(beta, dim)[0]


# --- Green-Kubo / Einstein route -------------------------------------------

@dataclass(frozen=True)
class GreenKuboResult:
    kappa_msd: float
    msd_error: float
    kappa_vacf: float
    vacf_error: float
    r_squared: float
    fit_window: tuple
    consistent: bool

    @property
    def estimate(self) -> float:
        return self.kappa_msd

    @property
    def std_error(self) -> float:
        return self.msd_error


def kappa_green_kubo(beta: float, n_paths: int, t_max: float, rng: np.random.Generator,
                     dim: int = 2, n_lags: int = 400, n_batches: int = 20) -> GreenKuboResult:
    """kappa from the unwrapped mean squared displacement and from the VACF integral.

    Paths start stationary (v ~ M_beta) at unit alpha.  The MSD slope is fitted
    on [10 / a_beta(0), t_max]; both estimates carry batch-means errors.
    """
    from .stats import msd_with_batch_errors
    t_fit = 10.0 / jump_rate(np.zeros(dim), beta)
    if t_max <= t_fit:
        raise ValueError(f"t_max must exceed the relaxation window {t_fit:.3g}")
    times = np.linspace(0.0, t_max, n_lags + 1)
    x0 = np.zeros((n_paths, dim))
    v0 = sample_maxwellian(rng, n_paths, dim, beta)
    ens = simulate_ensemble(x0, v0, 1.0, beta, times, rng)
    msd = msd_with_batch_errors(ens.unwrapped, times, n_batches=n_batches, fit_from=t_fit)
    k_msd = msd.slope / (2 * dim)
    k_msd_err = msd.slope_error / (2 * dim)
    # the VACF has decayed to e^-10 of its start by t_fit; the tail adds only noise
    cut = times <= t_fit
    corr = np.einsum("pd,ptd->pt", v0, ens.velocities[:, cut])
    batches = np.array_split(corr, n_batches)
    ints = np.array([np.trapezoid(b.mean(axis=0), times[cut]) / dim for b in batches])
    k_vacf = float(ints.mean())
    k_vacf_err = float(ints.std(ddof=1) / math.sqrt(n_batches))
    consistent = abs(k_msd - k_vacf) <= 3 * math.hypot(k_msd_err, k_vacf_err)
    return GreenKuboResult(k_msd, k_msd_err, k_vacf, k_vacf_err, msd.r_squared,
                           (float(t_fit), float(t_max)), bool(consistent))


# --- space-velocity evolution ----------------------------------------------

@dataclass(frozen=True)
class PhiField:
    """phi(tau, x, v) on sample points x (n_x, d) and grid nodes v, at several tau."""

    taus: np.ndarray
    x: np.ndarray
    values: np.ndarray       # (n_tau, n_x, n_nodes)
    alpha: float
    dt: float
    split_error: float
    grid: VelocityGrid = field(repr=False)

    def mass(self) -> np.ndarray:
        """Integral over x (sample points taken uniform) and v against M_beta."""
        return self.values.mean(axis=1) @ self.grid.weights


def _as_modes(rho0, dim: int) -> list:
    """(wave-vector, complex amplitude) pairs with rho0 = Re sum A_k e^{2 pi i k.x}."""
    if isinstance(rho0, DensityPerturbation):
        return [(np.zeros(dim, dtype=int), 1.0 + 0j)] + [
            (np.asarray(k), complex(a)) for k, a in rho0.modes]
    return rho0.complex_modes()


def _strang_operator(L: OperatorMatrix, evals, evecs, kvec, alpha, dt):
    grid = L.grid
    drift = 2 * np.pi * alpha * (grid.nodes @ kvec)
    half = np.exp(-0.5j * dt * drift)
    w = grid.weights
    coll = (evecs * np.exp(-alpha**2 * dt * evals)[None, :]) @ (evecs.T * w[None, :])
    return half[:, None] * coll * half[None, :]


def _evolve_modes(L, evals, evecs, modes, alpha, taus, dt):
    n_steps = np.rint(np.asarray(taus) / dt).astype(np.int64)
    if np.any(np.abs(n_steps * dt - taus) > 1e-9 * np.maximum(1.0, taus)):
        raise ValueError("every tau must be a multiple of dt")
    out = []
    for kvec, amp in modes:
        if not np.any(kvec):
            # the spatial mean only sees the collision step, which fixes constants
            out.append(np.tile(np.full(L.grid.size, amp), (len(taus), 1)))
            continue
        step = _strang_operator(L, evals, evecs, kvec.astype(float), alpha, dt)
        cur = np.full(L.grid.size, amp, dtype=complex)
        done = 0
        snaps = []
        for ns in n_steps:
            if ns > done:
                cur = np.linalg.matrix_power(step, int(ns - done)) @ cur
                done = ns
            snaps.append(cur.copy())
        out.append(np.array(snaps))
    return out


def _synthesise(modes, coeffs, x):
    vals = 0.0
    for (kvec, _), c in zip(modes, coeffs):
        phase = np.exp(2j * np.pi * (x @ kvec))
        vals = vals + np.real(c[:, None, :] * phase[None, :, None])
    return vals


def evolve_phi(grid: VelocityGrid, rho0, alpha: float, tau_end: float, dt: float,
               L: OperatorMatrix | None = None, taus=None, x=None,
               check_split: bool = True) -> PhiField:
    """Solve d_tau phi + alpha v.grad phi + alpha^2 L phi = 0 from phi(0) = rho0(x).

    Each Fourier mode is advanced by Strang splitting: exact transport
    half-steps exp(-2 pi i alpha k.v dt/2) around the exact collision step
    exp(-alpha^2 dt L) from the eigendecomposition of L.  The same run with
    dt/2 bounds the splitting error; the finer result is returned.
    """
    if L is None:
        L = assemble_L(grid)
    amax = float(np.max(L.loss))
    if dt * alpha**2 * amax > 10:
        raise ValueError(f"dt alpha^2 max a = {dt * alpha**2 * amax:.3g} exceeds 10")
    taus = np.array([tau_end] if taus is None else sorted(taus), dtype=float)
    if x is None:
        x = np.zeros((64, grid.dim))
        x[:, 0] = np.arange(64) / 64
    modes = _as_modes(rho0, grid.dim)
    evals, evecs = L.eigh()
    fine = _synthesise(modes, _evolve_modes(L, evals, evecs, modes, alpha, taus, dt / 2), x)
    err = 0.0
    if check_split:
        coarse = _synthesise(modes, _evolve_modes(L, evals, evecs, modes, alpha, taus, dt), x)
        err = float(np.max(np.abs(fine - coarse)))
        if err > SPLIT_ERROR_MAX:
            raise SplittingError(f"dt vs dt/2 difference {err:.3g} > {SPLIT_ERROR_MAX}")
    return PhiField(taus, x, fine, float(alpha), dt / 2, err, grid)


def semigroup_apply(L: OperatorMatrix, f: np.ndarray, t: float) -> np.ndarray:
    """exp(-t L) f through the eigendecomposition."""
    lam, u = L.eigh()
    return u @ (np.exp(-t * lam) * (u.T @ (L.grid.weights * f)))
