"""Gibbs equilibrium of N hard spheres on the torus and its tagged perturbation.

Positions are drawn by sequential insertion (uniform proposal, redraw on
overlap).  In the dilute regime N kappa_d eps^d < 0.2 the insertion bias is
below what the desk-scale statistics can resolve; for N = 2 it is exact.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import min_image_array, unit_ball_volume

PACKING_CAP = 0.2
MAX_REJECTIONS = 10**6


class PackingError(RuntimeError):
    """Sequential insertion could not place a particle."""


@dataclass(frozen=True)
class GasConfig:
    N: int
    eps: float
    beta: float = 1.0
    dim: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.N < 2:
            raise ValueError(f"N must be >= 2, got {self.N}")
        if not 0 < self.eps < 0.25:
            raise ValueError(f"eps must lie in (0, 1/4), got {self.eps}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.packing >= PACKING_CAP:
            raise ValueError(
                f"packing N kappa_d eps^d = {self.packing:.3g} exceeds {PACKING_CAP}"
            )
        if self.alpha * self.eps >= 0.1:
            warnings.warn(
                f"alpha*eps = {self.alpha * self.eps:.3g} is not small; "
                "outside the dilute regime",
                stacklevel=3,
            )

    @property
    def alpha(self) -> float:
        """Boltzmann-Grad collision parameter N eps^(d-1)."""
        return self.N * self.eps ** (self.dim - 1)

    @property
    def packing(self) -> float:
        return self.N * unit_ball_volume(self.dim) * self.eps**self.dim

    @classmethod
    def from_alpha(cls, N: int, alpha: float, **kw) -> "GasConfig":
        dim = kw.get("dim", 2)
        return cls(N=N, eps=(alpha / N) ** (1.0 / (dim - 1)), **kw)


@dataclass(frozen=True)
class DensityPerturbation:
    """rho0(x) = 1 + sum_k a_k cos(2 pi k.x) with nonzero integer wave-vectors."""

    modes: tuple = ()
    dim: int = 2
    _grid_check: int = field(default=64, repr=False)

    def __post_init__(self):
        clean = []
        for k, a in self.modes:
            k = tuple(int(c) for c in k)
            if len(k) != self.dim:
                raise ValueError(f"wave-vector {k} has wrong dimension")
            if not any(k):
                raise ValueError("the constant mode is fixed to 1; use nonzero k")
            clean.append((k, float(a)))
        object.__setattr__(self, "modes", tuple(clean))
        if self.min_on_grid(self._grid_check) < 0:
            raise ValueError(f"rho0 takes negative values for modes {self.modes}")

    @classmethod
    def uniform(cls, dim: int = 2) -> "DensityPerturbation":
        return cls((), dim)

    @classmethod
    def cosine(cls, amplitude: float, k: int = 1, dim: int = 2) -> "DensityPerturbation":
        """Single mode along the first coordinate."""
        kv = (k,) + (0,) * (dim - 1)
        return cls(((kv, amplitude),), dim)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.ones(x.shape[0])
        for k, a in self.modes:
            out += a * np.cos(2 * np.pi * (x @ np.asarray(k, dtype=float)))
        return out

    def min_on_grid(self, n: int = 64) -> float:
        if not self.modes:
            return 1.0
        axes = [np.arange(n) / n] * self.dim
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
        return float(self(pts).min())

    @property
    def sup_bound(self) -> float:
        return 1.0 + sum(abs(a) for _, a in self.modes)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n points from rho0 by rejection against 1 + sum |a_k|."""
        out = np.empty((n, self.dim))
        filled = 0
        bound = self.sup_bound
        while filled < n:
            m = max(16, int(1.2 * (n - filled) * bound))
            x = rng.random((m, self.dim))
            keep = x[rng.random(m) * bound < self(x)]
            take = min(len(keep), n - filled)
            out[filled:filled + take] = keep[:take]
            filled += take
        return out


@dataclass(frozen=True)
class ParticleSystem:
    """Positions in [0,1)^d and velocities; particle 0 is the tagged one."""

    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        x = np.array(self.positions, dtype=float)
        v = np.array(self.velocities, dtype=float)
        if x.shape != v.shape or x.ndim != 2:
            raise ValueError("positions and velocities must both have shape (N, d)")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise ValueError("non-finite entries in particle system")
        x.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "velocities", v)

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def kinetic_energy(self) -> float:
        return 0.5 * float(np.sum(self.velocities**2))

    def min_distance(self) -> float:
        return float(np.sqrt(_min_pair_dist2(self.positions)))

    def to_csv(self, path) -> None:
        write_system_csv(self, path)


def _min_pair_dist2(x: np.ndarray) -> float:
    n = x.shape[0]
    best = np.inf
    for i in range(n - 1):
        dx = min_image_array(x[i + 1:] - x[i])
        best = min(best, float(np.min(np.einsum("ij,ij->i", dx, dx))))
    return best


def eval_maxwellian(v, beta: float) -> np.ndarray | float:
    """M_beta(v) = (beta / 2 pi)^(d/2) exp(-beta |v|^2 / 2), over the last axis."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    v = np.asarray(v, dtype=float)
    d = v.shape[-1]
    out = (beta / (2 * np.pi)) ** (d / 2) * np.exp(-0.5 * beta * np.sum(v * v, axis=-1))
    return float(out) if np.ndim(out) == 0 else out


def sample_maxwellian(rng: np.random.Generator, n: int, dim: int, beta: float) -> np.ndarray:
    return rng.normal(scale=1.0 / math.sqrt(beta), size=(n, dim))


def _insert(rng, accepted: np.ndarray, count: int, eps2: float, dim: int) -> np.ndarray:
    for _ in range(MAX_REJECTIONS):
        x = rng.random(dim)
        if count == 0:
            return x
        dx = min_image_array(accepted[:count] - x)
        if np.min(np.einsum("ij,ij->i", dx, dx)) > eps2:
            return x
    raise PackingError(f"{MAX_REJECTIONS} rejected insertions for particle {count}")


def _fill_positions(config: GasConfig, rng, first: np.ndarray | None) -> np.ndarray:
    x = np.empty((config.N, config.dim))
    start = 0
    if first is not None:
        x[0] = first
        start = 1
    eps2 = config.eps**2
    for i in range(start, config.N):
        x[i] = _insert(rng, x, i, eps2, config.dim)
    return x


def sample_gibbs(config: GasConfig, rng: np.random.Generator) -> ParticleSystem:
    """One draw from the hard-core Gibbs measure (sequential insertion)."""
    x = _fill_positions(config, rng, None)
    v = sample_maxwellian(rng, config.N, config.dim, config.beta)
    return ParticleSystem(x, v)


def sample_perturbed(
    config: GasConfig, rho0: DensityPerturbation, rng: np.random.Generator
) -> ParticleSystem:
    """Gibbs background with the tagged position drawn from rho0."""
    if rho0.dim != config.dim:
        raise ValueError("rho0 dimension does not match the gas")
    x1 = rho0.sample(rng, 1)[0]
    x = _fill_positions(config, rng, x1)
    v = sample_maxwellian(rng, config.N, config.dim, config.beta)
    return ParticleSystem(x, v)


@dataclass(frozen=True)
class PartitionRatio:
    estimate: float
    std_error: float
    z_n: float
    z_n_minus_s: float
    n_samples: int
    low_precision: bool


def partition_ratio_bounds(config: GasConfig, s: int) -> tuple[float, float]:
    """Two-sided bound 1 <= Z_N^-1 Z_{N-s} <= (1 - eps alpha kappa_d)^-s."""
    c = config.eps * config.alpha * unit_ball_volume(config.dim)
    return 1.0, (1.0 - c) ** (-s)


def _separated_prefixes(x: np.ndarray, eps2: float, m: int) -> tuple[np.ndarray, np.ndarray]:
    """For each sample (first axis), whether the first m and all points are separated."""
    n_samp, N, _ = x.shape
    ok_all = np.ones(n_samp, dtype=bool)
    ok_m = np.ones(n_samp, dtype=bool)
    for i in range(N - 1):
        dx = min_image_array(x[:, i + 1:, :] - x[:, i:i + 1, :])
        close = np.einsum("sjk,sjk->sj", dx, dx) <= eps2
        ok_all &= ~close.any(axis=1)
        if i < m - 1:
            ok_m &= ~close[:, : m - i - 1].any(axis=1)
    return ok_all, ok_m


def estimate_partition_ratio(
    config: GasConfig, s: int, n_samples: int, rng: np.random.Generator, chunk: int = 20000
) -> PartitionRatio:
    """Monte Carlo Z_{N-s} / Z_N from one stream of uniform configurations.

    Z_N is the probability that N uniform points are pairwise separated by
    more than eps; Z_{N-s} uses the first N - s points of the same draw.
    The standard error comes from the delta method on the joint indicator.
    """
    if not 0 <= s < config.N:
        raise ValueError(f"need 0 <= s < N, got s={s}")
    if config.N > 64:
        raise ValueError("partition ratio estimation is limited to N <= 64")
    if s == 0:
        return PartitionRatio(1.0, 0.0, math.nan, math.nan, n_samples, False)
    eps2 = config.eps**2
    sum_a = sum_b = 0
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        x = rng.random((m, config.N, config.dim))
        ok_all, ok_m = _separated_prefixes(x, eps2, config.N - s)
        sum_a += int(ok_all.sum())
        sum_b += int(ok_m.sum())
        done += m
    n = n_samples
    pa, pb = sum_a / n, sum_b / n
    if pa == 0:
        return PartitionRatio(math.inf, math.inf, pa, pb, n, True)
    ratio = pb / pa
    # ok_all implies ok_m, so E[ab] = pa
    var_a, var_b, cov = pa * (1 - pa), pb * (1 - pb), pa * (1 - pb)
    var = (var_b / pa**2 + pb**2 * var_a / pa**4 - 2 * pb * cov / pa**3) / n
    se = math.sqrt(max(var, 0.0))
    return PartitionRatio(ratio, se, pa, pb, n, low_precision=se > 5e-4 * ratio)


def _pair_distance_samples(systems) -> np.ndarray:
    out = []
    for sysm in systems:
        x = sysm.positions
        iu, ju = np.triu_indices(x.shape[0], 1)
        dx = min_image_array(x[iu] - x[ju])
        out.append(np.sqrt(np.einsum("ij,ij->i", dx, dx)))
    return np.concatenate(out)


def _pair_velocity_samples(systems) -> tuple[np.ndarray, np.ndarray]:
    a, b = [], []
    for sysm in systems:
        v = sysm.velocities[:, 0]
        iu, ju = np.triu_indices(v.shape[0], 1)
        a.append(v[iu])
        b.append(v[ju])
    return np.concatenate(a), np.concatenate(b)


DISTANCE_BIN_EDGES = (1.0, 1.5, 2.0, 3.0, 5.0)


def pair_exclusion_deficit(
    samples, eps: float, beta: float = 1.0, which: str = "joint"
) -> float:
    """Sup relative deviation of the pair marginal from the product of marginals.

    Positions: pairs are binned by torus distance in the shells
    eps*[1, 1.5), ..., eps*[3, 5); the reference is the product of the
    (exactly uniform) one-particle position laws restricted to the exclusion
    domain.  Velocities: first components binned at the Maxwellian quartiles,
    reference is the product of the empirical one-particle histograms.
    Every pair of every sample contributes (the marginal is exchangeable).
    """
    samples = list(samples)
    if len(samples) < 10**4:
        raise ValueError("pair_exclusion_deficit needs at least 1e4 samples")
    if which not in ("joint", "position", "velocity"):
        raise ValueError(f"unknown marginal {which!r}")
    dim = samples[0].dim
    devs = []
    if which in ("joint", "position"):
        r = _pair_distance_samples(samples)
        edges = eps * np.asarray(DISTANCE_BIN_EDGES)
        if edges[-1] >= 0.5:
            raise ValueError("eps too large for the distance shells")
        counts, _ = np.histogram(r, bins=edges)
        kd = unit_ball_volume(dim)
        ref = kd * np.diff(edges**dim) / (1.0 - kd * eps**dim)
        devs.append(np.max(np.abs(counts / r.size / ref - 1.0)))
    if which in ("joint", "velocity"):
        a, b = _pair_velocity_samples(samples)
        q = np.array([-0.6744897501960817, 0.0, 0.6744897501960817]) / math.sqrt(beta)
        ia, ib = np.digitize(a, q), np.digitize(b, q)
        joint = np.zeros((4, 4))
        np.add.at(joint, (ia, ib), 1.0)
        joint /= a.size
        pa = np.bincount(ia, minlength=4) / a.size
        pb = np.bincount(ib, minlength=4) / b.size
        devs.append(np.max(np.abs(joint / np.outer(pa, pb) - 1.0)))
    return float(max(devs))


SYSTEM_SCHEMA = "tagdiff.particle_system/v1"


def write_system_csv(system: ParticleSystem, path) -> None:
    d = system.dim
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {SYSTEM_SCHEMA}\n")
        w = csv.writer(fh)
        w.writerow(["id"] + [f"x{a + 1}" for a in range(d)] + [f"v{a + 1}" for a in range(d)])
        for i in range(system.N):
            w.writerow(
                [i + 1]
                + [f"{c:.17g}" for c in system.positions[i]]
                + [f"{c:.17g}" for c in system.velocities[i]]
            )


def read_system_csv(path) -> ParticleSystem:
    rows = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    header = rows[0].split(",")
    d = sum(1 for h in header if h.startswith("x"))
    data = np.array([[float(c) for c in r.split(",")] for r in rows[1:]])
    order = np.argsort(data[:, 0])
    data = data[order]
    return ParticleSystem(data[:, 1:1 + d], data[:, 1 + d:1 + 2 * d])
