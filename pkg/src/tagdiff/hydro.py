"""Heat-equation limit and the Hilbert expansion rho + rho1/alpha + rho2/alpha^2."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .boltzmann import (OperatorMatrix, PhiField, SolverStagnation, VelocityGrid,
                        assemble_L, evolve_phi, kappa_from_b, solve_vector_b, weighted_cg)
from .equilibrium import DensityPerturbation

K_MAX = 8


@dataclass(frozen=True)
class SpectralDensity:
    """rho(x) = mean + sum_j c_j cos(2 pi k_j.x) + s_j sin(2 pi k_j.x)."""

    waves: np.ndarray
    cos: np.ndarray
    sin: np.ndarray
    mean: float = 1.0

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.waves, dtype=np.int64))
        c = np.asarray(self.cos, dtype=float).reshape(-1)
        s = np.asarray(self.sin, dtype=float).reshape(-1)
        if not (w.shape[0] == c.size == s.size):
            raise ValueError("waves, cos and sin must have matching lengths")
        if w.size and (np.any(np.all(w == 0, axis=1)) or np.abs(w).max() > K_MAX):
            raise ValueError(f"wave-vectors must be nonzero with |k|_inf <= {K_MAX}")
        object.__setattr__(self, "waves", w)
        object.__setattr__(self, "cos", c)
        object.__setattr__(self, "sin", s)

    @property
    def dim(self) -> int:
        return self.waves.shape[1]

    @classmethod
    def from_perturbation(cls, rho0: DensityPerturbation) -> "SpectralDensity":
        if not rho0.modes:
            return cls(np.zeros((0, rho0.dim), dtype=np.int64), [], [], 1.0)
        waves = np.array([k for k, _ in rho0.modes])
        return cls(waves, [a for _, a in rho0.modes], np.zeros(len(rho0.modes)), 1.0)

    def complex_modes(self) -> list:
        """(k, A_k) with rho = Re sum A_k exp(2 pi i k.x), zero mode first."""
        out = [(np.zeros(self.dim, dtype=np.int64), complex(self.mean))]
        out += [(k, complex(c, -s)) for k, c, s in zip(self.waves, self.cos, self.sin)]
        return out

    def _phase(self, x):
        return 2 * np.pi * np.atleast_2d(x) @ self.waves.T.astype(float)

    def __call__(self, x) -> np.ndarray:
        th = self._phase(x)
        return self.mean + np.cos(th) @ self.cos + np.sin(th) @ self.sin

    def gradient(self, x) -> np.ndarray:
        th = self._phase(x)
        amp = -np.sin(th) * self.cos + np.cos(th) * self.sin
        return 2 * np.pi * amp @ self.waves.astype(float)

    def hessian(self, x) -> np.ndarray:
        th = self._phase(x)
        amp = -(np.cos(th) * self.cos + np.sin(th) * self.sin)
        kk = np.einsum("ja,jb->jab", self.waves, self.waves).astype(float)
        return (2 * np.pi) ** 2 * np.einsum("nj,jab->nab", amp, kk)

    def laplacian(self, x) -> np.ndarray:
        return np.trace(self.hessian(x), axis1=1, axis2=2)

    def scaled(self, factors: np.ndarray) -> "SpectralDensity":
        return SpectralDensity(self.waves, self.cos * factors, self.sin * factors, self.mean)


def heat_solve(rho0: SpectralDensity, kappa: float, tau: float) -> SpectralDensity:
    """Exact solution of d_tau rho = kappa Laplace rho: mode k decays by exp(-kappa |2 pi k|^2 tau)."""
    if not kappa > 0 or tau < 0:
        raise ValueError("need kappa > 0 and tau >= 0")
    k2 = np.sum(rho0.waves.astype(float) ** 2, axis=1)
    return rho0.scaled(np.exp(-kappa * (2 * np.pi) ** 2 * k2 * tau))


def corrector_rho1(b: np.ndarray, rho: SpectralDensity, x) -> np.ndarray:
    """rho1(x, v) = -b(v).grad rho(x); shape (n_x, n_nodes)."""
    return -rho.gradient(x) @ b.T


def solve_matrix_D(grid: VelocityGrid, L: OperatorMatrix, b: np.ndarray,
                   tol: float = 1e-11) -> np.ndarray:
    """D with L D_kl = v_k b_l - <v_k b_l>_M and <D_kl>_M = 0; shape (n_nodes, d, d)."""
    d = grid.dim
    out = np.empty((grid.size, d, d))
    for k in range(d):
        for m in range(d):
            rhs = grid.nodes[:, k] * b[:, m]
            res = weighted_cg(L.apply, rhs, grid.weights, tol=tol)
            if not res.converged:
                raise SolverStagnation(f"D_{k + 1}{m + 1}", res.residual)
            out[:, k, m] = res.x
    return out


def corrector_rho2(D: np.ndarray, rho: SpectralDensity, x) -> np.ndarray:
    """rho2(x, v) = D(v):Hess rho(x)."""
    return np.einsum("nab,iab->ni", rho.hessian(x), D)


@dataclass(frozen=True)
class HilbertAnsatz:
    """Psi_alpha = rho + rho1/alpha + rho2/alpha^2 with rho solving the heat equation."""

    rho0: SpectralDensity
    grid: VelocityGrid
    b: np.ndarray
    D: np.ndarray
    kappa: float
    alpha: float

    @classmethod
    def build(cls, rho0, grid: VelocityGrid, alpha: float, L: OperatorMatrix | None = None
              ) -> "HilbertAnsatz":
        if isinstance(rho0, DensityPerturbation):
            rho0 = SpectralDensity.from_perturbation(rho0)
        L = assemble_L(grid) if L is None else L
        b = solve_vector_b(grid, L)
        D = solve_matrix_D(grid, L, b)
        return cls(rho0, grid, b, D, kappa_from_b(grid, b), float(alpha))

    def rho(self, tau: float) -> SpectralDensity:
        return heat_solve(self.rho0, self.kappa, tau)

    def rho1(self, tau: float, x) -> np.ndarray:
        return corrector_rho1(self.b, self.rho(tau), x)

    def rho2(self, tau: float, x) -> np.ndarray:
        return corrector_rho2(self.D, self.rho(tau), x)

    def psi(self, tau: float, x) -> np.ndarray:
        r = self.rho(tau)
        base = r(x)[:, None]
        return base + corrector_rho1(self.b, r, x) / self.alpha \
            + corrector_rho2(self.D, r, x) / self.alpha**2


def hilbert_error(phi: PhiField, ansatz: HilbertAnsatz) -> np.ndarray:
    """sup_{x, v} |M_beta(v) (phi - Psi_alpha)| at each tau of ``phi``."""
    if phi.grid is not ansatz.grid and (phi.grid.n != ansatz.grid.n
                                       or phi.grid.v_max != ansatz.grid.v_max
                                       or phi.grid.dim != ansatz.grid.dim
                                       or phi.grid.beta != ansatz.grid.beta):
        raise ValueError("phi and the ansatz live on different velocity grids")
    if phi.alpha != ansatz.alpha:
        raise ValueError("phi and the ansatz use different alpha")
    m = ansatz.grid.maxwellian()
    out = np.empty(phi.taus.size)
    for i, tau in enumerate(phi.taus):
        diff = phi.values[i] - ansatz.psi(tau, phi.x)
        out[i] = np.max(np.abs(diff * m[None, :]))
    return out


def eqonrho_defect(ansatz: HilbertAnsatz, tau: float, x) -> float:
    """max_x |d_tau rho + int v.grad rho1 M_beta dv|: the solvability condition for rho2."""
    r = ansatz.rho(tau)
    lhs = ansatz.kappa * r.laplacian(x)
    # -int v.grad(rho1) M = sum_ab <v_a b_b>_M d_a d_b rho
    vb = np.einsum("i,ia,ib->ab", ansatz.grid.weights, ansatz.grid.nodes, ansatz.b)
    rhs = np.einsum("ab,nab->n", vb, r.hessian(x))
    return float(np.max(np.abs(lhs - rhs)))


@dataclass(frozen=True)
class SweepResult:
    alphas: np.ndarray
    sup_errors: np.ndarray
    errors_by_tau: np.ndarray
    taus: np.ndarray
    kappa: float
    split_errors: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def ratios(self) -> np.ndarray:
        return self.sup_errors[:-1] / self.sup_errors[1:]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("# schema: tagdiff.hilbert_sweep/v1\n")
            w = csv.writer(fh)
            w.writerow(["alpha", "sup_error"] + [f"err_tau_{t:.6g}" for t in self.taus])
            for a, e, row in zip(self.alphas, self.sup_errors, self.errors_by_tau):
                w.writerow([f"{a:.17g}", f"{e:.17g}"] + [f"{c:.17g}" for c in row])


def default_dt(alpha: float, max_rate: float, tau_end: float, phase_speed: float = 0.0
               ) -> float:
    """Largest step tau_end / 2^j with dt alpha^2 max a <= 0.5 and dt alpha phase_speed <= 0.5.

    ``phase_speed`` is max |2 pi k.v| over the modes and velocity nodes in play.
    """
    dt = tau_end
    while dt * alpha**2 * max_rate > 0.5 or dt * alpha * phase_speed > 0.5:
        dt /= 2
    return dt


def hilbert_sweep(rho0, alphas, tau_end: float, grid: VelocityGrid | None = None,
                  n_tau: int = 5, dt: float | None = None) -> SweepResult:
    """sup over tau in [0, tau_end] (n_tau equispaced instants) of the Hilbert error, per alpha."""
    grid = VelocityGrid(25) if grid is None else grid
    if isinstance(rho0, DensityPerturbation):
        rho0 = SpectralDensity.from_perturbation(rho0)
    L = assemble_L(grid)
    base = HilbertAnsatz.build(rho0, grid, 1.0, L)
    taus = np.linspace(0.0, tau_end, n_tau)
    sups, rows, splits = [], [], []
    for a in alphas:
        ans = HilbertAnsatz(base.rho0, grid, base.b, base.D, base.kappa, float(a))
        step = dt if dt is not None else default_dt(a, float(L.loss.max()), tau_end / (n_tau - 1))
        phi = evolve_phi(grid, rho0, a, tau_end, step, L=L, taus=taus)
        err = hilbert_error(phi, ans)
        rows.append(err)
        sups.append(float(err.max()))
        splits.append(phi.split_error)
    return SweepResult(np.asarray(alphas, dtype=float), np.array(sups), np.array(rows), taus,
                       base.kappa, np.array(splits))


def max_principle_gap(phi: PhiField, rho0) -> float:
    """sup phi - sup rho0 over the sampled instants (should be <= 0 up to round-off)."""
    if isinstance(rho0, DensityPerturbation):
        rho0 = SpectralDensity.from_perturbation(rho0)
    sup0 = float(np.max(rho0(phi.x)))
    return float(np.max(phi.values) - sup0)


def heat_mode_decay(kappa: float, k, tau: float) -> float:
    k = np.atleast_1d(k)
    return math.exp(-kappa * (2 * math.pi) ** 2 * float(np.sum(k * k)) * tau)
