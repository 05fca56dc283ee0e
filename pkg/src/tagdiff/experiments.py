"""Cross-model experiments: hard spheres vs linear Boltzmann, and the Brownian limit."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import stats as sps

from .boltzmann import _jump_attempt, kappa_reference, majorant_rate, simulate_ensemble
from .equilibrium import (DensityPerturbation, GasConfig, ParticleSystem, sample_maxwellian,
                          sample_perturbed)
from .hydro import SpectralDensity, heat_mode_decay, heat_solve
from .md import SimState
from .stats import (Histogram, TestReport, excess_kurtosis_test, ks_statistic,
                    msd_with_batch_errors, replica_rng, shapiro_test, tv_distance)

TV_BINS = 16
N_BOOTSTRAP = 200


def empirical_jump_rate(v: np.ndarray, beta: float, n_attempts: int,
                        rng: np.random.Generator) -> tuple[float, float]:
    """Accepted proposals per unit time at a frozen velocity v, with its standard error."""
    v = np.asarray(v, dtype=float)
    acc = _jump_attempt(np.tile(v, (n_attempts, 1)), beta, rng)[1]
    lam = float(majorant_rate(v[None], 1.0, beta)[0])
    p = acc.mean()
    return lam * p, lam * math.sqrt(p * (1 - p) / n_attempts)


# --- MD vs linear Boltzmann --------------------------------------------------

@dataclass(frozen=True)
class TaggedSamples:
    """Tagged-particle positions and velocities, shape (n_rep, n_times, d)."""

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray


def _md_tagged_replica(args):
    config, rho0, times, master, r = args
    rng = replica_rng(master, r)
    state = SimState(sample_perturbed(config, rho0, rng), config.eps)
    rec = state.run_until(max(times[-1], 1e-12), sample_times=times, keep_all=False)
    return rec.sample_positions[:, 0], rec.sample_velocities[:, 0]


def md_tagged_samples(config: GasConfig, rho0: DensityPerturbation, times, n_rep: int,
                      master_seed: int, jobs: int = 1) -> TaggedSamples:
    times = np.asarray(times, dtype=float)
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            out = list(pool.map(_md_tagged_replica,
                                [(config, rho0, times, master_seed, r) for r in range(n_rep)],
                                chunksize=8))
    else:
        out = [_md_tagged_replica((config, rho0, times, master_seed, r)) for r in range(n_rep)]
    return TaggedSamples(times, np.array([o[0] for o in out]), np.array([o[1] for o in out]))


def lb_tagged_samples(rho0: DensityPerturbation, alpha: float, beta: float, times, n_rep: int,
                      rng: np.random.Generator) -> TaggedSamples:
    times = np.asarray(times, dtype=float)
    x0 = rho0.sample(rng, n_rep)
    v0 = sample_maxwellian(rng, n_rep, rho0.dim, beta)
    ens = simulate_ensemble(x0, v0, alpha, beta, times, rng)
    return TaggedSamples(times, ens.positions, ens.velocities)


def tv_with_error(a: np.ndarray, b: np.ndarray, rng: np.random.Generator,
                  bins: int = TV_BINS, n_boot: int = N_BOOTSTRAP) -> tuple[float, float]:
    """TV distance between position histograms and its bootstrap standard error."""
    tv = tv_distance(Histogram.from_samples(a, bins), Histogram.from_samples(b, bins))
    boot = np.empty(n_boot)
    for k in range(n_boot):
        ia = rng.integers(0, len(a), len(a))
        ib = rng.integers(0, len(b), len(b))
        boot[k] = tv_distance(Histogram.from_samples(a[ia], bins),
                              Histogram.from_samples(b[ib], bins))
    return tv, float(boot.std(ddof=1))


@dataclass
class ComparisonTable:
    Ns: list
    times: np.ndarray
    tv: np.ndarray
    tv_se: np.ndarray
    ks_speed: np.ndarray
    velocity_p: np.ndarray
    rows: list = field(default_factory=list)


def compare_md_lb(config: GasConfig, rho0: DensityPerturbation, times, n_rep: int,
                  rng: np.random.Generator, Ns=(250, 500, 1000), jobs: int = 1,
                  master_seed: int | None = None) -> TestReport:
    """TV of tagged-position histograms (MD vs jump process) along increasing N at fixed alpha."""
    times = np.asarray(sorted(times), dtype=float)
    if n_rep < 500:
        raise ValueError("n_rep must be at least 500")
    master = int(rng.integers(2**63)) if master_seed is None else int(master_seed)
    alpha, beta, d = config.alpha, config.beta, config.dim
    report = TestReport("MD vs linear Boltzmann", provenance={
        "alpha": alpha, "beta": beta, "dim": d, "n_rep": n_rep, "Ns": list(Ns),
        "times": times.tolist(), "master_seed": master})
    lb = lb_tagged_samples(rho0, alpha, beta, times, n_rep, replica_rng(master, 10**6))
    boot_rng = replica_rng(master, 10**6 + 1)
    n_t = times.size
    tv = np.zeros((len(Ns), n_t))
    tv_se = np.zeros_like(tv)
    ks_sp = np.zeros_like(tv)
    vel_p = np.zeros_like(tv)
    vel_ks = np.zeros_like(tv)
    for a, N in enumerate(Ns):
        cfg = GasConfig.from_alpha(N, alpha, beta=beta, dim=d, seed=config.seed)
        md = md_tagged_samples(cfg, rho0, times, n_rep, master + 7919 * (a + 1), jobs)
        for j in range(n_t):
            tv[a, j], tv_se[a, j] = tv_with_error(md.positions[:, j], lb.positions[:, j], boot_rng)
            ks_sp[a, j] = ks_statistic(np.linalg.norm(md.velocities[:, j], axis=1),
                                       np.linalg.norm(lb.velocities[:, j], axis=1))
            # beta |v|^2 / 2 is Gamma(d/2) under the Maxwellian
            e = 0.5 * beta * np.sum(md.velocities[:, j] ** 2, axis=1)
            ks = sps.kstest(e, "gamma", args=(d / 2,))
            vel_ks[a, j], vel_p[a, j] = ks.statistic, ks.pvalue
    report.data.update(Ns=list(Ns), times=times, tv=tv, tv_se=tv_se, ks_speed=ks_sp,
                       velocity_p=vel_p)
    j = n_t - 1
    gap = tv[0, j] - tv[-1, j]
    sigma = math.hypot(tv_se[0, j], tv_se[-1, j])
    report.add_flag(f"TV(N={Ns[-1]}) < TV(N={Ns[0]}) - 2 sigma at t={times[j]:g}",
                    gap > 2 * sigma, f"gap={gap:.4g}, sigma={sigma:.4g}")
    report.add_flag("TV strictly decreasing along N", bool(np.all(np.diff(tv[:, j]) < 0)),
                    " > ".join(f"{x:.4g}" for x in tv[:, j]))
    for a, N in enumerate(Ns):
        for jj, t in enumerate(times):
            report.add_pvalue(f"MD tagged velocity Maxwellian N={N} t={t:g}",
                              float(vel_ks[a, jj]), float(vel_p[a, jj]), 0.01)
    return report


# --- Brownian limit ----------------------------------------------------------

@dataclass(frozen=True)
class DiffusivePaths:
    """Xi(tau) = x(alpha tau) of the jump process, unwrapped, shape (n_paths, n_tau, d)."""

    alpha: float
    taus: np.ndarray
    unwrapped: np.ndarray
    max_speed: float


def simulate_diffusive(rho0: DensityPerturbation, alpha: float, beta: float, taus,
                       n_paths: int, rng: np.random.Generator) -> DiffusivePaths:
    taus = np.asarray(taus, dtype=float)
    x0 = rho0.sample(rng, n_paths)
    v0 = sample_maxwellian(rng, n_paths, rho0.dim, beta)
    ens = simulate_ensemble(x0, v0, alpha, beta, alpha * taus, rng)
    # largest mesh-step speed: bounds every mesh-sampled excursion exactly
    steps = np.linalg.norm(np.diff(ens.unwrapped, axis=1), axis=2) / np.diff(alpha * taus)
    speed = float(steps.max()) if steps.size else 0.0
    return DiffusivePaths(alpha, taus, ens.unwrapped, speed)


def _fourier_mean(x: np.ndarray, k: np.ndarray) -> tuple[float, float]:
    c = np.cos(2 * np.pi * x @ k)
    return float(c.mean()), float(c.std(ddof=1) / math.sqrt(c.size))


def brownian_checks(beta: float, alpha_list, T: float, n_paths: int, rng: np.random.Generator,
                    kappa: float | None = None, dim: int = 2, lag: float = 0.1,
                    rho0: DensityPerturbation | None = None) -> TestReport:
    """Diffusive-scale tests of Xi(tau) = x(alpha tau) against Brownian motion of variance kappa."""
    alpha_list = [float(a) for a in alpha_list]
    if any(b <= a for a, b in zip(alpha_list, alpha_list[1:])):
        raise ValueError("alpha_list must be increasing")
    kappa = kappa_reference(beta, dim) if kappa is None else float(kappa)
    rho0 = DensityPerturbation.cosine(0.5, 1, dim) if rho0 is None else rho0
    n_lag = int(round(T / lag))
    taus = lag * np.arange(n_lag + 1)
    report = TestReport("Brownian limit", provenance={
        "beta": beta, "alphas": alpha_list, "T": T, "n_paths": n_paths, "kappa": kappa})
    kurt_dev = {}
    for alpha in alpha_list:
        p = simulate_diffusive(rho0, alpha, beta, taus, n_paths, rng)
        inc = np.diff(p.unwrapped, axis=1)            # disjoint increments, (paths, n_lag, d)
        kurt, se = excess_kurtosis_test(inc / math.sqrt(2 * kappa * lag))
        kurt_dev[alpha] = (abs(kurt - 3.0), se)
        report.data[f"kurtosis_alpha_{alpha:g}"] = kurt
        report.data[f"paths_alpha_{alpha:g}"] = p
    top = alpha_list[-1]
    p = report.data[f"paths_alpha_{top:g}"]
    dev, se = kurt_dev[top]
    report.add_upper(f"|increment kurtosis - 3| / sigma at alpha={top:g}", dev / se, 3.0)
    if len(alpha_list) > 1:
        low = alpha_list[0]
        report.add_flag(f"kurtosis closer to 3 at alpha={top:g} than at alpha={low:g}",
                        kurt_dev[top][0] < kurt_dev[low][0],
                        f"{kurt_dev[low][0]:.4g} -> {kurt_dev[top][0]:.4g}")
    inc = np.diff(p.unwrapped, axis=1)
    w, pv = shapiro_test(inc[:, 0, 0])
    report.add_pvalue(f"Shapiro normality of lag-{lag:g} increments", w, pv, 0.01)

    disp = p.unwrapped - p.unwrapped[:, :1]
    msd = msd_with_batch_errors(disp, taus, fit_from=0.2)
    report.data["msd"] = msd
    report.add_range(f"MSD slope / (2 d kappa) at alpha={top:g}",
                     msd.slope / (2 * dim * kappa), 0.95, 1.05)

    # two-time covariance of unwrapped coordinates: 2 kappa min(tau1, tau2) per coordinate
    pairs = [(i, j) for i in range(2, n_lag + 1, 3) for j in range(i, n_lag + 1, 4)]
    for i, j in pairs[:4]:
        prod = (disp[:, i] * disp[:, j]).mean(axis=1)
        batches = np.array([b.mean() for b in np.array_split(prod, 20)])
        val, err = batches.mean(), batches.std(ddof=1) / math.sqrt(20)
        target = 2 * kappa * min(taus[i], taus[j])
        report.add_upper(f"cov(Xi({taus[i]:.2g}), Xi({taus[j]:.2g})) z-score",
                         abs(val - target) / err, 3.0)

    # independence of disjoint increments
    half = n_lag // 2
    a = (p.unwrapped[:, half] - p.unwrapped[:, 0]).ravel()
    b = (p.unwrapped[:, -1] - p.unwrapped[:, half]).ravel()
    r = float(np.corrcoef(a, b)[0, 1])
    report.add_upper("|corr| of disjoint increments * sqrt(n)", abs(r) * math.sqrt(a.size), 3.0)

    # Fourier-mode marginals against the heat flow of rho0 on the torus
    spec = SpectralDensity.from_perturbation(rho0)
    for k in ([1] + [0] * (dim - 1), [1] * dim):
        k = np.array(k)
        for idx in (1, 2):
            tau = taus[idx]
            rho_t = heat_solve(spec, kappa, tau)
            # E cos(2 pi k.Xi) = (coefficient of cos(2 pi k.x) in rho_t) / 2
            coef = sum(c for w, c in zip(rho_t.waves, rho_t.cos) if np.array_equal(w, k))
            m, s = _fourier_mean(p.unwrapped[:, idx], k)
            report.add_upper(f"E cos(2 pi {k.tolist()}.Xi({tau:.2g})) z-score",
                             abs(m - coef / 2) / s, 3.0)
        # two-time product via the increment: E cos(2 pi k.(Xi(t2) - Xi(t1)))
        i1, i2 = 2, 4
        m, s = _fourier_mean(p.unwrapped[:, i2] - p.unwrapped[:, i1], k)
        pred = heat_mode_decay(kappa, k, taus[i2] - taus[i1])
        report.add_upper(f"two-time Fourier product k={k.tolist()} z-score",
                         abs(m - pred) / s, 3.0)
    return report


# --- tightness ---------------------------------------------------------------

@numba.njit(cache=True)
def _first_exceedance_window(t, x, xi):
    """Per path, the smallest sigma - tau (tau < sigma on the mesh) with |x(sigma) - x(tau)| >= xi."""
    n_paths, n_t, d = x.shape
    out = np.full(n_paths, np.inf)
    xi2 = xi * xi
    for p in range(n_paths):
        best = np.inf
        for i in range(n_t):
            for j in range(i + 1, n_t):
                if t[j] - t[i] >= best:
                    break
                s = 0.0
                for a in range(d):
                    diff = x[p, j, a] - x[p, i, a]
                    s += diff * diff
                if s >= xi2:
                    best = t[j] - t[i]
                    break
        out[p] = best
    return out


@dataclass(frozen=True)
class TightnessResult:
    etas: np.ndarray
    xis: np.ndarray
    probabilities: np.ndarray   # (n_xi, n_eta)
    std_errors: np.ndarray
    max_speed: float
    mesh: float


def tightness_curve(paths: DiffusivePaths, etas, xis) -> TightnessResult:
    etas = np.asarray(etas, dtype=float)
    xis = np.asarray(xis, dtype=float)
    n = paths.unwrapped.shape[0]
    probs = np.empty((xis.size, etas.size))
    for a, xi in enumerate(xis):
        w = _first_exceedance_window(paths.taus, paths.unwrapped, float(xi))
        probs[a] = [(w <= eta + 1e-15).mean() for eta in etas]
    se = np.sqrt(probs * (1 - probs) / n)
    return TightnessResult(etas, xis, probs, se, paths.max_speed,
                           float(np.diff(paths.taus).max()))


def tightness_probe(beta: float, alpha: float, T: float, eta_list, xi: float, n_paths: int,
                    rng: np.random.Generator, mesh: float = 2.5e-4, dim: int = 2) -> TestReport:
    """P(sup_{tau < sigma < tau + eta} |Xi(sigma) - Xi(tau)| >= xi) on a fixed dense mesh."""
    etas = np.asarray(eta_list, dtype=float)
    if np.any(np.diff(etas) >= 0):
        raise ValueError("eta_list must be decreasing")
    n_mesh = int(round(T / mesh))
    taus = np.linspace(0.0, T, n_mesh + 1)
    paths = simulate_diffusive(DensityPerturbation.uniform(dim), alpha, beta, taus, n_paths, rng)
    diam = math.sqrt(dim) / 2
    xis = np.array([xi, 1.5 * xi, max(2 * xi, diam)])
    res = tightness_curve(paths, etas, xis)
    report = TestReport("tightness", provenance={
        "beta": beta, "alpha": alpha, "T": T, "n_paths": n_paths, "mesh": mesh,
        "etas": etas.tolist(), "xi": xi})
    report.data["result"] = res
    p0 = res.probabilities[0]
    report.add_flag("probability non-increasing as eta decreases", bool(np.all(np.diff(p0) <= 0)),
                    ", ".join(f"{v:.4g}" for v in p0))
    report.add_upper(f"probability at smallest eta={etas[-1]:g}", float(p0[-1]), 0.01)
    report.add_flag("probability non-increasing in xi",
                    bool(np.all(np.diff(res.probabilities, axis=0) <= 0)))
    # a path moving at most max_speed * alpha * eta cannot reach a larger xi
    reach = paths.max_speed * alpha * etas
    forced = reach < xis[-1]
    report.add_flag("exact zero where the speed bound forbids the excursion",
                    bool(np.all(res.probabilities[-1][forced] == 0)),
                    f"{int(forced.sum())} eta values forced")
    return report


# --- Gibbs structure ---------------------------------------------------------

def equilibrium_checks(rng: np.random.Generator, n_partition: int = 400_000,
                       n_deficit: int = 10_000, deficit_alpha: float = 1.2,
                       eps_list=(0.01, 0.04),
                       ratio_cases=((2, 0.1, 1), (8, 0.05, 2), (16, 0.02, 4), (16, 0.04, 1),
                                    (16, 0.04, 4))
                       ) -> TestReport:
    """Partition-function value for N = 2, ratio bounds for small N, and the pair deficit trend."""
    from .equilibrium import (estimate_partition_ratio, pair_exclusion_deficit,
                              partition_ratio_bounds, sample_gibbs)
    from .geometry import unit_ball_volume
    report = TestReport("Gibbs structure", provenance={
        "n_partition": n_partition, "n_deficit": n_deficit, "eps_list": list(eps_list),
        "deficit_alpha": deficit_alpha})
    for N, eps, s in ratio_cases:
        cfg = GasConfig(N, eps)
        est = estimate_partition_ratio(cfg, s, n_partition, rng)
        lo, hi = partition_ratio_bounds(cfg, s)
        report.add_range(f"Z_{N - s}/Z_{N} (N={N}, eps={eps:g}) within bounds +- 3 sigma",
                         est.estimate, lo - 3 * est.std_error, hi + 3 * est.std_error)
        if N == 2:
            exact = 1.0 - unit_ball_volume(cfg.dim) * eps**cfg.dim
            se = math.sqrt(exact * (1 - exact) / n_partition)
            report.add_value(f"Z_2 (eps={eps:g}) vs 1 - kappa_d eps^d", est.z_n, exact, 3 * se)
    # eps grows at fixed alpha = N eps^(d-1), so eps alpha grows with it while the
    # expected pair count per distance shell (and hence the noise floor) stays put
    deficits, floors = [], []
    for eps in eps_list:
        N = int(round(deficit_alpha / eps))
        cfg = GasConfig(N, eps)
        systems = [sample_gibbs(cfg, rng) for _ in range(n_deficit)]
        deficits.append(pair_exclusion_deficit(systems, eps, cfg.beta, which="position"))
        uniform = [ParticleSystem(rng.random((N, cfg.dim)), np.zeros((N, cfg.dim)))
                   for _ in range(n_deficit)]
        floors.append(pair_exclusion_deficit(uniform, eps, cfg.beta, which="position"))
    report.data["deficits"] = deficits
    report.data["noise_floors"] = floors
    report.add_flag("pair deficit increasing in eps alpha", bool(np.all(np.diff(deficits) > 0)),
                    ", ".join(f"{x:.4g}" for x in deficits)
                    + " (no-exclusion floor " + ", ".join(f"{x:.3g}" for x in floors) + ")")
    return report


# --- conservation along an MD run -------------------------------------------

def md_run_checks(config: GasConfig, t_end: float, rng: np.random.Generator,
                  min_events: int = 0):
    """Run a Gibbs-start gas to t_end (or until min_events events) and check invariants."""
    from .equilibrium import sample_gibbs
    system = sample_gibbs(config, rng)
    state = SimState(system, config.eps)
    e0, p0 = state.kinetic_energy(), state.momentum()
    rec = state.run_until(t_end)
    recs = [rec]
    while sum(r.n_events for r in recs) < min_events:
        recs.append(state.run_until(state.clock + t_end))
    n_events = sum(r.n_events for r in recs)
    log = recs[0].log
    report = TestReport("MD conservation", provenance={"config": config, "t_end": state.clock})
    drift = abs(state.kinetic_energy() - e0) / e0
    report.add_upper("relative energy drift", drift, 1e-9)
    mom = max(float(np.max(np.abs(r.log.v_post.sum(axis=1) - r.log.v_pre.sum(axis=1))))
              if len(r.log) else 0.0 for r in recs)
    report.add_upper("max per-collision momentum defect", mom, 1e-12)
    report.add_upper("total momentum change", float(np.max(np.abs(state.momentum() - p0))), 1e-9)
    gap = min(r.min_contact for r in recs) - config.eps
    report.add_range("min contact distance - eps", gap, -1e-10, math.inf)
    report.add_range("events", float(n_events), float(min_events), math.inf)
    report.data.update(record=rec, log=log, state=state, n_events=n_events)
    return report


# --- jump kernel --------------------------------------------------------------

def jump_kernel_checks(beta: float, rng: np.random.Generator, n_velocities: int = 10,
                       n_attempts: int = 400_000, n_paths: int = 4000, t_end: float = 5.0,
                       dim: int = 2) -> TestReport:
    """Empirical jump frequency vs a_beta, stationarity of M_beta, and a_beta(0)."""
    from .boltzmann import jump_rate
    report = TestReport("jump kernel", provenance={"beta": beta, "n_attempts": n_attempts,
                                                   "n_paths": n_paths, "t_end": t_end})
    vs = rng.normal(scale=1.5 / math.sqrt(beta), size=(n_velocities, dim))
    worst = 0.0
    for v in vs:
        emp, _ = empirical_jump_rate(v, beta, n_attempts, rng)
        worst = max(worst, abs(emp / float(jump_rate(v, beta)) - 1))
    report.add_upper(f"max relative jump-frequency error over {n_velocities} velocities",
                     worst, 0.02)
    a0 = float(jump_rate(np.zeros(dim), beta))
    if dim == 2:
        report.add_value("a_beta(0) vs 2 sqrt(pi / (2 beta))", a0,
                         2 * math.sqrt(math.pi / (2 * beta)), 1e-6)
    x0 = rng.random((n_paths, dim))
    v0 = sample_maxwellian(rng, n_paths, dim, beta)
    ens = simulate_ensemble(x0, v0, 1.0, beta, [t_end], rng)
    sd = 1 / math.sqrt(beta)
    for a in range(dim):
        r = sps.kstest(ens.velocities[:, 0, a], "norm", args=(0.0, sd))
        report.add_pvalue(f"stationary velocity[{a}] KS at t={t_end:g}", r.statistic, r.pvalue,
                          0.01)
    return report


# --- diffusion coefficient ---------------------------------------------------

def kappa_cross_validation(rng: np.random.Generator, betas=(1.0, 4.0), n_paths: int = 20000,
                           t_max: float = 30.0, sizes=(15, 20, 25), dim: int = 2
                           ) -> TestReport:
    """kappa from the velocity-grid solve vs the Einstein relation of the jump process."""
    from .boltzmann import kappa_green_kubo, richardson_kappa
    report = TestReport("kappa cross-validation", provenance={
        "betas": list(betas), "n_paths": n_paths, "t_max": t_max, "sizes": list(sizes)})
    det, mc = [], []
    for beta in betas:
        k_det, _ = richardson_kappa(beta, dim, sizes)
        gk = kappa_green_kubo(beta, n_paths, t_max * math.sqrt(beta), rng, dim=dim)
        det.append(k_det)
        mc.append((gk.kappa_msd, gk.msd_error))
        report.add_upper(f"|kappa_det - kappa_GK| / kappa at beta={beta:g}",
                         abs(k_det - gk.kappa_msd) / k_det, 0.05)
    s_det = [k * math.sqrt(b) for k, b in zip(det, betas)]
    report.add_upper("deterministic kappa sqrt(beta) spread", max(s_det) / min(s_det) - 1, 0.005)
    s_mc = [k * math.sqrt(b) for (k, _), b in zip(mc, betas)]
    s_err = math.sqrt(sum((e * math.sqrt(b)) ** 2 for (_, e), b in zip(mc, betas)))
    report.add_upper("MC kappa sqrt(beta) difference / combined error",
                     abs(s_mc[0] - s_mc[-1]) / s_err, 3.0)
    report.data.update(deterministic=det, green_kubo=mc)
    return report


# --- Hilbert expansion ---------------------------------------------------------

def hilbert_checks(rho0, alphas=(5.0, 10.0, 20.0), tau_end: float = 0.1, grid_n: int = 25,
                   n_tau: int = 5, beta: float = 1.0) -> TestReport:
    from .boltzmann import VelocityGrid
    from .hydro import HilbertAnsatz, eqonrho_defect, hilbert_sweep
    grid = VelocityGrid(grid_n, rho0.dim, beta)
    res = hilbert_sweep(rho0, alphas, tau_end, grid=grid, n_tau=n_tau)
    report = TestReport("Hilbert expansion", provenance={
        "alphas": list(alphas), "tau_end": tau_end, "grid_n": grid_n, "beta": beta})
    spec = SpectralDensity.from_perturbation(rho0)
    worst = 0.0
    for tau in (0.0, 0.05, 0.1, 1.0):
        out = heat_solve(spec, res.kappa, tau)
        for k, c0, c in zip(spec.waves, spec.cos, out.cos):
            worst = max(worst, abs(c - c0 * heat_mode_decay(res.kappa, k, tau)))
    report.add_upper("heat_solve vs closed-form mode decay", worst, 1e-10)
    report.add_flag("sup error decreasing in alpha", bool(np.all(np.diff(res.sup_errors) < 0)),
                    ", ".join(f"{e:.4g}" for e in res.sup_errors))
    for a, r in zip(res.alphas[:-1], res.ratios):
        report.add_range(f"error ratio alpha={a:g} -> {2 * a:g}", float(r), 1.5, 3.0)
    ans = HilbertAnsatz.build(rho0, grid, alphas[0])
    x = np.random.default_rng(0).random((64, rho0.dim))
    report.add_upper("solvability defect of the heat equation",
                     max(eqonrho_defect(ans, t, x) for t in (0.0, tau_end)), 1e-6)
    report.data["sweep"] = res
    return report


# --- pseudo-trajectories ----------------------------------------------------

def coupling_fuzz(rng: np.random.Generator, n_specs: int = 10_000, max_creations: int = 10,
                  eps: float = 0.01, t: float = 1.0, E: float = 3.0, delta: float = 0.02,
                  beta: float = 1.0, dim: int = 2) -> TestReport:
    """Fuzz recollision-free specs until n_specs are collected; check the eps i coupling bound."""
    from .trees import (InvalidSpecError, PseudoPair, coupling_error,
                        engineered_recollision_spec, random_spec)
    rows = []
    failures = identity_failures = 0
    n_recollided = n_invalid = 0
    while len(rows) < n_specs:
        spec = random_spec(rng, int(rng.integers(0, max_creations + 1)), t, dim, beta, E, delta)
        try:
            pair = PseudoPair.build(spec, eps)
        except InvalidSpecError:
            n_invalid += 1
            continue
        if pair.recollided:
            n_recollided += 1
            continue
        rep = coupling_error(pair)
        failures += not rep.within_bound
        identity_failures += not rep.velocities_identical
        root_gap = float(np.max([p[0] for p in rep.per_particle]))
        rows.append((spec.n_creations, float(rep.discrepancy.max()), float(rep.bound.max()),
                     root_gap))
    report = TestReport("pseudo-trajectory coupling", provenance={
        "n_specs": n_specs, "max_creations": max_creations, "eps": eps, "t": t, "E": E,
        "delta": delta, "recollided_skipped": n_recollided, "invalid_skipped": n_invalid})
    report.add_upper("specs exceeding the eps i bound", float(failures), 0.5)
    report.add_upper("velocity identity failures", float(identity_failures), 0.5)
    report.add_upper("max root displacement", max(r[3] for r in rows), 1e-10)
    eng = PseudoPair.build(engineered_recollision_spec(eps), eps)
    report.add_flag("engineered spec flags a recollision", eng.recollided,
                    f"per interval {eng.bbgky.recollisions.tolist()}")
    report.add_flag("engineered spec breaks velocity identity", not eng.velocities_identical())
    report.data["rows"] = rows
    return report


def badset_scan(rng: np.random.Generator, separation=(0.2, 0.0), eps0: float = 0.01,
                abar: float = 0.001, delta: float = 0.05, E: float = 3.0, t: float = 0.1,
                n_mc: int = 2_000_000, C: float = 10.0) -> TestReport:
    """|K| and |K_delta| over a t ladder and an abar doubling, against the lemma bounds."""
    from .trees import BadSetQuery, estimate_bad_set
    sep = np.asarray(separation, dtype=float)
    d = sep.size
    report = TestReport("bad-set geometry", provenance={
        "separation": sep.tolist(), "eps0": eps0, "abar": abar, "delta": delta, "E": E,
        "t": t, "n_mc": n_mc, "C": C})
    rows = []
    ts = (delta + 0.25 * (t - delta), delta + 0.5 * (t - delta), t)
    prev = None
    mono = True
    # common random numbers: the same w sample for every t, so nesting is seen exactly
    crn = int(rng.integers(2**63))
    for tt in ts:
        q = BadSetQuery(sep, eps0, abar, delta, E, tt)
        est = estimate_bad_set(q, n_mc, np.random.default_rng(crn))
        rows.append((tt, abar, est))
        if prev is not None and est.measure_K < prev:
            mono = False
        prev = est.measure_K
    report.add_flag("|K| non-decreasing in t", mono,
                    ", ".join(f"{r[2].measure_K:.4g}" for r in rows))
    q2 = BadSetQuery(sep, eps0, 2 * abar, delta, E, t)
    est2 = estimate_bad_set(q2, n_mc, rng)
    rows.append((t, 2 * abar, est2))
    base = rows[len(ts) - 1][2]
    ratio = est2.measure_K / base.measure_K
    ratio_se = ratio * math.hypot(est2.se_K / est2.measure_K, base.se_K / base.measure_K)
    report.add_upper(f"|K(2 abar)| / |K(abar)| vs 2^(d-1) z-score (ratio {ratio:.4g})",
                     abs(ratio - 2 ** (d - 1)) / ratio_se, 3.0)
    worst = 0.0
    for tt, ab, est in rows:
        bk, bkd = BadSetQuery(sep, eps0, ab, delta, E, tt).lemma_bounds(C)
        worst = max(worst, est.measure_K / bk, est.measure_K_delta / bkd)
    report.add_upper(f"max estimate / lemma bound (C={C:g})", worst, 1.0)
    report.data["rows"] = rows
    return report


# --- pruning ---------------------------------------------------------------------

def _prune_replica(args):
    from .equilibrium import sample_gibbs
    from .trees import PruningProfile, pruning_profile_stats
    config, h, K, As, master, r = args
    rng = replica_rng(master, r)
    state = SimState(sample_gibbs(config, rng), config.eps)
    log = state.run_until(K * h).log
    return [pruning_profile_stats(log, PruningProfile(A, h, K)) for A in As]


def pruning_comparison(config: GasConfig, h: float, K: int, As=(2, 3), n_rep: int = 200,
                       master_seed: int = 0, jobs: int = 1) -> TestReport:
    """Fraction of replicas whose tagged backward tree exceeds n_k = A^k in some slice."""
    args = [(config, h, K, tuple(As), master_seed, r) for r in range(n_rep)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            out = list(pool.map(_prune_replica, args, chunksize=4))
    else:
        out = [_prune_replica(a) for a in args]
    flags = np.array([[s.any_flag for s in row] for row in out], dtype=float)
    frac = flags.mean(axis=0)
    report = TestReport("pruning statistics", provenance={
        "config": config, "h": h, "K": K, "As": list(As), "n_rep": n_rep,
        "master_seed": master_seed})
    # paired replicas: a flag at the larger A implies one at the smaller A
    diff = flags[:, 0] - flags[:, -1]
    se = float(diff.std(ddof=1) / math.sqrt(n_rep)) if n_rep > 1 else math.inf
    report.add_flag(f"flagged fraction A={As[0]} > A={As[-1]} beyond 2 sigma",
                    bool(diff.mean() > 2 * se),
                    f"{frac[0]:.3g} vs {frac[-1]:.3g}, paired se {se:.3g}")
    report.data.update(fractions=frac, counts=np.array([[s.counts for s in row] for row in out]),
                       flags=flags)
    return report
