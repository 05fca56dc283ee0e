"""Command-line entry point: ``tagdiff <subcommand> [--config PATH] [--out DIR] [--jobs N] [--seed U64]``.

Every run writes the effective configuration (``config.ini``), one CSV per
artifact with a versioned schema header, ``report.csv`` and ``summary.txt``
into the output directory.  The exit status is 0 iff every check passes.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config, parse_config
from .stats import TestReport, replica_rng

SUBCOMMANDS = ("md-run", "lb-run", "lb-evolve", "kappa", "hilbert-sweep", "couple-trees",
               "badset", "prune-stats", "compare", "brownian", "tightness",
               "equilibrium-check")


def _rng(cfg: RunConfig, stream: int = 0) -> np.random.Generator:
    return replica_rng(cfg.seed, stream)


def _write_rows(path: Path, schema: str, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {schema}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([f"{x:.17g}" if isinstance(x, float) else x for x in r])


# --- subcommands -------------------------------------------------------------

def cmd_md_run(cfg: RunConfig, out: Path, jobs: int) -> TestReport:
    from .equilibrium import write_system_csv
    from .experiments import md_run_checks
    report = md_run_checks(cfg.gas_config(), cfg.md.t_end, _rng(cfg))
    report.data["log"].to_csv(out / "collision_log.csv")
    report.data["record"].to_csv(out / "tagged_path.csv")
    write_system_csv(report.data["state"].system(), out / "final_state.csv")
    return report


def cmd_lb_run(cfg: RunConfig, out: Path, jobs: int) -> TestReport:
    from .boltzmann import simulate_jump_path
    from .equilibrium import sample_maxwellian
    from .experiments import jump_kernel_checks
    rng = _rng(cfg)
    rho0 = cfg.density()
    path = simulate_jump_path(rho0.sample(rng, 1)[0],
                              sample_maxwellian(rng, 1, cfg.gas.dim, cfg.gas.beta)[0],
                              cfg.lb_alpha, cfg.gas.beta, cfg.lb.t_end, rng)
    path.to_csv(out / "jump_path.csv")
    report = jump_kernel_checks(cfg.gas.beta, _rng(cfg, 1), dim=cfg.gas.dim)
    report.provenance["path_jumps"] = path.n_jumps
    return report


def cmd_lb_evolve(cfg: RunConfig, out: Path, jobs: int) -> TestReport:
    from .boltzmann import (SPLIT_ERROR_MAX, SplittingError, VelocityGrid, assemble_L,
                            evolve_phi)
    from .hydro import default_dt, max_principle_gap
    grid = VelocityGrid(cfg.lb.grid_n, cfg.gas.dim, cfg.gas.beta, v_max=cfg.v_max)
    L = assemble_L(grid)
    rho0 = cfg.density()
    taus = np.linspace(0.0, cfg.lb.tau_end, cfg.lb.n_tau)
    k_max = max((np.abs(k).sum() for k, _ in rho0.modes), default=0)
    speed = 2 * np.pi * k_max * grid.v_max
    dt = default_dt(cfg.lb_alpha, float(L.loss.max()), taus[1] - taus[0], speed)
    for _ in range(8):
        try:
            phi = evolve_phi(grid, rho0, cfg.lb_alpha, cfg.lb.tau_end, dt, L=L, taus=taus)
            break
        except SplittingError:
            dt /= 2
    else:
        raise SplittingError(f"no step down to dt={dt:.3g} meets the splitting tolerance")
    dens = phi.values @ grid.weights
    rows = [[float(t)] + [float(c) for c in x] + [float(r)]
            for t, dt_row in zip(phi.taus, dens) for x, r in zip(phi.x, dt_row)]
    d = cfg.gas.dim
    _write_rows(out / "phi_density.csv", "tagdiff.phi_density/v1",
                ["tau"] + [f"x{a + 1}" for a in range(d)] + ["rho"], rows)
    report = TestReport("lb-evolve", provenance={"alpha": cfg.lb_alpha, "grid_n": grid.n,
                                                 "dt": phi.dt})
    report.add_upper("splitting error (dt vs dt/2)", phi.split_error, SPLIT_ERROR_MAX)
    report.add_upper("maximum principle excess", max_principle_gap(phi, rho0), 1e-8)
    mass = phi.mass()
    report.add_upper("mass drift", float(np.max(np.abs(mass - mass[0]))), 1e-9)
    return report


def cmd_kappa(cfg: RunConfig, out: Path, jobs: int) -> TestReport:
    from .experiments import kappa_cross_validation
    betas = (cfg.gas.beta, 4 * cfg.gas.beta)
    report = kappa_cross_validation(_rng(cfg), betas=betas, n_paths=cfg.lb.n_paths,
                                    t_max=cfg.lb.t_max, dim=cfg.gas.dim)
    rows = [(float(b), float(k), float(g), float(e)) for b, k, (g, e) in
            zip(betas, report.data["deterministic"], report.data["green_kubo"])]
    _write_rows(out / "kappa.csv", "tagdiff.kappa/v1",
                ["beta", "kappa_deterministic", "kappa_green_kubo", "green_kubo_error"], rows)
    return report


def cmd_hilbert_sweep(cfg: RunConfig, out: Path, jobs: int) -> TestReport:
    from .experiments import hilbert_checks
    from .svg import Plot
    report = hilbert_checks(cfg.density(), cfg.lb.alphas, cfg.lb.tau_end, cfg.lb.grid_n,
                            cfg.lb.n_tau, cfg.gas.beta)
    res = report.data["sweep"]
    res.to_csv(out / "hilbert_sweep.csv")
    Plot("Hilbert error vs alpha", "alpha", "sup error", logx=True, logy=True) \
        .add("sup |M (phi - Psi)|", res.alphas, res.sup_errors) \
        .add("1/alpha reference", res.alphas, res.sup_errors[0] * res.alphas[0] / res.alphas) \
        .save(out / "hilbert_error.svg")
    return report


def cmd_couple_trees(cfg: RunConfig, out: Path, jobs: int) -> TestReport:
    from .experiments import coupling_fuzz
    t = cfg.trees
    report = coupling_fuzz(_rng(cfg), t.n_specs, t.max_creations, t.eps, t.t, t.E, t.delta,
                           cfg.gas.beta, cfg.gas.dim)
    rows = [(i, n, 0, disc, bound) for i, (n, disc, bound, _) in enumerate(report.data["rows"])]
    _write_rows(out / "coupling.csv", "tagdiff.coupling_fuzz/v1",
                ["spec_id", "creations", "recollided", "max_discrepancy", "bound"], rows)
    return report


def cmd_badset(cfg: RunConfig, out: Path, jobs: int) -> TestReport:
    from .experiments import badset_scan
    b = cfg.badset
    report = badset_scan(_rng(cfg), b.separation, b.eps0, b.abar, b.delta, b.E, b.t, b.n_mc)
    rows = [(float(tt), float(ab), b.eps0, b.delta, b.E, e.measure_K, e.se_K,
             e.measure_K_delta, e.se_K_delta) for tt, ab, e in report.data["rows"]]
    _write_rows(out / "badset.csv", "tagdiff.badset/v1",
                ["t", "abar", "eps0", "delta", "E", "K", "K_se", "K_delta", "K_delta_se"], rows)
    return report


def cmd_prune_stats(cfg: RunConfig, out: Path, jobs: int) -> TestReport:
    from .experiments import pruning_comparison
    from .md import CollisionLog
    from .trees import pruning_profile_stats
    p = cfg.pruning
    if p.log:
        log = CollisionLog.from_csv(p.log)
        stats = pruning_profile_stats(log, cfg.pruning_profile())
        _write_rows(out / "prune_counts.csv", "tagdiff.prune_counts/v1",
                    ["k", "count", "threshold", "flag", "recollisions"],
                    [(k + 1, int(c), int(th), int(f), int(r)) for k, (c, th, f, r) in
                     enumerate(zip(stats.counts, stats.thresholds, stats.flags,
                                   stats.recollisions))])
        report = TestReport("prune-stats", provenance={"log": p.log, "A": p.A, "h": p.h,
                                                        "K": p.K})
        report.add_flag("log covers the horizon", bool(len(log) == 0 or
                                                       log.times.max() <= p.K * p.h + 1e-12))
        return report
    report = pruning_comparison(cfg.gas_config(), p.h, p.K, (p.A, p.A_compare), p.n_rep,
                                cfg.seed, jobs)
    counts = report.data["counts"]
    rows = []
    for a, A in enumerate((p.A, p.A_compare)):
        for k in range(p.K):
            rows.append((A, k + 1, float(counts[:, a, k].mean()), int(A ** (k + 1)),
                         float((counts[:, a, k] >= A ** (k + 1)).mean())))
    _write_rows(out / "prune_counts.csv", "tagdiff.prune_summary/v1",
                ["A", "k", "mean_count", "threshold", "flag_fraction"], rows)
    return report


def cmd_compare(cfg: RunConfig, out: Path, jobs: int) -> TestReport:
    from .experiments import compare_md_lb
    from .svg import Plot
    c = cfg.compare
    report = compare_md_lb(cfg.gas_config(), cfg.density(), c.times, c.n_rep, _rng(cfg),
                           Ns=c.Ns, jobs=jobs, master_seed=cfg.seed)
    d = report.data
    rows = [(int(N), float(t), float(d["tv"][a, j]), float(d["tv_se"][a, j]),
             float(d["ks_speed"][a, j])) for a, N in enumerate(d["Ns"])
            for j, t in enumerate(d["times"])]
    _write_rows(out / "compare.csv", "tagdiff.compare/v1",
                ["N", "t", "tv", "tv_se", "ks_speed"], rows)
    Plot("TV distance vs N", "N", "TV", logx=True) \
        .add(f"t={d['times'][-1]:g}", d["Ns"], d["tv"][:, -1], yerr=d["tv_se"][:, -1]) \
        .save(out / "tv_vs_n.svg")
    return report


def cmd_brownian(cfg: RunConfig, out: Path, jobs: int) -> TestReport:
    from .experiments import brownian_checks
    from .svg import Plot
    b = cfg.brownian
    report = brownian_checks(cfg.gas.beta, b.alphas, b.T, b.n_paths, _rng(cfg),
                             dim=cfg.gas.dim, lag=b.lag, rho0=cfg.density())
    msd = report.data["msd"]
    _write_rows(out / "msd.csv", "tagdiff.msd/v1", ["tau", "msd", "std_error"],
                [(float(t), float(m), float(e)) for t, m, e in
                 zip(msd.lags, msd.msd, msd.std_error)])
    Plot("MSD of Xi", "tau", "E|Xi(tau) - Xi(0)|^2") \
        .add("simulation", msd.lags, msd.msd, yerr=msd.std_error) \
        .add("fit", msd.lags, msd.intercept + msd.slope * msd.lags) \
        .save(out / "msd.svg")
    return report


def cmd_tightness(cfg: RunConfig, out: Path, jobs: int) -> TestReport:
    from .experiments import tightness_probe
    t = cfg.tightness
    report = tightness_probe(cfg.gas.beta, t.alpha, t.T, t.etas, t.xi, t.n_paths, _rng(cfg),
                             mesh=t.mesh, dim=cfg.gas.dim)
    res = report.data["result"]
    rows = [(float(xi), float(eta), float(p), float(s)) for a, xi in enumerate(res.xis)
            for eta, p, s in zip(res.etas, res.probabilities[a], res.std_errors[a])]
    _write_rows(out / "tightness.csv", "tagdiff.tightness/v1",
                ["xi", "eta", "probability", "std_error"], rows)
    return report


def cmd_equilibrium_check(cfg: RunConfig, out: Path, jobs: int) -> TestReport:
    from .experiments import equilibrium_checks
    from .md import stationarity_check
    gibbs = equilibrium_checks(_rng(cfg))
    g = cfg.gas_config()
    check_cfg = type(g).from_alpha(cfg.md.N_check, g.alpha, beta=g.beta, dim=g.dim, seed=g.seed)
    stat = stationarity_check(check_cfg, cfg.md.times, cfg.md.n_rep, _rng(cfg, 1))
    report = TestReport("equilibrium-check", provenance={**gibbs.provenance, **stat.provenance})
    report.checks = gibbs.checks + stat.checks
    return report


COMMANDS = {
    "md-run": cmd_md_run, "lb-run": cmd_lb_run, "lb-evolve": cmd_lb_evolve,
    "kappa": cmd_kappa, "hilbert-sweep": cmd_hilbert_sweep, "couple-trees": cmd_couple_trees,
    "badset": cmd_badset, "prune-stats": cmd_prune_stats, "compare": cmd_compare,
    "brownian": cmd_brownian, "tightness": cmd_tightness,
    "equilibrium-check": cmd_equilibrium_check,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tagdiff", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", metavar="SUBCOMMAND")
    sub.required = True
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, help=(COMMANDS[name].__doc__ or name.replace("-", " ")))
        sp.add_argument("--config", type=Path, help="INI-style run configuration")
        sp.add_argument("--out", type=Path, help="output directory (default from config)")
        sp.add_argument("--jobs", type=int, help="replica worker processes")
        sp.add_argument("--seed", type=int, help="master seed, overrides the config")
    return ap


def dispatch(command: str, cfg: RunConfig, out: Path, jobs: int) -> int:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(
        f"# tagdiff {__version__} {command}\n" + cfg.echo(), encoding="utf-8")
    try:
        report = COMMANDS[command](cfg, out, jobs)
    except (ValueError, RuntimeError) as exc:
        raise SystemExit(f"tagdiff {command}: {type(exc).__name__}: {exc}") from exc
    report.provenance.setdefault("seed", cfg.seed)
    report.to_csv(out / "report.csv")
    summary = report.summary()
    (out / "summary.txt").write_text(summary + "\n", encoding="utf-8")
    print(summary)
    return 0 if report.passed else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else parse_config("")
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed: must be an unsigned 64-bit integer")
            cfg = cfg.with_seed(args.seed)
    except (ConfigError, OSError) as exc:
        print(f"tagdiff: {exc}", file=sys.stderr)
        return 2
    out = args.out if args.out is not None else Path(cfg.run.out)
    jobs = args.jobs if args.jobs is not None else cfg.run.jobs
    if jobs < 1:
        print("tagdiff: --jobs must be >= 1", file=sys.stderr)
        return 2
    return dispatch(args.command, cfg, out, jobs)


if __name__ == "__main__":
    sys.exit(main())
