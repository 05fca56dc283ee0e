"""Event-driven hard-sphere dynamics on the torus with full collision logging."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _engine as eng
from .equilibrium import GasConfig, ParticleSystem, sample_gibbs
from .geometry import min_image_array

MAX_EVENTS = 10**9
GRAZING_TOL = 1e-12
CONTACT_TOL = 1e-10


class EventOrderError(ValueError):
    """A collision was requested for a pair that is moving apart."""


class EventCascadeError(RuntimeError):
    """The event budget was exhausted."""


def scatter(v: np.ndarray, w: np.ndarray, nu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exchange the components of v and w along the unit vector nu."""
    s = np.dot(v - w, nu)
    return v - s * nu, w + s * nu


def resolve_collision(v_i, v_j, omega) -> tuple[np.ndarray, np.ndarray]:
    """Specular reflection of an incoming pair along omega = (x_i - x_j)/eps.

    A grazing pair, (v_i - v_j).omega in (-1e-12, 0], passes through unchanged.
    """
    v_i = np.asarray(v_i, dtype=float)
    v_j = np.asarray(v_j, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if abs(np.linalg.norm(omega) - 1.0) > 1e-12:
        raise ValueError("omega must be a unit vector")
    g = float(np.dot(v_i - v_j, omega))
    if g > 0.0:
        raise EventOrderError(f"pair is outgoing, (v_i - v_j).omega = {g}")
    if g > -GRAZING_TOL:
        return v_i.copy(), v_j.copy()
    return scatter(v_i, v_j, omega)


LOG_SCHEMA = "tagdiff.collision_log/v1"
PATH_SCHEMA = "tagdiff.tagged_path/v1"


@dataclass(frozen=True)
class CollisionLog:
    """Ordered binary collisions: time, pair, contact direction, velocities."""

    times: np.ndarray
    pairs: np.ndarray
    omega: np.ndarray
    v_pre: np.ndarray
    v_post: np.ndarray

    def __len__(self) -> int:
        return self.times.shape[0]

    @classmethod
    def empty(cls, dim: int = 2) -> "CollisionLog":
        return cls(np.zeros(0), np.zeros((0, 2), dtype=np.int64), np.zeros((0, dim)),
                   np.zeros((0, 2, dim)), np.zeros((0, 2, dim)))

    def shifted(self, dt: float) -> "CollisionLog":
        return CollisionLog(self.times + dt, self.pairs, self.omega, self.v_pre, self.v_post)

    def involving(self, i: int) -> np.ndarray:
        return np.flatnonzero((self.pairs[:, 0] == i) | (self.pairs[:, 1] == i))

    def to_csv(self, path) -> None:
        d = self.omega.shape[1]
        cols = ["t", "i", "j"] + [f"omega{a + 1}" for a in range(d)]
        for tag in ("pre_i", "pre_j", "post_i", "post_j"):
            cols += [f"{tag}_v{a + 1}" for a in range(d)]
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema: {LOG_SCHEMA}\n")
            w = csv.writer(fh)
            w.writerow(cols)
            for k in range(len(self)):
                row = [f"{self.times[k]:.17g}", int(self.pairs[k, 0]) + 1,
                       int(self.pairs[k, 1]) + 1]
                vals = np.concatenate([self.omega[k], self.v_pre[k, 0], self.v_pre[k, 1],
                                       self.v_post[k, 0], self.v_post[k, 1]])
                w.writerow(row + [f"{c:.17g}" for c in vals])

    @classmethod
    def from_csv(cls, path) -> "CollisionLog":
        lines = [ln for ln in Path(path).read_text().splitlines() if ln and ln[0] != "#"]
        header = lines[0].split(",")
        d = sum(1 for h in header if h.startswith("omega"))
        if len(lines) == 1:
            return cls.empty(d)
        data = np.array([[float(c) for c in ln.split(",")] for ln in lines[1:]])
        n = data.shape[0]
        vel = data[:, 3 + d:].reshape(n, 4, d)
        return cls(data[:, 0], data[:, 1:3].astype(np.int64) - 1, data[:, 3:3 + d],
                   vel[:, 0:2].copy(), vel[:, 2:4].copy())


@dataclass(frozen=True)
class TrajectoryRecord:
    """Output of one ``run_until`` call.

    ``tagged_*`` hold the piecewise-linear breakpoints of particle 0
    (start, each of its collisions, end); ``samples_*`` the synchronised
    snapshots at the requested sampling instants.
    """

    t_start: float
    t_end: float
    tagged_times: np.ndarray
    tagged_positions: np.ndarray
    tagged_velocities: np.ndarray
    tagged_unwrapped: np.ndarray
    sample_times: np.ndarray
    sample_positions: np.ndarray
    sample_velocities: np.ndarray
    log: CollisionLog
    n_events: int
    n_collisions: int
    n_crossings: int
    n_degenerate: int
    n_grazing: int
    min_contact: float

    def to_csv(self, path) -> None:
        d = self.tagged_positions.shape[1]
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema: {PATH_SCHEMA}\n")
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{a + 1}" for a in range(d)] + [f"v{a + 1}" for a in range(d)])
            for k in range(self.tagged_times.shape[0]):
                w.writerow([f"{self.tagged_times[k]:.17g}"]
                           + [f"{c:.17g}" for c in self.tagged_positions[k]]
                           + [f"{c:.17g}" for c in self.tagged_velocities[k]])


class SimState:
    """Mutable hard-sphere state: lazily advanced particles, cells, event heap."""

    def __init__(self, system: ParticleSystem, eps: float, t0: float = 0.0,
                 max_events: int = MAX_EVENTS):
        self.eps = float(eps)
        if not 0 < self.eps < 0.25:
            raise ValueError("eps must lie in (0, 1/4)")
        n, d = system.positions.shape
        self.N, self.dim = n, d
        self.pos = np.array(system.positions, dtype=float) % 1.0
        self.vel = np.array(system.velocities, dtype=float)
        if n > 1 and min_pair_distance(self.pos) < self.eps - CONTACT_TOL:
            raise ValueError("initial configuration violates hard-core exclusion")
        self.tpos = np.full(n, float(t0))
        self.ncell = int(math.floor(1.0 / max(self.eps, 1.0 / 32.0)))
        self.side = 1.0 / self.ncell
        self.ccell = np.zeros((n, d), dtype=np.int64)
        self.head = np.full(self.ncell**d, -1, dtype=np.int64)
        self.nxt = np.full(n, -1, dtype=np.int64)
        self.prv = np.full(n, -1, dtype=np.int64)
        self.stamp = np.zeros(n, dtype=np.int64)
        self.cross_t = np.full(n, np.inf)
        cap = max(4096, 64 * n)
        self.hq_t = np.zeros(cap)
        self.hq_d = np.zeros((cap, 5), dtype=np.int64)
        self.hsize = np.zeros(1, dtype=np.int64)
        self._alloc_log(max(1024, 8 * n))
        self.counters = np.zeros(6, dtype=np.int64)
        self.scalars = np.array([t0, -np.inf, np.inf])
        self.max_events = max_events
        self.tag_unwrapped = self.pos[0].copy()
        self.tag_time = float(t0)
        eng.build_cells(self.pos, self.ccell, self.head, self.nxt, self.prv, self.ncell)
        eng.initialize(self.pos, self.vel, self.tpos, self.ccell, self.head, self.nxt,
                       self.ncell, self.side, self.eps, self.stamp, self.cross_t,
                       self.hq_t, self.hq_d, self.hsize, float(t0))

    @classmethod
    def from_config(cls, config: GasConfig, rng: np.random.Generator) -> "SimState":
        return cls(sample_gibbs(config, rng), config.eps)

    @property
    def clock(self) -> float:
        return float(self.scalars[eng.S_CLOCK])

    def _alloc_log(self, cap: int) -> None:
        d = self.dim
        self.lg_t = np.zeros(cap)
        self.lg_ij = np.zeros((cap, 2), dtype=np.int64)
        self.lg_w = np.zeros((cap, d))
        self.lg_pre = np.zeros((cap, 2, d))
        self.lg_post = np.zeros((cap, 2, d))
        self.lg_n = np.zeros(1, dtype=np.int64)

    def _grow_heap(self) -> None:
        cap = 2 * self.hq_t.shape[0]
        n = int(self.hsize[0])
        ht, hd = np.zeros(cap), np.zeros((cap, 5), dtype=np.int64)
        ht[:n], hd[:n] = self.hq_t[:n], self.hq_d[:n]
        self.hq_t, self.hq_d = ht, hd

    def _grow_log(self) -> None:
        n = int(self.lg_n[0])
        old = (self.lg_t, self.lg_ij, self.lg_w, self.lg_pre, self.lg_post)
        self._alloc_log(2 * self.lg_t.shape[0])
        for new, src in zip((self.lg_t, self.lg_ij, self.lg_w, self.lg_pre, self.lg_post), old):
            new[:n] = src[:n]
        self.lg_n[0] = n

    def _advance_to(self, t_stop: float) -> None:
        while True:
            code = eng.advance(
                float(t_stop), self.pos, self.vel, self.tpos, self.ccell, self.head,
                self.nxt, self.prv, self.ncell, self.side, self.eps, self.stamp,
                self.cross_t, self.hq_t, self.hq_d, self.hsize, self.lg_t, self.lg_ij,
                self.lg_w, self.lg_pre, self.lg_post, self.lg_n, self.counters,
                self.scalars, self.max_events)
            if code == eng.DONE:
                return
            if code == eng.HEAP_FULL:
                self._grow_heap()
            elif code == eng.LOG_FULL:
                self._grow_log()
            else:
                raise EventCascadeError(
                    f"more than {self.max_events} events before t={t_stop}; "
                    f"clock at {self.clock}")

    def positions(self) -> np.ndarray:
        return eng.positions_at(self.clock, self.pos, self.vel, self.tpos)

    def system(self) -> ParticleSystem:
        return ParticleSystem(self.positions(), self.vel.copy())

    def kinetic_energy(self) -> float:
        return 0.5 * float(np.sum(self.vel**2))

    def momentum(self) -> np.ndarray:
        return self.vel.sum(axis=0)

    def _log_slice(self, start: int) -> CollisionLog:
        stop = int(self.lg_n[0])
        return CollisionLog(self.lg_t[start:stop].copy(), self.lg_ij[start:stop].copy(),
                            self.lg_w[start:stop].copy(), self.lg_pre[start:stop].copy(),
                            self.lg_post[start:stop].copy())

    def run_until(self, t_end: float, sample_times=(), keep_all: bool = True
                  ) -> TrajectoryRecord:
        """Advance to ``t_end``, snapshotting at each time in ``sample_times``.

        With ``keep_all=False`` only the tagged particle is kept in snapshots.
        """
        t0 = self.clock
        if not t_end > t0:
            raise ValueError(f"t_end={t_end} must exceed the clock {t0}")
        start_log = int(self.lg_n[0])
        start_counts = self.counters.copy()
        samples = sorted(float(s) for s in sample_times if t0 <= s <= t_end)
        snap_x, snap_v = [], []
        v_tag0 = self.vel[0].copy()
        x_tag0 = self.positions()[0]
        for s in samples:
            if s > self.clock:
                self._advance_to(s)
            x = self.positions()
            snap_x.append(x if keep_all else x[:1])
            snap_v.append(self.vel.copy() if keep_all else self.vel[:1].copy())
        self._advance_to(t_end)
        log = self._log_slice(start_log)
        times, xs, vs, xu = self._tagged_path(log, t0, t_end, x_tag0, v_tag0)
        c = self.counters - start_counts
        d = self.dim
        shape_n = self.N if keep_all else 1
        return TrajectoryRecord(
            t_start=t0, t_end=float(t_end), tagged_times=times, tagged_positions=xs,
            tagged_velocities=vs, tagged_unwrapped=xu,
            sample_times=np.array(samples),
            sample_positions=np.array(snap_x).reshape(len(samples), shape_n, d),
            sample_velocities=np.array(snap_v).reshape(len(samples), shape_n, d),
            log=log, n_events=int(c[eng.C_EVENTS]), n_collisions=int(c[eng.C_COLL]),
            n_crossings=int(c[eng.C_CROSS]), n_degenerate=int(c[eng.C_DEGEN]),
            n_grazing=int(c[eng.C_GRAZE]), min_contact=float(self.scalars[eng.S_MINCONTACT]),
        )

    def _tagged_path(self, log, t0, t_end, x0, v0):
        idx = log.involving(0)
        times = [t0]
        vels = [v0]
        for k in idx:
            side = 0 if log.pairs[k, 0] == 0 else 1
            times.append(float(log.times[k]))
            vels.append(log.v_post[k, side].copy())
        times.append(float(t_end))
        vels.append(vels[-1].copy())
        times = np.array(times)
        vels = np.array(vels)
        steps = np.diff(times)[:, None] * vels[:-1]
        unwrapped = self.tag_unwrapped + np.vstack([np.zeros(self.dim), np.cumsum(steps, axis=0)])
        self.tag_unwrapped = unwrapped[-1].copy()
        wrapped = unwrapped - np.floor(unwrapped)
        wrapped[wrapped >= 1.0] -= 1.0
        return times, wrapped, vels, unwrapped


def min_pair_distance(x: np.ndarray) -> float:
    n = x.shape[0]
    best = np.inf
    for i in range(n - 1):
        dx = min_image_array(x[i + 1:] - x[i])
        best = min(best, float(np.min(np.einsum("ij,ij->i", dx, dx))))
    return math.sqrt(best)


def run_until(state: SimState, t_end: float, sample_times=()) -> TrajectoryRecord:
    return state.run_until(t_end, sample_times)


def time_reverse_check(system: ParticleSystem, eps: float, T: float) -> float:
    """Run forward T, flip velocities, run T, flip; max torus distance to the start."""
    fwd = SimState(system, eps)
    fwd.run_until(T)
    mid = fwd.system()
    back = SimState(ParticleSystem(mid.positions, -mid.velocities), eps)
    back.run_until(T)
    end = back.positions()
    dx = min_image_array(end - system.positions)
    return float(np.max(np.linalg.norm(dx, axis=1)))


def collision_rate_density(beta: float, dim: int) -> float:
    """Mean of the kinetic jump rate a_beta(v) over v ~ M_beta.

    Equals kappa_{d-1} E|v - v1| for two independent Maxwellian velocities;
    the mean per-particle collision rate of a dilute gas is alpha times this.
    """
    from .geometry import unit_ball_volume
    sigma = math.sqrt(2.0 / beta)
    mean_norm = sigma * math.sqrt(2.0) * math.gamma((dim + 1) / 2) / math.gamma(dim / 2)
    return unit_ball_volume(dim - 1) * mean_norm


def stationarity_check(config: GasConfig, times, n_rep: int, rng: np.random.Generator,
                       threshold: float = 0.01):
    """Gibbs-start replicas: tagged velocity/position laws at each sampled time."""
    from .stats import TestReport, chi2_uniform_test, ks_normal_test
    if n_rep < 100:
        raise ValueError("stationarity_check needs n_rep >= 100")
    times = sorted(float(t) for t in times)
    xs = np.empty((n_rep, len(times), config.dim))
    vs = np.empty_like(xs)
    for r in range(n_rep):
        state = SimState.from_config(config, rng)
        rec = state.run_until(times[-1], sample_times=times, keep_all=False)
        xs[r] = rec.sample_positions[:, 0]
        vs[r] = rec.sample_velocities[:, 0]
    report = TestReport("stationarity", provenance={"config": config, "n_rep": n_rep,
                                                    "times": times})
    sd = 1.0 / math.sqrt(config.beta)
    for k, t in enumerate(times):
        for a in range(config.dim):
            stat, p = ks_normal_test(vs[:, k, a], sd)
            report.add_pvalue(f"t={t:g} velocity[{a}] KS", stat, p, threshold)
        stat, p = chi2_uniform_test(xs[:, k], bins=8)
        report.add_pvalue(f"t={t:g} position chi2 (8^d)", stat, p, threshold)
        sq = np.sum(vs[:, k] ** 2, axis=1)
        mean, se = float(sq.mean()), float(sq.std(ddof=1) / math.sqrt(n_rep))
        report.add_value(f"t={t:g} <|v|^2>", mean, config.dim / config.beta, 3 * se)
    return report
