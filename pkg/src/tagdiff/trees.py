"""Backward collision trees: coupled hard-sphere / point-particle pseudo-trajectories,
recollision detection, bad-velocity sets on the torus, and pruning statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .equilibrium import ParticleSystem
from .geometry import min_image_array, unit_ball_volume, wrap_array
from .md import CollisionLog, SimState, scatter


class InvalidSpecError(ValueError):
    """A creation overlaps an existing sphere."""

    def __init__(self, index: int, distance: float):
        super().__init__(f"creation {index} lands at distance {distance:.3g} from another sphere")
        self.index = index


@dataclass(frozen=True)
class TreeSpec:
    """Root z1 = (x, v) at time t and creations (t_i, parent m_i, nu_{i+1}, v_{i+1}).

    Parents are 0-based: creation i (0-based) may attach to any of the
    particles 0..i already present.
    """

    root_x: np.ndarray
    root_v: np.ndarray
    t: float
    times: np.ndarray
    parents: np.ndarray
    angles: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.root_x).size
        times = np.asarray(self.times, dtype=float).reshape(-1)
        parents = np.asarray(self.parents, dtype=np.int64).reshape(-1)
        angles = np.asarray(self.angles, dtype=float).reshape(-1, d)
        vels = np.asarray(self.velocities, dtype=float).reshape(-1, d)
        n = times.size
        if not (parents.size == angles.shape[0] == vels.shape[0] == n):
            raise ValueError("times, parents, angles and velocities must have equal length")
        if n and (np.any(np.diff(times) >= 0) or times[0] >= self.t or times[-1] <= 0):
            raise ValueError("creation times must decrease strictly inside (0, t)")
        if np.any(parents < 0) or np.any(parents > np.arange(n)):
            raise ValueError("parent of creation i must be one of particles 0..i")
        if n and np.any(np.abs(np.linalg.norm(angles, axis=1) - 1) > 1e-12):
            raise ValueError("angles must be unit vectors")
        object.__setattr__(self, "root_x", np.asarray(self.root_x, dtype=float).copy())
        object.__setattr__(self, "root_v", np.asarray(self.root_v, dtype=float).copy())
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "velocities", vels)

    @property
    def n_creations(self) -> int:
        return self.times.size

    @property
    def dim(self) -> int:
        return self.root_x.size

    def slice_counts(self, profile: "PruningProfile") -> np.ndarray:
        k = np.clip(np.ceil((self.t - self.times) / profile.h).astype(int), 1, profile.K)
        return np.bincount(k - 1, minlength=profile.K)


@dataclass(frozen=True)
class PseudoTrajectory:
    """States right after each creation and at time 0, plus recollision counts.

    ``positions[c]`` / ``velocities[c]`` hold the c+2 particles right after
    creation c; the last entry is the state at time 0.  Interval i is
    [t_{i+1}, t_i] with t_0 = t and t_{n+1} = 0.
    """

    positions: list
    velocities: list
    recollisions: np.ndarray
    post_collisional: np.ndarray
    cross_sections: np.ndarray

    @property
    def weight(self) -> float:
        """Product of |(v_{i+1} - v_{m_i}) . nu_{i+1}| over the creations."""
        return float(np.prod(np.abs(self.cross_sections)))

    @property
    def recollided(self) -> bool:
        return bool(self.recollisions.sum() > 0)

    @property
    def flags(self) -> np.ndarray:
        return self.recollisions > 0


def _creation_velocities(v_parent, v_new, nu):
    """Pre-collisional: unchanged; post-collisional: scattered pair."""
    cross = float(np.dot(v_new - v_parent, nu))
    if cross > 0:
        vp, vn = scatter(v_parent, v_new, -nu)
        return vp, vn, cross
    return v_parent.copy(), v_new.copy(), cross


def build_boltzmann_pseudo(spec: TreeSpec) -> PseudoTrajectory:
    """Point particles: backward free flow, children created on their parent."""
    x = spec.root_x[None].copy() % 1.0
    v = spec.root_v[None].copy()
    now = spec.t
    pos, vel, post = [], [], []
    for i in range(spec.n_creations):
        x = wrap_array(x - (now - spec.times[i]) * v)
        now = spec.times[i]
        m = spec.parents[i]
        vm, vn, cross = _creation_velocities(v[m], spec.velocities[i], spec.angles[i])
        v[m] = vm
        x = np.vstack([x, x[m]])
        v = np.vstack([v, vn])
        pos.append(x.copy())
        vel.append(v.copy())
        post.append(cross)
    x = wrap_array(x - now * v)
    pos.append(x)
    vel.append(v.copy())
    cross = np.array(post, dtype=float)
    return PseudoTrajectory(pos, vel, np.zeros(spec.n_creations + 1, dtype=np.int64),
                            cross > 0, cross)


def _backward_flow(x, v, eps, duration):
    """Hard-sphere flow of (x, v) backward in time by ``duration``: forward with -v."""
    if x.shape[0] < 2 or eps == 0:
        return wrap_array(x - duration * v), v.copy(), 0
    state = SimState(ParticleSystem(x, -v), eps)
    rec = state.run_until(duration)
    return state.positions(), -state.vel, rec.n_collisions


def build_bbgky_pseudo(spec: TreeSpec, eps: float) -> PseudoTrajectory:
    """Hard spheres of diameter eps: children created at x_parent + eps nu."""
    x = spec.root_x[None].copy() % 1.0
    v = spec.root_v[None].copy()
    now = spec.t
    pos, vel, post = [], [], []
    recs = np.zeros(spec.n_creations + 1, dtype=np.int64)
    for i in range(spec.n_creations):
        x, v, recs[i] = _backward_flow(x, v, eps, now - spec.times[i])
        now = spec.times[i]
        m = spec.parents[i]
        xn = wrap_array(x[m] + eps * spec.angles[i])
        others = np.delete(np.arange(x.shape[0]), m)
        if others.size:
            dist = np.linalg.norm(min_image_array(x[others] - xn), axis=1)
            if dist.min() <= eps and eps > 0:
                raise InvalidSpecError(i + 1, float(dist.min()))
        vm, vn, cross = _creation_velocities(v[m], spec.velocities[i], spec.angles[i])
        v = v.copy()
        v[m] = vm
        x = np.vstack([x, xn])
        v = np.vstack([v, vn])
        pos.append(x.copy())
        vel.append(v.copy())
        post.append(cross)
    x, v, recs[spec.n_creations] = _backward_flow(x, v, eps, now)
    pos.append(x)
    vel.append(v)
    cross = np.array(post, dtype=float)
    return PseudoTrajectory(pos, vel, recs, cross > 0, cross)


@dataclass(frozen=True)
class PseudoPair:
    spec: TreeSpec
    eps: float
    bbgky: PseudoTrajectory
    boltzmann: PseudoTrajectory

    @classmethod
    def build(cls, spec: TreeSpec, eps: float) -> "PseudoPair":
        return cls(spec, eps, build_bbgky_pseudo(spec, eps), build_boltzmann_pseudo(spec))

    @property
    def recollided(self) -> bool:
        return self.bbgky.recollided

    def velocities_identical(self) -> bool:
        return all(np.array_equal(a, b) for a, b in
                   zip(self.bbgky.velocities, self.boltzmann.velocities))


@dataclass(frozen=True)
class CouplingReport:
    """max_l |x_l - x0_l| right after creation i (i = 1..n) and at time 0."""

    discrepancy: np.ndarray
    bound: np.ndarray
    per_particle: list
    velocities_identical: bool
    recollided: bool

    @property
    def within_bound(self) -> bool:
        return bool(np.all(self.discrepancy <= self.bound * (1 + 1e-9) + 1e-12))


def coupling_error(pair: PseudoPair) -> CouplingReport:
    n = pair.spec.n_creations
    per, disc = [], []
    for xa, xb in zip(pair.bbgky.positions, pair.boltzmann.positions):
        dl = np.linalg.norm(min_image_array(xa - xb), axis=1)
        per.append(dl)
        disc.append(float(dl.max()))
    bound = pair.eps * np.concatenate([np.arange(1, n + 1), [n]]).astype(float)
    same_v = pair.velocities_identical()
    if not pair.recollided and not same_v:
        raise AssertionError("velocities differ although no recollision occurred")
    return CouplingReport(np.array(disc), bound, per, same_v, pair.recollided)


# --- random specs and the engineered recollision --------------------------

def _truncated_maxwellian(rng, n, dim, beta, E):
    out = np.empty((n, dim))
    filled = 0
    while filled < n:
        v = rng.normal(scale=1 / math.sqrt(beta), size=(2 * (n - filled) + 4, dim))
        v = v[np.linalg.norm(v, axis=1) <= E]
        take = min(len(v), n - filled)
        out[filled:filled + take] = v[:take]
        filled += take
    return out


def random_spec(rng, n_creations: int, t: float = 1.0, dim: int = 2, beta: float = 1.0,
                E: float = 3.0, delta: float = 0.02) -> TreeSpec:
    """Times uniform with delta-separation, uniform angles, Maxwellian velocities cut at E."""
    if n_creations and (n_creations + 1) * delta >= t:
        raise ValueError("too many creations for the delta-separation")
    while True:
        times = np.sort(rng.uniform(0.0, t, n_creations))[::-1]
        gaps = np.diff(np.concatenate([[t], times, [0.0]]))
        if n_creations == 0 or np.all(np.abs(gaps) >= delta):
            break
    parents = np.array([rng.integers(0, i + 1) for i in range(n_creations)], dtype=np.int64)
    ang = rng.normal(size=(n_creations, dim))
    ang /= np.linalg.norm(ang, axis=1, keepdims=True)
    v = _truncated_maxwellian(rng, n_creations + 1, dim, beta, E)
    return TreeSpec(rng.random(dim), v[0], t, times, parents, ang, v[1:])


def engineered_recollision_spec(eps: float) -> TreeSpec:
    """Three particles whose backward flow forces particles 1 and 2 to meet again.

    Particle 2 is attached pre-collisionally to the resting root; particle 3
    is then attached post-collisionally to particle 2 so that the scattered
    velocity of particle 2 points back at the root in the backward flow.
    """
    return TreeSpec(
        root_x=np.array([0.5, 0.5]), root_v=np.array([0.0, 0.0]), t=1.0,
        times=np.array([0.9, 0.8]), parents=np.array([0, 1]),
        angles=np.array([[1.0, 0.0], [1.0, 0.0]]),
        velocities=np.array([[-1.0, 0.0], [1.0, 0.5]]))


# --- free-flow clearance (sufficient condition for no recollision) ----------

def _segment_min_distance(c: np.ndarray, w: np.ndarray, u0: float, u1: float) -> float:
    """min over u in [u0, u1] and integer k of |c - u w + k|."""
    reach = int(math.ceil(u1 * np.abs(w).max())) + 1 if np.any(w) else 1
    d = c.size
    grids = np.stack(np.meshgrid(*([np.arange(-reach, reach + 1)] * d), indexing="ij"),
                     axis=-1).reshape(-1, d)
    cc = c[None] + grids
    ww = float(w @ w)
    u = np.clip((cc @ w) / ww, u0, u1) if ww > 0 else np.full(cc.shape[0], u0)
    r = cc - u[:, None] * w[None]
    return float(np.sqrt(np.min(np.einsum("ij,ij->i", r, r))))


def free_clearance(spec: TreeSpec, delta: float) -> float:
    """Smallest pair distance along the point-particle pseudo-trajectory.

    A freshly created pair is excluded during the first ``delta`` after its
    creation (it separates monotonically); with delta-separated creation
    times it is checked again from the next segment on.
    """
    boltz = build_boltzmann_pseudo(spec)
    times = np.concatenate([spec.times, [0.0]])
    best = math.inf
    for s in range(spec.n_creations):
        x = boltz.positions[s]
        v = boltz.velocities[s]
        dur = times[s] - times[s + 1]
        fresh = (int(spec.parents[s]), x.shape[0] - 1)
        for a in range(x.shape[0] - 1):
            for b in range(a + 1, x.shape[0]):
                u0 = min(delta, dur) if (a, b) == fresh else 0.0
                # backward flow: separation evolves as (x_a - x_b) - u (v_a - v_b)
                dmin = _segment_min_distance(min_image_array(x[a] - x[b]), v[a] - v[b], u0, dur)
                best = min(best, dmin)
    return best


def is_clear_of_recollisions(spec: TreeSpec, eps: float, delta: float) -> bool:
    """Sufficient geometric test: clearance beyond eps (1 + 2n) rules out recollisions."""
    return free_clearance(spec, delta) > eps * (1 + 2 * spec.n_creations)


# --- bad sets --------------------------------------------------------------

@dataclass(frozen=True)
class BadSetQuery:
    separation: np.ndarray
    eps0: float
    abar: float
    delta: float
    E: float
    t: float

    def __post_init__(self):
        sep = np.asarray(self.separation, dtype=float)
        object.__setattr__(self, "separation", sep)
        if not (4 * self.abar <= self.eps0 and 4 * self.eps0 <= min(self.delta * self.E, 1.0)):
            raise ValueError("need 4 abar <= eps0 and 4 eps0 <= min(delta E, 1)")
        if np.linalg.norm(min_image_array(sep)) < self.eps0:
            raise ValueError("the two centres must be at torus distance >= eps0")
        if not (self.t > 0 and self.delta < self.t):
            raise ValueError("need 0 < delta < t")

    @property
    def dim(self) -> int:
        return self.separation.size

    def lemma_bounds(self, C: float = 10.0) -> tuple[float, float]:
        d, E, t = self.dim, self.E, self.t
        k = C * E**d * ((self.abar / self.eps0) ** (d - 1) + (E * t) ** d * self.abar ** (d - 1))
        kd = C * E * ((self.eps0 / self.delta) ** (d - 1)
                      + (E * t) ** d * E ** (d - 1) * self.eps0 ** (d - 1))
        return k, kd


@dataclass(frozen=True)
class BadSetEstimate:
    measure_K: float
    se_K: float
    measure_K_delta: float
    se_K_delta: float
    n_mc: int
    ball_volume: float


def bad_set_membership(query: BadSetQuery, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """For relative velocities w (n, d): membership in K and in K_delta.

    K: some u in [0, t] and image k with |dx0 - u w + k| <= 3 abar;
    K_delta: some u in [delta, t] with |dx0 - u w + k| <= 3 eps0.
    Images range over |k|_inf <= ceil(2 E t) + 1.
    """
    d = query.dim
    reach = int(math.ceil(2 * query.E * query.t)) + 1
    ks = np.stack(np.meshgrid(*([np.arange(-reach, reach + 1)] * d), indexing="ij"),
                  axis=-1).reshape(-1, d)
    ww = np.einsum("ij,ij->i", w, w)
    safe = np.where(ww > 0, ww, 1.0)
    in_k = np.zeros(w.shape[0], dtype=bool)
    in_kd = np.zeros(w.shape[0], dtype=bool)
    r_k, r_kd = (3 * query.abar) ** 2, (3 * query.eps0) ** 2
    for k in ks:
        c = query.separation + k
        proj = (w @ c) / safe
        for lo, rad2, out in ((0.0, r_k, in_k), (query.delta, r_kd, in_kd)):
            u = np.clip(proj, lo, query.t)
            res = c[None] - u[:, None] * w
            out |= np.einsum("ij,ij->i", res, res) <= rad2
    return in_k, in_kd


def estimate_bad_set(query: BadSetQuery, n_mc: int, rng: np.random.Generator,
                     chunk: int = 200_000) -> BadSetEstimate:
    """Monte Carlo measure of K and K_delta with w uniform in the ball B_{2E}."""
    d = query.dim
    vol = unit_ball_volume(d) * (2 * query.E) ** d
    hits_k = hits_kd = 0
    done = 0
    while done < n_mc:
        m = min(chunk, n_mc - done)
        dirs = rng.normal(size=(m, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        w = 2 * query.E * rng.random(m)[:, None] ** (1.0 / d) * dirs
        a, b = bad_set_membership(query, w)
        hits_k += int(a.sum())
        hits_kd += int(b.sum())
        done += m
    pk, pkd = hits_k / n_mc, hits_kd / n_mc
    return BadSetEstimate(vol * pk, vol * math.sqrt(pk * (1 - pk) / n_mc),
                          vol * pkd, vol * math.sqrt(pkd * (1 - pkd) / n_mc), n_mc, vol)


# --- pruning ---------------------------------------------------------------

@dataclass(frozen=True)
class PruningProfile:
    A: int
    h: float
    K: int

    def __post_init__(self):
        if int(self.A) != self.A or self.A < 2:
            raise ValueError("A must be an integer >= 2")
        if not self.h > 0 or self.K < 1:
            raise ValueError("need h > 0 and K >= 1")

    @property
    def horizon(self) -> float:
        return self.K * self.h

    @property
    def thresholds(self) -> np.ndarray:
        return self.A ** np.arange(1, self.K + 1, dtype=np.int64)


@dataclass(frozen=True)
class PruneStats:
    counts: np.ndarray
    thresholds: np.ndarray
    flags: np.ndarray
    recollisions: np.ndarray
    cluster_size: int

    @property
    def any_flag(self) -> bool:
        return bool(self.flags.any())


def backward_cluster_events(log: CollisionLog, t_end: float, tagged: int = 0):
    """Walk the log backward from t_end: (time, kind) with kind 1 = branch point, 2 = recollision."""
    if len(log) == 0:
        return [], 1
    n = int(log.pairs.max()) + 1
    member = np.zeros(max(n, tagged + 1), dtype=bool)
    member[tagged] = True
    out = []
    order = np.argsort(log.times, kind="stable")[::-1]
    for e in order:
        s = log.times[e]
        if s > t_end:
            continue
        i, j = log.pairs[e]
        if member[i] and member[j]:
            out.append((float(s), 2))
        elif member[i] or member[j]:
            member[i] = member[j] = True
            out.append((float(s), 1))
    return out, int(member.sum())


def pruning_profile_stats(log: CollisionLog, profile: PruningProfile, tagged: int = 0,
                          t_end: float | None = None) -> PruneStats:
    """Branch points of the tagged particle's backward tree per slice [t-kh, t-(k-1)h]."""
    t = profile.horizon if t_end is None else float(t_end)
    counts = np.zeros(profile.K, dtype=np.int64)
    recs = np.zeros(profile.K, dtype=np.int64)
    events, size = backward_cluster_events(log, t, tagged)
    for s, kind in events:
        k = int(min(profile.K, max(1, math.ceil((t - s) / profile.h))))
        if t - s > profile.horizon:
            continue
        (counts if kind == 1 else recs)[k - 1] += 1
    thr = profile.thresholds
    return PruneStats(counts, thr, counts >= thr, recs, size)
