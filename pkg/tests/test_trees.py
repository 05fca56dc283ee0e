import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from tagdiff.md import CollisionLog
from tagdiff.trees import (BadSetQuery, InvalidSpecError, PruningProfile, PseudoPair, TreeSpec,
                           bad_set_membership, build_bbgky_pseudo, build_boltzmann_pseudo,
                           coupling_error, engineered_recollision_spec, estimate_bad_set,
                           is_clear_of_recollisions, pruning_profile_stats, random_spec)

seeds = st.integers(0, 2**32 - 1)


def single(v_new, nu, root_v=(0.3, -0.2)):
    return TreeSpec([0.4, 0.6], np.array(root_v), 1.0, [0.5], [0], [nu], [v_new])


def test_zero_creations_is_free_flight():
    spec = TreeSpec([0.1, 0.2], [0.5, 0.25], 2.0, [], [], np.zeros((0, 2)), np.zeros((0, 2)))
    traj = build_boltzmann_pseudo(spec)
    np.testing.assert_allclose(traj.positions[-1][0], [(0.1 - 1.0) % 1, (0.2 - 0.5) % 1])


def test_pre_collisional_creation():
    spec = single([-1.0, 0.0], [1.0, 0.0])        # (v_new - v_parent).nu < 0
    traj = build_boltzmann_pseudo(spec)
    assert not traj.post_collisional[0]
    np.testing.assert_array_equal(traj.velocities[0][0], spec.root_v)
    np.testing.assert_array_equal(traj.positions[0][1], traj.positions[0][0])


def test_post_collisional_creation_scatters_elastically():
    spec = single([1.0, 0.4], [1.0, 0.0])
    traj = build_boltzmann_pseudo(spec)
    assert traj.post_collisional[0]
    vp, vn = traj.velocities[0]
    np.testing.assert_allclose(vp + vn, spec.root_v + spec.velocities[0], atol=1e-15)
    assert vp @ vp + vn @ vn == pytest.approx(spec.root_v @ spec.root_v
                                              + spec.velocities[0] @ spec.velocities[0])
    assert traj.weight == pytest.approx(abs((spec.velocities[0] - spec.root_v) @ [1.0, 0.0]))


def test_bbgky_child_at_distance_eps():
    spec = single([1.0, 0.4], [0.6, 0.8])
    traj = build_bbgky_pseudo(spec, 0.01)
    d = traj.positions[0][1] - traj.positions[0][0]
    assert np.linalg.norm(d - np.round(d)) == pytest.approx(0.01, abs=1e-15)


def test_one_creation_bound_is_tight():
    spec = single([-1.0, 0.2], [0.6, 0.8])
    rep = coupling_error(PseudoPair.build(spec, 0.01))
    assert rep.per_particle[0][0] == 0.0
    assert rep.per_particle[0][1] == pytest.approx(0.01, abs=1e-15)
    assert rep.within_bound


def test_zero_eps_gives_identical_flows():
    spec = random_spec(np.random.default_rng(3), 6)
    rep = coupling_error(PseudoPair.build(spec, 0.0))
    assert np.all(rep.discrepancy == 0.0)
    assert rep.velocities_identical


def test_engineered_recollision():
    pair = PseudoPair.build(engineered_recollision_spec(0.01), 0.01)
    assert pair.recollided
    assert pair.bbgky.recollisions.tolist() == [0, 0, 1]
    assert not pair.velocities_identical()


def test_overlapping_creation_rejected():
    # the second child lands on the root's sphere
    spec = TreeSpec([0.5, 0.5], [0.0, 0.0], 1.0, [0.9, 0.8], [0, 1],
                    [[1.0, 0.0], [-1.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]])
    with pytest.raises(InvalidSpecError) as info:
        build_bbgky_pseudo(spec, 0.01)
    assert info.value.index == 2


def test_spec_validation():
    with pytest.raises(ValueError):
        TreeSpec([0, 0], [0, 0], 1.0, [0.5, 0.6], [0, 0], [[1, 0], [1, 0]], [[0, 0], [0, 0]])
    with pytest.raises(ValueError):
        TreeSpec([0, 0], [0, 0], 1.0, [0.5], [1], [[1, 0]], [[0, 0]])
    with pytest.raises(ValueError):
        TreeSpec([0, 0], [0, 0], 1.0, [0.5], [0], [[2, 0]], [[0, 0]])


def test_slice_counts():
    spec = TreeSpec([0, 0], [0, 0], 1.0, [0.95, 0.7, 0.65, 0.1], [0, 0, 1, 2],
                    np.tile([1.0, 0.0], (4, 1)), np.zeros((4, 2)))
    np.testing.assert_array_equal(spec.slice_counts(PruningProfile(2, 0.2, 5)), [1, 2, 0, 0, 1])


@given(seeds, st.integers(0, 10))
def test_coupling_bound_on_recollision_free_specs(seed, n):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng, n)
    try:
        pair = PseudoPair.build(spec, 0.01)
    except InvalidSpecError:
        return
    rep = coupling_error(pair)
    if not pair.recollided:
        assert rep.within_bound
        assert rep.velocities_identical
        for per in rep.per_particle:
            assert per[0] <= 1e-10


@given(seeds, st.integers(1, 8))
def test_clear_specs_never_recollide(seed, n):
    spec = random_spec(np.random.default_rng(seed), n)
    if is_clear_of_recollisions(spec, 0.01, 0.02):
        assert not PseudoPair.build(spec, 0.01).recollided


# --- bad sets ---------------------------------------------------------------

def _polar_measures(q: BadSetQuery):
    """|K| and |K_delta| for one reachable image, integrating over ray angles about the image."""
    c = q.separation
    dc = np.linalg.norm(c)

    def area(r, lo_u):
        half = math.asin(min(1.0, r / dc))

        def inner(th):
            p = dc * math.cos(th)
            h = math.sqrt(max(r * r - (dc * dc - p * p), 0.0))
            s_in, s_out = p - h, p + h
            rho_lo = s_in / q.t
            rho_hi = 2 * q.E if lo_u == 0 else min(2 * q.E, s_out / lo_u)
            return max(rho_hi**2 - rho_lo**2, 0.0) / 2 if rho_hi > rho_lo else 0.0

        return integrate.quad(inner, -half, half, epsabs=1e-12, limit=200)[0]

    return area(3 * q.abar, 0.0), area(3 * q.eps0, q.delta)


def test_bad_set_polar_oracle():
    q = BadSetQuery(np.array([0.2, 0.0]), 0.01, 0.001, 0.05, 3.0, 0.1)
    k_exact, kd_exact = _polar_measures(q)
    est = estimate_bad_set(q, 400_000, np.random.default_rng(17))
    assert abs(est.measure_K - k_exact) <= 3 * est.se_K
    assert abs(est.measure_K_delta - kd_exact) <= 3 * est.se_K_delta


def test_receding_pair_not_in_bad_set():
    q = BadSetQuery(np.array([0.2, 0.0]), 0.01, 0.001, 0.05, 3.0, 0.1)
    w = np.array([[-2.0, 0.0], [-1.0, 0.5], [0.0, -3.0]])
    in_k, in_kd = bad_set_membership(q, w)
    assert not in_k.any() and not in_kd.any()


def test_aimed_velocity_in_bad_set():
    q = BadSetQuery(np.array([0.2, 0.0]), 0.01, 0.001, 0.05, 3.0, 0.1)
    in_k, in_kd = bad_set_membership(q, np.array([[2.5, 0.0]]))
    assert in_k[0] and in_kd[0]


@given(seeds)
def test_bad_set_nested_in_t(seed):
    w = np.random.default_rng(seed).uniform(-6, 6, size=(2000, 2))
    prev = None
    for t in (0.06, 0.08, 0.1, 0.2):
        q = BadSetQuery(np.array([0.2, 0.1]), 0.01, 0.001, 0.05, 3.0, t)
        k, _ = bad_set_membership(q, w)
        if prev is not None:
            assert np.all(k >= prev)
        prev = k


def test_bad_set_query_validation():
    with pytest.raises(ValueError):
        BadSetQuery(np.array([0.2, 0.0]), 0.01, 0.005, 0.05, 3.0, 0.1)   # 4 abar > eps0
    with pytest.raises(ValueError):
        BadSetQuery(np.array([0.005, 0.0]), 0.01, 0.001, 0.05, 3.0, 0.1)  # too close
    with pytest.raises(ValueError):
        BadSetQuery(np.array([0.2, 0.0]), 0.01, 0.001, 0.2, 3.0, 0.1)     # delta > t


def test_lemma_bounds_formula():
    q = BadSetQuery(np.array([0.2, 0.0]), 0.01, 0.001, 0.05, 3.0, 0.1)
    bk, bkd = q.lemma_bounds(10.0)
    assert bk == pytest.approx(10 * 9 * (0.1 + 0.09 * 0.001))
    assert bkd == pytest.approx(10 * 3 * (0.2 + 0.09 * 3 * 0.01))


# --- pruning ----------------------------------------------------------------

def _log(events, dim=2):
    n = len(events)
    times = np.array([t for t, _, _ in events], dtype=float)
    pairs = np.array([[i, j] for _, i, j in events], dtype=np.int64).reshape(n, 2)
    z = np.zeros((n, 2, dim))
    return CollisionLog(times, pairs, np.tile([1.0, 0.0], (n, 1)), z, z.copy())


def test_empty_log_no_flags():
    st_ = pruning_profile_stats(CollisionLog.empty(), PruningProfile(2, 0.2, 5))
    assert not st_.any_flag
    assert st_.counts.sum() == 0


def test_threshold_boundary_in_last_interval():
    prof = PruningProfile(2, 0.2, 5)
    # n_1 = 2 collisions of the tagged particle within [t - h, t]
    flagged = pruning_profile_stats(_log([(0.85, 0, 3), (0.9, 0, 4)]), prof)
    assert flagged.counts[0] == 2 and flagged.flags[0] and flagged.flags.sum() == 1
    below = pruning_profile_stats(_log([(0.9, 0, 4)]), prof)
    assert not below.any_flag


def test_cluster_closure_and_recollisions():
    prof = PruningProfile(3, 0.2, 5)
    # 5-6 never touches the tree; 3-4 joins only after 3 is in the tree (backward in time)
    events = [(0.95, 0, 3), (0.7, 3, 4), (0.75, 5, 6), (0.5, 0, 4), (0.9, 7, 8)]
    st_ = pruning_profile_stats(_log(events), prof)
    np.testing.assert_array_equal(st_.counts, [1, 1, 0, 0, 0])
    np.testing.assert_array_equal(st_.recollisions, [0, 0, 1, 0, 0])
    assert st_.cluster_size == 3


def test_pruning_profile_validation():
    with pytest.raises(ValueError):
        PruningProfile(1, 0.2, 5)
    p = PruningProfile(3, 0.25, 4)
    assert p.horizon == 1.0
    np.testing.assert_array_equal(p.thresholds, [3, 9, 27, 81])
