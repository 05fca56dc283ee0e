import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_force_flow
from tagdiff.equilibrium import GasConfig, ParticleSystem, sample_gibbs
from tagdiff.experiments import md_run_checks
from tagdiff.md import (CollisionLog, EventOrderError, SimState, collision_rate_density,
                        min_pair_distance, resolve_collision, stationarity_check,
                        time_reverse_check)

vel = st.floats(-5, 5, allow_nan=False)


def test_head_on_exchange():
    vi, vj = resolve_collision([1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0])
    np.testing.assert_array_equal(vi, [-1.0, 0.0])
    np.testing.assert_array_equal(vj, [1.0, 0.0])


def test_grazing_pair_unchanged():
    vi, vj = resolve_collision([0.0, 1.0], [0.0, -1.0], [1.0, -1e-14])
    np.testing.assert_allclose(vi, [0.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(vj, [0.0, -1.0], atol=1e-12)


def test_outgoing_pair_is_an_error():
    with pytest.raises(EventOrderError):
        resolve_collision([1.0, 0.0], [-1.0, 0.0], [1.0, 0.0])
    with pytest.raises(ValueError):
        resolve_collision([1.0, 0.0], [-1.0, 0.0], [-2.0, 0.0])


@given(vel, vel, vel, vel, st.floats(0, 2 * math.pi))
def test_collision_conserves_momentum_and_energy(a, b, c, d, th):
    vi, vj = np.array([a, b]), np.array([c, d])
    om = np.array([math.cos(th), math.sin(th)])
    if np.dot(vi - vj, om) > 0:
        om = -om
    pi, pj = resolve_collision(vi, vj, om)
    np.testing.assert_allclose(pi + pj, vi + vj, atol=1e-12)
    assert pi @ pi + pj @ pj == pytest.approx(vi @ vi + vj @ vj, abs=1e-12 * (1 + vi @ vi + vj @ vj))


def two_body(dist=0.6, speed=1.0, eps=0.1):
    x = np.array([[0.2, 0.5], [0.2 + dist, 0.5]])
    v = np.array([[speed, 0.0], [-speed, 0.0]])
    return ParticleSystem(x, v), eps


def test_two_body_single_collision():
    system, eps = two_body()
    rec = SimState(system, eps).run_until(0.5)
    assert rec.n_collisions == 1
    assert rec.log.times[0] == pytest.approx(0.25, abs=1e-14)
    np.testing.assert_allclose(rec.log.v_post[0], [[-1.0, 0.0], [1.0, 0.0]])


def test_free_flight_reverses_exactly():
    x = np.array([[0.1, 0.1], [0.6, 0.6]])
    v = np.array([[0.1, 0.0], [-0.1, 0.0]])
    assert time_reverse_check(ParticleSystem(x, v), 0.01, 0.5) <= 1e-12


def test_single_collision_reverses():
    system, eps = two_body()
    assert time_reverse_check(system, eps, 0.4) <= 1e-10


def test_time_reversal_many_events():
    rng = np.random.default_rng(11)
    cfg = GasConfig(100, 0.02)
    system = sample_gibbs(cfg, rng)
    rec = SimState(system, cfg.eps).run_until(0.2)
    assert rec.n_events >= 1000 and rec.n_collisions >= 50
    assert time_reverse_check(system, cfg.eps, 0.2) <= 1e-6


@pytest.mark.parametrize("seed,n", [(1, 4), (2, 6), (3, 8)])
def test_event_driven_matches_small_step_oracle(seed, n):
    rng = np.random.default_rng(seed)
    eps = 0.08
    system = sample_gibbs(GasConfig(n, eps), rng)
    T = 0.15
    state = SimState(system, eps)
    rec = state.run_until(T)
    xb, vb = brute_force_flow(system.positions.copy(), system.velocities.copy(), eps, T)
    dx = state.positions() - xb
    dx -= np.round(dx)
    assert np.max(np.abs(dx)) <= 1e-4
    np.testing.assert_allclose(state.vel, vb, atol=1e-4 * (1 + rec.n_collisions))


def test_conservation_over_1e5_events():
    rep = md_run_checks(GasConfig(500, 0.004), 0.2, np.random.default_rng(5), min_events=100_000)
    assert rep.passed, rep.summary()


def test_determinism_bit_identical_logs():
    a = SimState.from_config(GasConfig(200, 0.01), np.random.default_rng(9)).run_until(0.5).log
    b = SimState.from_config(GasConfig(200, 0.01), np.random.default_rng(9)).run_until(0.5).log
    for f in ("times", "pairs", "omega", "v_pre", "v_post"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))


def test_exclusion_at_end_and_log_order():
    state = SimState.from_config(GasConfig(300, 0.01), np.random.default_rng(4))
    rec = state.run_until(1.0)
    assert min_pair_distance(state.positions()) >= 0.01 - 1e-10
    assert np.all(np.diff(rec.log.times) >= 0)
    assert rec.min_contact >= 0.01 - 1e-10


def test_collision_rate_scales_with_alpha():
    # Boltzmann-Grad: alpha times the mean kinetic rate, up to a dilute-gas density correction
    cfg = GasConfig.from_alpha(2000, 10.0)
    rec = SimState.from_config(cfg, np.random.default_rng(3)).run_until(1.0)
    per_particle = 2 * rec.n_collisions / cfg.N
    target = cfg.alpha * collision_rate_density(cfg.beta, cfg.dim)
    assert abs(per_particle / target - 1) <= 0.2


def test_tagged_path_is_piecewise_free_flight():
    state = SimState.from_config(GasConfig(200, 0.01), np.random.default_rng(8))
    rec = state.run_until(1.0)
    steps = np.diff(rec.tagged_times)[:, None] * rec.tagged_velocities[:-1]
    np.testing.assert_allclose(np.diff(rec.tagged_unwrapped, axis=0), steps, atol=1e-12)
    end = rec.tagged_unwrapped[-1] % 1.0
    diff = end - state.positions()[0]
    assert np.max(np.abs(diff - np.round(diff))) < 1e-12


def test_log_csv_round_trip(tmp_path):
    state = SimState.from_config(GasConfig(50, 0.02), np.random.default_rng(2))
    log = state.run_until(1.0).log
    log.to_csv(tmp_path / "log.csv")
    back = CollisionLog.from_csv(tmp_path / "log.csv")
    np.testing.assert_array_equal(back.times, log.times)
    np.testing.assert_array_equal(back.pairs, log.pairs)
    np.testing.assert_array_equal(back.v_post, log.v_post)


def test_run_until_requires_future_time():
    state = SimState.from_config(GasConfig(10, 0.02), np.random.default_rng(0))
    state.run_until(0.1)
    with pytest.raises(ValueError):
        state.run_until(0.05)


def test_initial_overlap_rejected():
    with pytest.raises(ValueError):
        SimState(ParticleSystem([[0.1, 0.1], [0.105, 0.1]], np.zeros((2, 2))), 0.01)


def test_stationarity_small():
    rep = stationarity_check(GasConfig(50, 0.02), [0.5, 1.0], 200, np.random.default_rng(6))
    assert rep.passed, rep.summary()
    with pytest.raises(ValueError):
        stationarity_check(GasConfig(50, 0.02), [1.0], 50, np.random.default_rng(6))
