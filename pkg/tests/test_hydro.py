import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tagdiff.boltzmann import VelocityGrid, assemble_L, evolve_phi, kappa_from_b, solve_vector_b
from tagdiff.equilibrium import DensityPerturbation
from tagdiff.hydro import (HilbertAnsatz, SpectralDensity, corrector_rho1, default_dt,
                           eqonrho_defect, heat_mode_decay, heat_solve, hilbert_error,
                           hilbert_sweep, max_principle_gap, solve_matrix_D)


@pytest.fixture(scope="module")
def solved():
    grid = VelocityGrid(15)
    L = assemble_L(grid)
    b = solve_vector_b(grid, L)
    return grid, L, b, solve_matrix_D(grid, L, b)


def one_mode(a=1.0):
    return SpectralDensity(np.array([[1, 0]]), [a], [0.0])


def test_heat_solve_example():
    out = heat_solve(one_mode(), 0.5, 0.1)
    assert out.cos[0] == pytest.approx(math.exp(-0.5 * 4 * math.pi**2 * 0.1), abs=1e-15)
    assert out.cos[0] == pytest.approx(0.138911, abs=1e-6)


def test_heat_solve_identity_and_mass():
    rho = SpectralDensity(np.array([[1, 0], [2, 1]]), [0.3, 0.1], [0.2, 0.0], mean=1.0)
    same = heat_solve(rho, 0.3, 0.0)
    np.testing.assert_array_equal(same.cos, rho.cos)
    assert heat_solve(rho, 0.3, 5.0).mean == 1.0


def test_heat_solve_rejects_bad_arguments():
    with pytest.raises(ValueError):
        heat_solve(one_mode(), 0.0, 1.0)
    with pytest.raises(ValueError):
        heat_solve(one_mode(), 1.0, -0.1)


@given(st.floats(0, 0.5), st.floats(0, 0.5), st.floats(0.05, 1))
def test_heat_semigroup(t1, t2, kappa):
    rho = SpectralDensity(np.array([[1, 0], [1, 2]]), [0.3, -0.2], [0.1, 0.05])
    a = heat_solve(heat_solve(rho, kappa, t1), kappa, t2)
    b = heat_solve(rho, kappa, t1 + t2)
    np.testing.assert_allclose(a.cos, b.cos, rtol=1e-13, atol=1e-300)
    np.testing.assert_allclose(a.sin, b.sin, rtol=1e-13, atol=1e-300)


@given(st.floats(0, 1))
def test_heat_maximum_principle(tau):
    rho = SpectralDensity(np.array([[1, 0], [0, 2]]), [0.4, 0.3], [0.0, 0.2])
    x = np.stack(np.meshgrid(np.arange(32) / 32, np.arange(32) / 32), -1).reshape(-1, 2)
    out = heat_solve(rho, 0.29, tau)(x)
    assert out.max() <= rho(x).max() + 1e-12
    assert out.min() >= rho(x).min() - 1e-12


def test_spectral_derivatives_match_finite_differences():
    rho = SpectralDensity(np.array([[1, 1]]), [0.3], [0.2])
    x = np.array([[0.13, 0.41]])
    h = 1e-6
    fd = [(rho(x + h * e) - rho(x - h * e))[0] / (2 * h) for e in np.eye(2)]
    np.testing.assert_allclose(rho.gradient(x)[0], fd, rtol=1e-6)
    assert rho.laplacian(x)[0] == pytest.approx(-(2 * math.pi) ** 2 * 2 * (rho(x)[0] - 1),
                                                rel=1e-12)


def test_rho1_zero_for_constant_density(solved):
    grid, _, b, _ = solved
    rho = SpectralDensity(np.zeros((0, 2), dtype=np.int64), [], [])
    assert np.all(corrector_rho1(b, rho, np.random.default_rng(0).random((5, 2))) == 0)


def test_rho1_solves_corrector_equation(solved):
    grid, L, b, _ = solved
    rho = one_mode(0.5)
    x = np.random.default_rng(1).random((8, 2))
    r1 = corrector_rho1(b, rho, x)
    # L rho1 + v.grad rho = 0 and rho1 has zero Maxwellian average at every x
    resid = r1 @ L.matrix.T + rho.gradient(x) @ grid.nodes.T
    scale = np.sqrt((rho.gradient(x) @ grid.nodes.T) ** 2 @ grid.weights)
    assert np.all(np.sqrt(resid**2 @ grid.weights) <= 1e-8 * (1 + scale))
    assert np.max(np.abs(r1 @ grid.weights)) <= 1e-8


def test_matrix_D_properties(solved):
    grid, _, b, D = solved
    assert np.max(np.abs(np.tensordot(grid.weights, D, axes=(0, 0)))) <= 1e-8
    # symmetric up to the tensor grid's anisotropy (same order as the radial fit of b)
    asym = D[:, 0, 1] - D[:, 1, 0]
    assert math.sqrt(grid.weights @ asym**2) <= 2e-3 * math.sqrt(grid.weights @ D[:, 0, 1] ** 2)
    vb = np.einsum("i,ia,ib->", grid.weights, grid.nodes, b) / grid.dim
    assert vb == pytest.approx(kappa_from_b(grid, b), rel=1e-12)


def test_eqonrho_consistency(solved):
    grid, L, _, _ = solved
    ans = HilbertAnsatz.build(one_mode(0.5), grid, 5.0, L)
    x = np.random.default_rng(2).random((32, 2))
    assert eqonrho_defect(ans, 0.0, x) <= 1e-6
    assert eqonrho_defect(ans, 0.1, x) <= 1e-6


def test_hilbert_error_at_tau_zero(solved):
    grid, L, _, _ = solved
    rho0 = DensityPerturbation.cosine(0.5)
    ans = HilbertAnsatz.build(rho0, grid, 5.0, L)
    phi = evolve_phi(grid, rho0, 5.0, 0.0, 0.01, L=L, taus=[0.0])
    expected = np.max(np.abs((ans.rho1(0.0, phi.x) / 5.0 + ans.rho2(0.0, phi.x) / 25.0)
                             * grid.maxwellian()[None, :]))
    assert hilbert_error(phi, ans)[0] == pytest.approx(expected, rel=1e-12)


def test_hilbert_error_constant_density_is_zero(solved):
    grid, L, _, _ = solved
    rho0 = DensityPerturbation.uniform()
    ans = HilbertAnsatz.build(rho0, grid, 5.0, L)
    phi = evolve_phi(grid, rho0, 5.0, 0.1, 0.01, L=L, taus=[0.05, 0.1])
    assert np.max(hilbert_error(phi, ans)) <= 1e-12


def test_hilbert_error_rejects_mismatch(solved):
    grid, L, _, _ = solved
    rho0 = DensityPerturbation.cosine(0.5)
    ans = HilbertAnsatz.build(rho0, grid, 5.0, L)
    phi = evolve_phi(grid, rho0, 10.0, 0.001, 0.001, L=L, check_split=False)
    with pytest.raises(ValueError):
        hilbert_error(phi, ans)


def test_small_sweep_trend():
    res = hilbert_sweep(DensityPerturbation.cosine(0.5), [5.0, 10.0], 0.05,
                        grid=VelocityGrid(15), n_tau=3)
    assert res.sup_errors[1] < res.sup_errors[0]
    assert 1.5 <= res.ratios[0] <= 3.0


def test_max_principle_for_evolved_field(solved):
    grid, L, _, _ = solved
    rho0 = DensityPerturbation.cosine(0.5)
    phi = evolve_phi(grid, rho0, 5.0, 0.1, default_dt(5.0, L.loss.max(), 0.05),
                     L=L, taus=[0.05, 0.1])
    assert max_principle_gap(phi, rho0) <= 1e-6


def test_default_dt_bounds():
    dt = default_dt(10.0, 30.0, 0.1, phase_speed=200.0)
    assert dt * 100 * 30 <= 0.5 and dt * 10 * 200 <= 0.5
    assert 0.1 / dt == 2 ** round(math.log2(0.1 / dt))


def test_heat_mode_decay_matches_solver():
    out = heat_solve(SpectralDensity(np.array([[1, 2]]), [1.0], [0.0]), 0.3, 0.2)
    assert out.cos[0] == pytest.approx(heat_mode_decay(0.3, np.array([1, 2]), 0.2), rel=1e-15)
