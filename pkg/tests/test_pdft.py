import numpy as np
import pytest

from rdmhybrid.fci import CiState, DeterminantBasis, ground_state, measure_rdms
from rdmhybrid.grid import QuadratureGrid, evaluate_basis, orbital_grid
from rdmhybrid.integrals import build_h_system, h_chain, hartree_fock
from rdmhybrid.errors import DimensionError
from rdmhybrid.pdft import (
    GridDensities,
    classical_energy,
    densities_from_rdms,
    eval_ot_functional,
    mcpdft_energy,
    translate,
)

from oracles import restricted_pbe_energy_density

# tPBE / tBLYP energies of the H2 (R = 1.4) FCI RDMs on the default (60, 18, 36) grid.
H2_FCI_TPBE = -1.1566221946099382
H2_FCI_TBLYP = -1.159355172246578


def _system(n_atoms, spacing, **grid_kwargs):
    geom = h_chain(n_atoms, spacing)
    ints = hartree_fock(build_h_system(geom)).integrals
    return geom, ints, orbital_grid(geom, ints.ao_coefficients, **grid_kwargs)


@pytest.fixture(scope="module")
def h2_setup():
    geom, ints, grid = _system(2, 1.4)
    _, state = ground_state(ints)
    return geom, ints, grid, state


def _rotate(d1, d2, u):
    """Spin-orbital RDMs expressed in spatial orbitals rotated by ``u``."""
    u_so = np.kron(u, np.eye(2))
    d1r = u_so.T @ d1 @ u_so
    d2r = np.einsum("ijkl,ia,jb,kc,ld->abcd", d2, u_so, u_so, u_so, u_so, optimize=True)
    return d1r, d2r


class TestDensities:
    def test_closed_shell_on_top_identity(self, h2_setup):
        _, ints, grid, state = h2_setup
        dens = densities_from_rdms(*measure_rdms(CiState.aufbau(state.basis)), grid)
        np.testing.assert_allclose(dens.pi, dens.rho**2 / 4, atol=1e-10)

    def test_normalisation(self, h2_setup):
        _, _, grid, state = h2_setup
        dens = densities_from_rdms(*measure_rdms(state), grid)
        assert grid.integrate(dens.rho) == pytest.approx(2.0, abs=1e-6)

    def test_stretched_h2_diradical(self):
        geom, ints, grid = _system(2, 5.0)
        _, state = ground_state(ints)
        dens = densities_from_rdms(*measure_rdms(state), grid)
        for nucleus in geom.coordinates:
            k = np.argmin(np.linalg.norm(grid.points - nucleus, axis=1))
            assert dens.rho[k] > 0.1
            assert dens.pi[k] / (dens.rho[k] ** 2 / 4) < 0.1

    def test_gradient_by_finite_differences(self, h2_setup):
        geom, ints, _, state = h2_setup
        d1, d2 = measure_rdms(state)
        point = np.array([[0.2, -0.1, 0.5]])
        h = 1e-6

        def rho_at(p):
            chi, dchi = evaluate_basis(geom, p)
            grid = QuadratureGrid(p, np.ones(1), chi @ ints.ao_coefficients,
                                  np.einsum("pmx,mq->pqx", dchi, ints.ao_coefficients))
            return densities_from_rdms(d1, d2, grid)

        grad = rho_at(point).grad_rho[0]
        for axis in range(3):
            shift = np.zeros(3)
            shift[axis] = h
            fd = (rho_at(point + shift).rho[0] - rho_at(point - shift).rho[0]) / (2 * h)
            assert grad[axis] == pytest.approx(fd, abs=1e-8)

    def test_orbital_mismatch(self, h2_setup):
        _, _, _, state = h2_setup
        grid = QuadratureGrid(np.zeros((1, 3)), np.ones(1), np.ones((1, 3)))
        with pytest.raises(DimensionError):
            densities_from_rdms(*measure_rdms(state), grid)

    def test_negative_density_rejected(self):
        with pytest.raises(ValueError):
            GridDensities(np.array([-1e-6]), np.zeros((1, 3)), np.zeros(1), np.ones(1))


class TestTranslate:
    def test_closed_shell_limit(self):
        rho = np.array([0.3, 1.2])
        ra, rb, _, _ = translate(rho, np.zeros((2, 3)), rho**2 / 4)
        np.testing.assert_allclose(ra, rho / 2, rtol=1e-15)
        np.testing.assert_allclose(rb, rho / 2, rtol=1e-15)

    def test_polarised_limit(self):
        rho = np.array([0.3, 1.2])
        ra, rb, _, _ = translate(rho, np.zeros((2, 3)), np.zeros(2))
        np.testing.assert_array_equal(ra, rho)
        np.testing.assert_array_equal(rb, 0.0)

    def test_closed_form_split(self):
        ra, rb, _, _ = translate(np.array([1.0]), np.zeros((1, 3)), np.array([0.75 / 4]))
        assert ra[0] == pytest.approx(0.75, abs=1e-15)
        assert rb[0] == pytest.approx(0.25, abs=1e-15)

    def test_large_ratio_branch_and_cutoff(self):
        ra, rb, ga, gb = translate(np.array([1.0, 1e-13]), np.ones((2, 3)), np.array([0.5, 0.0]))
        assert ra[0] == rb[0] == 0.5
        assert ra[1] == rb[1] == 0.0
        assert not np.any(ga[1]) and not np.any(gb[1])

    def test_sum_rules(self):
        rng = np.random.default_rng(0)
        rho = rng.uniform(0.0, 3.0, 500)
        pi = rng.uniform(0.0, 0.4, 500) * rho**2
        grad = rng.normal(size=(500, 3))
        ra, rb, ga, gb = translate(rho, grad, pi)
        np.testing.assert_allclose(ra + rb, rho, rtol=1e-15, atol=0)
        np.testing.assert_allclose(ga + gb, grad, rtol=1e-14, atol=1e-15)


class TestOnTopFunctional:
    def test_zero_density(self):
        dens = GridDensities(np.zeros(4), np.zeros((4, 3)), np.zeros(4), np.ones(4))
        for name in ("tPBE", "tBLYP"):
            assert eval_ot_functional(dens, name) == 0.0

    def test_unknown_name(self, h2_setup):
        _, _, grid, state = h2_setup
        with pytest.raises(ValueError):
            eval_ot_functional(densities_from_rdms(*measure_rdms(state), grid), "ftPBE")

    def test_determinant_equals_restricted_pbe(self, h2_setup):
        _, ints, grid, state = h2_setup
        d1, d2 = measure_rdms(CiState.aufbau(state.basis))
        dens = densities_from_rdms(d1, d2, grid)
        ref = grid.integrate(restricted_pbe_energy_density(dens.rho, np.linalg.norm(dens.grad_rho, axis=1)))
        assert eval_ot_functional(dens, "tPBE") == pytest.approx(ref, abs=1e-10)

    def test_rotation_invariance(self):
        geom, ints, grid = _system(4, 1.8, n_radial=30, n_theta=10, n_phi=20)
        _, state = ground_state(ints)
        d1, d2 = measure_rdms(state)
        u, _ = np.linalg.qr(np.random.default_rng(1).normal(size=(4, 4)))
        rotated = QuadratureGrid(grid.points, grid.weights, grid.orbital_values @ u,
                                 np.einsum("gpx,pq->gqx", grid.orbital_gradients, u))
        ref = eval_ot_functional(densities_from_rdms(d1, d2, grid), "tPBE")
        assert eval_ot_functional(densities_from_rdms(*_rotate(d1, d2, u), rotated), "tPBE") == pytest.approx(ref, abs=1e-10)


class TestMcpdftEnergy:
    def test_golden_values(self, h2_setup):
        _, ints, grid, state = h2_setup
        d1, d2 = measure_rdms(state)
        assert mcpdft_energy(ints, d1, d2, grid, "tPBE").e_total == pytest.approx(H2_FCI_TPBE, abs=1e-6)
        assert mcpdft_energy(ints, d1, d2, grid, "tBLYP").e_total == pytest.approx(H2_FCI_TBLYP, abs=1e-6)

    def test_parts_sum_exactly(self, h2_setup):
        _, ints, grid, state = h2_setup
        r = mcpdft_energy(ints, *measure_rdms(state), grid)
        assert r.e_total == r.e_nuclear + r.e_kinetic_plus_ext + r.e_coulomb + r.e_ot
        assert r.e_nuclear == ints.core_energy
        assert set(r.as_dict()) == {"functional", "e_nuclear", "e_kinetic_plus_ext", "e_coulomb", "e_ot", "e_total"}

    def test_classical_part_of_determinant(self, h2_setup):
        _, ints, _, state = h2_setup
        d1, _ = measure_rdms(CiState.aufbau(state.basis))
        one, coulomb = classical_energy(ints, d1)
        assert one == pytest.approx(2 * ints.one_body[0, 0], abs=1e-14)
        assert coulomb == pytest.approx(2 * ints.two_body[0, 0, 0, 0], abs=1e-14)

    def test_grid_convergence(self, h2_setup):
        geom, ints, grid, state = h2_setup
        d1, d2 = measure_rdms(state)
        fine = orbital_grid(geom, ints.ao_coefficients, n_radial=90, n_theta=26, n_phi=52)
        assert fine.n_points > grid.n_points
        diff = mcpdft_energy(ints, d1, d2, fine).e_total - mcpdft_energy(ints, d1, d2, grid).e_total
        assert abs(diff) <= 1e-5

    def test_repeat_is_bit_identical(self, h2_setup):
        _, ints, grid, state = h2_setup
        d1, d2 = measure_rdms(state)
        assert mcpdft_energy(ints, d1, d2, grid) == mcpdft_energy(ints, d1, d2, grid)

    def test_dimension_mismatch(self, h2_setup, h4):
        _, ints, grid, state = h2_setup
        basis = DeterminantBasis.build(4, 2, 2)
        with pytest.raises(DimensionError):
            classical_energy(ints, measure_rdms(CiState.aufbau(basis))[0])
