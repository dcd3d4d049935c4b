import io

import numpy as np
import pytest

from rdmhybrid import _kernels
from rdmhybrid.errors import ConvergenceError, DimensionError
from rdmhybrid.fci import (
    CiState,
    DeterminantBasis,
    apply_hamiltonian,
    davidson,
    ground_state,
    hamiltonian_matrix,
    measure_rdm3,
    measure_rdms,
    read_state,
    transition_rdm2,
    write_state,
)
from rdmhybrid.integrals import IntegralSet, transform_integrals
from rdmhybrid.rdm import rdm_energy, wedge, wedge11

from conftest import H2_FCI_ENERGY, H4_FCI_ENERGY, H6_FCI_ENERGY, hf_system
from oracles import FockSpace


def _oracle(ints):
    fock = FockSpace(2 * ints.n_spatial)
    return fock, *fock.ground_state(ints.one_body, ints.two_body, ints.core_energy, ints.n_alpha, ints.n_beta)


class TestBasis:
    def test_counts_and_order(self):
        basis = DeterminantBasis.build(3, 2, 1)
        assert basis.size == 9
        dets = basis.dets
        assert dets == sorted(dets)
        for a, b in dets:
            assert bin(a).count("1") == 2 and bin(b).count("1") == 1

    def test_rejects_overfilled(self):
        with pytest.raises(DimensionError):
            DeterminantBasis.build(2, 3, 0)

    def test_state_norm_enforced(self):
        basis = DeterminantBasis.build(2, 1, 1)
        with pytest.raises(ValueError):
            CiState(basis, np.ones(basis.size))


class TestHamiltonian:
    def test_one_electron_one_orbital(self):
        ints = IntegralSet(1, 1, 0, np.array([[-0.5]]), np.zeros((1,) * 4), core_energy=0.3)
        basis = DeterminantBasis.build(1, 1, 0)
        state = CiState(basis, np.array([1.0]))
        np.testing.assert_allclose(apply_hamiltonian(ints, state), [-0.5 + 0.3], atol=1e-15)

    @pytest.mark.parametrize("n_atoms,spacing", [(2, 1.4), (4, 1.8)])
    def test_matches_operator_algebra(self, n_atoms, spacing):
        ints = hf_system(n_atoms, spacing)
        basis = DeterminantBasis.build(ints.n_spatial, ints.n_alpha, ints.n_beta)
        h = hamiltonian_matrix(ints, basis).toarray()
        assert np.abs(h - h.T).max() <= 1e-12
        fock = FockSpace(2 * ints.n_spatial)
        h_ref = fock.hamiltonian(ints.one_body, ints.two_body, ints.core_energy)
        np.testing.assert_allclose(h, h_ref[basis.masks][:, basis.masks].toarray(), atol=1e-12)

    def test_eigen_relation(self, h4, h4_fci):
        energy, state = h4_fci
        np.testing.assert_allclose(apply_hamiltonian(h4, state), energy * state.coeffs, atol=1e-10)

    def test_dimension_mismatch(self, h2):
        basis = DeterminantBasis.build(3, 1, 1)
        with pytest.raises(DimensionError):
            hamiltonian_matrix(h2, basis)


class TestGroundState:
    def test_h2_golden(self, h2):
        _, energy, _ = _oracle(h2)
        assert energy == pytest.approx(H2_FCI_ENERGY, abs=1e-10)
        assert ground_state(h2)[0] == pytest.approx(H2_FCI_ENERGY, abs=1e-10)

    def test_h4_dense_davidson_agree(self, h4):
        e_dense, s_dense = ground_state(h4, method="dense")
        e_dav, s_dav = ground_state(h4, method="davidson")
        assert e_dense == pytest.approx(H4_FCI_ENERGY, abs=1e-10)
        assert abs(e_dense - e_dav) < 1e-9
        assert abs(abs(s_dense.coeffs @ s_dav.coeffs) - 1.0) < 1e-9

    def test_h6_golden(self):
        ints = hf_system(6, 1.8)
        e_dav, _ = ground_state(ints, method="davidson")
        e_dense, _ = ground_state(ints, method="dense")
        assert e_dav == pytest.approx(H6_FCI_ENERGY, abs=1e-9)
        assert abs(e_dav - e_dense) < 1e-9

    def test_sign_convention(self, h4_fci):
        _, state = h4_fci
        pivot = np.argmax(np.abs(state.coeffs))
        assert state.coeffs[pivot] > 0

    def test_single_determinant_basis(self, h2):
        # two alpha and two beta electrons fill both spatial orbitals
        energy, state = ground_state(h2, n_alpha=2, n_beta=2)
        assert state.basis.size == 1
        assert energy == pytest.approx(rdm_energy(h2, *measure_rdms(state)), abs=1e-12)

    def test_orbital_reordering_invariance(self, h4):
        perm = np.eye(h4.n_spatial)[:, [2, 0, 3, 1]]
        energy, _ = ground_state(transform_integrals(h4, perm))
        assert energy == pytest.approx(H4_FCI_ENERGY, abs=1e-10)

    def test_davidson_nonconvergence(self, h4):
        basis = DeterminantBasis.build(4, 2, 2)
        h = hamiltonian_matrix(h4, basis)
        with pytest.raises(ConvergenceError):
            davidson(lambda x: h @ x, h.diagonal(), max_iter=2)

    def test_unknown_method(self, h2):
        with pytest.raises(ValueError):
            ground_state(h2, method="lanczos")


class TestRdms:
    def test_determinant_elements(self):
        basis = DeterminantBasis.build(2, 1, 1)
        d1, d2 = measure_rdms(CiState.determinant(basis, [0, 1]))
        assert d2[0, 1, 0, 1] == 1.0
        assert d2[0, 1, 1, 0] == -1.0
        assert d2[1, 0, 0, 1] == -1.0
        assert np.einsum("ijij->", d2) == pytest.approx(2.0)
        assert np.count_nonzero(d2) == 4

    def test_fci_closure(self, h2, h2_fci):
        energy, state = h2_fci
        assert rdm_energy(h2, *measure_rdms(state)) == pytest.approx(energy, abs=1e-10)

    def test_double_excitation_superposition(self):
        basis = DeterminantBasis.build(2, 1, 1)
        coeffs = np.zeros(basis.size)
        coeffs[basis.index_of_orbitals([0, 1])] = 0.6
        coeffs[basis.index_of_orbitals([2, 3])] = 0.8
        state = CiState(basis, coeffs)
        _, d2 = measure_rdms(state)
        fock = FockSpace(4)
        ref = fock.rdm2(fock.embed(basis.masks, coeffs))
        np.testing.assert_allclose(d2, ref, atol=1e-14)
        # <a+_2 a+_3 a_1 a_0>: |{2,3}> = a+_2 a+_3 a_1 a_0 |{0,1}> with sign +1
        assert d2[2, 3, 0, 1] == pytest.approx(0.6 * 0.8, abs=1e-14)

    def test_random_states_match_oracle(self):
        rng = np.random.default_rng(11)
        basis = DeterminantBasis.build(4, 2, 1)
        fock = FockSpace(8)
        for _ in range(3):
            state = CiState.normalized(basis, rng.normal(size=basis.size))
            psi = fock.embed(basis.masks, state.coeffs)
            d1, d2 = measure_rdms(state)
            np.testing.assert_allclose(d1, fock.rdm1(psi), atol=1e-13)
            np.testing.assert_allclose(d2, fock.rdm2(psi), atol=1e-13)
            np.testing.assert_allclose(measure_rdm3(state), fock.rdm3(psi), atol=1e-13)

    def test_rdm3_two_electrons_is_zero(self, h2_fci):
        assert not np.any(measure_rdm3(h2_fci[1]))

    def test_rdm3_three_electron_determinant(self):
        basis = DeterminantBasis.build(3, 2, 1)
        state = CiState.determinant(basis, [0, 2, 1])
        d1, _ = measure_rdms(state)
        # 3! (d1 ^ d1 ^ d1) with the normalised antisymmetriser
        np.testing.assert_allclose(measure_rdm3(state), 6.0 * wedge(wedge11(d1, d1), d1), atol=1e-12)

    def test_rdm3_trace(self):
        rng = np.random.default_rng(5)
        basis = DeterminantBasis.build(4, 2, 2)
        for _ in range(3):
            d3 = measure_rdm3(CiState.normalized(basis, rng.normal(size=basis.size)))
            assert np.einsum("ijkijk->", d3) == pytest.approx(24.0, abs=1e-10)

    def test_transition_rdm_is_hermitian_pair(self):
        rng = np.random.default_rng(6)
        basis = DeterminantBasis.build(3, 1, 1)
        x, y = rng.normal(size=(2, basis.size))
        np.testing.assert_allclose(transition_rdm2(basis, x, y), transition_rdm2(basis, y, x).transpose(2, 3, 0, 1), atol=1e-14)


class TestBackends:
    @pytest.fixture
    def restore_backend(self):
        previous = _kernels.get_backend()
        yield
        _kernels.set_backend(previous)

    def test_numba_and_numpy_agree(self, h4, restore_backend):
        basis = DeterminantBasis.build(4, 2, 2)
        rng = np.random.default_rng(8)
        c = rng.normal(size=basis.size)
        out = {}
        for name in ("numba", "numpy"):
            _kernels.set_backend(name)
            state = CiState.normalized(basis, c)
            out[name] = (hamiltonian_matrix(h4, basis).toarray(), *measure_rdms(state), measure_rdm3(state))
        for a, b in zip(out["numba"], out["numpy"]):
            np.testing.assert_allclose(a, b, atol=1e-13)

    def test_unknown_backend(self, restore_backend):
        with pytest.raises(ValueError):
            _kernels.set_backend("cuda")


class TestStateFile:
    def test_round_trip(self, h4_fci):
        _, state = h4_fci
        buf = io.StringIO()
        write_state(buf, state, {"seed": 1})
        buf.seek(0)
        again = read_state(buf)
        assert again.basis.dets == state.basis.dets
        np.testing.assert_array_equal(again.coeffs, state.coeffs)

    def test_empty(self):
        with pytest.raises(ValueError):
            read_state(io.StringIO("# only a comment\n"))
