import numpy as np
import pytest

from rdmhybrid.functionals import (
    b88_exchange,
    lda_exchange,
    lyp_correlation,
    pbe_correlation,
    pbe_exchange,
    pw92_correlation,
    xc_energy_density,
)

from oracles import restricted_pbe_energy_density

DIRAC = -0.75 * (3.0 / np.pi) ** (1.0 / 3.0)


def _random_inputs(seed, n=64):
    rng = np.random.default_rng(seed)
    rho_a = rng.uniform(1e-3, 2.0, n)
    rho_b = rng.uniform(1e-3, 2.0, n)
    ga, gb = rng.normal(size=(2, n, 3))
    return rho_a, rho_b, ga, gb


class TestUniformGasLimits:
    def test_pbe_reduces_to_dirac_exchange(self):
        zero = np.zeros(1)
        half = np.array([0.5])
        ex = pbe_exchange(half, half, zero, zero, zero)
        # rho = 1 unpolarised: e_x = -(3/4)(3/pi)^(1/3) rho^(4/3)
        assert ex[0] == pytest.approx(DIRAC, abs=1e-15)
        assert lda_exchange(half, half)[0] == pytest.approx(DIRAC, abs=1e-15)
        assert b88_exchange(half, half, zero, zero, zero)[0] == pytest.approx(DIRAC, abs=1e-15)

    def test_exchange_spin_scaling(self):
        rho = np.array([0.3, 1.7])
        zero = np.zeros(2)
        # fully polarised density rho: e_x = 2^(1/3) times the unpolarised value
        np.testing.assert_allclose(lda_exchange(rho, zero), 2 ** (1 / 3) * DIRAC * rho ** (4 / 3), rtol=1e-14)

    def test_pbe_correlation_reduces_to_pw92(self):
        rho_a, rho_b, _, _ = _random_inputs(1)
        zero = np.zeros_like(rho_a)
        np.testing.assert_allclose(pbe_correlation(rho_a, rho_b, zero, zero, zero), pw92_correlation(rho_a, rho_b), rtol=1e-14)

    def test_pw92_high_density_limit(self):
        # eps_c -> c0 ln(rs) + const as rs -> 0, with the exact c0 = (1 - ln 2) / pi^2
        rs = np.array([1e-8, 1e-7])
        n = 3.0 / (4.0 * np.pi * rs**3)
        eps = pw92_correlation(n / 2, n / 2) / n
        slope = (eps[1] - eps[0]) / np.log(10.0)
        assert slope == pytest.approx((1.0 - np.log(2.0)) / np.pi**2, rel=1e-3)

    def test_pw92_against_libxc(self):
        # the modified PW92 parameterisation is the one PBE correlation builds on
        libxc = pytest.importorskip("pyscf.dft.libxc")
        rho_a, rho_b, _, _ = _random_inputs(4)
        ref = libxc.eval_xc("LDA_C_PW_MOD", (rho_a, rho_b), spin=1, deriv=0)[0] * (rho_a + rho_b)
        np.testing.assert_allclose(pw92_correlation(rho_a, rho_b), ref, rtol=1e-12)

    def test_lyp_vanishes_for_one_spin(self):
        rho = np.array([0.1, 0.8])
        sig = np.array([0.05, 0.3])
        zero = np.zeros(2)
        np.testing.assert_allclose(lyp_correlation(rho, zero, sig, zero, zero), 0.0, atol=1e-15)

    def test_zero_density(self):
        zero = np.zeros(3)
        for name in ("PBE", "BLYP"):
            assert not np.any(xc_energy_density(name, zero, zero, zero, zero, zero))


class TestRestrictedOracle:
    def test_pbe_matches_closed_shell_formula(self):
        rho_a, _, ga, _ = _random_inputs(2)
        n = 2.0 * rho_a
        grad = 2.0 * ga
        s = np.einsum("gx,gx->g", ga, ga)
        ours = xc_energy_density("PBE", rho_a, rho_a, s, s, s)
        ref = restricted_pbe_energy_density(n, np.linalg.norm(grad, axis=1))
        np.testing.assert_allclose(ours, ref, rtol=1e-12)


class TestLibxc:
    @pytest.mark.parametrize("name,code", [("PBE", "PBE,PBE"), ("BLYP", "B88,LYP")])
    def test_polarised_against_libxc(self, name, code):
        libxc = pytest.importorskip("pyscf.dft.libxc")
        rho_a, rho_b, ga, gb = _random_inputs(3)
        rho = (np.vstack([rho_a, ga.T]), np.vstack([rho_b, gb.T]))
        ref = libxc.eval_xc(code, rho, spin=1, deriv=0)[0] * (rho_a + rho_b)
        ours = xc_energy_density(
            name, rho_a, rho_b,
            np.einsum("gx,gx->g", ga, ga), np.einsum("gx,gx->g", ga, gb), np.einsum("gx,gx->g", gb, gb),
        )
        np.testing.assert_allclose(ours, ref, rtol=1e-12, atol=1e-14)


def test_unknown_functional():
    with pytest.raises(ValueError):
        xc_energy_density("SCAN", *np.zeros((5, 1)))
