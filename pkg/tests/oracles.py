"""Independent reference implementations used only by the tests.

Nothing here imports the package's CI, RDM or functional code:

* :class:`FockSpace` builds fermionic annihilation operators as sparse
  matrices on the full occupation-number space (basis index = occupation
  bitmask, Jordan-Wigner signs), assembles the Hamiltonian directly from the
  spatial chemists'-notation integrals and diagonalises it densely inside a
  particle-number/Sz sector.  Expectation values (1-, 2-, 3-RDMs, Q and G)
  are plain operator products.
* :func:`restricted_pbe_energy_density` is a closed-shell (unpolarised) PBE
  exchange-correlation energy density written from the published formulas.
"""
from __future__ import annotations

import itertools

import numpy as np
import scipy.sparse as sp


class FockSpace:
    """Fermionic operators on ``2**n_modes`` occupation-number states."""

    def __init__(self, n_modes):
        self.n_modes = n_modes
        self.dim = 1 << n_modes
        states = np.arange(self.dim)
        self.annihilators = []
        for p in range(n_modes):
            occupied = (states >> p) & 1 == 1
            source = states[occupied]
            target = source ^ (1 << p)
            below = source & ((1 << p) - 1)
            parity = np.array([bin(int(x)).count("1") & 1 for x in below])
            values = np.where(parity == 1, -1.0, 1.0)
            self.annihilators.append(
                sp.csr_matrix((values, (target, source)), shape=(self.dim, self.dim))
            )
        self.creators = [a.T.tocsr() for a in self.annihilators]

    def number_sector(self, n_alpha, n_beta):
        """Fock indices with ``n_alpha`` even-mode and ``n_beta`` odd-mode electrons."""
        idx = []
        for m in range(self.dim):
            na = sum((m >> p) & 1 for p in range(0, self.n_modes, 2))
            nb = sum((m >> p) & 1 for p in range(1, self.n_modes, 2))
            if na == n_alpha and nb == n_beta:
                idx.append(m)
        return np.array(idx, dtype=np.int64)

    def hamiltonian(self, one_body, two_body, core=0.0):
        """``H = core + sum h_pq a+_ps a_qs + 1/2 sum (pq|rs) a+_ps a+_rt a_st a_qs``."""
        n = one_body.shape[0]
        a, c = self.annihilators, self.creators
        h = core * sp.identity(self.dim, format="csr")
        for p, q in itertools.product(range(n), repeat=2):
            if one_body[p, q] == 0.0:
                continue
            for s in (0, 1):
                h = h + one_body[p, q] * (c[2 * p + s] @ a[2 * q + s])
        for p, q, r, s_ in itertools.product(range(n), repeat=4):
            v = two_body[p, q, r, s_]
            if v == 0.0:
                continue
            for sig, tau in itertools.product((0, 1), repeat=2):
                op = c[2 * p + sig] @ c[2 * r + tau] @ a[2 * s_ + tau] @ a[2 * q + sig]
                h = h + 0.5 * v * op
        return h.tocsr()

    def ground_state(self, one_body, two_body, core, n_alpha, n_beta):
        """Lowest eigenpair in the sector; the vector is returned in the full Fock space."""
        h = self.hamiltonian(one_body, two_body, core)
        sector = self.number_sector(n_alpha, n_beta)
        block = h[sector][:, sector].toarray()
        w, v = np.linalg.eigh(block)
        psi = np.zeros(self.dim)
        psi[sector] = v[:, 0]
        return float(w[0]), psi

    # expectation values -------------------------------------------------

    def rdm1(self, psi):
        n = self.n_modes
        return np.array([[psi @ (self.creators[i] @ (self.annihilators[j] @ psi)) for j in range(n)] for i in range(n)])

    def rdm2(self, psi):
        """``d2[i,j,k,l] = <a+_i a+_j a_l a_k>``."""
        n = self.n_modes
        a = self.annihilators
        pair = np.zeros((n, n, self.dim))
        for k in range(n):
            for l in range(n):
                pair[k, l] = a[l] @ (a[k] @ psi)
        return np.einsum("ijx,klx->ijkl", pair, pair)

    def rdm3(self, psi):
        n = self.n_modes
        a = self.annihilators
        triple = np.zeros((n, n, n, self.dim))
        for q, s, t in itertools.product(range(n), repeat=3):
            triple[q, s, t] = a[t] @ (a[s] @ (a[q] @ psi))
        return np.einsum("ijkx,qstx->ijkqst", triple, triple)

    def q_matrix(self, psi):
        """``Q[i,j,k,l] = <a_i a_j a+_l a+_k>``."""
        n = self.n_modes
        c = self.creators
        pair = np.zeros((n, n, self.dim))
        for k in range(n):
            for l in range(n):
                pair[k, l] = c[l] @ (c[k] @ psi)
        return np.einsum("ijx,klx->ijkl", pair, pair)

    def g_matrix(self, psi):
        """``G[i,j,k,l] = <a+_i a_j a+_l a_k>``."""
        n = self.n_modes
        a, c = self.annihilators, self.creators
        vec = np.zeros((n, n, self.dim))
        for k in range(n):
            for l in range(n):
                vec[k, l] = c[l] @ (a[k] @ psi)
        return np.einsum("ijx,klx->ijkl", vec, vec)

    def pair_commutator(self, psi, op):
        """``A[i,j,k,l] = <psi|[a+_i a+_j a_l a_k, op]|psi>`` for a real operator ``op``."""
        n = self.n_modes
        a = self.annihilators
        phi = op @ psi
        u = np.zeros((n, n, self.dim))
        w = np.zeros((n, n, self.dim))
        for k in range(n):
            for l in range(n):
                u[k, l] = a[l] @ (a[k] @ psi)
                w[k, l] = a[l] @ (a[k] @ phi)
        return np.einsum("ijx,klx->ijkl", u, w) - np.einsum("ijx,klx->ijkl", w, u)

    def embed(self, masks, coeffs):
        psi = np.zeros(self.dim)
        psi[np.asarray(masks, dtype=np.int64)] = coeffs
        return psi


def hf_energy(one_body, two_body, core, n_occ):
    """Closed-shell determinant energy from spatial integrals (occupied orbitals ``0..n_occ-1``)."""
    o = slice(0, n_occ)
    one = 2.0 * np.trace(one_body[o, o])
    coulomb = 2.0 * np.einsum("iijj->", two_body[o, o, o, o])
    exchange = np.einsum("ijji->", two_body[o, o, o, o])
    return core + one + coulomb - exchange


# ---------------------------------------------------------------------------
# closed-shell PBE

_PBE_KAPPA = 0.804
_PBE_BETA = 0.06672455060314922
_PBE_MU = _PBE_BETA * np.pi**2 / 3.0
_PBE_GAMMA = (1.0 - np.log(2.0)) / np.pi**2
_PW92_A, _PW92_ALPHA1 = 0.0310907, 0.21370
_PW92_BETAS = (7.5957, 3.5876, 1.6382, 0.49294)


def restricted_pbe_energy_density(n, grad_norm):
    """Unpolarised PBE ``e_xc`` (energy per volume) from ``n`` and ``|grad n|``."""
    n = np.asarray(n, dtype=float)
    g = np.asarray(grad_norm, dtype=float)
    out = np.zeros_like(n)
    ok = n > 1e-14
    n, g = n[ok], g[ok]
    kf = (3.0 * np.pi**2 * n) ** (1.0 / 3.0)
    # exchange
    s = g / (2.0 * kf * n)
    fx = 1.0 + _PBE_KAPPA - _PBE_KAPPA / (1.0 + _PBE_MU * s**2 / _PBE_KAPPA)
    ex = -0.75 * (3.0 / np.pi) ** (1.0 / 3.0) * n ** (4.0 / 3.0) * fx
    # PW92 correlation at zeta = 0
    rs = (3.0 / (4.0 * np.pi * n)) ** (1.0 / 3.0)
    b1, b2, b3, b4 = _PW92_BETAS
    denom = 2.0 * _PW92_A * (b1 * np.sqrt(rs) + b2 * rs + b3 * rs**1.5 + b4 * rs**2)
    eps_c = -2.0 * _PW92_A * (1.0 + _PW92_ALPHA1 * rs) * np.log(1.0 + 1.0 / denom)
    # gradient correction at phi = 1
    ks = np.sqrt(4.0 * kf / np.pi)
    t = g / (2.0 * ks * n)
    big_a = (_PBE_BETA / _PBE_GAMMA) / (np.exp(-eps_c / _PBE_GAMMA) - 1.0)
    at2 = big_a * t**2
    h = _PBE_GAMMA * np.log(1.0 + (_PBE_BETA / _PBE_GAMMA) * t**2 * (1.0 + at2) / (1.0 + at2 + at2**2))
    out[ok] = ex + n * (eps_c + h)
    return out
