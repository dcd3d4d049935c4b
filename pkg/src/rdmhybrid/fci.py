"""Exact diagonalisation over Sz-resolved Slater determinants.

Determinants are stored as spin-orbital occupation bitmasks with spin
orbital ``p = 2 * spatial + spin`` (``spin = 0`` for alpha).  Bases are
ordered lexicographically by ``(alpha_mask, beta_mask)`` where the alpha and
beta masks are the spatial occupation bit patterns of each spin.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import _kernels
from .errors import ConvergenceError, DimensionError
from .integrals import spin_orbital_hamiltonian

__all__ = [
    "DeterminantBasis",
    "CiState",
    "hamiltonian_matrix",
    "apply_hamiltonian",
    "davidson",
    "ground_state",
    "measure_rdms",
    "measure_rdm3",
    "transition_rdm2",
    "write_state",
    "read_state",
    "DENSE_LIMIT",
]

DENSE_LIMIT = 2000


def _spread(mask, spin):
    """Map a spatial occupation mask onto spin-orbital bits of one spin."""
    out = 0
    bit = 0
    while mask >> bit:
        if (mask >> bit) & 1:
            out |= 1 << (2 * bit + spin)
        bit += 1
    return out


def _spatial_masks(n_spatial, n_occ):
    masks = [sum(1 << i for i in occ) for occ in itertools.combinations(range(n_spatial), n_occ)]
    return sorted(masks)


@dataclass(frozen=True)
class DeterminantBasis:
    n_spatial: int
    n_alpha: int
    n_beta: int
    alpha_masks: np.ndarray = field(repr=False)
    beta_masks: np.ndarray = field(repr=False)
    masks: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, n_spatial, n_alpha, n_beta):
        if not (0 <= n_alpha <= n_spatial and 0 <= n_beta <= n_spatial):
            raise DimensionError(
                f"cannot place ({n_alpha}, {n_beta}) electrons in {n_spatial} orbitals"
            )
        if 2 * n_spatial > 62:
            raise DimensionError("at most 31 spatial orbitals fit in an int64 mask")
        alphas = _spatial_masks(n_spatial, n_alpha)
        betas = _spatial_masks(n_spatial, n_beta)
        pairs = [(a, b) for a in alphas for b in betas]
        alpha = np.array([a for a, _ in pairs], dtype=np.int64)
        beta = np.array([b for _, b in pairs], dtype=np.int64)
        masks = np.array([_spread(a, 0) | _spread(b, 1) for a, b in pairs], dtype=np.int64)
        return cls(n_spatial, n_alpha, n_beta, alpha, beta, masks)

    @property
    def n_spin_orbitals(self):
        return 2 * self.n_spatial

    @property
    def n_electrons(self):
        return self.n_alpha + self.n_beta

    @property
    def size(self):
        return int(self.masks.size)

    @property
    def dets(self):
        return list(zip(self.alpha_masks.tolist(), self.beta_masks.tolist()))

    def index(self, alpha_mask, beta_mask):
        """Position of the determinant ``(alpha_mask, beta_mask)``."""
        target = _spread(int(alpha_mask), 0) | _spread(int(beta_mask), 1)
        hits = np.flatnonzero(self.masks == target)
        if hits.size == 0:
            raise KeyError(f"determinant ({alpha_mask}, {beta_mask}) not in basis")
        return int(hits[0])

    def index_of_orbitals(self, spin_orbitals):
        target = sum(1 << int(p) for p in spin_orbitals)
        hits = np.flatnonzero(self.masks == target)
        if hits.size == 0:
            raise KeyError(f"occupation {sorted(spin_orbitals)} not in basis")
        return int(hits[0])


@dataclass(frozen=True)
class CiState:
    basis: DeterminantBasis
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float)
        if coeffs.shape != (self.basis.size,):
            raise DimensionError(
                f"{coeffs.shape[0] if coeffs.ndim else 0} coefficients for a basis of {self.basis.size}"
            )
        norm = np.linalg.norm(coeffs)
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"CiState coefficients have norm {norm!r}, expected 1")
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def normalized(cls, basis, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        return cls(basis, coeffs / np.linalg.norm(coeffs))

    @classmethod
    def determinant(cls, basis, spin_orbitals):
        coeffs = np.zeros(basis.size)
        coeffs[basis.index_of_orbitals(spin_orbitals)] = 1.0
        return cls(basis, coeffs)

    @classmethod
    def aufbau(cls, basis):
        """Lowest-orbital determinant (the HF reference in canonical orbitals)."""
        occ = [2 * i for i in range(basis.n_alpha)] + [2 * i + 1 for i in range(basis.n_beta)]
        return cls.determinant(basis, occ)


def hamiltonian_matrix(integrals, basis):
    """Sparse CI-space Hamiltonian including ``core_energy`` on the diagonal."""
    if integrals.n_spatial != basis.n_spatial:
        raise DimensionError(
            f"integrals have {integrals.n_spatial} orbitals, basis {basis.n_spatial}"
        )
    k, v = spin_orbital_hamiltonian(integrals)
    h = _kernels.operator_matrix(basis.masks, k, 4.0 * v, basis.n_spin_orbitals)
    if integrals.core_energy:
        h = h + integrals.core_energy * sp.identity(basis.size, format="csr")
    return sp.csr_matrix(h)


def apply_hamiltonian(integrals, state):
    """``H |state>`` as a coefficient vector."""
    return hamiltonian_matrix(integrals, state.basis) @ state.coeffs


def _fix_sign(vec):
    pivot = int(np.argmax(np.abs(vec)))
    return -vec if vec[pivot] < 0 else vec


def davidson(matvec, diagonal, guess=None, tol=1e-10, max_iter=500, max_subspace=40):
    """Lowest eigenpair of a symmetric operator by Davidson iteration.

    Starts from the unit vector on the smallest diagonal element unless
    ``guess`` is supplied; the subspace collapses to the current Ritz vector
    once it holds ``max_subspace`` vectors.  Convergence is on the residual
    2-norm.
    """
    n = diagonal.size
    if guess is None:
        guess = np.zeros(n)
        guess[int(np.argmin(diagonal))] = 1.0
    v = guess / np.linalg.norm(guess)
    basis = np.empty((n, 0))
    sigma = np.empty((n, 0))
    theta = 0.0
    for it in range(1, max_iter + 1):
        for _ in range(2):  # twice is enough for numerical orthogonality
            v = v - basis @ (basis.T @ v)
        norm = np.linalg.norm(v)
        if norm < 1e-14:
            raise ConvergenceError("Davidson subspace became linearly dependent")
        v /= norm
        basis = np.column_stack([basis, v])
        sigma = np.column_stack([sigma, matvec(v)])
        small = basis.T @ sigma
        theta_all, y_all = np.linalg.eigh(0.5 * (small + small.T))
        theta, y = theta_all[0], y_all[:, 0]
        x = basis @ y
        residual = sigma @ y - theta * x
        if np.linalg.norm(residual) < tol:
            return float(theta), x / np.linalg.norm(x), it
        denom = theta - diagonal
        denom[np.abs(denom) < 1e-8] = 1e-8
        v = residual / denom
        if basis.shape[1] >= max_subspace:
            basis = x[:, None] / np.linalg.norm(x)
            sigma = (sigma @ y)[:, None] / np.linalg.norm(x)
    raise ConvergenceError(f"Davidson did not converge in {max_iter} iterations")


def ground_state(integrals, n_alpha=None, n_beta=None, method="auto"):
    """Lowest eigenpair ``(energy, CiState)`` in the given Sz sector.

    ``method`` is ``"dense"``, ``"davidson"`` or ``"auto"`` (dense up to
    :data:`DENSE_LIMIT` determinants).  The eigenvector's largest-magnitude
    coefficient is made positive.
    """
    n_alpha = integrals.n_alpha if n_alpha is None else n_alpha
    n_beta = integrals.n_beta if n_beta is None else n_beta
    basis = DeterminantBasis.build(integrals.n_spatial, n_alpha, n_beta)
    h = hamiltonian_matrix(integrals, basis)
    if method == "auto":
        method = "dense" if basis.size <= DENSE_LIMIT else "davidson"
    if method == "dense":
        dense = h.toarray()
        evals, evecs = scipy.linalg.eigh(dense, subset_by_index=(0, 0))
        energy, vec = float(evals[0]), evecs[:, 0]
    elif method == "davidson":
        energy, vec, _ = davidson(lambda x: h @ x, h.diagonal())
    else:
        raise ValueError(f"unknown method {method!r}")
    vec = _fix_sign(vec / np.linalg.norm(vec))
    return energy, CiState(basis, vec)


def measure_rdms(state):
    """Exact ``(d1, d2)`` of a CiState."""
    masks, nso = state.basis.masks, state.basis.n_spin_orbitals
    c = state.coeffs
    d1 = _kernels.transition_rdm(masks, c, c, nso, 1)
    d2 = _kernels.transition_rdm(masks, c, c, nso, 2)
    return d1, d2


def measure_rdm3(state):
    """Exact 3-RDM ``<a+_i a+_j a+_k a_t a_s a_q>`` of a CiState."""
    masks, nso = state.basis.masks, state.basis.n_spin_orbitals
    return _kernels.transition_rdm(masks, state.coeffs, state.coeffs, nso, 3)


def transition_rdm2(basis, bra, ket):
    """``<bra| a+_i a+_j a_l a_k |ket>`` for arbitrary coefficient vectors."""
    return _kernels.transition_rdm(basis.masks, bra, ket, basis.n_spin_orbitals, 2)


# ---------------------------------------------------------------------------
# text format


def write_state(stream, state, provenance=None):
    """Header ``n_spatial n_alpha n_beta`` then ``alpha_mask beta_mask coeff``."""
    for key in sorted(provenance or {}):
        stream.write(f"# {key} = {provenance[key]}\n")
    b = state.basis
    stream.write(f"{b.n_spatial} {b.n_alpha} {b.n_beta}\n")
    for (a, bm), c in zip(b.dets, state.coeffs):
        stream.write(f"{a} {bm} {float(c)!r}\n")


def read_state(stream):
    """Inverse of :func:`write_state`; missing determinants get coefficient 0."""
    header = None
    coeffs = None
    basis = None
    for raw in stream:
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if header is None:
            header = tuple(int(t) for t in tokens)
            if len(header) != 3:
                raise ValueError("state header must read 'n_spatial n_alpha n_beta'")
            basis = DeterminantBasis.build(*header)
            coeffs = np.zeros(basis.size)
            continue
        if len(tokens) != 3:
            raise ValueError(f"malformed state record {line!r}")
        coeffs[basis.index(int(tokens[0]), int(tokens[1]))] = float(tokens[2])
    if header is None:
        raise ValueError("empty state file")
    return CiState(basis, coeffs)
