"""Emulated noisy state preparation and finite-shot 2-RDM tomography.

The "device" state is a CI-space density matrix.  Each accepted ACSE unitary
is followed by a depolarising channel ``sigma -> (1 - p) sigma + p I / dim``
restricted to the particle-number/Sz sector.  Tomography then measures:

* one diagonal setting: determinant bitstrings sampled from ``diag(sigma)``
  with independent readout bit flips, from which every ``<n_i n_j>`` (the
  diagonal 2-RDM) is estimated from the same shots;
* one setting per symmetry-unique off-diagonal element ``(i<j) != (k<l)``
  that conserves Sz: the observable ``O = E + E^+`` with
  ``E = a+_i a+_j a_l a_k`` has eigenvalues ``{-1, 0, +1}``; outcomes are
  drawn from their exact distribution under ``sigma`` and readout errors
  flip the sign of a nonzero outcome with the flip probability.

Elements that violate Sz are zero by symmetry and not measured.  Every
setting draws from its own generator spawned from the master seed, so the
result does not depend on evaluation order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from . import _kernels
from .acse import (
    SolverConfig,
    acse_residual,
    generator_matrix,
    pair_antisymmetrize,
    run_iterations,
    step_statevector,
)
from .errors import DimensionError
from .fci import CiState, DeterminantBasis, hamiltonian_matrix, measure_rdm3, measure_rdms
from .rdm import valdemoro3

__all__ = [
    "NoiseModel",
    "TomographyPlan",
    "DensityMatrix",
    "QacseResult",
    "depolarize",
    "prepare_qacse_state",
    "tomograph_rdm2",
    "reconstruction_error_report",
    "MAX_DENSITY_DIM",
]

MAX_DENSITY_DIM = 4096


@dataclass(frozen=True)
class NoiseModel:
    depolarizing_p: float = 0.0
    readout_flip: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("depolarizing_p", "readout_flip"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValueError("seed must be a non-negative integer")


@dataclass(frozen=True)
class DensityMatrix:
    """Mixed state on a determinant basis."""

    basis: DeterminantBasis
    matrix: np.ndarray = field(repr=False)

    @classmethod
    def from_state(cls, state):
        return cls(state.basis, np.outer(state.coeffs, state.coeffs))

    @property
    def trace(self):
        return float(np.trace(self.matrix))

    def ensemble(self, cutoff=0.0):
        """Eigen-decomposition ``(weights, vectors)``; vectors are rows."""
        w, v = np.linalg.eigh(0.5 * (self.matrix + self.matrix.T))
        keep = w > cutoff
        return w[keep], v[:, keep].T

    def rdms(self):
        nso = self.basis.n_spin_orbitals
        d1 = np.zeros((nso, nso))
        d2 = np.zeros((nso,) * 4)
        for weight, vec in zip(*self.ensemble(1e-15)):
            d1 += weight * _kernels.transition_rdm(self.basis.masks, vec, vec, nso, 1)
            d2 += weight * _kernels.transition_rdm(self.basis.masks, vec, vec, nso, 2)
        return d1, d2

    def energy(self, integrals, h=None):
        if h is None:
            h = hamiltonian_matrix(integrals, self.basis)
        return float(np.sum((h @ self.matrix).diagonal()))


def depolarize(rho, p):
    """Depolarising channel on a density matrix (array or :class:`DensityMatrix`)."""
    matrix = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=float)
    dim = matrix.shape[0]
    out = (1.0 - p) * matrix + (p / dim) * np.eye(dim)
    return DensityMatrix(rho.basis, out) if isinstance(rho, DensityMatrix) else out


class DensityPropagator:
    """ACSE propagation of a density matrix with noise after each accepted unitary."""

    def __init__(self, integrals, rho, noise):
        self.integrals = integrals
        self.h = hamiltonian_matrix(integrals, rho.basis)
        self.noise = noise
        self.initial = rho

    def energy(self, rho):
        return rho.energy(self.integrals, self.h)

    def residual(self, rho):
        basis = rho.basis
        nso = basis.n_spin_orbitals
        out = np.zeros((nso,) * 4)
        for weight, vec in zip(*rho.ensemble(1e-15)):
            hv = self.h @ vec
            out += weight * (
                _kernels.transition_rdm(basis.masks, vec, hv, nso, 2)
                - _kernels.transition_rdm(basis.masks, hv, vec, nso, 2)
            )
        return pair_antisymmetrize(out)

    def step(self, rho, a, epsilon):
        u = scipy.linalg.expm(epsilon * generator_matrix(rho.basis, a).toarray())
        return DensityMatrix(rho.basis, u @ rho.matrix @ u.T)

    def accept(self, rho):
        if self.noise.depolarizing_p == 0.0:
            return rho
        return depolarize(rho, self.noise.depolarizing_p)

    def rdms(self, rho):
        return rho.rdms()


@dataclass
class QacseResult:
    density: DensityMatrix
    records: list
    energy: float
    reason: str


def prepare_qacse_state(integrals, config=None, noise=None, seed_state=None):
    """Run the ACSE on a noisy density matrix; returns a :class:`QacseResult`.

    Step acceptance and halving use the noise-free candidate, so ``p = 0``
    reproduces the statevector solver exactly.
    """
    config = config or SolverConfig()
    noise = noise or NoiseModel()
    if seed_state is None:
        basis = DeterminantBasis.build(integrals.n_spatial, integrals.n_alpha, integrals.n_beta)
        seed_state = CiState.aufbau(basis)
    if seed_state.basis.size > MAX_DENSITY_DIM:
        raise DimensionError(
            f"CI dimension {seed_state.basis.size} exceeds the density-matrix limit {MAX_DENSITY_DIM}"
        )
    propagator = DensityPropagator(integrals, DensityMatrix.from_state(seed_state), noise)
    sv_config = SolverConfig(**{**config.__dict__, "mode": "statevector"})
    records, rho, energy, reason, _ = run_iterations(propagator, sv_config)
    return QacseResult(rho, records, energy, reason)


# ---------------------------------------------------------------------------
# tomography


def _unique_pairs(nso):
    return [(i, j) for i in range(nso) for j in range(i + 1, nso)]


def _spin_of_pair(pair):
    return sum(p % 2 for p in pair)


@dataclass(frozen=True)
class TomographyPlan:
    """Measurement settings covering every 2-RDM element.

    ``shots_per_setting=None`` requests exact (infinite-shot) expectations.
    ``settings`` lists ``"diagonal"`` followed by the off-diagonal pair
    couples ``((i, j), (k, l))``; ``zero_by_symmetry`` lists the Sz-violating
    couples that are not measured.
    """

    nso: int
    shots_per_setting: Optional[int]
    settings: tuple
    zero_by_symmetry: tuple

    @classmethod
    def build(cls, nso, shots_per_setting=1000):
        if shots_per_setting is not None and shots_per_setting <= 0:
            raise ValueError("shots_per_setting must be positive (or None for exact)")
        pairs = _unique_pairs(nso)
        settings = ["diagonal"]
        zero = []
        for a in range(len(pairs)):
            for b in range(a + 1, len(pairs)):
                couple = (pairs[a], pairs[b])
                if _spin_of_pair(pairs[a]) == _spin_of_pair(pairs[b]):
                    settings.append(couple)
                else:
                    zero.append(couple)
        return cls(nso, shots_per_setting, tuple(settings), tuple(zero))

    @property
    def n_settings(self):
        return len(self.settings)

    def covered(self):
        """Boolean mask over all ``nso^4`` tuples fixed by the plan.

        A tuple is covered when it is zero by antisymmetry (repeated index in
        a pair) or is an antisymmetric/Hermitian image of a diagonal pair,
        a measured couple, or a couple that is zero by Sz symmetry.
        """
        n = self.nso
        idx = np.arange(n)
        cover = np.zeros((n,) * 4, dtype=bool)
        cover |= (idx[:, None] == idx[None, :])[:, :, None, None]
        cover |= (idx[:, None] == idx[None, :])[None, None, :, :]
        couples = [(p, p) for p in _unique_pairs(n)]
        couples += list(self.settings[1:]) + list(self.zero_by_symmetry)
        for (i, j), (k, l) in couples:
            for up in ((i, j), (j, i)):
                for lo in ((k, l), (l, k)):
                    cover[up + lo] = True
                    cover[lo + up] = True
        return cover


def _ensemble_of(state):
    if isinstance(state, CiState):
        return state.basis, np.array([1.0]), state.coeffs[:, None]
    weights, vectors = state.ensemble(1e-15)
    return state.basis, weights, vectors.T


def _connected(masks, i, j, k, l):
    """Indicator that ``a+_i a+_j a_l a_k`` or its adjoint acts nontrivially."""
    one = np.int64(1)
    bi, bj, bk, bl = (one << i), (one << j), (one << k), (one << l)
    has_kl = ((masks & bk) != 0) & ((masks & bl) != 0)
    rest = masks & ~(bk | bl)
    forward = has_kl & ((rest & bi) == 0) & ((rest & bj) == 0)
    has_ij = ((masks & bi) != 0) & ((masks & bj) != 0)
    rest = masks & ~(bi | bj)
    backward = has_ij & ((rest & bk) == 0) & ((rest & bl) == 0)
    return (forward | backward).astype(float)


def _fill(d2, i, j, k, l, value):
    d2[i, j, k, l] = value
    d2[j, i, k, l] = -value
    d2[i, j, l, k] = -value
    d2[j, i, l, k] = value


def tomograph_rdm2(state, plan, noise=None):
    """Estimate the 2-RDM of ``state`` (CiState or DensityMatrix) from the plan.

    The result is exactly antisymmetric and Hermitian by construction; its
    trace and positivity carry the sampling noise.
    """
    noise = noise or NoiseModel()
    basis, weights, vectors = _ensemble_of(state)
    nso = basis.n_spin_orbitals
    if plan.nso != nso:
        raise DimensionError(f"plan covers {plan.nso} spin orbitals, state has {nso}")
    masks = basis.masks
    f = noise.readout_flip
    shots = plan.shots_per_setting
    exact = np.zeros((nso,) * 4)
    for w, vec in zip(weights, vectors.T):
        exact += w * _kernels.transition_rdm(masks, vec, vec, nso, 2)
    populations = np.einsum("n,in->i", weights, vectors**2)
    populations = np.clip(populations, 0.0, None)
    populations /= populations.sum()
    streams = np.random.SeedSequence(noise.seed).spawn(plan.n_settings)
    d2 = np.zeros((nso,) * 4)

    # diagonal setting: <n_i n_j>
    bits = ((masks[:, None] >> np.arange(nso)) & 1).astype(float)
    if shots is None:
        mean_n = populations @ bits
        mean_nn = bits.T @ (populations[:, None] * bits)
        biased = (1 - 2 * f) ** 2 * mean_nn + f * (1 - 2 * f) * (mean_n[:, None] + mean_n[None, :]) + f * f
    else:
        rng = np.random.Generator(np.random.PCG64(streams[0]))
        counts = rng.multinomial(shots, populations)
        sampled = np.repeat(bits, counts, axis=0)
        if f > 0.0:
            flips = rng.random(sampled.shape) < f
            sampled = np.where(flips, 1.0 - sampled, sampled)
        biased = sampled.T @ sampled / shots
    for i in range(nso):
        for j in range(i + 1, nso):
            _fill(d2, i, j, i, j, biased[i, j])

    # off-diagonal settings
    for n, couple in enumerate(plan.settings[1:], start=1):
        (i, j), (k, l) = couple
        m = 2.0 * exact[i, j, k, l]
        if shots is None:
            value = (1 - 2 * f) * m / 2.0
        else:
            w = float(populations @ _connected(masks, i, j, k, l))
            p_plus = min(max(0.5 * (w + m), 0.0), 1.0)
            p_minus = min(max(0.5 * (w - m), 0.0), 1.0)
            p_zero = max(1.0 - p_plus - p_minus, 0.0)
            probs = np.array([p_minus, p_zero, p_plus])
            rng = np.random.Generator(np.random.PCG64(streams[n]))
            n_minus, _, n_plus = rng.multinomial(shots, probs / probs.sum())
            if f > 0.0:
                flip_minus = rng.binomial(n_minus, f)
                flip_plus = rng.binomial(n_plus, f)
                n_minus, n_plus = n_minus - flip_minus + flip_plus, n_plus - flip_plus + flip_minus
            value = (n_plus - n_minus) / shots / 2.0
        _fill(d2, i, j, k, l, value)
        _fill(d2, k, l, i, j, value)
    return d2


def reconstruction_error_report(integrals, state, epsilon=0.05):
    """Energy-change difference of one ACSE step driven by exact vs. reconstructed 3-RDMs.

    Both residuals are built from the state's exact 1- and 2-RDMs; only the
    3-RDM differs.  Each drives one statevector step of length ``epsilon``
    and the absolute difference of the two energy changes is returned
    (Hartree).
    """
    d1, d2 = measure_rdms(state)
    h = hamiltonian_matrix(integrals, state.basis)
    e0 = float(state.coeffs @ (h @ state.coeffs))
    changes = []
    for d3 in (measure_rdm3(state), valdemoro3(d2, d1)):
        a = acse_residual(integrals, d1, d2, d3)
        stepped = step_statevector(state, a, epsilon)
        changes.append(float(stepped.coeffs @ (h @ stepped.coeffs)) - e0)
    return abs(changes[0] - changes[1])
