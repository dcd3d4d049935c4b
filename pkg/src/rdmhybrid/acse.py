"""Anti-Hermitian contracted Schrödinger equation solver.

The ACSE residual ``A[i,j,k,l] = <[a+_i a+_j a_l a_k, H]>`` is used directly
as the coefficient tensor of the two-body anti-Hermitian generator

    A_hat = sum_{pqrs} A[p,q,r,s] a+_p a+_q a_s a_r,

so that ``dE/d(eps) = -||A||_F^2`` for ``|psi> -> exp(eps A_hat)|psi>``.
Two propagation modes are provided:

``statevector``
    exact exponentials on a CI vector; the residual is evaluated from
    transition 2-RDMs between ``|psi>`` and ``H|psi>``.
``cumulant-rdm``
    wavefunction-free updates of the 2-RDM along the same generator, with
    the 3-RDM that enters the residual and the update reconstructed from the
    cumulant expansion.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from . import _kernels
from .errors import DimensionError, InstabilityError
from .fci import CiState, hamiltonian_matrix, measure_rdms, transition_rdm2
from .integrals import spin_orbital_hamiltonian
from .rdm import contract_2to1, rdm_energy, valdemoro3
from .wick import compile_commutator

__all__ = [
    "SolverConfig",
    "TraceRecord",
    "AcseTrace",
    "MODES",
    "STOP_REASONS",
    "pair_antisymmetrize",
    "acse_residual",
    "statevector_residual",
    "generator_matrix",
    "step_statevector",
    "rdm_derivative",
    "step_rdm",
    "solve_acse",
    "run_iterations",
    "StatevectorPropagator",
    "CumulantPropagator",
]

MODES = ("statevector", "cumulant-rdm")
STOP_REASONS = ("energy_converged", "residual_converged", "max_iters", "step_underflow")

_EXCITATION = "+i +j -l -k"
_TWO_BODY = "+p +q -s -r"
_ONE_BODY = "+p -q"

DENSE_EXPM_LIMIT = 256


@dataclass(frozen=True)
class SolverConfig:
    """Knobs of the ACSE iteration.

    Parameters
    ----------
    epsilon : float
        Initial step length of each unitary update.
    max_iters : int
        Maximum number of accepted steps.
    energy_tol : float
        Stop once an accepted step lowers the energy by less than this (Hartree).
    residual_tol : float
        Stop once the Frobenius norm of the residual falls below this.
    mode : {"statevector", "cumulant-rdm"}
    step_control : {"halving", "fixed"}
        With ``"halving"`` a step that raises the energy is retried at half
        the step length.
    min_epsilon : float
        Step length below which halving gives up (``step_underflow``).
    rdm_integrator : {"rk4", "euler"}
        Integration of the fixed-generator RDM flow in ``cumulant-rdm`` mode.
        ``"euler"`` is the plain first-order update; ``"rk4"`` integrates the
        same flow to fourth order, re-reconstructing the 3-RDM at every stage.
    residual_guard : bool or None
        Also reject (and halve) steps that raise the residual norm.  ``None``
        enables the guard in ``cumulant-rdm`` mode only, where the
        reconstructed flow can otherwise slide into non-representable RDMs
        whose energy is unbounded below.
    """

    epsilon: float = 0.05
    max_iters: int = 200
    energy_tol: float = 1e-8
    residual_tol: float = 1e-6
    mode: str = "statevector"
    step_control: str = "halving"
    min_epsilon: float = 1e-6
    rdm_integrator: str = "rk4"
    residual_guard: Optional[bool] = None

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValueError("epsilon must be a positive finite number")
        if self.energy_tol <= 0 or self.residual_tol <= 0 or self.min_epsilon <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.step_control not in ("halving", "fixed"):
            raise ValueError(f"unknown step_control {self.step_control!r}")
        if self.rdm_integrator not in ("rk4", "euler"):
            raise ValueError(f"unknown rdm_integrator {self.rdm_integrator!r}")

    @property
    def guard_residual(self):
        if self.residual_guard is None:
            return self.mode == "cumulant-rdm"
        return bool(self.residual_guard)


@dataclass(frozen=True)
class TraceRecord:
    iter: int
    energy: float
    residual_norm: float
    epsilon: float


@dataclass
class AcseTrace:
    records: list
    d1: np.ndarray
    d2: np.ndarray
    energy: float
    reason: str
    state: Optional[object] = None
    seed_energy: float = float("nan")

    @property
    def converged(self):
        return self.reason in ("energy_converged", "residual_converged")

    @property
    def iterations(self):
        return len(self.records) - 1

    def write_csv(self, stream):
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(["iter", "energy", "residual_norm", "epsilon"])
        for r in self.records:
            writer.writerow([r.iter, repr(r.energy), repr(r.residual_norm), repr(r.epsilon)])


# ---------------------------------------------------------------------------
# residual and generator


def pair_antisymmetrize(t):
    """Antisymmetrise within index pairs and make anti-Hermitian in ``(ij)<->(kl)``."""
    t = 0.25 * (t - t.transpose(1, 0, 2, 3) - t.transpose(0, 1, 3, 2) + t.transpose(1, 0, 3, 2))
    return 0.5 * (t - t.transpose(2, 3, 0, 1))


def _hermitian_pairs(t):
    t = 0.25 * (t - t.transpose(1, 0, 2, 3) - t.transpose(0, 1, 3, 2) + t.transpose(1, 0, 3, 2))
    return 0.5 * (t + t.transpose(2, 3, 0, 1))


def acse_residual(integrals, d1, d2, d3):
    """``A[i,j,k,l] = <[a+_i a+_j a_l a_k, H]>`` from 1-, 2- and 3-RDMs."""
    k, v = spin_orbital_hamiltonian(integrals)
    if d2.shape != v.shape or d1.shape != k.shape or d3.shape[0] != k.shape[0]:
        raise DimensionError("RDM dimensions do not match the integrals")
    rdms = {1: d1, 2: d2, 3: d3}
    two = compile_commutator(_EXCITATION, _TWO_BODY, "pqrs", "ijkl")
    one = compile_commutator(_EXCITATION, _ONE_BODY, "pq", "ijkl")
    return pair_antisymmetrize(two(v, rdms) + one(k, rdms))


def statevector_residual(integrals, state, h=None):
    """Exact residual of a CI state, ``T2(psi, H psi) - T2(H psi, psi)``."""
    if h is None:
        h = hamiltonian_matrix(integrals, state.basis)
    hpsi = h @ state.coeffs
    forward = transition_rdm2(state.basis, state.coeffs, hpsi)
    backward = transition_rdm2(state.basis, hpsi, state.coeffs)
    return pair_antisymmetrize(forward - backward)


def generator_matrix(basis, a):
    """Sparse CI-space matrix of ``sum A[p,q,r,s] a+_p a+_q a_s a_r``."""
    return _kernels.operator_matrix(basis.masks, None, 4.0 * np.asarray(a), basis.n_spin_orbitals)


def step_statevector(state, a, epsilon):
    """``exp(epsilon A_hat)|psi>`` (dense exponential for small bases, Krylov otherwise)."""
    if epsilon == 0.0 or not np.any(a):
        return state
    if not np.all(np.isfinite(a)):
        raise ValueError("A-matrix contains non-finite entries")
    gen = generator_matrix(state.basis, a)
    if state.basis.size <= DENSE_EXPM_LIMIT:
        out = scipy.linalg.expm(epsilon * gen.toarray()) @ state.coeffs
    else:
        out = scipy.sparse.linalg.expm_multiply(epsilon * gen, state.coeffs)
    return CiState.normalized(state.basis, out)


def rdm_derivative(d1, d2, a, d3=None):
    """``d(d2)/d(eps) = <[a+_i a+_j a_l a_k, A_hat]>``; ``d3`` defaults to Valdemoro."""
    if d3 is None:
        d3 = valdemoro3(d2, d1)
    comm = compile_commutator(_EXCITATION, _TWO_BODY, "pqrs", "ijkl")
    return comm(a, {1: d1, 2: d2, 3: d3})


def step_rdm(d1, d2, a, epsilon, n_electrons=None, d3=None, order=1):
    """Propagate ``(d1, d2)`` along ``exp(epsilon A_hat)`` without a wavefunction.

    ``order=1`` is the first-order update ``d2 + epsilon <[E, A_hat]>``;
    ``order=4`` integrates ``d(d2)/dt = <[E, A_hat]>`` (generator fixed, 3-RDM
    reconstructed at every stage) with one classical Runge-Kutta step.  The
    result is re-symmetrised, its trace checked and rescaled to ``N(N-1)``,
    and ``d1`` is recomputed by contraction.

    Raises
    ------
    InstabilityError
        If the trace drifts by more than 0.1 before rescaling.
    """
    if epsilon == 0.0 or not np.any(a):
        return d1.copy(), d2.copy()
    if n_electrons is None:
        n_electrons = int(round(float(np.trace(d1))))
    target = n_electrons * (n_electrons - 1)
    if order == 1:
        new = d2 + epsilon * rdm_derivative(d1, d2, a, d3)
    elif order == 4:
        if d3 is not None:
            raise ValueError("an explicit 3-RDM only makes sense for order=1")

        def flow(x):
            return _hermitian_pairs(rdm_derivative(contract_2to1(x, n_electrons), x, a))

        k1 = flow(d2)
        k2 = flow(d2 + 0.5 * epsilon * k1)
        k3 = flow(d2 + 0.5 * epsilon * k2)
        k4 = flow(d2 + epsilon * k3)
        new = d2 + (epsilon / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    else:
        raise ValueError("order must be 1 or 4")
    new = _hermitian_pairs(new)
    trace = float(np.einsum("ijij->", new))
    if not np.isfinite(trace) or abs(trace - target) > 0.1:
        raise InstabilityError(f"2-RDM trace drifted to {trace:.6g} (target {target})")
    if trace != 0.0:
        new *= target / trace
    return contract_2to1(new, n_electrons), new


# ---------------------------------------------------------------------------
# iteration driver


class StatevectorPropagator:
    """Exact exponential propagation of a CI vector."""

    def __init__(self, integrals, state):
        self.integrals = integrals
        self.h = hamiltonian_matrix(integrals, state.basis)
        self.initial = state

    def energy(self, state):
        return float(state.coeffs @ (self.h @ state.coeffs))

    def residual(self, state):
        return statevector_residual(self.integrals, state, self.h)

    def step(self, state, a, epsilon):
        return step_statevector(state, a, epsilon)

    def accept(self, state):
        return state

    def rdms(self, state):
        return measure_rdms(state)


class CumulantPropagator:
    """Wavefunction-free propagation of ``(d1, d2)`` with a reconstructed 3-RDM."""

    def __init__(self, integrals, d1, d2, order=4):
        self.integrals = integrals
        self.n_electrons = integrals.n_electrons
        self.initial = (d1, d2)
        self.order = order

    def energy(self, rdms):
        return rdm_energy(self.integrals, *rdms)

    def residual(self, rdms):
        d1, d2 = rdms
        return acse_residual(self.integrals, d1, d2, valdemoro3(d2, d1))

    def step(self, rdms, a, epsilon):
        return step_rdm(rdms[0], rdms[1], a, epsilon, self.n_electrons, order=self.order)

    def accept(self, rdms):
        return rdms

    def rdms(self, rdms):
        return rdms


def run_iterations(propagator, config):
    """Drive residual -> step cycles; returns ``(records, final, energy, reason, seed_energy)``.

    Records hold the energy and residual norm of the iterate at the start of
    each cycle together with the step length accepted from it (0 for the
    terminal record).  ``propagator.accept`` is applied to each accepted
    candidate, which lets noisy propagators corrupt the state after the
    step decision has been made on the noise-free candidate.
    """
    current = propagator.initial
    energy = propagator.energy(current)
    seed_energy = energy
    a = propagator.residual(current)
    epsilon = config.epsilon
    guard = config.guard_residual and config.step_control == "halving"
    records = []
    reason = "max_iters"
    for it in range(config.max_iters + 1):
        norm = float(np.linalg.norm(a))
        if not (np.isfinite(energy) and np.isfinite(norm)):
            raise InstabilityError(f"non-finite energy or residual at iteration {it}")
        if norm < config.residual_tol:
            records.append(TraceRecord(it, energy, norm, 0.0))
            reason = "residual_converged"
            break
        if it == config.max_iters:
            records.append(TraceRecord(it, energy, norm, 0.0))
            break
        while True:
            cand_a = None
            try:
                candidate = propagator.step(current, a, epsilon)
                cand_energy = propagator.energy(candidate)
            except InstabilityError:
                candidate, cand_energy = None, math.inf
            if candidate is not None:
                if config.step_control == "fixed":
                    break
                if cand_energy <= energy:
                    if not guard:
                        break
                    cand_a = propagator.residual(candidate)
                    if np.linalg.norm(cand_a) <= norm:
                        break
            epsilon *= 0.5
            if epsilon < config.min_epsilon:
                candidate = None
                break
        if candidate is None:
            records.append(TraceRecord(it, energy, norm, 0.0))
            reason = "step_underflow"
            break
        records.append(TraceRecord(it, energy, norm, epsilon))
        accepted = propagator.accept(candidate)
        if accepted is candidate:
            energy_new = cand_energy
        else:
            energy_new = propagator.energy(accepted)
            cand_a = None
        current = accepted
        a = cand_a if cand_a is not None else propagator.residual(current)
        converged = abs(energy - cand_energy) < config.energy_tol
        energy = energy_new
        if converged:
            records.append(TraceRecord(it + 1, energy, float(np.linalg.norm(a)), 0.0))
            reason = "energy_converged"
            break
    return records, current, energy, reason, seed_energy


def solve_acse(integrals, seed=None, config=None):
    """Iterate the ACSE from ``seed`` (CiState, ``(d1, d2)`` pair or ``None`` for HF).

    In ``statevector`` mode the seed must be a CiState (``None`` gives the
    aufbau determinant, the HF reference when ``integrals`` are in canonical
    orbitals).  In ``cumulant-rdm`` mode a CiState seed is reduced to its
    RDMs first.
    """
    config = config or SolverConfig()
    if seed is None:
        from .fci import DeterminantBasis

        basis = DeterminantBasis.build(integrals.n_spatial, integrals.n_alpha, integrals.n_beta)
        seed = CiState.aufbau(basis)
    if config.mode == "statevector":
        if not isinstance(seed, CiState):
            raise TypeError("statevector mode needs a CiState seed")
        propagator = StatevectorPropagator(integrals, seed)
    else:
        if isinstance(seed, CiState):
            seed = measure_rdms(seed)
        d1, d2 = (np.asarray(x, dtype=float) for x in seed)
        order = 4 if config.rdm_integrator == "rk4" else 1
        propagator = CumulantPropagator(integrals, d1, d2, order)
    records, final, energy, reason, seed_energy = run_iterations(propagator, config)
    d1, d2 = propagator.rdms(final)
    state = final if isinstance(final, CiState) else None
    return AcseTrace(records, d1, d2, energy, reason, state, seed_energy)
