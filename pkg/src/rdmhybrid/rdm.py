"""Dense spin-orbital reduced density matrices and their algebra.

Storage convention (all ranks): plain expectation values,

    d1[i, q]          = <a+_i a_q>                       trace N
    d2[i, j, k, l]    = <a+_i a+_j a_l a_k>              trace N(N-1)
    d3[i, j, k, q, s, t] = <a+_i a+_j a+_k a_t a_s a_q>  trace N(N-1)(N-2)

The Grassmann wedge product uses the normalised antisymmetriser
``(1/(p!)^2) sum sgn(pi) sgn(sigma)``, under which a determinant's 2-RDM is
``2 * (g ^ g)`` and its 3-RDM ``6 * (g ^ g ^ g)``.  The cumulant and the
Valdemoro reconstruction convert to the ``1/p!``-scaled matrices internally,
so callers only ever see the stored convention.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .integrals import spin_orbital_hamiltonian

__all__ = [
    "antisymmetrize",
    "wedge",
    "wedge11",
    "cumulant2",
    "valdemoro3",
    "contract_2to1",
    "contract_3to2",
    "spatial_rdm1",
    "natural_occupations",
    "NaturalOccupations",
    "rdm_energy",
    "rdm1_errors",
    "rdm2_errors",
    "check_rdm1",
    "check_rdm2",
    "check_rdm3",
    "write_rdm",
    "read_rdm",
]


def _dims(*tensors):
    dims = {t.shape[0] for t in tensors}
    for t in tensors:
        if len(set(t.shape)) != 1:
            raise DimensionError(f"tensor of shape {t.shape} is not hypercubic")
    if len(dims) != 1:
        raise DimensionError(f"dimension mismatch: {sorted(dims)}")
    return dims.pop()


def _perm_sign(perm):
    inversions = sum(1 for a, b in itertools.combinations(perm, 2) if a > b)
    return -1.0 if inversions % 2 else 1.0


def antisymmetrize(tensor, rank=None):
    """Project onto tensors antisymmetric in the upper and lower index groups.

    Applies ``(1/(p!)^2) sum_{pi, sigma} sgn(pi) sgn(sigma)`` over permutations
    of the first ``rank`` (upper) and last ``rank`` (lower) indices.
    """
    tensor = np.asarray(tensor, dtype=float)
    rank = tensor.ndim // 2 if rank is None else rank
    perms = list(itertools.permutations(range(rank)))
    out = np.zeros_like(tensor)
    for up in perms:
        for lo in perms:
            axes = list(up) + [rank + i for i in lo]
            out += _perm_sign(up) * _perm_sign(lo) * tensor.transpose(axes)
    return out / len(perms) ** 2


def wedge(a, b):
    """Grassmann wedge product of two tensors of any (even) order."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _dims(a, b)
    ra, rb = a.ndim // 2, b.ndim // 2
    outer = np.multiply.outer(a, b)
    # reorder to (upper_a, upper_b, lower_a, lower_b)
    axes = (
        list(range(ra))
        + list(range(2 * ra, 2 * ra + rb))
        + list(range(ra, 2 * ra))
        + list(range(2 * ra + rb, 2 * ra + 2 * rb))
    )
    return antisymmetrize(outer.transpose(axes), ra + rb)


def wedge11(a, b):
    """``(a ^ b)[i,j,k,l] = (a_ik b_jl - a_il b_jk - a_jk b_il + a_jl b_ik) / 4``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _dims(a, b)
    ab = np.einsum("ik,jl->ijkl", a, b)
    ba = np.einsum("ik,jl->ijkl", b, a)
    return 0.25 * (ab - ab.transpose(0, 1, 3, 2) - ba.transpose(0, 1, 3, 2) + ba)


_UPPER_SPLITS = (((0, 1), 2, 1.0), ((0, 2), 1, -1.0), ((1, 2), 0, 1.0))


def _wedge21(x, g):
    """Wedge of a pair-antisymmetric 4-tensor with a 2-tensor (9-term form)."""
    up = "ijk"
    lo = "qst"
    out = None
    for (pu, su, sign_u) in _UPPER_SPLITS:
        for (pl, sl, sign_l) in _UPPER_SPLITS:
            spec = (
                f"{up[pu[0]]}{up[pu[1]]}{lo[pl[0]]}{lo[pl[1]]},"
                f"{up[su]}{lo[sl]}->ijkqst"
            )
            term = (sign_u * sign_l) * np.einsum(spec, x, g, optimize=True)
            out = term if out is None else out + term
    return out / 9.0


def cumulant2(d2, d1):
    """Two-body cumulant in the stored normalisation, ``d2 - 2 (d1 ^ d1)``.

    This is twice the cumulant of the 1/2!-scaled 2-RDM; it vanishes for any
    single determinant.
    """
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    _dims(d1, d2)
    return d2 - 2.0 * wedge11(d1, d1)


def valdemoro3(d2, d1):
    """Cumulant reconstruction of the 3-RDM with the three-body cumulant dropped.

    In 1/p!-scaled matrices the approximation reads
    ``D3 = g^g^g + 3 Delta2 ^ g`` with ``Delta2 = D2 - g^g``; collecting terms
    gives ``D3 = ((3 D2 - 2 g^g) ^ g)``.  Returned in the stored normalisation.
    """
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    _dims(d1, d2)
    x = 1.5 * d2 - 2.0 * wedge11(d1, d1)
    return 6.0 * _wedge21(x, d1)


def contract_2to1(d2, n_electrons):
    """``d1[i,k] = sum_j d2[i,j,k,j] / (N - 1)``."""
    if n_electrons < 2:
        raise ValueError("contraction to a 1-RDM needs at least two electrons")
    return np.einsum("ijkj->ik", np.asarray(d2, dtype=float)) / (n_electrons - 1)


def contract_3to2(d3, n_electrons):
    """``d2[i,j,q,s] = sum_k d3[i,j,k,q,s,k] / (N - 2)``."""
    if n_electrons < 3:
        raise ValueError("contraction to a 2-RDM needs at least three electrons")
    return np.einsum("ijkqsk->ijqs", np.asarray(d3, dtype=float)) / (n_electrons - 2)


def spatial_rdm1(d1):
    """Spin-summed spatial 1-RDM from the spin-orbital one."""
    d1 = np.asarray(d1, dtype=float)
    return d1[0::2, 0::2] + d1[1::2, 1::2]


@dataclass(frozen=True)
class NaturalOccupations:
    values: np.ndarray
    hono: float
    luno: float


def natural_occupations(d1, n_electrons=None, tol=1e-8):
    """Eigenvalues of the spin-summed 1-RDM, sorted descending.

    HONO and LUNO are the occupations on either side of the ``ceil(N/2)``
    boundary; ``nan`` when that side is empty.
    """
    d1 = np.asarray(d1, dtype=float)
    if np.max(np.abs(d1 - d1.T)) > tol:
        raise ValueError("1-RDM is not Hermitian")
    gamma = spatial_rdm1(0.5 * (d1 + d1.T))
    values = np.sort(np.linalg.eigvalsh(gamma))[::-1]
    if n_electrons is None:
        n_electrons = int(round(np.trace(d1)))
    n_occ = (n_electrons + 1) // 2
    hono = float(values[n_occ - 1]) if 0 < n_occ <= values.size else float("nan")
    luno = float(values[n_occ]) if n_occ < values.size else float("nan")
    return NaturalOccupations(values=values, hono=hono, luno=luno)


def rdm_energy(integrals, d1, d2):
    """``E = E_core + sum K d1 + sum V d2`` for the Hamiltonian of ``integrals``."""
    k, v = spin_orbital_hamiltonian(integrals)
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    if d1.shape != k.shape or d2.shape != v.shape:
        raise DimensionError("RDM dimensions do not match the integrals")
    return float(integrals.core_energy + np.sum(k * d1) + np.sum(v * d2))


# ---------------------------------------------------------------------------
# invariant checks


def rdm1_errors(d1, n_electrons=None):
    d1 = np.asarray(d1, dtype=float)
    evals = np.linalg.eigvalsh(0.5 * (d1 + d1.T))
    out = {
        "hermiticity": float(np.max(np.abs(d1 - d1.T))),
        "eig_low": float(max(0.0, -evals[0])),
        "eig_high": float(max(0.0, evals[-1] - 1.0)),
    }
    if n_electrons is not None:
        out["trace"] = abs(float(np.trace(d1)) - n_electrons)
    return out


def rdm2_errors(d2, n_electrons=None):
    d2 = np.asarray(d2, dtype=float)
    out = {
        "antisymmetry": float(max(
            np.max(np.abs(d2 + d2.transpose(1, 0, 2, 3))),
            np.max(np.abs(d2 + d2.transpose(0, 1, 3, 2))),
        )),
        "hermiticity": float(np.max(np.abs(d2 - d2.transpose(2, 3, 0, 1)))),
    }
    if n_electrons is not None:
        out["trace"] = abs(float(np.einsum("ijij->", d2)) - n_electrons * (n_electrons - 1))
    return out


def check_rdm1(d1, n_electrons=None, tol=1e-8):
    errors = rdm1_errors(d1, n_electrons)
    bad = {k: v for k, v in errors.items() if v > tol}
    if bad:
        raise ValueError(f"1-RDM invariants violated: {bad}")


def check_rdm2(d2, n_electrons=None, tol=1e-8, trace_tol=1e-6):
    errors = rdm2_errors(d2, n_electrons)
    limits = {"antisymmetry": tol, "hermiticity": tol, "trace": trace_tol}
    bad = {k: v for k, v in errors.items() if v > limits[k]}
    if bad:
        raise ValueError(f"2-RDM invariants violated: {bad}")


def check_rdm3(d3, n_electrons=None, tol=1e-8):
    d3 = np.asarray(d3, dtype=float)
    worst = max(
        np.max(np.abs(d3 + d3.transpose(1, 0, 2, 3, 4, 5))),
        np.max(np.abs(d3 + d3.transpose(0, 2, 1, 3, 4, 5))),
        np.max(np.abs(d3 + d3.transpose(0, 1, 2, 4, 3, 5))),
        np.max(np.abs(d3 + d3.transpose(0, 1, 2, 3, 5, 4))),
    )
    if worst > tol:
        raise ValueError(f"3-RDM antisymmetry violated by {worst:.3e}")
    if n_electrons is not None:
        n = n_electrons
        trace = float(np.einsum("ijkijk->", d3))
        if abs(trace - n * (n - 1) * (n - 2)) > 1e-6:
            raise ValueError(f"3-RDM trace {trace} differs from N(N-1)(N-2)")


# ---------------------------------------------------------------------------
# text format


def write_rdm(stream, data, n_electrons, provenance=None):
    """Write ``rank``/``dim``/``n_electrons`` header then nonzero records.

    Provenance entries become ``# key = value`` comment lines (sorted by key,
    so identical inputs give identical bytes).
    """
    data = np.asarray(data, dtype=float)
    rank = data.ndim // 2
    for key in sorted(provenance or {}):
        stream.write(f"# {key} = {provenance[key]}\n")
    stream.write(f"rank {rank}\ndim {data.shape[0]}\nn_electrons {n_electrons}\n")
    for index in zip(*np.nonzero(data)):
        stream.write(" ".join(str(int(i)) for i in index) + f" {float(data[index])!r}\n")


def read_rdm(stream):
    """Inverse of :func:`write_rdm`; returns ``(data, n_electrons, provenance)``."""
    provenance = {}
    header = {}
    records = []
    for raw in stream:
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            provenance[key.strip()] = value.strip()
            continue
        tokens = line.split()
        if tokens[0] in ("rank", "dim", "n_electrons"):
            header[tokens[0]] = int(tokens[1])
            continue
        records.append(tokens)
    for key in ("rank", "dim", "n_electrons"):
        if key not in header:
            raise ValueError(f"RDM file lacks '{key}' header")
    rank, dim = header["rank"], header["dim"]
    data = np.zeros((dim,) * (2 * rank))
    for tokens in records:
        if len(tokens) != 2 * rank + 1:
            raise ValueError(f"malformed RDM record {' '.join(tokens)!r}")
        data[tuple(int(t) for t in tokens[:-1])] = float(tokens[-1])
    return data, header["n_electrons"], provenance
