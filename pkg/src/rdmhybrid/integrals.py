"""Hamiltonian data: FCIDUMP I/O and a minimal s-Gaussian integral engine.

Two-electron integrals are stored over spatial orbitals in chemists'
notation, ``two_body[i, j, k, l] = (ij|kl)``.  The spin-orbital tensors used
by the rest of the package come from :func:`spin_orbital_hamiltonian`, which
returns the operator in the form

    H = sum_pq K[p,q] a+_p a_q + sum_pqrs V[p,q,r,s] a+_p a+_q a_s a_r

with ``V`` fully antisymmetrised.  Spin orbital ``p`` is spatial orbital
``p // 2`` with spin ``p % 2`` (0 = alpha).
"""
from __future__ import annotations

import io
import math
import re
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import (
    BasisDegeneracyError,
    DimensionError,
    FcidumpBoundsError,
    FcidumpConsistencyError,
    FcidumpParseError,
    UnsupportedBasisError,
)

__all__ = [
    "IntegralSet",
    "Shell",
    "Atom",
    "Geometry",
    "parse_fcidump",
    "write_fcidump",
    "load_fcidump",
    "save_fcidump",
    "boys_f0",
    "ao_integrals",
    "build_h_system",
    "transform_integrals",
    "hartree_fock",
    "spin_orbital_hamiltonian",
    "parse_geometry",
    "format_geometry",
    "h_chain",
    "STO3G_H",
]


def _eightfold_error(eri):
    images = (
        eri.transpose(1, 0, 2, 3),
        eri.transpose(0, 1, 3, 2),
        eri.transpose(2, 3, 0, 1),
    )
    return max((np.max(np.abs(eri - im)) if eri.size else 0.0) for im in images)


@dataclass(frozen=True, eq=False)
class IntegralSet:
    """One- and two-electron integrals over ``n_spatial`` orthonormal orbitals.

    ``ao_coefficients`` is optional provenance: when the set was built from a
    :class:`Geometry`, column ``p`` gives orbital ``p`` in the contracted
    Gaussian basis.  Grid evaluation for on-top functionals needs it.
    """

    n_spatial: int
    n_alpha: int
    n_beta: int
    one_body: np.ndarray
    two_body: np.ndarray
    core_energy: float = 0.0
    point_group_labels: Optional[tuple] = None
    ao_coefficients: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        n = int(self.n_spatial)
        h = np.asarray(self.one_body, dtype=float)
        g = np.asarray(self.two_body, dtype=float)
        object.__setattr__(self, "one_body", h)
        object.__setattr__(self, "two_body", g)
        object.__setattr__(self, "core_energy", float(self.core_energy))
        if h.shape != (n, n):
            raise DimensionError(f"one_body has shape {h.shape}, expected {(n, n)}")
        if g.shape != (n,) * 4:
            raise DimensionError(f"two_body has shape {g.shape}, expected {(n,) * 4}")
        if self.n_alpha < 0 or self.n_beta < 0 or self.n_alpha + self.n_beta > 2 * n:
            raise DimensionError("electron counts incompatible with orbital count")
        scale = max(1.0, float(np.max(np.abs(h))) if h.size else 1.0)
        if h.size and np.max(np.abs(h - h.T)) > 1e-12 * scale:
            raise ValueError("one_body is not symmetric")
        scale = max(1.0, float(np.max(np.abs(g))) if g.size else 1.0)
        if _eightfold_error(g) > 1e-12 * scale:
            raise ValueError("two_body lacks 8-fold permutational symmetry")
        if self.point_group_labels is not None:
            labels = tuple(self.point_group_labels)
            if len(labels) != n:
                raise DimensionError("need one point-group label per orbital")
            object.__setattr__(self, "point_group_labels", labels)

    @property
    def n_electrons(self):
        return self.n_alpha + self.n_beta

    @property
    def n_spin_orbitals(self):
        return 2 * self.n_spatial

    def allclose(self, other, atol=1e-12):
        return (
            self.n_spatial == other.n_spatial
            and self.n_alpha == other.n_alpha
            and self.n_beta == other.n_beta
            and np.allclose(self.one_body, other.one_body, rtol=0, atol=atol)
            and np.allclose(self.two_body, other.two_body, rtol=0, atol=atol)
            and abs(self.core_energy - other.core_energy) <= atol
        )


# ---------------------------------------------------------------------------
# FCIDUMP


_KEY_RE = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)\s*=")


def _parse_namelist(text, first_line):
    body = re.sub(r"^\s*&FCI", "", text, flags=re.IGNORECASE)
    body = re.sub(r"(&END|/)\s*$", "", body.strip(), flags=re.IGNORECASE)
    pieces = _KEY_RE.split(body)
    if pieces[0].strip(" ,\n\t"):
        raise FcidumpParseError(f"unexpected text {pieces[0].strip()!r} in namelist", first_line)
    values = {}
    for key, raw in zip(pieces[1::2], pieces[2::2]):
        tokens = [t for t in re.split(r"[,\s]+", raw.strip()) if t]
        try:
            values[key.upper()] = [int(t) for t in tokens]
        except ValueError:
            raise FcidumpParseError(f"non-integer value for {key}: {raw.strip()!r}", first_line)
    for key in ("NORB", "NELEC"):
        if key not in values or len(values[key]) != 1:
            raise FcidumpParseError(f"namelist lacks a single {key} value", first_line)
    return values


def parse_fcidump(stream):
    """Read an FCIDUMP stream (file object or string) into an IntegralSet.

    Records are ``value i j k l`` with 1-based indices; ``(ij|kl)`` records
    populate all eight permutational images, ``i j 0 0`` records the one-body
    matrix and ``0 0 0 0`` the core energy.  Orbital-energy records
    (``i 0 0 0``) are accepted and ignored.
    """
    text = stream.read() if hasattr(stream, "read") else str(stream)
    lines = text.splitlines()

    start = None
    for n, line in enumerate(lines):
        if line.strip():
            start = n
            break
    if start is None or not lines[start].strip().upper().startswith("&FCI"):
        raise FcidumpParseError("missing '&FCI' namelist header", (start or 0) + 1)
    end = None
    for n in range(start, len(lines)):
        stripped = lines[n].strip().upper()
        if n > start and stripped.startswith("&FCI"):
            break
        if stripped.endswith("&END") or stripped == "/" or stripped.endswith("/"):
            end = n
            break
    if end is None:
        raise FcidumpParseError("namelist is not terminated by '&END' or '/'", start + 1)
    header = _parse_namelist("\n".join(lines[start:end + 1]), start + 1)

    norb = header["NORB"][0]
    nelec = header["NELEC"][0]
    ms2 = header.get("MS2", [0])[0]
    if norb <= 0 or nelec < 0 or (nelec + ms2) % 2:
        raise FcidumpParseError("inconsistent NORB/NELEC/MS2 values", start + 1)
    orbsym = header.get("ORBSYM")
    if orbsym is not None and len(orbsym) != norb:
        raise FcidumpParseError("ORBSYM length differs from NORB", start + 1)

    h = np.zeros((norb, norb))
    g = np.zeros((norb,) * 4)
    h_set = np.zeros(h.shape, dtype=bool)
    g_set = np.zeros(g.shape, dtype=bool)
    core = None

    def store(target, filled, index, value, lineno):
        if filled[index] and abs(target[index] - value) > 1e-10:
            raise FcidumpConsistencyError(
                f"conflicting value {value!r} for integral {tuple(i + 1 for i in index)}", lineno
            )
        target[index] = value
        filled[index] = True

    for n in range(end + 1, len(lines)):
        tokens = lines[n].split()
        if not tokens:
            continue
        lineno = n + 1
        if len(tokens) != 5:
            raise FcidumpParseError(f"expected 5 fields, found {len(tokens)}", lineno)
        try:
            value = float(tokens[0].replace("D", "E").replace("d", "e"))
            i, j, k, l = (int(t) for t in tokens[1:])
        except ValueError:
            raise FcidumpParseError(f"malformed record {lines[n].strip()!r}", lineno)
        for idx in (i, j, k, l):
            if idx < 0 or idx > norb:
                raise FcidumpBoundsError(f"index {idx} outside [0, {norb}]", lineno)
        if i and j and k and l:
            i, j, k, l = i - 1, j - 1, k - 1, l - 1
            for index in {
                (i, j, k, l), (j, i, k, l), (i, j, l, k), (j, i, l, k),
                (k, l, i, j), (l, k, i, j), (k, l, j, i), (l, k, j, i),
            }:
                store(g, g_set, index, value, lineno)
        elif i and j and not k and not l:
            store(h, h_set, (i - 1, j - 1), value, lineno)
            store(h, h_set, (j - 1, i - 1), value, lineno)
        elif not (i or j or k or l):
            if core is not None and abs(core - value) > 1e-10:
                raise FcidumpConsistencyError("conflicting core-energy records", lineno)
            core = value
        elif i and not (j or k or l):
            continue
        else:
            raise FcidumpParseError(f"unrecognised index pattern {i} {j} {k} {l}", lineno)

    return IntegralSet(
        n_spatial=norb,
        n_alpha=(nelec + ms2) // 2,
        n_beta=(nelec - ms2) // 2,
        one_body=h,
        two_body=g,
        core_energy=0.0 if core is None else core,
        point_group_labels=tuple(orbsym) if orbsym is not None else None,
    )


def write_fcidump(integrals, tol=1e-14):
    """Serialise to FCIDUMP text, one record per symmetry-unique integral.

    Values are written with ``repr`` so parsing the output restores them
    exactly.
    """
    n = integrals.n_spatial
    orbsym = integrals.point_group_labels or (1,) * n
    out = io.StringIO()
    out.write(
        f"&FCI NORB={n},NELEC={integrals.n_electrons},"
        f"MS2={integrals.n_alpha - integrals.n_beta},\n"
    )
    out.write(" ORBSYM=" + ",".join(str(int(s)) for s in orbsym) + ",\n")
    out.write(" ISYM=1,\n&END\n")
    g = integrals.two_body
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    for a, (i, j) in enumerate(pairs):
        for k, l in pairs[a:]:
            v = g[i, j, k, l]
            if abs(v) > tol:
                out.write(f"{float(v)!r} {i + 1} {j + 1} {k + 1} {l + 1}\n")
    h = integrals.one_body
    for i, j in pairs:
        if abs(h[i, j]) > tol:
            out.write(f"{float(h[i, j])!r} {i + 1} {j + 1} 0 0\n")
    out.write(f"{float(integrals.core_energy)!r} 0 0 0 0\n")
    return out.getvalue()


def load_fcidump(path):
    with open(path) as fh:
        return parse_fcidump(fh)


def save_fcidump(path, integrals):
    with open(path, "w") as fh:
        fh.write(write_fcidump(integrals))


# ---------------------------------------------------------------------------
# s-type Gaussian engine

_BOYS_SWITCH = 12.0


def boys_f0(t):
    """Zeroth-order Boys function ``F0(t) = int_0^1 exp(-t x^2) dx``.

    A positive-term series ``exp(-t) sum (2t)^k / (2k+1)!!`` is used below
    ``t = 12``; above it the closed form ``sqrt(pi/t) erf(sqrt t) / 2``.
    """
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    out = np.empty_like(t)
    small = t < _BOYS_SWITCH
    if np.any(small):
        ts = t[small]
        term = np.ones_like(ts)
        total = np.ones_like(ts)
        k = 0
        while True:
            k += 1
            term = term * (2.0 * ts) / (2 * k + 1)
            total += term
            if np.all(term <= 1e-17 * total):
                break
        out[small] = np.exp(-ts) * total
    if np.any(~small):
        tl = t[~small]
        out[~small] = 0.5 * np.sqrt(np.pi / tl) * np.vectorize(math.erf)(np.sqrt(tl))
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class Shell:
    """Contracted Gaussian shell; ``l = 0`` is the only supported momentum."""

    exponents: tuple
    coefficients: tuple
    l: int = 0

    def __post_init__(self):
        object.__setattr__(self, "exponents", tuple(float(a) for a in self.exponents))
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        if not self.exponents or len(self.exponents) != len(self.coefficients):
            raise ValueError("shell needs matching, nonempty exponent/coefficient lists")
        if any(a <= 0 for a in self.exponents):
            raise ValueError("Gaussian exponents must be positive")


@dataclass(frozen=True)
class Atom:
    element: str
    charge: float
    xyz: tuple

    def __post_init__(self):
        object.__setattr__(self, "xyz", tuple(float(x) for x in self.xyz))
        if len(self.xyz) != 3:
            raise ValueError("atom position needs three coordinates")


@dataclass(frozen=True)
class Geometry:
    """Atoms (positions in bohr) with per-atom basis shells."""

    atoms: tuple
    basis: tuple
    charge: int = 0
    ms2: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        object.__setattr__(self, "basis", tuple(tuple(shells) for shells in self.basis))
        if len(self.atoms) != len(self.basis):
            raise ValueError("need one shell list per atom")
        if any(len(shells) == 0 for shells in self.basis):
            raise ValueError("every atom needs at least one shell")

    @property
    def coordinates(self):
        return np.array([a.xyz for a in self.atoms], dtype=float).reshape(-1, 3)

    @property
    def charges(self):
        return np.array([a.charge for a in self.atoms], dtype=float)

    @property
    def n_electrons(self):
        return int(round(self.charges.sum())) - self.charge

    def transformed(self, rotation=None, shift=None):
        """Copy with positions mapped to ``R @ x + shift``."""
        xyz = self.coordinates
        if rotation is not None:
            xyz = xyz @ np.asarray(rotation, dtype=float).T
        if shift is not None:
            xyz = xyz + np.asarray(shift, dtype=float)
        atoms = tuple(replace(a, xyz=tuple(x)) for a, x in zip(self.atoms, xyz))
        return replace(self, atoms=atoms)


STO3G_H = Shell(
    exponents=(3.42525091, 0.62391373, 0.16885540),
    coefficients=(0.15432897, 0.53532814, 0.44463454),
)


def h_chain(n_atoms, spacing, shell=STO3G_H, axis=2):
    """Linear chain of hydrogen atoms ``spacing`` bohr apart."""
    atoms = []
    for i in range(n_atoms):
        xyz = [0.0, 0.0, 0.0]
        xyz[axis] = i * spacing
        atoms.append(Atom("H", 1.0, tuple(xyz)))
    return Geometry(atoms=tuple(atoms), basis=tuple((shell,) for _ in atoms))


def _primitives(geometry):
    centers, alphas, coefs, owner = [], [], [], []
    n_func = 0
    for atom, shells in zip(geometry.atoms, geometry.basis):
        for shell in shells:
            if shell.l != 0:
                raise UnsupportedBasisError(
                    f"shell with l={shell.l} on {atom.element}; only s shells are supported"
                )
            for a, c in zip(shell.exponents, shell.coefficients):
                centers.append(atom.xyz)
                alphas.append(a)
                coefs.append(c * (2.0 * a / np.pi) ** 0.75)
                owner.append(n_func)
            n_func += 1
    contraction = np.zeros((len(alphas), n_func))
    contraction[np.arange(len(alphas)), owner] = coefs
    return np.array(centers, dtype=float), np.array(alphas), contraction


def _pair_data(centers, alphas):
    a = alphas[:, None]
    b = alphas[None, :]
    p = a + b
    diff = centers[:, None, :] - centers[None, :, :]
    r2 = np.einsum("abx,abx->ab", diff, diff)
    k = np.exp(-a * b / p * r2)
    center = (a[..., None] * centers[:, None, :] + b[..., None] * centers[None, :, :]) / p[..., None]
    return p, r2, k, center


def ao_integrals(geometry):
    """Overlap, kinetic, nuclear-attraction and ERI over contracted s functions.

    Contracted functions are renormalised.  Returns ``(S, T, V, eri)`` with
    ``eri`` in chemists' notation.
    """
    centers, alphas, contraction = _primitives(geometry)
    p, r2, k, pc = _pair_data(centers, alphas)
    a = alphas[:, None]
    b = alphas[None, :]
    s_prim = (np.pi / p) ** 1.5 * k
    t_prim = a * b / p * (3.0 - 2.0 * a * b / p * r2) * s_prim
    v_prim = np.zeros_like(s_prim)
    for charge, xyz in zip(geometry.charges, geometry.coordinates):
        d2 = np.sum((pc - xyz) ** 2, axis=-1)
        v_prim -= charge * 2.0 * np.pi / p * k * boys_f0(p * d2)

    npr = alphas.size
    pp = p.reshape(-1)
    kk = k.reshape(-1)
    cc = pc.reshape(-1, 3)
    denom = pp[:, None] * pp[None, :] * np.sqrt(pp[:, None] + pp[None, :])
    rho = pp[:, None] * pp[None, :] / (pp[:, None] + pp[None, :])
    d2 = np.sum((cc[:, None, :] - cc[None, :, :]) ** 2, axis=-1)
    eri_prim = (2.0 * np.pi ** 2.5 / denom * kk[:, None] * kk[None, :] * boys_f0(rho * d2))
    eri_prim = eri_prim.reshape(npr, npr, npr, npr)

    s = contraction.T @ s_prim @ contraction
    norm = 1.0 / np.sqrt(np.diag(s))
    cn = contraction * norm
    s = cn.T @ s_prim @ cn
    t = cn.T @ t_prim @ cn
    v = cn.T @ v_prim @ cn
    eri = np.einsum("pqrs,pi,qj,rk,sl->ijkl", eri_prim, cn, cn, cn, cn, optimize=True)
    return s, t, v, eri


def _symmetrize_eri(eri):
    eri = 0.5 * (eri + eri.transpose(1, 0, 2, 3))
    eri = 0.5 * (eri + eri.transpose(0, 1, 3, 2))
    return 0.5 * (eri + eri.transpose(2, 3, 0, 1))


def _nuclear_repulsion(geometry):
    xyz = geometry.coordinates
    z = geometry.charges
    total = 0.0
    for i in range(len(z)):
        for j in range(i):
            total += z[i] * z[j] / np.linalg.norm(xyz[i] - xyz[j])
    return total


def build_h_system(geometry):
    """Integrals over symmetrically (Lowdin) orthonormalised s functions."""
    s, t, v, eri = ao_integrals(geometry)
    evals, evecs = np.linalg.eigh(s)
    if evals[0] < 1e-10:
        raise BasisDegeneracyError(f"overlap eigenvalue {evals[0]:.3e} below 1e-10")
    x = (evecs * evals ** -0.5) @ evecs.T
    x = 0.5 * (x + x.T)
    h = x.T @ (t + v) @ x
    g = np.einsum("pqrs,pi,qj,rk,sl->ijkl", eri, x, x, x, x, optimize=True)
    n = h.shape[0]
    n_el = geometry.n_electrons
    ms2 = geometry.ms2 if geometry.ms2 is not None else n_el % 2
    if (n_el + ms2) % 2 or n_el < 0:
        raise ValueError("electron count and ms2 are inconsistent")
    return IntegralSet(
        n_spatial=n,
        n_alpha=(n_el + ms2) // 2,
        n_beta=(n_el - ms2) // 2,
        one_body=0.5 * (h + h.T),
        two_body=_symmetrize_eri(g),
        core_energy=_nuclear_repulsion(geometry),
        ao_coefficients=x,
    )


def transform_integrals(integrals, coeffs):
    """Rotate to orbitals ``phi'_j = sum_i coeffs[i, j] phi_i``."""
    c = np.asarray(coeffs, dtype=float)
    h = c.T @ integrals.one_body @ c
    g = np.einsum("pqrs,pi,qj,rk,sl->ijkl", integrals.two_body, c, c, c, c, optimize=True)
    ao = None if integrals.ao_coefficients is None else integrals.ao_coefficients @ c
    return replace(
        integrals,
        n_spatial=c.shape[1],
        one_body=0.5 * (h + h.T),
        two_body=_symmetrize_eri(g),
        point_group_labels=None,
        ao_coefficients=ao,
    )


@dataclass
class HartreeFockResult:
    energy: float
    mo_coeff: np.ndarray
    mo_energy: np.ndarray
    integrals: IntegralSet
    iterations: int


def hartree_fock(integrals, max_iter=200, tol=1e-12, diis_size=8):
    """Closed-shell RHF in the orthonormal orbital basis of ``integrals``.

    Returns the energy, canonical MO coefficients and the integrals rotated
    into the canonical basis.
    """
    if integrals.n_alpha != integrals.n_beta:
        raise ValueError("hartree_fock handles closed shells only")
    h = integrals.one_body
    g = integrals.two_body
    nocc = integrals.n_alpha
    _, c = np.linalg.eigh(h)
    history_f, history_e = [], []
    energy = 0.0
    for it in range(1, max_iter + 1):
        d = c[:, :nocc] @ c[:, :nocc].T
        j = np.einsum("pqrs,rs->pq", g, d)
        k = np.einsum("prqs,rs->pq", g, d)
        f = h + 2.0 * j - k
        energy_new = float(np.sum(d * (h + f))) + integrals.core_energy
        err = f @ d - d @ f
        history_f.append(f)
        history_e.append(err)
        if len(history_f) > diis_size:
            history_f.pop(0)
            history_e.pop(0)
        if len(history_f) > 1:
            m = len(history_f)
            b = -np.ones((m + 1, m + 1))
            b[m, m] = 0.0
            for x in range(m):
                for y in range(m):
                    b[x, y] = np.sum(history_e[x] * history_e[y])
            rhs = np.zeros(m + 1)
            rhs[m] = -1.0
            try:
                w = np.linalg.solve(b, rhs)[:m]
                f = sum(wi * fi for wi, fi in zip(w, history_f))
            except np.linalg.LinAlgError:
                pass
        eps, c = np.linalg.eigh(f)
        if abs(energy_new - energy) < tol and np.max(np.abs(err)) < 1e-8:
            energy = energy_new
            break
        energy = energy_new
    else:
        raise RuntimeError("RHF did not converge")
    # canonical orbitals from the converged, un-extrapolated Fock matrix
    d = c[:, :nocc] @ c[:, :nocc].T
    f = h + 2.0 * np.einsum("pqrs,rs->pq", g, d) - np.einsum("prqs,rs->pq", g, d)
    eps, c = np.linalg.eigh(f)
    for col in range(c.shape[1]):
        pivot = np.argmax(np.abs(c[:, col]))
        if c[pivot, col] < 0:
            c[:, col] *= -1
    return HartreeFockResult(
        energy=energy,
        mo_coeff=c,
        mo_energy=eps,
        integrals=transform_integrals(integrals, c),
        iterations=it,
    )


def spin_orbital_hamiltonian(integrals):
    """Spin-orbital ``(K, V)`` with ``V`` antisymmetric in both index pairs.

    ``K[p, q]`` is the one-body integral between spin orbitals of equal spin;
    ``V[p,q,r,s] = (<pq|rs> - <pq|sr>) / 4`` with ``<pq|rs> = (pr|qs)``.
    """
    n = integrals.n_spatial
    so = np.arange(2 * n)
    spatial = so // 2
    spin = so % 2
    same = (spin[:, None] == spin[None, :]).astype(float)
    k = integrals.one_body[np.ix_(spatial, spatial)] * same
    phys = integrals.two_body.transpose(0, 2, 1, 3)[np.ix_(spatial, spatial, spatial, spatial)]
    phys = phys * same[:, None, :, None] * same[None, :, None, :]
    v = 0.25 * (phys - phys.transpose(0, 1, 3, 2))
    return k, v


# ---------------------------------------------------------------------------
# geometry text format


def parse_geometry(text):
    """Parse ``element Z x y z`` lines followed by ``basis <element> [l]`` blocks.

    Each basis block lists ``exponent coefficient`` pairs and defines one
    contracted shell for every atom of that element.  Shell labels ``s``,
    ``p``, ``d``... (or an integer) set the angular momentum.  Optional
    ``charge <q>`` and ``ms2 <n>`` lines set the electron count.
    """
    atoms, blocks = [], []
    charge, ms2 = 0, None
    current = None
    for n, raw in enumerate(str(text).splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        head = tokens[0].lower()
        if head == "basis":
            if len(tokens) not in (2, 3):
                raise ValueError(f"line {n}: expected 'basis <element> [shell]'")
            label = tokens[2].lower() if len(tokens) == 3 else "s"
            l = int(label) if label.isdigit() else "spdfgh".index(label)
            current = [tokens[1], l, [], []]
            blocks.append(current)
        elif head in ("charge", "ms2"):
            value = int(tokens[1])
            if head == "charge":
                charge = value
            else:
                ms2 = value
        elif current is not None:
            if len(tokens) != 2:
                raise ValueError(f"line {n}: expected 'exponent coefficient'")
            current[2].append(float(tokens[0]))
            current[3].append(float(tokens[1]))
        else:
            if len(tokens) != 5:
                raise ValueError(f"line {n}: expected 'element Z x y z'")
            atoms.append(Atom(tokens[0], float(tokens[1]), tuple(float(t) for t in tokens[2:])))
    basis = []
    for atom in atoms:
        shells = tuple(
            Shell(tuple(exps), tuple(cs), l)
            for element, l, exps, cs in blocks
            if element.lower() == atom.element.lower()
        )
        if not shells:
            raise ValueError(f"no basis block for element {atom.element}")
        basis.append(shells)
    return Geometry(atoms=tuple(atoms), basis=tuple(basis), charge=charge, ms2=ms2)


def format_geometry(geometry):
    lines = []
    for atom in geometry.atoms:
        x, y, z = atom.xyz
        lines.append(f"{atom.element} {atom.charge!r} {x!r} {y!r} {z!r}")
    if geometry.charge:
        lines.append(f"charge {geometry.charge}")
    if geometry.ms2 is not None:
        lines.append(f"ms2 {geometry.ms2}")
    seen = set()
    for atom, shells in zip(geometry.atoms, geometry.basis):
        if atom.element in seen:
            continue
        seen.add(atom.element)
        for shell in shells:
            lines.append(f"basis {atom.element} {'spdfgh'[shell.l]}")
            lines.extend(f"{a!r} {c!r}" for a, c in zip(shell.exponents, shell.coefficients))
    return "\n".join(lines) + "\n"
