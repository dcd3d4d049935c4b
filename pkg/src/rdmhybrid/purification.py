"""Approximate N-representability purification of a measured 2-RDM.

The D, Q and G matrices are the Gram matrices

    D[(ij),(kl)] = <a+_i a+_j a_l a_k>          (pairs i<j, k<l)
    Q[(ij),(kl)] = <a_i a_j a+_l a+_k>          (pairs i<j, k<l)
    G[(ij),(kl)] = <a+_i a_j a+_l a_k>          (all ordered pairs)

and must all be positive semidefinite.  Q and G are affine functions of the
2-RDM (the 1-RDM is its contraction):

    Q^{ij}_{kl} = (d_ik d_jl - d_il d_jk) - d_jl g_ik + d_il g_jk
                  + d_jk g_il - d_ik g_jl + D^{kl}_{ij}
    G^{ij}_{kl} = d_jl g_ik + D^{il}_{jk}

with the contractions ``sum_j Q^{ij}_{kj} = (d - N - 1)(1 - g)_{ik}`` and
``sum_j G^{ij}_{kj} = (d - N + 1) g_{ik}`` (``d`` spin orbitals), which makes
both maps invertible on their images.  Purification seeks the nearest
2-RDM (Frobenius norm) with fixed trace whose D, Q and G are all positive
semidefinite: eigenvalue clipping of the three matrices alternates with a
least-squares map back to a single 2-RDM, with dual corrections (ADMM) so
that the iteration converges to the projection rather than to an arbitrary
feasible point.  The uniform-ensemble 2-RDM, strictly inside the feasible
set, is used to keep the reported violation sequence monotone and to pull a
non-converged result just inside the bounds.
"""
from __future__ import annotations

import csv
import functools
import io
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DimensionError
from .rdm import contract_2to1

__all__ = [
    "ConstraintReport",
    "dqg_transforms",
    "q_tensor",
    "g_tensor",
    "d2_from_q",
    "d2_from_g",
    "uniform_rdm2",
    "constraint_report",
    "spin_functionals",
    "purify",
]


def _pairs(nso):
    return np.triu_indices(nso, 1)


def _to_pair_matrix(t):
    i, j = _pairs(t.shape[0])
    return t[i[:, None], j[:, None], i[None, :], j[None, :]]


def _from_pair_matrix(m, nso):
    i, j = _pairs(nso)
    out = np.zeros((nso,) * 4)
    for a, b, sign_up in ((i, j, 1.0), (j, i, -1.0)):
        for c, e, sign_lo in ((i, j, 1.0), (j, i, -1.0)):
            out[a[:, None], b[:, None], c[None, :], e[None, :]] = sign_up * sign_lo * m
    return out


def _sym(t):
    t = 0.25 * (t - t.transpose(1, 0, 2, 3) - t.transpose(0, 1, 3, 2) + t.transpose(1, 0, 3, 2))
    return 0.5 * (t + t.transpose(2, 3, 0, 1))


def _gamma(d2, n_electrons):
    return contract_2to1(d2, n_electrons)


def q_tensor(d2, n_electrons, gamma=None):
    """``Q[i,j,k,l] = <a_i a_j a+_l a+_k>`` from the 2-RDM."""
    g = _gamma(d2, n_electrons) if gamma is None else gamma
    e = np.eye(d2.shape[0])
    return (
        np.einsum("ik,jl->ijkl", e, e) - np.einsum("il,jk->ijkl", e, e)
        - np.einsum("jl,ik->ijkl", e, g) + np.einsum("il,jk->ijkl", e, g)
        + np.einsum("jk,il->ijkl", e, g) - np.einsum("ik,jl->ijkl", e, g)
        + d2.transpose(2, 3, 0, 1)
    )


def g_tensor(d2, n_electrons, gamma=None):
    """``G[i,j,k,l] = <a+_i a_j a+_l a_k>`` from the 2-RDM."""
    g = _gamma(d2, n_electrons) if gamma is None else gamma
    e = np.eye(d2.shape[0])
    return np.einsum("jl,ik->ijkl", e, g) + d2.transpose(0, 2, 3, 1)


def d2_from_q(q, n_electrons, gamma_fallback):
    """Invert :func:`q_tensor` (the 1-RDM is read from Q's contraction)."""
    nso = q.shape[0]
    scale = nso - n_electrons - 1
    e = np.eye(nso)
    if scale != 0:
        g = e - np.einsum("ijkj->ki", q) / scale
        g = 0.5 * (g + g.T)
    else:
        g = gamma_fallback
    rest = q - (
        np.einsum("ik,jl->ijkl", e, e) - np.einsum("il,jk->ijkl", e, e)
        - np.einsum("jl,ik->ijkl", e, g) + np.einsum("il,jk->ijkl", e, g)
        + np.einsum("jk,il->ijkl", e, g) - np.einsum("ik,jl->ijkl", e, g)
    )
    return rest.transpose(2, 3, 0, 1)


def d2_from_g(gt, n_electrons):
    """Invert :func:`g_tensor`."""
    nso = gt.shape[0]
    g = np.einsum("ijkj->ik", gt) / (nso - n_electrons + 1)
    g = 0.5 * (g + g.T)
    rest = gt - np.einsum("jl,ik->ijkl", np.eye(nso), g)
    # rest[i,j,k,l] = D[i,l,j,k]
    return rest.transpose(0, 3, 1, 2)


def dqg_transforms(d2, n_electrons):
    """``(D, Q, G)`` as matrices: pair x pair, pair x pair, ``d^2 x d^2``."""
    d2 = np.asarray(d2, dtype=float)
    if d2.ndim != 4 or len(set(d2.shape)) != 1:
        raise DimensionError(f"2-RDM of shape {d2.shape} is not a dim^4 tensor")
    nso = d2.shape[0]
    gamma = _gamma(d2, n_electrons)
    d_mat = _to_pair_matrix(d2)
    q_mat = _to_pair_matrix(q_tensor(d2, n_electrons, gamma))
    g_mat = g_tensor(d2, n_electrons, gamma).reshape(nso * nso, nso * nso)
    return d_mat, q_mat, g_mat


def uniform_rdm2(nso, n_electrons):
    """2-RDM of the equal-weight ensemble of all N-electron determinants."""
    c = n_electrons * (n_electrons - 1) / (nso * (nso - 1))
    e = np.eye(nso)
    return c * (np.einsum("ik,jl->ijkl", e, e) - np.einsum("il,jk->ijkl", e, e))


def _min_eigs(d2, n_electrons):
    return tuple(float(np.linalg.eigvalsh(0.5 * (m + m.T))[0]) for m in dqg_transforms(d2, n_electrons))


# ---------------------------------------------------------------------------
# spin constraints


def _one_body_spin(nso):
    spin = np.where(np.arange(nso) % 2 == 0, 0.5, -0.5)
    sz = np.diag(spin)
    splus = np.zeros((nso, nso))
    splus[np.arange(0, nso, 2), np.arange(1, nso, 2)] = 1.0  # a+_alpha a_beta
    return sz, splus


def _product_functional(a, b, nso, n_electrons):
    """Tensor ``L`` with ``<A B> = sum L * D2`` for one-body operators A, B."""
    lin = np.einsum("pq,rs->prqs", a, b)
    one = a @ b
    e = np.eye(nso)
    lin = lin + np.einsum("ps,jk->pjsk", one, e) / (n_electrons - 1)
    return lin


def spin_functionals(nso, n_electrons):
    """Linear functionals of the 2-RDM giving ``<Sz>`` and ``<S^2>``."""
    sz, splus = _one_body_spin(nso)
    e = np.eye(nso)
    l_sz = np.einsum("ps,jk->pjsk", sz, e) / (n_electrons - 1)
    l_s2 = (
        _product_functional(sz, sz, nso, n_electrons)
        + 0.5 * _product_functional(splus, splus.T, nso, n_electrons)
        + 0.5 * _product_functional(splus.T, splus, nso, n_electrons)
    )
    return {"sz": _sym(l_sz), "s2": _sym(l_s2)}


def _project_linear(d2, constraints):
    """Least-change projection onto ``<L_c, d2> = b_c`` for every constraint."""
    if not constraints:
        return d2
    mats = [c[0] for c in constraints]
    targets = np.array([c[1] for c in constraints])
    gram = np.array([[np.sum(a * b) for b in mats] for a in mats])
    resid = targets - np.array([np.sum(m * d2) for m in mats])
    coef = np.linalg.lstsq(gram, resid, rcond=None)[0]
    return d2 + sum(c * m for c, m in zip(coef, mats))


# ---------------------------------------------------------------------------
# report


@dataclass(frozen=True)
class ConstraintReport:
    trace_error: float
    hermiticity_error: float
    antisymmetry_error: float
    contraction_error: float
    min_eig_D: float
    min_eig_Q: float
    min_eig_G: float
    iterations_used: int
    converged: bool
    spin_error: float = 0.0
    interior_weight: float = 0.0

    def as_text(self):
        return "".join(f"{k} = {v!r}\n" for k, v in asdict(self).items())

    def as_csv(self, header=True):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        data = asdict(self)
        if header:
            writer.writerow(list(data))
        writer.writerow([repr(v) for v in data.values()])
        return buf.getvalue()


def constraint_report(d2, n_electrons, iterations_used=0, converged=False, spin_targets=None,
                      interior_weight=0.0):
    """Measure every constraint on ``d2``."""
    d2 = np.asarray(d2, dtype=float)
    nso = d2.shape[0]
    target = n_electrons * (n_electrons - 1)
    min_d, min_q, min_g = _min_eigs(d2, n_electrons)
    gamma = _gamma(d2, n_electrons)
    evals = np.linalg.eigvalsh(0.5 * (gamma + gamma.T))
    spin_error = 0.0
    if spin_targets:
        funcs = spin_functionals(nso, n_electrons)
        spin_error = max(abs(float(np.sum(funcs[k] * d2)) - v) for k, v in spin_targets.items())
    return ConstraintReport(
        trace_error=abs(float(np.einsum("ijij->", d2)) - target),
        hermiticity_error=float(np.max(np.abs(d2 - d2.transpose(2, 3, 0, 1)))),
        antisymmetry_error=float(max(
            np.max(np.abs(d2 + d2.transpose(1, 0, 2, 3))),
            np.max(np.abs(d2 + d2.transpose(0, 1, 3, 2))),
        )),
        contraction_error=float(max(0.0, -evals[0], evals[-1] - 1.0)),
        min_eig_D=min_d,
        min_eig_Q=min_q,
        min_eig_G=min_g,
        iterations_used=iterations_used,
        converged=converged,
        spin_error=spin_error,
        interior_weight=interior_weight,
    )


# ---------------------------------------------------------------------------
# projections


def _clip(m):
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    return (v * np.clip(w, 0.0, None)) @ v.T


@functools.lru_cache(maxsize=8)
def _linear_maps(nso, n_electrons):
    """Affine maps from the flattened pair matrix to flattened Q and G.

    Returns ``(q0, LQ, g0, LG)`` with ``Q = q0 + LQ @ x`` and
    ``G = g0 + LG @ x`` (sparse ``LQ``, ``LG``), built column by column from
    :func:`q_tensor` and :func:`g_tensor`.
    """
    npair = nso * (nso - 1) // 2
    zero = np.zeros((nso,) * 4)
    q0 = _to_pair_matrix(q_tensor(zero, n_electrons)).ravel()
    g0 = g_tensor(zero, n_electrons).ravel()
    q_cols, g_cols = [], []
    unit = np.zeros(npair * npair)
    for k in range(npair * npair):
        unit[k] = 1.0
        t = _from_pair_matrix(unit.reshape(npair, npair), nso)
        unit[k] = 0.0
        q_cols.append(sp.csc_matrix(_to_pair_matrix(q_tensor(t, n_electrons)).ravel() - q0).T)
        g_cols.append(sp.csc_matrix(g_tensor(t, n_electrons).ravel() - g0).T)
    return q0, sp.hstack(q_cols).tocsr(), g0, sp.hstack(g_cols).tocsr()


class _Projector:
    """ADMM splitting for the nearest D/Q/G-feasible pair matrix.

    Each sweep clips the eigenvalues of D, Q and G (shifted by their scaled
    dual variables) and maps the three clipped matrices back to a single
    2-RDM by the least-squares inverse of the linear maps, with the trace and
    any spin constraints imposed exactly.  The fixed point is the Frobenius
    nearest feasible 2-RDM, which plain sequential clipping does not reach.
    """

    def __init__(self, y, nso, n_electrons, constraints, rho=1.0):
        self.nso, self.npair = nso, nso * (nso - 1) // 2
        self.q0, self.lq, self.g0, self.lg = _linear_maps(nso, n_electrons)
        self.rho = rho
        n = self.npair * self.npair
        rows = [np.eye(self.npair).ravel()]
        rhs = [n_electrons * (n_electrons - 1) / 2.0]
        for mat, target in constraints:
            # <L, d2> over the full tensor is 4 <L_pair, X> on the pair matrix
            rows.append(4.0 * _to_pair_matrix(_sym(mat)).ravel())
            rhs.append(target)
        c = sp.csr_matrix(np.array(rows))
        normal = (1.0 + rho) * sp.identity(n, format="csr") + rho * (
            self.lq.T @ self.lq + self.lg.T @ self.lg
        )
        kkt = sp.bmat([[normal, c.T], [c, None]]).tocsc()
        self.lu = spla.splu(kkt)
        self.n = n
        self.rhs_c = np.array(rhs)
        self.y = y.ravel()
        x = self.y
        self.z = [x.copy(), self.q0 + self.lq @ x, self.g0 + self.lg @ x]
        self.u = [np.zeros_like(z) for z in self.z]

    def images(self, x):
        """Flattened ``(D, Q, G)`` of the flattened pair matrix ``x``."""
        return [x, self.q0 + self.lq @ x, self.g0 + self.lg @ x]

    def violation(self, images):
        shapes = [(self.npair,) * 2, (self.npair,) * 2, (self.nso**2,) * 2]
        worst = 0.0
        for img, shape in zip(images, shapes):
            m = img.reshape(shape)
            worst = max(worst, -float(np.linalg.eigvalsh(0.5 * (m + m.T))[0]))
        return worst

    def sweep(self):
        """One ADMM iteration; returns the new iterate and the dual change."""
        rho, (zd, zq, zg), (ud, uq, ug) = self.rho, self.z, self.u
        rhs = self.y + rho * ((zd - ud) + self.lq.T @ (zq - uq - self.q0) + self.lg.T @ (zg - ug - self.g0))
        x = self.lu.solve(np.concatenate([rhs, self.rhs_c]))[: self.n]
        images = self.images(x)
        shapes = [(self.npair,) * 2, (self.npair,) * 2, (self.nso**2,) * 2]
        change = 0.0
        for k, (img, shape) in enumerate(zip(images, shapes)):
            z = _clip((img + self.u[k]).reshape(shape)).ravel()
            change = max(change, float(np.max(np.abs(z - self.z[k]))))
            self.z[k] = z
            self.u[k] = self.u[k] + img - z
        return x, rho * change

    def pull_inside(self, x, uniform, bound, steps=30):
        """Smallest weight ``t`` (bisection) with ``(1-t) x + t u`` violating by <= ``bound``.

        ``u`` is strictly feasible and the eigenvalue violation is convex
        along the segment, so the admissible weights form an interval
        ``[t*, 1]``.  The maps are affine, so images mix like the iterates.
        """
        img_x, img_u = self.images(x), self.images(uniform)
        viol = self.violation(img_x)
        if viol <= bound:
            return x, 0.0, viol
        lo, hi, hi_viol = 0.0, 1.0, self.violation(img_u)
        for _ in range(steps):
            mid = 0.5 * (lo + hi)
            mid_viol = self.violation([(1.0 - mid) * a + mid * b for a, b in zip(img_x, img_u)])
            if mid_viol <= bound:
                hi, hi_viol = mid, mid_viol
            else:
                lo = mid
        return (1.0 - hi) * x + hi * uniform, hi, hi_viol


def _violation(d2, n_electrons, constraints):
    mins = _min_eigs(d2, n_electrons)
    worst = max(0.0, -min(mins))
    for mat, target in constraints:
        worst = max(worst, abs(float(np.sum(mat * d2)) - target))
    return worst, mins


def purify(d2_noisy, n_electrons, tol=1e-8, max_iters=500, spin_targets=None):
    """Project ``d2_noisy`` onto the D/Q/G-feasible set.

    Alternating eigenvalue clipping of D, Q and G with dual corrections
    (ADMM); the trace ``N(N-1)`` and optional spin constraints are imposed
    exactly in the least-squares map back to the 2-RDM.  The iterates
    reported are monotone: an iterate whose worst eigenvalue violation
    exceeds the previous one is pulled toward the uniform-ensemble 2-RDM
    (strictly feasible) by the smallest weight that restores monotonicity.

    Parameters
    ----------
    d2_noisy : ndarray
        Hermitian, antisymmetric 2-RDM estimate (re-symmetrised on entry).
    n_electrons : int
    tol : float
        Bound on every eigenvalue violation and on the ADMM residuals.
    max_iters : int
    spin_targets : dict, optional
        ``{"sz": value, "s2": value}`` linear equality constraints.

    Returns
    -------
    (ndarray, ConstraintReport)
        The purified 2-RDM and its report.  When ``max_iters`` is exhausted
        ``converged`` is false and the best iterate is mixed with the
        uniform 2-RDM just enough to satisfy the eigenvalue bounds; the
        mixing weight is reported as ``interior_weight``.
    """
    d2 = np.asarray(d2_noisy, dtype=float)
    if d2.ndim != 4 or len(set(d2.shape)) != 1:
        raise DimensionError(f"2-RDM of shape {d2.shape} is not a dim^4 tensor")
    d2 = _sym(d2)
    nso = d2.shape[0]
    if n_electrons < 2 or nso - n_electrons < 1:
        raise ValueError("purification needs 2 <= N < number of spin orbitals")
    funcs = spin_functionals(nso, n_electrons) if spin_targets else {}
    constraints = [(funcs[k], float(v)) for k, v in (spin_targets or {}).items()]
    target = n_electrons * (n_electrons - 1)

    def report(x, iters, ok, weight=0.0):
        return constraint_report(x, n_electrons, iters, ok, spin_targets, weight)

    viol, _ = _violation(d2, n_electrons, constraints)
    if viol < tol and abs(float(np.einsum("ijij->", d2)) - target) < tol:
        return d2, report(d2, 1, True)

    uniform = _to_pair_matrix(uniform_rdm2(nso, n_electrons)).ravel()
    projector = _Projector(_to_pair_matrix(d2), nso, n_electrons, constraints)

    def tensor(x):
        return _sym(_from_pair_matrix(x.reshape(projector.npair, projector.npair), nso))

    accepted, accepted_viol = None, np.inf
    for it in range(1, max_iters + 1):
        x, dual_change = projector.sweep()
        x, _, viol = projector.pull_inside(x, uniform, accepted_viol)
        if viol > accepted_viol:
            raise AssertionError("purification violation increased")  # pragma: no cover
        accepted, accepted_viol = x, viol
        if viol < tol and dual_change < tol:
            return tensor(accepted), report(tensor(accepted), it, True)
    final, weight, _ = projector.pull_inside(accepted, uniform, 0.1 * tol)
    final = tensor(final)
    return final, report(final, max_iters, False, weight)
