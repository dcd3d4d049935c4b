"""Determinant-space kernels with two interchangeable backends.

Every routine here works on spin-orbital occupation bitmasks (``int64``,
bit ``p`` set when spin orbital ``p`` is occupied).  Two backends exist:

``numba``
    Direct loops over determinants and excitations, compiled with
    ``numba.njit``.
``numpy``
    Vectorised formulation through annihilation amplitudes
    ``<K| a_s ... a_r |I>``: RDM blocks become matrix products and operator
    matrices become sparse triple products.

The backend is chosen from the ``RDMHYBRID_NUMBA`` environment variable
(``0``/``false``/``off`` selects numpy) and can be changed at runtime with
:func:`set_backend`.  Both backends return the same compressed blocks, so
the expansion to dense antisymmetric tensors is shared.
"""
from __future__ import annotations

import functools
import itertools
import os

import numpy as np
import scipy.sparse as sp

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

__all__ = [
    "get_backend",
    "set_backend",
    "operator_matrix",
    "transition_rdm",
    "expand_antisymmetric",
    "subsets",
]

_BACKEND = None


def _default_backend():
    flag = os.environ.get("RDMHYBRID_NUMBA", "1").strip().lower()
    if numba is None or flag in ("0", "false", "off", "no"):
        return "numpy"
    return "numba"


def get_backend():
    global _BACKEND
    if _BACKEND is None:
        _BACKEND = _default_backend()
    return _BACKEND


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"``; returns the previous backend."""
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and numba is None:
        raise RuntimeError("numba is not importable")
    previous = get_backend()
    _BACKEND = name
    return previous


def _jit(func):
    if numba is None:
        return func
    return numba.njit(cache=True, nogil=True)(func)


# ---------------------------------------------------------------------------
# index bookkeeping shared by both backends


@functools.lru_cache(maxsize=None)
def subsets(nso, k):
    """Ascending ``k``-subsets of ``range(nso)`` as an ``(n, k)`` int array."""
    combos = list(itertools.combinations(range(nso), k))
    return np.array(combos, dtype=np.int64).reshape(len(combos), k)


@functools.lru_cache(maxsize=None)
def _subset_index(nso, k):
    """Dense lookup ``table[p, q, ...] -> position in subsets(nso, k)``."""
    table = np.full((nso,) * k, -1, dtype=np.int64)
    for n, combo in enumerate(subsets(nso, k)):
        table[tuple(combo)] = n
    return table


@functools.lru_cache(maxsize=None)
def _signed_permutations(k):
    out = []
    for perm in itertools.permutations(range(k)):
        inversions = sum(
            1 for a in range(k) for b in range(a + 1, k) if perm[a] > perm[b]
        )
        out.append((perm, -1.0 if inversions % 2 else 1.0))
    return tuple(out)


def expand_antisymmetric(block, nso, k):
    """Scatter a compressed ``(subset, subset)`` block into a dense tensor.

    ``block[P, S]`` holds the element whose upper indices are the ascending
    subset ``P`` and lower indices the ascending subset ``S``.  The result has
    shape ``(nso,) * 2k`` with every antisymmetric image filled in.
    """
    full = np.zeros((nso,) * (2 * k))
    sets = subsets(nso, k)
    perms = _signed_permutations(k)
    for up_perm, up_sign in perms:
        up = sets[:, up_perm]
        for lo_perm, lo_sign in perms:
            lo = sets[:, lo_perm]
            index = tuple(up[:, None, j] for j in range(k)) + tuple(
                lo[None, :, j] for j in range(k)
            )
            full[index] = (up_sign * lo_sign) * block
    return full


def _lookup_arrays(masks):
    order = np.argsort(masks, kind="stable").astype(np.int64)
    return masks[order], order


# ---------------------------------------------------------------------------
# numba backend


@_jit
def _parity_below(mask, p):
    x = mask & ((np.int64(1) << p) - 1)
    count = 0
    while x:
        x &= x - 1
        count += 1
    return count & 1


@_jit
def _find(sorted_masks, order, target):
    lo = 0
    hi = sorted_masks.size - 1
    while lo <= hi:
        mid = (lo + hi) >> 1
        v = sorted_masks[mid]
        if v == target:
            return order[mid]
        if v < target:
            lo = mid + 1
        else:
            hi = mid - 1
    return -1


@_jit
def _operator_coo_nb(masks, sorted_masks, order, h1, t2a, nso, cap):
    rows = np.empty(cap, dtype=np.int64)
    cols = np.empty(cap, dtype=np.int64)
    vals = np.empty(cap, dtype=np.float64)
    one = np.int64(1)
    n = 0
    for col in range(masks.size):
        m = masks[col]
        for q in range(nso):
            if not (m >> q) & 1:
                continue
            m1 = m ^ (one << q)
            sq = _parity_below(m, q)
            for p in range(nso):
                if (m1 >> p) & 1:
                    continue
                v = h1[p, q]
                if v == 0.0:
                    continue
                m2 = m1 | (one << p)
                row = _find(sorted_masks, order, m2)
                if row < 0:
                    continue
                if sq ^ _parity_below(m1, p):
                    v = -v
                rows[n] = row
                cols[n] = col
                vals[n] = v
                n += 1
        for r in range(nso):
            if not (m >> r) & 1:
                continue
            m1 = m ^ (one << r)
            sr = _parity_below(m, r)
            for s in range(r + 1, nso):
                if not (m1 >> s) & 1:
                    continue
                m2 = m1 ^ (one << s)
                ss = sr ^ _parity_below(m1, s)
                for q in range(nso):
                    if (m2 >> q) & 1:
                        continue
                    m3 = m2 | (one << q)
                    sq = ss ^ _parity_below(m2, q)
                    for p in range(q):
                        if (m3 >> p) & 1:
                            continue
                        v = t2a[p, q, r, s]
                        if v == 0.0:
                            continue
                        m4 = m3 | (one << p)
                        row = _find(sorted_masks, order, m4)
                        if row < 0:
                            continue
                        if sq ^ _parity_below(m3, p):
                            v = -v
                        rows[n] = row
                        cols[n] = col
                        vals[n] = v
                        n += 1
    return rows[:n], cols[:n], vals[:n]


@_jit
def _rdm1_block_nb(masks, sorted_masks, order, bra, ket, nso):
    out = np.zeros((nso, nso))
    one = np.int64(1)
    for col in range(masks.size):
        c = ket[col]
        if c == 0.0:
            continue
        m = masks[col]
        for q in range(nso):
            if not (m >> q) & 1:
                continue
            m1 = m ^ (one << q)
            sq = _parity_below(m, q)
            for p in range(nso):
                if (m1 >> p) & 1:
                    continue
                row = _find(sorted_masks, order, m1 | (one << p))
                if row < 0:
                    continue
                v = bra[row] * c
                if sq ^ _parity_below(m1, p):
                    v = -v
                out[p, q] += v
    return out


@_jit
def _rdm2_block_nb(masks, sorted_masks, order, bra, ket, nso, pair_index, npair):
    out = np.zeros((npair, npair))
    one = np.int64(1)
    for col in range(masks.size):
        c = ket[col]
        if c == 0.0:
            continue
        m = masks[col]
        for r in range(nso):
            if not (m >> r) & 1:
                continue
            m1 = m ^ (one << r)
            sr = _parity_below(m, r)
            for s in range(r + 1, nso):
                if not (m1 >> s) & 1:
                    continue
                m2 = m1 ^ (one << s)
                ss = sr ^ _parity_below(m1, s)
                lower = pair_index[r, s]
                for q in range(nso):
                    if (m2 >> q) & 1:
                        continue
                    m3 = m2 | (one << q)
                    sq = ss ^ _parity_below(m2, q)
                    for p in range(q):
                        if (m3 >> p) & 1:
                            continue
                        row = _find(sorted_masks, order, m3 | (one << p))
                        if row < 0:
                            continue
                        v = bra[row] * c
                        if sq ^ _parity_below(m3, p):
                            v = -v
                        out[pair_index[p, q], lower] += v
    return out


@_jit
def _rdm3_block_nb(masks, sorted_masks, order, bra, ket, nso, triple_index, ntriple):
    out = np.zeros((ntriple, ntriple))
    one = np.int64(1)
    for col in range(masks.size):
        c = ket[col]
        if c == 0.0:
            continue
        m = masks[col]
        for s in range(nso):
            if not (m >> s) & 1:
                continue
            m1 = m ^ (one << s)
            g1 = _parity_below(m, s)
            for t in range(s + 1, nso):
                if not (m1 >> t) & 1:
                    continue
                m2 = m1 ^ (one << t)
                g2 = g1 ^ _parity_below(m1, t)
                for u in range(t + 1, nso):
                    if not (m2 >> u) & 1:
                        continue
                    m3 = m2 ^ (one << u)
                    g3 = g2 ^ _parity_below(m2, u)
                    lower = triple_index[s, t, u]
                    for r in range(nso):
                        if (m3 >> r) & 1:
                            continue
                        m4 = m3 | (one << r)
                        g4 = g3 ^ _parity_below(m3, r)
                        for q in range(r):
                            if (m4 >> q) & 1:
                                continue
                            m5 = m4 | (one << q)
                            g5 = g4 ^ _parity_below(m4, q)
                            for p in range(q):
                                if (m5 >> p) & 1:
                                    continue
                                row = _find(sorted_masks, order, m5 | (one << p))
                                if row < 0:
                                    continue
                                v = bra[row] * c
                                if g5 ^ _parity_below(m5, p):
                                    v = -v
                                out[triple_index[p, q, r], lower] += v
    return out


# ---------------------------------------------------------------------------
# numpy backend


@functools.lru_cache(maxsize=64)
def _amplitude_structure(mask_bytes, nso, k):
    """Nonzero pattern of ``<K| a_{s_k} ... a_{s_1} |I>`` for all k-subsets.

    Returns ``(k_index, subset_index, det_index, sign, n_k)`` where ``K``
    labels the distinct (N-k)-electron determinants reached.
    """
    masks = np.frombuffer(mask_bytes, dtype=np.int64)
    one = np.int64(1)
    k_masks, s_idx, d_idx, signs = [], [], [], []
    for n, combo in enumerate(subsets(nso, k)):
        smask = np.int64(0)
        for s in combo:
            smask |= one << np.int64(s)
        sel = np.nonzero((masks & smask) == smask)[0]
        if sel.size == 0:
            continue
        m = masks[sel]
        parity = np.zeros(sel.size, dtype=np.int64)
        for j, s in enumerate(combo):
            below = (one << np.int64(s)) - one
            parity += np.bitwise_count(m & below).astype(np.int64) - j
        k_masks.append(m ^ smask)
        s_idx.append(np.full(sel.size, n, dtype=np.int64))
        d_idx.append(sel)
        signs.append(np.where(parity % 2, -1.0, 1.0))
    if not k_masks:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty, np.zeros(0), 0
    k_masks = np.concatenate(k_masks)
    unique, k_index = np.unique(k_masks, return_inverse=True)
    return (
        k_index.astype(np.int64),
        np.concatenate(s_idx),
        np.concatenate(d_idx),
        np.concatenate(signs),
        unique.size,
    )


def _amplitudes_np(masks, vec, nso, k):
    k_index, s_index, d_index, sign, n_k = _amplitude_structure(
        masks.tobytes(), nso, k
    )
    out = np.zeros((n_k, len(subsets(nso, k))))
    out[k_index, s_index] = sign * vec[d_index]
    return out


def _amplitude_matrix_np(masks, nso, k):
    k_index, s_index, d_index, sign, n_k = _amplitude_structure(
        masks.tobytes(), nso, k
    )
    n_sub = len(subsets(nso, k))
    return sp.csr_matrix(
        (sign, (k_index * n_sub + s_index, d_index)), shape=(n_k * n_sub, masks.size)
    ), n_k


def _operator_matrix_np(masks, h1, t2a, nso):
    n = masks.size
    total = sp.csr_matrix((n, n))
    if h1 is not None and np.any(h1):
        b1, n_k = _amplitude_matrix_np(masks, nso, 1)
        if n_k:
            middle = sp.kron(sp.identity(n_k, format="csr"), sp.csr_matrix(h1))
            total = total + b1.T @ (middle @ b1)
    if t2a is not None and np.any(t2a):
        b2, n_k = _amplitude_matrix_np(masks, nso, 2)
        if n_k:
            pairs = subsets(nso, 2)
            compressed = t2a[pairs[:, 0][:, None], pairs[:, 1][:, None],
                             pairs[:, 0][None, :], pairs[:, 1][None, :]]
            middle = sp.kron(sp.identity(n_k, format="csr"), sp.csr_matrix(compressed))
            total = total + b2.T @ (middle @ b2)
    return sp.csr_matrix(total)


# ---------------------------------------------------------------------------
# public dispatch


def operator_matrix(masks, h1, t2a, nso):
    """Sparse matrix of ``sum h1[p,q] a+_p a_q + sum' t2a[p,q,r,s] a+_p a+_q a_s a_r``.

    The primed sum runs over ``p < q`` and ``r < s`` only, so ``t2a`` must
    already be antisymmetrised in both index pairs.  Rows and columns follow
    the order of ``masks``; excitations leaving the basis are dropped.
    """
    masks = np.ascontiguousarray(masks, dtype=np.int64)
    n = masks.size
    if get_backend() == "numpy":
        return _operator_matrix_np(masks, h1, t2a, nso)
    sorted_masks, order = _lookup_arrays(masks)
    h1 = np.zeros((nso, nso)) if h1 is None else np.ascontiguousarray(h1, dtype=float)
    if t2a is None:
        t2a = np.zeros((nso,) * 4)
    t2a = np.ascontiguousarray(t2a, dtype=float)
    n_el = int(np.bitwise_count(masks[0])) if n else 0
    holes = nso - n_el
    cap = n * (n_el * (holes + 1) + (n_el * (n_el - 1) // 2) * ((holes + 2) * (holes + 1) // 2))
    rows, cols, vals = _operator_coo_nb(masks, sorted_masks, order, h1, t2a, nso, max(cap, 1))
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def transition_rdm(masks, bra, ket, nso, rank):
    """Dense ``<bra| a+_{p1}..a+_{pk} a_{sk}..a_{s1} |ket>`` tensors.

    The element ``out[p1..pk, s1..sk]`` follows the convention
    ``D[i,j,k,l] = <a+_i a+_j a_l a_k>`` generalised to any rank.
    """
    masks = np.ascontiguousarray(masks, dtype=np.int64)
    bra = np.ascontiguousarray(bra, dtype=float)
    ket = np.ascontiguousarray(ket, dtype=float)
    if rank not in (1, 2, 3):
        raise ValueError("rank must be 1, 2 or 3")
    if get_backend() == "numpy":
        mk = _amplitudes_np(masks, ket, nso, rank)
        mb = mk if bra is ket else _amplitudes_np(masks, bra, nso, rank)
        block = mb.T @ mk
    else:
        sorted_masks, order = _lookup_arrays(masks)
        if rank == 1:
            return _rdm1_block_nb(masks, sorted_masks, order, bra, ket, nso)
        if rank == 2:
            block = _rdm2_block_nb(
                masks, sorted_masks, order, bra, ket, nso,
                _subset_index(nso, 2), len(subsets(nso, 2)),
            )
        else:
            block = _rdm3_block_nb(
                masks, sorted_masks, order, bra, ket, nso,
                _subset_index(nso, 3), len(subsets(nso, 3)),
            )
    if rank == 1:
        return block
    return expand_antisymmetric(block, nso, rank)
