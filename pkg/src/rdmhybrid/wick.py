"""Symbolic normal ordering of fermion strings, compiled to ``einsum`` calls.

Expectation values of products of second-quantised operators are reduced to
RDM elements by repeatedly applying ``a_x a+_y = delta_xy - a+_y a_x`` until
every creator stands to the left of every annihilator.  A normal-ordered
string ``a+_{p1}..a+_{pm} a_{qm}..a_{q1}`` is then the RDM element
``Dm[p1..pm, q1..qm]``.

Strings are written as whitespace-separated tokens, ``+x`` for a creator and
``-x`` for an annihilator with single-character labels, e.g. the two-body
excitation ``"+i +j -l -k"``.  Labels that appear in the output signature are
external; all others are summed over, possibly against a coefficient tensor.

Used for the ACSE residual (commutators with the Hamiltonian), the
first-order RDM propagation and the particle-hole maps of purification.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

__all__ = ["Term", "normal_order", "compile_expectation", "compile_commutator"]


@dataclass(frozen=True)
class Term:
    coef: float
    deltas: tuple  # pairs of labels
    ops: tuple  # (label, is_creator) in normal order


def _parse(string):
    ops = []
    for token in string.split():
        if token[0] not in "+-" or len(token) != 2:
            raise ValueError(f"bad operator token {token!r}")
        ops.append((token[1], token[0] == "+"))
    return tuple(ops)


@functools.lru_cache(maxsize=None)
def _normal_order(ops):
    """List of ``(coef, deltas, ops)`` equal to ``ops`` in vacuum normal order."""
    for n in range(len(ops) - 1):
        (x, cx), (y, cy) = ops[n], ops[n + 1]
        if not cx and cy:
            head, tail = ops[:n], ops[n + 2:]
            out = [
                (coef, ((x, y),) + deltas, rest)
                for coef, deltas, rest in _normal_order(head + tail)
            ]
            swapped = head + ((y, True), (x, False)) + tail
            out += [(-coef, deltas, rest) for coef, deltas, rest in _normal_order(swapped)]
            return tuple(out)
    return ((1.0, (), ops),)


def normal_order(string):
    """Public wrapper returning :class:`Term` objects for a token string."""
    return [Term(c, d, o) for c, d, o in _normal_order(_parse(string))]


def _sort_sign(labels):
    labels = list(labels)
    sign = 1.0
    for a in range(len(labels)):
        for b in range(len(labels) - 1 - a):
            if labels[b] > labels[b + 1]:
                labels[b], labels[b + 1] = labels[b + 1], labels[b]
                sign = -sign
    return sign, tuple(labels)


def _resolve(coef, deltas, ops, tensor_labels, external):
    """Substitute summed labels through deltas and canonicalise the term.

    Returns ``None`` for terms that vanish (a repeated creator or annihilator
    label), otherwise ``(key, coef)`` with a hashable key.
    """
    mapping = {}

    def find(label):
        while label in mapping:
            label = mapping[label]
        return label

    kept = []
    for x, y in deltas:
        x, y = find(x), find(y)
        if x == y:
            continue
        if x not in external:
            mapping[x] = y
        elif y not in external:
            mapping[y] = x
        else:
            kept.append(tuple(sorted((x, y))))
    tensor = tuple(find(t) for t in tensor_labels)
    creators = [find(lab) for lab, is_c in ops if is_c]
    annihilators = [find(lab) for lab, is_c in ops if not is_c]
    if len(set(creators)) < len(creators) or len(set(annihilators)) < len(annihilators):
        return None  # a+_x a+_x = a_x a_x = 0
    sign_c, creators = _sort_sign(creators)
    sign_a, annihilators = _sort_sign(annihilators)
    key = (tensor, tuple(sorted(kept)), creators, annihilators)
    return key, coef * sign_c * sign_a


def _collect(weighted_terms, tensor_labels, external):
    totals = {}
    for weight, (coef, deltas, ops) in weighted_terms:
        resolved = _resolve(coef, deltas, ops, tensor_labels, external)
        if resolved is None:
            continue
        key, value = resolved
        totals[key] = totals.get(key, 0.0) + weight * value
    return [(key, value) for key, value in totals.items() if value != 0.0]


@functools.lru_cache(maxsize=4096)
def _cached_path(expr, shapes):
    operands = [np.empty(shape) for shape in shapes]
    return np.einsum_path(expr, *operands, optimize="optimal")[0]


def _path(expr, operands):
    return _cached_path(expr, tuple(op.shape for op in operands))


class CompiledExpectation:
    """Callable ``f(tensor, rdms) -> ndarray`` for a sum of einsum terms.

    ``rdms`` maps rank to a dense RDM (rank 0 is the norm, 1).  ``tensor`` is
    the coefficient tensor named by ``tensor_labels`` or ``None``.
    """

    def __init__(self, terms, tensor_labels, output):
        self.terms = terms
        self.tensor_labels = tensor_labels
        self.output = output
        self.ranks = sorted({len(key[2]) for key, _ in terms})

    def __call__(self, tensor=None, rdms=None, dim=None):
        rdms = rdms or {}
        if dim is None:
            dim = tensor.shape[0] if tensor is not None else next(iter(rdms.values())).shape[0]
        eye = np.eye(dim)
        out = np.zeros((dim,) * len(self.output))
        for (tlabels, kept, creators, annihilators), coef in self.terms:
            rank = len(creators)
            if rank != len(annihilators):
                raise ValueError("particle-number changing term")
            specs, operands = [], []
            if tlabels:
                specs.append("".join(tlabels))
                operands.append(tensor)
            for x, y in kept:
                specs.append(x + y)
                operands.append(eye)
            if rank:
                if rank not in rdms:
                    raise ValueError(f"expression needs the {rank}-RDM")
                specs.append("".join(creators) + "".join(reversed(annihilators)))
                operands.append(rdms[rank])
            expr = ",".join(specs) + "->" + self.output
            if operands:
                value = np.einsum(expr, *operands, optimize=_path(expr, operands))
            else:
                value = np.ones((dim,) * len(self.output))
            if rank == 0 and 0 in rdms:
                value = value * rdms[0]
            out += coef * value
        return out


@functools.lru_cache(maxsize=None)
def compile_expectation(string, output):
    """Compile ``<string>`` with external labels ``output`` (no tensor)."""
    ops = _parse(string)
    weighted = [(1.0, t) for t in _normal_order(ops)]
    return CompiledExpectation(_collect(weighted, (), set(output)), (), output)


@functools.lru_cache(maxsize=None)
def compile_commutator(left, right, tensor_labels, output):
    """Compile ``sum_T T[tensor_labels] <[left, right]>``.

    ``right`` contains the summed labels named in ``tensor_labels``; ``left``
    the external ones listed in ``output``.
    """
    lo, ro = _parse(left), _parse(right)
    weighted = [(1.0, t) for t in _normal_order(lo + ro)]
    weighted += [(-1.0, t) for t in _normal_order(ro + lo)]
    terms = _collect(weighted, tuple(tensor_labels), set(output))
    return CompiledExpectation(terms, tuple(tensor_labels), output)
