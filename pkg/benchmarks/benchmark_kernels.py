"""Compare the numba and numpy determinant kernels.

Times the Hamiltonian build (``operator_matrix``) and the 1-/2-/3-RDM
contractions (``transition_rdm``) on hydrogen chains with both backends,
checks that the backends agree, and prints one table row per case::

    python benchmarks/benchmark_kernels.py [--sizes 4 6 8] [--repeats 5]

The environment flag ``RDMHYBRID_NUMBA`` only sets the default backend;
this script switches explicitly with :func:`set_backend`.  The first numba
call per signature (JIT compilation, or loading the on-disk cache) is done
before timing.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from rdmhybrid import _kernels
from rdmhybrid.fci import DeterminantBasis, ground_state
from rdmhybrid.integrals import build_h_system, h_chain, hartree_fock, spin_orbital_hamiltonian


def _best_time(func, repeats):
    best = np.inf
    result = None
    for _ in range(repeats):
        start = time.perf_counter()
        result = func()
        best = min(best, time.perf_counter() - start)
    return best, result


def _cases(n_atoms):
    integrals = hartree_fock(build_h_system(h_chain(n_atoms, 1.8))).integrals
    basis = DeterminantBasis.build(integrals.n_spatial, integrals.n_alpha, integrals.n_beta)
    _, state = ground_state(integrals)
    k, v = spin_orbital_hamiltonian(integrals)
    masks, nso, c = basis.masks, basis.n_spin_orbitals, state.coeffs
    cases = {
        "hamiltonian": lambda: _kernels.operator_matrix(masks, k, 4.0 * v, nso).toarray(),
        "rdm1": lambda: _kernels.transition_rdm(masks, c, c, nso, 1),
        "rdm2": lambda: _kernels.transition_rdm(masks, c, c, nso, 2),
    }
    if n_atoms <= 6:
        cases["rdm3"] = lambda: _kernels.transition_rdm(masks, c, c, nso, 3)
    return basis.size, cases


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[4, 6, 8], help="H-chain lengths")
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args(argv)
    if _kernels.numba is None:
        raise SystemExit("numba is not importable; nothing to compare")

    print(f"{'system':8s} {'dets':>6s} {'kernel':12s} {'numba [s]':>11s} {'numpy [s]':>11s} {'speedup':>8s} {'max diff':>9s}")
    previous = _kernels.get_backend()
    try:
        for n_atoms in args.sizes:
            n_dets, cases = _cases(n_atoms)
            for name, func in cases.items():
                _kernels.set_backend("numba")
                func()  # compile / load cache
                t_nb, out_nb = _best_time(func, args.repeats)
                _kernels.set_backend("numpy")
                func()
                t_np, out_np = _best_time(func, args.repeats)
                diff = float(np.max(np.abs(out_nb - out_np)))
                print(f"H{n_atoms:<7d} {n_dets:6d} {name:12s} {t_nb:11.2e} {t_np:11.2e} {t_np / t_nb:8.1f} {diff:9.1e}")
    finally:
        _kernels.set_backend(previous)


if __name__ == "__main__":
    main()
