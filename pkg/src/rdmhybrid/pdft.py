"""Multiconfiguration pair-density functional theory from 1- and 2-RDMs.

The energy is

    E = V_nn + sum_pq h_pq D_pq + 1/2 sum_pqrs (pq|rs) D_pq D_rs + E_ot[rho, Pi]

with ``D`` the spin-summed (spatial) 1-RDM.  The on-top energy is a
Kohn-Sham GGA evaluated at "translated" spin densities: with
``R = 4 Pi / rho^2``,

    rho_a,b = rho/2 (1 +- sqrt(1 - R))    (R <= 1)
    rho_a,b = rho/2                       (R > 1)

and gradients ``grad rho_s = (rho_s / rho) grad rho``.  The on-top pair
density is built from the opposite-spin block of the 2-RDM,

    Pi(r) = sum_PQRS <a+_{P alpha} a+_{Q beta} a_{S beta} a_{R alpha}> phi_P phi_Q phi_R phi_S,

which equals ``rho^2 / 4`` for a closed-shell determinant.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionError
from .functionals import xc_energy_density
from .rdm import spatial_rdm1

__all__ = [
    "RHO_CUTOFF",
    "GridDensities",
    "FunctionalResult",
    "densities_from_rdms",
    "on_top_rdm",
    "translate",
    "eval_ot_functional",
    "classical_energy",
    "mcpdft_energy",
    "ON_TOP_FUNCTIONALS",
]

RHO_CUTOFF = 1e-12
ON_TOP_FUNCTIONALS = {"tPBE": "PBE", "tBLYP": "BLYP"}


@dataclass(frozen=True)
class GridDensities:
    """Densities on the grid points (atomic units).

    ``grad_pi`` is left ``None``: translated functionals do not use it.
    """

    rho: np.ndarray
    grad_rho: np.ndarray
    pi: np.ndarray
    weights: np.ndarray
    grad_pi: Optional[np.ndarray] = None

    def __post_init__(self):
        if np.any(self.rho < -1e-10):
            raise ValueError(f"negative density {float(self.rho.min())!r} on the grid")


@dataclass(frozen=True)
class FunctionalResult:
    """Parts of the MC-PDFT energy; ``e_total`` is their exact sum."""

    e_nuclear: float
    e_kinetic_plus_ext: float
    e_coulomb: float
    e_ot: float
    e_total: float
    functional_name: str

    def as_dict(self):
        return {
            "functional": self.functional_name,
            "e_nuclear": self.e_nuclear,
            "e_kinetic_plus_ext": self.e_kinetic_plus_ext,
            "e_coulomb": self.e_coulomb,
            "e_ot": self.e_ot,
            "e_total": self.e_total,
        }


def on_top_rdm(d2):
    """Spatial on-top tensor ``P[P,Q,R,S] = d2[2P, 2Q+1, 2R, 2S+1]``."""
    return np.asarray(d2)[0::2, 1::2, 0::2, 1::2]


def densities_from_rdms(d1, d2, grid):
    """``rho``, ``grad rho`` and ``Pi`` on the grid from spin-orbital RDMs."""
    gamma = spatial_rdm1(d1)
    n = gamma.shape[0]
    if grid.n_orbitals != n:
        raise DimensionError(f"grid carries {grid.n_orbitals} orbitals, RDMs {n}")
    phi = grid.orbital_values
    rho = np.einsum("gp,pq,gq->g", phi, gamma, phi, optimize=True)
    if grid.has_gradients:
        grad = 2.0 * np.einsum("gpx,pq,gq->gx", grid.orbital_gradients, gamma, phi, optimize=True)
    else:
        grad = np.zeros((grid.n_points, 3))
    top = on_top_rdm(d2)
    pi = np.einsum("gp,gq,pqrs,gr,gs->g", phi, phi, top, phi, phi, optimize=True)
    return GridDensities(rho=rho, grad_rho=grad, pi=pi, weights=grid.weights)


def translate(rho, grad_rho, pi, cutoff=RHO_CUTOFF):
    """Translated spin densities and gradients ``(rho_a, rho_b, grad_a, grad_b)``.

    Points with ``rho <= cutoff`` get zeros.  ``grad_rho`` has shape
    ``rho.shape + (3,)``.
    """
    rho = np.asarray(rho, dtype=float)
    grad_rho = np.asarray(grad_rho, dtype=float)
    pi = np.asarray(pi, dtype=float)
    keep = rho > cutoff
    safe = np.where(keep, rho, 1.0)
    ratio = 4.0 * pi / safe**2
    zeta = np.sqrt(np.clip(1.0 - ratio, 0.0, None))
    rho_a = np.where(keep, 0.5 * rho * (1.0 + zeta), 0.0)
    rho_b = np.where(keep, rho - rho_a, 0.0)
    grad_a = np.where(keep, rho_a / safe, 0.0)[..., None] * grad_rho
    grad_b = np.where(keep, rho_b / safe, 0.0)[..., None] * grad_rho
    return rho_a, rho_b, grad_a, grad_b


def eval_ot_functional(densities, name):
    """On-top energy ``sum_r w e_xc(rho_a^t, rho_b^t, ...)`` for ``tPBE`` or ``tBLYP``."""
    try:
        ks_name = ON_TOP_FUNCTIONALS[name]
    except KeyError:
        raise ValueError(f"unknown on-top functional {name!r}; choose from {sorted(ON_TOP_FUNCTIONALS)}") from None
    rho_a, rho_b, grad_a, grad_b = translate(densities.rho, densities.grad_rho, densities.pi)
    saa = np.einsum("gx,gx->g", grad_a, grad_a)
    sab = np.einsum("gx,gx->g", grad_a, grad_b)
    sbb = np.einsum("gx,gx->g", grad_b, grad_b)
    e = xc_energy_density(ks_name, rho_a, rho_b, saa, sab, sbb)
    return float(np.sum(densities.weights * e))


def classical_energy(integrals, d1):
    """``(sum h D, 1/2 sum (pq|rs) D_pq D_rs)`` for the spin-summed 1-RDM."""
    gamma = spatial_rdm1(d1)
    if gamma.shape != integrals.one_body.shape:
        raise DimensionError(f"1-RDM of shape {gamma.shape} for {integrals.n_spatial} orbitals")
    one = float(np.einsum("pq,pq->", integrals.one_body, gamma))
    coulomb = 0.5 * float(np.einsum("pqrs,pq,rs->", integrals.two_body, gamma, gamma, optimize=True))
    return one, coulomb


def mcpdft_energy(integrals, d1, d2, grid, name="tPBE"):
    """MC-PDFT energy from spin-orbital RDMs on ``grid`` (non-iterative)."""
    one, coulomb = classical_energy(integrals, d1)
    e_ot = eval_ot_functional(densities_from_rdms(d1, d2, grid), name)
    core = float(integrals.core_energy)
    return FunctionalResult(
        e_nuclear=core,
        e_kinetic_plus_ext=one,
        e_coulomb=coulomb,
        e_ot=e_ot,
        e_total=core + one + coulomb + e_ot,
        functional_name=name,
    )
