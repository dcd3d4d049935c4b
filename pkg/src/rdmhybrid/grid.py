"""Molecular quadrature grids and orbital values on them.

The built-in grid is an atom-centred product grid: a Gauss-Chebyshev
(second kind) radial rule with Becke's mapping ``r = r_m (1 + x) / (1 - x)``,
times Gauss-Legendre nodes in ``cos(theta)`` and uniform nodes in ``phi``.
Atomic grids are combined with Becke's fuzzy-cell partition (three
smoothing iterations, no atomic-size adjustment).

Grids can also be read from a plain-text file::

    n_points n_orbitals has_gradients
    x y z w phi_1 .. phi_r [dphi_1/dx dphi_1/dy dphi_1/dz .. dphi_r/dz]

with one point per line.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionError, UnsupportedBasisError

__all__ = [
    "QuadratureGrid",
    "radial_rule",
    "angular_rule",
    "becke_weights",
    "molecular_grid",
    "evaluate_basis",
    "orbital_grid",
    "write_grid",
    "read_grid",
]


@dataclass(frozen=True)
class QuadratureGrid:
    """Points (bohr), positive weights and orbital values on the points.

    ``orbital_values`` has shape ``(n_points, n_orbitals)`` and
    ``orbital_gradients`` (optional) ``(n_points, n_orbitals, 3)``.
    """

    points: np.ndarray
    weights: np.ndarray
    orbital_values: np.ndarray
    orbital_gradients: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        w = np.asarray(self.weights, dtype=float).ravel()
        phi = np.asarray(self.orbital_values, dtype=float)
        if phi.ndim == 1:
            phi = phi[:, None]
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "orbital_values", phi)
        if w.shape[0] != pts.shape[0] or phi.shape[0] != pts.shape[0]:
            raise DimensionError(
                f"{pts.shape[0]} points, {w.shape[0]} weights, {phi.shape[0]} orbital rows"
            )
        if np.any(w <= 0.0):
            raise ValueError("quadrature weights must be positive")
        if self.orbital_gradients is not None:
            grad = np.asarray(self.orbital_gradients, dtype=float)
            if grad.shape != phi.shape + (3,):
                raise DimensionError(f"orbital gradients of shape {grad.shape}, expected {phi.shape + (3,)}")
            object.__setattr__(self, "orbital_gradients", grad)

    @property
    def n_points(self):
        return int(self.weights.size)

    @property
    def n_orbitals(self):
        return int(self.orbital_values.shape[1])

    @property
    def has_gradients(self):
        return self.orbital_gradients is not None

    def integrate(self, values):
        """``sum_r w(r) f(r)`` with pairwise (deterministic) summation."""
        return float(np.sum(self.weights * np.asarray(values, dtype=float)))


# ---------------------------------------------------------------------------
# construction


def radial_rule(n, r_m=1.0):
    """Nodes and weights for ``int_0^inf f(r) r^2 dr`` (weights include ``r^2``)."""
    i = np.arange(1, n + 1)
    theta = i * np.pi / (n + 1)
    x = np.cos(theta)
    w_cheb = np.pi / (n + 1) * np.sin(theta) ** 2
    r = r_m * (1.0 + x) / (1.0 - x)
    dr = 2.0 * r_m / (1.0 - x) ** 2
    weights = w_cheb / np.sqrt(1.0 - x**2) * dr * r**2
    return r, weights


def angular_rule(n_theta, n_phi):
    """Unit vectors and weights (summing to ``4 pi``) on the sphere."""
    u, wu = np.polynomial.legendre.leggauss(n_theta)
    phi = 2.0 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
    sin_t = np.sqrt(1.0 - u**2)
    dirs = np.stack(
        [
            np.outer(sin_t, np.cos(phi)).ravel(),
            np.outer(sin_t, np.sin(phi)).ravel(),
            np.repeat(u, n_phi),
        ],
        axis=1,
    )
    weights = np.repeat(wu, n_phi) * (2.0 * np.pi / n_phi)
    return dirs, weights


def becke_weights(points, centers, owner):
    """Becke fuzzy-cell weight of each point's owning atom."""
    centers = np.asarray(centers, dtype=float).reshape(-1, 3)
    n_atoms = centers.shape[0]
    if n_atoms == 1:
        return np.ones(points.shape[0])
    dist = np.linalg.norm(points[:, None, :] - centers[None, :, :], axis=2)
    sep = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=2)
    cell = np.ones((points.shape[0], n_atoms))
    for a in range(n_atoms):
        for b in range(n_atoms):
            if a == b:
                continue
            mu = (dist[:, a] - dist[:, b]) / sep[a, b]
            for _ in range(3):
                mu = 1.5 * mu - 0.5 * mu**3
            cell[:, a] *= 0.5 * (1.0 - mu)
    total = cell.sum(axis=1)
    return cell[np.arange(points.shape[0]), owner] / total


def molecular_grid(centers, n_radial=60, n_theta=18, n_phi=36, r_m=1.0):
    """Becke-partitioned product grid ``(points, weights)``.

    Points with vanishing partition weight (below 1e-300) are dropped so that
    every returned weight is strictly positive.
    """
    centers = np.asarray(centers, dtype=float).reshape(-1, 3)
    r, wr = radial_rule(n_radial, r_m)
    dirs, wa = angular_rule(n_theta, n_phi)
    shell = (r[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
    wshell = (wr[:, None] * wa[None, :]).ravel()
    points, weights = [], []
    for a, center in enumerate(centers):
        pts = shell + center
        w = wshell * becke_weights(pts, centers, np.full(pts.shape[0], a))
        keep = w > 1e-300
        points.append(pts[keep])
        weights.append(w[keep])
    return np.concatenate(points), np.concatenate(weights)


def evaluate_basis(geometry, points):
    """Contracted s-Gaussian values ``(n_points, n_ao)`` and gradients ``(n_points, n_ao, 3)``."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    values, grads = [], []
    for atom, shells in zip(geometry.atoms, geometry.basis):
        for shell in shells:
            if shell.l != 0:
                raise UnsupportedBasisError(f"shell with l={shell.l}; only s shells are supported")
            d = points - np.asarray(atom.xyz)
            r2 = np.einsum("px,px->p", d, d)
            val = np.zeros(points.shape[0])
            dval = np.zeros(points.shape[0])
            for a, c in zip(shell.exponents, shell.coefficients):
                g = c * (2.0 * a / np.pi) ** 0.75 * np.exp(-a * r2)
                val += g
                dval += -2.0 * a * g
            values.append(val)
            grads.append(dval[:, None] * d)
    return np.stack(values, axis=1), np.stack(grads, axis=1)


def orbital_grid(geometry, orbital_coefficients, n_radial=60, n_theta=18, n_phi=36, r_m=1.0):
    """Quadrature grid carrying orbitals ``phi_p = sum_mu C[mu, p] chi_mu`` and their gradients.

    ``orbital_coefficients`` is typically ``IntegralSet.ao_coefficients``.
    """
    c = np.asarray(orbital_coefficients, dtype=float)
    points, weights = molecular_grid(geometry.coordinates, n_radial, n_theta, n_phi, r_m)
    chi, dchi = evaluate_basis(geometry, points)
    if c.shape[0] != chi.shape[1]:
        raise DimensionError(f"{c.shape[0]} coefficient rows for {chi.shape[1]} basis functions")
    phi = chi @ c
    dphi = np.einsum("pmx,mq->pqx", dchi, c, optimize=True)
    return QuadratureGrid(points, weights, phi, dphi)


# ---------------------------------------------------------------------------
# text format


def write_grid(stream, grid):
    """Write ``grid`` in the plain-text grid format (values in ``repr`` precision)."""
    stream.write(f"{grid.n_points} {grid.n_orbitals} {int(grid.has_gradients)}\n")
    for k in range(grid.n_points):
        row = [*grid.points[k], grid.weights[k], *grid.orbital_values[k]]
        if grid.has_gradients:
            row.extend(grid.orbital_gradients[k].ravel())
        stream.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_grid(stream):
    """Parse the plain-text grid format."""
    header = None
    rows = []
    for raw in stream:
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if header is None:
            tokens = line.split()
            if len(tokens) != 3:
                raise ValueError("grid header must read 'n_points n_orbitals has_gradients'")
            header = (int(tokens[0]), int(tokens[1]), bool(int(tokens[2])))
            continue
        rows.append([float(t) for t in line.split()])
    if header is None:
        raise ValueError("empty grid file")
    n_points, n_orb, has_grad = header
    width = 4 + n_orb * (4 if has_grad else 1)
    if len(rows) != n_points:
        raise DimensionError(f"grid header promises {n_points} points, found {len(rows)}")
    data = np.array(rows, dtype=float).reshape(n_points, -1) if rows else np.zeros((0, width))
    if data.shape[1] != width:
        raise DimensionError(f"grid rows have {data.shape[1]} columns, expected {width}")
    grads = data[:, 4 + n_orb:].reshape(n_points, n_orb, 3) if has_grad else None
    return QuadratureGrid(data[:, :3], data[:, 3], data[:, 4:4 + n_orb], grads)
