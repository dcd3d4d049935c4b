"""Spin-polarised GGA exchange-correlation energy densities.

Every functional takes the spin densities and the gradient invariants

    sigma_aa = |grad rho_a|^2,  sigma_ab = grad rho_a . grad rho_b,
    sigma_bb = |grad rho_b|^2

as arrays of equal shape and returns the energy per unit volume (so that
``E = sum_r w(r) * e(r)``).  Implemented from the published forms:

* PBE exchange and correlation (PW92 local correlation with the PBE
  gradient correction ``H``);
* Becke-88 exchange;
* Lee-Yang-Parr correlation in the gradient-only form of Miehlich et al.

Points where a spin density falls below :data:`DENSITY_CUTOFF` contribute
nothing from that spin channel.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "DENSITY_CUTOFF",
    "lda_exchange",
    "pbe_exchange",
    "pw92_correlation",
    "pbe_correlation",
    "b88_exchange",
    "lyp_correlation",
    "xc_energy_density",
    "FUNCTIONALS",
]

DENSITY_CUTOFF = 1e-14

PBE_KAPPA = 0.804
PBE_MU = 0.2195149727645171
PBE_BETA = 0.06672455060314922
PBE_GAMMA = (1.0 - np.log(2.0)) / np.pi**2
B88_BETA = 0.0042
LYP_A, LYP_B, LYP_C, LYP_D = 0.04918, 0.132, 0.2533, 0.349

# PW92 fit parameters (A, alpha1, beta1..beta4) for the unpolarised and fully
# polarised correlation energies and for minus the spin stiffness.
_PW92_PARAMS = (
    (0.0310907, 0.21370, 7.5957, 3.5876, 1.6382, 0.49294),
    (0.01554535, 0.20548, 14.1189, 6.1977, 3.3662, 0.62517),
    (0.0168869, 0.11125, 10.357, 3.6231, 0.88026, 0.49671),
)
_FZ20 = 1.709920934161365617563962776245


def _arrays(*args):
    return [np.asarray(a, dtype=float) for a in args]


def _safe(x):
    """``x`` where it exceeds the density cutoff, else the cutoff (for division)."""
    return np.where(x > DENSITY_CUTOFF, x, DENSITY_CUTOFF)


# ---------------------------------------------------------------------------
# exchange


def _lda_x_unpolarized(n):
    """Dirac exchange energy per volume of an unpolarised density ``n``."""
    return -0.75 * (3.0 / np.pi) ** (1.0 / 3.0) * n ** (4.0 / 3.0)


def lda_exchange(rho_a, rho_b):
    """Spin-polarised Dirac exchange via spin scaling."""
    rho_a, rho_b = _arrays(rho_a, rho_b)
    out = np.zeros(np.broadcast(rho_a, rho_b).shape)
    for rho in (rho_a, rho_b):
        keep = rho > DENSITY_CUTOFF
        out = out + np.where(keep, 0.5 * _lda_x_unpolarized(2.0 * np.where(keep, rho, 0.0)), 0.0)
    return out


def _pbe_x_unpolarized(n, sigma):
    keep = n > DENSITY_CUTOFF
    ns = _safe(n)
    kf = (3.0 * np.pi**2 * ns) ** (1.0 / 3.0)
    s2 = sigma / (2.0 * kf * ns) ** 2
    fx = 1.0 + PBE_KAPPA - PBE_KAPPA / (1.0 + PBE_MU * s2 / PBE_KAPPA)
    return np.where(keep, _lda_x_unpolarized(ns) * fx, 0.0)


def pbe_exchange(rho_a, rho_b, sigma_aa, sigma_ab, sigma_bb):
    """PBE exchange, spin-scaled: ``E[a, b] = (E[2a] + E[2b]) / 2``."""
    rho_a, rho_b, sigma_aa, sigma_bb = _arrays(rho_a, rho_b, sigma_aa, sigma_bb)
    return 0.5 * (
        _pbe_x_unpolarized(2.0 * rho_a, 4.0 * sigma_aa)
        + _pbe_x_unpolarized(2.0 * rho_b, 4.0 * sigma_bb)
    )


def b88_exchange(rho_a, rho_b, sigma_aa, sigma_ab, sigma_bb):
    """Becke-88 exchange ``sum_s [e_x^LDA,s - beta rho_s^{4/3} x_s^2 / (1 + 6 beta x_s asinh x_s)]``."""
    rho_a, rho_b, sigma_aa, sigma_bb = _arrays(rho_a, rho_b, sigma_aa, sigma_bb)
    out = lda_exchange(rho_a, rho_b)
    for rho, sigma in ((rho_a, sigma_aa), (rho_b, sigma_bb)):
        keep = rho > DENSITY_CUTOFF
        r43 = _safe(rho) ** (4.0 / 3.0)
        x = np.sqrt(np.maximum(sigma, 0.0)) / r43
        corr = -B88_BETA * r43 * x**2 / (1.0 + 6.0 * B88_BETA * x * np.arcsinh(x))
        out = out + np.where(keep, corr, 0.0)
    return out


# ---------------------------------------------------------------------------
# correlation


def _pw92_g(rs, params):
    a, alpha1, b1, b2, b3, b4 = params
    srs = np.sqrt(rs)
    denom = 2.0 * a * (b1 * srs + b2 * rs + b3 * rs * srs + b4 * rs**2)
    return -2.0 * a * (1.0 + alpha1 * rs) * np.log1p(1.0 / denom)


def _spin_f(zeta):
    return ((1.0 + zeta) ** (4.0 / 3.0) + (1.0 - zeta) ** (4.0 / 3.0) - 2.0) / (2.0 ** (4.0 / 3.0) - 2.0)


def _pw92_eps(rs, zeta):
    """PW92 correlation energy per electron."""
    ec0 = _pw92_g(rs, _PW92_PARAMS[0])
    ec1 = _pw92_g(rs, _PW92_PARAMS[1])
    minus_ac = _pw92_g(rs, _PW92_PARAMS[2])
    f = _spin_f(zeta)
    z4 = zeta**4
    return ec0 - minus_ac * f * (1.0 - z4) / _FZ20 + (ec1 - ec0) * f * z4


def _rs_zeta(rho_a, rho_b):
    n = _safe(rho_a + rho_b)
    rs = (3.0 / (4.0 * np.pi * n)) ** (1.0 / 3.0)
    zeta = np.clip((rho_a - rho_b) / n, -1.0, 1.0)
    return n, rs, zeta


def pw92_correlation(rho_a, rho_b):
    """Local (PW92) correlation energy per volume."""
    rho_a, rho_b = _arrays(rho_a, rho_b)
    keep = rho_a + rho_b > DENSITY_CUTOFF
    n, rs, zeta = _rs_zeta(rho_a, rho_b)
    return np.where(keep, n * _pw92_eps(rs, zeta), 0.0)


def pbe_correlation(rho_a, rho_b, sigma_aa, sigma_ab, sigma_bb):
    """PBE correlation ``n (eps_c^PW92 + H(rs, zeta, t))``."""
    rho_a, rho_b, sigma_aa, sigma_ab, sigma_bb = _arrays(rho_a, rho_b, sigma_aa, sigma_ab, sigma_bb)
    keep = rho_a + rho_b > DENSITY_CUTOFF
    n, rs, zeta = _rs_zeta(rho_a, rho_b)
    eps = _pw92_eps(rs, zeta)
    sigma = np.maximum(sigma_aa + 2.0 * sigma_ab + sigma_bb, 0.0)
    phi = 0.5 * ((1.0 + zeta) ** (2.0 / 3.0) + (1.0 - zeta) ** (2.0 / 3.0))
    kf = (3.0 * np.pi**2 * n) ** (1.0 / 3.0)
    ks = np.sqrt(4.0 * kf / np.pi)
    t2 = sigma / (2.0 * phi * ks * n) ** 2
    phi3 = phi**3
    big_a = PBE_BETA / PBE_GAMMA / np.expm1(-eps / (PBE_GAMMA * phi3))
    at2 = big_a * t2
    h = PBE_GAMMA * phi3 * np.log1p(
        PBE_BETA / PBE_GAMMA * t2 * (1.0 + at2) / (1.0 + at2 + at2**2)
    )
    return np.where(keep, n * (eps + h), 0.0)


def lyp_correlation(rho_a, rho_b, sigma_aa, sigma_ab, sigma_bb):
    """Lee-Yang-Parr correlation (gradient form without Laplacians)."""
    rho_a, rho_b, sigma_aa, sigma_ab, sigma_bb = _arrays(rho_a, rho_b, sigma_aa, sigma_ab, sigma_bb)
    keep = rho_a + rho_b > DENSITY_CUTOFF
    n = _safe(rho_a + rho_b)
    cf = 0.3 * (3.0 * np.pi**2) ** (2.0 / 3.0)
    n13 = n ** (-1.0 / 3.0)
    denom = 1.0 + LYP_D * n13
    omega = np.exp(-LYP_C * n13) / denom * n ** (-11.0 / 3.0)
    delta = LYP_C * n13 + LYP_D * n13 / denom
    sigma = sigma_aa + 2.0 * sigma_ab + sigma_bb
    ab = rho_a * rho_b
    bracket = ab * (
        2.0 ** (11.0 / 3.0) * cf * (rho_a ** (8.0 / 3.0) + rho_b ** (8.0 / 3.0))
        + (47.0 / 18.0 - 7.0 * delta / 18.0) * sigma
        - (2.5 - delta / 18.0) * (sigma_aa + sigma_bb)
        - (delta - 11.0) / 9.0 * (rho_a / n * sigma_aa + rho_b / n * sigma_bb)
    )
    bracket = bracket - 2.0 / 3.0 * n**2 * sigma
    bracket = bracket + (2.0 / 3.0 * n**2 - rho_a**2) * sigma_bb
    bracket = bracket + (2.0 / 3.0 * n**2 - rho_b**2) * sigma_aa
    e = -4.0 * LYP_A / denom * ab / n - LYP_A * LYP_B * omega * bracket
    return np.where(keep, e, 0.0)


FUNCTIONALS = {
    "PBE": (pbe_exchange, pbe_correlation),
    "BLYP": (b88_exchange, lyp_correlation),
}


def xc_energy_density(name, rho_a, rho_b, sigma_aa, sigma_ab, sigma_bb):
    """Exchange plus correlation energy per volume for ``name`` in :data:`FUNCTIONALS`."""
    try:
        exchange, correlation = FUNCTIONALS[name.upper()]
    except KeyError:
        raise ValueError(f"unknown functional {name!r}; choose from {sorted(FUNCTIONALS)}") from None
    args = (rho_a, rho_b, sigma_aa, sigma_ab, sigma_bb)
    return exchange(*args) + correlation(*args)
