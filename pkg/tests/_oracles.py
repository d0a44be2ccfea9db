"""Independent reference implementations used to cross-check the library.

These deliberately avoid the library's own simplified closed forms: the
excess-occupancy oracle works directly with products of cavity
susceptibilities, and the occupancy oracle re-derives the budget from its
definition. Keep them dumb and literal.
"""

from __future__ import annotations

import math

import numpy as np

from sidecool.physics import CavitySpec, chi_c

TWO_PI = 2.0 * math.pi


def sideband_response(cavity: CavitySpec, omega_m: float) -> complex:
    return chi_c(omega_m, cavity) - np.conj(chi_c(-omega_m, cavity))


def excess_occupancy_unsimplified(
    cavity: CavitySpec,
    omega_m: float,
    g0: float,
    flux: float,
    s_phi_phi: float,
    s_eps_eps: float,
) -> tuple[float, float]:
    """Excess occupancy written in terms of susceptibility products.

    Returns (n_exc, gamma_opt). flux is the input photon flux.
    """
    c0 = chi_c(0.0, cavity)
    cp = chi_c(omega_m, cavity)
    cm = chi_c(-omega_m, cavity)
    m_minus = np.conj(c0) * cp - c0 * np.conj(cm)
    m_plus = np.conj(c0) * cp + c0 * np.conj(cm)
    n_cav = cavity.kappa * abs(c0) ** 2 * flux
    gamma_opt = 2.0 * g0**2 * n_cav * sideband_response(cavity, omega_m).real
    n_exc = (
        cavity.kappa**2
        * g0**2
        * flux**2
        / gamma_opt
        * (abs(m_minus) ** 2 * s_phi_phi + abs(m_plus) ** 2 * s_eps_eps)
    )
    return float(n_exc), float(gamma_opt)


def pdh_filter(omega, kappa: float):
    """Single-pole cavity filter (kappa/2) / (kappa/2 - i w)."""
    return (kappa / 2.0) / (kappa / 2.0 - 1j * np.asarray(omega))


def lorentzian_area_f(a2: float, gamma_eff: float) -> float:
    """Area over f (Hz) of a2 * L for a narrow peak: just a2."""
    return a2 * 1.0


def weighted_line_fit(x: np.ndarray, y: np.ndarray, sigma: np.ndarray):
    """Straight 2-parameter weighted least squares y = p0*x0 + p1*x1 via
    numpy lstsq on whitened columns; returns (params, covariance)."""
    a = np.column_stack([x[0], x[1]]) / sigma[:, None]
    b = y / sigma
    params, *_ = np.linalg.lstsq(a, b, rcond=None)
    cov = np.linalg.inv(a.T @ a)
    return params, cov
