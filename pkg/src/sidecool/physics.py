"""Closed-form cavity optomechanics: susceptibilities, dynamical backaction,
and phonon-occupancy budgets for resolved-sideband cooling.

All rates in this module are angular (rad/s). Conversion to/from ordinary
frequency (Hz) happens at the package boundary (config files, CLI, reports),
never here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.constants import hbar, k as k_B

__all__ = [
    "CavitySpec",
    "MechMode",
    "DriveField",
    "LaserNoise",
    "OccupancyBudget",
    "InstabilityError",
    "thermal_occupation",
    "chi_m",
    "chi_c",
    "intracavity_mean_field",
    "photon_flux",
    "optical_damping",
    "spring_shift",
    "sideband_angle",
    "amplitude_factor",
    "backaction_occupancy",
    "excess_occupancy",
    "effective_occupancy",
    "min_occupancy",
    "required_quality_factor",
]

TWO_PI = 2.0 * math.pi

ArrayLike = Union[float, np.ndarray]


class InstabilityError(ValueError):
    """Anti-damped regime: total mechanical width is not positive."""


def _check_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class CavitySpec:
    """Optical cavity parameters.

    kappa and detuning are angular rates; detuning is signed,
    laser minus cavity resonance (red detuning is negative).
    """

    kappa: float
    detuning: float
    cavity_length: float | None = None
    laser_frequency: float | None = None
    input_transmission_ppm: float | None = None

    def __post_init__(self) -> None:
        _check_finite("kappa", self.kappa)
        _check_finite("detuning", self.detuning)
        if self.kappa <= 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if self.cavity_length is not None and self.cavity_length <= 0:
            raise ValueError("cavity_length must be positive when given")
        if self.laser_frequency is not None and self.laser_frequency <= 0:
            raise ValueError("laser_frequency must be positive when given")


@dataclass(frozen=True)
class MechMode:
    """A mechanical mode and its thermal bath.

    Either gamma_m or q_factor may be omitted; the missing one is filled in
    from gamma_m = omega_m / Q. Supplying both with a mismatch above 1e-9
    relative is an error.
    """

    omega_m: float
    gamma_m: float | None = None
    q_factor: float | None = None
    temperature: float = 300.0
    label: str = ""

    def __post_init__(self) -> None:
        _check_finite("omega_m", self.omega_m)
        if self.omega_m <= 0:
            raise ValueError(f"omega_m must be positive, got {self.omega_m}")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.gamma_m is None and self.q_factor is None:
            raise ValueError("one of gamma_m, q_factor is required")
        if self.gamma_m is None:
            object.__setattr__(self, "gamma_m", self.omega_m / self.q_factor)
        elif self.q_factor is None:
            object.__setattr__(self, "q_factor", self.omega_m / self.gamma_m)
        else:
            q_implied = self.omega_m / self.gamma_m
            if abs(q_implied - self.q_factor) > 1e-9 * self.q_factor:
                raise ValueError(
                    f"q_factor {self.q_factor} inconsistent with "
                    f"omega_m/gamma_m = {q_implied}"
                )
        if self.gamma_m <= 0:
            raise ValueError("gamma_m must be positive")


@dataclass(frozen=True)
class DriveField:
    """Cooling-beam drive, specified by single-photon coupling g0 plus
    exactly one of the input photon flux or the optical damping rate."""

    g0: float
    input_photon_flux: float | None = None
    gamma_opt: float | None = None

    def __post_init__(self) -> None:
        _check_finite("g0", self.g0)
        if self.g0 <= 0:
            raise ValueError("g0 must be positive")
        given = (self.input_photon_flux is not None) + (self.gamma_opt is not None)
        if given != 1:
            raise ValueError(
                "exactly one of input_photon_flux, gamma_opt must be given"
            )
        if self.input_photon_flux is not None and self.input_photon_flux < 0:
            raise ValueError("input_photon_flux must be non-negative")


@dataclass(frozen=True)
class LaserNoise:
    """White excess laser noise near the mechanical frequency: one-sided
    phase PSD s_phi_phi (rad^2/Hz) and relative-amplitude PSD s_eps_eps (1/Hz)."""

    s_phi_phi: float = 0.0
    s_eps_eps: float = 0.0

    def __post_init__(self) -> None:
        if self.s_phi_phi < 0 or self.s_eps_eps < 0:
            raise ValueError("noise PSDs must be non-negative")

    @property
    def is_zero(self) -> bool:
        return self.s_phi_phi == 0.0 and self.s_eps_eps == 0.0


@dataclass(frozen=True)
class OccupancyBudget:
    """Steady-state occupancy decomposition for one drive point."""

    n_th: float
    n_ba: float
    n_exc: float
    n_eff: float
    gamma_eff: float
    omega_eff: float
    gamma_opt: float = 0.0
    n_exc_phase: float = 0.0
    n_exc_amplitude: float = 0.0


def thermal_occupation(mode: MechMode) -> float:
    """Bath occupancy k_B T / (hbar Omega_m)."""
    return k_B * mode.temperature / (hbar * mode.omega_m)


def chi_m(omega: ArrayLike, mode: MechMode) -> complex | np.ndarray:
    """Mechanical susceptibility 1 / (-i(w - Omega_m) + Gamma_m/2)."""
    return 1.0 / (-1j * (omega - mode.omega_m) + mode.gamma_m / 2.0)


def chi_c(omega: ArrayLike, cavity: CavitySpec) -> complex | np.ndarray:
    """Cavity susceptibility 1 / (-i(w + Delta) + kappa/2)."""
    return 1.0 / (-1j * (omega + cavity.detuning) + cavity.kappa / 2.0)


def intracavity_mean_field(cavity: CavitySpec, flux: float) -> complex:
    """Mean intracavity amplitude sqrt(kappa) chi_c(0) sqrt(flux)."""
    if flux < 0:
        raise ValueError(f"photon flux must be non-negative, got {flux}")
    return math.sqrt(cavity.kappa) * chi_c(0.0, cavity) * math.sqrt(flux)


def _sideband_response(cavity: CavitySpec, omega_m: float) -> complex:
    """chi_c(Omega_m) - chi_c*(-Omega_m), the two-sideband response."""
    return chi_c(omega_m, cavity) - np.conj(chi_c(-omega_m, cavity))


def photon_flux(cavity: CavitySpec, mode: MechMode, drive: DriveField) -> float:
    """Input photon flux of the drive, inverting the optical-damping closed
    form when the drive is specified through gamma_opt."""
    if drive.input_photon_flux is not None:
        return drive.input_photon_flux
    re_b = _sideband_response(cavity, mode.omega_m).real
    if re_b == 0.0:
        raise ValueError("cannot infer flux: optical damping vanishes at Delta=0")
    mean_photons = drive.gamma_opt / (2.0 * drive.g0**2 * re_b)
    if mean_photons < 0:
        raise ValueError(
            "gamma_opt has the wrong sign for this detuning; no physical flux"
        )
    return mean_photons / (cavity.kappa * abs(chi_c(0.0, cavity)) ** 2)


def _mean_photon_number(cavity: CavitySpec, mode: MechMode, drive: DriveField) -> float:
    flux = photon_flux(cavity, mode, drive)
    return abs(intracavity_mean_field(cavity, flux)) ** 2


def optical_damping(cavity: CavitySpec, mode: MechMode, drive: DriveField) -> float:
    """Dynamical-backaction damping rate, positive for red detuning."""
    if drive.gamma_opt is not None:
        return drive.gamma_opt
    n_cav = _mean_photon_number(cavity, mode, drive)
    return 2.0 * drive.g0**2 * n_cav * _sideband_response(cavity, mode.omega_m).real


def spring_shift(cavity: CavitySpec, mode: MechMode, drive: DriveField) -> float:
    """Optical-spring-shifted mechanical frequency Omega_eff."""
    n_cav = _mean_photon_number(cavity, mode, drive)
    shift = drive.g0**2 * n_cav * _sideband_response(cavity, mode.omega_m).imag
    return mode.omega_m + shift


def sideband_angle(cavity: CavitySpec, omega_m: float) -> float:
    """Phase angle of the two-sideband response, in (-pi, pi]."""
    b = _sideband_response(cavity, omega_m)
    if b == 0:
        raise ValueError("sideband angle undefined at zero optical damping")
    return math.atan2(b.imag, b.real)


def amplitude_factor(cavity: CavitySpec, omega_m: float) -> float:
    """Dimensionless amplitude-noise coupling factor.

    Approaches 1 in the strongly resolved-sideband limit at Delta = -Omega_m.
    """
    b = _sideband_response(cavity, omega_m)
    if b.real == 0.0:
        raise ValueError("amplitude factor undefined at zero optical damping")
    c0 = chi_c(0.0, cavity)
    num = abs(
        np.conj(c0) * chi_c(omega_m, cavity)
        + c0 * np.conj(chi_c(-omega_m, cavity))
    )
    return num / (omega_m * abs(c0) ** 2 * b.real)


def backaction_occupancy(cavity: CavitySpec, omega_m: float) -> float:
    """Quantum-backaction occupancy floor; defined for red detuning only."""
    if cavity.detuning >= 0:
        raise ValueError(
            "backaction occupancy undefined/negative for non-cooling detuning"
        )
    half_k2 = (cavity.kappa / 2.0) ** 2
    ratio = (half_k2 + (cavity.detuning - omega_m) ** 2) / (
        half_k2 + (cavity.detuning + omega_m) ** 2
    )
    return 1.0 / (ratio - 1.0)


def _noise_coupling(theta: float, a_factor: float, noise: LaserNoise) -> float:
    """S_phiphi / cos^2(theta) + A^2 S_epseps, the detuning-weighted PSD sum."""
    cos_t = math.cos(theta)
    if noise.s_phi_phi > 0 and cos_t == 0.0:
        raise ValueError("phase-noise divergence at cos(theta) = 0")
    phase = noise.s_phi_phi / cos_t**2 if noise.s_phi_phi > 0 else 0.0
    return phase + a_factor**2 * noise.s_eps_eps


def excess_occupancy(
    gamma_opt: float,
    g0: float,
    omega_m: float,
    theta: float,
    a_factor: float,
    noise: LaserNoise,
) -> float:
    """Occupancy added by excess laser noise, linear in gamma_opt."""
    if gamma_opt < 0:
        raise ValueError("gamma_opt must be non-negative")
    return gamma_opt * omega_m**2 / (4.0 * g0**2) * _noise_coupling(theta, a_factor, noise)


def effective_occupancy(
    mode: MechMode,
    cavity: CavitySpec,
    drive: DriveField,
    noise: LaserNoise,
) -> OccupancyBudget:
    """Full occupancy budget of the driven mode at one cooling power."""
    gamma_opt = optical_damping(cavity, mode, drive)
    gamma_eff = mode.gamma_m + gamma_opt
    if gamma_eff <= 0:
        raise InstabilityError(
            f"total width {gamma_eff} <= 0: anti-damped, no steady state"
        )
    n_th = thermal_occupation(mode)
    if gamma_opt == 0.0:
        return OccupancyBudget(
            n_th=n_th, n_ba=0.0, n_exc=0.0, n_eff=n_th,
            gamma_eff=gamma_eff, omega_eff=mode.omega_m, gamma_opt=0.0,
        )
    n_ba = backaction_occupancy(cavity, mode.omega_m)
    theta = sideband_angle(cavity, mode.omega_m)
    a_fac = amplitude_factor(cavity, mode.omega_m)
    n_exc_phase = excess_occupancy(
        gamma_opt, drive.g0, mode.omega_m, theta, a_fac,
        LaserNoise(s_phi_phi=noise.s_phi_phi),
    )
    n_exc_amp = excess_occupancy(
        gamma_opt, drive.g0, mode.omega_m, theta, a_fac,
        LaserNoise(s_eps_eps=noise.s_eps_eps),
    )
    n_exc = n_exc_phase + n_exc_amp
    n_eff = (mode.gamma_m / gamma_eff) * n_th + (gamma_opt / gamma_eff) * (n_ba + n_exc)
    omega_eff = spring_shift(cavity, mode, drive)
    return OccupancyBudget(
        n_th=n_th,
        n_ba=n_ba,
        n_exc=n_exc,
        n_eff=n_eff,
        gamma_eff=gamma_eff,
        omega_eff=omega_eff,
        gamma_opt=gamma_opt,
        n_exc_phase=n_exc_phase,
        n_exc_amplitude=n_exc_amp,
    )


def min_occupancy(
    mode: MechMode,
    cavity: CavitySpec,
    g0: float,
    noise: LaserNoise,
) -> tuple[float, float]:
    """Power-optimized occupancy and the optical width achieving it.

    Returns (n_min, gamma_min); n_min * gamma_min == 2 Gamma_m n_th exactly.
    """
    if noise.is_zero:
        raise ValueError(
            "no finite optimum for zero excess noise; occupancy limited by "
            "backaction only"
        )
    theta = sideband_angle(cavity, mode.omega_m)
    a_fac = amplitude_factor(cavity, mode.omega_m)
    coupling = _noise_coupling(theta, a_fac, noise)
    n_th = thermal_occupation(mode)
    root = math.sqrt(mode.gamma_m * n_th)
    n_min = mode.omega_m * root / g0 * math.sqrt(coupling)
    gamma_min = 2.0 * g0 * root / mode.omega_m / math.sqrt(coupling)
    return n_min, gamma_min


def required_quality_factor(
    target_n_min: float,
    mode: MechMode,
    cavity: CavitySpec,
    g0: float,
    noise: LaserNoise,
) -> tuple[float, bool]:
    """Quality factor needed to push n_min down to a target, all else fixed.

    n_min scales as sqrt(Gamma_m) = sqrt(Omega_m / Q), so the answer is
    Q (n_min / target)^2. Returns (q_required, already_met); when the target
    is already met the current Q is returned with already_met=True.
    """
    if target_n_min <= 0:
        raise ValueError("target occupancy must be positive")
    n_min_now, _ = min_occupancy(mode, cavity, g0, noise)
    if target_n_min >= n_min_now:
        return mode.q_factor, True
    return mode.q_factor * (n_min_now / target_n_min) ** 2, False
