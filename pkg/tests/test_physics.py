import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.constants import hbar, k as k_B

import sidecool as sc
from sidecool.physics import (
    CavitySpec,
    DriveField,
    InstabilityError,
    LaserNoise,
    MechMode,
    photon_flux,
)

from _oracles import excess_occupancy_unsimplified

TWO_PI = 2.0 * math.pi

detunings = st.floats(min_value=-900e3, max_value=-80e3)
kappas = st.floats(min_value=40e3, max_value=600e3)
mech_freqs = st.floats(min_value=80e3, max_value=900e3)


def make_cavity(kappa_hz, detuning_hz):
    return CavitySpec(kappa=TWO_PI * kappa_hz, detuning=TWO_PI * detuning_hz)


# ---------------------------------------------------------------------------
# dataclass validation
# ---------------------------------------------------------------------------


def test_mech_mode_fills_missing_width():
    m = MechMode(omega_m=TWO_PI * 256e3, q_factor=1.18e7, temperature=300.0)
    assert m.gamma_m == pytest.approx(m.omega_m / 1.18e7)
    m2 = MechMode(omega_m=TWO_PI * 256e3, gamma_m=m.gamma_m, temperature=300.0)
    assert m2.q_factor == pytest.approx(1.18e7)


def test_mech_mode_rejects_inconsistent_width_and_q():
    with pytest.raises(ValueError):
        MechMode(
            omega_m=TWO_PI * 256e3, gamma_m=1.0, q_factor=1e7, temperature=300.0
        )


def test_drive_field_requires_exactly_one_strength():
    with pytest.raises(ValueError):
        DriveField(g0=TWO_PI * 2.1)
    with pytest.raises(ValueError):
        DriveField(g0=TWO_PI * 2.1, input_photon_flux=1e14, gamma_opt=1.0)


def test_cavity_rejects_nonpositive_kappa():
    with pytest.raises(ValueError):
        CavitySpec(kappa=0.0, detuning=-1.0)


# ---------------------------------------------------------------------------
# susceptibilities
# ---------------------------------------------------------------------------


def test_chi_c_published_example(cavity):
    # at the mechanical frequency the response is suppressed and rotated
    val = sc.chi_c(TWO_PI * 256e3, cavity)
    # independent recomputation from the definition
    expected = 1.0 / (-1j * TWO_PI * (256e3 - 480e3) + TWO_PI * 102e3)
    assert val == pytest.approx(expected)


@given(kappa=kappas, detuning=detunings, f=st.floats(-1e6, 1e6))
def test_chi_c_detuning_reflection(kappa, detuning, f):
    """chi_c(-w) at detuning -Delta equals chi_c*(w) at Delta."""
    c1 = sc.chi_c(TWO_PI * f, make_cavity(kappa, detuning))
    c2 = sc.chi_c(-TWO_PI * f, make_cavity(kappa, -detuning))
    assert c2 == pytest.approx(np.conj(c1), rel=1e-12, abs=0)


@given(kappa=kappas, detuning=detunings, om=mech_freqs)
def test_optical_damping_antisymmetric_in_detuning(kappa, detuning, om):
    mode = MechMode(omega_m=TWO_PI * om, q_factor=1e7, temperature=300.0)
    drive = DriveField(g0=TWO_PI * 2.0, input_photon_flux=1e14)
    g_red = sc.optical_damping(make_cavity(kappa, detuning), mode, drive)
    g_blue = sc.optical_damping(make_cavity(kappa, -detuning), mode, drive)
    assert g_blue == pytest.approx(-g_red, rel=1e-10)
    assert g_red > 0  # red detuning damps


@given(kappa=kappas, detuning=detunings, om=mech_freqs,
       gopt=st.floats(10.0, 1e5))
def test_photon_flux_inverts_optical_damping(kappa, detuning, om, gopt):
    cavity = make_cavity(kappa, detuning)
    mode = MechMode(omega_m=TWO_PI * om, q_factor=1e7, temperature=300.0)
    by_gamma = DriveField(g0=TWO_PI * 2.0, gamma_opt=gopt)
    flux = photon_flux(cavity, mode, by_gamma)
    by_flux = DriveField(g0=TWO_PI * 2.0, input_photon_flux=flux)
    assert sc.optical_damping(cavity, mode, by_flux) == pytest.approx(gopt, rel=1e-10)


def test_thermal_occupation_matches_direct_ratio(mode01):
    expected = k_B * 300.0 / (hbar * TWO_PI * 256e3)
    assert sc.thermal_occupation(mode01) == pytest.approx(expected, rel=1e-12)
    assert sc.thermal_occupation(mode01) == pytest.approx(2.4418e7, rel=1e-4)


# ---------------------------------------------------------------------------
# occupancy budget
# ---------------------------------------------------------------------------


def test_backaction_floor_at_optimal_detuning():
    cavity = make_cavity(204e3, -256e3)
    assert sc.backaction_occupancy(cavity, TWO_PI * 256e3) == pytest.approx(
        0.039688, rel=1e-3
    )


def test_backaction_rejects_blue_detuning():
    with pytest.raises(ValueError):
        sc.backaction_occupancy(make_cavity(204e3, 100e3), TWO_PI * 256e3)


@settings(max_examples=200)
@given(kappa=kappas, detuning=detunings, om=mech_freqs,
       flux=st.floats(1e12, 1e16),
       s_phi=st.floats(1e-15, 1e-11), s_eps=st.floats(1e-16, 1e-12))
def test_excess_occupancy_matches_susceptibility_product_form(
    kappa, detuning, om, flux, s_phi, s_eps
):
    cavity = make_cavity(kappa, detuning)
    omega_m = TWO_PI * om
    g0 = TWO_PI * 2.0
    ref, gamma_opt = excess_occupancy_unsimplified(
        cavity, omega_m, g0, flux, s_phi, s_eps
    )
    theta = sc.sideband_angle(cavity, omega_m)
    a_fac = sc.amplitude_factor(cavity, omega_m)
    val = sc.excess_occupancy(
        gamma_opt, g0, omega_m, theta, a_fac,
        LaserNoise(s_phi_phi=s_phi, s_eps_eps=s_eps),
    )
    assert val == pytest.approx(ref, rel=1e-10)


def test_effective_occupancy_budget_sums(cavity, mode01, phase_noise):
    drive = DriveField(g0=TWO_PI * 2.1, gamma_opt=TWO_PI * 2e3)
    b = sc.effective_occupancy(mode01, cavity, drive, phase_noise)
    assert b.gamma_eff == pytest.approx(mode01.gamma_m + b.gamma_opt)
    recomposed = (mode01.gamma_m / b.gamma_eff) * b.n_th + (
        b.gamma_opt / b.gamma_eff
    ) * (b.n_ba + b.n_exc)
    assert b.n_eff == pytest.approx(recomposed, rel=1e-12)
    assert b.n_exc == pytest.approx(b.n_exc_phase + b.n_exc_amplitude, rel=1e-12)
    # phase noise only: nothing in the amplitude channel
    assert b.n_exc_amplitude == 0.0
    # optical spring shifts the resonance
    assert b.omega_eff != mode01.omega_m


def test_instability_raises_for_strong_blue_drive(mode01):
    blue = make_cavity(204e3, +480e3)
    drive = DriveField(g0=TWO_PI * 2.1, input_photon_flux=1e16)
    with pytest.raises(InstabilityError):
        sc.effective_occupancy(mode01, blue, drive, LaserNoise())


@settings(max_examples=100)
@given(kappa=kappas, detuning=detunings, om=mech_freqs,
       s_phi=st.floats(1e-15, 1e-11))
def test_min_occupancy_width_product_identity(kappa, detuning, om, s_phi):
    """n_min * gamma_min == 2 Gamma_m n_th independent of the noise level."""
    cavity = make_cavity(kappa, detuning)
    mode = MechMode(omega_m=TWO_PI * om, q_factor=1e7, temperature=300.0)
    noise = LaserNoise(s_phi_phi=s_phi)
    n_min, gamma_min = sc.min_occupancy(mode, cavity, TWO_PI * 2.0, noise)
    assert n_min * gamma_min == pytest.approx(
        2.0 * mode.gamma_m * sc.thermal_occupation(mode), rel=1e-10
    )


def test_min_occupancy_rejects_zero_noise(cavity, mode01):
    with pytest.raises(ValueError):
        sc.min_occupancy(mode01, cavity, TWO_PI * 2.1, LaserNoise())


def test_min_occupancy_optimum_is_a_minimum(cavity, mode01, phase_noise):
    """Occupancies at drives off the optimal width are strictly larger."""
    g0 = TWO_PI * 2.1
    n_min, gamma_min = sc.min_occupancy(mode01, cavity, g0, phase_noise)

    def occupancy_at(gamma_opt):
        b = sc.effective_occupancy(
            mode01, cavity, DriveField(g0=g0, gamma_opt=gamma_opt), phase_noise
        )
        # drop the backaction floor, which the closed form neglects
        return b.n_eff - (b.gamma_opt / b.gamma_eff) * b.n_ba

    at_opt = occupancy_at(gamma_min)
    assert at_opt == pytest.approx(n_min, rel=1e-3)
    assert occupancy_at(0.5 * gamma_min) > at_opt
    assert occupancy_at(2.0 * gamma_min) > at_opt


def test_required_quality_factor_scaling(cavity, mode01, phase_noise):
    g0 = TWO_PI * 2.1
    n_now, _ = sc.min_occupancy(mode01, cavity, g0, phase_noise)
    q_req, met = sc.required_quality_factor(n_now / 10, mode01, cavity, g0, phase_noise)
    assert not met
    assert q_req == pytest.approx(100 * mode01.q_factor, rel=1e-10)
    q_same, met_same = sc.required_quality_factor(
        2 * n_now, mode01, cavity, g0, phase_noise
    )
    assert met_same and q_same == mode01.q_factor


def test_sideband_angle_and_amplitude_factor_regressions(cavity):
    # frozen values for the published geometry
    theta = sc.sideband_angle(cavity, TWO_PI * 256e3)
    assert 1.0 / math.sin(2 * theta) == pytest.approx(-1.827, abs=2e-3)
    assert sc.amplitude_factor(cavity, TWO_PI * 593e3) == pytest.approx(1.183, abs=2e-3)
