import math
import warnings

import numpy as np
import pytest

import sidecool as sc
from sidecool import fitting, spectra

TWO_PI = 2.0 * math.pi


@pytest.fixture
def cavity():
    """The published cavity at the main cooling detuning."""
    return sc.CavitySpec(
        kappa=TWO_PI * 204e3,
        detuning=-TWO_PI * 480e3,
        cavity_length=48e-3,
        laser_frequency=281.76e12,
    )


@pytest.fixture
def mode01():
    return sc.MechMode(
        omega_m=TWO_PI * 256e3, q_factor=1.18e7, temperature=300.0, label="(0,1)"
    )


@pytest.fixture
def mode02():
    return sc.MechMode(
        omega_m=TWO_PI * 593e3, q_factor=0.92e7, temperature=300.0, label="(0,2)"
    )


@pytest.fixture
def detection():
    return spectra.DetectionConfig(probe_kappa=TWO_PI * 204e3)


@pytest.fixture
def phase_noise():
    # S_nunu = 2.2e-2 Hz^2/Hz at 256 kHz expressed as a phase PSD
    return sc.LaserNoise(s_phi_phi=2.2e-2 / (256e3) ** 2)


def run_campaign(
    mode,
    cavity,
    detection,
    noise,
    g0,
    seed,
    floor,
    n_powers=12,
    n_averages=200,
    tone=None,
):
    """Synthesize and invert one full cooling campaign in memory."""
    n_min, gamma_min = sc.min_occupancy(mode, cavity, g0, noise)
    grid = np.geomspace(0.5 * gamma_min, 4.0 * gamma_min, n_powers)
    mode_f = mode.omega_m / TWO_PI
    background = spectra.BackgroundModel(
        tail_offset=0.0,
        tail_amplitude=floor * mode_f**2,
        tail_exponent=2.0,
        beat_center=mode_f + 45e3,
        beat_width=2e3,
        beat_amplitude=200.0 * floor,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        specs, truth = spectra.synthesize_campaign(
            mode=mode,
            cavity=cavity,
            g0=g0,
            gamma_opt_grid=grid,
            noise=noise,
            detection=detection,
            f_start=mode_f - 100e3,
            f_step=50.0,
            n_bins=4001,
            n_averages=n_averages,
            seed=seed,
            floor=floor,
            background=background,
            tone=tone,
        )
        result = fitting.analyze_campaign(
            specs,
            mode,
            cavity,
            detection,
            search_window=(mode_f - 30e3, mode_f + 30e3),
        )
    return result, {"n_min": n_min, "gamma_min": gamma_min, "truth": truth}
