import math

import numpy as np
import pytest
from scipy.constants import hbar, k as k_B

from sidecool import report
from sidecool.fitting import NoiseDiscrimination
from sidecool.report import FitReport, effective_temperature

TWO_PI = 2.0 * math.pi


def test_effective_temperature_definition():
    omega = TWO_PI * 256e3
    assert effective_temperature(120.0, omega) == pytest.approx(
        120.0 * hbar * omega / k_B, rel=1e-12
    )
    # frozen values used in the acceptance suite
    assert effective_temperature(120.0, TWO_PI * 256e3) == pytest.approx(
        1.4743e-3, rel=1e-4
    )
    assert effective_temperature(104.0, TWO_PI * 593e3) == pytest.approx(
        2.9598e-3, rel=1e-4
    )


def test_report_round_trip_with_nan_fraction(tmp_path):
    rep = FitReport(
        discrimination=NoiseDiscrimination(
            classification="phase-dominated",
            ratio=-1.83,
            ratio_sigma=0.05,
            expected_phase_ratio=-1.827,
            amplitude_fraction=float("nan"),
        ),
        t_eff_k=1.5e-3,
        q_eff=46.0,
        provenance={"config": "config.json"},
    )
    path = tmp_path / "report.json"
    rep.save(path)
    back = FitReport.load(path)
    assert back.discrimination.classification == "phase-dominated"
    assert math.isnan(back.discrimination.amplitude_fraction)
    assert back.t_eff_k == rep.t_eff_k
    assert back.q_eff == rep.q_eff
    assert back.provenance == rep.provenance
    assert back.cooling is None and back.noise is None and back.peaks == []
