"""End-to-end exercises of the command-line interface, run in-process."""

import json
import math
import warnings

import numpy as np
import pytest

import sidecool as sc
from sidecool import cli, dataio, report, spectra
from sidecool.dataio import ExperimentConfig
from sidecool.spectra import CalibrationTone

TWO_PI = 2.0 * math.pi


@pytest.fixture
def config_path(tmp_path, cavity, mode01, mode02, detection):
    cfg = ExperimentConfig(
        cavity=cavity,
        modes=[mode01, mode02],
        detection=detection,
        noise=sc.LaserNoise(s_phi_phi=2.2e-2 / 256e3**2),
        calibration_tone=CalibrationTone(frequency_hz=340e3, power_hz2=10.0),
        g0=TWO_PI * 2.1,
    )
    path = tmp_path / "config.json"
    dataio.save_config(cfg, path)
    return str(path)


def _run(argv):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return cli.main(argv)


def _synth(config_path, out_dir, extra=()):
    return _run(
        [
            "synth",
            "--config", config_path,
            "--seed", "7",
            "--out-dir", str(out_dir),
            "--points", "4",
            "--n-averages", "150",
            "--f-step-hz", "50",
            "--floor", "3.5e-3",
            *extra,
        ]
    )


def test_synth_writes_manifest_and_spectra(tmp_path, config_path):
    out = tmp_path / "camp"
    assert _synth(config_path, out) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["files"]) == 4
    assert len(manifest["truth"]) == 4
    assert manifest["seed"] == 7
    spec = dataio.read_spectrum(out / manifest["files"][0])
    assert spec.n_averages == 150
    # calibration tone present on the grid
    idx = int(round((340e3 - spec.f_start) / spec.f_step))
    assert spec.values[idx] > 10 * np.median(spec.values)


def test_synth_is_seed_reproducible(tmp_path, config_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _synth(config_path, a) == 0
    assert _synth(config_path, b) == 0
    fa = json.loads((a / "manifest.json").read_text())["files"][0]
    va = dataio.read_spectrum(a / fa).values
    vb = dataio.read_spectrum(b / fa).values
    assert np.array_equal(va, vb)


def test_full_pipeline_recovers_truth(tmp_path, config_path):
    """synth -> fit-peak x N -> cooling-curve reproduces the generating
    parameters within the reported uncertainties."""
    out = tmp_path / "camp"
    assert (
        _run(
            [
                "synth", "--config", config_path, "--seed", "3",
                "--out-dir", str(out), "--points", "8",
                "--n-averages", "200", "--f-step-hz", "50",
                "--floor", "3.5e-3",
            ]
        )
        == 0
    )
    manifest = json.loads((out / "manifest.json").read_text())
    frags = []
    for i, name in enumerate(manifest["files"]):
        frag = out / f"frag_{i}.json"
        code = _run(
            [
                "fit-peak", "--config", config_path,
                "--spectrum", str(out / name),
                "--out", str(frag),
                "--plot-data", str(out / f"plot_{i}.tsv"),
            ]
        )
        assert code == 0
        frags.append(str(frag))

    plot = (out / "plot_0.tsv").read_text().splitlines()
    assert plot[0].split("\t") == [
        "frequency_hz", "data", "fit", "lorentzian_fit", "residual"
    ]
    assert len(plot) > 100

    final = out / "report.json"
    code = _run(
        [
            "cooling-curve", "--config", config_path, *frags,
            "--out", str(final),
            "--plot-data", str(out / "curve.tsv"),
        ]
    )
    assert code == 0

    rep = report.FitReport.load(final)
    truth = manifest["truth"]
    assert rep.cooling.g0_hz == pytest.approx(2.1, rel=0.05)
    n_min_true = truth[0]["n_min"] if "n_min" in truth[0] else None
    assert rep.discrimination.classification == "phase-dominated"
    assert rep.noise.s_nu_nu == pytest.approx(2.2e-2, rel=0.1)
    assert rep.t_eff_k > 0
    assert rep.q_eff > 0
    assert len(rep.peaks) == 8
    assert (out / "curve.tsv").read_text().startswith("gamma_eff_hz")


def test_fit_peak_fails_cleanly_without_peak(tmp_path, config_path, capsys):
    flat = spectra.Spectrum(
        f_start=156e3, f_step=50.0, values=np.full(4001, 3.5e-3),
        units=spectra.SpectrumUnits.HZ2_PER_HZ, n_averages=100,
    )
    idx = int(round((340e3 - 156e3) / 50.0))
    flat.values[idx] += 10.0 / 50.0  # tone so calibration succeeds
    path = tmp_path / "flat.csv"
    dataio.write_spectrum(flat, path)
    code = _run(
        [
            "fit-peak", "--config", config_path,
            "--spectrum", str(path), "--out", str(tmp_path / "frag.json"),
        ]
    )
    assert code == 1
    assert "error" in capsys.readouterr().err.lower()


def test_cooling_curve_requires_three_fragments(tmp_path, config_path, capsys):
    code = _run(
        [
            "cooling-curve", "--config", config_path,
            str(tmp_path / "a.json"), str(tmp_path / "b.json"),
            "--out", str(tmp_path / "r.json"),
        ]
    )
    assert code == 1
    assert "3" in capsys.readouterr().err


def test_predict_detuning_sweep_flags_unstable(tmp_path, config_path):
    out = tmp_path / "sweep.tsv"
    code = _run(
        [
            "predict", "--config", config_path,
            "--sweep", "detuning", "--min=-600e3", "--max", "100e3",
            "--points", "15", "--out", str(out),
        ]
    )
    assert code == 0
    lines = out.read_text().splitlines()
    header = lines[0].split("\t")
    assert "n_min" in header and "flag" in header
    flags = [ln.split("\t")[-1] for ln in lines[1:]]
    assert "unstable" in flags  # blue-detuned rows
    assert flags.count("ok") > 5  # red-detuned rows are fine
    # red-detuned n_min values are finite and positive
    i_nmin = header.index("n_min")
    good = [float(ln.split("\t")[i_nmin]) for ln in lines[1:]
            if ln.split("\t")[-1] == "ok"]
    assert all(v > 0 for v in good)


def test_predict_gamma_opt_sweep_has_minimum(tmp_path, config_path):
    out = tmp_path / "gsweep.tsv"
    code = _run(
        [
            "predict", "--config", config_path,
            "--sweep", "gamma-opt", "--min", "200", "--max", "50e3",
            "--points", "40", "--log", "--out", str(out),
        ]
    )
    assert code == 0
    lines = out.read_text().splitlines()
    header = lines[0].split("\t")
    i_neff = header.index("n_eff")
    n_eff = np.array([float(ln.split("\t")[i_neff]) for ln in lines[1:]])
    # interior minimum: the optimum damping lies inside the sweep
    i_min = int(np.argmin(n_eff))
    assert 0 < i_min < n_eff.size - 1


def test_convert_round_trip(capsys, config_path):
    assert _run(
        ["convert", "--quantity", "snn-to-sphiphi", "--value", "2.2e-2",
         "--frequency-hz", "256e3"]
    ) == 0
    s_phi = float(capsys.readouterr().out.strip())
    assert s_phi == pytest.approx(2.2e-2 / 256e3**2, rel=1e-12, abs=0)

    assert _run(
        ["convert", "--quantity", "snn-to-sll", "--value", "1e-2",
         "--config", config_path]
    ) == 0
    s_ll = float(capsys.readouterr().out.strip())
    assert s_ll == pytest.approx(2.902e-34, rel=1e-3, abs=0)


def test_convert_requires_frequency(capsys):
    code = _run(["convert", "--quantity", "snn-to-sphiphi", "--value", "1e-2"])
    assert code == 1
    assert "frequency" in capsys.readouterr().err.lower()
