"""sidecool: forward model and inverse analysis for resolved-sideband optical
cooling of a membrane inside a cavity.

Submodules:
    physics  -- susceptibilities, damping/occupancy budget, cooling limits
    spectra  -- displacement-spectrum model, detection filter, synthesis
    fitting  -- background/peak/cooling-curve fits, noise discrimination
    dataio   -- spectrum files, calibration tone, config, unit conversions
    report   -- JSON fit reports
"""

from .physics import (
    CavitySpec,
    DriveField,
    InstabilityError,
    LaserNoise,
    MechMode,
    OccupancyBudget,
    amplitude_factor,
    backaction_occupancy,
    chi_c,
    chi_m,
    effective_occupancy,
    excess_occupancy,
    min_occupancy,
    optical_damping,
    required_quality_factor,
    sideband_angle,
    spring_shift,
    thermal_occupation,
)
from .spectra import (
    BackgroundModel,
    CalibrationTone,
    DetectionConfig,
    LineshapeCoeffs,
    Spectrum,
    SpectrumUnits,
    model_coefficients,
    output_psd,
    peak_model,
    synthesize_campaign,
    synthesize_measured_spectrum,
)
from .fitting import (
    CampaignResult,
    CoolingCurveResult,
    FitConvergenceError,
    NoiseDiscrimination,
    NoiseExtraction,
    PeakFitResult,
    PeakNotFoundError,
    analyze_campaign,
    analyze_peak,
    discriminate_noise,
    extract_noise_psd,
    fit_background,
    fit_cooling_curve,
    fit_peak,
    nlls_fit,
    subtract_background,
)
from .dataio import (
    ExperimentConfig,
    calibrate_with_tone,
    load_config,
    read_spectrum,
    save_config,
    write_spectrum,
)
from .report import FitReport, TOOL_VERSION, effective_temperature

__version__ = TOOL_VERSION
