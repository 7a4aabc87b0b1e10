"""Numerical laboratory for the 1D Burgers' equation with transported noise."""

__version__ = "0.1.0"

from .characteristics import (
    CharacteristicEnsemble,
    InitialProfile,
    exact_linear_solution,
    first_crossing,
    negative_line,
    sine_wave,
    steepest_negative_slope,
    step_ito,
    step_stratonovich_heun,
    step_wong_zakai,
)
from .field import GridField, Diagnostics, burgers_substep, evolve, step, transport_substep, viscous_substep
from .mclab import BoundCurve, McEstimate, aggregate, crossing_time_experiment, expected_slope_experiment
from .noise import (
    CorrectionFields,
    FourierCosMode,
    FourierSinMode,
    Line,
    LinearMode,
    NoiseBasis,
    TabulatedMode,
    Torus,
    assumption_report,
    correction_fields,
    eval_mode,
    fourier_pair_family,
)
from .paths import BrownianPath, TimeGrid, integrated_gbm, refine, sample_path
from .shocks import ShockCurve, detect_shock, integrate_srh, srh_residual
