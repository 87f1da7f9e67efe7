from vcam.estimation import EstimationConfig, fit_three_step, select_by_bic
from vcam.identification import IdentificationResult, PenaltyConfig, identify
from vcam.model import ComponentFunction, ComponentKind, TimeSeriesDataset, VcamFit
from vcam.simulation import (
    Example,
    ScenarioSpec,
    generate_example1,
    generate_example2,
    run_monte_carlo,
)
