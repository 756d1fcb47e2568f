"""Consensus-based global optimization with a regularized Gibbs weight.

An interacting particle system contracts toward a weighted ensemble
average whose weights sharpen around the best objective values seen; the
regularizer keeps those weights bounded away from degeneracy, which is
what makes every contraction threshold in :mod:`cbolab.theory` finite and
checkable.  :mod:`cbolab.dynamics` integrates the system with
counter-keyed noise streams so runs are reproducible and couplable,
:mod:`cbolab.metrics` measures distances between particle clouds, and
:mod:`cbolab.harness` turns all of it into Monte Carlo experiments with
closed-form pass/fail criteria.
"""

__version__ = "0.1.0"

from .consensus import WeightedConsensus, weighted_mean, weighted_mean_measure
from .dynamics import (
    CoupledRun,
    Ensemble,
    GaussianInit,
    ModelParams,
    NoiseModel,
    PointInit,
    TimeSeries,
    UniformBox,
    coupled_run,
    default_dt,
    em_step,
    exchangeability_probe,
    simulate,
    simulate_meanfield,
    stream,
)
from .errors import (
    CbolabError,
    ConfigError,
    DivergedRunError,
    InvalidInputError,
    InvalidParameterError,
    ThresholdNotMetError,
    UnsupportedObjectiveError,
)
from .metrics import (
    EmpiricalMeasure,
    concentration_frequency,
    decay_fit,
    laplace_value,
    moments,
    wasserstein_p,
)
from .objectives import ObjectiveSpec, by_name, check_assumptions, rastrigin, shifted_quadratic
from .theory import (
    RegularizerSchedule,
    ThresholdReport,
    chaos_threshold,
    kappa_max,
    lambda_alpha,
    lipschitz_estimate,
    meanfield_threshold,
    noise_threshold,
    particle_threshold,
    threshold_report,
    weighted_energy_floor,
    wellprepared_margin,
    wellprepared_rhs,
)

__all__ = [
    "__version__",
    "WeightedConsensus",
    "weighted_mean",
    "weighted_mean_measure",
    "CoupledRun",
    "Ensemble",
    "GaussianInit",
    "ModelParams",
    "NoiseModel",
    "PointInit",
    "TimeSeries",
    "UniformBox",
    "coupled_run",
    "default_dt",
    "em_step",
    "exchangeability_probe",
    "simulate",
    "simulate_meanfield",
    "stream",
    "CbolabError",
    "ConfigError",
    "DivergedRunError",
    "InvalidInputError",
    "InvalidParameterError",
    "ThresholdNotMetError",
    "UnsupportedObjectiveError",
    "EmpiricalMeasure",
    "concentration_frequency",
    "decay_fit",
    "laplace_value",
    "moments",
    "wasserstein_p",
    "ObjectiveSpec",
    "by_name",
    "check_assumptions",
    "rastrigin",
    "shifted_quadratic",
    "RegularizerSchedule",
    "ThresholdReport",
    "chaos_threshold",
    "kappa_max",
    "lambda_alpha",
    "lipschitz_estimate",
    "meanfield_threshold",
    "noise_threshold",
    "particle_threshold",
    "threshold_report",
    "weighted_energy_floor",
    "wellprepared_margin",
    "wellprepared_rhs",
]
