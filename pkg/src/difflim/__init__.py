"""Monte Carlo laboratory for weak limits of ``dxi = a_T(xi) dt + dW`` and its additive functionals."""

from .drift_models import (
    THEOREM_TAGS,
    DriftFamily,
    FunctionalFamily,
    LimitModel,
    Scenario,
    TransformFamily,
    UnknownScenarioError,
    known_ids,
    list_scenarios,
    parse_scenario_id,
    registry_get,
    residual_q1,
    residual_q2,
)
from .limits import (
    LimitEnsemble,
    LimitPath,
    limit_beta1,
    limit_beta1_tilde,
    limit_beta2,
    limit_i0,
    limit_i_thm7,
    run_limit_ensemble,
    sample_besq_exact,
    sample_limit_law,
    simulate_limit,
)
from .runner import ConfigError, ExperimentConfig, Report, emit_report, load_config, run_experiment
from .scale import (
    ClassK1Error,
    DomainTooWideError,
    OutOfTableError,
    ScaleTable,
    build_scale,
    check_A1,
    check_A2,
    check_A3,
    check_A4,
    check_growth,
    check_thm7,
    nested_integral,
    scale_inverse,
)
from .sde_engine import (
    EnsembleResult,
    PathSample,
    StepPolicy,
    coupled_policy,
    mix64,
    run_ensemble,
    simulate_path_em,
    simulate_path_transformed,
)
from .stats import (
    EmpiricalLaw,
    convergence_trend,
    ks_two_sample,
    mean_ci,
    occupation_fraction,
    wasserstein1,
)

__version__ = "0.1.0"
