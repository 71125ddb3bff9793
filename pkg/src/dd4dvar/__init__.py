"""Four-dimensional variational data assimilation by overlapping domain
decomposition in space and time, with an error-analysis harness."""

from ._validation import (CFLViolationError, ConfigError, ConvergenceError,
                          NotSPDError)
from .analysis import (ConditionReport, ConsistencyRow, StabilityRow,
                       TruncationReport, compute_truncation_errors,
                       condition_numbers, consistency_sweep, spectral_condition,
                       stability_sweep, verify_minimum_equality)
from .assimilation import (AssimilationState, DDFourDVar, GlobalFourDVar,
                           LocalProblem, asm_sweep, conjugate_gradient,
                           global_cost)
from .covariance import (BackgroundCovariance, ObservationCovariance,
                         factor_covariance, gaussian_correlation)
from .domain import (Decomposition, DiscreteDomain, RestrictionMap,
                     build_domain, decompose, extend, gather, overlap_map,
                     restrict, subdomain_map)
from .experiment import (DEFAULT_CONFIG, Experiment, ExperimentConfig,
                         build_experiment, config_from_dict, dd_estimator,
                         default_config, global_estimator, load_config)
from .models import (LinearModel, LocalModel, build_advection_model,
                     build_local_model, build_swe_model, compose_slab,
                     local_traces_from_global, physical_nodes, run_background,
                     run_local_model, sample_advection_trajectory,
                     sample_swe_trajectory, stack_state, swe_exact,
                     advection_exact, unstack_state)
from .observations import (LocalObservations, ObservationOperator,
                           ObservationSet, build_interpolation,
                           observations_to_csv, restrict_observations,
                           subdomain_rows, synthesize_observations,
                           uniform_locations, window_instants)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
