"""Movement-habitat models: RSF, step selection, and hidden Markov models.

The package fits three model families relating animal relocation data to
environmental rasters and derives their products: selection-strength
curves, prediction maps, decoded behavioural states, and simulation-based
steady-state use. Hot numeric kernels live in a compiled extension with a
pure-Python fallback; set ``MOVEHAB_BACKEND=python`` to force the fallback.
"""

from .distributions import (GammaParams, VonMisesParams, gamma_logpdf,
                            log_i0, sample_gamma, sample_vonmises,
                            vonmises_logpdf, wrap_angle)
from .errors import (AllRestartsFailed, DegenerateInput, DomainError,
                     DuplicateTimestamp, ExtentExhausted, ExtentMismatch,
                     InvalidObservation, InvalidUpdatedKernel,
                     MissingCovariate, MissingMovementContext, MovehabError,
                     NonFiniteAtInit, NonFiniteCoordinate, NonStochasticInput,
                     OutOfExtent, ParseError, SeparationDetected,
                     SingularDesign, TooFewSteps, UnknownCovariate,
                     UsageError)
from .geodata import (Polygon, RasterGrid, buffer_convex, convex_hull,
                      extract_covariates, extract_many, point_in_polygon,
                      points_in_polygon, read_ascii_grid,
                      sample_uniform_in_polygon, write_ascii_grid)
from .hmm import (HmmFit, HmmFitConfig, HmmModel, fit_hmm, hmm_loglik,
                  obs_params_at, simulate_hmm, state_probabilities,
                  stationary_distribution, transition_matrix, viterbi_decode)
from .kernels import BACKEND
from .predict import (CurveTable, MovementContext, hmm_state_maps, log_rss,
                      logrss_curve, read_curve_csv, rsf_map,
                      simulate_ssf_path, ssud_map, state_prob_curve)
from .results import FitResult, load_fit, save_fit
from .rng import Rng
from .rsf import (UseAvailTable, availability_stability_scan,
                  build_use_avail, fit_logistic, rsf_linear_predictor)
from .ssf import (MovementKernel, StepTable, fit_conditional_logistic,
                  fit_tentative_kernel, generate_controls, make_ssf_spec,
                  update_movement_kernel)
from .track import (StepSeries, Track, interpolate_regular, read_track_csv,
                    thin, to_steps, validate_regular)

__version__ = "0.1.0"

__all__ = [
    "AllRestartsFailed", "BACKEND", "CurveTable", "DegenerateInput",
    "DomainError", "DuplicateTimestamp", "ExtentExhausted", "ExtentMismatch",
    "FitResult", "GammaParams", "HmmFit", "HmmFitConfig", "HmmModel",
    "InvalidObservation", "InvalidUpdatedKernel", "MissingCovariate",
    "MissingMovementContext", "MovehabError", "MovementContext",
    "MovementKernel", "NonFiniteAtInit", "NonFiniteCoordinate",
    "NonStochasticInput", "OutOfExtent", "ParseError", "Polygon",
    "RasterGrid", "Rng", "SeparationDetected", "SingularDesign",
    "StepSeries", "StepTable", "TooFewSteps", "Track", "UnknownCovariate",
    "UsageError", "UseAvailTable", "VonMisesParams",
    "availability_stability_scan", "buffer_convex", "build_use_avail",
    "convex_hull", "extract_covariates", "extract_many",
    "fit_conditional_logistic", "fit_hmm", "fit_logistic",
    "fit_tentative_kernel", "gamma_logpdf", "generate_controls",
    "hmm_loglik", "hmm_state_maps", "interpolate_regular", "load_fit",
    "log_i0", "log_rss", "logrss_curve", "make_ssf_spec", "obs_params_at",
    "point_in_polygon", "points_in_polygon", "read_ascii_grid",
    "read_curve_csv", "read_track_csv", "rsf_linear_predictor", "rsf_map",
    "sample_gamma", "sample_uniform_in_polygon", "sample_vonmises",
    "save_fit", "simulate_hmm", "simulate_ssf_path", "ssud_map",
    "state_prob_curve", "state_probabilities", "stationary_distribution",
    "thin", "to_steps", "transition_matrix",
    "update_movement_kernel", "validate_regular", "viterbi_decode",
    "vonmises_logpdf", "wrap_angle", "write_ascii_grid",
]
