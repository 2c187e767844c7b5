"""Optimal significance levels and nested-subpopulation sizes for biomarker-driven trials."""
from .constraint import (CandidateSet, complete, fwer, fwer_batch, generate_candidates,
                         solve_alpha_n)
from .errors import (DomainError, InfeasibleOptimumError, InsufficientCandidatesError,
                     NonConvergenceError, NonFiniteObjectiveError, NotPositiveDefiniteError,
                     SingularCovarianceError, SweepError, TrialDesignError, ValidationError,
                     WorkBudgetError)
from .model import (SCENARIOS, AlphaVector, EffectPrior, NestedDesign, Scenario, SizingParams,
                    build_alternative_mean, build_null_covariance, build_prior, design_for,
                    information_units, normal_quantile_upper)
from .mvn import bvn_cdf, cholesky, mvn_cdf, sample_mvn
from .optimize import (AlphaOptimum, BoxBounds, OptResult, maximize_bounded, optimize_alpha,
                       optimize_alpha_gridsum)
from .power import (FINE_GRID, GridConfig, McConfig, PowerEstimate, power_convolution,
                    power_fine_grid, power_grid_sum, power_monte_carlo)
from .sweep import (ComparisonStats, RGrid, SweepResult, compare_methods, comparison_stats,
                    relative_difference, sweep)
from .tps import TpsSurface, eval_tps, fit_tps, grad_tps

__version__ = "0.1.0"
