"""Bayesian optimal experimental design for linear Gaussian inverse problems
posed on weighted discretized function spaces.

The package provides the weighted linear algebra (``operators``), Gaussian
measure calculus (``gaussian``), the Bayesian linear inverse problem
(``inverse``), closed-form design criteria with Monte Carlo cross-checks and
greedy sensor selection (``criteria``), a heat-equation reference model
(``heat``), and a config-driven command line (``cli``).
"""

__version__ = "0.1.0"

from .criteria import (
    CriterionReport,
    DesignWeights,
    GreedyResult,
    McEstimate,
    MseReport,
    bayes_risk,
    exhaustive_design,
    expected_info_gain,
    greedy_design,
    kl_divergence,
    log_evidence,
    map_mse,
    monte_carlo_estimate,
)
from .gaussian import (
    GaussianMeasure,
    expect_quad_form,
    gaussian_exp_integral,
    kl_gaussian_ref,
    make_rng,
    pushforward_affine,
)
from .heat import HeatModelConfig, build_forward, build_grid, build_prior, build_problem, default_config
from .inverse import (
    InverseProblem,
    PosteriorBundle,
    cameron_martin_inner,
    map_objective,
    misfit,
    misfit_hessian,
    posterior,
    preconditioned_hessian,
    preconditioned_hessian_spectrum,
    simulate_data,
    variance_reduction,
)
from .operators import (
    ComposedOperator,
    DenseOperator,
    DiagonalOperator,
    LinearOperator,
    LowRankOperator,
    ShiftedInverseOperator,
    Space,
    SpectralError,
    Spectrum,
    TruncationError,
    eig_self_adjoint,
    identity,
    logdet_i_plus,
    sqrt_apply,
    trace,
)

__all__ = [name for name in dir() if not name.startswith("_")]
