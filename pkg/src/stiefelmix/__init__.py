"""Bayesian nonparametric density estimation on Stiefel manifolds.

Dirichlet-process mixtures of matrix Langevin kernels, with the exact
kernel normalizer, exact samplers, a CRP Gibbs sampler and Monte Carlo
diagnostics.
"""

from .hypergeom import HypergeomConfig, TruncationInsufficient, log_0F1, mc_normalizer
from .langevin import LangevinParams, density, log_density, mean, sample
from .manifold import (
    DegenerateInputError,
    InvalidShapeError,
    frobenius_distance,
    perturb,
    project,
    sample_haar,
    validate,
)
from .mixture import (
    ChainOutput,
    MixtureState,
    cluster_count_histogram,
    coclustering_matrix,
    init_state,
    log_predictive,
    reassign_sweep,
    run_chain,
    update_cluster_params,
)
from .priors import (
    DiscreteKappa,
    DiscreteLocation,
    GammaPrior,
    HaarLocation,
    PointMass,
    PriorSpec,
    TruncatedExponential,
    WeibullPrior,
)

__version__ = "0.1.0"
