"""Minimum-divergence projections onto moment constraints on the unit cube,
with the sequential tests, confidence sequences and change detectors built
on them."""

from .channel import DyadicGrid, kernel_distribution, pushforward, sample_channel
from .core import (
    CHI_SQUARED,
    HELLINGER,
    KL,
    DimensionMismatch,
    DomainError,
    FDivergenceSpec,
    FiniteDistribution,
    InteriorMeanRequired,
    f_divergence,
    kl_divergence,
    mean,
)
from .fdiv_dual import FDualPoint, chisq_inf, dinf, fdiv_dual_objective, hellinger_inf
from .general_constraint import (
    ConstraintFunction,
    ConstraintSet,
    UnboundedDualSuspected,
    certify_feasible,
    general_dual_objective,
    klinf_general,
)
from .klinf_dual import KlinfResult, MeanDualVector, dual_gradient, dual_objective, klinf, support_gap
from .primal_oracle import primal_fdiv_finite, primal_klinf_finite, restricted_support

__version__ = "0.1.0"
