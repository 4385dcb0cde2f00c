"""Minimum Hellinger distance estimation of finite mixtures with kernel smoothing."""

from .densities import (
    CauchyLoc,
    CauchyLocScale,
    GaussianLoc,
    GaussianLocScale,
    KernelFamily,
    QuadratureGrid,
    Sample,
    ShiftMixture,
    SkewNormal,
    SmoothingKernel,
    StudentT,
    build_grid,
    convolve,
    eval_density,
    make_family,
    mixture_density,
    sample,
    smoothed_empirical,
)
from .divergences import hellinger, total_variation, weighted_hellinger
from .estimator import (
    FitConfig,
    FitResult,
    HellingerProblem,
    MinimumHellingerMixture,
    fit_fixed_order,
    initial_starts,
    objective,
    warm_start_split,
)
from .measures import MixingMeasure, ParameterBox, canonicalize, min_mass_separation, wasserstein
from .selection import (
    HellingerOrderSelector,
    SelectionResult,
    algorithm1,
    algorithm2,
    bic_cn,
    epsilon_feasibility,
    ws_algorithm,
)

__version__ = "0.1.0"

__all__ = [
    "CauchyLoc",
    "CauchyLocScale",
    "FitConfig",
    "FitResult",
    "GaussianLoc",
    "GaussianLocScale",
    "HellingerOrderSelector",
    "HellingerProblem",
    "KernelFamily",
    "MinimumHellingerMixture",
    "MixingMeasure",
    "ParameterBox",
    "QuadratureGrid",
    "Sample",
    "SelectionResult",
    "ShiftMixture",
    "SkewNormal",
    "SmoothingKernel",
    "StudentT",
    "algorithm1",
    "algorithm2",
    "bic_cn",
    "build_grid",
    "canonicalize",
    "convolve",
    "epsilon_feasibility",
    "eval_density",
    "fit_fixed_order",
    "hellinger",
    "initial_starts",
    "make_family",
    "min_mass_separation",
    "mixture_density",
    "objective",
    "sample",
    "smoothed_empirical",
    "total_variation",
    "warm_start_split",
    "wasserstein",
    "weighted_hellinger",
    "ws_algorithm",
]
