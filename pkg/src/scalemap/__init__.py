"""Scalable Bayesian disease mapping with CAR priors and Laplace approximations.

Areal counts are modelled as ``O_i ~ Poisson(E_i exp(alpha + xi_i))`` with an
intrinsic or Leroux CAR prior on ``xi``.  Large maps are split into
subregions, fitted independently and merged back into one risk surface.
"""

__version__ = "0.1.0"

from .criteria import CriteriaReport, approx_dic, approx_waic, exact_dic, saturated_logdev
from .data import StratifiedData, crude_rate_and_smr, expected_cases_indirect
from .engine import FitBundle, FitPlan, fit
from .graph import (
    AdjacencyGraph,
    DomainPartition,
    connected_components,
    grid_partition,
    induced_subgraph,
    k_order_expand,
    lattice_graph,
    load_graph,
)
from .laplace import LaplaceConfig, ObservedData, SubmodelFit, fit_submodel, poisson_loglik
from .merge import MergedPosterior, estimate_alpha, exceedance, merge, merge_disjoint, merge_mixture
from .mixture import MixtureSet
from .priors import CarSpec, build_precision
from .simulation import TrueSurface, generate_counts, scenario1, scenario2, score

__all__ = [
    "AdjacencyGraph", "CarSpec", "CriteriaReport", "DomainPartition", "FitBundle", "FitPlan",
    "LaplaceConfig", "MergedPosterior", "MixtureSet", "ObservedData", "StratifiedData",
    "SubmodelFit", "TrueSurface", "approx_dic", "approx_waic", "build_precision",
    "connected_components", "crude_rate_and_smr", "estimate_alpha", "exact_dic", "exceedance",
    "expected_cases_indirect", "fit", "fit_submodel", "generate_counts", "grid_partition",
    "induced_subgraph", "k_order_expand", "lattice_graph", "load_graph", "merge",
    "merge_disjoint", "merge_mixture", "poisson_loglik", "saturated_logdev", "scenario1",
    "scenario2", "score",
]
