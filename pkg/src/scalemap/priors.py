"""Sparse precision matrices for iCAR, LCAR (Leroux) and BYM priors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graph import AdjacencyGraph, connected_components

FAMILIES = ("icar", "lcar", "bym")


@dataclass(frozen=True)
class CarSpec:
    """Prior family plus its hyperparameters on the natural scale."""

    family: str
    tau: float = 1.0
    lam: float = 0.0
    tau_u: float = 1.0
    tau_v: float = 1.0

    def __post_init__(self):
        fam = self.family.lower()
        if fam not in FAMILIES:
            raise ValueError(f"unknown CAR family {self.family!r}")
        object.__setattr__(self, "family", fam)
        for name in ("tau", "tau_u", "tau_v"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if not 0.0 <= self.lam < 1.0:
            raise ValueError("lambda must lie in [0, 1)")

    @property
    def n_hyper(self) -> int:
        return {"icar": 1, "lcar": 2, "bym": 2}[self.family]

    def to_internal(self) -> np.ndarray:
        """Unconstrained coordinates: log precisions, logit of lambda."""
        if self.family == "icar":
            return np.array([np.log(self.tau)])
        if self.family == "lcar":
            return np.array([np.log(self.tau), np.log(self.lam) - np.log1p(-self.lam)])
        return np.array([np.log(self.tau_u), np.log(self.tau_v)])

    @classmethod
    def from_internal(cls, family: str, theta) -> "CarSpec":
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        family = family.lower()
        if family == "icar":
            return cls("icar", tau=float(np.exp(theta[0])))
        if family == "lcar":
            lam = float(1.0 / (1.0 + np.exp(-theta[1])))
            return cls("lcar", tau=float(np.exp(theta[0])), lam=min(lam, np.nextafter(1.0, 0.0)))
        return cls("bym", tau_u=float(np.exp(theta[0])), tau_v=float(np.exp(theta[1])))


@dataclass(frozen=True, eq=False)
class SparsePrecision:
    """Symmetric sparse precision with its linear constraints ``A x = 0``."""

    n: int
    matrix: sp.csr_matrix
    rank_deficiency: int
    constraints: np.ndarray


def structure_matrix(g: AdjacencyGraph) -> sp.csr_matrix:
    """D_W - W."""
    R = (sp.diags(g.degrees.astype(float)) - g.adjacency).tocsr()
    R.sort_indices()
    return R


def component_constraints(g: AdjacencyGraph) -> np.ndarray:
    """One sum-to-zero row per connected component."""
    comps = connected_components(g)
    A = np.zeros((len(comps), g.n))
    for r, c in enumerate(comps):
        A[r, c] = 1.0
    return A


def precision_coefficients(spec: CarSpec) -> tuple[float, float]:
    """``(a, b)`` with Q = a (D_W - W) + b I for the single-field families."""
    if spec.family == "icar":
        return spec.tau, 0.0
    if spec.family == "lcar":
        return spec.tau * spec.lam, spec.tau * (1.0 - spec.lam)
    raise ValueError("BYM precision is a 2n block matrix; use build_bym")


def build_icar(g: AdjacencyGraph, tau: float) -> SparsePrecision:
    if not tau > 0:
        raise ValueError("tau must be strictly positive")
    A = component_constraints(g)
    return SparsePrecision(g.n, (tau * structure_matrix(g)).tocsr(), len(A), A)


def build_lcar(g: AdjacencyGraph, tau: float, lam: float) -> SparsePrecision:
    spec = CarSpec("lcar", tau=tau, lam=lam)
    a, b = precision_coefficients(spec)
    Q = (a * structure_matrix(g) + b * sp.identity(g.n, format="csr")).tocsr()
    Q.sort_indices()
    # full rank, but a global sum-to-zero keeps the field separable from the intercept
    return SparsePrecision(g.n, Q, 0, np.ones((1, g.n)))


def build_bym(g: AdjacencyGraph, tau_u: float, tau_v: float) -> SparsePrecision:
    """Precision of the stacked vector (u, v), u iCAR and v i.i.d. noise."""
    CarSpec("bym", tau_u=tau_u, tau_v=tau_v)
    Q = sp.block_diag(
        [tau_u * structure_matrix(g), tau_v * sp.identity(g.n)], format="csr"
    )
    comps = connected_components(g)
    return SparsePrecision(2 * g.n, Q, len(comps), np.ones((1, 2 * g.n)))


def build_precision(g: AdjacencyGraph, spec: CarSpec) -> SparsePrecision:
    if spec.family == "icar":
        return build_icar(g, spec.tau)
    if spec.family == "lcar":
        return build_lcar(g, spec.tau, spec.lam)
    return build_bym(g, spec.tau_u, spec.tau_v)
