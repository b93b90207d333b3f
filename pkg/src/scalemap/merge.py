"""Merging submodel posteriors into one risk surface."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .engine import FitBundle, submodel_seed
from .kde import DensityEstimate, kde
from .mixture import MixtureSet

CPO_FLOOR = 1e-300


class MergeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MergedPosterior:
    """Per-area log-risk marginals and their summaries on the risk scale."""

    marginals: MixtureSet
    mean: np.ndarray
    sd: np.ndarray
    median: np.ndarray
    q025: np.ndarray
    q975: np.ndarray
    exceed_prob: np.ndarray
    cover_weights: list | None = None
    alpha: DensityEstimate | None = None

    @property
    def n(self) -> int:
        return len(self.mean)

    @classmethod
    def from_marginals(cls, marginals: MixtureSet, cover_weights=None) -> "MergedPosterior":
        med = np.exp(marginals.quantile(0.5))
        lo = np.exp(marginals.quantile(0.025))
        hi = np.exp(marginals.quantile(0.975))
        return cls(marginals, marginals.exp_mean(), marginals.exp_sd(), med, lo, hi,
                   exceedance(marginals, 1.0), cover_weights)

    def with_alpha(self, alpha: DensityEstimate) -> "MergedPosterior":
        return MergedPosterior(self.marginals, self.mean, self.sd, self.median, self.q025,
                               self.q975, self.exceed_prob, self.cover_weights, alpha)

    def density_table(self, i: int, npoints: int = 512):
        """(log-risk grid, density) for area ``i`` on the shared evaluation grid."""
        m = self.marginals[i]
        x = m.eval_grid(npoints)
        return x[0], m.pdf(x)[0]


def exceedance(marginals: MixtureSet, threshold: float = 1.0) -> np.ndarray:
    """P(r_i > threshold) from log-scale marginals."""
    return marginals.exceedance(np.log(threshold))


def _pad_stack(parts: list[MixtureSet]) -> MixtureSet:
    K = max(p.weights.shape[1] for p in parts)

    def pad(a):
        return np.pad(a, ((0, 0), (0, K - a.shape[1])))

    return MixtureSet(np.vstack([pad(p.weights) for p in parts]),
                      np.vstack([pad(p.means) for p in parts]),
                      np.vstack([pad(p.sds) for p in parts]))


def merge_disjoint(bundle: FitBundle) -> MergedPosterior:
    """Union of the submodel marginals; each area must be covered exactly once."""
    cover = np.zeros(bundle.n, dtype=np.int64)
    for f in bundle.fits:
        cover[f.global_index] += 1
    if not np.all(cover == 1):
        raise MergeError("disjoint merge needs every area covered by exactly one submodel")
    parts = [f.marginals() for f in bundle.fits]
    stacked = _pad_stack(parts)
    order = np.concatenate([f.global_index for f in bundle.fits])
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))
    return MergedPosterior.from_marginals(stacked[inv])


def cover_table(bundle: FitBundle):
    """For each area, the list of ``(submodel d, local index)`` covering it."""
    table = [[] for _ in range(bundle.n)]
    for d, f in enumerate(bundle.fits):
        for loc, gi in enumerate(f.global_index):
            table[gi].append((d, loc))
    return table


def mixture_weights(bundle: FitBundle) -> list[np.ndarray]:
    """CPO-proportional weights of the covering submodels, per area."""
    table = cover_table(bundle)
    out = []
    n_uniform = 0
    for entries in table:
        if not entries:
            raise MergeError("area not covered by any submodel")
        cpo = np.array([bundle.fits[d].cpo[loc] for d, loc in entries])
        if np.all(cpo <= CPO_FLOOR):
            n_uniform += 1
            w = np.full(len(cpo), 1.0 / len(cpo))
        else:
            w = cpo / cpo.sum()
        out.append(w)
    if n_uniform:
        warnings.warn(f"{n_uniform} area(s) with all CPOs at the floor; using uniform weights",
                      stacklevel=2)
    return out


def merge_mixture(bundle: FitBundle) -> MergedPosterior:
    """CPO-weighted mixture of the covering submodels' marginals."""
    table = cover_table(bundle)
    weights = mixture_weights(bundle)
    subs = [f.marginals() for f in bundle.fits]
    Kmax = max(s.weights.shape[1] for s in subs)
    mmax = max(len(e) for e in table)
    n = bundle.n
    W = np.zeros((n, mmax * Kmax))
    M = np.zeros_like(W)
    S = np.zeros_like(W)
    for i, entries in enumerate(table):
        for j, (d, loc) in enumerate(entries):
            s = subs[d]
            K = s.weights.shape[1]
            sl = slice(j * Kmax, j * Kmax + K)
            W[i, sl] = weights[i][j] * s.weights[loc]
            M[i, sl] = s.means[loc]
            S[i, sl] = s.sds[loc]
    return MergedPosterior.from_marginals(MixtureSet(W, M, S), weights)


def merge(bundle: FitBundle) -> MergedPosterior:
    if bundle.partition.disjoint:
        return merge_disjoint(bundle)
    return merge_mixture(bundle)


def joined_samples(bundle: FitBundle, S: int, seed: int) -> np.ndarray:
    """(S, n) joint log-risk draws assembled across submodels.

    Each submodel contributes ``S`` joint draws.  Where submodels overlap, the
    value of an area in draw ``s`` is taken from one covering submodel chosen
    with its CPO mixture weight.
    """
    if S < 1:
        raise ValueError("sample count must be >= 1")
    n = bundle.n
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xA1FA]))
    out = np.zeros((S, n))
    if bundle.partition.disjoint:
        table = weights = None
    else:
        table = cover_table(bundle)
        weights = mixture_weights(bundle)
        # chosen[i, s] = position of the selected submodel in area i's cover list
        chosen = np.zeros((n, S), dtype=np.int16)
        for i, w in enumerate(weights):
            if len(w) > 1:
                chosen[i] = rng.choice(len(w), size=S, p=w)
    for d, f in enumerate(bundle.fits):
        eta = f.sample_joint(S, submodel_seed(seed, 1_000_003 + d))  # (S, n_d)
        if table is None:
            out[:, f.global_index] = eta
            continue
        for loc, gi in enumerate(f.global_index):
            j = [dd for dd, _ in table[gi]].index(d)
            hit = chosen[gi] == j
            out[hit, gi] = eta[hit, loc]
    return out


def alpha_samples(bundle: FitBundle, S: int, seed: int) -> np.ndarray:
    """Per-sample spatial means of the joined log-risk vectors."""
    return joined_samples(bundle, S, seed).mean(axis=1)


def estimate_alpha(bundle: FitBundle, S: int = 1000, seed: int = 0) -> DensityEstimate:
    """Kernel density estimate of the overall log-risk."""
    if S < 100:
        raise ValueError("at least 100 samples are needed for the intercept density")
    return kde(alpha_samples(bundle, S, seed))


def alpha_from_samples(eta: np.ndarray) -> DensityEstimate:
    if eta.shape[0] < 100:
        raise ValueError("at least 100 samples are needed for the intercept density")
    return kde(eta.mean(axis=1))
