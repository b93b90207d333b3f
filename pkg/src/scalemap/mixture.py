"""Gaussian-mixture marginals on the log-risk scale.

Every marginal produced by the fitting code is a finite mixture of normals:
one component per hyperparameter grid point, and for overlapping partitions
one block of components per covering submodel.  A ``MixtureSet`` stores the
marginals of many areas as padded ``(n_areas, n_components)`` arrays so all
summaries are vectorised; padding components carry zero weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

_SQRT2PI = np.sqrt(2.0 * np.pi)
EVAL_POINTS = 512
EVAL_SPAN = 8.0
_CHUNK = 4_000_000


def _component_sum(a: np.ndarray) -> np.ndarray:
    """Sum over the last axis in component order.

    Unlike pairwise ``sum``, trailing zero-weight components leave the result
    bit-for-bit unchanged, so padded mixtures agree with their unpadded source.
    """
    out = a[..., 0].copy()
    for k in range(1, a.shape[-1]):
        out += a[..., k]
    return out


@dataclass(frozen=True, eq=False)
class MixtureSet:
    weights: np.ndarray
    means: np.ndarray
    sds: np.ndarray

    def __post_init__(self):
        w, m, s = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (self.weights, self.means, self.sds))
        if not (w.shape == m.shape == s.shape):
            raise ValueError("weights, means and sds must share a shape")
        if (w < 0).any() or (s < 0).any():
            raise ValueError("negative weight or standard deviation")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "sds", s)

    def __len__(self) -> int:
        return self.weights.shape[0]

    def __getitem__(self, i) -> "MixtureSet":
        idx = np.atleast_1d(np.arange(len(self))[i])
        return MixtureSet(self.weights[idx], self.means[idx], self.sds[idx])

    @classmethod
    def concat_components(cls, parts, part_weights) -> "MixtureSet":
        """Per-area mixture of mixtures: ``sum_j part_weights[:, j] * parts[j]``."""
        pw = np.asarray(part_weights, dtype=float)
        w = np.concatenate([p.weights * pw[:, [j]] for j, p in enumerate(parts)], axis=1)
        m = np.concatenate([p.means for p in parts], axis=1)
        s = np.concatenate([p.sds for p in parts], axis=1)
        return cls(w, m, s)

    # densities -----------------------------------------------------------
    def _blocks(self, width: int):
        step = max(1, _CHUNK // max(1, width * self.weights.shape[1]))
        for a in range(0, len(self), step):
            yield slice(a, a + step)

    def pdf(self, x) -> np.ndarray:
        """Density at ``x``; ``x`` broadcasts as ``(n_areas, n_points)``."""
        x = np.broadcast_to(np.atleast_2d(np.asarray(x, dtype=float)), (len(self), np.shape(np.atleast_2d(x))[1]))
        out = np.empty(x.shape)
        for b in self._blocks(x.shape[1]):
            m = self.means[b, None, :]
            s = self.sds[b, None, :]
            with np.errstate(divide="ignore", invalid="ignore"):
                z = (x[b, :, None] - m) / s
                dens = np.where(s > 0, np.exp(-0.5 * z * z) / (s * _SQRT2PI), 0.0)
            out[b] = _component_sum(self.weights[b, None, :] * dens)
        return out

    def cdf(self, x) -> np.ndarray:
        x = np.broadcast_to(np.atleast_2d(np.asarray(x, dtype=float)), (len(self), np.shape(np.atleast_2d(x))[1]))
        out = np.empty(x.shape)
        for b in self._blocks(x.shape[1]):
            m = self.means[b, None, :]
            s = self.sds[b, None, :]
            with np.errstate(divide="ignore", invalid="ignore"):
                z = (x[b, :, None] - m) / s
                c = np.where(s > 0, ndtr(z), (x[b, :, None] >= m).astype(float))
            out[b] = _component_sum(self.weights[b, None, :] * c)
        return out

    # moments --------------------------------------------------------------
    def mean(self) -> np.ndarray:
        return _component_sum(self.weights * self.means)

    def var(self) -> np.ndarray:
        mu = self.mean()
        return _component_sum(self.weights * (self.sds**2 + (self.means - mu[:, None]) ** 2))

    def exp_mean(self) -> np.ndarray:
        """E[exp(X)] (lognormal mixture)."""
        return _component_sum(self.weights * np.exp(self.means + 0.5 * self.sds**2))

    def exp_sd(self) -> np.ndarray:
        m2 = _component_sum(self.weights * np.exp(2.0 * self.means + 2.0 * self.sds**2))
        return np.sqrt(np.maximum(m2 - self.exp_mean() ** 2, 0.0))

    # quantiles ------------------------------------------------------------
    def quantile(self, q: float, iters: int = 200) -> np.ndarray:
        """Per-area ``q``-quantile by bisection on the exact mixture CDF."""
        live = self.weights > 0
        lo = np.where(live, self.means - 12.0 * self.sds - 1e-12, np.inf).min(axis=1)
        hi = np.where(live, self.means + 12.0 * self.sds + 1e-12, -np.inf).max(axis=1)
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid[:, None])[:, 0] < q
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= 1e-13 * (1.0 + np.abs(mid))):
                break
        return 0.5 * (lo + hi)

    def exceedance(self, log_threshold: float = 0.0) -> np.ndarray:
        """P(X > log_threshold)."""
        return np.clip(1.0 - self.cdf(np.full((len(self), 1), log_threshold))[:, 0], 0.0, 1.0)

    # shared evaluation grid ----------------------------------------------
    def eval_grid(self, npoints: int = EVAL_POINTS, span: float = EVAL_SPAN) -> np.ndarray:
        """Per-area grid from min(mean - span*sd) to max(mean + span*sd) over components."""
        live = self.weights > 0
        lo = np.where(live, self.means - span * self.sds, np.inf).min(axis=1)
        hi = np.where(live, self.means + span * self.sds, -np.inf).max(axis=1)
        hi = np.where(hi > lo, hi, lo + 1e-9)
        t = np.linspace(0.0, 1.0, npoints)
        return lo[:, None] + (hi - lo)[:, None] * t[None, :]

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        """``(n_areas, size)`` independent draws per area."""
        n, K = self.weights.shape
        cw = np.cumsum(self.weights / self.weights.sum(axis=1, keepdims=True), axis=1)
        u = rng.random((n, size))
        z = rng.standard_normal((n, size))
        out = np.empty((n, size))
        for b in self._blocks(size):
            comp = (u[b, :, None] > cw[b, None, :]).sum(axis=2)
            comp = np.minimum(comp, K - 1)
            rows = np.arange(n)[b, None]
            out[b] = self.means[rows, comp] + self.sds[rows, comp] * z[b]
        return out
