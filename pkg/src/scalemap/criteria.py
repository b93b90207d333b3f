"""Deviance information criterion and WAIC for Poisson risk models.

Deviances carry the saturated-model constant, so criteria for different models
fitted to the same counts are on one scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp, xlogy

from .mixture import MixtureSet


@dataclass(frozen=True)
class CriteriaReport:
    mean_deviance: float
    deviance_at_mean: float
    p_D: float
    DIC: float
    WAIC: float | None
    S: int
    seed: int | None
    dic_se: float | None = None
    mean_deviance_se: float | None = None
    saturated: float = 0.0

    def as_dict(self) -> dict:
        return {
            "Dbar": self.mean_deviance,
            "D_at_mean": self.deviance_at_mean,
            "pD": self.p_D,
            "DIC": self.DIC,
            "WAIC": self.WAIC,
            "S": self.S,
            "seed": self.seed,
            "DIC_se": self.dic_se,
            "Dbar_se": self.mean_deviance_se,
            "saturated": self.saturated,
        }


def saturated_logdev(obs) -> float:
    """2 sum(o log o - o - log o!), with 0 log 0 = 0."""
    o = np.asarray(obs, dtype=float)
    return float(2.0 * np.sum(xlogy(o, o) - o - gammaln(o + 1.0)))


def _check(mu, obs):
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    o = np.asarray(obs, dtype=float)
    if mu.shape[1] != o.shape[0]:
        raise ValueError("sample width must equal the number of areas")
    if mu.shape[0] < 1:
        raise ValueError("need at least one sample")
    if np.any((mu <= 0) & (o[None, :] > 0)):
        raise ValueError("zero Poisson mean with a positive count")
    return mu, o


def pointwise_loglik(mu, obs) -> np.ndarray:
    """log p(o_i | mu_i) for an (S, n) array of means."""
    mu, o = _check(mu, obs)
    return xlogy(o[None, :], mu) - mu - gammaln(o + 1.0)[None, :]


def approx_dic(mu, obs, seed: int | None = None, waic: bool = True) -> CriteriaReport:
    """DIC from posterior samples of the Poisson means ``mu`` (shape (S, n))."""
    mu, o = _check(mu, obs)
    S = mu.shape[0]
    sat = saturated_logdev(o)
    ll = pointwise_loglik(mu, o)
    dev = -2.0 * ll.sum(axis=1) + sat
    dbar = float(dev.mean())
    mbar = mu.mean(axis=0)
    dhat = float(-2.0 * pointwise_loglik(mbar[None, :], o).sum() + sat)
    pd = dbar - dhat
    dic_se = dbar_se = None
    if S > 1:
        dbar_se = float(dev.std(ddof=1) / np.sqrt(S))
        # delta method: D(mean mu) moves by grad . (mu_s - mbar) / S per sample
        grad = -2.0 * np.where(mbar > 0, o / np.where(mbar > 0, mbar, 1.0) - 1.0, -1.0)
        infl = 2.0 * dev - (mu - mbar) @ grad
        dic_se = float(infl.std(ddof=1) / np.sqrt(S))
    w = waic_from_loglik(ll) if waic else None
    return CriteriaReport(dbar, dhat, pd, dbar + pd, w, S, seed, dic_se, dbar_se, sat)


def waic_from_loglik(ll: np.ndarray) -> float:
    S = ll.shape[0]
    lppd = logsumexp(ll, axis=0) - np.log(S)
    penalty = ll.var(axis=0, ddof=1) if S > 1 else np.zeros(ll.shape[1])
    return float(-2.0 * lppd.sum() + 2.0 * penalty.sum())


def approx_waic(mu, obs) -> float:
    """-2 sum log mean_s p(o_i|mu^s) + 2 sum var_s log p(o_i|mu^s)."""
    return waic_from_loglik(pointwise_loglik(mu, obs))


def exact_dic(marginals: MixtureSet, obs, expected) -> CriteriaReport:
    """DIC computed in closed form from Gaussian-mixture marginals of eta.

    E[log p(o|mu)] needs only E[eta] and E[exp(eta)], both available exactly
    for a mixture, and the plug-in point is the posterior mean of mu.
    """
    o = np.asarray(obs, dtype=float)
    E = np.asarray(expected, dtype=float)
    pos = E > 0
    sat = saturated_logdev(o[pos])
    m_eta = marginals.mean()
    m_r = marginals.exp_mean()
    exp_ll = np.where(pos, xlogy(o, np.where(pos, E, 1.0)) + o * m_eta - E * m_r - gammaln(o + 1.0), 0.0)
    dbar = float(-2.0 * exp_ll.sum() + sat)
    mbar = E * m_r
    ll_hat = np.where(pos, xlogy(o, np.where(pos, mbar, 1.0)) - mbar - gammaln(o + 1.0), 0.0)
    dhat = float(-2.0 * ll_hat.sum() + sat)
    pd = dbar - dhat
    return CriteriaReport(dbar, dhat, pd, dbar + pd, None, 0, None, saturated=sat)


def criteria_from_samples(eta: np.ndarray, obs, expected, seed: int | None = None) -> CriteriaReport:
    """Criteria from (S, n) log-risk samples; areas with E = 0 are dropped."""
    E = np.asarray(expected, dtype=float)
    keep = E > 0
    mu = E[keep][None, :] * np.exp(np.asarray(eta)[:, keep])
    return approx_dic(mu, np.asarray(obs)[keep], seed=seed)
