"""Poisson-CAR latent Gaussian models fitted by nested Laplace approximation.

For one (sub)graph the model is

    O_i | eta_i ~ Poisson(E_i exp(eta_i)),   eta_i = alpha + xi_i,

with a vague Gaussian prior on the intercept ``alpha`` and an iCAR or LCAR
prior on ``xi`` subject to sum-to-zero constraints.  For each hyperparameter
point ``theta`` the latent field is replaced by a constrained Gaussian centred
at its conditional mode; ``theta`` is integrated over an axis-aligned grid in
standardised coordinates.

Internally the latent vector is laid out as ``x = (xi_0, ..., xi_{n-1}, alpha)``
so the dense intercept row sits last in the elimination order.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.special import gammaln, logsumexp

from .graph import AdjacencyGraph, connected_components
from .mixture import MixtureSet
from .priors import CarSpec, component_constraints, precision_coefficients
from .sparse import CholeskyFactor, FactorizationError, factor_permuted, fill_reducing_order

log = logging.getLogger(__name__)

LOG2PI = np.log(2.0 * np.pi)
GH_NODES, GH_WEIGHTS = np.polynomial.hermite.hermgauss(15)


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class LaplaceConfig:
    intercept_precision: float = 0.001
    grid_step: float = 0.75
    grid_log_drop: float = 6.0
    newton_tol: float = 1e-8
    newton_max_iter: int = 100
    max_halvings: int = 30
    hessian_step: float = 0.05
    max_grid_points: int = 400
    # bounds in internal coordinates: log precision, logit lambda
    log_tau_bounds: tuple[float, float] = (-10.0, 15.0)
    logit_lambda_bounds: tuple[float, float] = (-9.0, 9.0)
    fixed_theta: tuple[float, ...] | None = None


@dataclass(frozen=True, eq=False)
class ObservedData:
    obs: np.ndarray
    expected: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.obs)
        e = np.asarray(self.expected, dtype=float)
        if o.shape != e.shape or o.ndim != 1:
            raise ValueError("obs and expected must be 1-d arrays of equal length")
        if (o < 0).any() or not np.all(np.mod(o, 1) == 0):
            raise ValueError("observed counts must be non-negative integers")
        if (e < 0).any() or not np.isfinite(e).all():
            raise ValueError("expected counts must be finite and non-negative")
        object.__setattr__(self, "obs", o.astype(np.int64))
        object.__setattr__(self, "expected", e)

    def __len__(self) -> int:
        return len(self.obs)

    def subset(self, idx) -> "ObservedData":
        return ObservedData(self.obs[idx], self.expected[idx])

    @property
    def log_expected(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.where(self.expected > 0, np.log(self.expected), -np.inf)


def poisson_loglik(obs, expected, eta) -> np.ndarray:
    """Elementwise ``log Poisson(o | E exp(eta))``; zero where ``E == 0``."""
    o = np.asarray(obs, dtype=float)
    e = np.asarray(expected, dtype=float)
    eta = np.asarray(eta, dtype=float)
    pos = e > 0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        val = o * (np.log(np.where(pos, e, 1.0)) + eta) - e * np.exp(eta) - gammaln(o + 1.0)
    return np.where(pos, val, 0.0)


class _Template:
    """Fixed sparsity pattern, permuted once, refilled with new values."""

    def __init__(self, size, rows, cols, perm):
        self.perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(size)
        codes = np.arange(1, len(rows) + 1, dtype=float)
        M = sp.csc_matrix((codes, (inv[rows], inv[cols])), shape=(size, size))
        M.sort_indices()
        self.indptr = M.indptr
        self.indices = M.indices
        self.source = M.data.astype(np.int64) - 1
        self.size = size

    def factor(self, values) -> CholeskyFactor:
        Qp = sp.csc_matrix((values[self.source], self.indices, self.indptr), shape=(self.size, self.size))
        return factor_permuted(Qp, self.perm)


@dataclass(frozen=True, eq=False)
class Mode:
    """Constrained Gaussian approximation at one hyperparameter point."""

    theta: np.ndarray
    x: np.ndarray
    factor: CholeskyFactor
    W: np.ndarray  # Q^{-1} A^T
    C: np.ndarray  # A Q^{-1} A^T
    iterations: int
    grad_norm: float

    @property
    def eta(self) -> np.ndarray:
        return self.x[:-1] + self.x[-1]


class LatentModel:
    """Poisson likelihood plus intercept and CAR field on one graph."""

    def __init__(self, graph: AdjacencyGraph, data: ObservedData, family: str = "lcar",
                 config: LaplaceConfig | None = None):
        family = family.lower()
        if family == "bym":
            raise NotImplementedError("latent inference is implemented for iCAR and LCAR only")
        if family not in ("icar", "lcar"):
            raise ValueError(f"unknown family {family!r}")
        if len(data) != graph.n:
            raise ValueError("data length does not match graph size")
        if graph.n == 0:
            raise ValueError("empty graph")
        self.graph = graph
        self.data = data
        self.family = family
        self.config = config or LaplaceConfig()
        self.n = graph.n
        n = self.n

        self.obs = data.obs.astype(float)
        self.E = data.expected
        self.has_lik = self.E > 0
        self.logE = np.where(self.has_lik, np.log(np.where(self.has_lik, self.E, 1.0)), 0.0)
        self.lgam = gammaln(self.obs + 1.0)

        self.R = (sp.diags(graph.degrees.astype(float)) - graph.adjacency).tocsr()
        if family == "icar":
            self.A = component_constraints(graph)
        else:
            self.A = np.ones((1, n))
        self.k = self.A.shape[0]
        self.Abar = np.hstack([self.A, np.zeros((self.k, 1))])
        self.AAt_logdet = float(np.linalg.slogdet(self.A @ self.A.T)[1])
        self._AAt_inv_A = np.linalg.solve(self.A @ self.A.T, self.A)

        comps = connected_components(graph)
        self.n_components = len(comps)
        # iCAR components without any likelihood term leave Q_post singular
        self.jitter = np.zeros(n)
        if family == "icar":
            for c in comps:
                if not self.has_lik[c].any():
                    self.jitter[c] = 1e-6

        e = graph.edges
        deg = graph.degrees.astype(float)
        ar = np.arange(n)
        xi_order = fill_reducing_order(self.R + sp.identity(n))
        # posterior precision pattern: [edges (both ways) | xi diag | xi-alpha | alpha-xi | alpha-alpha]
        rows = np.r_[e[:, 0], e[:, 1], ar, ar, np.full(n, n), n]
        cols = np.r_[e[:, 1], e[:, 0], ar, np.full(n, n), ar, n]
        self._post = _Template(n + 1, rows, cols, np.r_[xi_order, n])
        self._prior = _Template(n, np.r_[e[:, 0], e[:, 1], ar], np.r_[e[:, 1], e[:, 0], ar], xi_order)
        self._deg = deg
        self._n_edges = len(e)

    # hyperparameters --------------------------------------------------------
    @property
    def n_hyper(self) -> int:
        return 1 if self.family == "icar" else 2

    def spec(self, theta) -> CarSpec:
        return CarSpec.from_internal(self.family, theta)

    def coefficients(self, theta) -> tuple[float, float]:
        return precision_coefficients(self.spec(theta))

    def bounds(self):
        b = [self.config.log_tau_bounds]
        if self.family == "lcar":
            b.append(self.config.logit_lambda_bounds)
        return b

    def log_hyperprior(self, theta) -> float:
        """Uniform prior on sd = tau^{-1/2}, Uniform(0, 1) on lambda, in internal coordinates."""
        theta = np.atleast_1d(theta)
        val = -0.5 * theta[0] - np.log(2.0)
        if self.family == "lcar":
            t = theta[1]
            val += -np.logaddexp(0.0, -t) - np.logaddexp(0.0, t)
        return float(val)

    # objective ---------------------------------------------------------------
    def _split(self, x):
        return x[:-1], x[-1]

    def prior_quadratic(self, x, theta) -> float:
        a, b = self.coefficients(theta)
        xi, alpha = self._split(x)
        return float(a * xi @ (self.R @ xi) + b * xi @ xi + self.config.intercept_precision * alpha**2)

    def loglik(self, eta) -> float:
        return float(poisson_loglik(self.obs, self.E, eta).sum())

    def objective(self, x, theta) -> float:
        """log p(o | x) - x^T Q_prior x / 2."""
        xi, alpha = self._split(x)
        return self.loglik(xi + alpha) - 0.5 * self.prior_quadratic(x, theta)

    def _mu(self, eta):
        with np.errstate(over="ignore"):
            return np.where(self.has_lik, self.E * np.exp(eta), 0.0)

    def gradient(self, x, theta) -> np.ndarray:
        a, b = self.coefficients(theta)
        xi, alpha = self._split(x)
        r = self.obs * self.has_lik - self._mu(xi + alpha)
        g_xi = r - a * (self.R @ xi) - b * xi
        g_alpha = r.sum() - self.config.intercept_precision * alpha
        return np.r_[g_xi, g_alpha]

    def posterior_precision(self, x, theta) -> sp.csr_matrix:
        """Negative Hessian of the objective, in the original ordering."""
        n = self.n
        vals = self._post_values(x, theta)
        e = self.graph.edges
        ar = np.arange(n)
        rows = np.r_[e[:, 0], e[:, 1], ar, ar, np.full(n, n), n]
        cols = np.r_[e[:, 1], e[:, 0], ar, np.full(n, n), ar, n]
        return sp.csr_matrix((vals, (rows, cols)), shape=(n + 1, n + 1))

    def hessian(self, x, theta) -> sp.csr_matrix:
        return -self.posterior_precision(x, theta)

    def _post_values(self, x, theta, jitter=True):
        a, b = self.coefficients(theta)
        xi, alpha = self._split(x)
        h = self._mu(xi + alpha)
        diag = a * self._deg + b + h + (self.jitter if jitter else 0.0)
        return np.r_[np.full(2 * self._n_edges, -a), diag, h, h,
                     self.config.intercept_precision + h.sum()]

    def project(self, x) -> np.ndarray:
        """Orthogonal projection of the xi-block onto the constraint set."""
        x = np.array(x, dtype=float)
        x[:-1] -= self.A.T @ (self._AAt_inv_A @ x[:-1])
        return x

    def initial_x(self) -> np.ndarray:
        so, se = self.obs[self.has_lik].sum(), self.E.sum()
        alpha = np.log(so / se) if so > 0 and se > 0 else 0.0
        return np.r_[np.zeros(self.n), alpha]

    # mode finding -------------------------------------------------------------
    def _gaussian_at(self, x, theta):
        fac = self._post.factor(self._post_values(x, theta))
        W = fac.solve(self.Abar.T)
        C = self.Abar @ W
        return fac, W, C

    def find_mode(self, theta, x0=None) -> Mode:
        """Constrained Newton iterations for the conditional mode of ``x``."""
        cfg = self.config
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        x = self.project(self.initial_x() if x0 is None else x0)
        f = self.objective(x, theta)
        gtol = cfg.newton_tol * (1.0 + (self.obs.max() if self.n else 0.0))
        for it in range(cfg.newton_max_iter + 1):
            try:
                fac, W, C = self._gaussian_at(x, theta)
            except FactorizationError as exc:
                raise ConvergenceError(f"factorization failed at theta={theta}: {exc}") from exc
            g = self.gradient(x, theta)
            d0 = fac.solve(g)
            nu = np.linalg.solve(C, self.Abar @ d0)
            d = d0 - W @ nu
            pg = g - self.Abar.T @ nu
            gnorm = float(np.abs(pg).max())
            if np.abs(d).max() < cfg.newton_tol and gnorm < gtol:
                return Mode(theta, x, fac, W, C, it, gnorm)
            if it == cfg.newton_max_iter:
                break
            t = 1.0
            accept = f - 1e-12 * (1.0 + abs(f))
            for _ in range(cfg.max_halvings + 1):
                xn = x + t * d
                fn = self.objective(xn, theta)
                if np.isfinite(fn) and fn >= accept:
                    break
                t *= 0.5
            else:
                raise ConvergenceError(f"line search failed at theta={theta}")
            x, f = xn, fn
        raise ConvergenceError(
            f"Newton did not converge in {cfg.newton_max_iter} iterations at theta={theta}"
        )

    # Laplace evidence ------------------------------------------------------------
    def log_prior_latent(self, x, theta) -> float:
        """Constrained prior log-density at a feasible ``x``.

        For the iCAR field the pseudo-determinant of D_W - W is omitted (it does
        not depend on ``theta``).
        """
        a, b = self.coefficients(theta)
        xi, alpha = self._split(x)
        p = self.config.intercept_precision
        val = -0.5 * (LOG2PI - np.log(p)) - 0.5 * p * alpha**2
        n, k = self.n, self.k
        if self.family == "icar":
            val += 0.5 * (n - k) * (np.log(a) - LOG2PI) - 0.5 * a * xi @ (self.R @ xi)
        else:
            fac = self._prior.factor(np.r_[np.full(2 * self._n_edges, -a), a * self._deg + b])
            Cp = self.A @ fac.solve(self.A.T)
            val += (-0.5 * n * LOG2PI + 0.5 * fac.logdet()
                    - 0.5 * (a * xi @ (self.R @ xi) + b * xi @ xi)
                    + 0.5 * k * LOG2PI + 0.5 * np.linalg.slogdet(Cp)[1] - 0.5 * self.AAt_logdet)
        return float(val)

    def log_gaussian_at_mode(self, mode: Mode) -> float:
        """Constrained Gaussian approximation's log-density at its own mean."""
        dim = self.n + 1 - self.k
        return float(-0.5 * dim * LOG2PI + 0.5 * mode.factor.logdet()
                     + 0.5 * np.linalg.slogdet(mode.C)[1] - 0.5 * self.AAt_logdet)

    def log_marginal(self, theta, x0=None) -> tuple[float, Mode]:
        """Laplace approximation to log p(theta | o) up to a constant."""
        mode = self.find_mode(theta, x0)
        val = (self.loglik(mode.eta) + self.log_prior_latent(mode.x, theta)
               - self.log_gaussian_at_mode(mode) + self.log_hyperprior(theta))
        return float(val), mode

    # per-point summaries --------------------------------------------------------
    def eta_moments(self, mode: Mode) -> tuple[np.ndarray, np.ndarray]:
        """Constrained marginal means and sds of the linear predictors."""
        n = self.n
        fac = mode.factor
        dvar = fac.inverse_diagonal()
        e_alpha = np.zeros(n + 1)
        e_alpha[n] = 1.0
        col_alpha = fac.solve(e_alpha)
        var = dvar[:n] + dvar[n] + 2.0 * col_alpha[:n]
        V = mode.W[:n] + mode.W[n]
        var -= np.einsum("ij,ij->i", V @ np.linalg.inv(mode.C), V)
        return mode.eta.copy(), np.sqrt(np.maximum(var, 0.0))

    def sample_latent(self, mode: Mode, size: int, rng: np.random.Generator) -> np.ndarray:
        """``(n+1, size)`` draws from the constrained Gaussian at ``mode``."""
        z = rng.standard_normal((self.n + 1, size))
        x = mode.factor.solve_lt(z)
        x -= mode.W @ np.linalg.solve(mode.C, self.Abar @ x)
        return mode.x[:, None] + x


# ---------------------------------------------------------------------------
# hyperparameter grid


@dataclass(frozen=True, eq=False)
class HyperGrid:
    points: np.ndarray  # (K, p) internal coordinates
    log_density: np.ndarray
    weights: np.ndarray
    mode: np.ndarray

    def __len__(self) -> int:
        return len(self.weights)


def explore_grid(logdens, theta0, bounds, step=0.75, log_drop=6.0, hessian_step=0.05,
                 max_points=400) -> tuple[HyperGrid, dict]:
    """Locate the mode of ``logdens`` and lay an axis-aligned grid around it.

    Axes are the eigenvectors of the negative Hessian at the mode, scaled to
    unit curvature.  Grid points are visited outward from the mode and kept
    while their log-density is within ``log_drop`` of the mode value.
    Returns the grid and a dict of every evaluated ``tuple(theta) -> value``.
    """
    bounds = np.asarray(bounds, dtype=float)
    p = len(theta0)
    cache: dict = {}

    def f(th):
        th = np.clip(np.asarray(th, dtype=float), bounds[:, 0], bounds[:, 1])
        key = tuple(th)
        if key not in cache:
            cache[key] = logdens(th)
        return cache[key]

    start = np.clip(np.asarray(theta0, dtype=float), bounds[:, 0], bounds[:, 1])
    res = minimize(lambda t: -f(t), start, method="Nelder-Mead", bounds=bounds,
                   options=dict(xatol=1e-4, fatol=1e-7, maxiter=400 * p,
                                initial_simplex=np.vstack([start, start + np.eye(p)])))
    theta_star = np.clip(res.x, bounds[:, 0], bounds[:, 1])
    f0 = f(theta_star)
    if not np.isfinite(f0):
        raise ConvergenceError("hyperparameter mode search produced a non-finite value")

    h = hessian_step
    H = np.zeros((p, p))
    for i in range(p):
        ei = np.eye(p)[i] * h
        H[i, i] = (f(theta_star + ei) - 2.0 * f0 + f(theta_star - ei)) / h**2
        for j in range(i):
            ej = np.eye(p)[j] * h
            H[i, j] = H[j, i] = (f(theta_star + ei + ej) - f(theta_star + ei - ej)
                                 - f(theta_star - ei + ej) + f(theta_star - ei - ej)) / (4 * h * h)
    evals, evecs = np.linalg.eigh(-H)
    # flat directions get a wide but finite scale
    evals = np.maximum(evals, 1.0 / 25.0)
    scale = evecs / np.sqrt(evals)

    def to_theta(z):
        return theta_star + scale @ (step * np.asarray(z, dtype=float))

    kept = {}
    order = []
    frontier = [tuple([0] * p)]
    visited = {frontier[0]}
    while frontier and len(kept) < max_points:
        nxt = []
        for z in frontier:
            th = to_theta(z)
            if np.any(th < bounds[:, 0]) or np.any(th > bounds[:, 1]):
                continue
            v = f(th)
            if not np.isfinite(v) or f0 - v > log_drop:
                continue
            kept[z] = (th, v)
            order.append(z)
            for ax in range(p):
                for sgn in (-1, 1):
                    nz = list(z)
                    nz[ax] += sgn
                    nz = tuple(nz)
                    if nz not in visited:
                        visited.add(nz)
                        nxt.append(nz)
        frontier = sorted(nxt)
    if not kept:
        kept[tuple([0] * p)] = (theta_star, f0)
        order.append(tuple([0] * p))
    pts = np.array([kept[z][0] for z in order])
    ld = np.array([kept[z][1] for z in order])
    w = np.exp(ld - ld.max())
    return HyperGrid(pts, ld, w / w.sum(), theta_star), cache


def default_theta0(family: str) -> np.ndarray:
    return np.array([2.0]) if family == "icar" else np.array([2.0, 0.0])


def build_grid(model: LatentModel) -> tuple[HyperGrid, dict]:
    """Hyperparameter grid plus the conditional mode at every grid point."""
    cfg = model.config
    modes: dict = {}
    state = {"x": None}

    def logdens(th):
        try:
            val, mode = model.log_marginal(th, state["x"])
        except ConvergenceError:
            try:
                val, mode = model.log_marginal(th, None)
            except ConvergenceError:
                return -np.inf
        state["x"] = mode.x
        modes[tuple(th)] = mode
        return val

    if cfg.fixed_theta is not None:
        th = np.asarray(cfg.fixed_theta, dtype=float)
        val, mode = model.log_marginal(th)
        modes[tuple(th)] = mode
        return HyperGrid(th[None, :], np.array([val]), np.array([1.0]), th), modes

    grid, _ = explore_grid(
        logdens, default_theta0(model.family), model.bounds(), step=cfg.grid_step,
        log_drop=cfg.grid_log_drop, hessian_step=cfg.hessian_step, max_points=cfg.max_grid_points,
    )
    return grid, modes


# ---------------------------------------------------------------------------
# fitted submodel


@dataclass(frozen=True, eq=False)
class SubmodelFit:
    """Posterior summary of one fitted (sub)model.

    ``means``/``sds`` are ``(K, n)``: the Gaussian marginal of each linear
    predictor at each of the ``K`` grid points.  ``modes`` keeps the latent
    mode per grid point so joint samples can be regenerated on demand.
    """

    graph: AdjacencyGraph
    data: ObservedData
    family: str
    config: LaplaceConfig
    grid: HyperGrid
    modes: np.ndarray
    means: np.ndarray
    sds: np.ndarray
    cpo: np.ndarray
    seed: int = 0
    elapsed: float = 0.0

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def global_index(self) -> np.ndarray:
        return self.graph.global_index

    @cached_property
    def model(self) -> LatentModel:
        return LatentModel(self.graph, self.data, self.family, self.config)

    def marginals(self) -> MixtureSet:
        w = np.broadcast_to(self.grid.weights[:, None], self.means.shape)
        return MixtureSet(w.T, self.means.T, self.sds.T)

    def area_marginal(self, i: int) -> MixtureSet:
        if not 0 <= i < self.n:
            raise IndexError(f"area {i} out of range for a submodel of {self.n} areas")
        return self.marginals()[i]

    def sample_joint(self, S: int, seed) -> np.ndarray:
        """``(S, n)`` joint draws of the linear predictors."""
        if S < 1:
            raise ValueError("sample count must be >= 1")
        rng = np.random.default_rng(seed)
        K = len(self.grid)
        counts = rng.multinomial(S, self.grid.weights)
        out = np.empty((S, self.n))
        pos = 0
        for k in range(K):
            if counts[k] == 0:
                continue
            fac, W, C = self.model._gaussian_at(self.modes[k], self.grid.points[k])
            mode = Mode(self.grid.points[k], self.modes[k], fac, W, C, 0, 0.0)
            x = self.model.sample_latent(mode, counts[k], rng)
            out[pos:pos + counts[k]] = (x[:-1] + x[-1]).T
            pos += counts[k]
        return out


def _predictive_mass(obs, expected, mc, sc, newton_steps=30):
    """log of int Poisson(o | E e^eta) N(eta; mc, sc^2) d eta, adaptive Gauss-Hermite.

    The integrand is log-concave; its mode and curvature set the node
    placement, so a sharply peaked Poisson term inside a wide Gaussian is
    resolved with the same 15 nodes.
    """
    o = np.broadcast_to(obs, mc.shape)
    E = np.broadcast_to(expected, mc.shape)
    point = sc <= 0.0
    tau = np.where(point, 0.0, 1.0 / np.where(point, 1.0, sc) ** 2)
    x = np.where(point, mc, mc.copy())
    for _ in range(newton_steps):
        with np.errstate(over="ignore"):
            mu = E * np.exp(x)
        g = o - mu - tau * (x - mc)
        h = mu + tau
        step = np.where(point | (h <= 0), 0.0, g / np.where(h > 0, h, 1.0))
        x = x + np.clip(step, -1.0, 1.0)
        if np.abs(step).max() < 1e-12:
            break
    with np.errstate(over="ignore"):
        curv = E * np.exp(x) + tau
    sig = np.where(point, 0.0, 1.0 / np.sqrt(np.where(curv > 0, curv, 1.0)))
    eta = x[..., None, :] + np.sqrt(2.0) * sig[..., None, :] * GH_NODES[:, None]
    ll = poisson_loglik(o[..., None, :], E[..., None, :], eta)
    lw = np.log(GH_WEIGHTS)[:, None] + GH_NODES[:, None] ** 2
    with np.errstate(divide="ignore"):
        log_norm = (-0.5 * np.log(2.0 * np.pi) + 0.5 * np.log(np.where(point, 1.0, tau))[..., None, :]
                    - 0.5 * tau[..., None, :] * (eta - mc[..., None, :]) ** 2)
        val = logsumexp(ll + log_norm + lw, axis=-2) + np.log(np.sqrt(2.0) * np.where(point, 1.0, sig))
    # a point mass reduces to the Poisson mass at its location
    return np.where(point, poisson_loglik(o, E, mc), val)


def compute_cpo(obs, expected, weights, means, sds) -> np.ndarray:
    """Leave-one-out predictive mass CPO_i = p(o_i | o_{-i}).

    ``means``/``sds`` are ``(K, n)`` Gaussian marginals of the linear
    predictors at the ``K`` grid points (their means are the conditional
    modes).  At each grid point the Gaussian likelihood factor of area ``i``
    (second-order expansion of the Poisson term at the mode) is divided out
    of the marginal, leaving a Gaussian cavity density; the Poisson mass of
    ``o_i`` is integrated against it with 15-point Gauss-Hermite, centred
    and scaled at the mode of the integrand.  Grid points combine through
    1/CPO_i = sum_k w_k / CPO_ik.
    """
    obs = np.asarray(obs, dtype=float)
    expected = np.asarray(expected, dtype=float)
    m = np.atleast_2d(np.asarray(means, dtype=float))
    s = np.atleast_2d(np.asarray(sds, dtype=float))
    with np.errstate(over="ignore"):
        h = expected[None, :] * np.exp(m)
    point = s <= 0.0
    s_safe = np.where(point, 1.0, s)
    prec = np.maximum(1.0 / s_safe**2 - h, 1e-12)
    # linear coefficient of the expanded log-likelihood: (o - h) + h * mode
    b = obs[None, :] - h + h * m
    mc = np.where(point, m, (m / s_safe**2 - b) / prec)
    sc = np.where(point, 0.0, 1.0 / np.sqrt(prec))
    log_cpo_k = _predictive_mass(obs, expected, mc, sc)
    logw = np.log(np.maximum(np.asarray(weights, dtype=float), 1e-300))[:, None]
    log_inv = logsumexp(logw - log_cpo_k, axis=0)
    cpo = np.clip(np.exp(-log_inv), 1e-300, 1.0)
    return np.where(expected > 0, cpo, 1.0)


def fit_submodel(graph: AdjacencyGraph, data: ObservedData, family: str = "lcar",
                 config: LaplaceConfig | None = None, seed: int = 0) -> SubmodelFit:
    """Fit the Poisson-CAR model on one graph."""
    t0 = time.perf_counter()
    model = LatentModel(graph, data, family, config)
    grid, modes = build_grid(model)
    K = len(grid)
    X = np.empty((K, graph.n + 1))
    M = np.empty((K, graph.n))
    Sd = np.empty((K, graph.n))
    for k, th in enumerate(grid.points):
        mode = modes.get(tuple(th))
        if mode is None:
            mode = model.find_mode(th)
        X[k] = mode.x
        M[k], Sd[k] = model.eta_moments(mode)
    cpo = compute_cpo(data.obs, data.expected, grid.weights, M, Sd)
    return SubmodelFit(graph, data, family, model.config, grid, X, M, Sd, cpo, seed,
                       time.perf_counter() - t0)
