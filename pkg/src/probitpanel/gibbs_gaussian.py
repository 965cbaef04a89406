"""Blocked data-augmentation Gibbs sampler for the Gaussian random-effects probit.

Model, uncentered::

    y_ij ~ Bern(Phi(mu + tau * theta_i + x_ij beta))
    theta_i ~ N(0, 1),  mu ~ N(0, 9),  tau ~ N+(0, 1),  beta ~ N(0, 9 I)

Each sweep updates omega, then tau with mu integrated out, then mu, theta and
beta.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import logging

import numpy as np
from scipy import linalg, special

from . import rng as R
from .chains import ChainConfig, ChainDraws
from .data import PanelDataset
from .errors import SamplerError
from .stats import normal_draws, truncated_normal_draws

log = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class GaussianHyperParams:
    mu_var: float = 9.0
    beta_var: float = 9.0
    tau_var: float = 1.0  # tau ~ N(0, tau_var) truncated to (0, inf)

    def __post_init__(self):
        if min(self.mu_var, self.beta_var, self.tau_var) <= 0:
            raise ValueError("prior variances must be positive")


@dataclasses.dataclass
class GaussianState:
    mu: float
    tau: float
    beta: np.ndarray
    theta: np.ndarray
    omega: np.ndarray

    def copy(self) -> "GaussianState":
        return GaussianState(self.mu, self.tau, self.beta.copy(), self.theta.copy(),
                             self.omega.copy())


class _Design:
    """Per-dataset constants reused by every sweep."""

    def __init__(self, X, y, person, m, beta_var):
        self.X = np.ascontiguousarray(X, dtype=np.float64)
        self.person = np.ascontiguousarray(person, dtype=np.int64)
        self.m = int(m)
        self.N = self.X.shape[0]
        self.p = self.X.shape[1]
        self.n_i = np.bincount(self.person, minlength=self.m).astype(np.float64)
        prec = self.X.T @ self.X + np.eye(self.p) / beta_var
        self.beta_cov = linalg.cho_solve(linalg.cho_factor(prec), np.eye(self.p))
        self.beta_chol = np.linalg.cholesky(self.beta_cov) if self.p else np.zeros((0, 0))
        self.set_outcomes(y)

    def set_outcomes(self, y):
        self.y = np.asarray(y, dtype=np.int8)
        self.positive = self.y > 0

    @classmethod
    def from_dataset(cls, ds: PanelDataset, hyper: GaussianHyperParams) -> "_Design":
        return cls(ds.X, ds.y, ds.person, ds.m, hyper.beta_var)

    def person_sums(self, v):
        return np.bincount(self.person, weights=v, minlength=self.m)


def _stream_key(stream: R.RngStream, step: int):
    return stream.key, stream.iteration, R.lane(stream.chain, step)


# ---------------------------------------------------------------------------
# full conditionals
# ---------------------------------------------------------------------------


def omega_mean(state: GaussianState, d: _Design) -> np.ndarray:
    return state.mu + state.tau * state.theta[d.person] + d.X @ state.beta


def update_omega(state: GaussianState, d: _Design, stream: R.RngStream) -> np.ndarray:
    """Latent utilities, N(linear predictor, 1) truncated by the sign of y."""
    key, it, ln = _stream_key(stream, R.STEP_OMEGA)
    return truncated_normal_draws(omega_mean(state, d), 1.0, d.positive, key, it, ln)


def tau_conditional(theta, omega, d: _Design, beta, hyper: GaussianHyperParams):
    """Mean and variance (alpha_tau, s_tau) of tau given theta, omega, beta, mu integrated out."""
    r = omega - d.X @ beta
    k = 1.0 / (1.0 / hyper.mu_var + d.N)
    n_theta = float(np.dot(d.n_i, theta))
    precision = float(np.dot(d.n_i, theta * theta)) - n_theta * n_theta * k + 1.0 / hyper.tau_var
    if not precision > 0.0:
        raise SamplerError(f"non-positive tau precision {precision}")
    s = 1.0 / precision
    cross = float(np.dot(theta, d.person_sums(r)))
    alpha = s * (cross - n_theta * float(r.sum()) * k)
    return alpha, s


def update_tau_marginal_mu(state, d, hyper, stream) -> float:
    alpha, s = tau_conditional(state.theta, state.omega, d, state.beta, hyper)
    key, it, ln = _stream_key(stream, R.STEP_TAU)
    return float(truncated_normal_draws(np.array([alpha]), np.sqrt(s), True, key, it, ln)[0])


def mu_conditional(state, d, hyper):
    s = 1.0 / (1.0 / hyper.mu_var + d.N)
    total = float(state.omega.sum() - (d.X @ state.beta).sum()
                  - state.tau * np.dot(d.n_i, state.theta))
    return s * total, s


def update_mu(state, d, hyper, stream) -> float:
    alpha, s = mu_conditional(state, d, hyper)
    key, it, ln = _stream_key(stream, R.STEP_MU)
    return float(alpha + np.sqrt(s) * normal_draws(1, key, it, ln)[0])


def theta_conditional(state, d):
    s = 1.0 / (state.tau * state.tau * d.n_i + 1.0)
    resid = d.person_sums(state.omega - d.X @ state.beta) - d.n_i * state.mu
    return s * state.tau * resid, s


def update_theta(state, d, stream) -> np.ndarray:
    alpha, s = theta_conditional(state, d)
    key, it, ln = _stream_key(stream, R.STEP_THETA)
    return alpha + np.sqrt(s) * normal_draws(d.m, key, it, ln)


def beta_conditional(state, d):
    e = state.omega - state.mu - state.tau * state.theta[d.person]
    return d.beta_cov @ (d.X.T @ e), d.beta_cov


def update_beta(state, d, stream) -> np.ndarray:
    alpha, _ = beta_conditional(state, d)
    key, it, ln = _stream_key(stream, R.STEP_BETA)
    return alpha + d.beta_chol @ normal_draws(d.p, key, it, ln)


def gibbs_sweep(state: GaussianState, d: _Design, hyper: GaussianHyperParams,
                stream: R.RngStream) -> GaussianState:
    """One full sweep, updating ``state`` in place and returning it."""
    state.omega = update_omega(state, d, stream)
    state.tau = update_tau_marginal_mu(state, d, hyper, stream)
    state.mu = update_mu(state, d, hyper, stream)
    state.theta = update_theta(state, d, stream)
    state.beta = update_beta(state, d, stream)
    return state


# ---------------------------------------------------------------------------
# chains
# ---------------------------------------------------------------------------


def initial_state(d: _Design, config: ChainConfig, chain: int) -> GaussianState:
    rate = float(np.clip(d.y.mean(), 1e-3, 1 - 1e-3)) if d.N else 0.5
    state = GaussianState(float(special.ndtri(rate)), 0.5, np.zeros(d.p), np.zeros(d.m),
                          np.zeros(d.N))
    if config.init == "overdispersed":
        key = R.split_seed(config.seed)
        z = normal_draws(d.p + d.m + 2, key, 0, R.lane(chain, R.STEP_INIT))
        state.mu += 2.0 * z[0]
        state.tau = 0.1 + 1.5 * abs(z[1])
        state.beta = z[2:2 + d.p].copy()
        state.theta = z[2 + d.p:].copy()
    return state


def _column_names(p: int, m: int, store_theta: bool):
    names = ["mu", "tau"] + [f"beta_{k + 1}" for k in range(p)]
    if store_theta:
        names += [f"theta_{i + 1}" for i in range(m)]
    return names


def run_chain(ds: PanelDataset, hyper: GaussianHyperParams | None = None,
              config: ChainConfig | None = None, chain: int = 0,
              state: GaussianState | None = None) -> ChainDraws:
    """Run one chain and keep the post-burn-in, thinned draws.

    Draws depend only on ``(config.seed, chain)``; the worker thread count
    has no effect on them.
    """
    hyper = hyper or GaussianHyperParams()
    if config is None:
        raise ValueError("a ChainConfig with an explicit seed is required")
    if ds.N == 0:
        raise ValueError("dataset is empty")
    d = _Design.from_dataset(ds, hyper)
    state = state.copy() if state is not None else initial_state(d, config, chain)
    keep = config.stored_iterations
    out = np.empty((keep.size, 2 + d.p + (d.m if config.store_theta else 0)))
    row = 0
    base = R.RngStream(config.seed, chain=chain)
    report_every = max(1, config.iterations // 10)
    for it in range(1, config.iterations + 1):
        try:
            gibbs_sweep(state, d, hyper, base.replace(iteration=it))
        except SamplerError as exc:
            raise SamplerError(str(exc), iteration=it) from exc
        if not (np.isfinite(state.mu) and np.isfinite(state.tau) and np.all(np.isfinite(state.beta))):
            raise SamplerError("non-finite global parameter", iteration=it)
        if row < keep.size and it == keep[row]:
            out[row, 0] = state.mu
            out[row, 1] = state.tau
            out[row, 2:2 + d.p] = state.beta
            if config.store_theta:
                out[row, 2 + d.p:] = state.theta
            row += 1
        if it % report_every == 0:
            log.info("chain %d: iteration %d/%d tau=%.4f", chain, it, config.iterations, state.tau)
    names = _column_names(d.p, d.m, config.store_theta)
    columns = {name: out[:, k].copy() for k, name in enumerate(names)}
    meta = {"seed": int(config.seed), "config": config.to_dict(),
            "hyper": dataclasses.asdict(hyper), "covariates": list(ds.covariate_names)}
    return ChainDraws("gaussian", chain, keep.copy(), columns, meta)


def run_chains(ds, hyper=None, config: ChainConfig | None = None, threads: int = 1):
    """Run ``config.chains`` chains, concurrently when ``threads > 1``."""
    ids = range(config.chains)
    if threads <= 1 or config.chains == 1:
        return [run_chain(ds, hyper, config, c) for c in ids]
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda c: run_chain(ds, hyper, config, c), ids))
