"""Gibbs sampler for the overfitted discrete-mixture random-effects probit.

::

    y_ij | z_i = k ~ Bern(Phi(theta_k + x_ij beta))
    theta_k ~ N(0, 1),  beta ~ N(0, 9 I)
    z_i ~ Cat(nu),  nu ~ Dir(1/K, ..., 1/K)

Sweep order: z (omega integrated out), omega, beta, atoms, weights.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import logging
import math

import numpy as np
from scipy import special

from . import rng as R
from ._backend import HAS_NUMBA, njit, prange
from .chains import ChainConfig, ChainDraws
from .data import PanelDataset
from .errors import ConfigError, SamplerError
from .gibbs_gaussian import _Design
from .stats import (categorical_draw, categorical_draws, log_dirichlet_draw, log_ndtr,
                    normal_draws, truncated_normal_draws)

log = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class DiscreteHyperParams:
    """Prior settings and update variants.

    ``atom_update="conjugate"`` includes the N(0, 1) prior precision in the
    atom conditional; ``"literal"`` drops it (occupied components only).
    ``weight_counts="persons"`` adds person counts to the Dirichlet
    concentrations; ``"observations"`` adds observation counts.
    """

    K: int = 30
    beta_var: float = 9.0
    atom_var: float = 1.0
    atom_update: str = "conjugate"
    weight_counts: str = "persons"

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError("K must be at least 1")
        if self.atom_update not in ("conjugate", "literal"):
            raise ConfigError("atom_update must be 'conjugate' or 'literal'")
        if self.weight_counts not in ("persons", "observations"):
            raise ConfigError("weight_counts must be 'persons' or 'observations'")


@dataclasses.dataclass
class DiscreteState:
    atoms: np.ndarray  # (K,)
    log_weights: np.ndarray  # (K,)
    z: np.ndarray  # (m,) 0-based component labels
    beta: np.ndarray
    omega: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def K(self) -> int:
        return int(self.atoms.shape[0])

    def occupied(self) -> int:
        return int(np.unique(self.z).size)

    def copy(self) -> "DiscreteState":
        return DiscreteState(self.atoms.copy(), self.log_weights.copy(), self.z.copy(),
                             self.beta.copy(), self.omega.copy())


# ---------------------------------------------------------------------------
# z update
# ---------------------------------------------------------------------------


@njit(cache=True, parallel=True, nogil=True)
def _z_logweights_nb(log_nu, atoms, xb, y, offsets):
    m = offsets.shape[0] - 1
    K = atoms.shape[0]
    out = np.empty((m, K))
    for i in prange(m):
        for k in range(K):
            acc = log_nu[k]
            for r in range(offsets[i], offsets[i + 1]):
                eta = atoms[k] + xb[r]
                if y[r] > 0:
                    acc += log_ndtr(eta)
                else:
                    acc += log_ndtr(-eta)
            out[i, k] = acc
    return out


@njit(cache=True, parallel=True, nogil=True)
def _z_draws_nb(log_nu, atoms, xb, y, offsets, k0, k1, c1, c2):
    m = offsets.shape[0] - 1
    K = atoms.shape[0]
    z = np.empty(m, dtype=np.int64)
    for i in prange(m):
        lw = np.empty(K)
        for k in range(K):
            acc = log_nu[k]
            if acc > -np.inf:
                for r in range(offsets[i], offsets[i + 1]):
                    eta = atoms[k] + xb[r]
                    if y[r] > 0:
                        acc += log_ndtr(eta)
                    else:
                        acc += log_ndtr(-eta)
            lw[k] = acc
        z[i] = categorical_draw(lw, k0, k1, i, c1, c2)
    return z


def z_logweights(state: DiscreteState, d: _Design) -> np.ndarray:
    """Unnormalized log assignment probabilities, shape (m, K)."""
    xb = d.X @ state.beta
    offsets = _offsets(d)
    if HAS_NUMBA:
        return _z_logweights_nb(state.log_weights, state.atoms, xb, d.y, offsets)
    eta = state.atoms[None, :] + xb[:, None]
    ll = np.where(d.positive[:, None], special.log_ndtr(eta), special.log_ndtr(-eta))
    return np.add.reduceat(ll, offsets[:-1], axis=0) + state.log_weights[None, :]


def _offsets(d: _Design) -> np.ndarray:
    if not hasattr(d, "_offsets"):
        d._offsets = np.concatenate([[0], np.cumsum(d.n_i)]).astype(np.int64)
    return d._offsets


def update_z_marginal_omega(state, d, stream) -> np.ndarray:
    key, it, ln = stream.key, stream.iteration, R.lane(stream.chain, R.STEP_Z)
    if HAS_NUMBA:
        xb = d.X @ state.beta
        return _z_draws_nb(state.log_weights, state.atoms, xb, d.y, _offsets(d),
                           key[0], key[1], it, ln)
    return categorical_draws(z_logweights(state, d), key, it, ln)


# ---------------------------------------------------------------------------
# remaining conditionals
# ---------------------------------------------------------------------------


def update_omega_discrete(state, d, stream) -> np.ndarray:
    mean = state.atoms[state.z][d.person] + d.X @ state.beta
    return truncated_normal_draws(mean, 1.0, d.positive, stream.key, stream.iteration,
                                  R.lane(stream.chain, R.STEP_OMEGA))


def beta_discrete_conditional(state, d):
    e = state.omega - state.atoms[state.z][d.person]
    return d.beta_cov @ (d.X.T @ e), d.beta_cov


def update_beta_discrete(state, d, stream) -> np.ndarray:
    alpha, _ = beta_discrete_conditional(state, d)
    z = normal_draws(d.p, stream.key, stream.iteration, R.lane(stream.chain, R.STEP_BETA))
    return alpha + d.beta_chol @ z


def atom_conditional(state, d, hyper: DiscreteHyperParams):
    """Per-component mean and variance of the atom update.

    Empty components get the prior N(0, atom_var) under either variant.
    """
    comp = state.z[d.person]
    n_k = np.bincount(comp, minlength=state.K).astype(float)
    r_k = np.bincount(comp, weights=state.omega - d.X @ state.beta, minlength=state.K)
    if hyper.atom_update == "conjugate":
        s = 1.0 / (n_k + 1.0 / hyper.atom_var)
        alpha = s * r_k
    else:
        empty = n_k == 0
        s = np.where(empty, hyper.atom_var, 1.0 / np.where(empty, 1.0, n_k))
        alpha = np.where(empty, 0.0, r_k * s)
    return alpha, s


def update_atoms(state, d, hyper, stream) -> np.ndarray:
    alpha, s = atom_conditional(state, d, hyper)
    z = normal_draws(state.K, stream.key, stream.iteration, R.lane(stream.chain, R.STEP_ATOMS))
    return alpha + np.sqrt(s) * z


def weight_concentrations(z, n_i, K, weight_counts="persons") -> np.ndarray:
    w = None if weight_counts == "persons" else n_i
    return 1.0 / K + np.bincount(z, weights=w, minlength=K)


def update_weights(state, d, hyper, stream) -> np.ndarray:
    """Log weights drawn from the Dirichlet conditional."""
    conc = weight_concentrations(state.z, d.n_i, state.K, hyper.weight_counts)
    return log_dirichlet_draw(conc, stream.key, stream.iteration,
                              R.lane(stream.chain, R.STEP_WEIGHTS))


def gibbs_sweep(state: DiscreteState, d: _Design, hyper: DiscreteHyperParams,
                stream: R.RngStream) -> DiscreteState:
    state.z = update_z_marginal_omega(state, d, stream)
    state.omega = update_omega_discrete(state, d, stream)
    state.beta = update_beta_discrete(state, d, stream)
    state.atoms = update_atoms(state, d, hyper, stream)
    state.log_weights = update_weights(state, d, hyper, stream)
    return state


# ---------------------------------------------------------------------------
# chains
# ---------------------------------------------------------------------------


def initial_state(d: _Design, hyper: DiscreteHyperParams, config: ChainConfig,
                  chain: int) -> DiscreteState:
    key = R.split_seed(config.seed)
    atoms = math.sqrt(hyper.atom_var) * normal_draws(hyper.K, key, 0, R.lane(chain, R.STEP_INIT))
    beta = np.zeros(d.p)
    if config.init == "overdispersed":
        beta = normal_draws(d.p, key, 1, R.lane(chain, R.STEP_INIT))
    return DiscreteState(atoms, np.full(hyper.K, -math.log(hyper.K)),
                         np.zeros(d.m, dtype=np.int64), beta, np.zeros(d.N))


def run_chain_discrete(ds: PanelDataset, hyper: DiscreteHyperParams | None = None,
                       config: ChainConfig | None = None, chain: int = 0,
                       state: DiscreteState | None = None) -> ChainDraws:
    """Run one chain; stores beta, atoms, weights, occupancy Q and optionally
    each person's random effect ``theta_{z_i}``.
    """
    hyper = hyper or DiscreteHyperParams()
    if config is None:
        raise ValueError("a ChainConfig with an explicit seed is required")
    d = _Design(ds.X, ds.y, ds.person, ds.m, hyper.beta_var)
    state = state.copy() if state is not None else initial_state(d, hyper, config, chain)
    K = hyper.K
    keep = config.stored_iterations
    width = d.p + 2 * K + 1 + (d.m if config.store_theta else 0)
    out = np.empty((keep.size, width))
    row = 0
    base = R.RngStream(config.seed, chain=chain)
    report_every = max(1, config.iterations // 10)
    for it in range(1, config.iterations + 1):
        try:
            gibbs_sweep(state, d, hyper, base.replace(iteration=it))
        except SamplerError as exc:
            raise SamplerError(str(exc), iteration=it) from exc
        if not (np.all(np.isfinite(state.atoms)) and np.all(np.isfinite(state.beta))):
            raise SamplerError("non-finite parameter", iteration=it)
        if row < keep.size and it == keep[row]:
            out[row, :d.p] = state.beta
            out[row, d.p:d.p + K] = state.atoms
            out[row, d.p + K:d.p + 2 * K] = state.weights
            out[row, d.p + 2 * K] = state.occupied()
            if config.store_theta:
                out[row, d.p + 2 * K + 1:] = state.atoms[state.z]
            row += 1
        if it % report_every == 0:
            log.info("chain %d: iteration %d/%d Q=%d", chain, it, config.iterations,
                     state.occupied())
    names = ([f"beta_{k + 1}" for k in range(d.p)] + [f"atom_{k + 1}" for k in range(K)]
             + [f"weight_{k + 1}" for k in range(K)] + ["Q"])
    if config.store_theta:
        names += [f"effect_{i + 1}" for i in range(d.m)]
    columns = {name: out[:, k].copy() for k, name in enumerate(names)}
    columns["Q"] = columns["Q"].astype(np.int64)
    meta = {"seed": int(config.seed), "config": config.to_dict(),
            "hyper": dataclasses.asdict(hyper), "covariates": list(ds.covariate_names)}
    return ChainDraws("discrete", chain, keep.copy(), columns, meta)


def run_chains_discrete(ds, hyper=None, config: ChainConfig | None = None, threads: int = 1):
    ids = range(config.chains)
    if threads <= 1 or config.chains == 1:
        return [run_chain_discrete(ds, hyper, config, c) for c in ids]
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda c: run_chain_discrete(ds, hyper, config, c), ids))


def occupancy_summary(draws: ChainDraws | list) -> dict:
    """Posterior frequency table of the number of occupied components."""
    chains = draws if isinstance(draws, list) else [draws]
    q = np.concatenate([c.occupied for c in chains]).astype(int)
    values, counts = np.unique(q, return_counts=True)
    return {"table": {int(v): int(c) for v, c in zip(values, counts)},
            "mean": float(q.mean()),
            "prob_gt_20": float(np.mean(q > 20))}
