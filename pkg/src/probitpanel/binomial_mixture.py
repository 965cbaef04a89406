"""Binomial random-effect models with a discrete mixing distribution.

::

    y_i ~ Binomial(n_i, p_i),  p_i ~ Discrete({pi_1..pi_J}, {w_1..w_J})
    pi_j ~ Beta(a, b),  w ~ Dir(weight_prior)

The collapsed sampler integrates the support points out, so that
``y_i | z_i = j`` is beta-binomial given the other members of class j.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import special

from . import rng as R
from ._backend import njit
from .chains import ChainConfig, ChainDraws
from .errors import ConfigError, DataError, DomainError
from .stats import (categorical_draw, categorical_draws, lbeta, log_beta_fn, log_dirichlet_draw,
                    log_gamma_draws)


class BinomialObservation(NamedTuple):
    y: int
    n: int


@dataclasses.dataclass(frozen=True)
class BetaHyper:
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and math.isfinite(self.a) and math.isfinite(self.b)):
            raise DomainError("Beta hyperparameters must be positive and finite")


@dataclasses.dataclass(frozen=True, eq=False)
class BinomialData:
    """Successes ``y`` and trials ``n`` as integer arrays."""

    y: np.ndarray
    n: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.int64).ravel()
        n = np.asarray(self.n, dtype=np.int64).ravel()
        if y.shape != n.shape:
            raise DataError("y and n differ in length")
        if np.any(n < 1) or np.any(y < 0) or np.any(y > n):
            raise DataError("observations need n >= 1 and 0 <= y <= n")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "n", n)

    def __len__(self) -> int:
        return int(self.y.size)

    @classmethod
    def from_observations(cls, obs) -> "BinomialData":
        obs = list(obs)
        return cls([o[0] for o in obs], [o[1] for o in obs])

    def observations(self) -> list[BinomialObservation]:
        return [BinomialObservation(int(a), int(b)) for a, b in zip(self.y, self.n)]


def read_binomial_csv(path) -> BinomialData:
    """Read a CSV with header columns ``y`` and ``n``."""
    ys, ns = [], []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"y", "n"} <= set(reader.fieldnames):
            raise ConfigError("binomial CSV needs columns 'y' and 'n'")
        for row in reader:
            try:
                y, n = int(row["y"]), int(row["n"])
            except (TypeError, ValueError):
                raise DataError(f"non-integer y/n: {row}", line=reader.line_num) from None
            if n < 1 or not 0 <= y <= n:
                raise DataError(f"invalid observation y={y}, n={n}", line=reader.line_num)
            ys.append(y)
            ns.append(n)
    return BinomialData(np.array(ys, dtype=np.int64), np.array(ns, dtype=np.int64))


def write_binomial_csv(data: BinomialData, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y", "n"])
        w.writerows(zip(data.y.tolist(), data.n.tolist()))


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------


def _log_choose(n, y):
    return special.gammaln(n + 1.0) - special.gammaln(y + 1.0) - special.gammaln(n - y + 1.0)


def beta_binomial_log_pmf(y, n, a, b):
    """log[ C(n, y) B(a + y, b + n - y) / B(a, b) ], vectorized.

    Raises
    ------
    DomainError
        If ``y`` is outside ``0..n``, ``n < 0`` or ``a, b`` are not positive.
    """
    y, n, a, b = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (y, n, a, b)))
    if np.any(n < 0) or np.any(y < 0) or np.any(y > n) or np.any(y != np.floor(y)):
        raise DomainError("need integer 0 <= y <= n")
    if np.any(~(a > 0)) or np.any(~(b > 0)):
        raise DomainError("a and b must be positive")
    out = _log_choose(n, y) + log_beta_fn(a + y, b + n - y) - log_beta_fn(a, b)
    return out[()] if out.ndim == 0 else out


def beta_marginal_log_likelihood(data: BinomialData, hyper: BetaHyper) -> float:
    """Log marginal likelihood under a Beta(a, b) mixing distribution,
    binomial coefficients included."""
    if len(data) == 0:
        return 0.0
    return float(np.sum(beta_binomial_log_pmf(data.y, data.n, hyper.a, hyper.b)))


# ---------------------------------------------------------------------------
# state and conditionals
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class BinMixState:
    pi: np.ndarray  # (J,) support points
    log_w: np.ndarray  # (J,) log weights
    z: np.ndarray  # (N,) 0-based labels

    @property
    def J(self) -> int:
        return int(self.log_w.shape[0])

    @property
    def w(self) -> np.ndarray:
        return np.exp(self.log_w)

    def occupied(self) -> int:
        return int(np.unique(self.z).size)

    def copy(self) -> "BinMixState":
        return BinMixState(self.pi.copy(), self.log_w.copy(), self.z.copy())


def class_totals(z, data: BinomialData, J: int):
    """Success and trial totals per class."""
    Y = np.bincount(z, weights=data.y, minlength=J)
    T = np.bincount(z, weights=data.n, minlength=J)
    return Y, T


@njit(cache=True)
def _collapsed_logweights(yi, ni, Y, T, log_w, a, b, out):
    for j in range(log_w.shape[0]):
        a0 = a + Y[j]
        b0 = b + T[j] - Y[j]
        out[j] = log_w[j] + lbeta(a0 + yi, b0 + ni - yi) - lbeta(a0, b0)


def collapsed_z_logweights(i: int, z, data: BinomialData, log_w, hyper: BetaHyper) -> np.ndarray:
    """Unnormalized log P[z_i = j | z_-i, w, y], class totals excluding i."""
    log_w = np.asarray(log_w, dtype=float)
    Y, T = class_totals(z, data, log_w.size)
    Y[z[i]] -= data.y[i]
    T[z[i]] -= data.n[i]
    out = np.empty(log_w.size)
    _collapsed_logweights(float(data.y[i]), float(data.n[i]), Y, T, log_w, hyper.a, hyper.b, out)
    return out


def collapsed_z_update(i: int, state: BinMixState, data: BinomialData, hyper: BetaHyper,
                       stream: R.RngStream) -> int:
    """Draw a new label for observation ``i`` from its collapsed conditional."""
    lw = collapsed_z_logweights(i, state.z, data, state.log_w, hyper)
    k0, k1 = stream.key
    return int(categorical_draw(lw, k0, k1, i, stream.iteration, R.lane(stream.chain, R.STEP_Z)))


@njit(cache=True, nogil=True)
def _collapsed_sweep(y, n, z, log_w, a, b, k0, k1, c1, c2):
    J = log_w.shape[0]
    Y = np.zeros(J)
    T = np.zeros(J)
    for i in range(y.shape[0]):
        Y[z[i]] += y[i]
        T[z[i]] += n[i]
    lw = np.empty(J)
    for i in range(y.shape[0]):
        Y[z[i]] -= y[i]
        T[z[i]] -= n[i]
        _collapsed_logweights(float(y[i]), float(n[i]), Y, T, log_w, a, b, lw)
        k = categorical_draw(lw, k0, k1, i, c1, c2)
        z[i] = k
        Y[k] += y[i]
        T[k] += n[i]
    return z


def collapsed_sweep(state: BinMixState, data: BinomialData, hyper: BetaHyper,
                    stream: R.RngStream) -> np.ndarray:
    """Sequential collapsed updates of every label; returns the new labels."""
    k0, k1 = stream.key
    z = state.z.astype(np.int64).copy()
    return _collapsed_sweep(data.y, data.n, z, state.log_w, hyper.a, hyper.b, k0, k1,
                            stream.iteration, R.lane(stream.chain, R.STEP_Z))


def _beta_draws(alpha, beta, stream: R.RngStream, step: int) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    J = alpha.size
    lg = log_gamma_draws(np.concatenate([alpha, beta]), stream.key, stream.iteration,
                         R.lane(stream.chain, step))
    ga, gb = lg[:J], lg[J:]
    return np.exp(ga - np.logaddexp(ga, gb))


def support_point_conditional(z, data: BinomialData, J: int, hyper: BetaHyper):
    """Beta parameters of each pi_j given the labels; empty classes get (a, b)."""
    Y, T = class_totals(z, data, J)
    return hyper.a + Y, hyper.b + T - Y


def update_support_points(state: BinMixState, data: BinomialData, hyper: BetaHyper,
                          stream: R.RngStream) -> np.ndarray:
    alpha, beta = support_point_conditional(state.z, data, state.J, hyper)
    return np.clip(_beta_draws(alpha, beta, stream, R.STEP_PI), 1e-300, 1 - 1e-16)


def update_mixture_weights(state: BinMixState, weight_prior, stream: R.RngStream) -> np.ndarray:
    conc = np.asarray(weight_prior, dtype=float) + np.bincount(state.z, minlength=state.J)
    return log_dirichlet_draw(conc, stream.key, stream.iteration,
                              R.lane(stream.chain, R.STEP_WEIGHTS))


def uncollapsed_z_update(state: BinMixState, data: BinomialData, stream: R.RngStream):
    """Labels given explicit support points; the binomial coefficient cancels."""
    lp = np.log(state.pi)[None, :]
    lq = np.log1p(-state.pi)[None, :]
    lw = state.log_w[None, :] + data.y[:, None] * lp + (data.n - data.y)[:, None] * lq
    return categorical_draws(lw, stream.key, stream.iteration, R.lane(stream.chain, R.STEP_Z))


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------


def _check_J(J: int, N: int, max_ratio: float | None):
    if J < 1:
        raise ConfigError("J must be at least 1")
    if max_ratio is not None and J > max(1, math.ceil(max_ratio * N)):
        raise ConfigError(f"J={J} exceeds the cap of {max_ratio} x {N} observations")


def fit_binomial_mixture(data: BinomialData, J: int, hyper: BetaHyper | None = None,
                         weight_prior=None, config: ChainConfig | None = None, chain: int = 0,
                         sampler: str = "collapsed", draw_pi: bool = True,
                         max_ratio: float | None = 1.0) -> ChainDraws:
    """Gibbs sampler for the discrete binomial mixture.

    Parameters
    ----------
    J : int
        Number of classes; must be at least 1 and at most ``max_ratio * N``.
    weight_prior : float or array, optional
        Dirichlet concentration(s) for ``w``; default ``1/J`` each.
    sampler : {"collapsed", "uncollapsed"}
        ``"collapsed"`` draws labels with the support points integrated out;
        ``"uncollapsed"`` alternates labels and support points explicitly.
    draw_pi : bool
        Whether the collapsed sampler also draws support points for reporting.

    Returns
    -------
    ChainDraws with columns ``weight_j``, ``pi_j``, ``Q`` and, when
    ``config.store_theta`` is set, the labels ``z_i`` (1-based).
    """
    hyper = hyper or BetaHyper()
    if config is None:
        raise ValueError("a ChainConfig with an explicit seed is required")
    if sampler not in ("collapsed", "uncollapsed"):
        raise ConfigError("sampler must be 'collapsed' or 'uncollapsed'")
    N = len(data)
    _check_J(J, N, max_ratio)
    prior = np.broadcast_to(np.asarray(1.0 / J if weight_prior is None else weight_prior,
                                       dtype=float), (J,)).copy()
    if np.any(~(prior > 0)):
        raise ConfigError("weight prior concentrations must be positive")

    key = R.split_seed(config.seed)
    z0 = categorical_draws(np.zeros((N, J)), key, 0, R.lane(chain, R.STEP_INIT))
    state = BinMixState(np.full(J, 0.5), np.full(J, -math.log(J)), z0.astype(np.int64))
    base = R.RngStream(config.seed, chain=chain)
    if sampler == "uncollapsed":
        state.pi = update_support_points(state, data, hyper, base)

    keep = config.stored_iterations
    width = 2 * J + 1 + (N if config.store_theta else 0)
    out = np.empty((keep.size, width))
    row = 0
    for it in range(1, config.iterations + 1):
        s = base.replace(iteration=it)
        if sampler == "collapsed":
            state.z = collapsed_sweep(state, data, hyper, s)
            state.log_w = update_mixture_weights(state, prior, s)
            if draw_pi:
                state.pi = update_support_points(state, data, hyper, s)
        else:
            state.z = uncollapsed_z_update(state, data, s)
            state.pi = update_support_points(state, data, hyper, s)
            state.log_w = update_mixture_weights(state, prior, s)
        if row < keep.size and it == keep[row]:
            out[row, :J] = state.w
            out[row, J:2 * J] = state.pi if (draw_pi or sampler == "uncollapsed") else np.nan
            out[row, 2 * J] = state.occupied()
            if config.store_theta:
                out[row, 2 * J + 1:] = state.z + 1
            row += 1
    names = ([f"weight_{j + 1}" for j in range(J)] + [f"pi_{j + 1}" for j in range(J)] + ["Q"]
             + ([f"z_{i + 1}" for i in range(N)] if config.store_theta else []))
    columns = {name: out[:, k].copy() for k, name in enumerate(names)}
    for name in names[2 * J:]:
        columns[name] = columns[name].astype(np.int64)
    meta = {"seed": int(config.seed), "config": config.to_dict(), "J": J,
            "hyper": dataclasses.asdict(hyper), "weight_prior": prior.tolist(),
            "sampler": sampler}
    return ChainDraws("binomial", chain, keep.copy(), columns, meta)


def label_marginals(draws: ChainDraws, J: int) -> np.ndarray:
    """Posterior P[z_i = j] from stored labels, shape (N, J)."""
    z = draws._block("z")
    if z is None:
        raise ValueError("labels were not stored; set store_theta=True")
    z = z.astype(np.int64) - 1
    return np.stack([(z == j).mean(axis=0) for j in range(J)], axis=1)


# ---------------------------------------------------------------------------
# brute-force oracle
# ---------------------------------------------------------------------------


def enumerate_label_posterior(data: BinomialData, J: int, hyper: BetaHyper,
                              weight_prior=None) -> np.ndarray:
    """Exact P[z_i = j | y] by summing over all J**N label vectors.

    Weights and support points are integrated out analytically:
    Dirichlet-multinomial for the labels times a Beta ratio per class.
    Intended for N of at most about 8.
    """
    N = len(data)
    alpha = np.broadcast_to(np.asarray(1.0 / J if weight_prior is None else weight_prior,
                                       dtype=float), (J,))
    grids = np.indices((J,) * N).reshape(N, -1).T  # (J**N, N)
    logp = np.empty(grids.shape[0])
    for r, z in enumerate(grids):
        counts = np.bincount(z, minlength=J)
        Y, T = class_totals(z, data, J)
        lp = special.gammaln(alpha.sum()) - special.gammaln(alpha.sum() + N)
        lp += np.sum(special.gammaln(alpha + counts) - special.gammaln(alpha))
        lp += np.sum(log_beta_fn(hyper.a + Y, hyper.b + T - Y) - log_beta_fn(hyper.a, hyper.b))
        logp[r] = lp
    p = np.exp(logp - special.logsumexp(logp))
    out = np.zeros((N, J))
    for i in range(N):
        np.add.at(out[i], grids[:, i], p)
    return out
