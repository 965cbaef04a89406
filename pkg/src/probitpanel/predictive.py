"""Individual predictive probabilities under the partial-information posterior.

For occasion j of person i and each stored global draw, the random effect is
drawn from its conditional posterior given the person's earlier outcomes
(giving P*_ij) or given outcomes through j (giving P_ij), and the probability
is ``Phi(mu + tau * theta + x_ij beta)``.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy import special

from . import rng as R
from ._backend import HAS_NUMBA, njit, prange
from .chains import ChainDraws
from .data import PanelDataset
from .errors import DomainError
from .rng import uniform_block, uniform_block_np
from .stats import log_ndtr, ndtr


@dataclasses.dataclass(frozen=True)
class ThetaGrid:
    """Equally spaced quadrature grid for a standard-normal random effect."""

    lower: float = -8.0
    upper: float = 8.0
    points: int = 401

    def __post_init__(self):
        if not (self.upper > self.lower and self.points >= 3):
            raise DomainError("grid needs upper > lower and at least 3 points")

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.lower, self.upper, self.points)


@dataclasses.dataclass(frozen=True)
class ThetaPosterior:
    """A density on grid nodes, normalized by the trapezoid rule."""

    nodes: np.ndarray
    density: np.ndarray

    def mean(self) -> float:
        return float(np.trapezoid(self.nodes * self.density, self.nodes))

    def total(self) -> float:
        return float(np.trapezoid(self.density, self.nodes))

    def cdf(self) -> np.ndarray:
        h = np.diff(self.nodes)
        return np.concatenate([[0.0], np.cumsum(0.5 * h * (self.density[1:] + self.density[:-1]))])


def _log_lik_grid(nodes, y, xb, mu, tau):
    eta = mu + tau * nodes[None, :] + np.asarray(xb, dtype=float)[:, None]
    sign = np.where(np.asarray(y) > 0, 1.0, -1.0)[:, None]
    return special.log_ndtr(sign * eta).sum(axis=0)


def theta_conditional_posterior(y, xb, mu: float, tau: float,
                                grid: ThetaGrid | None = None) -> ThetaPosterior:
    """Posterior of theta_i given a history with linear predictors ``xb``
    (covariate part only) and outcomes ``y``, globals held fixed.

    An empty history returns the N(0, 1) prior on the grid.
    """
    grid = grid or ThetaGrid()
    nodes = grid.nodes
    lp = -0.5 * nodes ** 2
    if len(y):
        lp = lp + _log_lik_grid(nodes, y, xb, mu, tau)
    dens = np.exp(lp - lp.max())
    dens /= np.trapezoid(dens, nodes)
    return ThetaPosterior(nodes, dens)


# ---------------------------------------------------------------------------
# sampling kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _sample_continuous(nodes, lp, u):
    # inverse of the piecewise-linear interpolant of the trapezoid CDF
    G = nodes.shape[0]
    mx = -np.inf
    for g in range(G):
        if lp[g] > mx:
            mx = lp[g]
    cum = np.empty(G)
    cum[0] = 0.0
    prev = math.exp(lp[0] - mx)
    for g in range(1, G):
        cur = math.exp(lp[g] - mx)
        cum[g] = cum[g - 1] + 0.5 * (nodes[g] - nodes[g - 1]) * (prev + cur)
        prev = cur
    target = u * cum[G - 1]
    lo, hi = 0, G - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if cum[mid] <= target:
            lo = mid
        else:
            hi = mid
    width = cum[hi] - cum[lo]
    frac = (target - cum[lo]) / width if width > 0 else 0.5
    return nodes[lo] + frac * (nodes[hi] - nodes[lo])


@njit(cache=True)
def _sample_discrete(nodes, lp, u):
    G = nodes.shape[0]
    mx = -np.inf
    for g in range(G):
        if lp[g] > mx:
            mx = lp[g]
    total = 0.0
    for g in range(G):
        total += math.exp(lp[g] - mx)
    target = u * total
    acc = 0.0
    last = 0
    for g in range(G):
        w = math.exp(lp[g] - mx)
        if w > 0.0:
            last = g
            acc += w
            if acc > target:
                return nodes[g]
    return nodes[last]


@njit(cache=True, parallel=True, nogil=True)
def _predict_nb(nodes, log_prior, mu, tau, xb, y, starts, target, row_id, continuous,
                k0, k1, lane_star, lane_post, out_star, out_post):
    # nodes, log_prior: (D, G); mu, tau: (D,); xb: (D, rows); starts: person offsets
    n_persons = starts.shape[0] - 1
    D = mu.shape[0]
    for task in prange(n_persons * D):
        i = task // D
        d = task % D
        lp = log_prior[d].copy()
        for r in range(starts[i], starts[i + 1]):
            base = mu[d] + xb[d, r]
            t = target[r]
            if t >= 0:
                u, _ = uniform_block(k0, k1, row_id[r], d, lane_star, 0)
                th = _sample_continuous(nodes[d], lp, u) if continuous else _sample_discrete(nodes[d], lp, u)
                out_star[t, d] = ndtr(base + tau[d] * th)
            for g in range(nodes.shape[1]):
                eta = base + tau[d] * nodes[d, g]
                lp[g] += log_ndtr(eta) if y[r] > 0 else log_ndtr(-eta)
            if t >= 0:
                u, _ = uniform_block(k0, k1, row_id[r], d, lane_post, 0)
                th = _sample_continuous(nodes[d], lp, u) if continuous else _sample_discrete(nodes[d], lp, u)
                out_post[t, d] = ndtr(base + tau[d] * th)


def _predict_np(nodes, log_prior, mu, tau, xb, y, starts, target, row_id, continuous,
                k0, k1, lane_star, lane_post, out_star, out_post):
    # vectorized over draws; loops over persons and their rows
    D = mu.shape[0]
    draws = np.arange(D, dtype=np.uint64)
    sign = np.where(y > 0, 1.0, -1.0)

    def sample(lp, u):
        mx = lp.max(axis=1, keepdims=True)
        f = np.exp(lp - mx)
        if continuous:
            h = np.diff(nodes, axis=1)
            cum = np.concatenate([np.zeros((D, 1)),
                                  np.cumsum(0.5 * h * (f[:, 1:] + f[:, :-1]), axis=1)], axis=1)
            tgt = u * cum[:, -1]
            hi = np.array([np.searchsorted(cum[d], tgt[d], side="right") for d in range(D)])
            hi = np.clip(hi, 1, nodes.shape[1] - 1)
            lo = hi - 1
            rows = np.arange(D)
            width = cum[rows, hi] - cum[rows, lo]
            frac = np.where(width > 0, (tgt - cum[rows, lo]) / np.where(width > 0, width, 1), 0.5)
            return nodes[rows, lo] + frac * (nodes[rows, hi] - nodes[rows, lo])
        cum = np.cumsum(f, axis=1)
        tgt = u * cum[:, -1]
        idx = np.array([np.searchsorted(cum[d], tgt[d], side="right") for d in range(D)])
        # skip zero-weight components the same way as the scalar kernel
        idx = np.minimum(idx, np.array([np.flatnonzero(f[d] > 0)[-1] for d in range(D)]))
        return nodes[np.arange(D), idx]

    for i in range(starts.shape[0] - 1):
        lp = log_prior.copy()
        for r in range(starts[i], starts[i + 1]):
            base = mu + xb[:, r]
            t = target[r]
            if t >= 0:
                u, _ = uniform_block_np(k0, k1, np.uint64(row_id[r]), draws, np.uint64(lane_star), 0)
                out_star[t] = special.ndtr(base + tau * sample(lp, u))
            lp = lp + special.log_ndtr(sign[r] * (base[:, None] + tau[:, None] * nodes))
            if t >= 0:
                u, _ = uniform_block_np(k0, k1, np.uint64(row_id[r]), draws, np.uint64(lane_post), 0)
                out_post[t] = special.ndtr(base + tau * sample(lp, u))


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True, eq=False)
class PredictiveSummary:
    """Sample sets of P*_ij and P_ij for a set of dataset rows.

    ``pstar`` and ``post`` have shape (rows, draws).
    """

    rows: np.ndarray
    person: np.ndarray
    occasion: np.ndarray
    y: np.ndarray
    pstar: np.ndarray
    post: np.ndarray
    risk_group: np.ndarray | None = None
    prior_count: np.ndarray | None = None

    def __len__(self) -> int:
        return int(self.rows.size)

    @property
    def pstar_hat(self) -> np.ndarray:
        return self.pstar.mean(axis=1)

    @property
    def p_hat(self) -> np.ndarray:
        return self.post.mean(axis=1)

    @property
    def p_median(self) -> np.ndarray:
        return np.median(self.post, axis=1)

    def interval(self, level: float = 0.95, which: str = "post"):
        """Equal-tailed interval (linear interpolation of order statistics)."""
        s = self.post if which == "post" else self.pstar
        a = (1.0 - level) / 2.0
        lo, hi = np.quantile(s, [a, 1.0 - a], axis=1)
        return lo, hi

    def table(self, level: float = 0.95) -> dict:
        lo, hi = self.interval(level)
        return {"row": self.rows, "person": self.person, "occasion": self.occasion, "y": self.y,
                "pstar_hat": self.pstar_hat, "p_hat": self.p_hat, "p_median": self.p_median,
                "p_lower": lo, "p_upper": hi}


def _draw_arrays(draws: ChainDraws, grid: ThetaGrid, max_draws: int | None):
    D = len(draws)
    idx = np.arange(D)
    if max_draws is not None and D > max_draws:
        idx = np.unique(np.linspace(0, D - 1, max_draws).round().astype(int))
    beta = draws.beta[idx]
    if draws.model == "gaussian":
        nodes = np.broadcast_to(grid.nodes, (idx.size, grid.points)).copy()
        log_prior = -0.5 * nodes ** 2
        return nodes, log_prior, draws.mu[idx].copy(), draws.tau[idx].copy(), beta, True
    if draws.model == "discrete":
        nodes = np.ascontiguousarray(draws.atoms[idx])
        with np.errstate(divide="ignore"):
            log_prior = np.log(draws.weights[idx])
        return (nodes, log_prior, np.zeros(idx.size), np.ones(idx.size), beta, False)
    raise DomainError(f"no predictive for model {draws.model!r}")


def predictive_samples(ds: PanelDataset, draws: ChainDraws, rows=None,
                       grid: ThetaGrid | None = None, max_draws: int | None = None,
                       seed: int | None = None) -> PredictiveSummary:
    """P* and P sample sets for the requested dataset rows.

    Parameters
    ----------
    ds : PanelDataset
        Full data (training and holdout); each person's history is every
        earlier occasion in ``ds``.
    draws : ChainDraws
        Global draws fitted on the training data only.
    rows : array of int or bool mask, optional
        Rows to predict; default all.
    max_draws : int, optional
        Use an evenly spaced subset of the stored draws.
    seed : int, optional
        Key for the theta draws; defaults to the chain seed.
    """
    grid = grid or ThetaGrid()
    if rows is None:
        rows = np.arange(ds.N)
    rows = np.asarray(rows)
    if rows.dtype == bool:
        rows = np.flatnonzero(rows)
    if rows.size and (rows.min() < 0 or rows.max() >= ds.N):
        raise DomainError("row index out of range")
    rows = np.unique(rows)
    nodes, log_prior, mu, tau, beta, continuous = _draw_arrays(draws, grid, max_draws)
    if beta.shape[1] != ds.p:
        raise DomainError(f"draws have {beta.shape[1]} coefficients, data has {ds.p} covariates")

    # persons with targets, all of their rows in occasion order
    persons = np.unique(ds.person[rows])
    offsets = ds.offsets
    sub = np.concatenate([np.arange(offsets[i], offsets[i + 1]) for i in persons]) if persons.size else np.zeros(0, int)
    sub = sub[np.lexsort((ds.occasion[sub], ds.person[sub]))]
    starts = np.concatenate([[0], np.cumsum(np.bincount(ds.person[sub], minlength=ds.m)[persons])]).astype(np.int64)
    target = np.full(sub.size, -1, dtype=np.int64)
    pos = {int(r): k for k, r in enumerate(rows)}
    for k, r in enumerate(sub):
        target[k] = pos.get(int(r), -1)
    xb = np.ascontiguousarray(beta @ ds.X[sub].T)
    D = mu.size
    out_star = np.empty((rows.size, D))
    out_post = np.empty((rows.size, D))
    key = R.split_seed(draws.meta.get("seed", 0) if seed is None else seed)
    fn = _predict_nb if HAS_NUMBA else _predict_np
    fn(np.ascontiguousarray(nodes), np.ascontiguousarray(log_prior), mu, tau, xb,
       ds.y[sub].astype(np.int8), starts, target, sub.astype(np.int64), continuous,
       key[0], key[1], R.lane(0, R.STEP_PRED_STAR), R.lane(0, R.STEP_PRED_POST),
       out_star, out_post)
    rg = ds.risk_group[rows] if ds.risk_group is not None else None
    return PredictiveSummary(rows, ds.person[rows], ds.occasion[rows], ds.y[rows],
                             np.clip(out_star, 0.0, 1.0), np.clip(out_post, 0.0, 1.0),
                             rg, ds.occasion[rows] - 1)
