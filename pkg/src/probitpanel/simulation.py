"""Simulation studies of individual predictive intervals with globals fixed.

The outcome probability of a person is ``P = Phi(a + tau * theta)`` with
``Phi(a) = p0`` and ``theta ~ N(0, 1)``. Given n Bernoulli outcomes the
posterior of theta is computed on a quadrature grid; since P is monotone in
theta, interval endpoints of P are transformed theta quantiles.
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
from pathlib import Path

import numpy as np
from scipy import special

from . import rng as R
from .errors import DomainError
from .predictive import ThetaGrid

DEFAULT_N = (1, 2, 5, 10, 20, 50, 100, 200, 500, 1000)
DEFAULT_TAU = (0.1, 0.2, 0.3, 0.45, 0.6)
SIGNAL_STRATA = {"low": (0.05, 0.15, 0.25), "high": (0.01, 0.25, 0.50)}
NOISE_TAU = (0.45, 0.10)


@dataclasses.dataclass(frozen=True)
class SimulationScenario:
    p0: float = 0.2
    taus: tuple = DEFAULT_TAU
    replicates: int = 1000
    n_max: int = 1000
    n_grid: tuple = DEFAULT_N
    level: float = 0.95
    seed: int = 0
    grid: ThetaGrid = ThetaGrid(-8.0, 8.0, 4001)

    def __post_init__(self):
        if not 0 < self.p0 < 1:
            raise DomainError("p0 must lie in (0, 1)")
        if self.replicates < 1:
            raise DomainError("replicates must be at least 1")
        if any(t < 0 for t in self.taus):
            raise DomainError("tau must be nonnegative")
        if any(n < 1 or n > self.n_max for n in self.n_grid):
            raise DomainError("n grid points must lie in 1..n_max")
        if not 0 < self.level < 1:
            raise DomainError("level must lie in (0, 1)")


def bernoulli_replicates(p0: float, replicates: int, n_max: int, seed: int) -> np.ndarray:
    """(replicates, n_max) outcome matrix; row r is a keyed stream, so a
    shorter prefix of n outcomes is shared across n and tau."""
    k0, k1 = R.split_seed(seed)
    blocks = np.arange((n_max + 1) // 2, dtype=np.uint64)
    out = np.empty((replicates, n_max), dtype=np.int8)
    for r in range(replicates):
        a, b = R.uniform_block_np(k0, k1, np.uint64(r), np.uint64(0),
                                  np.uint64(R.lane(0, R.STEP_DATA)), blocks)
        u = np.column_stack([a, b]).ravel()[:n_max]
        out[r] = u < p0
    return out


def interval_from_counts(a: float, tau: float, n, s, grid: ThetaGrid, level: float = 0.95):
    """Equal-tailed interval of P given ``s`` successes in ``n`` trials.

    ``n`` and ``s`` are arrays of equal shape; returns (lower, upper, median).
    """
    n = np.atleast_1d(np.asarray(n, dtype=float))
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if tau == 0:
        p = special.ndtr(a)
        full = np.full(n.shape, p)
        return full, full.copy(), full.copy()
    nodes = grid.nodes
    eta = a + tau * nodes
    lp = (-0.5 * nodes ** 2)[None, :] + s[:, None] * special.log_ndtr(eta)[None, :] \
        + (n - s)[:, None] * special.log_ndtr(-eta)[None, :]
    f = np.exp(lp - lp.max(axis=1, keepdims=True))
    h = np.diff(nodes)
    cdf = np.concatenate([np.zeros((n.size, 1)),
                          np.cumsum(0.5 * h * (f[:, 1:] + f[:, :-1]), axis=1)], axis=1)
    cdf /= cdf[:, -1:]
    q = (0.5 * (1 - level), 0.5, 0.5 * (1 + level))
    th = np.array([[np.interp(qq, c, nodes) for qq in q] for c in cdf])
    P = special.ndtr(a + tau * th)
    return P[:, 0], P[:, 2], P[:, 1]


def _length_table(a, tau, counts, n_values, grid, level):
    # counts: (R, len(n_values)) successes; cache over distinct (n, s)
    out = np.empty(counts.shape)
    for j, n in enumerate(n_values):
        s_vals, inv = np.unique(counts[:, j], return_inverse=True)
        lo, hi, _ = interval_from_counts(a, tau, np.full(s_vals.size, n), s_vals, grid, level)
        out[:, j] = (hi - lo)[inv]
    return out


def interval_length_curve(scenario: SimulationScenario, n_values=None) -> list[dict]:
    """Mean interval length over replicates for every (tau, n).

    Returns rows with keys ``tau``, ``n``, ``mean_length``, ``mcse``.
    """
    n_values = np.asarray(scenario.n_grid if n_values is None else n_values, dtype=int)
    ys = bernoulli_replicates(scenario.p0, scenario.replicates, scenario.n_max, scenario.seed)
    cum = np.cumsum(ys, axis=1, dtype=np.int64)
    counts = cum[:, n_values - 1]
    a = float(special.ndtri(scenario.p0))
    rows = []
    for tau in scenario.taus:
        lengths = _length_table(a, float(tau), counts, n_values, scenario.grid, scenario.level)
        for j, n in enumerate(n_values):
            col = lengths[:, j]
            mcse = col.std(ddof=1) / np.sqrt(col.size) if col.size > 1 else 0.0
            rows.append({"tau": float(tau), "n": int(n), "mean_length": float(col.mean()),
                         "mcse": float(mcse)})
    return rows


def first_n_below(scenario: SimulationScenario, tau: float, cutoff: float = 0.10):
    """Smallest n in 1..n_max at which the mean interval length is below ``cutoff``.

    Returns None if it never drops below.
    """
    sc = dataclasses.replace(scenario, taus=(tau,))
    rows = interval_length_curve(sc, n_values=np.arange(1, scenario.n_max + 1))
    for r in rows:
        if r["mean_length"] < cutoff:
            return r["n"]
    return None


def write_curve_csv(rows: list[dict], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tau", "n", "mean_length", "mcse"])
        for r in rows:
            w.writerow([repr(r["tau"]), r["n"], repr(r["mean_length"]), repr(r["mcse"])])


# ---------------------------------------------------------------------------
# signal / noise scenarios
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True, eq=False)
class SignalNoiseResult:
    signal: str
    tau: float
    stratum: np.ndarray  # per individual, the stratum probability Phi(x beta)
    y: np.ndarray
    p_true: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    median: np.ndarray
    pair_overlap: dict  # (p_a, p_b) -> fraction of cross-stratum pairs overlapping

    @property
    def overall_overlap(self) -> float:
        """Overlap fraction over all cross-stratum pairs."""
        tot = num = 0.0
        sizes = {s: int(np.sum(self.stratum == s)) for s in np.unique(self.stratum)}
        for (sa, sb), frac in self.pair_overlap.items():
            w = sizes[sa] * sizes[sb]
            tot += w
            num += w * frac
        return num / tot if tot else float("nan")


def _overlap_fraction(la, ua, lb, ub) -> float:
    # fraction of pairs (i in a, k in b) with intersecting intervals
    ov = (la[:, None] <= ub[None, :]) & (lb[None, :] <= ua[:, None])
    return float(ov.mean())


def signal_noise_intervals(signal: str, tau: float, cohort: int = 1000, seed: int = 0,
                           level: float = 0.95, grid: ThetaGrid | None = None) -> SignalNoiseResult:
    """One occasion per individual in each of three strata; 95% intervals of P.

    Individuals draw ``theta ~ N(0, 1)`` and ``y ~ Bern(Phi(a + tau theta))``
    with ``Phi(a)`` the stratum probability.
    """
    if signal not in SIGNAL_STRATA:
        raise DomainError(f"signal must be one of {sorted(SIGNAL_STRATA)}")
    grid = grid or ThetaGrid(-8.0, 8.0, 4001)
    strata = SIGNAL_STRATA[signal]
    k0, k1 = R.split_seed(seed)
    cols = {k: [] for k in ("stratum", "y", "p_true", "lower", "upper", "median")}
    for si, p in enumerate(strata):
        a = float(special.ndtri(p))
        ent = np.arange(cohort, dtype=np.uint64)
        u1, u2 = R.uniform_block_np(k0, k1, ent, np.uint64(si), np.uint64(R.lane(0, R.STEP_DATA)), np.uint64(0))
        theta = special.ndtri(u1)
        p_true = special.ndtr(a + tau * theta)
        y = (u2 < p_true).astype(np.int8)
        lo, hi, med = interval_from_counts(a, tau, np.ones(2), np.array([0.0, 1.0]), grid, level)
        cols["stratum"].append(np.full(cohort, p))
        cols["y"].append(y)
        cols["p_true"].append(p_true)
        cols["lower"].append(lo[y])
        cols["upper"].append(hi[y])
        cols["median"].append(med[y])
    c = {k: np.concatenate(v) for k, v in cols.items()}
    overlap = {}
    for sa, sb in itertools.combinations(strata, 2):
        A = c["stratum"] == sa
        B = c["stratum"] == sb
        overlap[(sa, sb)] = _overlap_fraction(c["lower"][A], c["upper"][A], c["lower"][B], c["upper"][B])
    return SignalNoiseResult(signal, float(tau), c["stratum"], c["y"], c["p_true"], c["lower"],
                             c["upper"], c["median"], overlap)


def write_signal_noise_csv(results: list[SignalNoiseResult], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["signal", "tau", "stratum", "individual", "y", "p_true", "p_lower",
                    "p_median", "p_upper"])
        for res in results:
            for i in range(res.y.size):
                w.writerow([res.signal, repr(res.tau), repr(float(res.stratum[i])), i, int(res.y[i]),
                            repr(float(res.p_true[i])), repr(float(res.lower[i])),
                            repr(float(res.median[i])), repr(float(res.upper[i]))])


def write_overlap_csv(results: list[SignalNoiseResult], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["signal", "tau", "stratum_a", "stratum_b", "overlap_fraction"])
        for res in results:
            for (sa, sb), f in res.pair_overlap.items():
                w.writerow([res.signal, repr(res.tau), repr(sa), repr(sb), repr(f)])
            w.writerow([res.signal, repr(res.tau), "all", "all", repr(res.overall_overlap)])
