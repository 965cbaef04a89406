"""Risk-group schemes and the group-level and individual-level analyses.

A scheme is an increasing threshold vector ``c`` on the probability scale;
group k holds estimates with ``c_{k-1} <= estimate < c_k`` (``c_0 = 0``,
the top group closed at 1).
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
import math
from pathlib import Path

import numpy as np

from ._backend import njit
from .errors import DomainError
from .predictive import PredictiveSummary

SCHEME_TAGS = ("psa_midpoint", "psa_sized", "clustered", "custom")
Z95 = 1.959963984540054


@dataclasses.dataclass(frozen=True, eq=False)
class RiskGroupScheme:
    thresholds: np.ndarray
    tag: str = "custom"

    def __post_init__(self):
        c = np.asarray(self.thresholds, dtype=float).ravel()
        if np.any(~np.isfinite(c)) or np.any(c <= 0) or np.any(c >= 1):
            raise DomainError("thresholds must lie in (0, 1)")
        if np.any(np.diff(c) <= 0):
            raise DomainError("thresholds must be strictly increasing")
        if self.tag not in SCHEME_TAGS:
            raise DomainError(f"unknown scheme tag {self.tag!r}")
        c.setflags(write=False)
        object.__setattr__(self, "thresholds", c)

    @property
    def G(self) -> int:
        return int(self.thresholds.size + 1)

    @property
    def labels(self) -> np.ndarray:
        return np.arange(1, self.G + 1)

    def bin(self, estimate):
        return bin_estimates(estimate, self)

    def bounds(self) -> list[tuple[float, float]]:
        edges = np.concatenate([[0.0], self.thresholds, [1.0]])
        return list(zip(edges[:-1].tolist(), edges[1:].tolist()))

    def to_dict(self) -> dict:
        return {"tag": self.tag, "thresholds": self.thresholds.tolist()}


def bin_estimates(estimate, scheme: RiskGroupScheme):
    """Group label(s) 1..G for point estimates in [0, 1]."""
    e = np.asarray(estimate, dtype=float)
    if np.any(~(e >= 0)) or np.any(~(e <= 1)):
        raise DomainError("estimates must lie in [0, 1]")
    out = np.searchsorted(scheme.thresholds, e, side="right") + 1
    return int(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# threshold builders
# ---------------------------------------------------------------------------


def group_rates(y, groups, G: int | None = None):
    """Empirical outcome rate and size of each external group 1..G."""
    y = np.asarray(y, dtype=float)
    groups = np.asarray(groups, dtype=np.int64)
    G = int(groups.max()) if G is None else G
    n = np.bincount(groups, minlength=G + 1)[1:G + 1]
    s = np.bincount(groups, weights=y, minlength=G + 1)[1:G + 1]
    with np.errstate(invalid="ignore", divide="ignore"):
        return s / n, n


def thresholds_psa_midpoint(y, groups, G: int | None = None) -> RiskGroupScheme:
    """Midpoints between empirical rates of adjacent external groups.

    Raises
    ------
    DomainError
        If a group is empty, the rates decrease anywhere, or the midpoints are
        not strictly increasing. Supply manual thresholds in those cases.
    """
    rates, n = group_rates(y, groups, G)
    if np.any(n == 0):
        raise DomainError("an external risk group is empty; supply manual thresholds")
    if np.any(np.diff(rates) < 0):
        raise DomainError(f"empirical group rates are not monotone {np.round(rates, 4).tolist()}; "
                          "supply manual thresholds")
    c = 0.5 * (rates[1:] + rates[:-1])
    try:
        return RiskGroupScheme(c, "psa_midpoint")
    except DomainError as exc:
        raise DomainError(f"midpoint thresholds are degenerate ({exc}); supply manual thresholds") from None


def thresholds_equal_count(values, sizes) -> RiskGroupScheme:
    """Thresholds giving groups with the reference sizes.

    Each threshold is the midpoint of the two order statistics around a
    cumulative-size boundary. If those are tied, the boundary moves past the
    last tied value.
    """
    v = np.sort(np.asarray(values, dtype=float))
    sizes = np.asarray(sizes, dtype=np.int64)
    if sizes.sum() != v.size or np.any(sizes < 0):
        raise DomainError(f"reference sizes sum to {sizes.sum()}, expected {v.size}")
    if v.size == 0 or v[0] == v[-1]:
        raise DomainError("all values are equal; equal-count thresholds are undefined")
    c = []
    for b in np.cumsum(sizes)[:-1]:
        if b <= 0 or b >= v.size:
            raise DomainError("a reference group size leaves an empty boundary")
        if v[b - 1] == v[b]:
            b = int(np.searchsorted(v, v[b - 1], side="right"))
            if b >= v.size:
                raise DomainError("ties reach the top of the distribution")
        c.append(0.5 * (v[b - 1] + v[b]))
    return RiskGroupScheme(np.array(c), "psa_sized")


@njit(cache=True)
def _seg_cost(cw, cwx, cwx2, i, j):
    # weighted within-segment sum of squares of points i..j-1
    w = cw[j] - cw[i]
    s = cwx[j] - cwx[i]
    c = cwx2[j] - cwx2[i] - s * s / w
    return c if c > 0.0 else 0.0


@njit(cache=True)
def _kmeans_dp(x, w, K):
    # divide-and-conquer DP; valid since the cost satisfies the quadrangle inequality
    n = x.shape[0]
    cw = np.zeros(n + 1)
    cwx = np.zeros(n + 1)
    cwx2 = np.zeros(n + 1)
    for t in range(n):
        cw[t + 1] = cw[t] + w[t]
        cwx[t + 1] = cwx[t] + w[t] * x[t]
        cwx2[t + 1] = cwx2[t] + w[t] * x[t] * x[t]
    cost = np.full((K + 1, n + 1), np.inf)
    arg = np.zeros((K + 1, n + 1), dtype=np.int64)
    for j in range(1, n + 1):
        cost[1, j] = _seg_cost(cw, cwx, cwx2, 0, j)
    stack = np.empty((4 * n + 8, 4), dtype=np.int64)
    for k in range(2, K + 1):
        # solve cost[k, j] for j in [k, n], split s in [k-1, j-1]
        top = 0
        stack[0, 0] = k
        stack[0, 1] = n
        stack[0, 2] = k - 1
        stack[0, 3] = n - 1
        top = 1
        while top > 0:
            top -= 1
            lo = stack[top, 0]
            hi = stack[top, 1]
            olo = stack[top, 2]
            ohi = stack[top, 3]
            if lo > hi:
                continue
            mid = (lo + hi) // 2
            best = np.inf
            bs = olo
            for s in range(olo, min(ohi, mid - 1) + 1):
                c = cost[k - 1, s] + _seg_cost(cw, cwx, cwx2, s, mid)
                if c < best:
                    best = c
                    bs = s
            cost[k, mid] = best
            arg[k, mid] = bs
            stack[top, 0] = lo
            stack[top, 1] = mid - 1
            stack[top, 2] = olo
            stack[top, 3] = bs
            top += 1
            stack[top, 0] = mid + 1
            stack[top, 1] = hi
            stack[top, 2] = bs
            stack[top, 3] = ohi
            top += 1
    starts = np.zeros(K, dtype=np.int64)
    j = n
    for k in range(K, 1, -1):
        s = arg[k, j]
        starts[k - 1] = s
        j = s
    return cost[K, n], starts


@dataclasses.dataclass(frozen=True)
class KMeansResult:
    scheme: RiskGroupScheme
    objective: float
    centers: np.ndarray


def kmeans_1d(values, K: int = 6):
    """Globally optimal 1-D k-means on distinct values weighted by multiplicity.

    Returns the within-cluster sum of squares and, per cluster, the index of
    its first distinct value.
    """
    x, w = np.unique(np.asarray(values, dtype=float), return_counts=True)
    if K < 1 or x.size < K:
        raise DomainError(f"need at least K={K} distinct values, got {x.size}")
    obj, starts = _kmeans_dp(x, w.astype(float), int(K))
    return float(obj), starts, x, w


def thresholds_kmeans_1d(values, K: int = 6) -> KMeansResult:
    """Thresholds at midpoints between adjacent optimal 1-D k-means clusters."""
    obj, starts, x, w = kmeans_1d(values, K)
    ends = np.concatenate([starts[1:], [x.size]])
    c = 0.5 * (x[starts[1:] - 1] + x[starts[1:]])
    centers = np.array([np.average(x[a:b], weights=w[a:b]) for a, b in zip(starts, ends)])
    return KMeansResult(RiskGroupScheme(c, "clustered"), obj, centers)


def kmeans_brute_force(values, K: int) -> float:
    """Minimal within-cluster SS over all contiguous partitions of the sorted values."""
    v = np.sort(np.asarray(values, dtype=float))
    best = math.inf
    for cuts in itertools.combinations(range(1, v.size), K - 1):
        parts = np.split(v, cuts)
        best = min(best, sum(float(((p - p.mean()) ** 2).sum()) for p in parts))
    return best


# ---------------------------------------------------------------------------
# calibration and wrong-bin probabilities
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class CalibrationRow:
    group: int
    size: int
    mean_pstar: float
    mean_p: float
    rate: float
    ci_lower: float
    ci_upper: float
    flag: str = ""  # "empty" or "degenerate" when the interval is undefined or zero-width

    def binomial_se(self) -> float:
        """Binomial standard error of the rate at the predicted probability."""
        if self.size == 0:
            return math.nan
        return math.sqrt(self.mean_pstar * (1.0 - self.mean_pstar) / self.size)

    def within(self, k: float = 2.0) -> bool:
        return self.size > 0 and abs(self.mean_pstar - self.rate) < k * self.binomial_se()


def calibration_table(pstar_hat, p_hat, y, scheme: RiskGroupScheme,
                      assigned=None) -> list[CalibrationRow]:
    """Per-group mean P-hat*, mean P-hat, empirical rate and 95% normal CI.

    ``assigned`` overrides the group of each occasion (by default the bin of
    its P-hat*).
    """
    pstar_hat = np.asarray(pstar_hat, dtype=float)
    p_hat = np.asarray(p_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    g = bin_estimates(pstar_hat, scheme) if assigned is None else np.asarray(assigned)
    rows = []
    for k in scheme.labels:
        sel = g == k
        n = int(sel.sum())
        if n == 0:
            rows.append(CalibrationRow(int(k), 0, math.nan, math.nan, math.nan, math.nan,
                                       math.nan, "empty"))
            continue
        r = float(y[sel].mean())
        half = Z95 * math.sqrt(r * (1 - r) / n)
        rows.append(CalibrationRow(int(k), n, float(pstar_hat[sel].mean()), float(p_hat[sel].mean()),
                                   r, max(0.0, r - half), min(1.0, r + half),
                                   "degenerate" if half == 0 else ""))
    return rows


@dataclasses.dataclass(frozen=True, eq=False)
class WrongBinResult:
    matrix: np.ndarray  # (G, G); row k = assigned group, column = bin of P
    counts: np.ndarray  # occasions assigned to each group
    flags: tuple

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.matrix)

    @property
    def correct_bin_probability(self) -> float:
        """Occasion-weighted mean posterior probability of the assigned bin."""
        ok = self.counts > 0
        return float(np.sum(self.counts[ok] * self.diagonal[ok]) / self.counts[ok].sum())


def wrong_bin_matrix(post_samples, pstar_hat, scheme: RiskGroupScheme,
                     assigned=None) -> WrongBinResult:
    """Average posterior probability that P_ij falls in each bin, by assigned group."""
    post_samples = np.atleast_2d(np.asarray(post_samples, dtype=float))
    g = bin_estimates(np.asarray(pstar_hat, dtype=float), scheme) if assigned is None else np.asarray(assigned)
    G = scheme.G
    sample_bins = bin_estimates(post_samples, scheme)
    frac = np.stack([(sample_bins == k).mean(axis=1) for k in scheme.labels], axis=1)
    mat = np.full((G, G), np.nan)
    counts = np.zeros(G, dtype=np.int64)
    flags = []
    for k in scheme.labels:
        sel = g == k
        counts[k - 1] = sel.sum()
        if counts[k - 1] == 0:
            flags.append(f"group {k} empty")
            continue
        mat[k - 1] = frac[sel].mean(axis=0)
    return WrongBinResult(mat, counts, tuple(flags))


# ---------------------------------------------------------------------------
# individual-level analyses
# ---------------------------------------------------------------------------


def median_split_order(lower, upper, median) -> np.ndarray:
    """Display order: intervals whose median is in the bottom half sorted by
    upper end, the rest sorted by lower end."""
    lower, upper, median = (np.asarray(a, dtype=float) for a in (lower, upper, median))
    bottom = median <= np.median(median)
    idx = np.arange(lower.size)
    a = idx[bottom][np.argsort(upper[bottom], kind="stable")]
    b = idx[~bottom][np.argsort(lower[~bottom], kind="stable")]
    return np.concatenate([a, b])


def excludes_threshold(lower, upper, threshold: float = 0.25) -> np.ndarray:
    """True where the interval lies entirely on one side of ``threshold``."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    return (lower > threshold) | (upper < threshold)


@dataclasses.dataclass(frozen=True, eq=False)
class IntervalReport:
    groups: np.ndarray  # row labels of the length table
    counts: np.ndarray  # column labels (prior observation counts)
    mean_length: np.ndarray  # (len(groups), len(counts)); NaN where empty
    n: np.ndarray
    order: np.ndarray  # display order for the interval export
    flagged: np.ndarray  # per interval, does not cross the threshold

    @property
    def flagged_fraction(self) -> float:
        return float(self.flagged.mean()) if self.flagged.size else math.nan


def interval_report(lower, upper, median, groups, prior_counts,
                    threshold: float = 0.25) -> IntervalReport:
    """Mean interval length by group x prior-observation count, plus the
    sorted, threshold-flagged interval listing."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    groups = np.asarray(groups)
    prior_counts = np.asarray(prior_counts)
    length = upper - lower
    gl = np.unique(groups)
    cl = np.unique(prior_counts)
    tab = np.full((gl.size, cl.size), np.nan)
    n = np.zeros((gl.size, cl.size), dtype=np.int64)
    for a, gv in enumerate(gl):
        for b, cv in enumerate(cl):
            sel = (groups == gv) & (prior_counts == cv)
            n[a, b] = sel.sum()
            if n[a, b]:
                tab[a, b] = length[sel].mean()
    return IntervalReport(gl, cl, tab, n, median_split_order(lower, upper, median),
                          excludes_threshold(lower, upper, threshold))


def certainty_fraction(pstar_samples, c: float) -> np.ndarray:
    """Per occasion, the fraction of P* samples exceeding ``c``."""
    return (np.asarray(pstar_samples) > c).mean(axis=1)


def flag_by_certainty(pstar_samples, c: float, h: float):
    """Occasions whose posterior probability of P* > c is at least h.

    Returns the boolean flag vector and the flagged proportion.
    """
    if not (0 <= c <= 1 and 0 <= h <= 1):
        raise DomainError("c and h must lie in [0, 1]")
    flags = certainty_fraction(pstar_samples, c) >= h
    return flags, float(flags.mean()) if flags.size else math.nan


def flag_curve(pstar_samples, cs, hs) -> np.ndarray:
    """Flagged proportion on a (len(hs), len(cs)) grid."""
    frac = [certainty_fraction(pstar_samples, c) for c in cs]
    return np.array([[float((f >= h).mean()) for f in frac] for h in hs])


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------


def _write(path, header, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def write_calibration_csv(rows: list[CalibrationRow], path, scheme: str = "") -> None:
    header = ["scheme", *(f.name for f in dataclasses.fields(CalibrationRow))]
    _write(path, header, [[scheme, *dataclasses.astuple(r)] for r in rows])


def write_wrong_bin_csv(res: WrongBinResult, path, scheme: str = "") -> None:
    G = res.matrix.shape[0]
    header = ["scheme", "assigned_group", "count", *(f"bin_{k}" for k in range(1, G + 1))]
    _write(path, header, [[scheme, k + 1, int(res.counts[k]), *res.matrix[k].tolist()]
                          for k in range(G)])


def write_interval_csv(summary: PredictiveSummary, report: IntervalReport, path,
                       level: float = 0.95) -> None:
    lo, hi = summary.interval(level)
    med = summary.p_median
    header = ["rank", "row", "person", "occasion", "y", "risk_group", "prior_count",
              "p_median", "p_lower", "p_upper", "excludes_threshold"]
    rg = summary.risk_group if summary.risk_group is not None else np.zeros(len(summary), int)
    pc = summary.prior_count if summary.prior_count is not None else np.zeros(len(summary), int)
    rows = [[rank, int(summary.rows[t]), int(summary.person[t]), int(summary.occasion[t]),
             int(summary.y[t]), int(rg[t]), int(pc[t]), float(med[t]), float(lo[t]), float(hi[t]),
             int(report.flagged[t])] for rank, t in enumerate(report.order)]
    _write(path, header, rows)


def write_interval_table_csv(report: IntervalReport, path) -> None:
    rows = [[int(g), int(c), int(report.n[a, b]), float(report.mean_length[a, b])]
            for a, g in enumerate(report.groups) for b, c in enumerate(report.counts)]
    _write(path, ["group", "prior_count", "n", "mean_length"], rows)


def write_flag_curve_csv(cs, hs, grid, path) -> None:
    rows = [[float(h), float(c), float(grid[a, b])] for a, h in enumerate(hs) for b, c in enumerate(cs)]
    _write(path, ["h", "c", "proportion_flagged"], rows)
