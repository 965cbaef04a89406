import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from probitpanel import groups as G
from probitpanel import synthetic
from probitpanel.chains import ChainConfig
from probitpanel.data import split_train_holdout
from probitpanel.errors import DomainError
from probitpanel.gibbs_gaussian import run_chain
from probitpanel.predictive import predictive_samples

probs = st.floats(0, 1)


# -- schemes and binning -------------------------------------------------------------

def test_scheme_validation():
    for bad in ([0.3, 0.2], [0.0, 0.5], [0.5, 1.0], [0.2, 0.2]):
        with pytest.raises(DomainError):
            G.RiskGroupScheme(bad)
    with pytest.raises(DomainError):
        G.RiskGroupScheme([0.5], tag="other")


def test_bin_conventions():
    s = G.RiskGroupScheme([0.11, 0.15, 0.2, 0.3, 0.4])
    assert s.bin(0.15) == 3  # right-open: threshold goes up
    assert s.bin(0.0) == 1 and s.bin(1.0) == 6
    assert s.bin(0.12) == 2
    with pytest.raises(DomainError):
        s.bin(1.2)


@given(st.lists(st.floats(0.01, 0.99), min_size=1, max_size=8, unique=True), probs, probs)
def test_bin_monotone(cs, a, b):
    s = G.RiskGroupScheme(sorted(cs))
    lo, hi = sorted((a, b))
    assert 1 <= s.bin(lo) <= s.bin(hi) <= s.G


# -- thresholds ------------------------------------------------------------------------

def _groups_with_rates(rates, n=100):
    y, g = [], []
    for k, r in enumerate(rates, start=1):
        ones = int(round(r * n))
        y += [1] * ones + [0] * (n - ones)
        g += [k] * n
    return np.array(y), np.array(g)


def test_psa_midpoint_example():
    y, g = _groups_with_rates([0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
    assert np.allclose(G.thresholds_psa_midpoint(y, g).thresholds, [0.15, 0.25, 0.35, 0.45, 0.55])


def test_psa_midpoint_equal_adjacent_rates():
    y, g = _groups_with_rates([0.1, 0.2, 0.2, 0.4, 0.5, 0.6])
    assert np.allclose(G.thresholds_psa_midpoint(y, g).thresholds, [0.15, 0.2, 0.3, 0.45, 0.55])
    y, g = _groups_with_rates([0.1, 0.2, 0.2, 0.2, 0.5, 0.6])
    with pytest.raises(DomainError, match="manual"):
        G.thresholds_psa_midpoint(y, g)


def test_psa_midpoint_errors():
    y, g = _groups_with_rates([0.1, 0.3, 0.2, 0.4, 0.5, 0.6])
    with pytest.raises(DomainError, match="monotone"):
        G.thresholds_psa_midpoint(y, g)
    y, g = _groups_with_rates([0.1, 0.2])
    with pytest.raises(DomainError, match="empty"):
        G.thresholds_psa_midpoint(y, g, G=3)


def test_equal_count_examples():
    v = [0.1, 0.2, 0.3, 0.4]
    assert np.allclose(G.thresholds_equal_count(v, [2, 2]).thresholds, [0.25])
    assert np.allclose(G.thresholds_equal_count(v, [1, 3]).thresholds, [0.15])
    with pytest.raises(DomainError):
        G.thresholds_equal_count([0.3, 0.3], [1, 1])
    with pytest.raises(DomainError):
        G.thresholds_equal_count(v, [1, 1])


def test_equal_count_ties_move_boundary():
    s = G.thresholds_equal_count([0.1, 0.2, 0.2, 0.2, 0.5], [2, 3])
    assert np.allclose(s.thresholds, [0.35])


def test_equal_count_recount():
    g = np.random.default_rng(1)
    v = g.beta(2, 6, 1000)
    sizes = [300, 250, 170, 130, 90, 60]
    s = G.thresholds_equal_count(v, sizes)
    assert np.bincount(s.bin(v), minlength=7)[1:].tolist() == sizes


def test_kmeans_examples():
    res = G.thresholds_kmeans_1d([0.1, 0.2, 0.9], 2)
    assert np.allclose(res.scheme.thresholds, [0.55])
    assert res.objective == pytest.approx(0.005)
    assert G.thresholds_kmeans_1d([0.1, 0.1, 0.3, 0.5], 3).objective == 0.0
    with pytest.raises(DomainError):
        G.thresholds_kmeans_1d([0.1, 0.1, 0.2], 3)


@given(st.lists(st.floats(0.001, 0.999), min_size=3, max_size=12), st.integers(1, 4))
def test_kmeans_matches_brute_force(values, K):
    if len(set(values)) < K:
        return
    obj = G.kmeans_1d(values, K)[0]
    assert obj == pytest.approx(G.kmeans_brute_force(values, K), abs=1e-12)


def _quadratic_dp(values, K):
    # textbook O(K n^2) dynamic program over sorted values
    v = np.sort(np.asarray(values))
    n = v.size
    c1 = np.concatenate([[0], np.cumsum(v)])
    c2 = np.concatenate([[0], np.cumsum(v * v)])
    cost = lambda i, j: c2[j] - c2[i] - (c1[j] - c1[i]) ** 2 / (j - i)
    D = np.full((K + 1, n + 1), np.inf)
    D[0, 0] = 0.0
    for k in range(1, K + 1):
        for j in range(k, n + 1):
            D[k, j] = min(D[k - 1, i] + cost(i, j) for i in range(k - 1, j))
    return D[K, n]


def test_kmeans_200_values():
    v = np.random.default_rng(2).beta(2, 5, 200)
    assert G.kmeans_1d(v, 6)[0] == pytest.approx(_quadratic_dp(v, 6), rel=1e-12, abs=1e-14)


# -- calibration / wrong bin ----------------------------------------------------------------

def test_calibration_all_zero_group_flagged():
    s = G.RiskGroupScheme([0.5])
    rows = G.calibration_table([0.1, 0.2, 0.7], [0.1, 0.2, 0.7], [0, 0, 1], s)
    assert rows[0].rate == 0 and (rows[0].ci_lower, rows[0].ci_upper) == (0, 0)
    assert rows[0].flag == "degenerate"


def test_calibration_empty_group_and_single_group():
    rows = G.calibration_table([0.1, 0.2], [0.1, 0.2], [0, 1], G.RiskGroupScheme([0.5]))
    assert rows[1].size == 0 and rows[1].flag == "empty"
    one = G.calibration_table([0.1, 0.2, 0.6], [0.1, 0.2, 0.6], [0, 1, 1], G.RiskGroupScheme([]))
    assert len(one) == 1 and one[0].rate == pytest.approx(2 / 3)


def test_calibrated_model_within_two_se():
    g = np.random.default_rng(3)
    p = g.beta(2, 6, 6000)
    y = g.random(p.size) < p
    s = G.thresholds_equal_count(p, [2000, 1500, 1000, 800, 400, 300])
    rows = G.calibration_table(p, p, y, s)
    assert sum(r.within(2.0) for r in rows) >= 5
    assert sum(r.size for r in rows) == p.size
    assert all(r.ci_lower <= r.rate <= r.ci_upper for r in rows)


def test_wrong_bin_point_mass_is_identity():
    s = G.RiskGroupScheme([0.2, 0.5])
    p = np.array([0.1, 0.3, 0.7, 0.4])
    res = G.wrong_bin_matrix(np.repeat(p[:, None], 50, axis=1), p, s)
    assert np.array_equal(res.matrix, np.eye(3))


@given(st.integers(0, 2**32 - 1))
def test_wrong_bin_rows_sum_to_one(seed):
    g = np.random.default_rng(seed)
    samples = g.beta(2, 5, (40, 30))
    s = G.RiskGroupScheme([0.15, 0.3, 0.45])
    res = G.wrong_bin_matrix(samples, samples.mean(axis=1), s)
    ok = res.counts > 0
    assert np.allclose(res.matrix[ok].sum(axis=1), 1, atol=1e-9)
    assert np.all(np.isnan(res.matrix[~ok]))


# -- intervals and flagging -------------------------------------------------------------------

def test_interval_report_constant_width():
    lo = np.linspace(0, 0.5, 20)
    rep = G.interval_report(lo, lo + 0.1, lo + 0.05, np.arange(20) % 3 + 1, np.arange(20) % 4)
    assert np.allclose(rep.mean_length, 0.1)


def test_threshold_flags():
    assert G.excludes_threshold([0.26], [0.4]).tolist() == [True]
    assert G.excludes_threshold([0.2], [0.3]).tolist() == [False]


def test_median_split_order():
    lo = np.array([0.1, 0.05, 0.5, 0.4])
    hi = np.array([0.3, 0.2, 0.9, 0.7])
    med = np.array([0.2, 0.1, 0.7, 0.55])
    assert G.median_split_order(lo, hi, med).tolist() == [1, 0, 3, 2]


def test_flag_examples():
    s = np.random.default_rng(4).beta(2, 5, (100, 50))
    assert G.flag_by_certainty(s, 0.3, 0.0)[1] == 1.0
    assert G.flag_by_certainty(s, 0.0, 0.99)[1] == 1.0
    with pytest.raises(DomainError):
        G.flag_by_certainty(s, 1.5, 0.5)


@given(st.integers(0, 2**32 - 1))
def test_flag_curve_monotone(seed):
    s = np.random.default_rng(seed).beta(2, 5, (60, 40))
    cs = np.linspace(0, 1, 21)
    hs = np.linspace(0, 1, 11)
    curve = G.flag_curve(s, cs, hs)
    assert np.all(np.diff(curve, axis=0) <= 0) and np.all(np.diff(curve, axis=1) <= 0)


def test_csv_exports(tmp_path):
    s = G.RiskGroupScheme([0.5])
    G.write_calibration_csv(G.calibration_table([0.1, 0.7], [0.1, 0.7], [0, 1], s), tmp_path / "c.csv", "custom")
    G.write_wrong_bin_csv(G.wrong_bin_matrix([[0.1, 0.2], [0.6, 0.7]], [0.15, 0.65], s), tmp_path / "w.csv")
    assert (tmp_path / "c.csv").read_text().splitlines()[0].startswith("scheme")
    assert len((tmp_path / "w.csv").read_text().splitlines()) == 3


# -- realistic synthetic ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def realistic_panel():
    ds = synthetic.demo_panel(m=1500, seed=21, p0=0.207, tau=0.45)
    train, hold = split_train_holdout(ds, "2018-01-01")
    ch = run_chain(train, config=ChainConfig(seed=5, iterations=3000, burn_in=1000))
    pred = predictive_samples(ds, ch, max_draws=400)
    is_hold = ds.dates > np.datetime64("2018-01-01")
    return ds, pred, is_hold


@pytest.mark.slow
def test_realistic_panel_group_one_range(realistic_panel):
    ds, pred, hold = realistic_panel
    s = G.thresholds_psa_midpoint(ds.y[hold], ds.risk_group[hold], G=6)
    print("psa midpoint thresholds", s.thresholds)
    assert abs(s.thresholds[0] - 0.11) < 0.05


@pytest.mark.slow
def test_realistic_panel_wrong_bin_diagonals(realistic_panel):
    ds, pred, hold = realistic_panel
    train = ~hold
    sizes = np.bincount(ds.risk_group[train], minlength=7)[1:]
    schemes = {
        "psa_midpoint": (G.thresholds_psa_midpoint(ds.y[hold], ds.risk_group[hold], G=6), ds.risk_group[hold]),
        "psa_sized": (G.thresholds_equal_count(pred.pstar_hat[train], sizes), None),
        "clustered": (G.thresholds_kmeans_1d(pred.pstar_hat[train], 6).scheme, None),
    }
    for (name, (s, assigned)), target in zip(schemes.items(), (0.25, 0.32, 0.39)):
        res = G.wrong_bin_matrix(pred.post[hold], pred.pstar_hat[hold], s, assigned)
        print(name, res.correct_bin_probability)
        assert abs(res.correct_bin_probability - target) <= 0.1


@pytest.mark.slow
def test_realistic_panel_flags_almost_no_one(realistic_panel):
    _, pred, hold = realistic_panel
    assert G.flag_by_certainty(pred.pstar[hold], 0.4, 0.9)[1] < 0.02
