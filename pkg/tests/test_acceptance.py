"""Acceptance criteria 1 to 9.

Each test prints one ``criterion N: PASS|FAIL`` line (visible even under
output capture) and then asserts. Tolerances are the published ones; nothing
is marked xfail. Run with ``pytest -m acceptance -s``.
"""

import hashlib
import math

import numpy as np
import pytest
import yaml
from scipy import special

from _geweke import format_report, geweke_discrete, geweke_gaussian
from _oracles import tau_density_by_quadrature, tau_instance, truncated_normal_pdf
from probitpanel import binomial_mixture as bm
from probitpanel import gibbs_discrete as gd
from probitpanel import gibbs_gaussian as gg
from probitpanel import groups as G
from probitpanel import simulation as S
from probitpanel import synthetic
from probitpanel.chains import ChainConfig
from probitpanel.cli import main
from probitpanel.data import split_train_holdout, write_csv
from probitpanel.diagnostics import mcse_mean
from probitpanel.predictive import predictive_samples

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return emit


# 1 ---------------------------------------------------------------------------

def test_c1_tau_conditional_quadrature(report):
    g = np.random.default_rng(101)
    worst = 0.0
    for k in range(5):
        m = int(g.integers(1, 4))
        theta, omega, X, beta, person = tau_instance(m, g.integers(1, 4, m), p=2, seed=1000 + k)
        d = gg._Design(X, (omega > 0).astype(np.int8), person, m, 9.0)
        a, s = gg.tau_conditional(theta, omega, d, beta, gg.GaussianHyperParams())
        grid = np.linspace(1e-4, max(a, 0.0) + 6 * math.sqrt(s), 200)
        oracle = tau_density_by_quadrature(grid, theta, omega, X, beta, person)
        worst = max(worst, float(np.abs(oracle - truncated_normal_pdf(grid, a, s)).max()))
    assert report(1, worst < 1e-6, f"max abs density deviation {worst:.2e} (< 1e-6)")


# 2 ---------------------------------------------------------------------------

def test_c2_getting_it_right(report):
    gau = geweke_gaussian(samples=200_000, m=20, p=2, seed=0)
    dis = geweke_discrete(samples=200_000, m=10, p=2, K=3, seed=0)
    print(format_report(gau))
    print(format_report(dis))
    zmax = max(r[4] for r in [*gau.values(), *dis.values()])
    assert report(2, zmax < 3, f"largest |z| over all global statistics {zmax:.2f} (< 3)")


# 3 ---------------------------------------------------------------------------

BETA3 = np.array([0.2, -0.1, 0.1, 0.15, -0.05])


def test_c3_gaussian_recovery(report):
    mu, tau = float(special.ndtri(0.2)), 0.45
    ds, _ = synthetic.gaussian_panel(2000, BETA3, mu, tau, n_max=5, seed=2024)
    ch = gg.run_chain(ds, config=ChainConfig(seed=2024, iterations=20_000, burn_in=5_000))
    est = {"mu": ch.mu.mean(), "tau": ch.tau.mean(),
           **{f"beta_{k + 1}": ch.beta[:, k].mean() for k in range(5)}}
    truth = {"mu": mu, "tau": tau, **{f"beta_{k + 1}": b for k, b in enumerate(BETA3)}}
    err = {k: abs(est[k] - truth[k]) for k in truth}
    rate = float(ds.y.mean())
    for k in truth:
        print(f"{k:8s} truth {truth[k]:+.3f} mean {est[k]:+.3f}")
    ok = max(err.values()) < 0.05 and abs(rate - 0.20) < 0.05
    assert report(3, ok, f"max |mean - truth| {max(err.values()):.3f} (< 0.05), "
                         f"marginal rate {rate:.3f} (0.20 +- 0.05)")


# 4 ---------------------------------------------------------------------------

def test_c4_overfitted_mixture(report):
    ds, _ = synthetic.discrete_panel(1000, [0.3, -0.2], [-1.5, 0.0, 1.0], [0.3, 0.5, 0.2], seed=44)
    ch = gd.run_chain_discrete(ds, gd.DiscreteHyperParams(K=30),
                               ChainConfig(seed=44, iterations=20_000, burn_in=5_000))
    summ = gd.occupancy_summary(ch)
    p = summ["prob_gt_20"]
    assert report(4, p < 0.01, f"P[Q > 20] = {p:.4f} (< 0.01), 20k iterations")


# 5, 6 ------------------------------------------------------------------------

SIM = S.SimulationScenario(seed=0)


def test_c5_landmark_short_panel(report):
    rows = S.interval_length_curve(S.SimulationScenario(seed=0, taus=(0.1,)), n_values=[1])
    L = rows[0]["mean_length"]
    assert report(5, abs(L - 0.06) <= 0.01, f"tau 0.1, n 1: mean length {L:.4f} (0.06 +- 0.01)")


def test_c6_landmark_crossing(report):
    n = S.first_n_below(SIM, 0.45, 0.10)
    ok = n is not None and 60 <= n <= 160
    assert report(6, ok, f"tau 0.45: first n with mean length < 0.10 is {n} (in [60, 160])")


# 7 ---------------------------------------------------------------------------

def test_c7_beta_binomial(report):
    g = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        n = int(g.integers(1, 200))
        a, b = g.uniform(0.05, 50, 2)
        pmf = np.exp(bm.beta_binomial_log_pmf(np.arange(n + 1), n, a, b))
        worst = max(worst, abs(math.fsum(pmf) - 1.0))

    data, weight_prior = bm.BinomialData([0, 3, 1, 5], [1, 5, 2, 6]), [2.0, 0.5]
    hyper = bm.BetaHyper(1.0, 1.0)
    exact = bm.enumerate_label_posterior(data, 2, hyper, weight_prior)[:, 0]
    zmax = 0.0
    for sampler in ("collapsed", "uncollapsed"):
        ch = bm.fit_binomial_mixture(data, 2, hyper, weight_prior,
                                     ChainConfig(seed=3, iterations=60_000, burn_in=1000,
                                                 store_theta=True), sampler=sampler)
        z = ch._block("z")
        for i in range(4):
            ind = (z[:, i] == 1).astype(float)  # labels are stored 1-based
            zmax = max(zmax, abs(ind.mean() - exact[i]) / mcse_mean(ind))
    ok = worst < 1e-10 and zmax < 3
    assert report(7, ok, f"pmf sum error {worst:.1e} (< 1e-10); largest sampler vs "
                         f"enumeration gap {zmax:.2f} MCSE (< 3)")


# 8 ---------------------------------------------------------------------------

def _self_generated_holdout(seed=21):
    """Fit on the training period, then replace holdout outcomes with draws from
    the fitted model: one joint posterior draw per person, then Bernoulli data."""
    cutoff = np.datetime64("2018-01-01")
    ds = synthetic.demo_panel(m=1500, seed=seed, p0=0.207, tau=0.45)
    train, _ = split_train_holdout(ds, cutoff)
    ch = gg.run_chain(train, config=ChainConfig(seed=5, iterations=3000, burn_in=1000,
                                                store_theta=True))
    g = np.random.default_rng(seed)
    pick = g.integers(0, len(ch), ds.m)
    where = {pid: k for k, pid in enumerate(train.person_ids)}
    theta = np.array([ch.theta[pick[i], where[pid]] if pid in where else g.standard_normal()
                      for i, pid in enumerate(ds.person_ids)])
    d = pick[ds.person]
    eta = ch.mu[d] + ch.tau[d] * theta[ds.person] + np.einsum("rk,rk->r", ds.X, ch.beta[d])
    hold = ds.dates > cutoff
    y = ds.y.copy()
    y[hold] = g.random(hold.sum()) < special.ndtr(eta[hold])
    ds = ds.replace(y=y)
    return ds, predictive_samples(ds, ch, max_draws=400), hold


def _manual_midpoints(pstar_hat, groups):
    means = np.array([pstar_hat[groups == k].mean() for k in range(1, 7)])
    return G.RiskGroupScheme(0.5 * (means[1:] + means[:-1]), "psa_midpoint")


def test_c8_calibration(report):
    ds, pred, hold = _self_generated_holdout()
    train = ~hold
    sizes = np.bincount(ds.risk_group[train], minlength=7)[1:]
    schemes = {
        # empirical rates of adjacent groups invert here, so the manual thresholds are
        # midpoints of the groups' training mean P-hat*
        "psa_midpoint": (_manual_midpoints(pred.pstar_hat[train], ds.risk_group[train]),
                         ds.risk_group[hold]),
        "psa_sized": (G.thresholds_equal_count(pred.pstar_hat[train], sizes), None),
        "clustered": (G.thresholds_kmeans_1d(pred.pstar_hat[train], 6).scheme, None),
    }
    ok, parts = True, []
    for name, (s, assigned) in schemes.items():
        rows = G.calibration_table(pred.pstar_hat[hold], pred.p_hat[hold], ds.y[hold], s, assigned)
        good = sum(r.within(2.0) for r in rows)
        wb = G.wrong_bin_matrix(pred.post[hold], pred.pstar_hat[hold], s, assigned)
        filled = wb.counts > 0
        dev = float(np.abs(wb.matrix[filled].sum(axis=1) - 1).max())
        ok &= good >= 5 and dev <= 1e-9
        parts.append(f"{name} {good}/6 within 2 SE, row-sum error {dev:.1e}")
    cs = np.round(np.arange(0.05, 1.0, 0.05), 2)
    hs = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95]
    curve = G.flag_curve(pred.pstar[hold], cs, hs)
    mono = bool(np.all(np.diff(curve, axis=0) <= 0) and np.all(np.diff(curve, axis=1) <= 0))
    ok &= mono
    parts.append(f"flag curve monotone {mono}")
    assert report(8, ok, "; ".join(parts))


# 9 ---------------------------------------------------------------------------

def _digest(d):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(d.iterdir())}


def test_c9_determinism(tmp_path, report):
    write_csv(synthetic.demo_panel(400, seed=3), tmp_path / "panel.csv")
    cfg = {"seed": 9, "model": "gaussian", "output": "unused",
           "data": {"path": "panel.csv", "holdout_after": "2018-01-01",
                    "schema": {"covariates": ["x1", "x2", "x3"], "risk_group": "risk_group"}},
           "chain": {"iterations": 400, "burn_in": 100, "chains": 4},
           "analysis": {"max_draws": 100, "psa_thresholds": [0.1, 0.2, 0.3, 0.45, 0.6]},
           "simulation": {"replicates": 50, "n_max": 100, "n_grid": [1, 10, 100],
                          "cohort": 100}}
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(cfg))
    same, checked = True, []
    for model in ("gaussian", "discrete"):
        cfg["model"] = model
        path.write_text(yaml.safe_dump(cfg))
        runs = {}
        for t in (1, 4):
            base = tmp_path / f"{model}_t{t}"
            fit = str(base / "fit")
            codes = [main(["fit", str(path), "--out", fit, "--threads", str(t)]),
                     main(["predict", str(path), "--fit", fit, "--out", str(base / "predict"),
                           "--threads", str(t)]),
                     main(["analyze", str(path), "--fit", fit, "--out", str(base / "analyze"),
                           "--threads", str(t)]),
                     main(["diagnose", str(path), "--fit", fit, "--out", str(base / "diagnose"),
                           "--threads", str(t)])]
            if model == "gaussian":
                codes.append(main(["simulate", str(path), "--out", str(base / "simulate"),
                                   "--threads", str(t)]))
            assert codes == [0] * len(codes)
            runs[t] = {c.name: _digest(c) for c in sorted(base.iterdir())}
        same &= runs[1] == runs[4]
        checked += [f"{model}/{c}" for c in runs[1]]
    assert report(9, same, f"threads 1 vs 4 byte-identical for {', '.join(checked)}")
