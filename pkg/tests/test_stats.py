import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats as sps

from probitpanel import stats as S
from probitpanel.errors import DomainError
from probitpanel.rng import RngStream

POS, NEG = S.TruncationSide.POSITIVE, S.TruncationSide.NONPOSITIVE


# -- normal CDF / quantile ---------------------------------------------------

def test_cdf_symmetry():
    assert S.std_normal_cdf(0.0) == 0.5
    assert S.std_normal_cdf(1.7) + S.std_normal_cdf(-1.7) == pytest.approx(1.0, abs=1e-15)


def test_cdf_quadrature_oracle():
    # integrate the density directly, no erf involved
    val, _ = integrate.quad(lambda t: math.exp(-t * t / 2) / math.sqrt(2 * math.pi), -np.inf, 1.959964,
                            epsabs=1e-13, limit=200)
    assert val == pytest.approx(0.975, abs=1e-6)
    assert S.std_normal_cdf(1.959964) == pytest.approx(val, abs=1e-12)


@given(st.floats(-30, 30))
def test_cdf_matches_erf_definition(x):
    with mpmath.workdps(40):
        ref = float(mpmath.mpf(0.5) * mpmath.erfc(-mpmath.mpf(x) / mpmath.sqrt(2)))
    assert abs(S.std_normal_cdf(x) - ref) <= 1e-12


def test_cdf_monotone():
    x = np.linspace(-40, 40, 20001)
    assert np.all(np.diff(S.std_normal_cdf(x)) >= 0)


@given(st.floats(1e-8, 1 - 1e-8))
def test_quantile_roundtrip(p):
    assert abs(S.std_normal_cdf(S.std_normal_quantile(p)) - p) <= 1e-9


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_cdf_rejects_nonfinite(bad):
    with pytest.raises(DomainError):
        S.std_normal_cdf(bad)


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.1])
def test_quantile_domain(bad):
    with pytest.raises(DomainError):
        S.std_normal_quantile(bad)


# -- truncated normal -----------------------------------------------------------

def test_half_normal_means():
    s = RngStream(11)
    pos = S.sample_truncated_normal(0.0, 1.0, POS, s, size=10**6)
    neg = S.sample_truncated_normal(0.0, 1.0, NEG, s.replace(chain=1), size=10**6)
    assert pos.mean() == pytest.approx(math.sqrt(2 / math.pi), abs=3e-3)
    assert neg.mean() == pytest.approx(-math.sqrt(2 / math.pi), abs=3e-3)
    assert pos.min() > 0 and neg.max() <= 0


def test_negligible_truncation():
    d = S.sample_truncated_normal(5.0, 1.0, POS, RngStream(3), size=10**5)
    assert d.min() > 0
    assert d.mean() == pytest.approx(5.0, abs=0.01)


KS_CASES = [(0, 1, POS), (0, 1, NEG), (1.5, 0.5, POS), (-1, 2, POS), (2, 1, NEG),
            (-3.9, 1, POS), (-4.1, 1, POS), (-8, 1, POS), (10, 3, NEG), (0.3, 0.01, NEG)]


@pytest.mark.parametrize("mean,sd,side", KS_CASES)
def test_truncated_normal_ks(mean, sd, side):
    d = S.sample_truncated_normal(mean, sd, side, RngStream(5, entity=1000), size=10**5)
    a, b = ((0 - mean) / sd, np.inf) if side is POS else (-np.inf, (0 - mean) / sd)
    assert sps.kstest(d, sps.truncnorm(a, b, loc=mean, scale=sd).cdf).pvalue > 1e-3
    assert (d > 0).all() if side is POS else (d <= 0).all()


@given(st.floats(-50, 50), st.floats(1e-3, 50), st.booleans(), st.integers(0, 2**32))
def test_truncated_normal_support(mean, sd, positive, seed):
    side = POS if positive else NEG
    d = S.sample_truncated_normal(mean, sd, side, RngStream(seed), size=64)
    assert np.all(np.isfinite(d))
    assert (d > 0).all() if positive else (d <= 0).all()


@pytest.mark.parametrize("sd", [0.0, -1.0])
def test_truncated_normal_bad_sd(sd):
    with pytest.raises(DomainError):
        S.sample_truncated_normal(0.0, sd, POS, RngStream(0))


def test_truncated_normal_reproducible():
    s = RngStream(9, chain=2, iteration=4)
    a = S.sample_truncated_normal(np.linspace(-3, 3, 1000), 1.0, POS, s)
    assert np.array_equal(a, S.sample_truncated_normal(np.linspace(-3, 3, 1000), 1.0, POS, s))


# -- Dirichlet / categorical ----------------------------------------------------

def test_dirichlet_concentrated():
    w = S.sample_dirichlet([1e9, 1e9], RngStream(1))
    assert np.allclose(w, 0.5, atol=1e-3)


def test_dirichlet_mean():
    draws = np.array([S.sample_dirichlet([2.0, 1.0], RngStream(2, iteration=t)) for t in range(200_000)])
    # 2e5 draws keep the runtime modest; sd of the mean is ~5e-4
    assert np.allclose(draws.mean(axis=0), [2 / 3, 1 / 3], atol=2e-3)


def test_dirichlet_single_component():
    assert S.sample_dirichlet([0.5], RngStream(3))[0] == 1.0


@given(st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=40), st.integers(0, 2**32))
def test_dirichlet_simplex(conc, seed):
    w = S.sample_dirichlet(conc, RngStream(seed))
    assert np.all(w >= 0) and abs(w.sum() - 1) <= 1e-12


@pytest.mark.parametrize("conc", [[1.0, 0.0], [-1.0], []])
def test_dirichlet_errors(conc):
    with pytest.raises(DomainError):
        S.sample_dirichlet(conc, RngStream(0))


def test_categorical_zero_mass():
    idx = S.sample_categorical_from_logweights([0.0, -np.inf], RngStream(1), size=1000)
    assert (idx == 0).all()


@pytest.mark.parametrize("logw,expected", [
    ([math.log(1), math.log(3)], [0.25, 0.75]),
    ([1000.0, 1000.0 + math.log(2)], [1 / 3, 2 / 3]),
])
def test_categorical_frequencies(logw, expected):
    idx = S.sample_categorical_from_logweights(logw, RngStream(4), size=10**6)
    assert np.allclose(np.bincount(idx, minlength=2) / idx.size, expected, atol=2e-3)


def test_categorical_all_neg_inf():
    with pytest.raises(DomainError):
        S.sample_categorical_from_logweights([-np.inf, -np.inf], RngStream(0))


# -- log Beta -----------------------------------------------------------------

def test_log_beta_examples():
    assert S.log_beta_fn(1, 1) == 0.0
    assert S.log_beta_fn(1, 2) == pytest.approx(math.log(0.5), abs=1e-15)


def test_log_beta_quadrature_oracle():
    val, _ = integrate.quad(lambda t: t ** 2.5 * (1 - t) ** 1.25, 0, 1, epsabs=1e-15, epsrel=1e-14)
    assert S.log_beta_fn(3.5, 2.25) == pytest.approx(math.log(val), rel=1e-12)


@given(st.floats(1e-3, 1e4), st.floats(1e-3, 1e4))
def test_log_beta_gamma_identity(a, b):
    with mpmath.workdps(40):
        ref = float(mpmath.log(mpmath.beta(a, b)))
    assert S.log_beta_fn(a, b) == pytest.approx(ref, rel=1e-12, abs=1e-12)
    assert S.lbeta(a, b) == pytest.approx(ref, rel=1e-10, abs=1e-10)


@pytest.mark.parametrize("a,b", [(0, 1), (1, -2)])
def test_log_beta_domain(a, b):
    with pytest.raises(DomainError):
        S.log_beta_fn(a, b)
