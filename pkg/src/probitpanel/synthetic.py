"""Forward simulation of panels from the two random-effect models.

Used for recovery checks, calibration fixtures and the CLI's demo data.
"""

from __future__ import annotations

import numpy as np
from scipy import special

from .data import PanelDataset


def _rng(seed, *tags):
    return np.random.default_rng([int(seed), *map(int, tags)])


def panel_sizes(m, n_max, seed, geometric_p=None):
    """Per-person occasion counts: uniform on 1..n_max, or truncated geometric."""
    g = _rng(seed, 1)
    if geometric_p is None:
        return g.integers(1, n_max + 1, size=m)
    return np.minimum(g.geometric(geometric_p, size=m), n_max)


def gaussian_panel(m, beta, mu, tau, n_max=5, seed=0, geometric_p=None,
                   start="2015-01-01", span_days=4 * 365):
    """Simulate a panel from the uncentered Gaussian random-effects probit.

    Returns
    -------
    dataset : PanelDataset
    theta : ndarray, the standard-normal random effects per person
    """
    beta = np.asarray(beta, dtype=float)
    n_i = panel_sizes(m, n_max, seed, geometric_p)
    g = _rng(seed, 2)
    theta = g.standard_normal(m)
    person = np.repeat(np.arange(m), n_i)
    N = person.size
    X = g.standard_normal((N, beta.size))
    eta = mu + tau * theta[person] + X @ beta
    y = (g.random(N) < special.ndtr(eta)).astype(np.int8)
    dates = _dates(person, n_i, g, start, span_days)
    ds = PanelDataset.from_arrays(person, X, y, dates=dates)
    return ds, theta


def discrete_panel(m, beta, atoms, weights, n_max=5, seed=0, start="2015-01-01",
                   span_days=4 * 365):
    """Simulate from the discrete-mixture random-effects probit.

    Returns the dataset and the true component label of every person.
    """
    beta = np.asarray(beta, dtype=float)
    atoms = np.asarray(atoms, dtype=float)
    n_i = panel_sizes(m, n_max, seed)
    g = _rng(seed, 3)
    z = g.choice(atoms.size, size=m, p=np.asarray(weights) / np.sum(weights))
    person = np.repeat(np.arange(m), n_i)
    X = g.standard_normal((person.size, beta.size))
    eta = atoms[z][person] + X @ beta
    y = (g.random(person.size) < special.ndtr(eta)).astype(np.int8)
    ds = PanelDataset.from_arrays(person, X, y, dates=_dates(person, n_i, g, start, span_days))
    return ds, z


def _dates(person, n_i, g, start, span_days):
    # increasing dates within each person over the span
    offsets = g.integers(0, span_days, size=person.size)
    order = np.lexsort((offsets, person))
    sorted_off = offsets[order]
    out = np.empty_like(offsets)
    out[order] = sorted_off
    return np.datetime64(start, "D") + out.astype("timedelta64[D]")


def psa_like_groups(score, rates_cut=None, seed=0, noise=0.35):
    """A six-level external risk group: a noisy, coarsened version of ``score``.

    ``score`` is any per-row risk index on the probit scale. The groups are
    cut at sextile-like quantiles of the noisy score so that group 1 is the
    largest, mirroring typical instrument group sizes.
    """
    g = _rng(seed, 4)
    noisy = np.asarray(score) + noise * g.standard_normal(len(score))
    qs = rates_cut if rates_cut is not None else [0.30, 0.55, 0.72, 0.85, 0.94]
    cuts = np.quantile(noisy, qs)
    return np.searchsorted(cuts, noisy, side="right") + 1


def demo_panel(m=400, seed=0, beta=(0.3, -0.2, 0.15), tau=0.45, p0=0.2, n_max=5):
    """A small panel with an external six-level risk group, for examples.

    ``p0`` is the marginal outcome rate: covariates are standard normal, so
    the intercept is ``ndtri(p0) * sqrt(1 + tau**2 + |beta|**2)``. The risk
    group is a noisy coarsening of the true fixed-effect score.
    """
    beta = np.asarray(beta, dtype=float)
    mu = float(special.ndtri(p0)) * float(np.sqrt(1.0 + tau * tau + beta @ beta))
    ds, theta = gaussian_panel(m, beta, mu, tau, n_max=n_max, seed=seed)
    score = ds.X @ np.asarray(beta, dtype=float) + tau * theta[ds.person]
    rg = psa_like_groups(score, seed=seed)
    names = tuple(f"x{k + 1}" for k in range(len(beta)))
    return ds.replace(risk_group=rg.astype(np.int64), covariate_names=names)
