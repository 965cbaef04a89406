"""Convergence diagnostics: split R-hat and effective sample size."""

from __future__ import annotations

import numpy as np

RHAT_ADVISORY = 1.01


def _as_chains(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError("expected draws shaped (chains, draws) or (draws,)")
    return x


def _split(x: np.ndarray) -> np.ndarray:
    half = x.shape[1] // 2
    if half < 2:
        raise ValueError("need at least 4 draws per chain")
    return np.concatenate([x[:, :half], x[:, -half:]], axis=0)


def split_rhat(x) -> float:
    """Potential scale reduction on split chains (each chain cut in half)."""
    s = _split(_as_chains(x))
    n = s.shape[1]
    chain_means = s.mean(axis=1)
    W = s.var(axis=1, ddof=1).mean()
    B = n * chain_means.var(ddof=1)
    if W == 0.0:
        return 1.0 if B == 0.0 else np.inf
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    size = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x - x.mean(axis=-1, keepdims=True), size, axis=-1)
    acov = np.fft.irfft(f * np.conj(f), size, axis=-1)[..., :n]
    return acov / n


def effective_sample_size(x) -> float:
    """Multi-chain ESS with Geyer's initial monotone sequence."""
    x = _as_chains(x)
    C, n = x.shape
    if n < 4:
        return float(C * n)
    acov = _autocov(x)
    chain_var = acov[:, 0] * n / (n - 1)
    W = chain_var.mean()
    var_plus = W * (n - 1) / n
    if C > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    if var_plus == 0.0:
        return float(C * n)
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # sum consecutive pairs while positive, enforcing monotone decrease
    pairs = rho[: n - n % 2].reshape(-1, 2).sum(axis=1)
    total = 0.0
    prev = np.inf
    for p in pairs:
        if p <= 0.0:
            break
        p = min(p, prev)
        total += p
        prev = p
    tau = -1.0 + 2.0 * total
    tau = max(tau, 1.0 / np.log10(C * n))
    return float(C * n / tau)


def mcse_mean(x) -> float:
    """Monte Carlo standard error of the mean of ``x``."""
    x = _as_chains(x)
    return float(x.std(ddof=1) / np.sqrt(effective_sample_size(x)))


def convergence_report(named_draws: dict) -> list[dict]:
    """One row per parameter: mean, sd, split R-hat, ESS and an advisory flag.

    ``named_draws`` maps names to arrays shaped (chains, draws).
    """
    rows = []
    for name, arr in named_draws.items():
        arr = _as_chains(arr)
        rhat = split_rhat(arr) if arr.shape[1] >= 4 else float("nan")
        rows.append({
            "parameter": name,
            "mean": float(arr.mean()),
            "sd": float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
            "rhat": rhat,
            "ess": effective_sample_size(arr),
            "converged": bool(rhat < RHAT_ADVISORY),
        })
    return rows
