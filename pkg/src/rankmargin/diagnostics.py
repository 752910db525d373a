"""Convergence diagnostics: rank-normalized split R-hat, bulk ESS and MCSE."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .hmc import PosteriorDraws

RHAT_THRESHOLD = 1.01


class DiagnosticsError(ValueError):
    pass


def split_chains(x: np.ndarray) -> np.ndarray:
    """Split each chain in half; the middle draw is dropped for odd lengths."""
    x = np.asarray(x, dtype=float)
    half = x.shape[1] // 2
    return np.concatenate([x[:, :half], x[:, x.shape[1] - half :]], axis=0)


def rank_normalize(x: np.ndarray) -> np.ndarray:
    """Replace pooled values by normal scores of their fractional ranks."""
    x = np.asarray(x, dtype=float)
    ranks = stats.rankdata(x, method="average").reshape(x.shape)
    return stats.norm.ppf((ranks - 0.375) / (x.size + 0.25))


def _rhat(x: np.ndarray) -> float:
    m, n = x.shape
    within = float(np.mean(np.var(x, axis=1, ddof=1)))
    between = n * float(np.var(np.mean(x, axis=1), ddof=1)) if m > 1 else 0.0
    if within == 0.0:
        return math.nan if between == 0.0 else math.inf
    var_hat = (n - 1) / n * within + between / n
    return math.sqrt(var_hat / within)


def split_rhat(x: np.ndarray) -> float:
    """Rank-normalized split R-hat for draws of shape ``(chains, samples)``.

    The maximum of the bulk (rank-normalized) and tail (folded) versions.
    NaN when every draw is identical; inf when chains are individually
    constant but disagree.
    """
    x = split_chains(x)
    if np.ptp(x) == 0.0:
        return math.nan
    bulk = _rhat(rank_normalize(x))
    folded = np.abs(x - np.median(x))
    tail = _rhat(rank_normalize(folded)) if np.ptp(folded) > 0 else bulk
    return max(bulk, tail)


def _autocov(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of each row via FFT."""
    n = x.shape[1]
    size = 2 ** math.ceil(math.log2(2 * n))
    centered = x - x.mean(axis=1, keepdims=True)
    f = np.fft.rfft(centered, n=size, axis=1)
    return np.fft.irfft(f * np.conj(f), n=size, axis=1)[:, :n] / n


def ess(x: np.ndarray) -> float:
    """Effective sample size with Geyer's initial monotone sequence estimator.

    ``x`` has shape ``(chains, samples)``; the chains are used as given (no
    splitting or rank normalization here).  The estimate is capped at
    ``N log10 N`` for ``N`` total draws.
    """
    x = np.asarray(x, dtype=float)
    m, n = x.shape
    if n < 4:
        raise DiagnosticsError("need at least 4 draws per chain")
    acov = _autocov(x)
    mean_var = float(np.mean(acov[:, 0])) * n / (n - 1)
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += float(np.var(x.mean(axis=1), ddof=1))
    if var_plus == 0.0:
        return math.nan
    mean_acov = acov.mean(axis=0)
    rho = np.zeros(n)
    rho[0] = 1.0
    even, odd = 1.0, 1.0 - (mean_var - mean_acov[1]) / var_plus
    rho[1] = odd
    t = 1
    while t < n - 3 and even + odd > 0.0:
        even = 1.0 - (mean_var - mean_acov[t + 1]) / var_plus
        odd = 1.0 - (mean_var - mean_acov[t + 2]) / var_plus
        if even + odd >= 0.0:
            rho[t + 1], rho[t + 2] = even, odd
        t += 2
    max_t = t - 2
    if even > 0.0:
        rho[max_t + 1] = even
    # enforce monotone decrease of the paired sums
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = rho[t + 2] = (rho[t - 1] + rho[t]) / 2.0
        t += 2
    total = m * n
    tau = -1.0 + 2.0 * float(np.sum(rho[: max_t + 1])) + rho[max_t + 1]
    tau = max(tau, 1.0 / math.log10(total))
    return total / tau


def ess_bulk(x: np.ndarray) -> float:
    x = split_chains(x)
    if np.ptp(x) == 0.0:
        return math.nan
    return ess(rank_normalize(x))


def ess_mean(x: np.ndarray) -> float:
    """ESS of the posterior mean estimate (split chains, raw scale)."""
    x = split_chains(x)
    if np.ptp(x) == 0.0:
        return math.nan
    return ess(x)


def mcse_mean(x: np.ndarray) -> float:
    """Monte Carlo standard error of the mean: sd / sqrt(ESS)."""
    x = np.asarray(x, dtype=float)
    e = ess_mean(x)
    if math.isnan(e):
        return 0.0
    return float(np.std(x, ddof=1)) / math.sqrt(e)


@dataclass
class Diagnostics:
    names: list[str]
    rhat: np.ndarray
    ess_bulk: np.ndarray
    ess_mean: np.ndarray
    mcse_mean: np.ndarray
    divergences: int
    treedepth_hits: int

    @property
    def rhat_flag(self) -> bool:
        """True when some R-hat exceeds the threshold or is undefined."""
        r = self.rhat
        return bool(np.any(~np.isfinite(r)) or np.any(r > RHAT_THRESHOLD))

    @property
    def divergence_flag(self) -> bool:
        return self.divergences > 0

    @property
    def ok(self) -> bool:
        return not (self.rhat_flag or self.divergence_flag)

    def to_json(self) -> dict:
        def num(v):
            v = float(v)
            return v if math.isfinite(v) else str(v)

        return {
            "ok": self.ok,
            "rhat_flag": self.rhat_flag,
            "divergence_flag": self.divergence_flag,
            "divergences": int(self.divergences),
            "treedepth_hits": int(self.treedepth_hits),
            "rhat_threshold": RHAT_THRESHOLD,
            "parameters": [
                {
                    "name": n,
                    "rhat": num(r),
                    "ess_bulk": num(eb),
                    "ess_mean": num(em),
                    "mcse_mean": num(mc),
                }
                for n, r, eb, em, mc in zip(
                    self.names, self.rhat, self.ess_bulk, self.ess_mean, self.mcse_mean
                )
            ],
        }


def diagnose(draws: PosteriorDraws, min_samples: int = 100) -> Diagnostics:
    """Per-parameter split R-hat, bulk ESS and MCSE, plus sampler warnings."""
    if draws.n_chains < 2:
        raise DiagnosticsError("split R-hat needs at least 2 chains")
    if draws.n_samples < min_samples:
        raise DiagnosticsError(f"need at least {min_samples} samples per chain")
    cols = [draws.draws[:, :, i] for i in range(len(draws.names))]
    return Diagnostics(
        names=list(draws.names),
        rhat=np.array([split_rhat(c) for c in cols]),
        ess_bulk=np.array([ess_bulk(c) for c in cols]),
        ess_mean=np.array([ess_mean(c) for c in cols]),
        mcse_mean=np.array([mcse_mean(c) for c in cols]),
        divergences=int(np.sum(draws.divergences)),
        treedepth_hits=int(np.sum(draws.treedepth_hits)),
    )
