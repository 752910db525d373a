"""Independent reference implementations used as test oracles.

Nothing here shares code with the package's density evaluation: the log
posterior is summed over per-match terms in extended precision.
"""

import math

import numpy as np

LD = np.longdouble
LOG_2PI = LD(math.log(2 * math.pi))


def _normal_lp(x, mu, sd):
    x, mu, sd = (np.asarray(v, dtype=LD) for v in (x, mu, sd))
    return -((x - mu) / sd) ** 2 / 2 - np.log(sd) - LOG_2PI / 2


def naive_log_posterior(theta, data, spec, likelihood_only=False):
    """Log posterior in long double, written straight from the model statement.

    Every match contributes its own normal term (no sufficient statistics).
    """
    theta = np.asarray(theta, dtype=LD)
    R, tracked = spec.R, list(spec.tracked_countries)
    k = len(tracked)
    a = np.concatenate([[LD(0)], theta[: R - 1]])  # a[0] is rank 1
    h = theta[R - 1]
    country = theta[R : R + k]
    beta, gamma = theta[R + k], theta[R + k + 1]
    if spec.fixed_scales:
        log_sy, log_sa = (np.log(LD(s)) for s in spec.fixed_scales)
    else:
        log_sy, log_sa = theta[-2], theta[-1]
    sy, sa = np.exp(log_sy), np.exp(log_sa)

    cols = _columns(data, tracked)
    mu = a[cols["rank1"] - 1] - a[cols["rank2"] - 1] + h * cols["b"]
    if k:
        mu = mu + cols["bc"] @ country
    total = np.sum(_normal_lp(cols["y"], mu, sy))
    if likelihood_only:
        return total
    j = np.arange(1, R, dtype=LD)
    total += np.sum(_normal_lp(a[1:], beta * j + gamma * np.sqrt(j), sa))
    total += _normal_lp(h, 0, spec.h_scale)
    total += np.sum(_normal_lp(country, 0, spec.country_scale))
    total += _normal_lp(beta, 0, spec.beta_scale) + _normal_lp(gamma, 0, spec.gamma_scale)
    if not spec.fixed_scales:
        for s, log_s in ((sy, log_sy), (sa, log_sa)):
            total += np.log(LD(2)) + _normal_lp(s, 0, spec.sigma_scale) + log_s
    return total


_CACHE = {}


def _columns(data, tracked):
    key = (id(data), tuple(tracked))
    if key not in _CACHE:
        ms = data.matches
        _CACHE[key] = {
            "rank1": np.array([m.rank1 for m in ms]),
            "rank2": np.array([m.rank2 for m in ms]),
            "b": np.array([m.b for m in ms], dtype=LD),
            "bc": np.array([[m.b_country[c] for c in tracked] for m in ms], dtype=LD)
            .reshape(len(ms), len(tracked)),
            "y": np.array([m.y for m in ms], dtype=LD),
            "data": data,  # keeps id() stable while cached
        }
    return _CACHE[key]


def central_difference(f, x, step=1e-5):
    x = np.asarray(x, dtype=float)
    out = np.empty(len(x))
    for i in range(len(x)):
        e = np.zeros(len(x))
        e[i] = step
        out[i] = float((f(x + e) - f(x - e)) / (2 * LD(step)))
    return out


def relative_error(analytic, reference):
    """Elementwise |analytic - reference| / max(1, |reference|)."""
    analytic, reference = np.asarray(analytic), np.asarray(reference)
    return np.abs(analytic - reference) / np.maximum(1.0, np.abs(reference))
