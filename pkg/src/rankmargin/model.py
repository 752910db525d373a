"""Log posterior density and analytic gradient for the two home-advantage models.

Unconstrained parameter layout (``R`` ranks, ``k`` tracked countries)::

    a[2] .. a[R]          abilities of ranking slots 2..R (a[1] is pinned at 0)
    h                     global home effect (games)
    h[C] for C in tracked country-specific home effects (country variant only)
    beta, gamma           linear and square-root trend of abilities in rank
    log_sigma_y           log of the margin noise scale
    log_sigma_a           log of the ability spread around the trend

In fixed-scale mode the two log scales are pinned and dropped from the
vector, leaving a purely Gaussian target.

The likelihood only enters through a linear predictor, so it is evaluated
from precomputed least-squares statistics of the design matrix.  Summation
order is fixed, so results are bitwise reproducible for a given dataset.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .match_data import DEFAULT_MAX_RANK, DEFAULT_TRACKED, EncodedDataset, EncodedMatch

LOG_2PI = math.log(2.0 * math.pi)
LOG_2 = math.log(2.0)


class Variant(enum.Enum):
    Global = "global"
    CountryIntercepts = "country"

    @classmethod
    def parse(cls, value: str | Variant) -> Variant:
        if isinstance(value, Variant):
            return value
        for v in cls:
            if value.lower() in (v.value, v.name.lower()):
                return v
        raise ValueError(f"unknown model variant {value!r}")


@dataclass(frozen=True)
class ModelSpec:
    variant: Variant = Variant.Global
    R: int = DEFAULT_MAX_RANK
    tracked_countries: tuple[str, ...] = ()
    h_scale: float = 0.5
    country_scale: float = 0.2
    beta_scale: float = 2.0
    gamma_scale: float = 2.0
    sigma_scale: float = 2.0
    fixed_scales: tuple[float, float] | None = None

    def __post_init__(self):
        if self.R < 2:
            raise ValueError("R must be >= 2")
        scales = (self.h_scale, self.country_scale, self.beta_scale, self.gamma_scale, self.sigma_scale)
        if min(scales) <= 0:
            raise ValueError("prior scales must be positive")
        if self.variant is Variant.Global and self.tracked_countries:
            raise ValueError("the global model takes no tracked countries")
        if self.variant is Variant.CountryIntercepts and not self.tracked_countries:
            raise ValueError("the country model needs at least one tracked country")
        if self.fixed_scales is not None and min(self.fixed_scales) <= 0:
            raise ValueError("fixed scales must be positive")

    @property
    def n_countries(self) -> int:
        return len(self.tracked_countries)

    @property
    def n_linear(self) -> int:
        """Coefficients of the linear predictor: abilities, h, country effects."""
        return self.R - 1 + 1 + self.n_countries

    @property
    def dimension(self) -> int:
        return self.n_linear + 2 + (0 if self.fixed_scales else 2)

    @property
    def names(self) -> list[str]:
        """Unconstrained coordinate names, in vector order."""
        names = [f"a[{j}]" for j in range(2, self.R + 1)] + ["h"]
        names += [f"h[{c}]" for c in self.tracked_countries]
        names += ["beta", "gamma"]
        if not self.fixed_scales:
            names += ["log_sigma_y", "log_sigma_a"]
        return names

    @property
    def constrained_names(self) -> list[str]:
        return [
            {"log_sigma_y": "sigma_y", "log_sigma_a": "sigma_a"}.get(n, n)
            for n in self.names
        ]


def make_spec(
    variant: Variant | str = Variant.Global,
    R: int = DEFAULT_MAX_RANK,
    tracked_countries: Sequence[str] | None = None,
    **overrides,
) -> ModelSpec:
    """Build a :class:`ModelSpec` with default prior scales.

    ``tracked_countries`` defaults to EGY, ENG, USA for the country variant
    and is ignored for the global one.
    """
    variant = Variant.parse(variant)
    if variant is Variant.Global:
        tracked = ()
    else:
        tracked = tuple(c.upper() for c in (tracked_countries or DEFAULT_TRACKED))
    return ModelSpec(variant=variant, R=R, tracked_countries=tracked, **overrides)


def spec_from_names(names: Sequence[str], **overrides) -> ModelSpec:
    """Recover the model layout from draw column names."""
    ranks = [int(n[2:-1]) for n in names if n.startswith("a[")]
    countries = tuple(n[2:-1] for n in names if n.startswith("h["))
    if not ranks or "h" not in names:
        raise ValueError("draw columns do not describe a fitted model")
    variant = Variant.CountryIntercepts if countries else Variant.Global
    return ModelSpec(variant=variant, R=max(ranks), tracked_countries=countries, **overrides)


@dataclass
class ParameterVector:
    a: np.ndarray  # abilities for ranks 2..R
    h: float
    beta: float
    gamma: float
    log_sigma_y: float
    log_sigma_a: float
    country_h: dict[str, float] = field(default_factory=dict)

    @property
    def sigma_y(self) -> float:
        return math.exp(self.log_sigma_y)

    @property
    def sigma_a(self) -> float:
        return math.exp(self.log_sigma_a)

    @classmethod
    def from_array(cls, theta: np.ndarray, spec: ModelSpec) -> ParameterVector:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (spec.dimension,):
            raise ValueError(f"expected {spec.dimension} parameters, got shape {theta.shape}")
        R, k = spec.R, spec.n_countries
        if spec.fixed_scales:
            lsy, lsa = (math.log(s) for s in spec.fixed_scales)
        else:
            lsy, lsa = theta[-2], theta[-1]
        return cls(
            a=theta[: R - 1].copy(),
            h=float(theta[R - 1]),
            country_h={c: float(theta[R + i]) for i, c in enumerate(spec.tracked_countries)},
            beta=float(theta[R + k]),
            gamma=float(theta[R + k + 1]),
            log_sigma_y=float(lsy),
            log_sigma_a=float(lsa),
        )

    def to_array(self, spec: ModelSpec) -> np.ndarray:
        parts = [self.a, [self.h], [self.country_h.get(c, 0.0) for c in spec.tracked_countries]]
        parts.append([self.beta, self.gamma])
        if not spec.fixed_scales:
            parts.append([self.log_sigma_y, self.log_sigma_a])
        return np.concatenate([np.asarray(p, dtype=float) for p in parts])


@dataclass(frozen=True)
class LogDensityResult:
    log_density: float
    gradient: np.ndarray


def ability(params: ParameterVector, rank: int) -> float:
    """Ability of ranking slot ``rank``; slot 1 is the zero reference."""
    R = len(params.a) + 1
    if not 1 <= rank <= R:
        raise ValueError(f"rank {rank} outside [1, {R}]")
    return 0.0 if rank == 1 else float(params.a[rank - 2])


def predictor_mean(params: ParameterVector, m: EncodedMatch) -> float:
    mu = ability(params, m.rank1) - ability(params, m.rank2) + params.h * m.b
    for c, eff in params.country_h.items():
        mu += eff * m.b_country.get(c, 0)
    return mu


def design_matrix(data: EncodedDataset, spec: ModelSpec) -> np.ndarray:
    """Rows map the linear coefficients (abilities, h, country effects) to means."""
    cols = data.arrays()
    n = len(data)
    X = np.zeros((n, spec.n_linear))
    rows = np.arange(n)
    for ranks, sign in ((cols["rank1"], 1.0), (cols["rank2"], -1.0)):
        if ranks.size and ranks.max() > spec.R:
            raise ValueError(f"dataset has ranks beyond R={spec.R}")
        keep = ranks >= 2
        np.add.at(X, (rows[keep], ranks[keep] - 2), sign)
    X[:, spec.R - 1] = cols["b"]
    for i, c in enumerate(spec.tracked_countries):
        key = f"b_{c.lower()}"
        if key not in cols:
            raise ValueError(f"dataset lacks country column {key}")
        X[:, spec.R + i] = cols[key]
    return X


class Posterior:
    """Callable log posterior ``theta -> (log density, gradient)``.

    Safe to share between threads and to pickle into worker processes.
    """

    def __init__(self, data: EncodedDataset, spec: ModelSpec):
        if len(data) == 0:
            raise ValueError("cannot evaluate the posterior on an empty dataset")
        self.spec = spec
        X = design_matrix(data, spec)
        y = data.arrays()["y"]
        self.n = len(y)
        # any least-squares solution gives RSS(t) = rss0 + (t - ls)' XtX (t - ls)
        self.ls, *_ = np.linalg.lstsq(X, y, rcond=None)
        self.rss0 = float(np.sum((y - X @ self.ls) ** 2))
        self.XtX = X.T @ X
        j = np.arange(1, spec.R, dtype=float)
        self.trend_lin = j
        self.trend_sqrt = np.sqrt(j)

    @property
    def dimension(self) -> int:
        return self.spec.dimension

    def __call__(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        return self.evaluate(theta, likelihood_only=False)

    def evaluate(self, theta: np.ndarray, likelihood_only: bool = False) -> tuple[float, np.ndarray]:
        spec = self.spec
        R, k, L = spec.R, spec.n_countries, spec.n_linear
        grad = np.zeros(spec.dimension)

        if spec.fixed_scales:
            log_sy, log_sa = (math.log(s) for s in spec.fixed_scales)
        else:
            log_sy, log_sa = theta[-2], theta[-1]
        with np.errstate(over="ignore", invalid="ignore"):
            var_y = math.exp(2.0 * log_sy) if log_sy < 350 else math.inf
            var_a = math.exp(2.0 * log_sa) if log_sa < 350 else math.inf

        if not (0.0 < var_y < math.inf and 0.0 < var_a < math.inf):
            return -math.inf, grad
        coef = theta[:L]
        d = coef - self.ls
        XtXd = self.XtX @ d
        rss = self.rss0 + float(d @ XtXd)
        lp = -0.5 * rss / var_y - self.n * log_sy - 0.5 * self.n * LOG_2PI
        grad[:L] = -XtXd / var_y
        if not spec.fixed_scales:
            grad[-2] = -self.n + rss / var_y
        if likelihood_only:
            return lp, grad

        a = theta[: R - 1]
        h = theta[R - 1]
        country = theta[R : R + k]
        beta, gamma = theta[R + k], theta[R + k + 1]

        # abilities around the rank trend
        resid = a - beta * self.trend_lin - gamma * self.trend_sqrt
        ss_a = float(resid @ resid)
        lp += -0.5 * ss_a / var_a - (R - 1) * log_sa - 0.5 * (R - 1) * LOG_2PI
        grad[: R - 1] -= resid / var_a
        grad[R + k] += float(resid @ self.trend_lin) / var_a
        grad[R + k + 1] += float(resid @ self.trend_sqrt) / var_a

        lp += _normal_lp(h, spec.h_scale)
        grad[R - 1] -= h / spec.h_scale**2
        for i in range(k):
            lp += _normal_lp(country[i], spec.country_scale)
            grad[R + i] -= country[i] / spec.country_scale**2
        lp += _normal_lp(beta, spec.beta_scale) + _normal_lp(gamma, spec.gamma_scale)
        grad[R + k] -= beta / spec.beta_scale**2
        grad[R + k + 1] -= gamma / spec.gamma_scale**2

        if not spec.fixed_scales:
            grad[-1] = -(R - 1) + ss_a / var_a
            s2 = spec.sigma_scale**2
            for idx, (log_s, var) in enumerate(((log_sy, var_y), (log_sa, var_a))):
                # half-normal prior on the scale plus log-Jacobian of exp
                lp += LOG_2 + _normal_lp(0.0, spec.sigma_scale) - 0.5 * var / s2 + log_s
                grad[-2 + idx] += -var / s2 + 1.0
        return lp, grad


def _normal_lp(x: float, scale: float) -> float:
    return -0.5 * (x / scale) ** 2 - math.log(scale) - 0.5 * LOG_2PI


def _as_array(params, spec: ModelSpec) -> np.ndarray:
    if isinstance(params, ParameterVector):
        theta = params.to_array(spec)
    else:
        theta = np.asarray(params, dtype=float)
    if theta.shape != (spec.dimension,):
        raise ValueError(f"expected {spec.dimension} parameters, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("parameters must be finite")
    return theta


def log_posterior(params, data: EncodedDataset, spec: ModelSpec) -> LogDensityResult:
    """Joint log posterior (with log-Jacobian for the scales) and its gradient.

    ``params`` is a :class:`ParameterVector` or a flat unconstrained array.
    """
    theta = _as_array(params, spec)
    lp, grad = Posterior(data, spec)(theta)
    return LogDensityResult(lp, grad)


def log_likelihood(params, data: EncodedDataset, spec: ModelSpec) -> LogDensityResult:
    """The normal margin likelihood alone, without any prior term."""
    theta = _as_array(params, spec)
    lp, grad = Posterior(data, spec).evaluate(theta, likelihood_only=True)
    return LogDensityResult(lp, grad)


def constrain(draws: np.ndarray, spec: ModelSpec) -> np.ndarray:
    """Map unconstrained draws (last axis in vector order) to the reported scale."""
    out = np.array(draws, dtype=float, copy=True)
    if not spec.fixed_scales:
        out[..., -2:] = np.exp(out[..., -2:])
    return out


def point_params(values: Mapping[str, float], spec: ModelSpec) -> ParameterVector:
    """Build a :class:`ParameterVector` from constrained, named values."""
    sy, sa = spec.fixed_scales or (values["sigma_y"], values["sigma_a"])
    return ParameterVector(
        a=np.array([values[f"a[{j}]"] for j in range(2, spec.R + 1)], dtype=float),
        h=float(values["h"]),
        country_h={c: float(values[f"h[{c}]"]) for c in spec.tracked_countries},
        beta=float(values["beta"]),
        gamma=float(values["gamma"]),
        log_sigma_y=math.log(sy),
        log_sigma_a=math.log(sa),
    )



class NonCentered:
    """The same posterior sampled in ``z`` with ``a = trend + sigma_a * z``.

    Coordinates follow the :class:`Posterior` layout with the abilities
    replaced by ``z``.  The log density equals the centered one plus the
    Jacobian ``(R - 1) log sigma_a``; :meth:`to_centered` maps draws back.
    Sampling here avoids the funnel between the abilities and ``sigma_a``.
    """

    def __init__(self, posterior: Posterior):
        self.posterior = posterior
        self.spec = posterior.spec

    @property
    def dimension(self) -> int:
        return self.spec.dimension

    def _trend_and_scale(self, theta):
        spec = self.spec
        R, k = spec.R, spec.n_countries
        beta, gamma = theta[..., R + k], theta[..., R + k + 1]
        log_sa = math.log(spec.fixed_scales[1]) if spec.fixed_scales else theta[..., -1]
        trend = (
            np.multiply.outer(beta, self.posterior.trend_lin)
            + np.multiply.outer(gamma, self.posterior.trend_sqrt)
        )
        return trend, np.expand_dims(np.exp(log_sa), -1)

    def to_centered(self, theta: np.ndarray) -> np.ndarray:
        """Map non-centered points (any leading shape) to the standard layout."""
        theta = np.asarray(theta, dtype=float)
        trend, sigma_a = self._trend_and_scale(theta)
        out = theta.copy()
        out[..., : self.spec.R - 1] = trend + sigma_a * theta[..., : self.spec.R - 1]
        return out

    def from_centered(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        trend, sigma_a = self._trend_and_scale(theta)
        out = theta.copy()
        out[..., : self.spec.R - 1] = (theta[..., : self.spec.R - 1] - trend) / sigma_a
        return out

    def __call__(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        post, spec = self.posterior, self.spec
        R, k, L = spec.R, spec.n_countries, spec.n_linear
        R1 = R - 1
        ib, ig = R + k, R + k + 1
        beta, gamma = theta[ib], theta[ig]
        if spec.fixed_scales:
            log_sy, log_sa = (math.log(s) for s in spec.fixed_scales)
        else:
            log_sy, log_sa = theta[-2], theta[-1]
        if not (-350.0 < log_sy < 350.0 and -350.0 < log_sa < 350.0):
            return -math.inf, np.zeros(spec.dimension)
        var_y = math.exp(2.0 * log_sy)
        sigma_a = math.exp(log_sa)

        z = theta[:R1]
        coef = theta[:L].copy()
        coef[:R1] = beta * post.trend_lin + gamma * post.trend_sqrt + sigma_a * z
        d = coef - post.ls
        XtXd = post.XtX @ d
        rss = post.rss0 + float(d @ XtXd)
        g_lin = XtXd / -var_y
        zz = float(z @ z)

        lp = -0.5 * rss / var_y - post.n * log_sy - 0.5 * (post.n + R1) * LOG_2PI - 0.5 * zz
        grad = np.empty(spec.dimension)
        g_a = g_lin[:R1]
        grad[:R1] = sigma_a * g_a - z
        grad[R1:L] = g_lin[R1:]
        h = theta[R1]
        lp += _normal_lp(h, spec.h_scale)
        grad[R1] -= h / spec.h_scale**2
        for i in range(R, R + k):
            lp += _normal_lp(theta[i], spec.country_scale)
            grad[i] -= theta[i] / spec.country_scale**2
        lp += _normal_lp(beta, spec.beta_scale) + _normal_lp(gamma, spec.gamma_scale)
        grad[ib] = float(g_a @ post.trend_lin) - beta / spec.beta_scale**2
        grad[ig] = float(g_a @ post.trend_sqrt) - gamma / spec.gamma_scale**2
        if spec.fixed_scales:
            return lp, grad

        s2 = spec.sigma_scale**2
        var_a = sigma_a * sigma_a
        half = LOG_2 + _normal_lp(0.0, spec.sigma_scale)
        # the ability-prior -(R-1) log sigma_a cancels against the Jacobian
        lp += half - 0.5 * var_y / s2 + log_sy
        lp += half - 0.5 * var_a / s2 + log_sa
        grad[-2] = -post.n + rss / var_y - var_y / s2 + 1.0
        grad[-1] = sigma_a * float(g_a @ z) - var_a / s2 + 1.0
        return lp, grad
