"""Predictive margins, 68% intervals and win probabilities for matchups.

The default predictive distribution is the mixture over posterior draws of
``normal(mean_s, sigma_y_s)``; its quantiles are found by root-finding on
the mixture CDF, so no extra randomness is involved.  ``plugin=True``
instead uses a single normal at the posterior means.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import optimize
from scipy.special import ndtr

from .hmc import PosteriorDraws
from .match_data import DataError, country_indicators, normalize_country
from .model import Variant, spec_from_names

OUTCOMES = (-3, -2, -1, 1, 2, 3)
CUTS = (-2.5, -1.5, 0.0, 1.5, 2.5)

REPORT_COLUMNS = (
    "label", "rank1", "rank2", "venue", "b",
    "mean_home", "lo68_home", "hi68_home",
    "mean_nohome", "lo68_nohome", "hi68_nohome",
    "win_prob_home", "win_prob_nohome", "actual",
)


def win_probability(mu: float, sigma: float) -> float:
    """Probability that a normal(mu, sigma) margin is positive."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return float(ndtr(mu / sigma))


def discretize_margin(mu: float, sigma: float) -> dict[int, float]:
    """Mass of normal(mu, sigma) on each game margin.

    The line is cut at -2.5, -1.5, 0, 1.5, 2.5; the central band is split at
    zero between -1 and +1 since a drawn match is impossible.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return dict(zip(OUTCOMES, _discrete_masses(np.array([mu]), np.array([sigma]))[0]))


def _discrete_masses(mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    cdf = ndtr((np.asarray(CUTS)[None, :] - mu[:, None]) / sigma[:, None])
    edges = np.hstack([np.zeros((len(mu), 1)), cdf, np.ones((len(mu), 1))])
    return np.diff(edges, axis=1)


@dataclass(frozen=True)
class MatchupQuery:
    rank1: int
    rank2: int
    venue_country: str | None = None
    p1_home: bool = False
    p2_home: bool = False
    label: str = ""
    model_variant: Variant | None = None

    @property
    def b(self) -> int:
        return int(self.p1_home) - int(self.p2_home)

    def b_country(self, tracked: Sequence[str]) -> dict[str, int]:
        return country_indicators(self.b, self.venue_country, tracked)

    def swapped(self) -> MatchupQuery:
        return MatchupQuery(
            self.rank2, self.rank1, self.venue_country, self.p2_home, self.p1_home,
            self.label, self.model_variant,
        )


@dataclass(frozen=True)
class MarginPrediction:
    mean_margin: float
    interval68: tuple[float, float]
    win_probability: float
    discrete_distribution: dict[int, float] = field(default_factory=dict)


@dataclass(frozen=True)
class PredictiveSummary:
    query: MatchupQuery
    with_home: MarginPrediction
    without_home: MarginPrediction


class _DrawView:
    """Per-draw arrays needed to evaluate the linear predictor."""

    def __init__(self, draws: PosteriorDraws, fixed_scales=None):
        spec = spec_from_names(draws.names, fixed_scales=fixed_scales)
        self.spec = spec
        pooled = draws.pooled()
        col = {n: i for i, n in enumerate(draws.names)}
        self.abilities = np.zeros((pooled.shape[0], spec.R + 1))
        for j in range(2, spec.R + 1):
            self.abilities[:, j] = pooled[:, col[f"a[{j}]"]]
        self.h = pooled[:, col["h"]]
        self.country = {c: pooled[:, col[f"h[{c}]"]] for c in spec.tracked_countries}
        if "sigma_y" in col:
            self.sigma = pooled[:, col["sigma_y"]]
        elif fixed_scales:
            self.sigma = np.full(pooled.shape[0], float(fixed_scales[0]))
        else:
            raise ValueError("draws have no sigma_y column; pass fixed_scales")

    def means(self, q: MatchupQuery, home: bool) -> np.ndarray:
        R = self.spec.R
        for r in (q.rank1, q.rank2):
            if not 1 <= r <= R:
                raise ValueError(f"rank {r} outside the fitted range [1, {R}]")
        mu = self.abilities[:, q.rank1] - self.abilities[:, q.rank2]
        if home:
            mu = mu + self.h * q.b
            for c, bc in q.b_country(self.spec.tracked_countries).items():
                mu = mu + self.country[c] * bc
        return mu


def mixture_quantile(p: float, mu: np.ndarray, sigma: np.ndarray) -> float:
    """Quantile of the equal-weight mixture of normal(mu_i, sigma_i)."""
    lo = float(np.min(mu - 12 * sigma))
    hi = float(np.max(mu + 12 * sigma))
    f = lambda x: float(np.mean(ndtr((x - mu) / sigma))) - p  # noqa: E731
    return optimize.brentq(f, lo, hi, xtol=1e-12, rtol=4 * np.finfo(float).eps)


def _predict(mu: np.ndarray, sigma: np.ndarray, plugin: bool, kind: str) -> MarginPrediction:
    if plugin:
        mu, sigma = np.array([mu.mean()]), np.array([sigma.mean()])
    mean = float(np.mean(mu))
    if kind == "predictive":
        interval = (mixture_quantile(0.16, mu, sigma), mixture_quantile(0.84, mu, sigma))
    elif kind == "mean":
        interval = tuple(float(v) for v in np.quantile(mu, (0.16, 0.84)))
    else:
        raise ValueError(f"unknown interval kind {kind!r}")
    win = float(np.mean(ndtr(mu / sigma)))
    masses = _discrete_masses(mu, sigma).mean(axis=0)
    return MarginPrediction(mean, interval, win, dict(zip(OUTCOMES, masses.tolist())))


def predictive_margin(
    draws: PosteriorDraws,
    query: MatchupQuery,
    *,
    plugin: bool = False,
    kind: str = "predictive",
    fixed_scales: tuple[float, float] | None = None,
) -> PredictiveSummary:
    """Margin prediction for player 1 with and without the home terms.

    ``kind="predictive"`` includes the match noise sigma_y in the 68%
    interval; ``kind="mean"`` gives the credible interval of the expected
    margin instead.
    """
    view = _DrawView(draws, fixed_scales)
    if query.model_variant is not None and query.model_variant is not view.spec.variant:
        raise ValueError(
            f"query targets the {query.model_variant.value} model but draws come from "
            f"the {view.spec.variant.value} model"
        )
    return PredictiveSummary(
        query,
        with_home=_predict(view.means(query, True), view.sigma, plugin, kind),
        without_home=_predict(view.means(query, False), view.sigma, plugin, kind),
    )


def matchup_report(
    draws: PosteriorDraws,
    queries: Sequence[MatchupQuery],
    actuals: Sequence[float | None] | None = None,
    **kwargs,
) -> list[dict]:
    """One row per query (input order) in the ``REPORT_COLUMNS`` layout."""
    if actuals is not None and len(actuals) != len(queries):
        raise ValueError("actuals must align with queries")
    rows = []
    for i, q in enumerate(queries):
        s = predictive_margin(draws, q, **kwargs)
        rows.append(
            {
                "label": q.label or f"#{q.rank1} v #{q.rank2}",
                "rank1": q.rank1,
                "rank2": q.rank2,
                "venue": q.venue_country or "",
                "b": q.b,
                "mean_home": s.with_home.mean_margin,
                "lo68_home": s.with_home.interval68[0],
                "hi68_home": s.with_home.interval68[1],
                "mean_nohome": s.without_home.mean_margin,
                "lo68_nohome": s.without_home.interval68[0],
                "hi68_nohome": s.without_home.interval68[1],
                "win_prob_home": s.with_home.win_probability,
                "win_prob_nohome": s.without_home.win_probability,
                "actual": None if actuals is None else actuals[i],
            }
        )
    return rows


def report_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow(
            [
                "" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c])
                for c in REPORT_COLUMNS
            ]
        )
    return buf.getvalue()


_INT_COLS = {"rank1", "rank2", "b"}
_STR_COLS = {"label", "venue"}


def report_from_csv(text: str) -> list[dict]:
    rows = []
    for raw in csv.DictReader(io.StringIO(text)):
        row = {}
        for c in REPORT_COLUMNS:
            v = raw[c]
            if c in _STR_COLS:
                row[c] = v
            elif c in _INT_COLS:
                row[c] = int(v)
            else:
                row[c] = None if v == "" else float(v)
        rows.append(row)
    return rows


def report_to_json(rows: Sequence[dict]) -> str:
    return json.dumps(list(rows), indent=1) + "\n"


def report_from_json(text: str) -> list[dict]:
    return json.loads(text)


def _truthy(v: str) -> bool:
    v = v.strip().lower()
    if v in ("1", "true", "yes", "y"):
        return True
    if v in ("", "0", "false", "no", "n"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def load_queries(path: str | Path) -> tuple[list[MatchupQuery], list[float | None]]:
    """Read matchup queries from CSV.

    Required columns: ``rank1``, ``rank2``.  Optional: ``label``, ``venue``,
    ``p1_home``/``p2_home`` (booleans) or ``country1``/``country2`` (home
    status derived by comparing with ``venue``), and ``actual``.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"query file not found: {path}")
    queries, actuals, problems = [], [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in ("rank1", "rank2") if c not in header]
        if missing:
            raise DataError(f"{path}: missing columns {', '.join(missing)}")
        for rownum, row in enumerate(reader, start=2):
            try:
                get = lambda c: (row.get(c) or "").strip()  # noqa: E731
                venue = normalize_country(get("venue")) if get("venue") else None
                if get("country1") or get("country2"):
                    p1 = venue is not None and normalize_country(get("country1")) == venue
                    p2 = venue is not None and normalize_country(get("country2")) == venue
                else:
                    p1, p2 = _truthy(get("p1_home")), _truthy(get("p2_home"))
                r1, r2 = int(get("rank1")), int(get("rank2"))
                if r1 < 1 or r2 < 1:
                    raise ValueError("ranks must be >= 1")
                queries.append(MatchupQuery(r1, r2, venue, p1, p2, get("label")))
                actuals.append(float(get("actual")) if get("actual") else None)
            except ValueError as exc:
                problems.append((rownum, str(exc)))
    if problems:
        raise DataError(f"{path}: {len(problems)} malformed query row(s)", problems)
    return queries, actuals

