"""Synthetic match data from known parameters, and the fixed-scale conjugate oracle.

With both scales known the model is linear-Gaussian in
``(a[2..R], h, h[C]..., beta, gamma)``, so its posterior has a closed form.
The oracle builds the normal equations directly from the matches, without
going through the density code it is used to check.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .match_data import (
    DEFAULT_TRACKED,
    EncodedDataset,
    EncodedMatch,
    MatchFormat,
    MatchRecord,
    Termination,
    Tour,
    country_indicators,
)
from .model import ModelSpec

# Men's match counts by venue (Egypt, England, U.S., other).
MENS_VENUE_COUNTS = {"EGY": 329, "ENG": 252, "USA": 426, "other": 333}
# Share of matches with exactly one home player, by venue.  The published
# breakdown is not available, so these are chosen to give roughly the
# reported +/-0.1 uncertainty on h at 1,400 matches.
HOME_SHARE = {"EGY": 0.5, "ENG": 0.25, "USA": 0.1, "other": 0.1}
OTHER_VENUES = ("QAT", "FRA", "HKG", "MYS", "NZL", "CAN")


@dataclass
class TrueParams:
    """Generating parameters; ``a`` holds ranks 2..R (rank 1 is 0)."""

    a: list[float]
    h: float
    beta: float
    gamma: float
    sigma_y: float
    sigma_a: float
    country_h: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not (self.sigma_y > 0 and self.sigma_a > 0):
            raise ValueError("sigma_y and sigma_a must be positive")
        self.a = [float(v) for v in self.a]

    @property
    def R(self) -> int:
        return len(self.a) + 1

    @property
    def abilities(self) -> np.ndarray:
        """Abilities indexed by rank (index 0 unused, index 1 is zero)."""
        return np.concatenate([[0.0, 0.0], self.a])

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> TrueParams:
        return cls(**obj)

    def values(self) -> dict[str, float]:
        """Named values in the draw-column naming scheme."""
        out = {f"a[{j}]": v for j, v in enumerate(self.a, start=2)}
        out["h"] = self.h
        out.update({f"h[{c}]": v for c, v in self.country_h.items()})
        out.update(beta=self.beta, gamma=self.gamma, sigma_y=self.sigma_y, sigma_a=self.sigma_a)
        return out


def rank_trend(R: int, beta: float, gamma: float) -> np.ndarray:
    """Prior mean of abilities for ranks 2..R."""
    j = np.arange(1, R, dtype=float)
    return beta * j + gamma * np.sqrt(j)


def default_truth(
    R: int = 30,
    h: float = 0.4,
    sigma_y: float = 1.9,
    sigma_a: float = 0.15,
    beta: float = -0.06,
    gamma: float = -0.4,
    country_h: dict[str, float] | None = None,
    seed: int | None = 0,
) -> TrueParams:
    """Parameters shaped like a top-30 tour: about 0.15 games per rank at the top.

    Abilities are drawn around the rank trend with spread ``sigma_a``; with
    ``seed=None`` they sit exactly on the trend.
    """
    a = rank_trend(R, beta, gamma)
    if seed is not None:
        rng = np.random.default_rng(seed)
        a = a + sigma_a * rng.standard_normal(R - 1)
    return TrueParams(a.tolist(), h, beta, gamma, sigma_y, sigma_a, dict(country_h or {}))


@dataclass(frozen=True)
class ScheduleEntry:
    rank1: int
    rank2: int
    b: int
    b_country: dict[str, int]
    venue: str | None = None


def tour_schedule(
    n: int = 1400,
    R: int = 30,
    seed: int = 0,
    tracked: Sequence[str] = DEFAULT_TRACKED,
    home_share: dict[str, float] | None = None,
) -> list[ScheduleEntry]:
    """Matchups with the venue mix of the men's tour data.

    The higher-ranked player is listed first; better-ranked players appear
    more often (weight proportional to 1/sqrt(rank)).
    """
    if n < 1 or R < 2:
        raise ValueError("need n >= 1 and R >= 2")
    share = HOME_SHARE | (home_share or {})
    rng = np.random.default_rng(seed)
    groups = list(MENS_VENUE_COUNTS)
    probs = np.array([MENS_VENUE_COUNTS[g] for g in groups], dtype=float)
    probs /= probs.sum()
    weights = 1.0 / np.sqrt(np.arange(1, R + 1))
    weights /= weights.sum()
    out = []
    for _ in range(n):
        group = groups[rng.choice(len(groups), p=probs)]
        venue = OTHER_VENUES[rng.integers(len(OTHER_VENUES))] if group == "other" else group
        r1, r2 = sorted(int(v) + 1 for v in rng.choice(R, size=2, replace=False, p=weights))
        b = 0
        if rng.random() < share[group]:
            b = 1 if rng.random() < 0.5 else -1
        out.append(ScheduleEntry(r1, r2, b, country_indicators(b, venue, tracked), venue))
    return out


def round_margin(y: np.ndarray) -> np.ndarray:
    """Nearest squash margin: +-1, +-2 or +-3 (never 0)."""
    y = np.asarray(y, dtype=float)
    mag = np.clip(np.floor(np.abs(y) + 0.5), 1, 3)
    return np.where(y < 0, -mag, mag)


def generate(
    truth: TrueParams,
    schedule: Sequence[ScheduleEntry],
    seed: int,
    discretize: bool = True,
    tracked: Sequence[str] | None = None,
) -> EncodedDataset:
    """Draw margins ``y ~ normal(mean, sigma_y)`` for each scheduled match."""
    R = truth.R
    if tracked is None:
        tracked = tuple(schedule[0].b_country) if schedule else DEFAULT_TRACKED
    tracked = tuple(tracked)
    ab = truth.abilities
    means = np.empty(len(schedule))
    for i, s in enumerate(schedule):
        if not (1 <= s.rank1 <= R and 1 <= s.rank2 <= R) or s.b not in (-1, 0, 1):
            raise ValueError(f"invalid schedule entry {i}: {s}")
        if set(s.b_country) != set(tracked):
            raise ValueError(f"schedule entry {i} does not index countries {tracked}")
        mu = ab[s.rank1] - ab[s.rank2] + truth.h * s.b
        mu += sum(truth.country_h.get(c, 0.0) * v for c, v in s.b_country.items())
        means[i] = mu
    rng = np.random.default_rng(seed)
    y = means + truth.sigma_y * rng.standard_normal(len(schedule))
    if discretize:
        y = round_margin(y)
    matches = [
        EncodedMatch(s.rank1, s.rank2, s.b, dict(s.b_country), float(v), s.venue)
        for s, v in zip(schedule, y)
    ]
    return EncodedDataset(matches, R, tracked, {})


_SCORES = {3: (3, 0), 2: (3, 1), 1: (3, 2)}
_FILLER = ("FRA", "HKG")


def to_records(data: EncodedDataset, start: dt.date = dt.date(2019, 1, 1)) -> list[MatchRecord]:
    """Raw records consistent with a discrete synthetic dataset.

    Player countries are chosen so that re-encoding reproduces ``b``.
    """
    out = []
    for i, m in enumerate(data.matches):
        if m.y not in (-3, -2, -1, 1, 2, 3) or m.venue_country is None:
            raise ValueError(f"match {i}: needs a discrete margin and a venue")
        away = _FILLER[0] if m.venue_country != _FILLER[0] else _FILLER[1]
        c1 = m.venue_country if m.b == 1 else away
        c2 = m.venue_country if m.b == -1 else away
        g1, g2 = _SCORES[abs(int(m.y))]
        if m.y < 0:
            g1, g2 = g2, g1
        out.append(
            MatchRecord(
                match_id=f"syn{i + 1:05d}",
                date=start + dt.timedelta(days=i),
                player1_name=f"Rank {m.rank1} player",
                player2_name=f"Rank {m.rank2} player",
                player1_country=c1,
                player2_country=c2,
                venue_country=m.venue_country,
                player1_rank=m.rank1,
                player2_rank=m.rank2,
                games_won_p1=g1,
                games_won_p2=g2,
                format=MatchFormat.BestOf5,
                termination=Termination.Completed,
                tour=Tour.Other,
            )
        )
    return out


@dataclass
class OracleResult:
    names: list[str]
    mean: np.ndarray
    cov: np.ndarray

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))


def conjugate_oracle(
    data: EncodedDataset, spec: ModelSpec, sigma_y: float, sigma_a: float
) -> OracleResult:
    """Exact posterior of the Gaussian coordinates with both scales known.

    The ability prior ``a_j ~ normal(beta (j-1) + gamma sqrt(j-1), sigma_a)``
    enters as a pseudo-observation ``0 = a_j - beta (j-1) - gamma sqrt(j-1)``
    with noise ``sigma_a``.  Works on an empty dataset (prior only).
    """
    if not (sigma_y > 0 and sigma_a > 0):
        raise ValueError("scales must be positive")
    R, tracked = spec.R, list(spec.tracked_countries)
    k = len(tracked)
    d = R - 1 + 1 + k + 2
    i_h, i_beta, i_gamma = R - 1, R + k, R + k + 1
    precision = np.zeros((d, d))
    shift = np.zeros(d)

    for m in data.matches:
        x = np.zeros(d)
        if m.rank1 > 1:
            x[m.rank1 - 2] += 1.0
        if m.rank2 > 1:
            x[m.rank2 - 2] -= 1.0
        x[i_h] = m.b
        for i, c in enumerate(tracked):
            x[R + i] = m.b_country[c]
        precision += np.outer(x, x) / sigma_y**2
        shift += x * m.y / sigma_y**2

    for j in range(2, R + 1):
        row = np.zeros(d)
        row[j - 2] = 1.0
        row[i_beta] = -(j - 1)
        row[i_gamma] = -math.sqrt(j - 1)
        precision += np.outer(row, row) / sigma_a**2

    precision[i_h, i_h] += 1.0 / spec.h_scale**2
    for i in range(k):
        precision[R + i, R + i] += 1.0 / spec.country_scale**2
    precision[i_beta, i_beta] += 1.0 / spec.beta_scale**2
    precision[i_gamma, i_gamma] += 1.0 / spec.gamma_scale**2

    try:
        chol = np.linalg.cholesky(precision)
    except np.linalg.LinAlgError:
        raise ValueError("oracle precision matrix is not positive definite") from None
    eye = np.eye(d)
    inv_chol = np.linalg.solve(chol, eye)
    cov = inv_chol.T @ inv_chol
    cov = 0.5 * (cov + cov.T)
    mean = cov @ shift
    names = [f"a[{j}]" for j in range(2, R + 1)] + ["h"]
    names += [f"h[{c}]" for c in tracked] + ["beta", "gamma"]
    return OracleResult(names, mean, cov)


def save_truth(truth: TrueParams, path: str | Path) -> None:
    Path(path).write_text(json.dumps(truth.to_json(), indent=1) + "\n", encoding="utf-8")


def load_truth(path: str | Path) -> TrueParams:
    return TrueParams.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
