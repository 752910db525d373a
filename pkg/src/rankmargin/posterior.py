"""Posterior summaries: effect sizes, ability-by-rank curves and rank gaps."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .hmc import PosteriorDraws

QUANTILES = (0.05, 0.16, 0.50, 0.84, 0.95)
SUMMARY_COLUMNS = ("name", "mean", "sd", "q5", "q16", "q50", "q84", "q95")


@dataclass(frozen=True)
class ParameterSummary:
    name: str
    mean: float
    sd: float
    q5: float
    q16: float
    q50: float
    q84: float
    q95: float


def summarize_values(name: str, values: np.ndarray) -> ParameterSummary:
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise ValueError(f"no draws for {name}")
    if np.ptp(values) == 0.0:
        v = float(values[0])
        return ParameterSummary(name, v, 0.0, v, v, v, v, v)
    q = np.quantile(values, QUANTILES)
    # guard against rounding in interpolation breaking the ordering
    q = np.maximum.accumulate(q)
    sd = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return ParameterSummary(name, float(np.mean(values)), sd, *map(float, q))


def summarize(draws: PosteriorDraws) -> list[ParameterSummary]:
    """Mean, sd and quantiles of every parameter with all chains pooled."""
    pooled = draws.pooled()
    return [summarize_values(n, pooled[:, i]) for i, n in enumerate(draws.names)]


def summary_table(summaries: Sequence[ParameterSummary]) -> dict[str, ParameterSummary]:
    return {s.name: s for s in summaries}


def write_summaries_csv(summaries: Sequence[ParameterSummary], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for s in summaries:
            w.writerow([s.name] + [repr(getattr(s, c)) for c in SUMMARY_COLUMNS[1:]])


def read_summaries_csv(path: str | Path) -> list[ParameterSummary]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [
            ParameterSummary(row["name"], *(float(row[c]) for c in SUMMARY_COLUMNS[1:]))
            for row in csv.DictReader(fh)
        ]


def summaries_json(summaries: Sequence[ParameterSummary]) -> str:
    return json.dumps([asdict(s) for s in summaries], indent=1) + "\n"


@dataclass(frozen=True)
class AbilityPoint:
    rank: int
    mean: float
    sd: float
    q16: float
    q84: float


def ability_curve(draws: PosteriorDraws) -> list[AbilityPoint]:
    """Posterior ability of each ranking slot, rank 1 being the fixed zero.

    Both the +/- one sd band and the 16%-84% quantile band are reported.
    """
    ranks = sorted(int(n[2:-1]) for n in draws.names if n.startswith("a["))
    if not ranks:
        raise ValueError("draws contain no abilities")
    pooled = draws.pooled()
    curve = [AbilityPoint(1, 0.0, 0.0, 0.0, 0.0)]
    for j in ranks:
        s = summarize_values(f"a[{j}]", pooled[:, draws.names.index(f"a[{j}]")])
        curve.append(AbilityPoint(j, s.mean, s.sd, s.q16, s.q84))
    return curve


def mean_rank_gap(curve: Sequence[AbilityPoint], top_n: int) -> float:
    """Average absolute ability difference between neighbouring ranks 1..top_n.

    For a monotone curve this equals (ability(1) - ability(top_n)) / (top_n - 1)
    in absolute value.
    """
    if top_n < 2:
        raise ValueError("top_n must be >= 2")
    by_rank = {p.rank: p.mean for p in curve}
    if any(j not in by_rank for j in range(1, top_n + 1)):
        raise ValueError(f"curve does not cover ranks 1..{top_n}")
    means = np.array([by_rank[j] for j in range(1, top_n + 1)])
    return float(np.mean(np.abs(np.diff(means))))


def write_ability_curve_csv(curve: Sequence[AbilityPoint], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("rank", "mean", "sd", "lo_sd", "hi_sd", "q16", "q84"))
        for p in curve:
            w.writerow(
                (p.rank, repr(p.mean), repr(p.sd), repr(p.mean - p.sd), repr(p.mean + p.sd),
                 repr(p.q16), repr(p.q84))
            )
