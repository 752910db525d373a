"""Match ingestion, inclusion rules and model-ready encoding.

A raw match is a :class:`MatchRecord`.  After :func:`filter_matches` the
records are turned into :class:`EncodedMatch` rows (rank indices, home
indicators, margin in games) collected in an :class:`EncodedDataset`.
"""

from __future__ import annotations

import csv
import datetime as dt
import enum
import json
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pycountry

DEFAULT_MAX_RANK = 30
DEFAULT_TRACKED = ("EGY", "ENG", "USA")

# Squash federations list the UK home nations separately.
_EXTRA_CODES = {"ENG", "SCO", "WAL", "NIR"}
COUNTRY_CODES = frozenset({c.alpha_3 for c in pycountry.countries} | _EXTRA_CODES)

CSV_COLUMNS = (
    "date",
    "player1",
    "player2",
    "country1",
    "country2",
    "venue_country",
    "rank1",
    "rank2",
    "games1",
    "games2",
    "format",
    "termination",
    "tour",
)

RETIRED_OR_WALKOVER = "retirement/walkover"
RANK_CUTOFF = "rank cutoff"


class DataError(ValueError):
    """Raised for unreadable or invalid match data.

    ``problems`` holds one ``(row_number, message)`` pair per offending row
    (row numbers count the header as row 1).
    """

    def __init__(self, message: str, problems: Sequence[tuple[int, str]] = ()):
        self.problems = list(problems)
        if self.problems:
            detail = "; ".join(f"row {n}: {msg}" for n, msg in self.problems[:20])
            if len(self.problems) > 20:
                detail += f"; ... ({len(self.problems) - 20} more)"
            message = f"{message}: {detail}"
        super().__init__(message)


class MatchFormat(enum.Enum):
    BestOf5 = "BestOf5"
    BestOf3 = "BestOf3"

    @property
    def games_to_win(self) -> int:
        return 3 if self is MatchFormat.BestOf5 else 2


class Termination(enum.Enum):
    Completed = "Completed"
    Retired = "Retired"
    Walkover = "Walkover"


class Tour(enum.Enum):
    Bronze = "Bronze"
    Silver = "Silver"
    Gold = "Gold"
    Platinum = "Platinum"
    WorldChampionship = "WorldChampionship"
    TourFinals = "TourFinals"
    Other = "Other"


_FORMAT_ALIASES = {
    "bestof5": MatchFormat.BestOf5,
    "bo5": MatchFormat.BestOf5,
    "5": MatchFormat.BestOf5,
    "bestof3": MatchFormat.BestOf3,
    "bo3": MatchFormat.BestOf3,
    "3": MatchFormat.BestOf3,
}
_TERMINATION_ALIASES = {
    "completed": Termination.Completed,
    "complete": Termination.Completed,
    "retired": Termination.Retired,
    "ret": Termination.Retired,
    "rtd": Termination.Retired,
    "walkover": Termination.Walkover,
    "wo": Termination.Walkover,
    "w/o": Termination.Walkover,
}
_TOUR_ALIASES = {t.value.lower(): t for t in Tour} | {
    "worldchampionships": Tour.WorldChampionship,
    "worlds": Tour.WorldChampionship,
    "worldtourfinals": Tour.TourFinals,
    "finals": Tour.TourFinals,
}


def _key(text: str) -> str:
    return "".join(text.lower().split()).replace("-", "").replace("_", "")


def parse_format(text: str) -> MatchFormat:
    try:
        return _FORMAT_ALIASES[_key(text)]
    except KeyError:
        raise ValueError(f"unknown match format {text!r}") from None


def parse_termination(text: str) -> Termination:
    try:
        return _TERMINATION_ALIASES[_key(text)]
    except KeyError:
        raise ValueError(f"unknown termination {text!r}") from None


def parse_tour(text: str) -> Tour:
    return _TOUR_ALIASES.get(_key(text), Tour.Other)


def normalize_country(code: str) -> str:
    """Upper-case and validate a three-letter country code."""
    norm = code.strip().upper()
    if norm not in COUNTRY_CODES:
        raise ValueError(f"unknown country code {code!r}")
    return norm


def check_score(games1: int, games2: int, fmt: MatchFormat) -> None:
    """Raise ``ValueError`` unless the score is a finished match in ``fmt``."""
    need = fmt.games_to_win
    hi, lo = max(games1, games2), min(games1, games2)
    if lo < 0 or hi != need or lo >= need:
        raise ValueError(f"invalid {fmt.value} score {games1}-{games2}")


@dataclass(frozen=True)
class MatchRecord:
    match_id: str
    date: dt.date
    player1_name: str
    player2_name: str
    player1_country: str
    player2_country: str
    venue_country: str
    player1_rank: int
    player2_rank: int
    games_won_p1: int
    games_won_p2: int
    format: MatchFormat = MatchFormat.BestOf5
    termination: Termination = Termination.Completed
    tour: Tour = Tour.Other

    def __post_init__(self):
        if self.player1_rank < 1 or self.player2_rank < 1:
            raise ValueError("world rankings must be >= 1")
        if self.games_won_p1 < 0 or self.games_won_p2 < 0:
            raise ValueError("games won must be non-negative")
        if self.termination is Termination.Completed:
            check_score(self.games_won_p1, self.games_won_p2, self.format)

    def swapped(self) -> MatchRecord:
        """The same match with player 1 and player 2 exchanged."""
        return replace(
            self,
            player1_name=self.player2_name,
            player2_name=self.player1_name,
            player1_country=self.player2_country,
            player2_country=self.player1_country,
            player1_rank=self.player2_rank,
            player2_rank=self.player1_rank,
            games_won_p1=self.games_won_p2,
            games_won_p2=self.games_won_p1,
        )


def load_matches(
    path: str | Path, schema: Mapping[str, str] | None = None
) -> list[MatchRecord]:
    """Read match records from a CSV file.

    Parameters
    ----------
    path : str or Path
        UTF-8 CSV file with a header row.
    schema : mapping, optional
        Maps canonical column names (see ``CSV_COLUMNS``) to the names used
        in the file.  Unmapped columns keep their canonical name.  An optional
        ``match_id`` column is used when present, otherwise the row number.

    Raises
    ------
    DataError
        If the file is missing, required columns are absent, or any row fails
        to parse.  All offending rows are reported together.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"match file not found: {path}")
    cols = {name: name for name in (*CSV_COLUMNS, "match_id")}
    cols.update(schema or {})

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [cols[c] for c in CSV_COLUMNS if cols[c] not in header]
        if missing:
            raise DataError(f"{path}: missing columns {', '.join(missing)}")
        has_id = cols["match_id"] in header

        records, problems = [], []
        for rownum, row in enumerate(reader, start=2):
            get = lambda c: (row.get(cols[c]) or "").strip()  # noqa: E731
            try:
                records.append(
                    MatchRecord(
                        match_id=get("match_id") if has_id else str(rownum - 1),
                        date=dt.date.fromisoformat(get("date")),
                        player1_name=get("player1"),
                        player2_name=get("player2"),
                        player1_country=normalize_country(get("country1")),
                        player2_country=normalize_country(get("country2")),
                        venue_country=normalize_country(get("venue_country")),
                        player1_rank=int(get("rank1")),
                        player2_rank=int(get("rank2")),
                        games_won_p1=int(get("games1")),
                        games_won_p2=int(get("games2")),
                        format=parse_format(get("format")),
                        termination=parse_termination(get("termination")),
                        tour=parse_tour(get("tour")),
                    )
                )
            except ValueError as exc:
                problems.append((rownum, str(exc)))
    if problems:
        raise DataError(f"{path}: {len(problems)} malformed row(s)", problems)
    return records


def write_matches(records: Iterable[MatchRecord], path: str | Path) -> None:
    """Write records in the canonical CSV layout read by :func:`load_matches`."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("match_id", *CSV_COLUMNS))
        for r in records:
            writer.writerow(
                (
                    r.match_id,
                    r.date.isoformat(),
                    r.player1_name,
                    r.player2_name,
                    r.player1_country,
                    r.player2_country,
                    r.venue_country,
                    r.player1_rank,
                    r.player2_rank,
                    r.games_won_p1,
                    r.games_won_p2,
                    r.format.value,
                    r.termination.value,
                    r.tour.value,
                )
            )


def filter_matches(
    records: Iterable[MatchRecord], max_rank: int = DEFAULT_MAX_RANK
) -> tuple[list[MatchRecord], dict[str, int]]:
    """Keep completed matches between players ranked ``<= max_rank``.

    Returns the retained records and exclusion counts keyed by reason.  A
    record failing both rules is counted once, under retirement/walkover.
    """
    if max_rank < 1:
        raise ValueError("max_rank must be >= 1")
    kept = []
    excluded = {RETIRED_OR_WALKOVER: 0, RANK_CUTOFF: 0}
    for r in records:
        if r.termination is not Termination.Completed:
            excluded[RETIRED_OR_WALKOVER] += 1
        elif max(r.player1_rank, r.player2_rank) > max_rank:
            excluded[RANK_CUTOFF] += 1
        else:
            kept.append(r)
    return kept, excluded


def encode_home(p1_country: str, p2_country: str, venue_country: str) -> int:
    """+1 if only player 1 is at home, -1 if only player 2 is, else 0."""
    venue = venue_country.strip().upper()
    home1 = p1_country.strip().upper() == venue
    home2 = p2_country.strip().upper() == venue
    return int(home1) - int(home2)


def encode_margin(games_won_p1: int, games_won_p2: int, fmt: MatchFormat) -> float:
    """Games margin for player 1; best-of-3 margins are scaled by 1.5."""
    check_score(games_won_p1, games_won_p2, fmt)
    y = float(games_won_p1 - games_won_p2)
    return 1.5 * y if fmt is MatchFormat.BestOf3 else y


@dataclass(frozen=True)
class EncodedMatch:
    rank1: int
    rank2: int
    b: int
    b_country: Mapping[str, int]
    y: float
    venue_country: str | None = None

    def swapped(self) -> EncodedMatch:
        return EncodedMatch(
            rank1=self.rank2,
            rank2=self.rank1,
            b=-self.b,
            b_country={c: -v for c, v in self.b_country.items()},
            y=-self.y,
            venue_country=self.venue_country,
        )


def country_indicators(b: int, venue: str | None, tracked: Sequence[str]) -> dict[str, int]:
    return {c: (b if venue == c else 0) for c in tracked}


@dataclass
class EncodedDataset:
    """Model-ready matches.

    ``provenance`` records how many raw records each inclusion rule removed.
    """

    matches: list[EncodedMatch]
    R: int = DEFAULT_MAX_RANK
    tracked_countries: tuple[str, ...] = DEFAULT_TRACKED
    provenance: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.tracked_countries = tuple(self.tracked_countries)
        if self.R < 1:
            raise ValueError("R must be >= 1")
        for i, m in enumerate(self.matches):
            if not (1 <= m.rank1 <= self.R and 1 <= m.rank2 <= self.R):
                raise ValueError(f"match {i}: rank index outside [1, {self.R}]")
            if m.b not in (-1, 0, 1):
                raise ValueError(f"match {i}: home indicator must be -1, 0 or 1")
            missing = set(self.tracked_countries) - set(m.b_country)
            if missing:
                raise ValueError(f"match {i}: no indicator for {sorted(missing)}")

    def __len__(self) -> int:
        return len(self.matches)

    def arrays(self) -> dict[str, np.ndarray]:
        """Column arrays: ``rank1``, ``rank2``, ``b``, ``y`` and ``b_<code>``."""
        out = {
            "rank1": np.array([m.rank1 for m in self.matches], dtype=np.int64),
            "rank2": np.array([m.rank2 for m in self.matches], dtype=np.int64),
            "b": np.array([m.b for m in self.matches], dtype=np.int64),
            "y": np.array([m.y for m in self.matches], dtype=float),
        }
        for c in self.tracked_countries:
            out[f"b_{c.lower()}"] = np.array(
                [m.b_country[c] for m in self.matches], dtype=np.int64
            )
        return out

    def swapped(self) -> EncodedDataset:
        return replace(self, matches=[m.swapped() for m in self.matches])

    def to_json(self) -> dict:
        cols = {k: v.tolist() for k, v in self.arrays().items()}
        return {
            "R": self.R,
            "nmatches": len(self),
            "tracked_countries": list(self.tracked_countries),
            **cols,
            "venue": [m.venue_country for m in self.matches],
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> EncodedDataset:
        required = ["rank1", "rank2", "b", "y"]
        tracked = tuple(obj.get("tracked_countries", ()))
        required += [f"b_{c.lower()}" for c in tracked]
        missing = [k for k in required if k not in obj]
        if missing:
            raise DataError(f"encoded dataset missing columns {', '.join(missing)}")
        n = len(obj["y"])
        venue = obj.get("venue") or [None] * n
        matches = [
            EncodedMatch(
                rank1=int(obj["rank1"][i]),
                rank2=int(obj["rank2"][i]),
                b=int(obj["b"][i]),
                b_country={c: int(obj[f"b_{c.lower()}"][i]) for c in tracked},
                y=float(obj["y"][i]),
                venue_country=venue[i],
            )
            for i in range(n)
        ]
        R = int(obj.get("R", DEFAULT_MAX_RANK))
        return cls(matches, R, tracked, dict(obj.get("provenance", {})))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> EncodedDataset:
        path = Path(path)
        if not path.is_file():
            raise DataError(f"dataset file not found: {path}")
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_json(obj)

    def require_countries(self, countries: Sequence[str]) -> None:
        """Raise :class:`DataError` naming any country indicator not present."""
        missing = [f"b_{c.lower()}" for c in countries if c not in self.tracked_countries]
        if missing:
            raise DataError(f"dataset lacks country columns {', '.join(missing)}")


def encode_match(r: MatchRecord, tracked: Sequence[str] = DEFAULT_TRACKED) -> EncodedMatch:
    b = encode_home(r.player1_country, r.player2_country, r.venue_country)
    return EncodedMatch(
        rank1=r.player1_rank,
        rank2=r.player2_rank,
        b=b,
        b_country=country_indicators(b, r.venue_country, tracked),
        y=encode_margin(r.games_won_p1, r.games_won_p2, r.format),
        venue_country=r.venue_country,
    )


def encode_dataset(
    records: Sequence[MatchRecord],
    R: int = DEFAULT_MAX_RANK,
    tracked_countries: Sequence[str] = DEFAULT_TRACKED,
    provenance: Mapping[str, int] | None = None,
) -> EncodedDataset:
    if not records:
        raise DataError("no matches after filtering")
    tracked = tuple(c.upper() for c in tracked_countries)
    matches = [encode_match(r, tracked) for r in records]
    return EncodedDataset(matches, R, tracked, dict(provenance or {}))


VENUE_GROUPS = {"EGY": "Egypt", "ENG": "England", "USA": "U.S."}


def count_matches(
    data: EncodedDataset | Iterable[MatchRecord],
) -> dict[str, dict[str, int]]:
    """Match counts by venue group and whether one player was at home.

    Groups are Egypt, England, U.S. and other; each has ``total`` and
    ``home`` counts.
    """
    table = {g: {"total": 0, "home": 0} for g in (*VENUE_GROUPS.values(), "other")}
    if isinstance(data, EncodedDataset):
        rows = [(m.venue_country, m.b) for m in data.matches]
        if any(v is None for v, _ in rows):
            raise DataError("dataset has no venue information")
    else:
        rows = [
            (r.venue_country, encode_home(r.player1_country, r.player2_country, r.venue_country))
            for r in data
        ]
    for venue, b in rows:
        cell = table[VENUE_GROUPS.get(venue, "other")]
        cell["total"] += 1
        cell["home"] += b != 0
    return table


def head_to_head(
    records: EncodedDataset | Iterable[MatchRecord], top_n: int = 10
) -> dict[tuple[int, int], tuple[int, int]]:
    """Wins by the higher-ranked player for every rank pair within ``top_n``.

    Keys are ``(i, j)`` with ``i < j``; values are ``(wins by rank i, total)``.
    Pairs that never met are absent.  Only completed matches count.
    """
    if top_n < 2:
        raise ValueError("top_n must be >= 2")
    if isinstance(records, EncodedDataset):
        results = [(m.rank1, m.rank2, m.y > 0) for m in records.matches]
    else:
        results = [
            (r.player1_rank, r.player2_rank, r.games_won_p1 > r.games_won_p2)
            for r in records
            if r.termination is Termination.Completed
        ]
    cells: Counter = Counter()
    wins: Counter = Counter()
    for r1, r2, p1_won in results:
        if r1 == r2:
            continue
        if r1 > r2:
            r1, r2, p1_won = r2, r1, not p1_won
        if r2 > top_n:
            continue
        cells[r1, r2] += 1
        wins[r1, r2] += p1_won
    return {k: (wins[k], cells[k]) for k in sorted(cells)}
