import datetime as dt
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from rankmargin.match_data import (
    CSV_COLUMNS,
    RANK_CUTOFF,
    RETIRED_OR_WALKOVER,
    DataError,
    EncodedDataset,
    MatchFormat,
    MatchRecord,
    Termination,
    count_matches,
    encode_dataset,
    encode_home,
    encode_margin,
    encode_match,
    filter_matches,
    head_to_head,
    load_matches,
    write_matches,
)

HEADER = ",".join(CSV_COLUMNS)


def row(**kw):
    base = dict(
        date="2023-10-01", player1="A", player2="B", country1="EGY", country2="PER",
        venue_country="EGY", rank1="1", rank2="2", games1="3", games2="1",
        format="BestOf5", termination="Completed", tour="Platinum",
    )
    base.update(kw)
    return ",".join(base[c] for c in CSV_COLUMNS)


def write_csv(tmp_path, *rows):
    p = tmp_path / "m.csv"
    p.write_text("\n".join([HEADER, *rows]) + "\n", encoding="utf-8")
    return p


def rec(r1=1, r2=2, c1="EGY", c2="FRA", venue="EGY", g1=3, g2=1,
        fmt=MatchFormat.BestOf5, term=Termination.Completed):
    return MatchRecord("x", dt.date(2020, 1, 1), "A", "B", c1, c2, venue, r1, r2, g1, g2, fmt, term)


# -- load_matches ---------------------------------------------------------------


def test_load_basic_row(tmp_path):
    (r,) = load_matches(write_csv(tmp_path, row()))
    assert (r.games_won_p1, r.games_won_p2) == (3, 1)
    assert r.format is MatchFormat.BestOf5
    assert r.termination is Termination.Completed
    assert r.date == dt.date(2023, 10, 1)


def test_load_retired(tmp_path):
    (r,) = load_matches(write_csv(tmp_path, row(termination="retired", games1="1", games2="0")))
    assert r.termination is Termination.Retired


def test_rank_zero_is_row_error(tmp_path):
    with pytest.raises(DataError) as exc:
        load_matches(write_csv(tmp_path, row(), row(rank1="0")))
    assert [n for n, _ in exc.value.problems] == [3]


def test_all_bad_rows_listed(tmp_path):
    p = write_csv(tmp_path, row(date="yesterday"), row(), row(games1="x"), row(games1="2"))
    with pytest.raises(DataError) as exc:
        load_matches(p)
    assert [n for n, _ in exc.value.problems] == [2, 4, 5]
    assert "row 2" in str(exc.value)


def test_unknown_country(tmp_path):
    with pytest.raises(DataError, match="unknown country"):
        load_matches(write_csv(tmp_path, row(country2="XYZ")))


def test_country_codes_normalized(tmp_path):
    (r,) = load_matches(write_csv(tmp_path, row(country1="egy", venue_country=" Egy")))
    assert r.player1_country == "EGY" and r.venue_country == "EGY"


def test_missing_file(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_matches(tmp_path / "nope.csv")


def test_missing_columns_named(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("date,player1\n2020-01-01,A\n")
    with pytest.raises(DataError, match="country1"):
        load_matches(p)


def test_schema_mapping(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text(HEADER.replace("rank1", "WR1") + "\n" + row() + "\n")
    (r,) = load_matches(p, {"rank1": "WR1"})
    assert r.player1_rank == 1


def test_write_then_load_roundtrip(tmp_path):
    records = [rec(), rec(5, 9, g1=1, g2=3, fmt=MatchFormat.BestOf5),
               rec(2, 3, g1=2, g2=1, fmt=MatchFormat.BestOf3)]
    write_matches(records, tmp_path / "out.csv")
    assert load_matches(tmp_path / "out.csv") == records


# -- filter_matches -------------------------------------------------------------


def test_filter_rules():
    keep = rec(5, 12)
    walkover = rec(1, 2, g1=0, g2=0, term=Termination.Walkover)
    cutoff = rec(8, 31)
    kept, excluded = filter_matches([keep, walkover, cutoff], 30)
    assert kept == [keep]
    assert excluded == {RETIRED_OR_WALKOVER: 1, RANK_CUTOFF: 1}


def test_filter_bad_max_rank():
    with pytest.raises(ValueError):
        filter_matches([], 0)


# -- encoding -------------------------------------------------------------------


@pytest.mark.parametrize(
    "c1,c2,venue,b",
    [("EGY", "PER", "EGY", 1), ("EGY", "EGY", "EGY", 0), ("FRA", "EGY", "EGY", -1),
     ("FRA", "PER", "EGY", 0), ("egy", "PER", "EGY", 1)],
)
def test_encode_home(c1, c2, venue, b):
    assert encode_home(c1, c2, venue) == b


@pytest.mark.parametrize(
    "g1,g2,fmt,y",
    [(3, 0, MatchFormat.BestOf5, 3.0), (2, 1, MatchFormat.BestOf3, 1.5),
     (0, 3, MatchFormat.BestOf5, -3.0), (0, 2, MatchFormat.BestOf3, -3.0)],
)
def test_encode_margin(g1, g2, fmt, y):
    assert encode_margin(g1, g2, fmt) == y


@pytest.mark.parametrize("g1,g2,fmt", [(3, 3, MatchFormat.BestOf5), (2, 1, MatchFormat.BestOf5),
                                        (3, 0, MatchFormat.BestOf3), (4, 0, MatchFormat.BestOf5)])
def test_encode_margin_invalid(g1, g2, fmt):
    with pytest.raises(ValueError):
        encode_margin(g1, g2, fmt)


def test_encode_dataset_tracked_venue():
    ds = encode_dataset([rec(1, 4, "EGY", "FRA", "EGY")])
    (m,) = ds.matches
    assert m.b == 1 and m.b_country == {"EGY": 1, "ENG": 0, "USA": 0}


def test_encode_dataset_untracked_venue():
    (m,) = encode_dataset([rec(1, 4, "QAT", "FRA", "QAT")]).matches
    assert m.b == 1 and set(m.b_country.values()) == {0}


def test_encode_dataset_sizes_and_empty():
    assert len(encode_dataset([rec(), rec(3, 4)])) == 2
    with pytest.raises(DataError, match="no matches after filtering"):
        encode_dataset([])


def test_encoded_json_mirrors_stan_data(tmp_path):
    ds = encode_dataset([rec(), rec(3, 7, "FRA", "ENG", "ENG", 1, 3)], provenance={RANK_CUTOFF: 2})
    obj = ds.to_json()
    for key in ("rank1", "rank2", "b", "b_egy", "b_eng", "b_usa", "y"):
        assert len(obj[key]) == 2
    assert obj["b_eng"] == [0, -1] and obj["y"] == [2.0, -2.0]
    ds.save(tmp_path / "d.json")
    back = EncodedDataset.load(tmp_path / "d.json")
    assert back.matches == ds.matches and back.provenance == {RANK_CUTOFF: 2}


def test_require_countries_names_columns():
    ds = EncodedDataset.from_json({"rank1": [1], "rank2": [2], "b": [0], "y": [1.0], "R": 30,
                                   "tracked_countries": []})
    with pytest.raises(DataError, match="b_egy, b_eng, b_usa"):
        ds.require_countries(["EGY", "ENG", "USA"])


def test_from_json_missing_columns():
    with pytest.raises(DataError, match="b_egy"):
        EncodedDataset.from_json({"rank1": [1], "rank2": [2], "b": [0], "y": [1.0],
                                  "tracked_countries": ["EGY"]})


def test_rank_outside_R_rejected():
    with pytest.raises(ValueError):
        encode_dataset([rec(1, 31)], R=30)


# -- properties -----------------------------------------------------------------

countries = st.sampled_from(["EGY", "ENG", "USA", "FRA", "QAT"])
scores = st.sampled_from(
    [(3, 0, MatchFormat.BestOf5), (3, 1, MatchFormat.BestOf5), (2, 3, MatchFormat.BestOf5),
     (0, 3, MatchFormat.BestOf5), (2, 0, MatchFormat.BestOf3), (1, 2, MatchFormat.BestOf3)]
)
records = st.builds(
    lambda r1, r2, c1, c2, v, s: rec(r1, r2, c1, c2, v, s[0], s[1], s[2]),
    st.integers(1, 30), st.integers(1, 30), countries, countries, countries, scores,
)


@given(countries, countries, countries)
def test_encode_home_antisymmetric(c1, c2, v):
    assert encode_home(c1, c2, v) == -encode_home(c2, c1, v)


@given(records)
def test_swap_negates_encoding(r):
    m, s = encode_match(r), encode_match(r.swapped())
    assert s.b == -m.b and s.y == -m.y
    assert s.b_country == {c: -v for c, v in m.b_country.items()}
    assert (s.rank1, s.rank2) == (m.rank2, m.rank1)


@given(records)
def test_margin_closure_and_country_indicator(r):
    m = encode_match(r)
    assert m.y in {-3, -2, -1, 1, 2, 3, -1.5, 1.5}
    nonzero = [c for c, v in m.b_country.items() if v != 0]
    assert len(nonzero) <= 1
    for c in nonzero:
        assert m.b != 0 and r.venue_country == c and m.b_country[c] == m.b


@given(st.lists(st.tuples(records, st.sampled_from(list(Termination))), max_size=30),
       st.integers(1, 30))
def test_filter_soundness(items, max_rank):
    recs = []
    for r, term in items:
        recs.append(rec(r.player1_rank, r.player2_rank, g1=r.games_won_p1, g2=r.games_won_p2,
                        fmt=r.format, term=term))
    kept, excluded = filter_matches(recs, max_rank)
    assert all(r.termination is Termination.Completed for r in kept)
    assert all(max(r.player1_rank, r.player2_rank) <= max_rank for r in kept)
    assert sum(excluded.values()) == len(recs) - len(kept)


# -- reporting tables -----------------------------------------------------------


def test_count_matches_egypt():
    recs = [rec(1, 2, "EGY", "FRA", "EGY"), rec(3, 4, "FRA", "EGY", "EGY"),
            rec(5, 6, "FRA", "PER", "EGY")]
    table = count_matches(recs)
    assert table["Egypt"] == {"total": 3, "home": 2}
    assert table["other"] == {"total": 0, "home": 0}
    assert count_matches(encode_dataset(recs)) == table


def test_count_matches_empty():
    assert all(c == {"total": 0, "home": 0} for c in count_matches([]).values())


def test_head_to_head():
    assert head_to_head([rec(1, 2, g1=3, g2=0)]) == {(1, 2): (1, 1)}
    split = [rec(3, 7, g1=3, g2=2), rec(7, 3, g1=3, g2=1)]
    assert head_to_head(split)[(3, 7)] == (1, 2)
    assert (1, 5) not in head_to_head(split)
    assert head_to_head(encode_dataset(split))[(3, 7)] == (1, 2)


def test_head_to_head_skips_outside_top_n_and_incomplete():
    recs = [rec(1, 11), rec(1, 2, g1=0, g2=0, term=Termination.Retired)]
    assert head_to_head(recs, top_n=10) == {}
    with pytest.raises(ValueError):
        head_to_head(recs, top_n=1)


def test_json_dump_is_plain(tmp_path):
    ds = encode_dataset([rec()])
    json.dumps(ds.to_json())
