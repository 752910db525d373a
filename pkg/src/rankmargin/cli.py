"""Fit, query and simulate the squash home-advantage models from the command line.

Subcommands: fit, predict, simulate, summarize, diagnose, replay.  Exit codes: 0 success, 1 usage or data error, 2 sampler failure,
3 failed convergence diagnostics.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import DiagnosticsError, diagnose
from .fit import atomic_path, fit, load_draws, save_draws
from .hmc import SamplerConfig, SamplerError
from .match_data import (
    DEFAULT_MAX_RANK,
    DataError,
    EncodedDataset,
    count_matches,
    encode_dataset,
    filter_matches,
    head_to_head,
    load_matches,
    write_matches,
)
from .model import Variant, make_spec, spec_from_names
from .posterior import (
    ability_curve,
    mean_rank_gap,
    summaries_json,
    summarize,
    summarize_values,
    write_ability_curve_csv,
    write_summaries_csv,
)
from .predict import (
    MatchupQuery,
    load_queries,
    matchup_report,
    report_to_csv,
    report_to_json,
    win_probability,
)
from .synth import default_truth, generate, save_truth, tour_schedule, to_records

log = logging.getLogger("rankmargin")

EXIT_OK, EXIT_USAGE, EXIT_SAMPLER, EXIT_DIAGNOSTICS = 0, 1, 2, 3


class UsageError(Exception):
    pass


# -- helpers ------------------------------------------------------------------


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_text(path: Path, text: str) -> None:
    with atomic_path(path) as tmp:
        tmp.write_text(text, encoding="utf-8")


def write_json(path: Path, obj) -> None:
    write_text(path, json.dumps(obj, indent=1, sort_keys=False) + "\n")


def write_rows(path: Path, header, rows) -> None:
    with atomic_path(path) as tmp, tmp.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def parse_countries(text: str) -> tuple[str, ...]:
    return tuple(c.strip().upper() for c in text.split(",") if c.strip())


def parse_pairs(text: str | None, value=str) -> dict:
    out = {}
    for item in (text or "").split(","):
        if not item.strip():
            continue
        if "=" not in item:
            raise UsageError(f"expected KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = value(v.strip())
    return out


def parse_fixed_scales(text: str | None):
    if not text:
        return None
    try:
        sy, sa = (float(v) for v in text.split(","))
    except ValueError:
        raise UsageError("--fixed-scales expects SIGY,SIGA") from None
    if sy <= 0 or sa <= 0:
        raise UsageError("--fixed-scales values must be positive")
    return (sy, sa)


def load_dataset(args) -> tuple[EncodedDataset, list | None]:
    """Read ``--data`` (raw CSV or encoded JSON); returns the dataset and raw records."""
    path = Path(args.data)
    countries = parse_countries(args.countries)
    if path.suffix.lower() == ".json":
        data = EncodedDataset.load(path)
        if args.model == "country":
            data.require_countries(countries)
        if max((max(m.rank1, m.rank2) for m in data.matches), default=0) > args.ranks:
            raise DataError(f"{path}: ranks exceed --ranks {args.ranks}")
        data.R = args.ranks
        return data, None
    records = load_matches(path, parse_pairs(args.schema))
    kept, excluded = filter_matches(records, args.ranks)
    return encode_dataset(kept, args.ranks, countries, excluded), records


def build_spec(args):
    return make_spec(
        args.model,
        R=args.ranks,
        tracked_countries=parse_countries(args.countries),
        beta_scale=args.prior_beta_scale,
        gamma_scale=args.prior_gamma_scale,
        fixed_scales=parse_fixed_scales(args.fixed_scales),
    )


def resolved_config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


def write_manifest(out: Path, args, inputs: list[Path], started: str) -> None:
    write_json(
        out / f"manifest-{args.command}.json",
        {
            "command": args.command,
            "config": resolved_config(args),
            "seed": getattr(args, "seed", None),
            "inputs": {str(p): sha256(p) for p in inputs},
            "version": __version__,
            "started": started,
            "finished": dt.datetime.now(dt.timezone.utc).isoformat(),
        },
    )


# -- commands -----------------------------------------------------------------


def cmd_fit(args) -> int:
    data, _ = load_dataset(args)
    spec = build_spec(args)
    config = SamplerConfig(
        chains=args.chains,
        warmup=args.warmup,
        samples=args.samples,
        target_accept=args.target_accept,
        max_treedepth=args.max_treedepth,
        seed=args.seed,
        n_jobs=min(args.chains, os.cpu_count() or 1),
    )
    log.info("fitting %s model to %d matches", spec.variant.value, len(data))
    draws = fit(data, spec, config)
    out = Path(args.out)
    save_draws(draws, out / "draws.csv")
    summaries = summarize(draws)
    with atomic_path(out / "summary.csv") as tmp:
        write_summaries_csv(summaries, tmp)
    write_text(out / "summary.json", summaries_json(summaries))
    data.save(out / "dataset.json")
    try:
        diag = diagnose(draws)
    except DiagnosticsError as exc:
        log.error("diagnostics unavailable: %s", exc)
        return EXIT_OK if args.allow_bad_diagnostics else EXIT_DIAGNOSTICS
    report = diag.to_json()
    report["step_size"] = draws.step_size.tolist()
    report["divergences_per_chain"] = draws.divergences.tolist()
    report["treedepth_hits_per_chain"] = draws.treedepth_hits.tolist()
    write_json(out / "diagnostics.json", report)
    if not diag.ok:
        worst = np.nanmax(np.where(np.isfinite(diag.rhat), diag.rhat, np.inf))
        log.warning(
            "diagnostics failed: max R-hat %.4f, %d divergent transitions",
            worst, diag.divergences,
        )
        if not args.allow_bad_diagnostics:
            return EXIT_DIAGNOSTICS
    return EXIT_OK


def _draws_path(args) -> Path:
    path = Path(args.draws)
    return path / "draws.csv" if path.is_dir() else path


def cmd_predict(args) -> int:
    draws = load_draws(_draws_path(args))
    fixed = parse_fixed_scales(args.fixed_scales)
    spec = spec_from_names(draws.names, fixed_scales=fixed)
    variant = Variant.parse(args.model) if args.model else None
    if variant is not None and variant is not spec.variant:
        raise UsageError(
            f"--model {args.model} does not match draws from the {spec.variant.value} model"
        )
    if args.queries:
        queries, actuals = load_queries(args.queries)
    else:
        if args.rank1 is None or args.rank2 is None:
            raise UsageError("give --queries FILE or --rank1/--rank2")
        venue = args.venue.upper() if args.venue else None
        queries = [MatchupQuery(args.rank1, args.rank2, venue, args.p1_home, args.p2_home)]
        actuals = [args.actual]
    queries = [
        MatchupQuery(q.rank1, q.rank2, q.venue_country, q.p1_home, q.p2_home, q.label, variant)
        for q in queries
    ]
    rows = matchup_report(
        draws, queries, actuals, plugin=args.plugin, kind=args.interval, fixed_scales=fixed
    )
    out = Path(args.out)
    write_text(out / "report.csv", report_to_csv(rows))
    write_text(out / "report.json", report_to_json(rows))
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.sigma_y <= 0 or args.sigma_a <= 0:
        raise UsageError("--sigma-y and --sigma-a must be > 0")
    countries = parse_countries(args.countries)
    effects = parse_pairs(args.country_effects, float)
    unknown = set(effects) - set(countries)
    if unknown:
        raise UsageError(f"country effects for untracked countries {sorted(unknown)}")
    truth = default_truth(
        R=args.ranks,
        h=args.h,
        sigma_y=args.sigma_y,
        sigma_a=args.sigma_a,
        beta=args.beta,
        gamma=args.gamma,
        country_h={c: effects.get(c, 0.0) for c in countries},
        seed=args.seed,
    )
    schedule = tour_schedule(args.n, args.ranks, seed=args.seed + 1, tracked=countries)
    data = generate(truth, schedule, seed=args.seed + 2, discretize=not args.continuous)
    out = Path(args.out)
    data.save(out / "dataset.json")
    if not args.continuous:
        with atomic_path(out / "matches.csv") as tmp:
            write_matches(to_records(data), tmp)
    with atomic_path(out / "truth.json") as tmp:
        save_truth(truth, tmp)
    return EXIT_OK


def cmd_summarize(args) -> int:
    if not args.data and not args.draws:
        raise UsageError("summarize needs --data and/or --draws")
    out = Path(args.out)
    if args.data:
        data, records = load_dataset(args)
        source = records if records is not None else data
        table = count_matches(source)
        write_rows(
            out / "counts.csv",
            ("venue", "total", "with_home_advantage"),
            [(g, c["total"], c["home"]) for g, c in table.items()],
        )
        h2h = head_to_head(records if records is not None else data, args.top_n)
        write_rows(
            out / "head_to_head.csv",
            ("rank_hi", "rank_lo", "wins_hi", "total", "fraction"),
            [(i, j, w, n, repr(w / n)) for (i, j), (w, n) in h2h.items()],
        )
    if args.draws:
        draws = load_draws(_draws_path(args))
        curve = ability_curve(draws)
        with atomic_path(out / "ability_curve.csv") as tmp:
            write_ability_curve_csv(curve, tmp)
        rows = _effect_rows(draws, parse_fixed_scales(args.fixed_scales))
        top = min(args.gap_top_n, len(curve))
        rows.append(("mean_rank_gap_top%d" % top, repr(mean_rank_gap(curve, top))) + ("",) * 9)
        write_rows(
            out / "effects.csv",
            ("effect", "mean", "sd", "q5", "q16", "q50", "q84", "q95",
             "sigma_y_mean", "win_prob_even", "n_draws"),
            rows,
        )
    return EXIT_OK


def _effect_rows(draws, fixed_scales):
    """Home effects (global and global + country) with the even-match win probability."""
    pooled = draws.pooled()
    col = {n: i for i, n in enumerate(draws.names)}
    if "sigma_y" in col:
        sigma = pooled[:, col["sigma_y"]]
    elif fixed_scales:
        sigma = np.full(len(pooled), fixed_scales[0])
    else:
        raise UsageError("draws have no sigma_y column; pass --fixed-scales")
    h = pooled[:, col["h"]]
    effects = [("h", h)]
    for name in draws.names:
        if name.startswith("h["):
            effects.append((name, pooled[:, col[name]]))
            effects.append((f"h+{name}", h + pooled[:, col[name]]))
    rows = []
    for name, values in effects:
        s = summarize_values(name, values)
        p = win_probability(s.mean, float(sigma.mean()))
        rows.append(
            (name, *(repr(v) for v in (s.mean, s.sd, s.q5, s.q16, s.q50, s.q84, s.q95)),
             repr(float(sigma.mean())), repr(p), len(values))
        )
    return rows


def cmd_diagnose(args) -> int:
    draws = load_draws(_draws_path(args))
    diag = diagnose(draws)
    write_json(Path(args.out) / "diagnostics.json", diag.to_json())
    return EXIT_OK if diag.ok else EXIT_DIAGNOSTICS


def cmd_replay(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    config = dict(manifest["config"])
    for name, digest in manifest.get("inputs", {}).items():
        p = Path(name)
        if not p.is_file():
            raise DataError(f"recorded input missing: {name}")
        if sha256(p) != digest:
            log.warning("input %s changed since the recorded run", name)
    if args.out:
        config["out"] = args.out
    command = manifest["command"]
    if command not in COMMANDS:
        raise UsageError(f"cannot replay command {command!r}")
    replay = argparse.Namespace(**config)
    replay.command, replay.func = command, COMMANDS[command]
    return run(replay)


COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "simulate": cmd_simulate,
    "summarize": cmd_summarize,
    "diagnose": cmd_diagnose,
}


# -- parser -------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=("global", "country"), default="global")
    p.add_argument("--ranks", type=int, default=DEFAULT_MAX_RANK, help="highest modeled rank")
    p.add_argument("--countries", default="EGY,ENG,USA", help="tracked countries")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--fixed-scales", default=None, metavar="SIGY,SIGA")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rankmargin", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="sample the posterior")
    _common(p)
    p.add_argument("--data", required=True, help="match CSV or encoded dataset JSON")
    p.add_argument("--schema", default=None, help="column mapping, e.g. rank1=WR1,rank2=WR2")
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--warmup", type=int, default=1000)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--target-accept", type=float, default=0.8)
    p.add_argument("--max-treedepth", type=int, default=10)
    p.add_argument("--prior-beta-scale", type=float, default=2.0)
    p.add_argument("--prior-gamma-scale", type=float, default=2.0)
    p.add_argument("--allow-bad-diagnostics", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="matchup predictions from fitted draws")
    _common(p)
    p.set_defaults(model=None)
    p.add_argument("--draws", required=True, help="draws.csv or a fit output directory")
    p.add_argument("--queries", default=None, help="CSV of matchups")
    p.add_argument("--rank1", type=int)
    p.add_argument("--rank2", type=int)
    p.add_argument("--venue", default=None)
    p.add_argument("--p1-home", action="store_true")
    p.add_argument("--p2-home", action="store_true")
    p.add_argument("--actual", type=float, default=None)
    p.add_argument("--plugin", action="store_true", help="plug in posterior means")
    p.add_argument("--interval", choices=("predictive", "mean"), default="predictive")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="synthetic dataset with known parameters")
    _common(p)
    p.add_argument("--n", type=int, default=1400, help="number of matches")
    p.add_argument("--h", type=float, default=0.4)
    p.add_argument("--sigma-y", type=float, default=1.9)
    p.add_argument("--sigma-a", type=float, default=0.15)
    p.add_argument("--beta", type=float, default=-0.06)
    p.add_argument("--gamma", type=float, default=-0.4)
    p.add_argument("--country-effects", default=None, help="e.g. EGY=0.05,ENG=0")
    p.add_argument("--continuous", action="store_true", help="keep margins continuous")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("summarize", help="venue counts, head-to-head and ability-curve tables")
    _common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--schema", default=None)
    p.add_argument("--draws", default=None)
    p.add_argument("--top-n", type=int, default=10, help="head-to-head rank cutoff")
    p.add_argument("--gap-top-n", type=int, default=20, help="ranks used for the mean rank gap")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("diagnose", help="R-hat and ESS for a draws file")
    _common(p)
    p.add_argument("--draws", required=True)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("replay", help="re-run a command from its manifest.json")
    p.add_argument("manifest")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_replay)
    return parser


def _inputs(args) -> list[Path]:
    paths = []
    for attr in ("data", "queries"):
        v = getattr(args, attr, None)
        if v:
            paths.append(Path(v))
    if getattr(args, "draws", None):
        paths.append(_draws_path(args))
    return [p for p in paths if p.is_file()]


def run(args) -> int:
    started = dt.datetime.now(dt.timezone.utc).isoformat()
    try:
        if args.command != "replay":
            Path(args.out).mkdir(parents=True, exist_ok=True)
        code = args.func(args)
    except SamplerError as exc:
        log.error("sampler failure: %s", exc)
        code = EXIT_SAMPLER
    except (UsageError, DataError, DiagnosticsError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    if args.command != "replay":
        write_manifest(Path(args.out), args, _inputs(args), started)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
