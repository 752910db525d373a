"""Fitting glue and the draws interchange file."""

from __future__ import annotations

import csv
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .hmc import PosteriorDraws, SamplerConfig, sample
from .match_data import DataError, EncodedDataset
from .model import ModelSpec, NonCentered, Posterior, Variant, constrain


def fit(
    data: EncodedDataset,
    spec: ModelSpec,
    config: SamplerConfig,
    noncentered: bool = True,
) -> PosteriorDraws:
    """Sample the posterior of ``spec`` given ``data``.

    By default the sampler moves in non-centered ability coordinates (same
    posterior, no funnel); draws are mapped back to abilities.  Returned
    draws are on the reported scale (``sigma_y``/``sigma_a`` rather than
    their logs).
    """
    if spec.variant is Variant.CountryIntercepts:
        data.require_countries(spec.tracked_countries)
    target = Posterior(data, spec)
    if noncentered:
        target = NonCentered(target)
    draws = sample(target, config, names=spec.names)
    raw = target.to_centered(draws.draws) if noncentered else draws.draws
    draws.draws = constrain(raw, spec)
    draws.names = spec.constrained_names
    draws.extras["spec"] = spec
    return draws


@contextmanager
def atomic_path(path: str | Path):
    """Yield a temporary sibling path that replaces ``path`` on success."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def save_draws(draws: PosteriorDraws, path: str | Path) -> None:
    """One row per draw: ``chain``, ``iteration``, then one column per parameter.

    Values use Python's shortest round-trip float repr, so a reload is exact.
    """
    with atomic_path(path) as tmp, tmp.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chain", "iteration", *draws.names])
        for c in range(draws.n_chains):
            for i in range(draws.n_samples):
                w.writerow([c, i, *map(repr, draws.draws[c, i].tolist())])


def load_draws(path: str | Path) -> PosteriorDraws:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"draws file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["chain", "iteration"]:
            raise DataError(f"{path}: not a draws file (expected chain,iteration columns)")
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: no draws")
    try:
        chains = np.array([int(r[0]) for r in rows])
        values = np.array([[float(v) for v in r[2:]] for r in rows])
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: malformed draws ({exc})") from None
    ids = np.unique(chains)
    counts = {c: int(np.sum(chains == c)) for c in ids}
    if len(set(counts.values())) != 1:
        raise DataError(f"{path}: chains have unequal lengths")
    arr = np.stack([values[chains == c] for c in ids])
    return PosteriorDraws(names=header[2:], draws=arr)
