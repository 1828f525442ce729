"""Command-line pipeline: aggregate, correlate, fit, scores, simulate."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import warnings
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .datamodel import (
    DEFAULT_WINDOW, IngestError, ValidationError, correlate, ingest_climate, ingest_labels,
    join_observed, write_climate, write_correlations, write_labels, write_observed,
)
from .indicators import (
    DEFAULT_SCHEME, DEFAULT_VARIANCE_FLOOR, aggregate_county, aggregate_daily,
    derive, load_dictionary, month_periods, normalize, read_indicators, screen_variance,
    write_indicators,
)
from .scoring import export_scores, factor_scores
from .sem import FitOptions, SampleMoments, fit, load_model
from .sem.estimate import EstimationError, standardize
from .sem.model import SpecError
from .sem.report import format_table, load_fit, write_fit
from .synth import LabelSynthConfig, SemSynthConfig, generate_fixture, generate_labels

log = logging.getLogger("flourishsem")

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED = 0, 2, 3


@dataclass
class RunConfig:
    labels: Path | None = None
    climate: Path | None = None
    dictionary: Path | None = None
    model: Path | None = None
    geometry: Path | None = None
    indicators: Path | None = None
    fit: Path | None = None
    out: Path = Path("out")
    window: tuple[date, date] = DEFAULT_WINDOW
    periods: str = "full"
    variance_threshold: float = DEFAULT_VARIANCE_FLOOR
    apply_roster: bool = True
    unknown_questions: str = "skip"
    optimizer: dict = field(default_factory=dict)
    use_correlations: bool = False
    score_method: str = "regression"
    geometry_key: str = "GEOID"
    simulate: dict = field(default_factory=dict)
    threads: int = 1

    _PATHS = ("labels", "climate", "dictionary", "model", "geometry", "indicators", "fit", "out")

    @classmethod
    def load(cls, path: str | os.PathLike | None) -> RunConfig:
        if path is None:
            return cls()
        base = Path(path).resolve().parent
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        kwargs = {}
        for k, v in doc.items():
            if k not in cls.__dataclass_fields__ or k.startswith("_"):
                raise ValidationError(f"unknown config key {k!r}")
            if k in cls._PATHS and v is not None:
                v = Path(v) if Path(v).is_absolute() else base / v
            elif k == "window":
                v = (date.fromisoformat(v[0]), date.fromisoformat(v[1]))
            kwargs[k] = v
        return cls(**kwargs)

    def require(self, *names: str) -> None:
        for n in names:
            p = getattr(self, n)
            if p is None:
                raise ValidationError(f"config needs an input path for {n!r}")
            if not Path(p).exists():
                raise ValidationError(f"{n} path does not exist: {p}")

    def default(self, name: str, filename: str) -> Path:
        p = getattr(self, name)
        return Path(p) if p is not None else self.out / filename


def _digest(path) -> dict:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return {"file": Path(path).name, "sha256": h.hexdigest()}


def write_report(out: Path, command: str, inputs: dict, counts: dict, warns: list[str], extra=None) -> Path:
    report = {
        "command": command,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "versions": {
            "flourishsem": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__,
        },
        "inputs": {k: _digest(v) for k, v in sorted(inputs.items()) if v is not None},
        "counts": counts,
        "warnings": warns,
    }
    if extra:
        report.update(extra)
    path = out / f"report_{command}.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1)
        fh.write("\n")
    return path


# -- subcommands ------------------------------------------------------------

def cmd_aggregate(cfg: RunConfig) -> int:
    cfg.require("labels")
    dictionary = load_dictionary(cfg.dictionary)
    batch = ingest_labels(cfg.labels, cfg.window, dictionary.questions, cfg.unknown_questions)
    warns = []
    if len(batch) == 0:
        warns.append("no label records accepted; indicator matrix is empty")
    cells = aggregate_daily(batch.records, DEFAULT_SCHEME)

    def build(period):
        m = normalize(aggregate_county(cells, period))
        present = [r for r in dictionary.rules if r.source in m.columns]
        m = derive(m, present)
        m, dropped = screen_variance(m, cfg.variance_threshold)
        roster_dropped = []
        if cfg.apply_roster:
            keep = [c for c in m.columns if c in set(dictionary.active)]
            roster_dropped = [c for c in m.columns if c not in keep]
            m = m.select(keep)
        return m, dropped, roster_dropped

    matrix, dropped, roster_dropped = build(cfg.window)
    for w in warns:
        log.warning(w)
    write_indicators(matrix, cfg.out / "indicators.csv")
    if cfg.periods == "monthly":
        mdir = cfg.out / "monthly"
        mdir.mkdir(exist_ok=True)
        for period in month_periods(cfg.window):
            m, _, _ = build(period)
            if m.counties:
                write_indicators(m, mdir / f"indicators_{period[0]:%Y-%m}.csv")
    elif cfg.periods != "full":
        raise ValidationError("periods must be 'full' or 'monthly'")
    counts = batch.report.as_dict()
    counts.update({"counties": len(matrix.counties), "indicators": len(matrix.columns)})
    write_report(cfg.out, "aggregate", {"labels": cfg.labels, "dictionary": cfg.dictionary}, counts, warns, {
        "dropped_low_variance": dropped,
        "dropped_by_roster": roster_dropped,
        "period": [cfg.window[0].isoformat(), cfg.window[1].isoformat()],
    })
    if batch.report.errors:
        for line, msg in batch.report.errors[:20]:
            log.error("labels line %d: %s", line, msg)
        return EXIT_INVALID
    return EXIT_OK


def cmd_correlate(cfg: RunConfig) -> int:
    ind_path = cfg.default("indicators", "indicators.csv")
    cfg = replace(cfg, indicators=ind_path)
    cfg.require("indicators", "climate")
    matrix = read_indicators(ind_path)
    climate = ingest_climate(cfg.climate)
    corr = correlate(matrix, climate)
    write_correlations(corr, cfg.out / "correlations.csv")
    n_missing = int(np.isnan(corr.values).sum())
    write_report(cfg.out, "correlate", {"indicators": ind_path, "climate": cfg.climate},
                 {"indicators": len(corr.indicators), "missing_cells": n_missing}, [])
    return EXIT_OK


def _observed(cfg: RunConfig, spec):
    ind_path = cfg.default("indicators", "indicators.csv")
    cfg.indicators = ind_path
    cfg.require("indicators", "climate")
    matrix = read_indicators(ind_path)
    climate = ingest_climate(cfg.climate)
    return join_observed(matrix, climate, spec.observed), ind_path


def cmd_fit(cfg: RunConfig, allow_nonconverged: bool = False) -> int:
    spec = load_model(cfg.model)
    table, ind_path = _observed(cfg, spec)
    complete, dropped = table.complete()
    moments = SampleMoments.from_data(complete.values, complete.names, complete.counties)
    if cfg.use_correlations:
        moments = moments.correlation()
    opts = FitOptions(threads=cfg.threads, **cfg.optimizer)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = fit(spec, moments, opts)
    write_fit(result, cfg.out / "fit.json")
    (cfg.out / "fit.txt").write_text(format_table(result), encoding="utf-8")
    warns = list(result.warnings)
    if dropped:
        warns.append(f"{len(dropped)} counties dropped by listwise deletion")
    write_report(cfg.out, "fit", {"indicators": ind_path, "climate": cfg.climate, "model": cfg.model},
                 {"cases": moments.n, "listwise_dropped": len(dropped), "free_parameters": spec.n_free,
                  "iterations": result.iterations}, warns,
                 {"converged": result.converged, "dropped_counties": [c.fips for c in dropped]})
    for w in warns:
        log.warning(w)
    if not result.converged and not allow_nonconverged:
        log.error("fit did not converge (%s)", result.message)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_scores(cfg: RunConfig) -> int:
    fit_path = cfg.default("fit", "fit.json")
    cfg.fit = fit_path
    cfg.require("fit")
    spec, estimates, standardized, doc = load_fit(fit_path)
    if not doc["convergence"]["converged"]:
        log.warning("scoring from a fit that did not converge")
    table, ind_path = _observed(cfg, spec)
    scores = factor_scores(estimates, table, cfg.score_method)
    geo_out = cfg.out / "scores.geojson" if cfg.geometry is not None else None
    join = export_scores(scores, spec, standardized, cfg.out / "scores.csv",
                         cfg.geometry, geo_out, cfg.geometry_key)
    warns = []
    if scores.excluded:
        warns.append(f"{len(scores.excluded)} counties without complete data were not scored")
    extra = {"excluded_counties": [c.fips for c in scores.excluded]}
    if join is not None:
        extra["geometry_join"] = join.as_dict()
        if join.gaps:
            warns.append(f"{len(join.gaps)} geometry features have no scores")
    write_report(cfg.out, "scores", {"fit": fit_path, "indicators": ind_path, "climate": cfg.climate,
                                     "geometry": cfg.geometry},
                 {"scored": len(scores.counties), "excluded": len(scores.excluded)}, warns, extra)
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, seed: int | None) -> int:
    sim = dict(cfg.simulate)
    if seed is None:
        seed = sim.pop("seed", None)
    else:
        sim.pop("seed", None)
    if seed is None:
        raise ValidationError("simulate requires an explicit seed (--seed or simulate.seed)")
    mode = sim.pop("mode", "sem")
    window = cfg.window
    if mode == "labels":
        probs = sim.pop("probabilities", (0.4, 0.2, 0.2, 0.2))
        if isinstance(probs, dict):
            probs = {k: tuple(v) for k, v in probs.items()}
        conf = LabelSynthConfig(seed=int(seed), window=window, probabilities=probs,
                                **{k: (tuple(v) if k == "questions" else v) for k, v in sim.items()})
        records = generate_labels(conf)
        write_labels(records, cfg.out / "labels.csv")
        manifest = {"mode": "labels", "seed": int(seed), "config": {
            "counties": conf.counties, "areas_per_county": conf.areas_per_county,
            "tweets_per_county": conf.tweets_per_county, "questions": list(conf.questions),
            "probabilities": probs if isinstance(probs, dict) else list(probs)}}
        counts = {"records": len(records)}
    elif mode == "sem":
        spec = load_model(cfg.model)
        dictionary = load_dictionary(cfg.dictionary)
        conf = SemSynthConfig(seed=int(seed), window=window, **sim)
        fx = generate_fixture(spec, dictionary, conf)
        write_labels(fx.labels, cfg.out / "labels.csv")
        write_climate(fx.climate, cfg.out / "climate.csv")
        write_observed(fx.observations, cfg.out / "observations.csv")
        manifest = {
            "mode": "sem", "seed": int(seed), "model": spec.to_text(),
            "config": {"counties": conf.counties, "areas_per_county": conf.areas_per_county,
                       "related_per_indicator": conf.related_per_indicator,
                       "noise_per_indicator": conf.noise_per_indicator,
                       "climate_scale": conf.climate_scale, "indicator_scale": conf.indicator_scale},
            "truth": fx.truth.as_dict(),
            "standardized_truth": standardize(fx.truth),
            "clipped": fx.clipped,
        }
        counts = {"records": len(fx.labels), "counties": conf.counties}
    else:
        raise ValidationError(f"unknown simulate mode {mode!r}")
    with open(cfg.out / "truth.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    write_report(cfg.out, "simulate", {"model": cfg.model, "dictionary": cfg.dictionary}, counts, [],
                 {"seed": int(seed)})
    return EXIT_OK


# -- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flourishsem", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--threads", type=int, help="worker cap; outputs do not depend on it")
        for name in ("labels", "climate", "dictionary", "model", "geometry", "indicators", "fit"):
            p.add_argument(f"--{name}", help=f"{name} input path (overrides config)")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    common(sub.add_parser("aggregate", help="labels -> county indicator matrix"))
    common(sub.add_parser("correlate", help="indicator x hazard correlations"))
    p = common(sub.add_parser("fit", help="fit the structural equation model"))
    p.add_argument("--allow-nonconverged", action="store_true")
    common(sub.add_parser("scores", help="county latent scores (+ GeoJSON join)"))
    p = common(sub.add_parser("simulate", help="write synthetic fixtures"))
    p.add_argument("--seed", type=int)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config)
        for name in ("labels", "climate", "dictionary", "model", "geometry", "indicators", "fit"):
            v = getattr(args, name)
            if v is not None:
                setattr(cfg, name, Path(v))
        if args.out is not None:
            cfg.out = Path(args.out)
        if args.threads is not None:
            cfg.threads = max(1, args.threads)
        cfg.out.mkdir(parents=True, exist_ok=True)
        if args.command == "aggregate":
            return cmd_aggregate(cfg)
        if args.command == "correlate":
            return cmd_correlate(cfg)
        if args.command == "fit":
            return cmd_fit(cfg, args.allow_nonconverged)
        if args.command == "scores":
            return cmd_scores(cfg)
        return cmd_simulate(cfg, args.seed)
    except (ValidationError, SpecError, EstimationError, IngestError, KeyError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
