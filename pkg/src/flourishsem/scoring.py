"""Per-county latent scores from a fitted model and their export."""

from __future__ import annotations

import csv
import json
import os
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .datamodel import CountyId, ObservedTable, ValidationError
from .sem.covariance import ParameterVector, implied_covariance
from .sem.model import ModelSpec


@dataclass(frozen=True)
class FactorScoreTable:
    counties: tuple[CountyId, ...]
    latents: tuple[str, ...]
    values: np.ndarray
    excluded: tuple[CountyId, ...] = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(len(self.counties), len(self.latents))
        if not np.all(np.isfinite(v)):
            raise ValidationError("factor scores must be finite")
        object.__setattr__(self, "values", v)

    def column(self, latent: str) -> np.ndarray:
        return self.values[:, self.latents.index(latent)]

    def reorder(self, latents) -> FactorScoreTable:
        idx = [self.latents.index(l) for l in latents]
        return FactorScoreTable(self.counties, tuple(latents), self.values[:, idx], self.excluded)


def score_weights(estimates: ParameterVector, method: str = "regression") -> np.ndarray:
    """L x p matrix mapping centered observations to latent scores.

    ``regression``: Cov(latent, observed) Sigma^-1. ``bartlett``:
    (L' Theta^-1 L)^-1 L' Theta^-1, which needs strictly positive residual
    variances.
    """
    mats = estimates.matrices()
    if method == "regression":
        sigma = implied_covariance(estimates.spec, estimates)
        c = linalg.cho_factor(sigma, lower=True)
        return linalg.cho_solve(c, mats.latent_observed_covariance().T).T
    if method == "bartlett":
        if np.any(mats.theta <= 0):
            raise ValidationError("Bartlett scores need positive residual variances")
        lt = mats.loadings.T / mats.theta
        return linalg.solve(lt @ mats.loadings, lt, assume_a="pos")
    raise ValueError(f"unknown factor score method {method!r}")


def factor_scores(
    estimates: ParameterVector,
    data: ObservedTable,
    method: str = "regression",
) -> FactorScoreTable:
    """Score every listwise-complete county on every latent.

    Observations are centered at the mean of the scored counties, so a
    county at the sample mean scores 0 on every latent.
    """
    spec = estimates.spec
    missing = [n for n in spec.observed if n not in data.names]
    if missing:
        raise ValidationError(f"data lacks observed variables {missing}")
    complete, dropped = data.select(spec.observed).complete()
    if not complete.counties:
        raise ValidationError("no county has complete observed data")
    z = complete.values - complete.values.mean(axis=0)
    w = score_weights(estimates, method)
    return FactorScoreTable(complete.counties, spec.latents, z @ w.T, dropped)


def score_order(spec: ModelSpec, standardized: Mapping[str, float]) -> tuple[str, ...]:
    """Exogenous latents first, then endogenous by descending |standardized path|.

    Ties keep declaration order. An endogenous latent with several
    predictors is ranked by its largest absolute path.
    """
    strength = {}
    for e in spec.endogenous:
        vals = [abs(standardized[f"{o}~{p}"]) for o, p in spec.paths if o == e]
        strength[e] = max(vals)
    decl = {l: i for i, l in enumerate(spec.latents)}
    endo = sorted(spec.endogenous, key=lambda e: (-strength[e], decl[e]))
    return tuple(spec.exogenous) + tuple(endo)


def write_scores(table: FactorScoreTable, dest) -> None:
    with open(dest, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("fips",) + table.latents)
        for c, row in zip(table.counties, table.values):
            w.writerow([c.fips] + [f"{v:.6f}" for v in row])


def read_scores(source) -> FactorScoreTable:
    with open(source, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "fips":
        raise ValidationError("score table must start with a 'fips' column")
    latents = tuple(rows[0][1:])
    counties = tuple(CountyId(r[0]) for r in rows[1:])
    vals = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=float)
    return FactorScoreTable(counties, latents, vals.reshape(len(counties), len(latents)))


@dataclass
class JoinReport:
    features: int = 0
    matched: int = 0
    gaps: list[str] = field(default_factory=list)
    unmatched_scores: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "features": self.features, "matched": self.matched,
            "gap_count": len(self.gaps), "gaps": self.gaps,
            "unmatched_score_counties": self.unmatched_scores,
        }


def join_geometry(table: FactorScoreTable, geojson: Mapping, key: str = "GEOID") -> tuple[dict, JoinReport]:
    """Attach scores as numeric properties to a county FeatureCollection.

    Features whose key has no score row are kept without score properties
    and counted as gaps.
    """
    if geojson.get("type") != "FeatureCollection":
        raise ValidationError("geometry must be a GeoJSON FeatureCollection")
    rows = {c.fips: i for i, c in enumerate(table.counties)}
    report = JoinReport()
    features = []
    seen = set()
    for feat in geojson.get("features", []):
        props = dict(feat.get("properties") or {})
        raw = props.get(key)
        fips = None if raw is None else str(raw).zfill(5)
        report.features += 1
        if fips in rows:
            i = rows[fips]
            seen.add(fips)
            report.matched += 1
            for l, v in zip(table.latents, table.values[i]):
                props[l] = round(float(v), 6)
        else:
            report.gaps.append(str(raw))
        out = dict(feat)
        out["properties"] = props
        features.append(out)
    report.unmatched_scores = sorted(set(rows) - seen)
    collection = {k: v for k, v in geojson.items() if k != "features"}
    collection["features"] = features
    return collection, report


def export_scores(
    table: FactorScoreTable,
    spec: ModelSpec,
    standardized: Mapping[str, float],
    dest: str | os.PathLike,
    geometry: str | os.PathLike | None = None,
    geometry_out: str | os.PathLike | None = None,
    key: str = "GEOID",
) -> JoinReport | None:
    """Write the ordered score table and, optionally, the joined GeoJSON."""
    ordered = table.reorder(score_order(spec, standardized))
    write_scores(ordered, dest)
    if geometry is None:
        return None
    with open(geometry, encoding="utf-8") as fh:
        doc = json.load(fh)
    joined, report = join_geometry(ordered, doc, key)
    if geometry_out is not None:
        with open(geometry_out, "w", encoding="utf-8") as fh:
            json.dump(joined, fh, sort_keys=True)
    return report
