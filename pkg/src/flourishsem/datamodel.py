"""County identifiers, label/climate ingestion, and indicator-hazard correlation."""

from __future__ import annotations

import csv
import io
import os
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from datetime import date
from typing import TYPE_CHECKING, TextIO

import numpy as np

if TYPE_CHECKING:
    from .indicators import IndicatorMatrix

LABELS = ("not_present", "low", "medium", "high")
HAZARDS = ("heat", "fire", "drought", "inland", "coastal", "wind")
LABEL_COLUMNS = ("tweet_id", "day", "geoid", "question", "label")
CLIMATE_COLUMNS = ("fips",) + HAZARDS

#: Study window of the classified tweet archive (inclusive bounds).
DEFAULT_WINDOW = (date(2013, 1, 1), date(2023, 6, 30))


class ValidationError(ValueError):
    """A record or table violates a domain invariant."""


class SchemaError(ValidationError):
    """Delimited input is missing a required column."""


class IngestError(OSError):
    """The input source could not be read."""


@dataclass(frozen=True, order=True)
class CountyId:
    fips: str

    def __post_init__(self):
        if not isinstance(self.fips, str) or len(self.fips) != 5 or not self.fips.isdigit():
            raise ValidationError(f"county FIPS must be 5 digits, got {self.fips!r}")

    def __str__(self):
        return self.fips


@dataclass(frozen=True, order=True)
class CensusAreaId:
    """An 11-digit census tract code; the county is its 5-digit prefix."""

    geoid: str
    county: CountyId = field(default=None, compare=False)  # type: ignore[assignment]

    def __post_init__(self):
        if not isinstance(self.geoid, str) or len(self.geoid) != 11 or not self.geoid.isdigit():
            raise ValidationError(f"census area GEOID must be 11 digits, got {self.geoid!r}")
        if self.county is None:
            object.__setattr__(self, "county", CountyId(self.geoid[:5]))
        elif self.county.fips != self.geoid[:5]:
            raise ValidationError(
                f"census area {self.geoid} does not lie in county {self.county.fips}"
            )

    def __str__(self):
        return self.geoid


@dataclass(frozen=True)
class LabelRecord:
    tweet: str
    day: date
    area: CensusAreaId
    question: str
    label: str

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValidationError(f"unknown label {self.label!r}")

    @property
    def county(self) -> CountyId:
        return self.area.county


@dataclass
class IngestReport:
    """Row accounting for one ingestion pass.

    ``errors`` holds ``(line_number, message)`` pairs for rows that failed
    validation; skipped rows are counted but not listed.
    """

    rows_read: int = 0
    accepted: int = 0
    out_of_window: int = 0
    unknown_question: int = 0
    errors: list[tuple[int, str]] = field(default_factory=list)

    @property
    def excluded(self) -> int:
        return self.out_of_window + self.unknown_question + len(self.errors)

    def as_dict(self) -> dict:
        return {
            "rows_read": self.rows_read,
            "accepted": self.accepted,
            "out_of_window": self.out_of_window,
            "unknown_question": self.unknown_question,
            "validation_errors": len(self.errors),
            "errors": [{"line": n, "message": m} for n, m in self.errors],
        }


@dataclass(frozen=True)
class LabelBatch:
    records: tuple[LabelRecord, ...]
    report: IngestReport

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


@dataclass(frozen=True)
class ClimateTable:
    """County x hazard percentile scores, rows sorted by FIPS."""

    counties: tuple[CountyId, ...]
    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float)
        if scores.shape != (len(self.counties), len(HAZARDS)):
            raise ValidationError(f"climate scores must have shape (n, 6), got {scores.shape}")
        if len(set(self.counties)) != len(self.counties):
            raise ValidationError("duplicate county in climate table")
        finite = scores[np.isfinite(scores)]
        if np.any((finite < 0) | (finite > 100)):
            raise ValidationError("score out of range [0, 100]")
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)

    @property
    def hazards(self) -> tuple[str, ...]:
        return HAZARDS

    def column(self, hazard: str) -> np.ndarray:
        return self.scores[:, HAZARDS.index(hazard)]

    def as_columns(self) -> dict[str, np.ndarray]:
        return {h: self.scores[:, i] for i, h in enumerate(HAZARDS)}


@dataclass
class CountyRegistry:
    names: dict[CountyId, str] = field(default_factory=dict)
    geometry_keys: dict[CountyId, str] = field(default_factory=dict)

    def add(self, county: CountyId, name: str, geometry_key: str | None = None):
        if county in self.names:
            raise ValidationError(f"duplicate county {county.fips} in registry")
        self.names[county] = name
        if geometry_key is not None:
            self.geometry_keys[county] = geometry_key

    def __contains__(self, county):
        return county in self.names

    def __len__(self):
        return len(self.names)


@dataclass(frozen=True)
class CorrelationMatrix:
    """Indicator x hazard Pearson correlations; NaN marks an undefined cell."""

    indicators: tuple[str, ...]
    hazards: tuple[str, ...]
    values: np.ndarray
    pairs: np.ndarray

    def get(self, indicator: str, hazard: str) -> float:
        return float(self.values[self.indicators.index(indicator), self.hazards.index(hazard)])


def _open_rows(source) -> tuple[csv.DictReader, TextIO | None]:
    if isinstance(source, (str, os.PathLike)):
        try:
            fh = open(source, newline="", encoding="utf-8")
        except OSError as exc:
            raise IngestError(f"cannot read {source}: {exc}") from exc
        return csv.DictReader(fh), fh
    if isinstance(source, io.IOBase) or hasattr(source, "read"):
        return csv.DictReader(source), None
    raise IngestError(f"unsupported source type {type(source).__name__}")


def _check_header(fieldnames, required, where):
    if fieldnames is None:
        raise SchemaError(f"{where}: empty input, missing header row")
    names = [f.strip() for f in fieldnames]
    for col in required:
        if col not in names:
            raise SchemaError(f"{where}: missing column '{col}'")


def _iter_source(source, required, where):
    """Yield ``(line_number, row_dict)``; dict rows are accepted as-is."""
    if isinstance(source, Iterable) and not isinstance(source, (str, bytes, os.PathLike)) \
            and not hasattr(source, "read"):
        for n, row in enumerate(source, start=2):
            if not isinstance(row, Mapping):
                raise IngestError("record stream must yield mappings")
            yield n, row
        return
    reader, fh = _open_rows(source)
    try:
        if reader.fieldnames is None:
            return
        _check_header(reader.fieldnames, required, where)
        reader.fieldnames = [f.strip() for f in reader.fieldnames]
        for row in reader:
            yield reader.line_num, row
    finally:
        if fh is not None:
            fh.close()


def ingest_labels(
    source,
    window: tuple[date, date] = DEFAULT_WINDOW,
    questions: Iterable[str] | None = None,
    unknown: str = "skip",
) -> LabelBatch:
    """Read and validate classified label rows.

    Parameters
    ----------
    source : path, text stream, or iterable of mappings
        Rows carrying ``tweet_id, day, geoid, question, label`` and an
        optional ``fips`` column cross-checked against the GEOID prefix.
    window : (date, date)
        Inclusive study window; rows outside it are counted and excluded.
    questions : iterable of str, optional
        Known question keys. ``None`` accepts any key.
    unknown : {"skip", "reject"}
        Unknown question keys are counted and skipped, or raise.

    Returns
    -------
    LabelBatch
        Accepted records in input order plus an :class:`IngestReport`.
    """
    if unknown not in ("skip", "reject"):
        raise ValueError("unknown must be 'skip' or 'reject'")
    known = None if questions is None else frozenset(questions)
    start, end = window
    report = IngestReport()
    records = []
    seen: set[tuple[str, str]] = set()
    areas: dict = {}
    for line, row in _iter_source(source, LABEL_COLUMNS, "labels"):
        report.rows_read += 1
        try:
            tweet = str(row["tweet_id"]).strip()
            question = str(row["question"]).strip()
            label = str(row["label"]).strip()
            day = row["day"]
            if not isinstance(day, date):
                day = date.fromisoformat(str(day).strip())
            fips = row.get("fips")
            county = CountyId(str(fips).strip()) if fips not in (None, "") else None
            geoid = str(row["geoid"]).strip()
            area = areas.get((geoid, county))
            if area is None:
                area = areas[(geoid, county)] = CensusAreaId(geoid, county)
            if not tweet:
                raise ValidationError("empty tweet id")
            rec = LabelRecord(tweet, day, area, question, label)
        except (ValidationError, ValueError, KeyError, TypeError) as exc:
            report.errors.append((line, str(exc)))
            continue
        if known is not None and question not in known:
            if unknown == "reject":
                raise ValidationError(f"line {line}: unknown question {question!r}")
            report.unknown_question += 1
            continue
        if not (start <= day <= end):
            report.out_of_window += 1
            continue
        key = (tweet, question)
        if key in seen:
            report.errors.append((line, f"duplicate label for tweet {tweet} question {question}"))
            continue
        seen.add(key)
        records.append(rec)
    report.accepted = len(records)
    return LabelBatch(tuple(records), report)


def write_labels(records: Iterable[LabelRecord], dest) -> None:
    """Serialize records in the label input format."""
    own = isinstance(dest, (str, os.PathLike))
    fh = open(dest, "w", newline="", encoding="utf-8") if own else dest
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_COLUMNS)
        for r in records:
            w.writerow((r.tweet, r.day.isoformat(), r.area.geoid, r.question, r.label))
    finally:
        if own:
            fh.close()


def ingest_climate(source) -> ClimateTable:
    """Read the county hazard table; any invalid row raises."""
    rows = {}
    for line, row in _iter_source(source, CLIMATE_COLUMNS, "climate"):
        missing = [c for c in CLIMATE_COLUMNS if c not in row]
        if missing:
            raise SchemaError(f"climate: missing column '{missing[0]}'")
        county = CountyId(str(row["fips"]).strip().zfill(5))
        if county in rows:
            raise ValidationError(f"line {line}: duplicate county {county.fips}")
        vals = []
        for h in HAZARDS:
            raw = row[h]
            v = float(raw) if str(raw).strip() != "" else float("nan")
            if np.isfinite(v) and not (0.0 <= v <= 100.0):
                raise ValidationError(f"line {line}: {h} score out of range [0, 100]: {v}")
            vals.append(v)
        rows[county] = vals
    counties = tuple(sorted(rows))
    scores = np.array([rows[c] for c in counties], dtype=float).reshape(len(counties), len(HAZARDS))
    return ClimateTable(counties, scores)


def write_climate(table: ClimateTable, dest) -> None:
    with open(dest, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CLIMATE_COLUMNS)
        for c, row in zip(table.counties, table.scores):
            w.writerow([c.fips] + ["" if not np.isfinite(v) else repr(float(v)) for v in row])


def pearson_pairwise(x: np.ndarray, y: np.ndarray, min_pairs: int = 3) -> tuple[float, int]:
    """Pearson r over positions where both values are finite.

    Returns ``(nan, n)`` with fewer than ``min_pairs`` complete pairs or a
    constant variable.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(x) & np.isfinite(y)
    n = int(ok.sum())
    if n < min_pairs:
        return float("nan"), n
    xo, yo = x[ok], y[ok]
    # test constancy on the raw values; centred sums can leave rounding residue
    if np.ptp(xo) == 0.0 or np.ptp(yo) == 0.0:
        return float("nan"), n
    xc = xo - xo.mean()
    yc = yo - yo.mean()
    sxx = float(xc @ xc)
    syy = float(yc @ yc)
    if sxx == 0.0 or syy == 0.0:
        return float("nan"), n
    r = float(xc @ yc) / (np.sqrt(sxx) * np.sqrt(syy))
    return float(min(1.0, max(-1.0, r))), n


def correlate(indicators: IndicatorMatrix, climate: ClimateTable, min_pairs: int = 3) -> CorrelationMatrix:
    """Indicator x hazard Pearson correlations across shared counties."""
    shared = sorted(set(indicators.counties) & set(climate.counties))
    if not shared:
        raise ValidationError("indicator and climate tables share no counties")
    ind_idx = {c: i for i, c in enumerate(indicators.counties)}
    cli_idx = {c: i for i, c in enumerate(climate.counties)}
    ii = np.array([ind_idx[c] for c in shared])
    ci = np.array([cli_idx[c] for c in shared])
    vals = indicators.values[ii]
    haz = climate.scores[ci]
    out = np.full((vals.shape[1], len(HAZARDS)), np.nan)
    pairs = np.zeros(out.shape, dtype=int)
    for a in range(vals.shape[1]):
        for b in range(len(HAZARDS)):
            out[a, b], pairs[a, b] = pearson_pairwise(vals[:, a], haz[:, b], min_pairs)
    return CorrelationMatrix(tuple(indicators.columns), HAZARDS, out, pairs)


def write_correlations(corr: CorrelationMatrix, dest) -> None:
    with open(dest, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("indicator",) + corr.hazards)
        for name, row in zip(corr.indicators, corr.values):
            w.writerow([name] + ["" if np.isnan(v) else f"{v:.6f}" for v in row])


def read_correlations(source) -> CorrelationMatrix:
    with open(source, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    hazards = tuple(rows[0][1:])
    names = tuple(r[0] for r in rows[1:])
    vals = np.array([[float(v) if v else np.nan for v in r[1:]] for r in rows[1:]]).reshape(
        len(names), len(hazards)
    )
    return CorrelationMatrix(names, hazards, vals, np.zeros(vals.shape, dtype=int))


@dataclass(frozen=True)
class ObservedTable:
    """County x observed-variable matrix assembled for model fitting."""

    counties: tuple[CountyId, ...]
    names: tuple[str, ...]
    values: np.ndarray

    def select(self, names) -> ObservedTable:
        idx = [self.names.index(n) for n in names]
        return ObservedTable(self.counties, tuple(names), self.values[:, idx])

    def complete(self) -> tuple[ObservedTable, tuple[CountyId, ...]]:
        """Listwise-complete rows, and the counties that were dropped."""
        ok = np.all(np.isfinite(self.values), axis=1)
        dropped = tuple(c for c, k in zip(self.counties, ok) if not k)
        kept = tuple(c for c, k in zip(self.counties, ok) if k)
        return ObservedTable(kept, self.names, self.values[ok]), dropped


def join_observed(indicators: IndicatorMatrix, climate: ClimateTable, names=None) -> ObservedTable:
    """Union of indicator and hazard columns over all counties in either table.

    Cells absent from a table are NaN; ``names`` restricts and orders the
    columns (unknown names raise).
    """
    counties = sorted(set(indicators.counties) | set(climate.counties))
    ii = {c: i for i, c in enumerate(indicators.counties)}
    ci = {c: i for i, c in enumerate(climate.counties)}
    cols: dict[str, np.ndarray] = {}
    for j, name in enumerate(indicators.columns):
        cols[name] = np.array([indicators.values[ii[c], j] if c in ii else np.nan for c in counties])
    for j, name in enumerate(HAZARDS):
        if name in cols:
            raise ValidationError(f"column {name!r} present in both indicator and climate tables")
        cols[name] = np.array([climate.scores[ci[c], j] if c in ci else np.nan for c in counties])
    names = tuple(cols) if names is None else tuple(names)
    missing = [n for n in names if n not in cols]
    if missing:
        raise ValidationError(f"observed variables not found in inputs: {missing}")
    values = np.column_stack([cols[n] for n in names]) if names else np.empty((len(counties), 0))
    return ObservedTable(tuple(counties), names, values)


def write_observed(table: ObservedTable, dest) -> None:
    with open(dest, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("fips",) + table.names)
        for c, row in zip(table.counties, table.values):
            w.writerow([c.fips] + ["" if not np.isfinite(v) else repr(float(v)) for v in row])


def read_observed(source) -> ObservedTable:
    with open(source, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "fips":
        raise ValidationError("observed table must start with a 'fips' column")
    names = tuple(rows[0][1:])
    counties = tuple(CountyId(r[0]) for r in rows[1:])
    vals = np.array([[float(v) if v else np.nan for v in r[1:]] for r in rows[1:]], dtype=float)
    return ObservedTable(counties, names, vals.reshape(len(counties), len(names)))
