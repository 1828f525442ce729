"""Recoding and aggregation of tweet labels into county indicators.

Labels are recoded to numbers, summed per (census area, day, question),
rolled up to (county, question) over a period, and divided by the number
of *related* records (label other than ``not_present``).  Every step is a
plain sum until the final division, so shards can be aggregated
independently and merged in any order.
"""

from __future__ import annotations

import csv
import json
import os
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from datetime import date
from importlib import resources

import numpy as np

from .datamodel import DEFAULT_WINDOW, LABELS, CensusAreaId, CountyId, LabelRecord, ValidationError

DEFAULT_VARIANCE_FLOOR = 1e-6


@dataclass(frozen=True)
class RecodingScheme:
    scores: Mapping[str, float] = field(
        default_factory=lambda: {"low": -1.0, "medium": 0.5, "high": 1.0, "not_present": 0.0}
    )

    def __post_init__(self):
        if set(self.scores) != set(LABELS):
            raise ValidationError(f"recoding scheme must cover exactly {LABELS}")
        if self.scores["not_present"] != 0.0:
            raise ValidationError("not_present must recode to 0")
        if any(not -1.0 <= v <= 1.0 for v in self.scores.values()):
            raise ValidationError("recoded scores must lie in [-1, 1]")


DEFAULT_SCHEME = RecodingScheme()


def recode(label: str, scheme: RecodingScheme = DEFAULT_SCHEME) -> float:
    return float(scheme.scores[label])


@dataclass(frozen=True)
class DailyAreaCell:
    area: CensusAreaId
    day: date
    question: str
    sum: float
    related_count: int

    def merge(self, other: DailyAreaCell) -> DailyAreaCell:
        return DailyAreaCell(
            self.area, self.day, self.question,
            self.sum + other.sum, self.related_count + other.related_count,
        )


CellKey = tuple[CensusAreaId, date, str]


def aggregate_daily(
    records: Iterable[LabelRecord], scheme: RecodingScheme = DEFAULT_SCHEME
) -> dict[CellKey, DailyAreaCell]:
    """Sum recoded labels per (area, day, question)."""
    acc: dict[CellKey, list] = {}
    scores = scheme.scores
    for r in records:
        key = (r.area, r.day, r.question)
        slot = acc.get(key)
        if slot is None:
            slot = acc[key] = [0.0, 0]
        slot[0] += scores[r.label]
        if r.label != "not_present":
            slot[1] += 1
    return {k: DailyAreaCell(k[0], k[1], k[2], s, n) for k, (s, n) in acc.items()}


def merge_cells(*shards: Mapping[CellKey, DailyAreaCell]) -> dict[CellKey, DailyAreaCell]:
    """Combine per-shard daily cells; commutative and associative."""
    out: dict[CellKey, DailyAreaCell] = {}
    for shard in shards:
        for key, cell in shard.items():
            prev = out.get(key)
            out[key] = cell if prev is None else prev.merge(cell)
    return out


@dataclass(frozen=True)
class CountySums:
    """Raw county totals: ``totals[(county, question)] = (sum, related_count)``."""

    totals: dict[tuple[CountyId, str], tuple[float, int]]
    period: tuple[date, date]


def aggregate_county(
    cells: Mapping[CellKey, DailyAreaCell] | Iterable[DailyAreaCell],
    period: tuple[date, date] = DEFAULT_WINDOW,
) -> CountySums:
    """Roll daily area cells up to counties over ``period`` (inclusive)."""
    start, end = period
    values = cells.values() if isinstance(cells, Mapping) else cells
    totals: dict[tuple[CountyId, str], list] = {}
    for cell in values:
        if not (start <= cell.day <= end):
            continue
        key = (cell.area.county, cell.question)
        slot = totals.get(key)
        if slot is None:
            slot = totals[key] = [0.0, 0]
        slot[0] += cell.sum
        slot[1] += cell.related_count
    return CountySums({k: (s, n) for k, (s, n) in totals.items()}, period)


@dataclass(frozen=True)
class IndicatorMatrix:
    """County x indicator scores in [-1, 1] with tweet support counts.

    Cells with zero support are NaN in ``values`` and 0 in ``support``.
    Rows are sorted by FIPS; column order is significant.
    """

    counties: tuple[CountyId, ...]
    columns: tuple[str, ...]
    values: np.ndarray
    support: np.ndarray
    period: tuple[date, date] = DEFAULT_WINDOW

    def __post_init__(self):
        shape = (len(self.counties), len(self.columns))
        values = np.asarray(self.values, dtype=float).reshape(shape)
        support = np.asarray(self.support, dtype=np.int64).reshape(shape)
        if len(set(self.columns)) != len(self.columns):
            raise ValidationError("duplicate indicator column")
        present = support > 0
        if np.any(np.isfinite(values) & ~present):
            raise ValidationError("indicator value without support")
        if np.any(~np.isfinite(values[present])):
            raise ValidationError("supported indicator cell is missing")
        if np.any(np.abs(values[present]) > 1.0):
            raise ValidationError("indicator outside [-1, 1]")
        values.setflags(write=False)
        support.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "support", support)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def select(self, columns: Iterable[str]) -> IndicatorMatrix:
        idx = [self.columns.index(c) for c in columns]
        return IndicatorMatrix(
            self.counties, tuple(self.columns[i] for i in idx),
            self.values[:, idx], self.support[:, idx], self.period,
        )

    def equals(self, other: IndicatorMatrix) -> bool:
        """Exact equality, treating NaN cells as equal."""
        return (
            self.counties == other.counties
            and self.columns == other.columns
            and self.period == other.period
            and np.array_equal(self.values, other.values, equal_nan=True)
            and np.array_equal(self.support, other.support)
        )


def normalize(sums: CountySums) -> IndicatorMatrix:
    """Divide county sums by related counts; zero support stays missing."""
    counties = sorted({c for c, _ in sums.totals})
    columns = sorted({q for _, q in sums.totals})
    ci = {c: i for i, c in enumerate(counties)}
    qi = {q: i for i, q in enumerate(columns)}
    values = np.full((len(counties), len(columns)), np.nan)
    support = np.zeros(values.shape, dtype=np.int64)
    for (c, q), (s, n) in sums.totals.items():
        if n > 0:
            values[ci[c], qi[q]] = s / n
            support[ci[c], qi[q]] = n
    return IndicatorMatrix(tuple(counties), tuple(columns), values, support, sums.period)


def build_indicators(
    records: Iterable[LabelRecord],
    scheme: RecodingScheme = DEFAULT_SCHEME,
    period: tuple[date, date] = DEFAULT_WINDOW,
) -> IndicatorMatrix:
    return normalize(aggregate_county(aggregate_daily(records, scheme), period))


def month_periods(window: tuple[date, date] = DEFAULT_WINDOW) -> list[tuple[date, date]]:
    """Calendar-month periods covering ``window``, clipped to its bounds."""
    start, end = window
    out = []
    y, m = start.year, start.month
    while date(y, m, 1) <= end:
        ny, nm = (y + 1, 1) if m == 12 else (y, m + 1)
        last = date.fromordinal(date(ny, nm, 1).toordinal() - 1)
        out.append((max(start, date(y, m, 1)), min(end, last)))
        y, m = ny, nm
    return out


@dataclass(frozen=True)
class DerivationRule:
    target: str
    source: str
    sign: int = -1

    def __post_init__(self):
        if self.target == self.source:
            raise ValidationError("derived indicator must differ from its source")
        if self.sign not in (-1, 1):
            raise ValidationError("derivation sign must be +1 or -1")


def derive(matrix: IndicatorMatrix, rules: Iterable[DerivationRule]) -> IndicatorMatrix:
    """Append sign-flipped copies of source columns; sources are kept."""
    columns = list(matrix.columns)
    values = [matrix.values[:, i] for i in range(len(columns))]
    support = [matrix.support[:, i] for i in range(len(columns))]
    for rule in rules:
        if rule.source not in columns:
            raise ValidationError(f"derivation source column {rule.source!r} missing")
        if rule.target in columns:
            raise ValidationError(f"derived column {rule.target!r} already present")
        j = columns.index(rule.source)
        columns.append(rule.target)
        # -0.0 would make bitwise comparisons order-sensitive
        values.append(rule.sign * values[j] + 0.0)
        support.append(support[j].copy())
    n = len(matrix.counties)
    return IndicatorMatrix(
        matrix.counties, tuple(columns),
        np.column_stack(values) if values else np.empty((n, 0)),
        np.column_stack(support) if support else np.empty((n, 0), dtype=np.int64),
        matrix.period,
    )


def screen_variance(
    matrix: IndicatorMatrix, threshold: float = DEFAULT_VARIANCE_FLOOR
) -> tuple[IndicatorMatrix, list[str]]:
    """Drop columns whose variance across counties falls below ``threshold``.

    Variance uses the non-missing cells of each column (population form,
    ``ddof=0``). Columns with no present cells are dropped as well.
    """
    if threshold < 0:
        raise ValueError("variance threshold must be non-negative")
    keep, dropped = [], []
    for j, name in enumerate(matrix.columns):
        col = matrix.values[:, j]
        col = col[np.isfinite(col)]
        var = float(np.var(col)) if col.size else -np.inf
        (keep if col.size and var >= threshold else dropped).append(name)
    return matrix.select(keep), dropped


@dataclass(frozen=True)
class IndicatorEntry:
    key: str
    description: str = ""
    derived_from: str | None = None
    sign: int = 1
    active: bool = True
    excluded: str | None = None


@dataclass(frozen=True)
class IndicatorDictionary:
    """Declarative roster of questions, derived indicators and the active set."""

    entries: tuple[IndicatorEntry, ...]
    name: str = ""

    @property
    def questions(self) -> tuple[str, ...]:
        """Raw question keys a label stream may carry."""
        return tuple(e.key for e in self.entries if e.derived_from is None)

    @property
    def rules(self) -> tuple[DerivationRule, ...]:
        return tuple(
            DerivationRule(e.key, e.derived_from, e.sign)
            for e in self.entries if e.derived_from is not None
        )

    @property
    def active(self) -> tuple[str, ...]:
        return tuple(e.key for e in self.entries if e.active)

    @property
    def excluded(self) -> tuple[str, ...]:
        return tuple(e.key for e in self.entries if e.excluded)

    def __getitem__(self, key: str) -> IndicatorEntry:
        for e in self.entries:
            if e.key == key:
                return e
        raise KeyError(key)


def load_dictionary(path: str | os.PathLike | None = None) -> IndicatorDictionary:
    """Load an indicator dictionary; ``None`` gives the bundled 46-question roster."""
    if path is None:
        text = resources.files("flourishsem.data").joinpath("indicator_dictionary.json").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    doc = json.loads(text)
    raw = doc["indicators"] if isinstance(doc, dict) else doc
    entries = []
    for item in raw:
        entries.append(IndicatorEntry(
            key=item["key"],
            description=item.get("description", ""),
            derived_from=item.get("derived_from"),
            sign=int(item.get("sign", -1 if item.get("derived_from") else 1)),
            active=bool(item.get("active", True)),
            excluded=item.get("excluded"),
        ))
    keys = [e.key for e in entries]
    if len(set(keys)) != len(keys):
        raise ValidationError("duplicate key in indicator dictionary")
    for e in entries:
        if e.derived_from is not None and e.derived_from not in keys:
            raise ValidationError(f"{e.key} derives from unknown key {e.derived_from!r}")
    return IndicatorDictionary(tuple(entries), doc.get("name", "") if isinstance(doc, dict) else "")


def write_indicators(matrix: IndicatorMatrix, dest) -> None:
    """Write values then ``<indicator>__n`` support columns; missing cells empty."""
    with open(dest, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fips", *matrix.columns, *(f"{c}__n" for c in matrix.columns)])
        for i, county in enumerate(matrix.counties):
            vals = ["" if m == 0 else repr(float(v))
                    for v, m in zip(matrix.values[i], matrix.support[i])]
            w.writerow([county.fips, *vals, *(str(int(n)) for n in matrix.support[i])])


def read_indicators(source, period: tuple[date, date] = DEFAULT_WINDOW) -> IndicatorMatrix:
    with open(source, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "fips":
            raise ValidationError("indicator file must start with a 'fips' column")
        names = [h for h in header[1:] if not h.endswith("__n")]
        pos = {h: i for i, h in enumerate(header)}
        counties, values, support = [], [], []
        for row in reader:
            counties.append(CountyId(row[0]))
            values.append([float(row[pos[c]]) if row[pos[c]] else np.nan for c in names])
            support.append([
                int(row[pos[c + "__n"]]) if c + "__n" in pos
                else int(row[pos[c]] != "") for c in names
            ])
    shape = (len(counties), len(names))
    return IndicatorMatrix(
        tuple(counties), tuple(names),
        np.array(values, dtype=float).reshape(shape),
        np.array(support, dtype=np.int64).reshape(shape), period,
    )
