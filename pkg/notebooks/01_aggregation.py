"""
From labelled posts to a county indicator matrix
================================================

Each labelled post answers one question with ``low``, ``medium``, ``high``
or ``not_present``. Labels are recoded to numbers, summed per census area
and day, rolled up to counties, and divided by the number of *related*
posts (those not marked ``not_present``). Counties with no related posts
stay missing.
"""

from datetime import date

import numpy as np

from flourishsem.datamodel import CensusAreaId, LabelRecord
from flourishsem.indicators import (
    DerivationRule, aggregate_county, aggregate_daily, derive, load_dictionary, normalize,
    screen_variance,
)
from flourishsem.synth import LabelSynthConfig, generate_labels

###############################################################################
# A handful of records by hand
# ----------------------------
# Two posts in Harris County (48201) on the same day: one ``high``, one
# ``medium``, plus a post that does not touch the question at all.

area = CensusAreaId("48201100000")
day = date(2019, 8, 1)
records = [
    LabelRecord("a", day, area, "happiness", "high"),
    LabelRecord("b", day, area, "happiness", "medium"),
    LabelRecord("c", day, area, "happiness", "not_present"),
]
cells = aggregate_daily(records)
for cell in cells.values():
    print(cell.area.geoid, cell.day, cell.question, "sum", cell.sum, "related", cell.related_count)

matrix = normalize(aggregate_county(cells))
print("indicator:", matrix.column("happiness"))  # (1 + 0.5) / 2 = 0.75

###############################################################################
# Sign-flipped indicators
# -----------------------
# Worry about the future is turned into a security score by negation.

fear = normalize(aggregate_county(aggregate_daily([
    LabelRecord("d", day, area, "fearfuture", "high"),
    LabelRecord("e", day, area, "fearfuture", "low"),
    LabelRecord("f", day, area, "fearfuture", "medium"),
])))
flipped = derive(fear, [DerivationRule("future_sec", "fearfuture")])
print(dict(zip(flipped.columns, flipped.values[0])))

###############################################################################
# A synthetic stream over many counties
# -------------------------------------
# ``generate_labels`` draws records from fixed label probabilities with a
# seeded generator, so this block prints the same numbers on every run.

stream = generate_labels(LabelSynthConfig(seed=7, counties=80, tweets_per_county=40,
                                          questions=("happiness", "anxiety", "corruption"),
                                          probabilities=(0.3, 0.2, 0.3, 0.2)))
m = normalize(aggregate_county(aggregate_daily(stream)))
print(f"{len(stream)} records -> {m.values.shape[0]} counties x {m.values.shape[1]} indicators")
print("column means:", dict(zip(m.columns, np.round(np.nanmean(m.values, axis=0), 3))))

###############################################################################
# Screening
# ---------
# Questions that barely vary across counties carry no information for the
# model. The bundled dictionary marks three of them; here a flat column is
# made on purpose and removed by the variance screen.

flat = m.values.copy()
flat[:, m.columns.index("corruption")] = 0.5
kept, dropped = screen_variance(type(m)(m.counties, m.columns, flat, m.support))
print("dropped:", dropped)

dictionary = load_dictionary()
print(f"bundled roster: {len(dictionary.questions)} questions, {len(dictionary.active)} model indicators,"
      f" excluded {list(dictionary.excluded)}")
