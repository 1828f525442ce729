"""Seeded synthetic label streams and model-based observations.

Random streams
--------------
Every draw comes from numpy's ``PCG64`` bit generator seeded through
``SeedSequence(seed, spawn_key=key)``. Keys split the work:

* ``(0, county_index)`` -- label stream of one county
* ``(1, chunk_index)`` -- SEM cases ``[chunk * 4096, (chunk + 1) * 4096)``

Uniforms are ``Generator.random()`` doubles in [0, 1). Normals use the
Box-Muller transform on consecutive uniform pairs ``(u1, u2)``::

    r = sqrt(-2 ln(1 - u1));  z1 = r cos(2 pi u2);  z2 = r sin(2 pi u2)

A case needing ``k`` normals consumes ``2 * ceil(k / 2)`` uniforms, in
order: exogenous/disturbance draws for the latents first, then one
residual per observed variable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import date, timedelta

import numpy as np

from .datamodel import DEFAULT_WINDOW, LABELS, CensusAreaId, ClimateTable, CountyId, LabelRecord, ObservedTable
from .indicators import IndicatorDictionary
from .sem.covariance import ParameterVector, implied_covariance
from .sem.model import ModelSpec

CHUNK = 4096


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def box_muller(u: np.ndarray) -> np.ndarray:
    """Map uniforms of shape (..., 2m) to standard normals of the same shape."""
    u1, u2 = u[..., 0::2], u[..., 1::2]
    r = np.sqrt(-2.0 * np.log1p(-u1))
    out = np.empty_like(u)
    out[..., 0::2] = r * np.cos(2.0 * np.pi * u2)
    out[..., 1::2] = r * np.sin(2.0 * np.pi * u2)
    return out


def synthetic_fips(i: int) -> str:
    """Deterministic, valid-looking FIPS code for county index ``i``."""
    return f"{1 + i // 400:02d}{1 + 2 * (i % 400):03d}"


def synthetic_geoid(fips: str, k: int) -> str:
    return f"{fips}{100 * (k + 1):06d}"


@dataclass(frozen=True)
class LabelSynthConfig:
    seed: int
    counties: int = 50
    areas_per_county: int = 3
    tweets_per_county: int = 20
    questions: tuple[str, ...] = ("happiness", "anxiety")
    probabilities: tuple[float, float, float, float] | dict = (0.4, 0.2, 0.2, 0.2)
    window: tuple[date, date] = DEFAULT_WINDOW

    def __post_init__(self):
        probs = self.probabilities
        vectors = probs.values() if isinstance(probs, dict) else [probs]
        for p in vectors:
            if len(p) != len(LABELS) or any(x < 0 for x in p) or abs(sum(p) - 1.0) > 1e-12:
                raise ValueError("label probabilities must be 4 non-negative numbers summing to 1")
        if isinstance(probs, dict) and set(probs) != set(self.questions):
            raise ValueError("per-question probabilities must cover every question")

    def probs_for(self, q: str) -> np.ndarray:
        p = self.probabilities[q] if isinstance(self.probabilities, dict) else self.probabilities
        return np.asarray(p, dtype=float)


def generate_labels(config: LabelSynthConfig) -> list[LabelRecord]:
    """One record per (tweet, question); tweets are spread over areas and days.

    Labels are drawn over (not_present, low, medium, high) by inverse CDF
    of a uniform. Output is county-major and identical for a given seed.
    """
    start, end = config.window
    span = (end - start).days + 1
    records = []
    cdfs = {q: np.cumsum(config.probs_for(q)) for q in config.questions}
    for ci in range(config.counties):
        rng = stream(config.seed, 0, ci)
        fips = synthetic_fips(ci)
        areas = [CensusAreaId(synthetic_geoid(fips, k)) for k in range(config.areas_per_county)]
        n = config.tweets_per_county
        area_idx = np.minimum((rng.random(n) * len(areas)).astype(int), len(areas) - 1)
        day_off = np.minimum((rng.random(n) * span).astype(int), span - 1)
        u = rng.random((n, len(config.questions)))
        for t in range(n):
            day = start + timedelta(days=int(day_off[t]))
            tid = f"s{config.seed}c{ci}t{t}"
            for j, q in enumerate(config.questions):
                k = int(np.searchsorted(cdfs[q], u[t, j], side="right"))
                records.append(LabelRecord(tid, day, areas[area_idx[t]], q, LABELS[min(k, 3)]))
    return records


def _disturbance_factor(spec: ModelSpec, values: np.ndarray) -> np.ndarray:
    """Square-root factor F of omega (F F' = omega), per latent block."""
    m = ParameterVector(spec, values).matrices()
    lat = {l: i for i, l in enumerate(spec.latents)}
    f = np.zeros_like(m.omega)
    exo = [lat[l] for l in spec.exogenous]
    if exo:
        phi = m.omega[np.ix_(exo, exo)]
        if np.allclose(phi, 0):
            chol = np.zeros_like(phi)
        else:
            chol = np.linalg.cholesky(phi)
        f[np.ix_(exo, exo)] = chol
    for l in spec.endogenous:
        i = lat[l]
        f[i, i] = math.sqrt(max(m.omega[i, i], 0.0))
    return f


def generate_observations(
    spec: ModelSpec, truth: ParameterVector | np.ndarray, n: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` cases from the model; returns (n x p data, population Sigma).

    Exogenous latents and disturbances are drawn from N(0, omega), then
    endogenous latents follow their structural equations and observed
    variables their measurement equations with independent residuals.
    """
    values = truth.values if isinstance(truth, ParameterVector) else np.asarray(truth, float)
    if n <= 0:
        raise ValueError("case count must be positive")
    m = ParameterVector(spec, values).matrices()
    f = _disturbance_factor(spec, values)
    big_l = len(spec.latents)
    p = spec.n_observed
    k = big_l + p
    width = 2 * math.ceil(k / 2)
    resid_sd = np.sqrt(np.maximum(m.theta, 0.0))
    t = m.transfer
    out = np.empty((n, p))
    for c in range(math.ceil(n / CHUNK)):
        lo, hi = c * CHUNK, min(n, (c + 1) * CHUNK)
        rng = stream(seed, 1, c)
        z = box_muller(rng.random((hi - lo, width)))[:, :k]
        latents = z[:, :big_l] @ f.T @ t.T
        out[lo:hi] = latents @ m.loadings.T + z[:, big_l:] * resid_sd
    return out, implied_covariance(spec, values)


# -- the default truth used by simulate ------------------------------------

#: Structural path signs and sizes for the bundled model (distress rises
#: with climate risk, every other dimension falls).
DEFAULT_PATHS = {
    "subjective_wellbeing": -0.7,
    "meaning_purpose": -0.75,
    "character_virtue": -0.6,
    "social_connectedness": -0.7,
    "psychological_distress": 0.65,
    "physical_condition": -0.8,
    "economic_stability": -0.8,
    "religious_spiritual": -0.6,
    "institutional_trust": -0.3,
}

#: Indicators that load negatively on their dimension.
REVERSE_KEYED = frozenset({"loneliness", "pain", "healthlim", "discrim", "polvoice", "relcrit", "spiritpun"})


def default_truth(spec: ModelSpec) -> ParameterVector:
    """A well-conditioned parameter vector for ``spec``.

    Loadings cycle through 0.9, 0.8, 1.1, 0.7 (negated for reverse-keyed
    indicators), exogenous variances are 1, disturbances 0.4, residual
    variances cycle through 0.4, 0.5, 0.6; paths come from
    :data:`DEFAULT_PATHS` or default to -0.5.
    """
    cycle = (0.9, 0.8, 1.1, 0.7)
    resid = (0.4, 0.5, 0.6)
    out = []
    pos: dict[str, int] = {}
    for prm in spec.params:
        if prm.kind == "loading":
            k = pos.get(prm.lhs, 0)
            pos[prm.lhs] = k + 1
            v = cycle[k % len(cycle)]
            out.append(-v if prm.rhs in REVERSE_KEYED else v)
        elif prm.kind == "path":
            out.append(DEFAULT_PATHS.get(prm.lhs, -0.5))
        elif prm.kind == "phi":
            out.append(1.0 if prm.lhs == prm.rhs else 0.0)
        elif prm.kind == "psi":
            out.append(0.4)
        else:
            out.append(resid[prm.row % len(resid)])
    return ParameterVector(spec, np.array(out))


@dataclass(frozen=True)
class SemSynthConfig:
    """Closed-loop fixture: model draws rendered as climate scores and labels.

    Hazard values map to percentiles as ``50 + climate_scale * x``; flourishing
    values to target indicator means ``indicator_scale * y``. Both are
    clipped to their ranges (clips are counted). Each county-question gets
    ``related_per_indicator`` related labels whose mean best approximates
    the target, plus ``noise_per_indicator`` ``not_present`` labels.
    """

    seed: int
    counties: int = 200
    areas_per_county: int = 3
    related_per_indicator: int = 30
    noise_per_indicator: int = 6
    climate_scale: float = 8.0
    indicator_scale: float = 0.12
    window: tuple[date, date] = DEFAULT_WINDOW
    truth: dict[str, float] | None = None

    def __post_init__(self):
        if self.related_per_indicator < 1:
            raise ValueError("need at least one related label per indicator")


@dataclass
class SemFixture:
    spec: ModelSpec
    truth: ParameterVector
    observations: ObservedTable
    climate: ClimateTable
    labels: list[LabelRecord]
    clipped: dict[str, int] = field(default_factory=dict)


def label_counts(target: float, n: int) -> tuple[int, int, int]:
    """(low, medium, high) counts of ``n`` labels whose mean is nearest ``target``."""
    target = min(1.0, max(-1.0, target))
    if target >= 0.5:
        high = round(n * (target - 0.5) / 0.5)
        return 0, n - high, high
    low = round(n * (0.5 - target) / 1.5)
    return low, n - low, 0


def generate_fixture(spec: ModelSpec, dictionary: IndicatorDictionary, config: SemSynthConfig) -> SemFixture:
    """Draw county observations from the model and render them as inputs.

    The exogenous block's indicators must be hazard names; every other
    observed variable must be a dictionary key. Derived indicators are
    rendered through their source question (sign applied), and raw
    questions outside the model get a constant ``medium`` stream.
    """
    from .datamodel import HAZARDS

    truth = (ParameterVector.from_dict(spec, config.truth) if config.truth
             else default_truth(spec))
    data, _ = generate_observations(spec, truth, config.counties, config.seed)
    names = spec.observed
    counties = tuple(CountyId(synthetic_fips(i)) for i in range(config.counties))
    obs = ObservedTable(counties, names, data)
    clipped = {"climate": 0, "indicators": 0}

    hz = np.full((config.counties, len(HAZARDS)), 50.0)
    for j, h in enumerate(HAZARDS):
        if h in names:
            col = 50.0 + config.climate_scale * data[:, names.index(h)]
            clipped["climate"] += int(np.sum((col < 0) | (col > 100)))
            hz[:, j] = np.clip(col, 0.0, 100.0)
    climate = ClimateTable(counties, hz)

    derived = {r.target: r for r in dictionary.rules}
    targets: dict[str, np.ndarray] = {}
    for name in names:
        if name in HAZARDS:
            continue
        y = config.indicator_scale * data[:, names.index(name)]
        clipped["indicators"] += int(np.sum(np.abs(y) > 1))
        y = np.clip(y, -1.0, 1.0)
        if name in derived:
            targets[derived[name].source] = derived[name].sign * y
        else:
            targets[name] = y
    questions = dictionary.questions
    unknown = [q for q in targets if q not in questions]
    if unknown:
        raise ValueError(f"model indicators not in the dictionary: {unknown}")

    start, end = config.window
    span = (end - start).days + 1
    labels: list[LabelRecord] = []
    n_rel, n_noise = config.related_per_indicator, config.noise_per_indicator
    for ci, county in enumerate(counties):
        rng = stream(config.seed, 0, ci)
        areas = [CensusAreaId(synthetic_geoid(county.fips, k)) for k in range(config.areas_per_county)]
        for q in questions:
            if q in targets:
                low, med, high = label_counts(float(targets[q][ci]), n_rel)
            else:
                low, med, high = 0, n_rel, 0
            pool = ["low"] * low + ["medium"] * med + ["high"] * high + ["not_present"] * n_noise
            order = rng.permutation(len(pool))
            a_idx = np.minimum((rng.random(len(pool)) * len(areas)).astype(int), len(areas) - 1)
            d_off = np.minimum((rng.random(len(pool)) * span).astype(int), span - 1)
            for t, k in enumerate(order):
                labels.append(LabelRecord(
                    f"c{county.fips}{q}{t}", start + timedelta(days=int(d_off[t])),
                    areas[a_idx[t]], q, pool[k],
                ))
    return SemFixture(spec, truth, obs, climate, labels, clipped)
