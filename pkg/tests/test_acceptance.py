"""Acceptance criteria, one test per criterion.

Each test records a ``[PASS]``/``[FAIL]`` line through the ``criterion``
fixture (printed with ``-s`` and collected in the terminal summary) and
then asserts, so a failing criterion also fails the test run.
"""

import json
import os
import time
import warnings
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pytest

from flourishsem.cli import main
from flourishsem.datamodel import CensusAreaId, CountyId, LabelRecord, ObservedTable
from flourishsem.indicators import build_indicators
from flourishsem.scoring import factor_scores, score_weights
from flourishsem.sem import (
    Discrepancy, FitOptions, SampleMoments, fit, implied_covariance,
)
from flourishsem.sem.estimate import standardized_truth
from flourishsem.synth import LabelSynthConfig, default_truth, generate_labels, generate_observations
from oracles import TOPOLOGIES, block_implied_covariance, brute_force_indicators, fd_gradient, random_theta, topology

ALL_TOPOLOGIES = list(TOPOLOGIES) + ["full"]
LABELS = ("not_present", "low", "medium", "high")


def _loadings_and_paths(spec, std):
    return sorted(k for k in std if "=~" in k or ("~" in k and "~~" not in k))


def test_c01_aggregation_oracle(criterion):
    questions = ("happiness", "anxiety", "optimism", "trust", "pain")
    recs = generate_labels(LabelSynthConfig(seed=101, counties=60, tweets_per_county=34,
                                            questions=questions, probabilities=(0.25, 0.3, 0.25, 0.2)))
    t0 = time.perf_counter()
    m = build_indicators(recs)
    elapsed = time.perf_counter() - t0
    oracle = brute_force_indicators(recs)
    mismatches = 0
    for (fips, q), (val, n) in oracle.items():
        i, j = m.counties.index(CountyId(fips)), m.columns.index(q)
        if not (m.values[i, j] == val and m.support[i, j] == n):
            mismatches += 1
    mismatches += int((m.support > 0).sum()) - len(oracle)
    ok = len(recs) >= 10_000 and len(m.counties) >= 50 and mismatches == 0 and elapsed < 5.0
    criterion("C1 aggregation oracle", ok,
              f"{len(recs)} records, {len(m.counties)} counties, {mismatches} mismatches, {elapsed:.2f}s")
    assert ok


def test_c02_bounds_and_missingness(criterion):
    rng = np.random.default_rng(2)
    violations = 0
    areas = [CensusAreaId(f"{c:05d}{k:06d}") for c in (1001, 1003, 6037, 48201, 36061) for k in (100, 200)]
    for _ in range(1000):
        n = int(rng.integers(0, 60))
        p = rng.dirichlet(np.ones(4))
        recs = [LabelRecord(f"t{i}", date(2013, 1, 1) + timedelta(days=int(rng.integers(0, 3800))),
                            areas[int(rng.integers(len(areas)))], f"q{int(rng.integers(3))}",
                            LABELS[int(rng.choice(4, p=p))]) for i in range(n)]
        m = build_indicators(recs)
        present = m.support > 0
        violations += int(np.sum(np.abs(m.values[present]) > 1.0))
        violations += int(np.sum(np.isfinite(m.values) != present))
    criterion("C2 bounds and missingness", violations == 0, f"1000 record sets, {violations} violations")
    assert violations == 0


def test_c03_implied_covariance(criterion):
    rng = np.random.default_rng(3)
    worst = 0.0
    for name in ALL_TOPOLOGIES:
        spec = topology(name)
        for _ in range(50):
            v = random_theta(spec, rng)
            sigma = implied_covariance(spec, v)
            worst = max(worst, float(np.max(np.abs(sigma - block_implied_covariance(spec, v)))))
            assert np.array_equal(sigma, sigma.T)
    ok = worst < 1e-12
    criterion("C3 implied covariance vs block oracle", ok, f"5 topologies x 50 draws, max |diff| {worst:.2e}")
    assert ok


def test_c04_gradient(criterion):
    rng = np.random.default_rng(4)
    worst = 0.0
    for name in ALL_TOPOLOGIES:
        spec = topology(name)
        for _ in range(20):
            s = block_implied_covariance(spec, random_theta(spec, rng))
            s = s + np.diag(rng.uniform(0.0, 0.3, size=len(s)))
            at = random_theta(spec, rng)
            g = Discrepancy(spec, s).gradient(at)
            g_fd = fd_gradient(spec, s, at)
            worst = max(worst, float(np.linalg.norm(g - g_fd) / np.linalg.norm(g_fd)))
    ok = worst < 1e-5
    criterion("C4 analytic gradient", ok, f"5 topologies x 20 points, max relative error {worst:.2e}")
    assert ok


def test_c05_population_recovery(criterion):
    rng = np.random.default_rng(5)
    worst_err, worst_f, full_time = 0.0, 0.0, 0.0
    # the two-variable topology has df < 0: Sigma cannot pin down its parameters
    identified = [n for n in ALL_TOPOLOGIES if topology(n).degrees_of_freedom() >= 0]
    for name in identified:
        spec = topology(name)
        truth = default_truth(spec).values if name == "full" else random_theta(spec, rng)
        m = SampleMoments(spec.observed, implied_covariance(spec, truth), 1000)
        t0 = time.perf_counter()
        res = fit(spec, m, FitOptions(compute_se=False))
        if name == "full":
            full_time = time.perf_counter() - t0
        worst_err = max(worst_err, float(np.max(np.abs(res.estimates.values - truth))))
        worst_f = max(worst_f, res.fmin)
    ok = worst_err < 1e-4 and worst_f < 1e-10 and full_time < 60
    criterion("C5 population recovery", ok,
              f"{', '.join(identified)}: max |error| {worst_err:.2e}, max F {worst_f:.2e}, "
              f"full model {full_time:.2f}s")
    assert ok


def test_c06_monte_carlo(criterion, full_spec):
    spec = full_spec
    truth = default_truth(spec)
    target = standardized_truth(spec, truth.values)
    keys = _loadings_and_paths(spec, target)
    errs = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for r in range(20):
            x, _ = generate_observations(spec, truth, 5000, seed=6000 + r)
            res = fit(spec, SampleMoments.from_data(x, spec.observed), FitOptions(compute_se=False))
            errs.append([abs(res.standardized[k] - target[k]) for k in keys])
    med = np.median(np.array(errs), axis=0)
    ok_rec = float(med.max()) < 0.05
    criterion("C6a Monte Carlo recovery (N=5000, 20 reps)", ok_rec,
              f"{len(keys)} standardized loadings/paths, largest per-parameter median |error| {med.max():.4f}")

    # SE scaling: mean SE over 5 replications per N, ratio per parameter
    se = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for n in (1000, 4000, 16000):
            reps = []
            for r in range(5):
                x, _ = generate_observations(spec, truth, n, seed=6100 + r)
                reps.append(fit(spec, SampleMoments.from_data(x, spec.observed)).se)
            se[n] = np.mean(reps, axis=0)
    dev = max(float(np.max(np.abs(se[a] / se[b] / 2.0 - 1.0))) for a, b in ((1000, 4000), (4000, 16000)))
    ok_se = dev < 0.10
    criterion("C6b SE shrink as 1/sqrt(N)", ok_se,
              f"N in (1000, 4000, 16000), {spec.n_free} parameters, max |ratio/2 - 1| {dev:.3f}")
    assert ok_rec and ok_se


def test_c07_standardization_invariance(criterion, full_spec):
    spec = full_spec
    x, _ = generate_observations(spec, default_truth(spec), 5000, seed=7)
    m = SampleMoments.from_data(x, spec.observed)
    opts = FitOptions(compute_se=False)
    base = fit(spec, m, opts)
    keys = _loadings_and_paths(spec, base.standardized)
    worst = 0.0
    for ind in spec.observed:
        for c in (0.1, 10.0):
            d = np.ones(spec.n_observed)
            d[spec.observed.index(ind)] = c
            res = fit(spec, SampleMoments(m.names, m.cov * np.outer(d, d), m.n), opts)
            worst = max(worst, max(abs(res.standardized[k] - base.standardized[k]) for k in keys))
    ok = worst < 1e-6
    criterion("C7 standardization invariance", ok,
              f"all {spec.n_observed} indicators x c in (0.1, 10), max |diff| {worst:.2e}")
    assert ok


def test_c08_degrees_of_freedom(criterion, full_spec):
    p = full_spec.n_observed
    n_free = full_spec.n_free
    df = full_spec.degrees_of_freedom()
    counted = (p - len(full_spec.latents)) + len(full_spec.paths) + 1 + len(full_spec.endogenous) + p
    ok = n_free == 107 == counted and df == 1118 == p * (p + 1) // 2 - counted
    criterion("C8 degrees of freedom", ok, f"free parameters {n_free}, df {df}")
    assert ok


def test_c09_score_shrinkage(criterion, full_spec):
    spec = full_spec
    est = default_truth(spec)
    x, _ = generate_observations(spec, est, 20000, seed=9)
    counties = tuple(CountyId(f"{1 + i // 900:02d}{1 + i % 900:03d}") for i in range(20000))
    scores = factor_scores(est, ObservedTable(counties, spec.observed, x))
    w = score_weights(est)
    lo = est.matrices().latent_observed_covariance()
    expected = w @ lo.T
    worst = float(np.max(np.abs(np.cov(scores.values, rowvar=False) - expected)))
    ok = worst < 0.02
    criterion("C9 factor-score shrinkage", ok, f"N=20000, 10 latents, max |diff| {worst:.4f}")
    assert ok


def _pipeline(root: Path) -> dict[str, bytes]:
    root.mkdir()
    (root / "run.json").write_text(json.dumps({"out": "out", "simulate": {"counties": 200}}))
    cfg = str(root / "run.json")
    out = root / "out"
    codes = [
        main(["simulate", "--config", cfg, "--seed", "2024"]),
        main(["aggregate", "--config", cfg, "--labels", str(out / "labels.csv")]),
        main(["fit", "--config", cfg, "--climate", str(out / "climate.csv")]),
        main(["scores", "--config", cfg, "--climate", str(out / "climate.csv")]),
    ]
    assert codes == [0, 0, 0, 0], codes
    files = {}
    for f in sorted(out.rglob("*")):
        if f.is_file():
            data = f.read_bytes()
            if f.name.startswith("report_"):
                doc = json.loads(data)
                doc.pop("timestamp")
                data = json.dumps(doc, sort_keys=True).encode()
            files[f.name] = data
    return files


def test_c10_end_to_end_determinism(criterion, tmp_path):
    a = _pipeline(tmp_path / "a")
    b = _pipeline(tmp_path / "b")
    differing = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
    ok = not differing and {"labels.csv", "indicators.csv", "fit.json", "scores.csv"} <= set(a)
    criterion("C10 end-to-end determinism", ok,
              f"{len(a)} artifacts compared (report timestamps excluded), differing: {differing or 'none'}")
    assert ok


@pytest.mark.skipif(not (os.environ.get("FLOURISHSEM_HFGI") and os.environ.get("FLOURISHSEM_CRI")),
                    reason="set FLOURISHSEM_HFGI and FLOURISHSEM_CRI to the county tables")
def test_c11_real_data_sign_pattern(criterion, full_spec):
    from flourishsem.datamodel import ingest_climate, join_observed
    from flourishsem.indicators import read_indicators
    matrix = read_indicators(os.environ["FLOURISHSEM_HFGI"])
    climate = ingest_climate(os.environ["FLOURISHSEM_CRI"])
    complete, _ = join_observed(matrix, climate, full_spec.observed).complete()
    res = fit(full_spec, SampleMoments.from_data(complete.values, complete.names, complete.counties))
    rows = {r["name"]: r for r in res.table()}
    signs_ok, detail = True, []
    for o, p in full_spec.paths:
        r = rows[f"{o}~{p}"]
        want_positive = o == "psychological_distress"
        signs_ok &= (r["standardized"] > 0) == want_positive and r["p"] < 0.05
        detail.append(f"{o}={r['standardized']:+.2f}")
    criterion("C11 real-data sign pattern", signs_ok, ", ".join(detail))
    assert signs_ok
