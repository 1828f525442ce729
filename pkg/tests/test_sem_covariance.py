import numpy as np
import pytest

from flourishsem.sem import (
    Discrepancy, NotPositiveDefinite, ParameterVector, implied_covariance, ml_discrepancy, parse_model,
)
from oracles import TOPOLOGIES, block_implied_covariance, discrepancy, fd_gradient, random_theta, topology

TWO_VAR = parse_model("xi =~ x\neta =~ y\neta ~ xi\n")


def test_rank_one_case():
    spec = parse_model("f =~ a b\n")
    theta = ParameterVector.from_dict(spec, {"f=~b": 1.0, "f~~f": 1.0, "a~~a": 0.0, "b~~b": 0.0})
    assert np.array_equal(implied_covariance(spec, theta), [[1.0, 1.0], [1.0, 1.0]])


def test_two_variable_case():
    theta = ParameterVector.from_dict(TWO_VAR, {
        "eta~xi": 0.5, "xi~~xi": 1.0, "eta~~eta": 0.75, "x~~x": 0.0, "y~~y": 0.0,
    })
    assert np.allclose(implied_covariance(TWO_VAR, theta), [[1.0, 0.5], [0.5, 1.0]], atol=1e-15)


def test_zero_path_decouples(rng):
    spec = topology("one_exo_two_endo")
    values = random_theta(spec, rng)
    for k in spec.kind_index("path"):
        values[k] = 0.0
    for k in spec.kind_index("theta"):
        values[k] = 0.0
    sigma = implied_covariance(spec, values)
    x = [spec.observed.index(f"x{i}") for i in (1, 2, 3)]
    y = [spec.observed.index(f"y{i}") for i in range(1, 7)]
    assert np.all(sigma[np.ix_(x, y)] == 0.0)


@pytest.mark.parametrize("name", list(TOPOLOGIES) + ["full"])
def test_matches_block_oracle_and_symmetric(name, rng):
    spec = topology(name)
    for _ in range(10):
        values = random_theta(spec, rng)
        sigma = implied_covariance(spec, values)
        assert np.array_equal(sigma, sigma.T)
        assert np.max(np.abs(sigma - block_implied_covariance(spec, values))) < 1e-12


def test_discrepancy_examples():
    s = np.eye(2)
    assert ml_discrepancy(s, s) == pytest.approx(0.0, abs=1e-15)
    assert ml_discrepancy(s, 2 * np.eye(2)) == pytest.approx(2 * np.log(2) - 1, abs=1e-12)
    assert round(ml_discrepancy(s, 2 * np.eye(2)), 6) == 0.386294


def test_discrepancy_scale_invariance_and_nonnegativity(rng):
    for _ in range(20):
        a = rng.normal(size=(4, 4))
        b = rng.normal(size=(4, 4))
        s = a @ a.T + 0.5 * np.eye(4)
        sigma = b @ b.T + 0.5 * np.eye(4)
        f = ml_discrepancy(s, sigma)
        assert f >= 0
        assert f == pytest.approx(discrepancy(s, sigma), rel=1e-10)
        for c in (0.1, 10.0):
            assert ml_discrepancy(c * s, c * sigma) == pytest.approx(f, rel=1e-10, abs=1e-12)


def test_non_pd_sigma_signals():
    with pytest.raises(NotPositiveDefinite):
        ml_discrepancy(np.eye(2), np.array([[1.0, 2.0], [2.0, 1.0]]))


@pytest.mark.parametrize("name", list(TOPOLOGIES) + ["full"])
def test_gradient_matches_finite_differences(name, rng):
    spec = topology(name)
    for _ in range(3):
        truth = random_theta(spec, rng)
        s = block_implied_covariance(spec, truth)
        s = s + np.diag(rng.uniform(0.0, 0.3, size=len(s)))
        at = random_theta(spec, rng)
        g = Discrepancy(spec, s).gradient(at)
        g_fd = fd_gradient(spec, s, at)
        assert np.linalg.norm(g - g_fd) / max(np.linalg.norm(g_fd), 1e-12) < 1e-5


def test_expected_information_is_psd(rng):
    spec = topology("two_exo")
    values = random_theta(spec, rng)
    info = Discrepancy(spec, implied_covariance(spec, values)).expected_information(values)
    assert np.allclose(info, info.T)
    assert np.min(np.linalg.eigvalsh(info)) > -1e-10
