import math

import numpy as np
import pytest

from branching_fractals.colored_branching import ColorStructureLaw
from branching_fractals.errors import NumericGuardError
from branching_fractals.mcmillan import (
    RADIUS_GRID,
    certify_radii,
    colored_mcmillan_experiment,
    composition_vectors,
    ldp_log_mass,
    ldp_mass_exact,
    ldp_rate,
    mcmillan_count_exact,
    mcmillan_rate,
    total_log_mass,
)
from branching_fractals.measures import MeasureVec
from branching_fractals.rate_functions import kullback_action

HALF = MeasureVec([0.5, 0.5])


def test_composition_vectors():
    assert composition_vectors(3, 2).tolist() == [[0, 3], [1, 2], [2, 1], [3, 0]]
    three = composition_vectors(4, 3)
    assert len(three) == math.comb(6, 2)
    assert np.all(three.sum(axis=1) == 4)
    assert len({tuple(row) for row in three.tolist()}) == len(three)
    assert composition_vectors(5, 1).tolist() == [[5]]


def test_composition_guard():
    with pytest.raises(NumericGuardError):
        composition_vectors(50, 3)
    with pytest.raises(NumericGuardError):
        composition_vectors(10, 5)


@pytest.mark.parametrize(
    "mu, n",
    [
        ([0.5, 0.5], 30),
        ([1.5, 0.7], 25),
        ([0.3, 1.2, 0.5], 20),
        ([0.1, 0.2, 0.3, 0.4], 12),
    ],
)
def test_compositions_partition_all_words(mu, n):
    mu = MeasureVec(mu)
    assert total_log_mass(mu, n) == pytest.approx(n * math.log(mu.total), rel=1e-9, abs=1e-9)


def test_whole_simplex_ball_has_total_mass():
    mu = MeasureVec([1.5, 0.7])
    assert ldp_mass_exact(mu, HALF, 1.0, 10) == pytest.approx(2.2**10, rel=1e-9)


def test_ldp_rate_at_mu():
    estimate = ldp_rate(HALF, HALF, 0.05, 100)
    assert -0.01 < estimate.log_rate <= 0.0
    assert estimate.predicted == 0.0


def test_ldp_rate_off_center():
    nu = MeasureVec([0.9, 0.1])
    estimate = ldp_rate(HALF, nu, 0.02, 200)
    assert estimate.predicted == pytest.approx(-(0.9 * math.log(1.8) + 0.1 * math.log(0.2)))
    assert estimate.predicted == pytest.approx(-0.3681, abs=1e-4)
    assert abs(estimate.gap) < 0.05


def test_empty_ball_has_no_mass():
    assert ldp_log_mass(HALF, MeasureVec([0.55, 0.45]), 0.01, 10) == -math.inf


def test_boundary_compositions_are_outside_ball():
    # (6,4)/10 lies at distance exactly 0.1 from the center
    assert ldp_mass_exact(HALF, HALF, 0.1, 10) == pytest.approx(252 / 1024)
    assert ldp_mass_exact(HALF, HALF, 0.1 + 1e-9, 10) == pytest.approx(672 / 1024)


@pytest.mark.parametrize(
    "nu, radius, n, expected",
    [
        ([1.0, 0.0], 0.01, 50, 1),
        ([0.5, 0.5], 0.05, 10, 252),
        ([0.5, 0.5], 0.1, 10, 252),
        ([0.5, 0.5], 0.2, 10, 672),
        ([0.5, 0.5], 0.15, 10, 672),
    ],
)
def test_mcmillan_count_exact(nu, radius, n, expected):
    assert mcmillan_count_exact(MeasureVec(nu), radius, n) == expected


def test_mcmillan_rate_brackets_entropy():
    estimate = mcmillan_rate(HALF, 0.05, 400)
    assert math.log(2) - 0.02 < estimate.log_rate <= math.log(2)
    assert estimate.predicted == pytest.approx(math.log(2))
    assert isinstance(estimate.value, int)


def test_certify_radii():
    mu, nu = HALF, MeasureVec([0.7, 0.3])
    certificates = certify_radii(mu, nu, 0.1, [20, 40, 80, 160])
    assert [c.radius for c in certificates] == list(RADIUS_GRID)
    assert all(c.upper_holds for c in certificates)
    assert all(c.lower_holds_top_half for c in certificates)
    assert certificates[-1].lower_threshold == 20
    assert len(certificates[0].rates) == 4


def test_colored_counts_reduce_to_word_counts(binary_law):
    for n in (5, 10, 16):
        result = colored_mcmillan_experiment(binary_law, HALF, 0.15, n, trials=2, master_seed=0)
        assert result.survival_frequency == 1.0
        for estimate in result.estimates:
            assert estimate.value == mcmillan_count_exact(HALF, 0.15, n)
        assert result.predicted_rate == pytest.approx(-kullback_action(HALF, MeasureVec([1.0, 1.0])))
        assert result.predicted_rate == pytest.approx(math.log(2))


def test_colored_experiment_is_reproducible(supercritical_law):
    first = colored_mcmillan_experiment(supercritical_law, HALF, 0.1, 12, trials=40, master_seed=3)
    second = colored_mcmillan_experiment(supercritical_law, HALF, 0.1, 12, trials=40, master_seed=3)
    assert [e.value for e in first.estimates] == [e.value for e in second.estimates]


def test_colored_experiment_moderate(supercritical_law):
    result = colored_mcmillan_experiment(
        supercritical_law, HALF, 0.1, 20, trials=300, master_seed=11, epsilon=0.5
    )
    assert result.predicted_rate == pytest.approx(math.log(3))
    q = 1 - result.predicted_survival
    assert 0.25 + 0.75 * q**4 == pytest.approx(q, abs=1e-10)
    assert result.lower_bound_applicable
    assert result.survival_frequency == pytest.approx(result.predicted_survival, abs=0.1)
    assert abs(result.median_gap) < 0.15
    assert result.upper_violation_frequency == 0.0
    assert all(e.value == 0 for e in result.estimates if not e.survived)


def test_subcritical_colored_process_dies():
    law = ColorStructureLaw.from_pairs([((0, 0), 0.6), ((1, 1), 0.4)])
    result = colored_mcmillan_experiment(law, HALF, 0.1, 30, trials=200, master_seed=5)
    assert result.survival_frequency < 0.05
    assert not result.lower_bound_applicable


@pytest.mark.slow
def test_colored_mcmillan_acceptance(supercritical_law):
    result = colored_mcmillan_experiment(supercritical_law, HALF, 0.1, 40, trials=2000, master_seed=2024)
    assert abs(result.median_log_rate - math.log(3)) < 0.1
    assert result.survival_frequency == pytest.approx(result.predicted_survival, abs=0.03)
