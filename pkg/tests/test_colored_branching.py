import csv
import itertools
import math

import numpy as np
import pytest

from branching_fractals.colored_branching import (
    ColorStructureLaw,
    ExplicitTree,
    GenerationHistogram,
    cantor_filter,
    color_expectation,
    count_lines_in_neighborhood,
    count_lines_with_word,
    evolve_histogram,
    expected_line_count,
    histogram_to_csv,
    extend_tree,
    sample_bernoulli_line,
    simulate_tree,
    spectrum_filter,
    spectrum_of_key,
    step_generation,
    total_offspring_law,
    tree_histogram,
)
from branching_fractals.errors import DomainError, InvalidMeasureError, NumericGuardError
from branching_fractals.galton_watson import extinction_probability, mean_offspring
from branching_fractals.measures import MeasureVec, TVNeighborhood, tv_distance
from branching_fractals.streams import trial_rng


def convolution_oracle(atom, n):
    """Counts of (sum_i atom_i x_i)^n by color count vector, by dynamic programming."""
    layer = {(0,) * len(atom): 1}
    for _ in range(n):
        following = {}
        for key, count in layer.items():
            for i, k in enumerate(atom):
                if k:
                    child = list(key)
                    child[i] += 1
                    following[tuple(child)] = following.get(tuple(child), 0) + count * k
        layer = following
    return layer


@pytest.mark.parametrize(
    "pairs, expected",
    [
        ([((1, 1), 1.0)], [1.0, 1.0]),
        ([((2, 0), 0.5), ((0, 2), 0.5)], [1.0, 1.0]),
        ([((0, 0), 0.25), ((1, 2), 0.75)], [0.75, 1.5]),
    ],
)
def test_color_expectation(pairs, expected):
    mu = color_expectation(ColorStructureLaw.from_pairs(pairs))
    assert np.allclose(mu.mu.weights, expected)
    assert mu.total == pytest.approx(sum(expected))


def test_law_validation():
    with pytest.raises(InvalidMeasureError):
        ColorStructureLaw.from_pairs([((1, 1), 0.5), ((0, 2), 0.4)])
    with pytest.raises(InvalidMeasureError):
        ColorStructureLaw.from_pairs([((1, -1), 1.0)])
    with pytest.raises(InvalidMeasureError):
        ColorStructureLaw([[1, 1]], [0.5, 0.5])


def test_total_offspring_law(supercritical_law):
    law = total_offspring_law(supercritical_law)
    assert law.as_dict() == {0: 0.25, 4: 0.75}
    assert mean_offspring(law) == pytest.approx(color_expectation(supercritical_law).total)
    q = extinction_probability(law)
    # nonunit root of 0.75 q^4 - q + 0.25
    assert 0.25 < q < 0.26
    assert 0.25 + 0.75 * q**4 == pytest.approx(q, abs=1e-10)


def test_histogram_validation():
    with pytest.raises(InvalidMeasureError):
        GenerationHistogram(r=2, depth=3, counts={(1, 1): 4})
    with pytest.raises(InvalidMeasureError):
        GenerationHistogram(r=2, depth=2, counts={(1, 1): -1})
    histogram = GenerationHistogram(r=2, depth=2, counts={(2, 0): 0, (1, 1): 3})
    assert histogram.counts == {(1, 1): 3}


def test_step_from_root(binary_law):
    child = step_generation(GenerationHistogram.root(2), binary_law, rng=1)
    assert child.depth == 1
    assert child.counts == {(0, 1): 1, (1, 0): 1}


def test_deterministic_doubling():
    law = ColorStructureLaw.from_pairs([((2, 0), 1.0)])
    history = evolve_histogram(law, 12, rng=0)
    assert [h.depth for h in history] == list(range(13))
    assert history[-1].counts == {(12, 0): 2**12}


@pytest.mark.parametrize("atom", [(1, 1), (2, 1), (1, 3), (0, 2)])
def test_deterministic_laws_match_convolution(atom):
    law = ColorStructureLaw.from_pairs([(atom, 1.0)])
    history = evolve_histogram(law, 20, rng=5, line_limit=None)
    for n in (1, 7, 20):
        assert history[n].counts == convolution_oracle(atom, n)


def test_evolution_stops_at_extinction():
    law = ColorStructureLaw.from_pairs([((0, 0), 1.0)])
    history = evolve_histogram(law, 10, rng=0)
    assert len(history) == 2
    assert history[-1].is_empty
    assert step_generation(history[-1], law, rng=0).is_empty


def test_line_limit_guard():
    law = ColorStructureLaw.from_pairs([((2, 0), 1.0)])
    with pytest.raises(NumericGuardError):
        evolve_histogram(law, 3, rng=0, line_limit=3)


def test_counts_beyond_int64_are_exact():
    law = ColorStructureLaw.from_pairs([((2, 0), 1.0)])
    big = GenerationHistogram(r=2, depth=1, counts={(1, 0): 2**63})
    with pytest.raises(NumericGuardError):
        step_generation(big, law, rng=0)
    child = step_generation(big, law, rng=0, line_limit=None)
    assert child.counts == {(2, 0): 2**64}


def test_large_counts_split_exactly(binary_law):
    big = GenerationHistogram(r=2, depth=1, counts={(1, 0): 2**45})
    child = step_generation(big, binary_law, rng=3)
    assert child.counts == {(1, 1): 2**45, (2, 0): 2**45}


def test_first_generation_mean(supercritical_law):
    trials = 20_000
    totals = np.array(
        [step_generation(GenerationHistogram.root(2), supercritical_law, trial_rng(8, t)).total for t in range(trials)]
    )
    stderr = totals.std(ddof=1) / math.sqrt(trials)
    assert abs(totals.mean() - 3.0) < 4 * stderr


def test_histogram_mass_grows_like_mean(supercritical_law):
    trials, depth = 3000, 6
    totals = np.array([evolve_histogram(supercritical_law, depth, trial_rng(4, t))[-1].total for t in range(trials)])
    stderr = totals.std(ddof=1) / math.sqrt(trials)
    assert abs(totals.mean() - 3.0**depth) < 4 * stderr


@pytest.mark.parametrize(
    "key, n, expected",
    [
        ((5, 5), 10, [0.5, 0.5]),
        ((10, 0), 10, [1.0, 0.0]),
        ((3, 7), 10, [0.3, 0.7]),
    ],
)
def test_spectrum_of_key(key, n, expected):
    assert spectrum_of_key(key, n).allclose(MeasureVec(expected))


def test_spectrum_of_key_errors():
    with pytest.raises(DomainError):
        spectrum_of_key((0, 0), 0)
    with pytest.raises(DomainError):
        spectrum_of_key((3, 3), 5)


def test_count_lines_in_neighborhood(binary_law, half):
    history = evolve_histogram(binary_law, 10, rng=0)
    final = history[-1]
    assert count_lines_in_neighborhood(final, TVNeighborhood(half, 0.15)) == 672
    # keys (6, 4) and (4, 6) sit on the boundary of the 0.1 ball
    assert count_lines_in_neighborhood(final, TVNeighborhood(half, 0.1)) == 252
    assert count_lines_in_neighborhood(final, TVNeighborhood(half, 0.2)) == 672
    assert count_lines_in_neighborhood(final, TVNeighborhood(half, 1.0)) == 2**10
    assert count_lines_in_neighborhood(GenerationHistogram(r=2, depth=10), TVNeighborhood(half, 0.5)) == 0
    counts = [count_lines_in_neighborhood(final, TVNeighborhood(half, radius)) for radius in (0.05, 0.1, 0.3, 0.6)]
    assert counts == sorted(counts)


def test_filters(binary_law, half):
    final = evolve_histogram(binary_law, 6, rng=0)[-1]
    assert cantor_filter(final, [1]).counts == {(6, 0): 1}
    assert cantor_filter(final, [1, 2]).counts == final.counts
    near = spectrum_filter(final, TVNeighborhood(half, 0.1))
    assert near.counts == {(3, 3): 20}


def test_expected_line_count():
    assert expected_line_count(MeasureVec([1.0, 1.0]), [1, 2, 2, 1]) == 1.0
    assert expected_line_count(MeasureVec([1.5, 0.5]), [1, 2]) == pytest.approx(0.75)
    with pytest.raises(DomainError):
        expected_line_count(MeasureVec([1.0, 1.0]), [])


def test_word_counts_have_product_mean():
    law = ColorStructureLaw.from_pairs([((0, 0), 0.2), ((1, 2), 0.5), ((3, 0), 0.3)])
    mu = color_expectation(law).mu
    trials = 4000
    for word in ([1], [2, 1], [1, 2, 2]):
        counts = np.array([count_lines_with_word(simulate_tree(law, len(word), trial_rng(6, t)), word)
                           for t in range(trials)])
        stderr = counts.std(ddof=1) / math.sqrt(trials)
        assert abs(counts.mean() - expected_line_count(mu, word)) < 4 * stderr + 1e-12


@pytest.mark.slow
@pytest.mark.parametrize(
    "pairs",
    [
        [((0, 0), 0.2), ((1, 2), 0.5), ((3, 0), 0.3)],
        [((0, 0), 0.25), ((2, 2), 0.75)],
    ],
)
def test_all_short_word_counts_have_product_mean(pairs):
    law = ColorStructureLaw.from_pairs(pairs)
    mu = color_expectation(law).mu
    words = [list(w) for n in (1, 2, 3) for w in itertools.product((1, 2), repeat=n)]
    trials = 100_000
    counts = np.zeros((trials, len(words)))
    for t in range(trials):
        tree = simulate_tree(law, 3, trial_rng(61, t))
        counts[t] = [count_lines_with_word(tree, word) for word in words]
    means = counts.mean(axis=0)
    stderrs = counts.std(axis=0, ddof=1) / math.sqrt(trials)
    for word, mean, stderr in zip(words, means, stderrs):
        assert abs(mean - expected_line_count(mu, word)) < 3 * stderr + 1e-12, word


@pytest.mark.slow
def test_first_generation_mean_acceptance(supercritical_law):
    trials = 100_000
    totals = np.array(
        [step_generation(GenerationHistogram.root(2), supercritical_law, trial_rng(81, t)).total for t in range(trials)]
    )
    stderr = totals.std(ddof=1) / math.sqrt(trials)
    assert abs(totals.mean() - color_expectation(supercritical_law).total) < 3 * stderr


@pytest.mark.slow
def test_histogram_mass_acceptance(supercritical_law):
    trials, depth = 100_000, 8
    totals = np.zeros((trials, depth + 1))
    for t in range(trials):
        history = evolve_histogram(supercritical_law, depth, trial_rng(41, t))
        # extinct runs stop early and stay at zero
        totals[t, : len(history)] = [h.total for h in history]
    stderrs = totals.std(axis=0, ddof=1) / math.sqrt(trials)
    for n in range(1, depth + 1):
        assert abs(totals[:, n].mean() - 3.0**n) < 3 * stderrs[n], n


def test_bernoulli_lines(half):
    constant = sample_bernoulli_line(MeasureVec([1.0, 0.0]), 50, seed=0)
    assert constant.colors.tolist() == [1] * 50
    line = sample_bernoulli_line(MeasureVec([0.3, 0.7]), 100_000, seed=12)
    assert tv_distance(line.spectrum(2), MeasureVec([0.3, 0.7])) < 0.01
    assert sample_bernoulli_line(half, 20, seed=4).colors.tolist() == sample_bernoulli_line(half, 20, seed=4).colors.tolist()
    with pytest.raises(InvalidMeasureError):
        sample_bernoulli_line(MeasureVec([0.4, 0.4]), 10, seed=0)


def test_fair_coin_frequency(half):
    line = sample_bernoulli_line(half, 1_000_000, seed=77)
    assert line.spectrum(2).weights[0] == pytest.approx(0.5, abs=0.002)


def test_explicit_tree_structure(binary_law):
    tree = simulate_tree(binary_law, 3, rng=0)
    assert tree.depth == 3
    assert [tree.size(level) for level in range(4)] == [1, 2, 4, 8]
    assert tree.line_colors(2).tolist() == [[1, 1], [1, 2], [2, 1], [2, 2]]
    assert tree.ancestors(3, 1).tolist() == [0, 0, 0, 0, 1, 1, 1, 1]
    assert count_lines_with_word(tree, [2, 1, 2]) == 1
    assert count_lines_with_word(tree, [2, 1]) == 1
    with pytest.raises(DomainError):
        count_lines_with_word(tree, [1, 1, 1, 1])
    assert np.array_equal(tree.color_counts[3].sum(axis=1), np.full(8, 3))


def test_explicit_tree_matches_histogram(binary_law):
    tree = simulate_tree(binary_law, 8, rng=0)
    assert tree_histogram(tree, 8).counts == evolve_histogram(binary_law, 8, rng=0)[-1].counts


def test_extend_tree_keeps_existing_levels(supercritical_law):
    tree = simulate_tree(supercritical_law, 3, rng=10)
    longer = extend_tree(tree, supercritical_law, 2, rng=11)
    assert longer.depth == 5
    for level in range(4):
        assert np.array_equal(longer.parents[level], tree.parents[level])
        assert np.array_equal(longer.colors[level], tree.colors[level])
    assert tree.depth == 3


def test_explicit_tree_population_guard(binary_law):
    with pytest.raises(NumericGuardError):
        simulate_tree(binary_law, 12, rng=0, max_population=1000)
    with pytest.raises(NumericGuardError):
        extend_tree(ExplicitTree.root(2), binary_law, ExplicitTree.MAX_DEPTH + 1, rng=0)


def test_histogram_csv(tmp_path, binary_law):
    final = evolve_histogram(binary_law, 3, rng=0)[-1]
    path = tmp_path / "histogram.csv"
    histogram_to_csv(final, path, metadata={"seed": 0})
    lines = path.read_text().splitlines()
    assert lines[0] == "# seed=0"
    rows = list(csv.reader(lines[1:]))
    assert rows[0] == ["c_1", "c_2", "count"]
    assert rows[1:] == [["0", "3", "1"], ["1", "2", "3"], ["2", "1", "3"], ["3", "0", "1"]]
