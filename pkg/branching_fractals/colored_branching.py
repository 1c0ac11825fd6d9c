"""
Unconditional colored branching processes.

Every individual independently draws a color structure k = (k_1, ..., k_r)
and gives birth to k_i children of color i. Two representations are kept:

* GenerationHistogram counts the genetic lines of depth n by their color
  count vector c (|c| = n); the number of keys grows polynomially while the
  population grows exponentially, and the spectrum of a line only depends
  on c.
* ExplicitTree keeps every individual (parent index and color per level);
  it is needed when line identity matters, e.g. for block selections.
"""

import csv
import logging
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InvalidMeasureError, NumericGuardError
from .galton_watson import OffspringCountLaw
from .measures import PROBABILITY_TOL, ColorAlphabet, MeasureVec, in_tv_ball, tv_distances
from .streams import make_rng

logger = logging.getLogger(__name__)

# Per-key line counts above this make step_generation refuse
LINE_COUNT_LIMIT = 2**63 - 1
# Counts up to this size are sampled in one vectorized int64 multinomial call
VECTORIZED_COUNT_LIMIT = 2**40
# Largest single multinomial draw handed to numpy
MULTINOMIAL_CHUNK = 2**62


@dataclass(frozen=True, eq=False)
class ColorStructureLaw:
    """Finite distribution over color structures k in Z_+^r."""

    atoms: np.ndarray
    ps: np.ndarray

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=np.int64)
        ps = np.array(self.ps, dtype=float)
        if atoms.ndim != 2 or atoms.shape[0] != ps.size or atoms.shape[0] == 0:
            raise InvalidMeasureError("color structure law needs one probability per structure vector")
        if atoms.shape[1] < 1:
            raise InvalidMeasureError("color structures must have at least one color")
        if np.any(atoms < 0) or np.any(ps < 0):
            raise InvalidMeasureError("structures and probabilities must be nonnegative")
        if abs(ps.sum() - 1.0) > PROBABILITY_TOL:
            raise InvalidMeasureError(f"structure probabilities sum to {ps.sum()}, expected 1")
        atoms.setflags(write=False)
        ps.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "ps", ps)

    @classmethod
    def from_pairs(cls, pairs):
        """Build from [(k, p), ...] with k a sequence of per-color child counts."""
        pairs = list(pairs)
        return cls([list(k) for k, _ in pairs], [p for _, p in pairs])

    @property
    def r(self):
        return self.atoms.shape[1]

    @property
    def alphabet(self):
        return ColorAlphabet(self.r)

    def as_pairs(self):
        return [(tuple(int(x) for x in k), float(p)) for k, p in zip(self.atoms, self.ps)]


@dataclass(frozen=True, eq=False)
class ColorExpectation:
    """Expected number of children of each color."""

    mu: MeasureVec

    @property
    def total(self):
        return self.mu.total


@dataclass(frozen=True, eq=False)
class GenerationHistogram:
    """Genetic lines at depth `depth` aggregated by color count vector."""

    r: int
    depth: int
    counts: dict = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for key, count in self.counts.items():
            key = tuple(int(x) for x in key)
            if len(key) != self.r or sum(key) != self.depth or min(key) < 0:
                raise InvalidMeasureError(f"key {key} is not a color count vector of depth {self.depth}")
            if count < 0:
                raise InvalidMeasureError(f"negative line count {count} at key {key}")
            if count:
                clean[key] = int(count)
        object.__setattr__(self, "counts", dict(sorted(clean.items())))

    @classmethod
    def root(cls, r):
        return cls(r=r, depth=0, counts={(0,) * r: 1})

    @property
    def total(self):
        return sum(self.counts.values())

    @property
    def is_empty(self):
        return not self.counts

    def keys_array(self):
        return np.array(list(self.counts), dtype=np.int64).reshape(-1, self.r)

    def filtered(self, keep):
        """Sub-histogram of the keys for which keep(key) is true."""
        return GenerationHistogram(
            r=self.r, depth=self.depth, counts={k: v for k, v in self.counts.items() if keep(k)}
        )


@dataclass(frozen=True, eq=False)
class SampledLine:
    """A genetic line written as its colors x_1, x_2, ... (labels 1..r)."""

    colors: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        colors = np.array(self.colors, dtype=np.int64)
        if colors.ndim != 1 or (colors.size and colors.min() < 1):
            raise InvalidMeasureError("line colors must be labels 1..r")
        colors.setflags(write=False)
        object.__setattr__(self, "colors", colors)

    def __len__(self):
        return self.colors.size

    def spectrum(self, r, n=None):
        n = len(self) if n is None else n
        if n < 1 or n > len(self):
            raise DomainError(f"spectrum depth {n} outside 1..{len(self)}")
        counts = np.bincount(self.colors[:n] - 1, minlength=r)
        return MeasureVec(counts / n)


@dataclass(frozen=True, eq=False)
class ExplicitTree:
    """Every individual of the first `depth` generations.

    Level t holds arrays `parents[t]` (index into level t-1) and `colors[t]`
    (labels 1..r) plus `color_counts[t]`, the color count vector of the
    genetic line ending at each individual. Level 0 is the root.
    """

    MAX_POPULATION = 10**6
    MAX_DEPTH = 10**4

    r: int
    parents: list
    colors: list
    color_counts: list

    @classmethod
    def root(cls, r):
        return cls(
            r=r,
            parents=[np.array([-1], dtype=np.int64)],
            colors=[np.array([0], dtype=np.int64)],
            color_counts=[np.zeros((1, r), dtype=np.int64)],
        )

    @property
    def depth(self):
        return len(self.parents) - 1

    def size(self, level):
        return self.parents[level].size

    def line_colors(self, level):
        """(size(level), level) array of the colors along each line."""
        rows = np.empty((self.size(level), level), dtype=np.int64)
        index = np.arange(self.size(level))
        for t in range(level, 0, -1):
            rows[:, t - 1] = self.colors[t][index]
            index = self.parents[t][index]
        return rows

    def ancestors(self, level, target_level, index=None):
        """Indices at target_level of the ancestors of the nodes at level."""
        index = np.arange(self.size(level)) if index is None else np.asarray(index)
        for t in range(level, target_level, -1):
            index = self.parents[t][index]
        return index


def color_expectation(law):
    """mu(i) = sum_k k_i p_k."""
    return ColorExpectation(MeasureVec(law.ps @ law.atoms))


def total_offspring_law(law):
    """Law of the total number of children |k|."""
    totals = defaultdict(float)
    for k, p in zip(law.atoms.sum(axis=1), law.ps):
        totals[int(k)] += float(p)
    return OffspringCountLaw.from_mapping(totals)


def _chunked_multinomial(n, ps, rng):
    draws = np.zeros(ps.size, dtype=object)
    while n > 0:
        chunk = min(n, MULTINOMIAL_CHUNK)
        draws += rng.multinomial(chunk, ps).astype(object)
        n -= chunk
    return draws


def step_generation(histogram, law, rng, line_limit=LINE_COUNT_LIMIT):
    """Advance a histogram by one generation.

    Lines sharing a key are exchangeable, so for a key with N lines the
    numbers of parents choosing each structure form one Multinomial(N, p)
    draw; children of color i land on key c + e_i. This is exact at every
    count size. Pass line_limit=None to allow counts beyond the int64 range.
    """
    if histogram.r != law.r:
        raise InvalidMeasureError(f"histogram has {histogram.r} colors, law has {law.r}")
    rng = make_rng(rng)
    new_counts = defaultdict(int)
    if histogram.is_empty:
        return GenerationHistogram(r=law.r, depth=histogram.depth + 1)
    keys = list(histogram.counts)
    sizes = [histogram.counts[key] for key in keys]

    if max(sizes) <= VECTORIZED_COUNT_LIMIT:
        draws = rng.multinomial(np.array(sizes, dtype=np.int64), law.ps)
        children = (draws @ law.atoms).tolist()
    else:
        atoms = law.atoms.astype(object)
        children = [list(np.dot(_chunked_multinomial(n, law.ps, rng), atoms)) for n in sizes]

    for key, per_color in zip(keys, children):
        for i, born in enumerate(per_color):
            if born:
                child = list(key)
                child[i] += 1
                new_counts[tuple(child)] += int(born)

    if line_limit is not None:
        largest = max(new_counts.values(), default=0)
        if largest > line_limit:
            raise NumericGuardError(
                f"line count {largest} at depth {histogram.depth + 1} exceeds {line_limit}; "
                "reduce the depth"
            )
    return GenerationHistogram(r=law.r, depth=histogram.depth + 1, counts=new_counts)


def evolve_histogram(law, depth, rng, line_limit=LINE_COUNT_LIMIT):
    """Histograms for depths 0..depth; stops after the first empty one."""
    rng = make_rng(rng)
    history = [GenerationHistogram.root(law.r)]
    while history[-1].depth < depth and not history[-1].is_empty:
        history.append(step_generation(history[-1], law, rng, line_limit))
    return history


def spectrum_of_key(key, n):
    """Empirical measure c/n of a line with color counts c."""
    if n < 1:
        raise DomainError("spectrum of a line needs depth n >= 1")
    if sum(key) != n:
        raise DomainError(f"key {tuple(key)} does not sum to depth {n}")
    return MeasureVec(np.asarray(key, dtype=float) / n)


def key_spectra(histogram):
    """(keys, spectra) arrays for a nonempty histogram of positive depth."""
    if histogram.depth < 1:
        raise DomainError("spectra need depth n >= 1")
    keys = histogram.keys_array()
    return keys, keys / histogram.depth


def spectrum_filter(histogram, nbhd):
    """Keep the keys whose spectrum lies in the neighborhood."""
    if histogram.is_empty:
        return histogram
    return histogram.filtered(lambda key: nbhd.contains(spectrum_of_key(key, histogram.depth)))


def cantor_filter(histogram, subset):
    """Keep lines that only use colors from `subset` (labels 1..r)."""
    excluded = [i for i in range(histogram.r) if i + 1 not in set(subset)]
    return histogram.filtered(lambda key: all(key[i] == 0 for i in excluded))


def count_lines_in_neighborhood(histogram, nbhd):
    if histogram.is_empty:
        return 0
    keys, spectra = key_spectra(histogram)
    inside = in_tv_ball(tv_distances(spectra, nbhd.center), nbhd.radius)
    return sum(histogram.counts[tuple(k)] for k, keep in zip(keys.tolist(), inside) if keep)


def expected_line_count(mu, word):
    """E #{x in X_n | G(x) = word} = prod_t mu(word_t)."""
    mu = mu.mu if isinstance(mu, ColorExpectation) else mu
    if len(word) == 0:
        raise DomainError("word must be nonempty")
    index = mu.alphabet.indices(word)
    return float(np.prod(mu.weights[index]))


def sample_bernoulli_line(nu, n, seed):
    """n i.i.d. colors with law nu."""
    if not nu.is_probability():
        raise InvalidMeasureError(f"Bernoulli line needs a probability measure, mass is {nu.total}")
    rng = make_rng(seed)
    colors = rng.choice(nu.r, size=n, p=nu.weights / nu.total) + 1
    return SampledLine(colors=colors, provenance=f"bernoulli{nu.weights.tolist()}")


def extend_tree(tree, law, levels, rng, max_population=ExplicitTree.MAX_POPULATION):
    """A new tree with `levels` more generations grown below the deepest level."""
    if tree.depth + levels > ExplicitTree.MAX_DEPTH:
        raise NumericGuardError(
            f"explicit tree depth {tree.depth + levels} exceeds {ExplicitTree.MAX_DEPTH}"
        )
    if law.r != tree.r:
        raise InvalidMeasureError(f"tree has {tree.r} colors, law has {law.r}")
    rng = make_rng(rng)
    palette = np.arange(1, tree.r + 1)
    parents, colors, color_counts = list(tree.parents), list(tree.colors), list(tree.color_counts)
    for level in range(tree.depth + 1, tree.depth + levels + 1):
        size = parents[-1].size
        structures = law.atoms[rng.choice(law.ps.size, size=size, p=law.ps)] if size else law.atoms[:0]
        totals = structures.sum(axis=1)
        if totals.sum() > max_population:
            raise NumericGuardError(
                f"population {totals.sum()} at depth {level} exceeds {max_population}; "
                "reduce the depth or the order"
            )
        child_parents = np.repeat(np.arange(size), totals)
        child_colors = np.repeat(np.tile(palette, size), structures.ravel())
        counts = color_counts[-1][child_parents].copy()
        counts[np.arange(child_colors.size), child_colors - 1] += 1
        parents.append(child_parents)
        colors.append(child_colors)
        color_counts.append(counts)
    return ExplicitTree(r=tree.r, parents=parents, colors=colors, color_counts=color_counts)


def simulate_tree(law, depth, rng, max_population=ExplicitTree.MAX_POPULATION):
    """Explicit genealogical tree to the given depth (empty levels after extinction)."""
    return extend_tree(ExplicitTree.root(law.r), law, depth, rng, max_population)


def tree_histogram(tree, level):
    """Aggregate one level of an explicit tree into a GenerationHistogram."""
    if tree.size(level) == 0:
        return GenerationHistogram(r=tree.r, depth=level)
    keys, counts = np.unique(tree.color_counts[level], axis=0, return_counts=True)
    return GenerationHistogram(
        r=tree.r, depth=level, counts={tuple(k): int(c) for k, c in zip(keys.tolist(), counts)}
    )


def count_lines_with_word(tree, word):
    """#{x in X_n | G(x) = word} for n = len(word)."""
    level = len(word)
    if level > tree.depth:
        raise DomainError(f"word of length {level} is longer than the tree depth {tree.depth}")
    if tree.size(level) == 0:
        return 0
    rows = tree.line_colors(level)
    return int(np.all(rows == np.asarray(word), axis=1).sum())


def histogram_rows(histogram):
    header = [f"c_{i}" for i in range(1, histogram.r + 1)] + ["count"]
    return header, [list(key) + [count] for key, count in histogram.counts.items()]


def histogram_to_csv(histogram, path, metadata=None):
    """Write columns c_1..c_r,count with optional `# key=value` header lines."""
    header, rows = histogram_rows(histogram)
    with open(path, "w", newline="") as handle:
        for key, value in (metadata or {}).items():
            handle.write(f"# {key}={value}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
