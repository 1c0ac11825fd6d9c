"""
Block selections and the cube-vertex choice law.

A genetic line of length nN is cut into n blocks of length N. A block
selection of order N keeps, level by level, sequences of blocks whose
spectra lie in prescribed neighborhoods and which have enough prolongations
at the next level. The choice law steers running averages of block spectra
to the center of a small cube by always aiming at the vertex opposite the
current deviation.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .colored_branching import (
    ExplicitTree,
    SampledLine,
    color_expectation,
    extend_tree,
    simulate_tree,
    total_offspring_law,
)
from .errors import DomainError, InvalidMeasureError, NumericGuardError
from .galton_watson import extinction_probability
from .measures import MeasureVec, TVNeighborhood, in_tv_ball, tv_distance, tv_distances
from .rate_functions import kullback_action
from .streams import make_rng, run_trials, trial_seed

logger = logging.getLogger(__name__)

# Orders tried by smallest_order
ORDER_GRID = (4, 8, 16, 32)
# Generations a boosted trial waits for its population floor
MAX_BOOST_DEPTH = 60


@dataclass(frozen=True, eq=False)
class BlockTree:
    """Selected block sequences of an explicit tree.

    ``nodes[k]`` holds the tree indices (at depth kN) of the selected
    sequences of k blocks, ``parents[k]`` the tree index at depth (k-1)N of
    each one and ``spectra[k]`` the spectrum of its last block. Level 0 is
    the empty sequence (the root).
    """

    order: int
    thresholds: tuple
    neighborhoods: tuple
    tree: ExplicitTree
    nodes: list
    parents: list
    spectra: list

    @property
    def levels(self):
        return len(self.nodes) - 1

    @property
    def is_empty(self):
        return self.nodes[0].size == 0 or (self.levels > 0 and self.nodes[-1].size == 0)

    def size(self, level):
        return self.nodes[level].size

    def block_words(self, level):
        """(size, N) array with the colors of the last block of each selected sequence."""
        depth = level * self.order
        rows = self.tree.line_colors(depth)[self.nodes[level]]
        return rows[:, depth - self.order:]

    def prolongation_counts(self, level):
        """Per selected node at `level`: number of selected prolongations, per neighborhood."""
        counts = np.zeros((self.size(level), len(self.neighborhoods)), dtype=np.int64)
        position = {int(node): i for i, node in enumerate(self.nodes[level])}
        for parent, spectrum in zip(self.parents[level + 1], self.spectra[level + 1]):
            for j, nbhd in enumerate(self.neighborhoods):
                if nbhd.contains(MeasureVec(spectrum)):
                    counts[position[int(parent)], j] += 1
        return counts


@dataclass(frozen=True)
class SelectionCheck:
    order: int
    rho: float
    threshold: int
    applicable: bool
    nonempty: bool
    meets_threshold: bool


@dataclass
class SelectionExperimentResult:
    order: int
    threshold: int
    rows: list
    nonempty_frequency: float
    survival_frequency: float
    predicted_survival: float


@dataclass
class OrderSearch:
    order: object
    refused_order: object = None
    tried: list = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class ChoiceLaw:
    """Cube of half-width h around a probability measure in simplex coordinates.

    The free coordinates are the first r-1 ones. Vertex Q_sigma is
    center + h (sigma_1, ..., sigma_{r-1}, -sum sigma_j) with sigma in
    {-1, +1}^{r-1}; bit j of the vertex index is set iff sigma_j = +1.
    """

    center: MeasureVec
    half_width: float

    def __post_init__(self):
        if not self.center.is_probability():
            raise InvalidMeasureError("choice law center must be a probability measure")
        if not self.half_width > 0:
            raise InvalidMeasureError(f"half width must be positive, got {self.half_width}")
        for index in range(self.vertex_count):
            weights = self._vertex_weights(index)
            if np.any(weights < 0) or np.any(weights > 1):
                raise InvalidMeasureError(
                    f"cube vertex {index} = {weights.tolist()} leaves the simplex; reduce the half width"
                )

    @property
    def r(self):
        return self.center.r

    @property
    def vertex_count(self):
        return 2 ** (self.r - 1)

    def signs(self, index):
        return np.array([1.0 if index >> j & 1 else -1.0 for j in range(self.r - 1)])

    def _vertex_weights(self, index):
        sigma = self.signs(index)
        offset = np.append(sigma, -sigma.sum()) * self.half_width
        return self.center.weights + offset

    def vertex(self, index):
        return MeasureVec(np.clip(self._vertex_weights(index), 0.0, 1.0))

    def vertex_neighborhoods(self, radius=None):
        """TV balls around the vertices; radius h/2 keeps each free coordinate within h."""
        radius = self.half_width / 2 if radius is None else radius
        return [TVNeighborhood(self.vertex(i), radius) for i in range(self.vertex_count)]

    def deviation(self, delta):
        """Free-coordinate deviation of delta from the center."""
        weights = delta.weights if isinstance(delta, MeasureVec) else np.asarray(delta, dtype=float)
        return weights[: self.r - 1] - self.center.weights[: self.r - 1]


@dataclass
class SteeredLine:
    line: SampledLine
    diagnostics: list
    empty: bool = False
    backtracks: int = 0
    final_tv: float = math.nan
    notes: list = field(default_factory=list)


def _as_lists(neighborhoods, thresholds):
    if isinstance(neighborhoods, TVNeighborhood):
        neighborhoods = [neighborhoods]
    neighborhoods = list(neighborhoods)
    if isinstance(thresholds, (int, np.integer)):
        thresholds = [int(thresholds)] * len(neighborhoods)
    thresholds = [int(t) for t in thresholds]
    if len(thresholds) != len(neighborhoods):
        raise DomainError("one prolongation threshold per neighborhood is required")
    if any(t < 1 for t in thresholds):
        raise DomainError(f"prolongation thresholds must be >= 1, got {thresholds}")
    return neighborhoods, thresholds


def _membership(spectra, neighborhoods):
    """(len(spectra), len(neighborhoods)) boolean matrix of TV-ball membership."""
    columns = [in_tv_ball(tv_distances(spectra, nbhd.center), nbhd.radius) for nbhd in neighborhoods]
    return np.stack(columns, axis=1) if columns else np.zeros((len(spectra), 0), dtype=bool)


def maximal_block_selection(tree, order, neighborhoods, thresholds, depth=None):
    """The largest block selection of the tree's first `depth` generations.

    Every kept block has its spectrum in one of the neighborhoods and every
    kept sequence of k < n blocks (the empty one included) has at least
    thresholds[j] kept prolongations whose last block lies in
    neighborhoods[j]. Computed by one backward pass that drops sequences
    short of prolongations and one forward pass that drops the descendants
    of dropped sequences; the result is the greatest fixpoint.
    """
    neighborhoods, thresholds = _as_lists(neighborhoods, thresholds)
    depth = tree.depth if depth is None else depth
    if order < 1 or depth % order:
        raise DomainError(f"depth {depth} is not divisible by the order {order}")
    if depth > tree.depth:
        raise DomainError(f"tree only has {tree.depth} generations, {depth} requested")
    levels = depth // order

    alive = [np.ones(1, dtype=bool)]
    anchors = [np.full(1, -1, dtype=np.int64)]
    spectra = [np.zeros((1, tree.r))]
    member = [np.ones((1, len(neighborhoods)), dtype=bool)]
    for k in range(1, levels + 1):
        end, start = k * order, (k - 1) * order
        anchor = tree.ancestors(end, start)
        block_counts = tree.color_counts[end] - tree.color_counts[start][anchor]
        block_spectra = block_counts / order
        inside = _membership(block_spectra, neighborhoods)
        alive.append(inside.any(axis=1) & alive[k - 1][anchor])
        anchors.append(anchor)
        spectra.append(block_spectra)
        member.append(inside)

    for k in range(levels - 1, -1, -1):
        for j, needed in enumerate(thresholds):
            kept = alive[k + 1] & member[k + 1][:, j]
            prolongations = np.bincount(anchors[k + 1][kept], minlength=alive[k].size)
            alive[k] &= prolongations >= needed

    for k in range(1, levels + 1):
        alive[k] &= alive[k - 1][anchors[k]]

    nodes = [np.flatnonzero(flags) for flags in alive]
    bt = BlockTree(
        order=order,
        thresholds=tuple(thresholds),
        neighborhoods=tuple(neighborhoods),
        tree=tree,
        nodes=nodes,
        parents=[anchors[k][nodes[k]] for k in range(levels + 1)],
        spectra=[spectra[k][nodes[k]] for k in range(levels + 1)],
    )
    logger.debug(f"Block selection of order {order}: sizes {[n.size for n in nodes]}")
    return bt


def selection_threshold(nu, mu, epsilon, order):
    """ceil(l(N)) with l(N) = exp(N(-rho(nu, mu) - epsilon)), at least 1."""
    exponent = order * (-kullback_action(nu, mu) - epsilon)
    if exponent > 700:
        raise NumericGuardError(f"threshold exp({exponent:.6g}) overflows; reduce the order")
    return max(1, math.ceil(math.exp(exponent)))


def selection_rate_check(bt, nu, mu, epsilon):
    """Does the selection exist with the threshold ceil(l(N)) demanded by the rate?"""
    mu = getattr(mu, "mu", mu)
    rho = kullback_action(nu, mu)
    threshold = selection_threshold(nu, mu, epsilon, bt.order)
    applicable = rho < 0
    if not applicable:
        logger.warning(f"rho(nu, mu) = {rho:.6g} >= 0: no selection rate is promised")
    nonempty = not bt.is_empty
    return SelectionCheck(
        order=bt.order,
        rho=rho,
        threshold=threshold,
        applicable=applicable,
        nonempty=nonempty,
        meets_threshold=nonempty and min(bt.thresholds) >= threshold,
    )


def _grow_population(law, floor, rng):
    """Number of individuals once the population first reaches `floor` (0 if extinct)."""
    totals = law.atoms.sum(axis=1)
    population = 1
    for _ in range(MAX_BOOST_DEPTH):
        if population == 0 or population >= floor:
            break
        population = int(np.dot(rng.multinomial(population, law.ps), totals))
    return population


def _selection_trial(law, nu_weights, radius, order, threshold, blocks, master_seed, boost_floor, trial):
    rng = make_rng(trial_seed(master_seed, trial))
    nbhd = TVNeighborhood(MeasureVec(nu_weights), radius)
    ancestors = _grow_population(law, boost_floor, rng) if boost_floor else 1
    outcomes = []
    for _ in range(ancestors):
        tree = simulate_tree(law, blocks * order, rng)
        bt = maximal_block_selection(tree, order, nbhd, threshold)
        outcomes.append((tree.size(tree.depth) > 0, not bt.is_empty))
    return {
        "trial": trial,
        "ancestors": ancestors,
        "survived": any(s for s, _ in outcomes),
        "nonempty": any(n for _, n in outcomes),
        "nonempty_subtrials": sum(n for _, n in outcomes),
    }


def selection_experiment(law, nu, radius, order, epsilon, blocks, trials, master_seed,
                         threads=1, boost_floor=None, threshold=None):
    """Frequency of nonempty selections with threshold ceil(l(N)) over trials.

    With boost_floor set, each trial first waits until the population
    reaches the floor and then runs one selection per ancestor (sub-trials).
    An explicit threshold replaces ceil(l(N)).
    """
    if threshold is None:
        threshold = selection_threshold(nu, color_expectation(law).mu, epsilon, order)
    trial_fn = partial(
        _selection_trial, law, nu.weights, radius, order, threshold, blocks, master_seed, boost_floor
    )
    rows = run_trials(trial_fn, trials, threads)
    result = SelectionExperimentResult(
        order=order,
        threshold=threshold,
        rows=rows,
        nonempty_frequency=sum(row["nonempty"] for row in rows) / trials,
        survival_frequency=sum(row["survived"] for row in rows) / trials,
        predicted_survival=1.0 - extinction_probability(total_offspring_law(law)),
    )
    logger.info(
        f"Selections of order {order} (l={threshold}): nonempty {result.nonempty_frequency:.4f}, "
        f"survival {result.survival_frequency:.4f}"
    )
    return result


def smallest_order(law, nu, radius, epsilon, rng, orders=ORDER_GRID, blocks=1):
    """Smallest order of the grid with a nonempty selection on one tree realization.

    The tree is grown once and extended as larger orders are tried; a
    population-cap refusal ends the search.
    """
    mu = color_expectation(law).mu
    rng = make_rng(rng)
    tree = ExplicitTree.root(law.r)
    search = OrderSearch(order=None)
    nbhd = TVNeighborhood(nu, radius)
    for order in sorted(orders):
        needed = blocks * order
        try:
            if needed > tree.depth:
                tree = extend_tree(tree, law, needed - tree.depth, rng)
        except NumericGuardError as guard:
            logger.warning(f"Order search stopped at N={order}: {guard}")
            search.refused_order = order
            break
        threshold = selection_threshold(nu, mu, epsilon, order)
        bt = maximal_block_selection(tree, order, nbhd, threshold, depth=needed)
        search.tried.append({"order": order, "threshold": threshold, "nonempty": not bt.is_empty})
        if not bt.is_empty:
            search.order = order
            break
    return search


def choice_law_select(delta, choice):
    """Vertex index aiming opposite to the deviation of delta, coordinate by coordinate.

    A coordinate with deviation >= 0 picks the low vertex (sigma_j = -1),
    a negative one the high vertex.
    """
    deviation = choice.deviation(delta)
    return int(sum(1 << j for j, d in enumerate(deviation) if d < 0))


def choice_law_walk(choice, propose, steps):
    """Drive running averages with the choice law.

    `propose(index, n)` returns the spectrum delta_{n+1} of the next block
    given the vertex index chosen from Delta_n. Returns the sup-norm
    deviations |Delta_n - center| of the free coordinates for n = 1..steps.
    """
    total = np.zeros(choice.r)
    deviations = []
    for n in range(steps):
        average = total / n if n else choice.center.weights
        spectrum = propose(choice_law_select(average, choice), n)
        total += spectrum.weights if isinstance(spectrum, MeasureVec) else np.asarray(spectrum, dtype=float)
        free = choice.deviation(total / (n + 1))
        deviations.append(float(np.max(np.abs(free))) if free.size else 0.0)
    return deviations


def _open_frame(law, choice, neighborhoods, order, chosen, rng):
    """Rank the depth-N lines below the current individual; None if it has none.

    Only blocks whose spectrum lies in the target neighborhood O(Q_i) are
    candidates, closest to Q_i first. The ranking may be empty.
    """
    blocks = simulate_tree(law, order, rng).line_colors(order)
    if not len(blocks):
        return None
    spectra = np.stack([np.bincount(row - 1, minlength=law.r) / order for row in blocks])
    average = np.mean([spectrum for spectrum, _, _ in chosen], axis=0) if chosen else choice.center.weights
    target = choice_law_select(average, choice)
    nbhd = neighborhoods[target]
    distances = tv_distances(spectra, nbhd.center)
    inside = in_tv_ball(distances, nbhd.radius)
    ranking = np.argsort(distances, kind="stable")
    return {
        "blocks": blocks,
        "spectra": spectra,
        "target": target,
        "ranking": [int(i) for i in ranking if inside[i]],
    }


def steered_line_sampler(law, choice, order, depth, seed, neighborhoods=None, max_backtracks=10_000):
    """Walk down one realization of the process choosing blocks by the choice law.

    From the current individual its subtree is grown N generations; the
    candidates are the blocks whose spectrum lies in O(Q_i) for the target
    vertex Q_i = Q_{i(Delta_n)}, ranked by TV distance to Q_i. When the
    individual reached by a block has no descendants N generations later, or
    none of its blocks lands in the next target neighborhood, the walk
    backtracks to the next candidate. Each subtree is grown once, so every
    step reads the same realization. `neighborhoods` defaults to the vertex
    balls of radius h/2 and must be indexed by vertex.
    """
    if depth < order or depth % order:
        raise DomainError(f"depth {depth} is not a positive multiple of the order {order}")
    if law.r != choice.r:
        raise InvalidMeasureError(f"law has {law.r} colors, choice law has {choice.r}")
    rng = make_rng(seed)
    neighborhoods = list(neighborhoods) if neighborhoods is not None else choice.vertex_neighborhoods()
    if len(neighborhoods) != choice.vertex_count:
        raise DomainError(
            f"need one neighborhood per cube vertex ({choice.vertex_count}), got {len(neighborhoods)}"
        )
    blocks_needed = depth // order

    # len(chosen) == len(stack) - 1 at the top of every iteration
    chosen = []
    backtracks = 0
    root = _open_frame(law, choice, neighborhoods, order, chosen, rng)
    stack = [root] if root is not None else []
    while stack and backtracks <= max_backtracks:
        frame = stack[-1]
        if not frame["ranking"]:
            stack.pop()
            if chosen:
                chosen.pop()
            backtracks += 1
            continue
        pick = frame["ranking"].pop(0)
        chosen.append((frame["spectra"][pick], frame["blocks"][pick], frame["target"]))
        if len(chosen) == blocks_needed:
            break
        child = _open_frame(law, choice, neighborhoods, order, chosen, rng)
        if child is None:
            chosen.pop()
            backtracks += 1
            continue
        stack.append(child)

    if len(chosen) < blocks_needed:
        logger.warning(f"Steered sampler found no surviving line of depth {depth} ({backtracks} backtracks)")
        return SteeredLine(
            line=SampledLine(colors=[]), diagnostics=[], empty=True, backtracks=backtracks,
            notes=["selection empty: trial extinct, no block in a target neighborhood, or backtrack limit reached"],
        )

    diagnostics = []
    total = np.zeros(law.r)
    for n, (spectrum, _, target) in enumerate(chosen, start=1):
        total += spectrum
        average = total / n
        diagnostics.append({
            "n": n,
            "target": target,
            "in_target": bool(neighborhoods[target].contains(MeasureVec(spectrum))),
            "deviation": float(np.max(np.abs(choice.deviation(average)))) if law.r > 1 else 0.0,
            "tv": tv_distance(MeasureVec(average), choice.center),
        })
    colors = np.concatenate([block for _, block, _ in chosen])
    return SteeredLine(
        line=SampledLine(colors=colors, provenance=f"steered{choice.center.weights.tolist()}"),
        diagnostics=diagnostics,
        backtracks=backtracks,
        final_tv=diagnostics[-1]["tv"],
    )


def trajectory_rows(steered):
    """Header and rows n,target,in_target,deviation,tv for a steered line."""
    header = ["n", "target", "in_target", "deviation", "tv"]
    return header, [[row[name] for name in header] for row in steered.diagnostics]
