"""
Scalar Galton-Watson process: generating functions, extinction and simulation.

Offspring laws have finite support, so sampling is exact and E Z^2 < inf.
"""

import logging
import math
from dataclasses import dataclass
from functools import partial

import numpy as np
from scipy.optimize import bisect

from .errors import DomainError, InvalidMeasureError, NumericGuardError
from .measures import PROBABILITY_TOL
from .streams import make_rng, run_trials, trial_seed

logger = logging.getLogger(__name__)

# Bisection runs on [0, 1 - ROOT_MARGIN]
ROOT_MARGIN = 1e-9
ROOT_XTOL = 1e-13
# Largest population simulate_gw will carry
MAX_POPULATION = 2**62
# A population Z with q**Z below this is treated as surviving for good
SURVIVAL_CERTAINTY = 1e-15


@dataclass(frozen=True, eq=False)
class OffspringCountLaw:
    """Distribution of the number of children: pairs (k, p_k)."""

    ks: np.ndarray
    ps: np.ndarray

    def __post_init__(self):
        ks = np.array(self.ks, dtype=np.int64)
        ps = np.array(self.ps, dtype=float)
        if ks.ndim != 1 or ks.shape != ps.shape or ks.size == 0:
            raise InvalidMeasureError("offspring law needs matching nonempty k and p lists")
        if np.any(ks < 0) or np.any(ps < 0):
            raise InvalidMeasureError("offspring counts and probabilities must be nonnegative")
        if abs(ps.sum() - 1.0) > PROBABILITY_TOL:
            raise InvalidMeasureError(f"offspring probabilities sum to {ps.sum()}, expected 1")
        if len(set(ks.tolist())) != ks.size:
            raise InvalidMeasureError("offspring counts must be distinct")
        order = np.argsort(ks)
        ks, ps = ks[order], ps[order]
        ks.setflags(write=False)
        ps.setflags(write=False)
        object.__setattr__(self, "ks", ks)
        object.__setattr__(self, "ps", ps)

    @classmethod
    def from_mapping(cls, mapping):
        """Build from {k: p}; keys may be strings as read from JSON."""
        items = sorted((int(k), float(p)) for k, p in mapping.items())
        return cls([k for k, _ in items], [p for _, p in items])

    @property
    def is_degenerate(self):
        """Every individual has exactly one child."""
        return bool(np.all(self.ps[self.ks != 1] == 0))

    def as_dict(self):
        return {int(k): float(p) for k, p in zip(self.ks, self.ps) if p > 0}


@dataclass(frozen=True)
class GWTrajectory:
    counts: tuple
    seed: object = None

    @property
    def extinct(self):
        return self.counts[-1] == 0


@dataclass(frozen=True)
class ExtinctionSolution:
    """Extinction probability and whether the law is the one-child law."""

    probability: float
    degenerate: bool = False


@dataclass(frozen=True)
class ExtinctionEstimate:
    frequency: float
    stderr: float
    trials: int
    depth: int


def mean_offspring(law):
    return float(np.dot(law.ks, law.ps))


def _check_unit_interval(s):
    if not 0.0 <= s <= 1.0:
        raise DomainError(f"generating function argument must lie in [0, 1], got {s}")


def generating_function(law, s):
    """f(s) = sum_k p_k s^k."""
    _check_unit_interval(s)
    return float(np.dot(law.ps, np.power(float(s), law.ks)))


def iterate_generating_function(law, n, s):
    """n-fold composition f_n(s); f_n(0) = P{Z_n = 0}."""
    if n < 1:
        raise DomainError(f"iteration count must be positive, got {n}")
    _check_unit_interval(s)
    value = float(s)
    for _ in range(n):
        value = generating_function(law, value)
    return value


def solve_extinction(law):
    """Smallest root of f(s) = s on [0, 1], with the degeneracy flag.

    Every s solves f(s) = s for the one-child-per-individual law; that law
    never dies out, so it gets probability 0 and degenerate=True.
    """
    if law.is_degenerate:
        logger.warning("Offspring law is degenerate (exactly one child): extinction set to 0")
        return ExtinctionSolution(0.0, degenerate=True)
    return ExtinctionSolution(_smallest_fixed_point(law))


def extinction_probability(law):
    return solve_extinction(law).probability


def _smallest_fixed_point(law):
    if mean_offspring(law) <= 1.0:
        return 1.0
    p0 = generating_function(law, 0.0)
    if p0 == 0.0:
        return 0.0

    def excess(s):
        return generating_function(law, s) - s

    upper = 1.0 - ROOT_MARGIN
    if excess(upper) < 0:
        return float(bisect(excess, 0.0, upper, xtol=ROOT_XTOL))
    # Barely supercritical: the root sits within ROOT_MARGIN of 1
    logger.warning("No sign change below 1 - %g; iterating the generating function", ROOT_MARGIN)
    value, previous = 0.0, -1.0
    while value - previous > ROOT_XTOL:
        previous, value = value, generating_function(law, value)
    return value


def _next_generation(law, population, rng):
    counts = rng.multinomial(population, law.ps)
    # Python ints: an int64 dot product wraps around past 2**63
    children = sum(int(c) * int(k) for c, k in zip(counts.tolist(), law.ks.tolist()))
    if children > MAX_POPULATION:
        raise NumericGuardError(f"population {children} exceeds {MAX_POPULATION}; reduce the depth")
    return children


def simulate_gw(law, depth, seed):
    """Z_0 = 1, ..., Z_depth drawn from one PCG64 stream built from seed."""
    if depth < 0:
        raise DomainError(f"depth must be nonnegative, got {depth}")
    rng = make_rng(seed)
    counts = [1]
    for _ in range(depth):
        population = counts[-1]
        if population == 0:
            counts.append(0)
            continue
        counts.append(_next_generation(law, population, rng))
    return GWTrajectory(counts=tuple(counts), seed=seed)


def martingale_sequence(trajectory, m):
    """W_n = Z_n / m^n."""
    if not m > 1:
        raise DomainError(f"martingale normalization needs m > 1, got {m}")
    return [z / m**n for n, z in enumerate(trajectory.counts)]


def martingale_diagnostic(sequence, window=10):
    """Largest step |W_{n+1} - W_n| over the last `window` steps."""
    tail = sequence[-(window + 1):]
    if len(tail) < 2:
        return 0.0
    return float(max(abs(b - a) for a, b in zip(tail, tail[1:])))


def survival_population(q):
    """Population beyond which later extinction has probability below SURVIVAL_CERTAINTY."""
    if q <= 0.0:
        return 1
    if q >= 1.0:
        return math.inf
    return math.ceil(math.log(SURVIVAL_CERTAINTY) / math.log(q))


def _extinction_trial(law, depth, master_seed, sure_survival, trial):
    rng = make_rng(trial_seed(master_seed, trial))
    population = 1
    for _ in range(depth):
        if population == 0 or population >= sure_survival:
            break
        population = _next_generation(law, population, rng)
    return population == 0


def extinction_frequency(law, depth, trials, master_seed, threads=1):
    """Monte Carlo estimate of P{Z_depth = 0}."""
    sure_survival = survival_population(extinction_probability(law))
    trial_fn = partial(_extinction_trial, law, depth, master_seed, sure_survival)
    outcomes = run_trials(trial_fn, trials, threads)
    frequency = sum(outcomes) / trials
    stderr = math.sqrt(frequency * (1 - frequency) / trials)
    logger.info(f"Extinction frequency {frequency:.6f} +/- {stderr:.6f} over {trials} trials")
    return ExtinctionEstimate(frequency=frequency, stderr=stderr, trials=trials, depth=depth)
