"""
Counting asymptotics: the local large deviations principle, McMillan's
theorem for words and its colored branching version.

Exact paths enumerate color count vectors (the method of types): every word
with counts c has spectrum c/n and product mass prod mu(i)^c_i, and there are
multinomial(n; c) of them.
"""

import itertools
import logging
import math
import statistics
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy.special import gammaln, logsumexp

from .colored_branching import (
    color_expectation,
    count_lines_in_neighborhood,
    evolve_histogram,
    total_offspring_law,
)
from .errors import NumericGuardError
from .galton_watson import extinction_probability
from .measures import MeasureVec, TVNeighborhood, check_dimensions, in_tv_ball, tv_distances
from .rate_functions import kullback_action, shannon_entropy
from .streams import make_rng, run_trials, trial_seed

logger = logging.getLogger(__name__)

# Radii tried when certifying an epsilon
RADIUS_GRID = (0.2, 0.1, 0.05, 0.02, 0.01)
# Enumeration limits for alphabets with more than two colors
MAX_ENUMERATION_COLORS = 4
MAX_ENUMERATION_DEPTH = 40
MAX_COMPOSITIONS = 2 * 10**6


@dataclass(frozen=True)
class RateEstimate:
    """(1/n) ln of a count or mass against its predicted exponent."""

    n: int
    value: float
    log_rate: float
    predicted: float
    survived: bool = True

    @property
    def gap(self):
        return self.log_rate - self.predicted

    @classmethod
    def from_log(cls, n, log_value, predicted, survived=True):
        return cls(
            n=n,
            value=math.exp(log_value) if log_value < 700 else math.inf,
            log_rate=log_value / n,
            predicted=predicted,
            survived=survived,
        )

    @classmethod
    def from_count(cls, n, count, predicted, survived=True):
        log_value = math.log(count) if count > 0 else -math.inf
        return cls(n=n, value=count, log_rate=log_value / n, predicted=predicted, survived=survived)


@dataclass(frozen=True)
class RadiusCertificate:
    radius: float
    epsilon: float
    upper_holds: bool
    lower_threshold: object
    lower_holds_top_half: bool
    rates: tuple = field(default=())


@dataclass(frozen=True)
class ColoredMcMillanResult:
    estimates: tuple
    predicted_rate: float
    survival_frequency: float
    predicted_survival: float
    lower_bound_applicable: bool
    upper_violation_frequency: object = None

    @property
    def surviving(self):
        return [e for e in self.estimates if e.survived]

    @property
    def median_log_rate(self):
        rates = [e.log_rate for e in self.surviving]
        return statistics.median(rates) if rates else math.nan

    @property
    def median_gap(self):
        return self.median_log_rate - self.predicted_rate


def composition_vectors(n, r):
    """All c in Z_+^r with |c| = n, as an (N, r) array."""
    if r > 2 and (r > MAX_ENUMERATION_COLORS or n > MAX_ENUMERATION_DEPTH):
        raise NumericGuardError(
            f"exact enumeration limited to r <= {MAX_ENUMERATION_COLORS} and n <= "
            f"{MAX_ENUMERATION_DEPTH} (got r={r}, n={n}); use colored_mcmillan_experiment instead"
        )
    if math.comb(n + r - 1, r - 1) > MAX_COMPOSITIONS:
        raise NumericGuardError(
            f"{math.comb(n + r - 1, r - 1)} compositions exceed {MAX_COMPOSITIONS}; "
            "use the Monte Carlo path"
        )
    if r == 1:
        return np.array([[n]], dtype=np.int64)
    if r == 2:
        k = np.arange(n + 1, dtype=np.int64)
        return np.stack([k, n - k], axis=1)
    rows = []
    for cuts in itertools.combinations(range(n + r - 1), r - 1):
        bounds = (-1,) + cuts + (n + r - 1,)
        rows.append([bounds[i + 1] - bounds[i] - 1 for i in range(r)])
    return np.array(rows, dtype=np.int64)


def _log_multinomial(n, compositions):
    return gammaln(n + 1) - gammaln(compositions + 1).sum(axis=1)


def _in_ball(compositions, n, nbhd):
    spectra = compositions / n
    return in_tv_ball(tv_distances(spectra, nbhd.center), nbhd.radius)


def _log_product_mass(compositions, mu):
    with np.errstate(divide="ignore", invalid="ignore"):
        log_mu = np.log(mu.weights)
        terms = np.where(compositions > 0, compositions * log_mu, 0.0)
    return terms.sum(axis=1)


def ldp_log_mass(mu, nu, radius, n):
    """ln mu^n{x in X^n | delta_{x,n} in O(nu)}, -inf when the set is empty."""
    check_dimensions(mu, nu)
    nbhd = TVNeighborhood(nu, radius)
    compositions = composition_vectors(n, mu.r)
    mask = _in_ball(compositions, n, nbhd)
    if not mask.any():
        return -math.inf
    selected = compositions[mask]
    log_terms = _log_multinomial(n, selected) + _log_product_mass(selected, mu)
    return float(logsumexp(log_terms))


def ldp_mass_exact(mu, nu, radius, n):
    return math.exp(ldp_log_mass(mu, nu, radius, n))


def total_log_mass(mu, n):
    """ln of the mass of all of X^n summed over every composition; equals n ln mu[1]."""
    compositions = composition_vectors(n, mu.r)
    return float(logsumexp(_log_multinomial(n, compositions) + _log_product_mass(compositions, mu)))


def mcmillan_count_exact(nu, radius, n):
    """#{x in X^n | delta_{x,n} in O(nu)} as an exact integer."""
    nbhd = TVNeighborhood(nu, radius)
    compositions = composition_vectors(n, nu.r)
    mask = _in_ball(compositions, n, nbhd)
    total = 0
    for c in compositions[mask].tolist():
        coefficient = math.factorial(n)
        for part in c:
            coefficient //= math.factorial(part)
        total += coefficient
    return total


def ldp_rate(mu, nu, radius, n):
    return RateEstimate.from_log(n, ldp_log_mass(mu, nu, radius, n), -kullback_action(nu, mu))


def mcmillan_rate(nu, radius, n):
    return RateEstimate.from_count(n, mcmillan_count_exact(nu, radius, n), shannon_entropy(nu))


def certify_radii(mu, nu, epsilon, depths, radii=RADIUS_GRID):
    """Check both LDP bounds for every radius of the grid over the given depths."""
    predicted = -kullback_action(nu, mu)
    depths = sorted(depths)
    top_half = depths[len(depths) // 2:]
    certificates = []
    for radius in radii:
        rates = [ldp_rate(mu, nu, radius, n) for n in depths]
        upper = all(e.log_rate <= predicted + epsilon for e in rates)
        lower_ok = [e.log_rate >= predicted - epsilon for e in rates]
        threshold = None
        for index in range(len(depths)):
            if all(lower_ok[index:]):
                threshold = depths[index]
                break
        certificates.append(
            RadiusCertificate(
                radius=radius,
                epsilon=epsilon,
                upper_holds=upper,
                lower_threshold=threshold,
                lower_holds_top_half=all(ok for n, ok in zip(depths, lower_ok) if n in top_half),
                rates=tuple(rates),
            )
        )
        logger.debug(f"radius {radius}: upper={upper} lower threshold={threshold}")
    return certificates


def _colored_trial(law, nu_weights, radius, n, master_seed, trial):
    rng = make_rng(trial_seed(master_seed, trial))
    history = evolve_histogram(law, n, rng, line_limit=None)
    final = history[-1]
    survived = final.depth == n and not final.is_empty
    if not survived:
        return 0, False
    nbhd = TVNeighborhood(MeasureVec(nu_weights), radius)
    return count_lines_in_neighborhood(final, nbhd), True


def colored_mcmillan_experiment(law, nu, radius, n, trials, master_seed, threads=1, epsilon=None):
    """Count lines of depth n with spectrum near nu over independent trials.

    The predicted exponent is -rho(nu, mu) with mu the color expectation; the
    survival frequency is compared with 1 - q*, q* being the extinction
    probability of the total offspring law.
    """
    mu = color_expectation(law).mu
    rho = kullback_action(nu, mu)
    q_star = extinction_probability(total_offspring_law(law))
    trial_fn = partial(_colored_trial, law, nu.weights, radius, n, master_seed)
    outcomes = run_trials(trial_fn, trials, threads)
    estimates = tuple(
        RateEstimate.from_count(n, count, -rho, survived=survived) for count, survived in outcomes
    )
    survivors = [e for e in estimates if e.survived]
    violation = None
    if epsilon is not None and survivors:
        violation = sum(e.log_rate > -rho + epsilon for e in survivors) / len(survivors)
    result = ColoredMcMillanResult(
        estimates=estimates,
        predicted_rate=-rho,
        survival_frequency=len(survivors) / trials,
        predicted_survival=1.0 - q_star,
        lower_bound_applicable=rho < 0,
        upper_violation_frequency=violation,
    )
    logger.info(
        f"Colored McMillan n={n}: median log rate {result.median_log_rate:.6f} vs {-rho:.6f}, "
        f"survival {result.survival_frequency:.4f} vs {1.0 - q_star:.4f}"
    )
    return result
