"""
Cylinder theta-metric and Hausdorff dimension estimates.

On sequence space the depth-n cylinder of x has diameter prod theta(x_t)
and every ball is a cylinder. Closed-form dimensions (Billingsley entropy,
Billingsley-Kullback entropy, Moran and Bowen roots) are computed next to
two finite-depth estimators: the root of the natural depth-n cylinder
cover (upper side) and the pointwise dimension along a line (lower side).
"""

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import bisect
from scipy.special import logsumexp

from .colored_branching import ColorExpectation
from .errors import DomainError, InvalidMeasureError
from .measures import MeasureVec, check_dimensions
from .rate_functions import ZERO_CUTOFF, kullback_action

logger = logging.getLogger(__name__)

ROOT_XTOL = 1e-14
# Depth lag used for the convergence gap |s_n - s_{n-lag}|
PROFILE_LAG = 5


@dataclass(frozen=True, eq=False)
class ThetaMetric:
    """Contraction ratios theta(i) in (0, 1) defining the cylinder metric."""

    theta: MeasureVec

    def __post_init__(self):
        theta = self.theta if isinstance(self.theta, MeasureVec) else MeasureVec(self.theta)
        if np.any(theta.weights <= 0) or np.any(theta.weights >= 1):
            raise InvalidMeasureError(f"theta(i) in (0,1) required, got {theta.weights.tolist()}")
        object.__setattr__(self, "theta", theta)

    @property
    def r(self):
        return self.theta.r

    @property
    def log_theta(self):
        return np.log(self.theta.weights)

    def __len__(self):
        return self.r


@dataclass
class DimensionReport:
    estimate: float
    method: str
    depth: int
    diagnostics: list = field(default_factory=list)
    empty: bool = False
    notes: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def _mu_of(mu):
    return mu.mu if isinstance(mu, ColorExpectation) else mu


def _decreasing_root(fn, lower=0.0, upper=1.0):
    """Root of a strictly decreasing function, widening the bracket as needed."""
    while fn(lower) < 0:
        lower = 2 * lower - 1
    while fn(upper) > 0:
        upper = 2 * upper + 1
    return float(bisect(fn, lower, upper, xtol=ROOT_XTOL))


def cylinder_diameter(theta, prefix):
    if len(prefix) == 0:
        raise DomainError("cylinder prefix must be nonempty")
    index = theta.theta.alphabet.indices(prefix)
    return float(np.prod(theta.theta.weights[index]))


def cylinder_distance(theta, x, y):
    """Diameter of the longest common cylinder of two words; 0 if one extends the other."""
    common = 0
    for a, b in zip(x, y):
        if a != b:
            break
        common += 1
    else:
        return 0.0
    if common == 0:
        return 1.0
    return cylinder_diameter(theta, x[:common])


def _expected_log_theta(nu, theta):
    check_dimensions(nu, theta.theta)
    return float(np.dot(nu.weights, theta.log_theta))


def billingsley_entropy(nu, theta):
    """S(nu, theta) = sum nu ln nu / sum nu ln theta."""
    support = nu.weights > ZERO_CUTOFF
    numerator = float(np.sum(nu.weights[support] * np.log(nu.weights[support])))
    if numerator == 0.0:
        return 0.0
    return numerator / _expected_log_theta(nu, theta)


def billingsley_kullback_entropy(nu, mu, theta):
    """d(nu, mu, theta) = rho(nu, mu) / sum nu ln theta; -inf when rho is +inf."""
    rho = kullback_action(nu, _mu_of(mu))
    if math.isinf(rho):
        return -math.inf
    return rho / _expected_log_theta(nu, theta)


def moran_root(theta, subset):
    """Root of sum_{i in subset} theta(i)^s = 1."""
    subset = sorted(set(subset))
    if not subset:
        raise DomainError("Moran equation needs a nonempty color subset")
    if len(subset) == 1:
        return 0.0
    log_theta = theta.log_theta[theta.theta.alphabet.indices(subset)]
    return _decreasing_root(lambda s: float(logsumexp(s * log_theta)))


def bowen_root(mu, theta):
    """Root of sum_i mu(i) theta(i)^s = 1; a root <= 0 means X_inf is empty almost surely."""
    mu = _mu_of(mu)
    check_dimensions(mu, theta.theta)
    if not mu.total > 0:
        raise DomainError("Bowen equation needs some mu(i) > 0")
    root = _decreasing_root(lambda s: float(logsumexp(s * theta.log_theta, b=mu.weights)))
    if limit_set_empty(root):
        logger.warning(f"Bowen root {root:.12g} <= 0: X_inf is empty almost surely")
    return root


def limit_set_empty(bowen):
    return bowen <= 0


def moran_measure(theta, subset):
    """nu(i) = theta(i)^s on the subset, s the Moran root; S(nu, theta) = s."""
    s = moran_root(theta, subset)
    weights = np.zeros(theta.r)
    index = theta.theta.alphabet.indices(sorted(set(subset)))
    weights[index] = theta.theta.weights[index] ** s
    return MeasureVec(weights / weights.sum())


def bowen_measure(mu, theta):
    """nu(i) = mu(i) theta(i)^s, s the Bowen root; d(nu, mu, theta) = s."""
    mu = _mu_of(mu)
    s = bowen_root(mu, theta)
    weights = mu.weights * theta.theta.weights**s
    return MeasureVec(weights / weights.sum())


def maximal_dimension(measures, theta):
    """sup of S(nu, theta) over a finite family: dimension of the condensation set."""
    return max(billingsley_entropy(nu, theta) for nu in measures)


def condensation_dimension_bound(measures, mu, theta):
    """sup of d(nu, mu, theta) over a finite family: almost sure upper bound."""
    return max(billingsley_kullback_entropy(nu, mu, theta) for nu in measures)


def basin_dimension(nu, mu, theta):
    """Dimension of the basin B(nu) on survival: d(nu, mu, theta) if positive, else 0."""
    return max(billingsley_kullback_entropy(nu, mu, theta), 0.0)


def pointwise_dimension(line, weight_measure, theta, n):
    """sum ln nu(x_t) / sum ln theta(x_t) over the first n colors of the line."""
    if n < 1 or n > len(line):
        raise DomainError(f"depth {n} outside 1..{len(line)}")
    index = line.colors[:n] - 1
    weights = weight_measure.weights[index]
    if np.any(weights <= 0):
        return math.inf
    numerator = float(np.sum(np.log(weights)))
    if numerator == 0.0:
        return 0.0
    return numerator / float(np.sum(theta.log_theta[index]))


def pointwise_dimension_report(line, weight_measure, theta, depths):
    depths = sorted(depths)
    values = [pointwise_dimension(line, weight_measure, theta, n) for n in depths]
    diagnostics = [
        {"n": n, "estimate": v, "gap": abs(v - values[i - 1]) if i else None}
        for i, (n, v) in enumerate(zip(depths, values))
    ]
    return DimensionReport(estimate=values[-1], method="pointwise", depth=depths[-1], diagnostics=diagnostics)


def covering_root(histogram, theta):
    """Root s of sum_c count(c) (prod_i theta(i)^c_i)^s = 1; None for an empty histogram."""
    if histogram.is_empty:
        return None
    if histogram.r != theta.r:
        raise InvalidMeasureError(f"histogram has {histogram.r} colors, theta has {theta.r}")
    log_counts = np.array([math.log(c) for c in histogram.counts.values()])
    log_diameters = histogram.keys_array() @ theta.log_theta
    if histogram.depth == 0 or logsumexp(log_counts) == 0.0:
        return 0.0
    return _decreasing_root(lambda s: float(logsumexp(log_counts + s * log_diameters)))


def covering_dimension_estimate(histogram, theta):
    root = covering_root(histogram, theta)
    if root is None:
        return DimensionReport(
            estimate=0.0,
            method="covering-root",
            depth=histogram.depth,
            empty=True,
            notes=["empty set: dimension 0 by convention"],
        )
    return DimensionReport(estimate=root, method="covering-root", depth=histogram.depth)


def covering_dimension_profile(histograms, theta, keep=None):
    """Covering roots s_n over a sequence of histograms, optionally filtered.

    `keep` maps a histogram to its filtered version (e.g. spectrum_filter);
    filtering at the reporting depth stands in for condensation on a set.
    """
    roots = []
    for histogram in histograms:
        if histogram.depth == 0:
            continue
        selected = keep(histogram) if keep else histogram
        roots.append((histogram.depth, covering_root(selected, theta)))
    diagnostics = []
    by_depth = dict(roots)
    for n, s in roots:
        earlier = by_depth.get(n - PROFILE_LAG)
        gap = abs(s - earlier) if s is not None and earlier is not None else None
        diagnostics.append({"n": n, "estimate": s, "gap": gap})
    if not roots or roots[-1][1] is None:
        depth = roots[-1][0] if roots else 0
        return DimensionReport(
            estimate=0.0, method="covering-root", depth=depth, diagnostics=diagnostics,
            empty=True, notes=["empty set: dimension 0 by convention"],
        )
    notes = ["spectrum filter applied at each reporting depth"] if keep else []
    return DimensionReport(
        estimate=roots[-1][1], method="covering-root", depth=roots[-1][0],
        diagnostics=diagnostics, notes=notes,
    )
