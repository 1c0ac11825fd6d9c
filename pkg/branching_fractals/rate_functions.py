"""
Spectral potential, tilted measures, Kullback action and their duality.

The spectral potential is lambda(phi, mu) = ln mu[exp(phi)]. The Kullback
action rho(nu, mu) is its Legendre transform in nu; it is finite only for
probability measures absolutely continuous with respect to mu and may be
negative when mu is not normalized.
"""

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .errors import InvalidMeasureError
from .measures import (
    PROBABILITY_TOL,
    FuncVec,
    MeasureVec,
    check_dimensions,
    integrate,
)

logger = logging.getLogger(__name__)

# Entries below this are exact zeros (0 ln 0 = 0)
ZERO_CUTOFF = 1e-300
# Stand-in for -inf on coordinates outside the support of nu
OFF_SUPPORT_TILT = -700.0


class FunctionalClass(enum.Enum):
    ABSOLUTELY_CONTINUOUS = "absolutely_continuous"
    SINGULAR = "singular"
    NON_NORMALIZED = "non_normalized"
    NON_POSITIVE = "non_positive"


@dataclass(frozen=True, eq=False)
class TiltedFamily:
    """mu_phi = exp(phi - lambda(phi, mu)) mu together with its ingredients."""

    base: MeasureVec
    tilt: FuncVec
    value: float
    tilted: MeasureVec


@dataclass(frozen=True)
class LegendreSearch:
    """Search control for legendre_sup_estimate."""

    restarts: int = 8
    spread: float = 1.0
    seed: int = 0


def _require_mass(mu):
    if not mu.total > 0:
        raise InvalidMeasureError("spectral potential needs a measure with positive mass")


def _entries(vec):
    return vec.weights if isinstance(vec, MeasureVec) else vec.values


def spectral_potential(phi, mu):
    """lambda(phi, mu) = ln sum_i mu(i) exp(phi(i))."""
    check_dimensions(phi, mu)
    _require_mass(mu)
    return float(logsumexp(phi.values, b=mu.weights))


def tilted_measure(phi, mu):
    value = spectral_potential(phi, mu)
    tilted = mu.weights * np.exp(phi.values - value)
    return TiltedFamily(base=mu, tilt=phi, value=value, tilted=MeasureVec(tilted))


def potential_gradient(phi, mu):
    """Gradient of lambda in phi; it is the tilted measure mu_phi."""
    return tilted_measure(phi, mu).tilted


def potential_hessian_quadform(phi, mu, f, g):
    """Covariance of f and g under mu_phi."""
    check_dimensions(phi, f, g)
    weights = potential_gradient(phi, mu).weights
    f_centered = f.values - np.dot(weights, f.values)
    g_centered = g.values - np.dot(weights, g.values)
    return float(np.dot(weights, f_centered * g_centered))


def classify_functional(nu, mu, tol=PROBABILITY_TOL):
    """Sort a functional into the finite branch or one of the three infinite ones."""
    check_dimensions(nu, mu)
    values = _entries(nu)
    if np.any(values < 0):
        return FunctionalClass.NON_POSITIVE
    if abs(values.sum() - 1.0) > tol:
        return FunctionalClass.NON_NORMALIZED
    if np.any((values > ZERO_CUTOFF) & (mu.weights <= ZERO_CUTOFF)):
        return FunctionalClass.SINGULAR
    return FunctionalClass.ABSOLUTELY_CONTINUOUS


def kullback_action(nu, mu, functional=False, tol=PROBABILITY_TOL):
    """rho(nu, mu) = sum nu(i) ln(nu(i)/mu(i)), or +inf off the finite branch.

    With ``functional=False`` nu must be a probability measure; negative or
    non-normalized input raises. With ``functional=True`` such input is a
    valid functional and its action is +inf.
    """
    kind = classify_functional(nu, mu, tol)
    if kind in (FunctionalClass.NON_POSITIVE, FunctionalClass.NON_NORMALIZED):
        if functional:
            return math.inf
        raise InvalidMeasureError(f"kullback_action expects a probability measure, got {kind.value}")
    if kind is FunctionalClass.SINGULAR:
        return math.inf
    values = _entries(nu)
    support = values > ZERO_CUTOFF
    return float(np.sum(values[support] * np.log(values[support] / mu.weights[support])))


def shannon_entropy(nu, tol=PROBABILITY_TOL):
    if not nu.is_probability(tol):
        raise InvalidMeasureError(f"entropy needs a probability measure, mass is {nu.total}")
    values = nu.weights[nu.weights > ZERO_CUTOFF]
    return float(-np.sum(values * np.log(values)))


def young_gap(nu, mu, psi):
    """rho(nu, mu) - (nu[psi] - lambda(psi, mu)); zero exactly when nu = mu_psi."""
    rho = kullback_action(nu, mu)
    if math.isinf(rho):
        raise InvalidMeasureError("Young gap is undefined when the Kullback action is infinite")
    return rho - (integrate(nu, psi) - spectral_potential(psi, mu))


def optimal_tilt(nu, mu):
    """The maximizer psi = ln(nu/mu) of the Legendre objective, -700 off the support."""
    check_dimensions(nu, mu)
    psi = np.zeros(nu.r)
    support = nu.weights > ZERO_CUTOFF
    psi[support] = np.log(nu.weights[support] / mu.weights[support])
    psi[~support & (mu.weights > ZERO_CUTOFF)] = OFF_SUPPORT_TILT
    return FuncVec(psi)


def legendre_sup_estimate(nu, mu, search=None):
    """Numerically maximize nu[psi] - lambda(psi, mu) over psi.

    Starts from the known maximizer ln(nu/mu), from random perturbations of
    it and from uniformly scattered restarts, then refines each start with
    BFGS using the analytic gradient nu - mu_psi.
    """
    search = search or LegendreSearch()
    kind = classify_functional(nu, mu)
    if kind is not FunctionalClass.ABSOLUTELY_CONTINUOUS:
        raise InvalidMeasureError(
            f"Legendre estimate needs nu absolutely continuous w.r.t. mu (got {kind.value}); "
            "use kullback_action for the infinite branch"
        )
    _require_mass(mu)
    nu_w = nu.weights
    log_mu = np.where(mu.weights > ZERO_CUTOFF, np.log(np.maximum(mu.weights, ZERO_CUTOFF)), -np.inf)

    def negative_objective(psi):
        return float(logsumexp(psi + log_mu) - np.dot(nu_w, psi))

    def negative_gradient(psi):
        return np.exp(psi + log_mu - logsumexp(psi + log_mu)) - nu_w

    rng = np.random.default_rng(search.seed)
    center = optimal_tilt(nu, mu).values
    starts = [center]
    starts += [center + rng.normal(0.0, search.spread, nu.r) for _ in range(search.restarts)]
    starts += [rng.uniform(-5 * search.spread, 5 * search.spread, nu.r) for _ in range(search.restarts)]

    best = -math.inf
    for start in starts:
        best = max(best, -negative_objective(start))
        result = minimize(negative_objective, start, jac=negative_gradient, method="BFGS")
        best = max(best, -float(result.fun))
    logger.debug("Legendre estimate %.12g from %d starts", best, len(starts))
    return best


def legendre_divergence_witness(nu, mu, ts=(1.0, 10.0, 100.0)):
    """Evaluate nu[psi_t] - lambda(psi_t, mu) along the family that drives the sup.

    For the three infinite branches the values grow without bound in t; in the
    absolutely continuous case they converge to rho(nu, mu).
    """
    kind = classify_functional(nu, mu)
    values = _entries(nu)
    base = np.zeros(nu.r)
    if kind is FunctionalClass.SINGULAR:
        atom = int(np.flatnonzero((values > ZERO_CUTOFF) & (mu.weights <= ZERO_CUTOFF))[0])
    elif kind is FunctionalClass.NON_POSITIVE:
        atom = int(np.argmin(values))
    elif kind is FunctionalClass.ABSOLUTELY_CONTINUOUS:
        support = values > ZERO_CUTOFF
        base[support] = np.log(values[support] / mu.weights[support])
    direction = math.copysign(1.0, values.sum() - 1.0)

    results = []
    for t in ts:
        psi = base.copy()
        if kind is FunctionalClass.SINGULAR:
            psi[atom] = t
        elif kind is FunctionalClass.NON_POSITIVE:
            psi[atom] = -t
        elif kind is FunctionalClass.NON_NORMALIZED:
            psi[:] = direction * t
        else:
            psi[values <= ZERO_CUTOFF] = -t
        tilt = FuncVec(psi)
        results.append(float(np.dot(values, psi)) - spectral_potential(tilt, mu))
    return results


def finite_difference_gradient(phi, mu, step=1e-5):
    grad = np.empty(phi.r)
    for i in range(phi.r):
        shift = np.zeros(phi.r)
        shift[i] = step
        upper = spectral_potential(FuncVec(phi.values + shift), mu)
        lower = spectral_potential(FuncVec(phi.values - shift), mu)
        grad[i] = (upper - lower) / (2 * step)
    return grad


def finite_difference_hessian(phi, mu, f, g, step=1e-4):
    """Mixed central difference of lambda along f and g."""

    def at(a, b):
        return spectral_potential(FuncVec(phi.values + a * step * f.values + b * step * g.values), mu)

    return (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4 * step * step)
