"""
Vector types over the finite color alphabet.

Colors are labelled 1..r in color words and lines, matching the way genetic
lines are written down; vectors are indexed 0..r-1 internally.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, InvalidMeasureError

logger = logging.getLogger(__name__)

# Tolerance for exact-arithmetic probability checks
PROBABILITY_TOL = 1e-12
# Tolerance for empirical measures coming out of Monte Carlo runs
MONTE_CARLO_TOL = 1e-9
# Distances within this of a ball radius count as on the boundary, hence outside
TV_BOUNDARY_TOL = 1e-12


def _frozen_array(values, name):
    array = np.array(values, dtype=float)
    if array.ndim != 1 or array.size == 0:
        raise InvalidMeasureError(f"{name} must be a nonempty one-dimensional vector")
    if not np.all(np.isfinite(array)):
        raise InvalidMeasureError(f"{name} entries must be finite, got {array.tolist()}")
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class ColorAlphabet:
    """The color set {1, ..., r}."""

    r: int

    def __post_init__(self):
        if int(self.r) != self.r or self.r < 1:
            raise InvalidMeasureError(f"color count must be a positive integer, got {self.r}")

    @property
    def colors(self):
        return tuple(range(1, self.r + 1))

    def indices(self, word):
        """Convert a color word (labels 1..r) to a 0-based index array."""
        labels = np.asarray(word, dtype=np.int64)
        if labels.size and (labels.min() < 1 or labels.max() > self.r):
            raise InvalidMeasureError(f"color labels must lie in 1..{self.r}")
        return labels - 1


@dataclass(frozen=True, eq=False)
class MeasureVec:
    """Nonnegative mass per color."""

    weights: np.ndarray

    def __post_init__(self):
        array = _frozen_array(self.weights, "measure")
        if np.any(array < 0):
            raise InvalidMeasureError(f"measure entries must be nonnegative, got {array.tolist()}")
        object.__setattr__(self, "weights", array)

    @classmethod
    def uniform(cls, r):
        return cls(np.full(r, 1.0 / r))

    @classmethod
    def unit(cls, r):
        """The counting measure mu(i) = 1."""
        return cls(np.ones(r))

    @property
    def r(self):
        return self.weights.size

    @property
    def alphabet(self):
        return ColorAlphabet(self.r)

    @property
    def total(self):
        return float(self.weights.sum())

    @property
    def support(self):
        return self.weights > 0

    def is_probability(self, tol=PROBABILITY_TOL):
        return abs(self.total - 1.0) <= tol

    def allclose(self, other, atol=PROBABILITY_TOL):
        check_dimensions(self, other)
        return bool(np.allclose(self.weights, other.weights, rtol=0.0, atol=atol))

    def __len__(self):
        return self.r

    def __repr__(self):
        return f"MeasureVec({self.weights.tolist()})"


@dataclass(frozen=True, eq=False)
class FuncVec:
    """A real function on the colors; also a linear functional via the pairing."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values, "function"))

    @classmethod
    def constant(cls, r, value):
        return cls(np.full(r, float(value)))

    @property
    def r(self):
        return self.values.size

    def __len__(self):
        return self.r

    def __repr__(self):
        return f"FuncVec({self.values.tolist()})"


@dataclass(frozen=True, eq=False)
class TVNeighborhood:
    """Open total-variation ball around a probability measure."""

    center: MeasureVec
    radius: float

    def __post_init__(self):
        if not self.center.is_probability():
            raise InvalidMeasureError("neighborhood center must be a probability measure")
        if not self.radius > 0:
            raise InvalidMeasureError(f"neighborhood radius must be positive, got {self.radius}")

    @property
    def r(self):
        return self.center.r

    def contains(self, delta):
        return tv_contains(self, delta)


def _entries(vec):
    return vec.weights if isinstance(vec, MeasureVec) else vec.values


def check_dimensions(*vectors):
    sizes = {len(v) for v in vectors}
    if len(sizes) > 1:
        raise DimensionMismatchError(f"vectors over different alphabets: sizes {sorted(sizes)}")


def integrate(m, f):
    """Pairing m[f] = sum_i m(i) f(i)."""
    check_dimensions(m, f)
    return float(np.dot(_entries(m), _entries(f)))


def normalize(m):
    """Split m into its probability direction and its total mass c."""
    c = m.total
    if not c > 0:
        raise InvalidMeasureError("cannot normalize a measure with zero total mass")
    return MeasureVec(m.weights / c), c


def tv_distance(a, b):
    check_dimensions(a, b)
    return 0.5 * float(np.abs(_entries(a) - _entries(b)).sum())


def tv_distances(spectra, center):
    """Row-wise TV distance of a (k, r) array of spectra to one center."""
    return 0.5 * np.abs(np.asarray(spectra, dtype=float) - _entries(center)).sum(axis=-1)


def in_tv_ball(distances, radius):
    """Open-ball membership; distances within TV_BOUNDARY_TOL of the radius are outside."""
    return np.asarray(distances) < radius - TV_BOUNDARY_TOL


def tv_contains(nbhd, delta):
    return bool(in_tv_ball(tv_distance(delta, nbhd.center), nbhd.radius))
