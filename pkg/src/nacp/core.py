"""Shared domain types, validation, and error taxonomy.

All types are immutable after construction (arrays are write-protected), so
instances can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

#: Maximum allowed deviation of a probability row sum from 1.
ROW_SUM_TOL = 1e-6
#: Row sums closer to 1 than this are left untouched (keeps validation idempotent).
_ROW_SUM_EXACT = 1e-12
#: Row-sum tolerance for noise transition matrices.
NOISE_ROW_SUM_TOL = 1e-8


class ConformalError(Exception):
    """Base class for all toolkit errors."""


class NegativeEntryError(ConformalError, ValueError):
    pass


class RowSumOutOfToleranceError(ConformalError, ValueError):
    pass


class TooFewClassesError(ConformalError, ValueError):
    pass


class EpsilonOutOfRangeError(ConformalError, ValueError):
    pass


class LabelOutOfRangeError(ConformalError, ValueError):
    pass


class EmptyScoreListError(ConformalError, ValueError):
    pass


class InvalidArgumentError(ConformalError, ValueError):
    pass


class InvalidConfigError(ConformalError, ValueError):
    pass


class ZeroClassCountError(ConformalError, ValueError):
    pass


class ZeroMarginalError(ConformalError, ValueError):
    pass


class SingularMatrixError(ConformalError, ArithmeticError):
    pass


class TargetLevelUnreachableError(ConformalError, ArithmeticError):
    pass


class IllConditionedWarning(UserWarning):
    """Noise matrix condition estimate exceeds the trust threshold."""


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ProbabilityMatrix:
    """Validated n x k row-stochastic classifier output.

    Construct through :func:`validate_probability_matrix`; the raw constructor
    performs no checks.
    """

    values: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_classes(self) -> int:
        return self.values.shape[1]


def validate_probability_matrix(raw) -> ProbabilityMatrix:
    """Validate (and, when needed, renormalize) classifier probabilities.

    Rows must be non-negative and sum to 1 within ``ROW_SUM_TOL``.  Rows that
    are within tolerance but not exact are divided by their sum; rows already
    summing to 1 within 1e-12 are returned bit-identically, which makes the
    function idempotent.
    """
    if isinstance(raw, ProbabilityMatrix):
        return raw
    values = np.asarray(raw, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] < 1:
        raise InvalidArgumentError(
            f"expected a 2-d array of probabilities, got shape {values.shape}"
        )
    if values.shape[1] < 2:
        raise TooFewClassesError(f"need at least 2 classes, got {values.shape[1]}")
    if not np.all(np.isfinite(values)):
        raise InvalidArgumentError("probabilities must be finite")
    if np.any(values < 0.0):
        i = int(np.argwhere(values < 0.0)[0, 0])
        raise NegativeEntryError(f"negative probability entry in row {i}")
    sums = values.sum(axis=1)
    off = np.abs(sums - 1.0)
    if np.any(off > ROW_SUM_TOL):
        i = int(np.argmax(off))
        raise RowSumOutOfToleranceError(
            f"row {i} sums to {sums[i]:.8f}, outside 1 +/- {ROW_SUM_TOL}"
        )
    needs_fix = off > _ROW_SUM_EXACT
    if np.any(needs_fix):
        values = values.copy()
        values[needs_fix] /= sums[needs_fix, None]
    return ProbabilityMatrix(_readonly(values))


@dataclass(frozen=True)
class LabeledSet:
    """A probability matrix paired with one integer label per row."""

    probs: ProbabilityMatrix
    labels: np.ndarray

    @classmethod
    def from_arrays(cls, probs, labels) -> "LabeledSet":
        pm = validate_probability_matrix(probs)
        lab = np.asarray(labels, dtype=np.int64)
        if lab.ndim != 1 or lab.shape[0] != pm.n_rows:
            raise InvalidArgumentError(
                f"labels must be a vector of length {pm.n_rows}, got shape {lab.shape}"
            )
        if lab.size and (lab.min() < 0 or lab.max() >= pm.n_classes):
            raise LabelOutOfRangeError(
                f"labels must lie in [0, {pm.n_classes}), got range "
                f"[{lab.min()}, {lab.max()}]"
            )
        return cls(pm, _readonly(lab))

    @property
    def n_rows(self) -> int:
        return self.probs.n_rows

    @property
    def n_classes(self) -> int:
        return self.probs.n_classes


@dataclass(frozen=True)
class CoverageSpec:
    """Target coverage level 1 - alpha with confidence parameter delta."""

    alpha: float
    delta: float = 0.001

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InvalidArgumentError(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0.0 < self.delta < 1.0:
            raise InvalidArgumentError(f"delta must be in (0, 1), got {self.delta}")


@dataclass(frozen=True)
class UniformNoise:
    """Label kept with probability 1 - epsilon, else resampled uniformly."""

    epsilon: float

    def __post_init__(self):
        if not 0.0 <= self.epsilon < 1.0:
            raise EpsilonOutOfRangeError(
                f"epsilon must be in [0, 1), got {self.epsilon}"
            )


@dataclass(frozen=True)
class GeneralNoise:
    """Known class-transition matrix: matrix[i, j] = p(observed j | true i)."""

    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 2:
            raise InvalidArgumentError(
                f"noise matrix must be square with k >= 2, got shape {m.shape}"
            )
        if np.any(m < 0.0):
            raise NegativeEntryError("noise matrix entries must be >= 0")
        sums = m.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > NOISE_ROW_SUM_TOL):
            i = int(np.argmax(np.abs(sums - 1.0)))
            raise RowSumOutOfToleranceError(
                f"noise matrix row {i} sums to {sums[i]:.10f}"
            )
        object.__setattr__(self, "matrix", _readonly(m))

    @property
    def n_classes(self) -> int:
        return self.matrix.shape[0]


NoiseModel = Union[UniformNoise, GeneralNoise]


def uniform_noise_as_matrix(epsilon: float, k: int) -> GeneralNoise:
    """Materialize uniform noise as its k x k transition matrix.

    Diagonal is 1 - epsilon + epsilon/k, off-diagonal epsilon/k.  Row sums are
    nudged to exactly 1 by folding any float residual into the last column.
    """
    if not 0.0 <= epsilon < 1.0:
        raise EpsilonOutOfRangeError(f"epsilon must be in [0, 1), got {epsilon}")
    if k < 2:
        raise TooFewClassesError(f"need at least 2 classes, got {k}")
    off = epsilon / k
    diag = 1.0 - epsilon * (k - 1) / k
    m = np.full((k, k), off, dtype=np.float64)
    np.fill_diagonal(m, diag)
    for _ in range(3):
        resid = 1.0 - m.sum(axis=1)
        if not np.any(resid):
            break
        m[:, -1] += resid
    return GeneralNoise(m)


def noise_matrix_of(noise: NoiseModel, k: int | None = None) -> np.ndarray:
    """Transition matrix of a noise model (k required for the uniform case)."""
    if isinstance(noise, GeneralNoise):
        if k is not None and noise.n_classes != k:
            raise InvalidArgumentError(
                f"noise matrix is {noise.n_classes}x{noise.n_classes}, expected k={k}"
            )
        return noise.matrix
    if k is None:
        raise InvalidArgumentError("k is required to materialize uniform noise")
    return uniform_noise_as_matrix(noise.epsilon, k).matrix
