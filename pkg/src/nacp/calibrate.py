"""Threshold calibration: standard split CP and noise-aware search.

The noise-aware path estimates the clean-label score CDF from noisy data.
With uniform noise of level epsilon,

    clean_cdf(q) = (noisy_cdf(q) - epsilon * random_cdf(q)) / (1 - epsilon)

where noisy_cdf is the empirical CDF of the observed-label scores and
random_cdf(q) is the mean fraction of classes inside the prediction set at q.
The difference of two monotone estimates need not be monotone, so the
threshold is found by scanning candidate breakpoints in ascending order
instead of bisecting.  For a general invertible transition matrix P the
estimate generalizes to a P-inverse-weighted empirical CDF of all class
scores, which reduces exactly to the uniform formula when P is uniform.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .core import (
    EmptyScoreListError,
    EpsilonOutOfRangeError,
    IllConditionedWarning,
    InvalidArgumentError,
    LabeledSet,
    SingularMatrixError,
    TargetLevelUnreachableError,
)
from .scores import ScoreParams, score_matrix

METHOD_STANDARD = "StandardCP"
METHOD_NOISY = "NoisyCP"
METHOD_NACP_UNIFORM = "NACP_Uniform"
METHOD_NACP_GENERAL = "NACP_General"

GRID_EXACT = "exact"
GRID_UNIFORM = "uniform"

#: Above this many candidate class scores, fall back to a uniform grid.
DEFAULT_GRID_BUDGET = 10_000_000
#: Resolution of the fallback uniform grid.
DEFAULT_GRID_POINTS = 10_000

_SINGULAR_PIVOT = 1e-12
_CONDITION_LIMIT = 1e10


@dataclass(frozen=True)
class CalibrationCurve:
    """Empirical CDF estimates evaluated at sorted candidate thresholds."""

    breakpoints: np.ndarray
    noisy_cdf: np.ndarray
    random_cdf: np.ndarray
    clean_cdf: np.ndarray


@dataclass(frozen=True)
class ThresholdResult:
    """A calibrated threshold and the search evidence behind it."""

    q: float
    q1: float
    q2: float
    achieved_fc: float
    method: str
    target_level: float
    trivial_set: bool = False
    outside_bracket: bool = False
    breakpoint_count: int = 0
    grid: str = GRID_EXACT
    delta: float | None = None


@dataclass(frozen=True)
class InvertedNoise:
    """Inverse of a noise transition matrix with a 1-norm condition estimate."""

    p_inverse: np.ndarray = field(repr=False)
    condition_estimate: float = np.nan


def empirical_quantile(scores, level: float) -> float:
    """The ceil(n * level)-th order statistic, with rank clamped to [1, n]."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise EmptyScoreListError("cannot take a quantile of an empty score list")
    if not 0.0 < level <= 1.0:
        raise InvalidArgumentError(f"quantile level must be in (0, 1], got {level}")
    return float(np.sort(s)[_quantile_rank(s.size, level) - 1])


def _quantile_rank(n: int, level: float) -> int:
    # small slack so levels like 0.9 * 1000 do not round up a rank spuriously
    rank = int(math.ceil(n * level - 1e-9))
    return min(max(rank, 1), n)


def standard_cp(scores, alpha: float, noisy: bool = False) -> ThresholdResult:
    """Plain split-CP threshold: the (1 - alpha) empirical quantile.

    ``noisy`` only relabels the result for reporting (same computation run on
    a noisy-labeled calibration set).
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    if not 0.0 < alpha < 1.0:
        raise InvalidArgumentError(f"alpha must be in (0, 1), got {alpha}")
    q = empirical_quantile(s, 1.0 - alpha)
    achieved = float(np.count_nonzero(s <= q)) / s.size
    return ThresholdResult(
        q=q,
        q1=q,
        q2=q,
        achieved_fc=achieved,
        method=METHOD_NOISY if noisy else METHOD_STANDARD,
        target_level=1.0 - alpha,
        breakpoint_count=int(s.size),
    )


def search_bounds(noisy_scores, alpha: float, epsilon: float, k: int) -> tuple[float, float]:
    """Bracket [q1, q2] that provably contains the noise-corrected threshold.

    q1 is the (1-alpha)(1-eps)/(1-eps/k) empirical quantile of the noisy
    scores and q2 the (1-alpha) + alpha*eps quantile.
    """
    if not 0.0 <= epsilon < 1.0:
        raise EpsilonOutOfRangeError(f"epsilon must be in [0, 1), got {epsilon}")
    level = 1.0 - alpha
    lo_level = level * (1.0 - epsilon) / (1.0 - epsilon / k)
    hi_level = level + alpha * epsilon
    return (
        empirical_quantile(noisy_scores, lo_level),
        empirical_quantile(noisy_scores, hi_level),
    )


def candidate_thresholds(
    class_scores: np.ndarray,
    grid_budget: int = DEFAULT_GRID_BUDGET,
    grid_points: int = DEFAULT_GRID_POINTS,
) -> tuple[np.ndarray, str]:
    """Sorted candidate thresholds: every distinct class score at desk scale,
    a uniform grid over the score range beyond ``grid_budget``."""
    flat = np.asarray(class_scores, dtype=np.float64).ravel()
    if flat.size <= grid_budget:
        return np.unique(flat), GRID_EXACT
    lo, hi = float(flat.min()), float(flat.max())
    return np.linspace(lo, hi, grid_points), GRID_UNIFORM


def _first_crossing(fc: np.ndarray, lo: int, hi: int, target: float, largest: bool) -> int | None:
    """Index of the chosen crossing of ``target`` within fc[lo:hi].

    Default rule: first index with fc >= target.  Largest-solution rule: first
    index of the trailing run that stays >= target through hi - 1.
    """
    window = fc[lo:hi]
    if window.size == 0:
        return None
    ok = window >= target
    if not ok.any():
        return None
    if largest:
        bad = np.flatnonzero(~ok)
        start = 0 if bad.size == 0 else int(bad[-1]) + 1
        if start >= window.size:
            return None
        return lo + start
    return lo + int(np.argmax(ok))


def _check_target(target: float) -> None:
    if target >= 1.0:
        raise TargetLevelUnreachableError(
            f"target level {target:.6f} >= 1; the prediction set would need "
            "every class (trivial set)"
        )
    if target <= 0.0:
        raise InvalidArgumentError(f"target level must be positive, got {target}")


class UniformSearch:
    """Reusable threshold search for one calibration set under uniform noise.

    Precomputes the candidate breakpoints and the three CDF estimates once, so
    several target levels can be queried cheaply (the evaluation harness asks
    for one threshold per method on the same split).
    """

    def __init__(
        self,
        noisy_scores: np.ndarray,
        class_scores: np.ndarray,
        epsilon: float,
        grid_budget: int = DEFAULT_GRID_BUDGET,
        grid_points: int = DEFAULT_GRID_POINTS,
    ):
        if not 0.0 <= epsilon < 1.0:
            raise EpsilonOutOfRangeError(f"epsilon must be in [0, 1), got {epsilon}")
        class_scores = np.asarray(class_scores, dtype=np.float64)
        if class_scores.ndim != 2:
            raise InvalidArgumentError("class_scores must be an (n, k) matrix")
        self.n, self.k = class_scores.shape
        self.epsilon = float(epsilon)
        self.sorted_noisy = np.sort(np.asarray(noisy_scores, dtype=np.float64).ravel())
        if self.sorted_noisy.size != self.n:
            raise InvalidArgumentError("noisy_scores length must match class_scores rows")
        self.breakpoints, self.grid = candidate_thresholds(
            class_scores, grid_budget, grid_points
        )
        sorted_all = np.sort(class_scores.ravel())
        self.noisy_cdf = (
            np.searchsorted(self.sorted_noisy, self.breakpoints, side="right") / self.n
        )
        self.random_cdf = (
            np.searchsorted(sorted_all, self.breakpoints, side="right")
            / (self.n * self.k)
        )
        if epsilon == 0.0:
            self.clean_cdf = self.noisy_cdf
        else:
            self.clean_cdf = (self.noisy_cdf - epsilon * self.random_cdf) / (
                1.0 - epsilon
            )
        self._sorted_all = sorted_all

    def curve(self) -> CalibrationCurve:
        return CalibrationCurve(
            self.breakpoints, self.noisy_cdf, self.random_cdf, self.clean_cdf
        )

    def bracket(self, target: float) -> tuple[float, float]:
        """[q1, q2] for an effective level ``target`` (alpha = 1 - target)."""
        return search_bounds(self.sorted_noisy, 1.0 - target, self.epsilon, self.k)

    def noisy_cdf_at(self, q: float) -> float:
        return float(np.searchsorted(self.sorted_noisy, q, side="right")) / self.n

    def random_cdf_at(self, q: float) -> float:
        return float(np.searchsorted(self._sorted_all, q, side="right")) / (
            self.n * self.k
        )

    def clean_cdf_at(self, q: float) -> float:
        if self.epsilon == 0.0:
            return self.noisy_cdf_at(q)
        return (self.noisy_cdf_at(q) - self.epsilon * self.random_cdf_at(q)) / (
            1.0 - self.epsilon
        )

    def threshold(
        self,
        target: float,
        largest_solution: bool = False,
        delta: float | None = None,
    ) -> ThresholdResult:
        """Smallest breakpoint whose clean-coverage estimate reaches target.

        The scan starts inside the quantile bracket for the effective level;
        if the crossing is not found there (possible only on a coarse uniform
        grid), it extends beyond q2 and the result is flagged.
        """
        _check_target(target)
        q1, q2 = self.bracket(target)
        bps, fc = self.breakpoints, self.clean_cdf
        lo = int(np.searchsorted(bps, q1, side="left"))
        hi = int(np.searchsorted(bps, q2, side="right"))
        outside = False
        idx = _first_crossing(fc, lo, hi, target, largest_solution)
        if idx is None:
            idx = _first_crossing(fc, lo, len(bps), target, largest_solution)
            outside = True
        if idx is None:
            tail_max = fc[lo:].max() if lo < len(bps) else float("nan")
            raise TargetLevelUnreachableError(
                f"no candidate threshold reaches estimated clean coverage "
                f"{target:.6f} (max over grid: {tail_max:.6f})"
            )
        return ThresholdResult(
            q=float(bps[idx]),
            q1=q1,
            q2=q2,
            achieved_fc=float(fc[idx]),
            method=METHOD_NACP_UNIFORM,
            target_level=target,
            outside_bracket=outside,
            breakpoint_count=int(bps.size),
            grid=self.grid,
            delta=delta,
        )


class GeneralSearch:
    """Threshold search under a general invertible noise matrix.

    Each (sample j, class l) pair contributes p_inverse[noisy_j, l] / n to the
    coverage estimate once the threshold passes its score, so the estimate is
    a weighted empirical CDF of all class scores; the k x k joint-count matrix
    is never materialized.
    """

    def __init__(
        self,
        class_scores: np.ndarray,
        noisy_labels: np.ndarray,
        p_inverse: np.ndarray,
        grid_budget: int = DEFAULT_GRID_BUDGET,
        grid_points: int = DEFAULT_GRID_POINTS,
    ):
        class_scores = np.asarray(class_scores, dtype=np.float64)
        self.n, self.k = class_scores.shape
        labels = np.asarray(noisy_labels, dtype=np.int64)
        weights = p_inverse[labels, :]
        flat = class_scores.ravel()
        order = np.argsort(flat, kind="stable")
        sorted_scores = flat[order]
        csum = np.cumsum(weights.ravel()[order]) / self.n
        if flat.size <= grid_budget:
            last_of_value = np.r_[sorted_scores[1:] != sorted_scores[:-1], True]
            self.breakpoints = sorted_scores[last_of_value]
            self.clean_cdf = csum[last_of_value]
            self.grid = GRID_EXACT
        else:
            self.breakpoints = np.linspace(
                sorted_scores[0], sorted_scores[-1], grid_points
            )
            pos = np.searchsorted(sorted_scores, self.breakpoints, side="right")
            self.clean_cdf = np.r_[0.0, csum][pos]
            self.grid = GRID_UNIFORM
        self._sorted_scores = sorted_scores
        self._csum = csum

    def clean_cdf_at(self, q: float) -> float:
        pos = int(np.searchsorted(self._sorted_scores, q, side="right"))
        return 0.0 if pos == 0 else float(self._csum[pos - 1])

    def threshold(
        self,
        target: float,
        largest_solution: bool = False,
        delta: float | None = None,
    ) -> ThresholdResult:
        _check_target(target)
        idx = _first_crossing(
            self.clean_cdf, 0, len(self.breakpoints), target, largest_solution
        )
        if idx is None:
            raise TargetLevelUnreachableError(
                f"no candidate threshold reaches estimated clean coverage {target:.6f}"
            )
        return ThresholdResult(
            q=float(self.breakpoints[idx]),
            q1=float(self.breakpoints[0]),
            q2=float(self.breakpoints[-1]),
            achieved_fc=float(self.clean_cdf[idx]),
            method=METHOD_NACP_GENERAL,
            target_level=target,
            breakpoint_count=int(self.breakpoints.size),
            grid=self.grid,
            delta=delta,
        )


def _calib_scores(calib: LabeledSet, params: ScoreParams) -> tuple[np.ndarray, np.ndarray]:
    s_matrix = score_matrix(calib.probs, params)
    return s_matrix, s_matrix[np.arange(calib.n_rows), calib.labels]


def build_curve(
    calib: LabeledSet,
    epsilon: float,
    params: ScoreParams,
    breakpoints=None,
    grid_budget: int = DEFAULT_GRID_BUDGET,
    grid_points: int = DEFAULT_GRID_POINTS,
) -> CalibrationCurve:
    """Evaluate the three CDF estimates over candidate thresholds.

    ``noisy_cdf`` and ``random_cdf`` are nondecreasing by construction;
    ``clean_cdf`` is their noise-corrected combination and may wiggle.
    """
    s_matrix, s_noisy = _calib_scores(calib, params)
    search = UniformSearch(s_noisy, s_matrix, epsilon, grid_budget, grid_points)
    if breakpoints is None:
        return search.curve()
    bps = np.asarray(breakpoints, dtype=np.float64)
    if np.any(np.diff(bps) < 0):
        raise InvalidArgumentError("breakpoints must be sorted ascending")
    fn = np.searchsorted(search.sorted_noisy, bps, side="right") / search.n
    fr = np.searchsorted(search._sorted_all, bps, side="right") / (search.n * search.k)
    fc = fn if epsilon == 0.0 else (fn - epsilon * fr) / (1.0 - epsilon)
    return CalibrationCurve(bps, fn, fr, fc)


def nacp_uniform(
    calib: LabeledSet,
    epsilon: float,
    alpha: float,
    params: ScoreParams,
    target_level: float | None = None,
    largest_solution: bool = False,
    grid_budget: int = DEFAULT_GRID_BUDGET,
    grid_points: int = DEFAULT_GRID_POINTS,
    delta: float | None = None,
) -> ThresholdResult:
    """Noise-aware threshold for uniform label noise.

    Finds the smallest candidate threshold whose estimated clean coverage
    reaches ``target_level`` (default 1 - alpha).  At epsilon = 0 this returns
    exactly the standard CP threshold.
    """
    target = (1.0 - alpha) if target_level is None else float(target_level)
    s_matrix, s_noisy = _calib_scores(calib, params)
    search = UniformSearch(s_noisy, s_matrix, epsilon, grid_budget, grid_points)
    return search.threshold(target, largest_solution, delta)


def nacp_general(
    calib: LabeledSet,
    noise_matrix,
    alpha: float,
    params: ScoreParams,
    target_level: float | None = None,
    largest_solution: bool = False,
    grid_budget: int = DEFAULT_GRID_BUDGET,
    grid_points: int = DEFAULT_GRID_POINTS,
    delta: float | None = None,
) -> ThresholdResult:
    """Noise-aware threshold for a general invertible transition matrix.

    Scans the same candidate grid as the uniform path for the smallest q whose
    weighted-CDF coverage estimate reaches the target.  No quantile bracket is
    available here; q1/q2 report the scanned range.
    """
    target = (1.0 - alpha) if target_level is None else float(target_level)
    p = np.asarray(noise_matrix, dtype=np.float64)
    if p.shape != (calib.n_classes, calib.n_classes):
        raise InvalidArgumentError(
            f"noise matrix shape {p.shape} does not match k={calib.n_classes}"
        )
    inv = invert_noise_matrix(p)
    s_matrix, _ = _calib_scores(calib, params)
    search = GeneralSearch(
        s_matrix, calib.labels, inv.p_inverse, grid_budget, grid_points
    )
    return search.threshold(target, largest_solution, delta)


def _is_uniform_matrix(p: np.ndarray) -> float | None:
    """Epsilon if p matches the uniform-noise pattern to ~1 ulp, else None."""
    k = p.shape[0]
    diag = np.diag(p)
    off_mask = ~np.eye(k, dtype=bool)
    off = p[off_mask]
    if off.size == 0:
        return None
    eps = float(off.mean() * k)
    if not 0.0 <= eps < 1.0:
        return None
    expected_off = eps / k
    expected_diag = 1.0 - eps * (k - 1) / k
    if np.allclose(off, expected_off, rtol=0.0, atol=1e-14) and np.allclose(
        diag, expected_diag, rtol=0.0, atol=1e-14
    ):
        return eps
    return None


def invert_noise_matrix(p) -> InvertedNoise:
    """Invert a transition matrix; closed form for the uniform pattern.

    Uniform noise has the rank-one-update inverse
    (1/(1-eps)) I - (eps/((1-eps) k)) * ones; anything else goes through an
    LU factorization with partial pivoting.  A pivot below 1e-12 raises
    :class:`SingularMatrixError`; a 1-norm condition estimate above 1e10
    emits :class:`IllConditionedWarning`.
    """
    mat = np.asarray(p, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise InvalidArgumentError(f"expected a square matrix, got {mat.shape}")
    k = mat.shape[0]
    eps = _is_uniform_matrix(mat)
    if eps is not None:
        inv = np.full((k, k), -eps / ((1.0 - eps) * k))
        np.fill_diagonal(inv, 1.0 / (1.0 - eps) - eps / ((1.0 - eps) * k))
    else:
        with warnings.catch_warnings():
            # pivot check below reports singularity as a typed error instead
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(mat, check_finite=True)
        if np.min(np.abs(np.diag(lu))) < _SINGULAR_PIVOT:
            raise SingularMatrixError(
                "noise matrix is singular to working precision (pivot < 1e-12)"
            )
        inv = scipy.linalg.lu_solve((lu, piv), np.eye(k))
    cond = float(np.linalg.norm(mat, 1) * np.linalg.norm(inv, 1))
    if cond > _CONDITION_LIMIT:
        warnings.warn(
            f"noise matrix condition estimate {cond:.3e} exceeds 1e10; "
            "corrected coverage estimates may be unstable",
            IllConditionedWarning,
            stacklevel=2,
        )
    return InvertedNoise(p_inverse=inv, condition_estimate=cond)


def trivial_result(method: str, target: float, delta: float | None = None) -> ThresholdResult:
    """Placeholder result for an adjusted level >= 1: all-classes sets."""
    return ThresholdResult(
        q=float("inf"),
        q1=float("nan"),
        q2=float("nan"),
        achieved_fc=1.0,
        method=method,
        target_level=target,
        trivial_set=True,
        breakpoint_count=0,
        delta=delta,
    )
