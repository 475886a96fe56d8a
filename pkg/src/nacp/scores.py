"""Conformity scores (HPS / APS / RAPS) and prediction-set construction.

Scores are "larger is worse": the prediction set at threshold q collects every
class whose score is <= q.  APS sums all class probabilities at least as large
as the candidate's (ties included); RAPS adds a penalty a * max(0, rank - b)
on top.  The randomized APS variant replaces the candidate's own probability
with u * p_y for u ~ U[0,1], drawn from a counter-based stream keyed by
(seed, sample index, class index) so results are reproducible and independent
of evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _rng
from .core import InvalidArgumentError, LabelOutOfRangeError, validate_probability_matrix

HPS = "hps"
APS = "aps"
RAPS = "raps"
_KINDS = (HPS, APS, RAPS)

#: Stream id for the randomized-score uniform draws.
_STREAM_SCORE_U = 11


@dataclass(frozen=True)
class ScoreParams:
    """Configuration of a conformity score.

    ``raps_a`` / ``raps_b`` only apply to RAPS; ``randomized`` is defined for
    APS only and is rejected for the other kinds rather than guessed.
    """

    kind: str = APS
    raps_a: float = 0.1
    raps_b: int = 1
    randomized: bool = False
    seed: int = 0

    def __post_init__(self):
        kind = str(self.kind).lower()
        if kind not in _KINDS:
            raise InvalidArgumentError(f"unknown score kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.raps_a < 0:
            raise InvalidArgumentError("raps_a must be >= 0")
        if self.raps_b < 0:
            raise InvalidArgumentError("raps_b must be >= 0")
        if self.randomized and kind != APS:
            raise InvalidArgumentError(
                "randomized scores are defined for APS only"
            )


def _sorted_mass(values: np.ndarray):
    """Per-row cumulative machinery shared by APS-family scores.

    Returns (asc_order, inclusive_mass, strict_mass, n_at_least) where, for
    each entry v, inclusive_mass is the total probability of classes with
    p >= v (ties included), strict_mass the total with p > v, and n_at_least
    the count with p >= v.  All are aligned with the ascending sort order.
    """
    n, k = values.shape
    asc = np.argsort(values, axis=1, kind="stable")
    ps = np.take_along_axis(values, asc, axis=1)
    prefix = np.zeros((n, k + 1), dtype=np.float64)
    np.cumsum(ps, axis=1, out=prefix[:, 1:])
    total = prefix[:, -1:]

    idx = np.arange(k)
    first_of_group = np.concatenate(
        [np.ones((n, 1), dtype=bool), ps[:, 1:] != ps[:, :-1]], axis=1
    )
    start = np.maximum.accumulate(np.where(first_of_group, idx, 0), axis=1)
    last_of_group = np.concatenate(
        [ps[:, 1:] != ps[:, :-1], np.ones((n, 1), dtype=bool)], axis=1
    )
    end_raw = np.where(last_of_group, idx + 1, k)
    end = np.minimum.accumulate(end_raw[:, ::-1], axis=1)[:, ::-1]

    inclusive = total - np.take_along_axis(prefix, start, axis=1)
    strict = total - np.take_along_axis(prefix, end, axis=1)
    n_at_least = k - start
    return asc, inclusive, strict, n_at_least


def _unsort(sorted_vals: np.ndarray, asc: np.ndarray) -> np.ndarray:
    out = np.empty_like(sorted_vals)
    np.put_along_axis(out, asc, sorted_vals, axis=1)
    return out


def score_matrix(probs, params: ScoreParams, row_offset: int = 0) -> np.ndarray:
    """Score of every (sample, class) pair; shape (n, k).

    ``row_offset`` shifts the sample coordinate of the randomized stream; use
    it when scoring a slice of a larger dataset so draws match the full pass.
    """
    pm = validate_probability_matrix(probs)
    values = pm.values
    if params.kind == HPS:
        return 1.0 - values
    asc, inclusive, strict, n_at_least = _sorted_mass(values)
    if params.kind == RAPS:
        penalty = params.raps_a * np.maximum(0.0, n_at_least - params.raps_b)
        return _unsort(inclusive + penalty, asc)
    if params.randomized:
        n, k = values.shape
        rows = np.arange(row_offset, row_offset + n)[:, None]
        cols = np.arange(k)[None, :]
        u = _rng.uniforms(params.seed, _STREAM_SCORE_U, rows, cols)
        return _unsort(strict, asc) + u * values
    return _unsort(inclusive, asc)


def label_scores(probs, labels, params: ScoreParams, row_offset: int = 0) -> np.ndarray:
    """Score of each row at its own label; shape (n,)."""
    pm = validate_probability_matrix(probs)
    lab = np.asarray(labels, dtype=np.int64)
    if lab.size and (lab.min() < 0 or lab.max() >= pm.n_classes):
        raise LabelOutOfRangeError(
            f"labels must lie in [0, {pm.n_classes})"
        )
    s = score_matrix(pm, params, row_offset=row_offset)
    return s[np.arange(pm.n_rows), lab]


def score_all(prob_row, params: ScoreParams, sample_index: int = 0) -> np.ndarray:
    """Score vector over every candidate class for one probability row."""
    row = np.asarray(prob_row, dtype=np.float64).reshape(1, -1)
    return score_matrix(row, params, row_offset=sample_index)[0]


def score(prob_row, label: int, params: ScoreParams, sample_index: int = 0) -> float:
    """Conformity score of a single (row, label) pair."""
    vec = score_all(prob_row, params, sample_index=sample_index)
    if not 0 <= label < vec.shape[0]:
        raise LabelOutOfRangeError(f"label {label} out of range [0, {vec.shape[0]})")
    return float(vec[label])


def prediction_mask(probs, q: float, params: ScoreParams, row_offset: int = 0) -> np.ndarray:
    """Boolean (n, k) membership mask of the prediction sets at threshold q."""
    if not np.isfinite(q):
        if q > 0:  # +inf: every class is in the set
            pm = validate_probability_matrix(probs)
            return np.ones((pm.n_rows, pm.n_classes), dtype=bool)
        raise InvalidArgumentError("threshold must be finite or +inf")
    return score_matrix(probs, params, row_offset=row_offset) <= q


def prediction_set(prob_row, q: float, params: ScoreParams, sample_index: int = 0) -> np.ndarray:
    """Sorted class indices whose score is <= q for one row; may be empty."""
    row = np.asarray(prob_row, dtype=np.float64).reshape(1, -1)
    return np.flatnonzero(prediction_mask(row, q, params, row_offset=sample_index)[0])
