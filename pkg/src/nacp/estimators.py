"""Scikit-learn style estimators wrapping the calibration routines.

``fit`` consumes classifier probabilities plus calibration labels and stores
the calibrated threshold; ``predict`` returns a boolean (n, k) membership
mask of the prediction sets, so the estimators compose with standard tooling
(``get_params`` / ``set_params`` / ``clone``).  The input is always a
probability matrix, not raw features: these estimators sit downstream of any
fitted classifier.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .calibrate import (
    DEFAULT_GRID_BUDGET,
    DEFAULT_GRID_POINTS,
    METHOD_NACP_GENERAL,
    METHOD_NACP_UNIFORM,
    nacp_general,
    nacp_uniform,
    standard_cp,
    trivial_result,
)
from .core import (
    InvalidArgumentError,
    LabeledSet,
    uniform_noise_as_matrix,
    validate_probability_matrix,
)
from .guarantees import (
    DEFAULT_MC_SAMPLES,
    ClassMarginals,
    CorrectionTerm,
    delta_acnl,
    delta_crcp,
    delta_nacp,
)
from .scores import ScoreParams, label_scores, prediction_mask


class _ConformalSetPredictor(BaseEstimator):
    """Shared prediction-side behavior; subclasses implement fit."""

    def _score_params(self) -> ScoreParams:
        return ScoreParams(
            kind=self.score,
            raps_a=self.raps_a,
            raps_b=self.raps_b,
            randomized=self.randomized,
            seed=self.seed,
        )

    def _check_fitted(self):
        if not hasattr(self, "threshold_"):
            raise NotFittedError(
                f"this {type(self).__name__} instance is not fitted yet; "
                "call fit() first"
            )

    def predict(self, probabilities) -> np.ndarray:
        """Boolean (n, k) prediction-set membership at the fitted threshold."""
        self._check_fitted()
        pm = validate_probability_matrix(probabilities)
        if pm.n_classes != self.n_classes_:
            raise InvalidArgumentError(
                f"fitted on {self.n_classes_} classes, got {pm.n_classes}"
            )
        return prediction_mask(pm, self.threshold_, self._score_params())

    def prediction_sets(self, probabilities) -> list[np.ndarray]:
        """Prediction sets as a list of sorted class-index arrays."""
        mask = self.predict(probabilities)
        return [np.flatnonzero(row) for row in mask]


class SplitConformalClassifier(_ConformalSetPredictor):
    """Standard split conformal prediction on trusted calibration labels.

    Parameters mirror the conformity-score configuration; ``alpha`` is the
    nominal miscoverage level.
    """

    def __init__(
        self,
        alpha: float = 0.1,
        score: str = "aps",
        raps_a: float = 0.1,
        raps_b: int = 1,
        randomized: bool = False,
        seed: int = 0,
    ):
        self.alpha = alpha
        self.score = score
        self.raps_a = raps_a
        self.raps_b = raps_b
        self.randomized = randomized
        self.seed = seed

    def fit(self, probabilities, labels):
        calib = LabeledSet.from_arrays(probabilities, labels)
        params = self._score_params()
        scores = label_scores(calib.probs, calib.labels, params)
        self.result_ = standard_cp(scores, self.alpha)
        self.threshold_ = self.result_.q
        self.n_classes_ = calib.n_classes
        return self


class NoiseAwareConformalClassifier(_ConformalSetPredictor):
    """Conformal prediction calibrated on noisy labels with known noise.

    Specify the noise either as a uniform level ``epsilon`` or as a full
    ``noise_matrix`` (mutually exclusive).  ``correction`` optionally raises
    the search level by a finite-sample term ("nacp", "acnl" or "crcp");
    when the adjusted level reaches 1 the estimator marks itself trivial and
    predicts all-classes sets.
    """

    def __init__(
        self,
        alpha: float = 0.1,
        epsilon: float = 0.0,
        noise_matrix=None,
        correction: str | None = None,
        delta_conf: float = 0.001,
        score: str = "aps",
        raps_a: float = 0.1,
        raps_b: int = 1,
        randomized: bool = False,
        seed: int = 0,
        class_prior=None,
        mc_samples: int = DEFAULT_MC_SAMPLES,
        largest_solution: bool = False,
        grid_budget: int = DEFAULT_GRID_BUDGET,
        grid_points: int = DEFAULT_GRID_POINTS,
    ):
        self.alpha = alpha
        self.epsilon = epsilon
        self.noise_matrix = noise_matrix
        self.correction = correction
        self.delta_conf = delta_conf
        self.score = score
        self.raps_a = raps_a
        self.raps_b = raps_b
        self.randomized = randomized
        self.seed = seed
        self.class_prior = class_prior
        self.mc_samples = mc_samples
        self.largest_solution = largest_solution
        self.grid_budget = grid_budget
        self.grid_points = grid_points

    def _correction_term(self, n: int, k: int, p_matrix) -> CorrectionTerm | None:
        if self.correction is None:
            return None
        kind = str(self.correction).lower()
        if kind == "nacp":
            if self.noise_matrix is not None:
                raise InvalidArgumentError(
                    "the nacp correction is defined for uniform noise only"
                )
            return delta_nacp(n, self.epsilon, self.delta_conf)
        marginals = None
        if self.class_prior is not None:
            marginals = ClassMarginals.from_prior(self.class_prior, p_matrix)
        if kind == "acnl":
            return delta_acnl(
                n, k, p_matrix, marginals, mc_samples=self.mc_samples, seed=self.seed
            )
        if kind == "crcp":
            return delta_crcp(n, k, p_matrix, marginals)
        raise InvalidArgumentError(
            f"unknown correction {self.correction!r}; expected nacp, acnl or crcp"
        )

    def fit(self, probabilities, noisy_labels):
        if self.noise_matrix is not None and self.epsilon:
            raise InvalidArgumentError(
                "specify either epsilon or noise_matrix, not both"
            )
        calib = LabeledSet.from_arrays(probabilities, noisy_labels)
        params = self._score_params()
        uniform = self.noise_matrix is None
        p_matrix = None
        if not uniform:
            p_matrix = np.asarray(self.noise_matrix, dtype=np.float64)
        elif self.correction in ("acnl", "crcp"):
            p_matrix = uniform_noise_as_matrix(self.epsilon, calib.n_classes).matrix

        term = self._correction_term(calib.n_rows, calib.n_classes, p_matrix)
        self.correction_ = term
        delta = term.delta_value if term is not None else None
        target = 1.0 - self.alpha + (delta or 0.0)

        if target >= 1.0:
            method = METHOD_NACP_UNIFORM if uniform else METHOD_NACP_GENERAL
            self.result_ = trivial_result(method, target, delta)
        elif uniform:
            self.result_ = nacp_uniform(
                calib,
                self.epsilon,
                self.alpha,
                params,
                target_level=target,
                largest_solution=self.largest_solution,
                grid_budget=self.grid_budget,
                grid_points=self.grid_points,
                delta=delta,
            )
        else:
            self.result_ = nacp_general(
                calib,
                p_matrix,
                self.alpha,
                params,
                target_level=target,
                largest_solution=self.largest_solution,
                grid_budget=self.grid_budget,
                grid_points=self.grid_points,
                delta=delta,
            )
        self.threshold_ = self.result_.q
        self.trivial_set_ = self.result_.trivial_set
        self.n_classes_ = calib.n_classes
        return self
