import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from nacp.core import InvalidArgumentError, UniformNoise
from nacp.estimators import NoiseAwareConformalClassifier, SplitConformalClassifier
from nacp.scores import ScoreParams, prediction_set
from nacp.synth import SynthConfig, generate, inject_noise


@pytest.fixture(scope="module")
def data():
    clean = generate(SynthConfig(k=8, n=1500, signal_mu=2.5, seed=101))
    noisy = inject_noise(clean.labels, UniformNoise(0.25), k=8, seed=102)
    return clean.probs.values, clean.labels, noisy


class TestSplitConformalClassifier:
    def test_fit_predict_shapes(self, data):
        probs, clean, _ = data
        est = SplitConformalClassifier(alpha=0.1, score="aps").fit(probs[:1000], clean[:1000])
        mask = est.predict(probs[1000:])
        assert mask.shape == (500, 8)
        assert mask.dtype == bool
        sets = est.prediction_sets(probs[1000:])
        assert len(sets) == 500
        assert all(np.array_equal(np.flatnonzero(m), s) for m, s in zip(mask, sets))

    def test_coverage_on_holdout(self, data):
        probs, clean, _ = data
        est = SplitConformalClassifier(alpha=0.1, score="hps").fit(probs[:1000], clean[:1000])
        mask = est.predict(probs[1000:])
        cov = mask[np.arange(500), clean[1000:]].mean()
        assert 0.84 <= cov <= 0.96

    def test_not_fitted(self, data):
        probs, _, _ = data
        with pytest.raises(NotFittedError):
            SplitConformalClassifier().predict(probs)

    def test_get_params_clone_roundtrip(self):
        est = SplitConformalClassifier(alpha=0.2, score="raps", raps_a=0.3, raps_b=2)
        p = est.get_params()
        assert p["alpha"] == 0.2 and p["score"] == "raps"
        cloned = clone(est)
        assert cloned.get_params() == p
        est.set_params(alpha=0.05)
        assert est.alpha == 0.05


class TestNoiseAwareConformalClassifier:
    def test_zero_noise_matches_standard(self, data):
        probs, clean, _ = data
        a = SplitConformalClassifier(alpha=0.1, score="aps").fit(probs, clean)
        b = NoiseAwareConformalClassifier(alpha=0.1, epsilon=0.0, score="aps").fit(probs, clean)
        assert a.threshold_ == b.threshold_

    def test_noise_aware_restores_coverage(self, data):
        probs, clean, noisy = data
        naive = SplitConformalClassifier(alpha=0.1, score="aps").fit(probs[:1000], noisy[:1000])
        aware = NoiseAwareConformalClassifier(alpha=0.1, epsilon=0.25, score="aps").fit(
            probs[:1000], noisy[:1000]
        )
        test = np.arange(1000, 1500)
        cov_naive = naive.predict(probs[test])[np.arange(500), clean[test]].mean()
        cov_aware = aware.predict(probs[test])[np.arange(500), clean[test]].mean()
        assert aware.threshold_ < naive.threshold_
        assert 0.84 <= cov_aware <= 0.97
        assert cov_naive > cov_aware

    def test_epsilon_and_matrix_mutually_exclusive(self, data):
        probs, _, noisy = data
        est = NoiseAwareConformalClassifier(epsilon=0.1, noise_matrix=np.eye(8))
        with pytest.raises(InvalidArgumentError):
            est.fit(probs, noisy)

    def test_general_matrix_path(self, data):
        probs, _, noisy = data
        from nacp.core import uniform_noise_as_matrix

        p = uniform_noise_as_matrix(0.25, 8).matrix
        uni = NoiseAwareConformalClassifier(alpha=0.1, epsilon=0.25).fit(probs, noisy)
        gen = NoiseAwareConformalClassifier(alpha=0.1, noise_matrix=p).fit(probs, noisy)
        assert uni.threshold_ == pytest.approx(gen.threshold_, abs=1e-12)

    def test_nacp_correction_raises_threshold(self, data):
        probs, _, noisy = data
        plain = NoiseAwareConformalClassifier(alpha=0.1, epsilon=0.25).fit(probs, noisy)
        corrected = NoiseAwareConformalClassifier(
            alpha=0.1, epsilon=0.25, correction="nacp"
        ).fit(probs, noisy)
        assert corrected.threshold_ >= plain.threshold_
        assert corrected.correction_.method == "NACP"
        assert not corrected.trivial_set_

    def test_trivial_set_with_oversized_correction(self):
        clean = generate(SynthConfig(k=40, n=400, signal_mu=3.0, seed=7))
        noisy = inject_noise(clean.labels, UniformNoise(0.3), k=40, seed=8)
        est = NoiseAwareConformalClassifier(
            alpha=0.1, epsilon=0.3, correction="crcp"
        ).fit(clean.probs.values, noisy)
        assert est.trivial_set_
        mask = est.predict(clean.probs.values)
        assert mask.all()

    def test_predict_matches_prediction_set_function(self, data):
        probs, _, noisy = data
        est = NoiseAwareConformalClassifier(alpha=0.1, epsilon=0.25, score="hps").fit(
            probs, noisy
        )
        params = ScoreParams(kind="hps")
        sets = est.prediction_sets(probs[:5])
        for i in range(5):
            expected = prediction_set(probs[i], est.threshold_, params)
            np.testing.assert_array_equal(sets[i], expected)

    def test_unknown_correction(self, data):
        probs, _, noisy = data
        with pytest.raises(InvalidArgumentError):
            NoiseAwareConformalClassifier(correction="dkw").fit(probs, noisy)

    def test_class_count_mismatch_at_predict(self, data):
        probs, _, noisy = data
        est = NoiseAwareConformalClassifier(alpha=0.1, epsilon=0.25).fit(probs, noisy)
        with pytest.raises(InvalidArgumentError):
            est.predict(np.full((3, 5), 0.2))

    def test_clone_preserves_params(self):
        est = NoiseAwareConformalClassifier(
            alpha=0.15, epsilon=0.3, correction="acnl", mc_samples=5000
        )
        assert clone(est).get_params() == est.get_params()
