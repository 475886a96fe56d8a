"""Synthetic classifier outputs and label-noise injection.

The generator draws a label from the class prior, adds ``signal_mu`` to that
class's logit, and softmaxes Gaussian logits.  ``signal_mu`` is the accuracy
knob: 0 gives chance-level predictions, large values give near-perfect ones.
Everything is keyed per sample through counter-based streams, so output is
bit-reproducible and independent of batch or worker partitioning.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _rng
from .core import (
    GeneralNoise,
    InvalidConfigError,
    LabeledSet,
    NoiseModel,
    UniformNoise,
    noise_matrix_of,
)

_STREAM_LABEL = 1
_STREAM_LOGIT = 2
_STREAM_FLIP = 3
_STREAM_REPLACE = 4


@dataclass(frozen=True)
class SynthConfig:
    k: int
    n: int
    class_prior: tuple[float, ...] | None = None
    signal_mu: float = 3.0
    logit_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise InvalidConfigError(f"k must be >= 2, got {self.k}")
        if self.n < 1:
            raise InvalidConfigError(f"n must be >= 1, got {self.n}")
        if self.logit_sigma <= 0:
            raise InvalidConfigError(f"logit_sigma must be > 0, got {self.logit_sigma}")
        if self.class_prior is not None:
            prior = np.asarray(self.class_prior, dtype=np.float64)
            if prior.shape != (self.k,) or np.any(prior < 0):
                raise InvalidConfigError("class_prior must be k nonnegative reals")
            if abs(prior.sum() - 1.0) > 1e-8:
                raise InvalidConfigError(f"class_prior sums to {prior.sum()!r}, not 1")
            object.__setattr__(self, "class_prior", tuple(prior))

    def prior_array(self) -> np.ndarray:
        if self.class_prior is None:
            return np.full(self.k, 1.0 / self.k)
        return np.asarray(self.class_prior, dtype=np.float64)


def generate(config: SynthConfig) -> LabeledSet:
    """Generate probability rows with clean labels, deterministically."""
    n, k = config.n, config.k
    prior = config.prior_array()
    cum = np.cumsum(prior)
    cum[-1] = 1.0
    u = _rng.uniforms(config.seed, _STREAM_LABEL, np.arange(n))
    labels = np.searchsorted(cum, u, side="right").astype(np.int64)
    np.clip(labels, 0, k - 1, out=labels)

    rows = np.arange(n)[:, None]
    cols = np.arange(k)[None, :]
    logits = config.logit_sigma * _rng.normals(config.seed, _STREAM_LOGIT, rows, cols)
    logits[np.arange(n), labels] += config.signal_mu

    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    return LabeledSet.from_arrays(probs, labels)


def inject_noise(labels, noise: NoiseModel, k: int | None = None, seed: int = 0) -> np.ndarray:
    """Corrupt labels according to the noise model, deterministically.

    Uniform noise resamples the label uniformly over all k classes with
    probability epsilon (the resample may reproduce the original label).
    General noise draws the observed label
    from the transition-matrix row of the true label.
    """
    y = np.asarray(labels, dtype=np.int64)
    n = y.shape[0]
    idx = np.arange(n)
    if isinstance(noise, UniformNoise):
        if k is None:
            raise InvalidConfigError("k is required for uniform noise")
        flip = _rng.uniforms(seed, _STREAM_FLIP, idx) < noise.epsilon
        repl = np.minimum(
            (_rng.uniforms(seed, _STREAM_REPLACE, idx) * k).astype(np.int64), k - 1
        )
        return np.where(flip, repl, y)
    if isinstance(noise, GeneralNoise):
        p = noise_matrix_of(noise, k)
        cum = np.cumsum(p, axis=1)
        cum[:, -1] = 1.0
        u = _rng.uniforms(seed, _STREAM_REPLACE, idx)
        noisy = (cum[y] < u[:, None]).sum(axis=1).astype(np.int64)
        return np.minimum(noisy, p.shape[0] - 1)
    raise InvalidConfigError(f"unsupported noise model: {noise!r}")


def empirical_transition_matrix(clean_labels, noisy_labels, k: int) -> np.ndarray:
    """Row-normalized confusion counts between clean and noisy labels."""
    y = np.asarray(clean_labels, dtype=np.int64)
    z = np.asarray(noisy_labels, dtype=np.int64)
    counts = np.zeros((k, k))
    np.add.at(counts, (y, z), 1.0)
    row = counts.sum(axis=1, keepdims=True)
    row[row == 0] = 1.0
    return counts / row
