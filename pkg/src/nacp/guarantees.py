"""Finite-sample correction terms and level adjustment.

Three corrections are computed, all additive on the target level: the
noise-aware DKW-based term (independent of the number of classes), and the
two class-count-sensitive baselines referred to as ACNL and CRCP.  Raising
the search level to 1 - alpha + delta buys a with-high-probability coverage
guarantee; when the adjusted level reaches 1 the prediction set must contain
every class and the result is flagged trivial rather than treated as an
error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import (
    GeneralNoise,
    InvalidArgumentError,
    NoiseModel,
    UniformNoise,
    ZeroClassCountError,
    ZeroMarginalError,
    noise_matrix_of,
    CoverageSpec,
)
from .calibrate import invert_noise_matrix

NACP = "NACP"
ACNL = "ACNL"
CRCP = "CRCP"

DEFAULT_MC_SAMPLES = 100_000
_MC_BLOCK = 128

COUNTS_OBSERVED = "observed"
COUNTS_EXPECTED = "expected"


@dataclass(frozen=True)
class CorrectionTerm:
    """A finite-sample correction delta together with the inputs behind it."""

    method: str
    delta_value: float
    n: int
    k: int | None = None
    epsilon: float | None = None
    delta_conf: float | None = None
    h: float | None = None
    mc_samples: int | None = None
    c_n: float | None = None
    c_n_stderr: float | None = None
    n_star: int | None = None
    counts_mode: str | None = None


@dataclass(frozen=True)
class AdjustedLevel:
    """Target level after adding a correction; trivial when it reaches 1."""

    level: float
    trivial_set: bool


@dataclass(frozen=True)
class ClassMarginals:
    """Clean (rho) and noisy (rho_tilde) class priors."""

    rho: np.ndarray
    rho_tilde: np.ndarray

    def __post_init__(self):
        for name, v in (("rho", self.rho), ("rho_tilde", self.rho_tilde)):
            arr = np.asarray(v, dtype=np.float64)
            if arr.ndim != 1 or np.any(arr < 0):
                raise InvalidArgumentError(f"{name} must be a nonnegative vector")
            if abs(arr.sum() - 1.0) > 1e-8:
                raise InvalidArgumentError(f"{name} must sum to 1, got {arr.sum()!r}")
            object.__setattr__(self, name, arr)
        if self.rho.shape != self.rho_tilde.shape:
            raise InvalidArgumentError("rho and rho_tilde must have equal length")

    @classmethod
    def from_prior(cls, rho, noise_matrix) -> "ClassMarginals":
        """Derive the noisy prior rho_tilde = rho @ P from the clean prior."""
        rho = np.asarray(rho, dtype=np.float64)
        p = np.asarray(noise_matrix, dtype=np.float64)
        return cls(rho=rho, rho_tilde=rho @ p)

    @classmethod
    def uniform(cls, k: int, noise_matrix=None) -> "ClassMarginals":
        rho = np.full(k, 1.0 / k)
        if noise_matrix is None:
            return cls(rho=rho, rho_tilde=rho.copy())
        return cls.from_prior(rho, noise_matrix)


def delta_nacp(n: int, epsilon: float, delta_conf: float) -> CorrectionTerm:
    """DKW-based correction sqrt(log(4/delta) / (2 n h^2)), h = (1-eps)/(1+eps).

    Exact closed form; does not depend on the number of classes.
    """
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")
    if not 0.0 <= epsilon < 1.0:
        raise InvalidArgumentError(f"epsilon must be in [0, 1), got {epsilon}")
    if not 0.0 < delta_conf < 1.0:
        raise InvalidArgumentError(f"delta_conf must be in (0, 1), got {delta_conf}")
    h = (1.0 - epsilon) / (1.0 + epsilon)
    value = math.sqrt(math.log(4.0 / delta_conf) / (2.0 * n * h * h))
    return CorrectionTerm(
        method=NACP,
        delta_value=value,
        n=n,
        epsilon=epsilon,
        delta_conf=delta_conf,
        h=h,
    )


@lru_cache(maxsize=32)
def _c_n_mc(n: int, mc_samples: int, seed: int) -> tuple[float, float]:
    """Monte Carlo mean and standard error of max_i (i/n - u_(i)).

    Uniform order statistics come from normalized exponential spacings, so no
    per-replication sort is needed.  Replications are generated in fixed-size
    blocks with independent seed-derived substreams and reduced in block
    order, which keeps the result identical however blocks are scheduled.
    """
    grid = np.arange(1, n + 1) / n
    total = 0.0
    total_sq = 0.0
    done = 0
    block_idx = 0
    while done < mc_samples:
        m = min(_MC_BLOCK, mc_samples - done)
        rng = np.random.default_rng([seed, 0x0C0FFEE, block_idx])
        spacing = rng.standard_exponential((m, n + 1))
        cum = np.cumsum(spacing, axis=1)
        u_sorted = cum[:, :n] / cum[:, -1:]
        d = (grid - u_sorted).max(axis=1)
        total += float(d.sum())
        total_sq += float((d * d).sum())
        done += m
        block_idx += 1
    mean = total / mc_samples
    var = max(total_sq / mc_samples - mean * mean, 0.0)
    stderr = math.sqrt(var / mc_samples)
    return mean, stderr


def c_n_estimate(n: int, mc_samples: int = DEFAULT_MC_SAMPLES, seed: int = 0) -> float:
    """Monte Carlo estimate of E[max_i (i/n - u_(i))] over sorted uniforms."""
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")
    if mc_samples < 1:
        raise InvalidArgumentError(f"mc_samples must be >= 1, got {mc_samples}")
    return _c_n_mc(n, mc_samples, seed)[0]


def backward_noise_matrix(noise_matrix, rho) -> tuple[np.ndarray, np.ndarray]:
    """Bayes-flip a forward transition matrix.

    Given P[i, j] = p(noisy=j | true=i) and the clean prior rho, returns
    (M, rho_tilde) with M[i, j] = p(true=j | noisy=i).
    """
    p = np.asarray(noise_matrix, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    rho_tilde = rho @ p
    if np.any(rho_tilde <= 0.0):
        raise ZeroMarginalError(
            "a noisy class has zero marginal probability; the backward "
            "matrix is undefined"
        )
    m = (p.T * rho[None, :]) / rho_tilde[:, None]
    return m, rho_tilde


def _resolve_marginals(k: int, p: np.ndarray, marginals: ClassMarginals | None) -> ClassMarginals:
    if marginals is None:
        return ClassMarginals.uniform(k, p)
    if marginals.rho.shape[0] != k:
        raise InvalidArgumentError(
            f"marginals have {marginals.rho.shape[0]} classes, expected {k}"
        )
    return marginals


def _n_star(
    n: int, rho_tilde: np.ndarray, noisy_counts
) -> tuple[int, str]:
    if noisy_counts is not None:
        counts = np.asarray(noisy_counts, dtype=np.int64)
        if counts.shape[0] != rho_tilde.shape[0]:
            raise InvalidArgumentError("noisy_counts length must equal k")
        n_star = int(counts.min())
        mode = COUNTS_OBSERVED
    else:
        n_star = int(math.floor(n * float(rho_tilde.min()) + 1e-9))
        mode = COUNTS_EXPECTED
    if n_star < 1:
        raise ZeroClassCountError(
            "least common noisy class has no samples (n_star < 1)"
        )
    return n_star, mode


def delta_acnl(
    n: int,
    k: int,
    noise: NoiseModel | np.ndarray,
    marginals: ClassMarginals | None = None,
    noisy_counts=None,
    mc_samples: int = DEFAULT_MC_SAMPLES,
    seed: int = 0,
) -> CorrectionTerm:
    """Class-count-sensitive correction built on the backward-matrix inverse.

    delta = c(n) + (2 max_i sum_{l != i} |V[i, l]| + sum_i |rho_i - rho~_i|)
                   / sqrt(n_star)
                   * min(k^2 sqrt(pi/2),
                         1/sqrt(n_star) + sqrt((log(2 k^2) + log(n_star)) / 2))

    with V the inverse of the backward noise matrix and n_star the size of
    the least common noisy class (observed counts when given, expected counts
    floor(n * min rho~) otherwise; the mode is recorded on the result).
    """
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")
    p = _as_matrix(noise, k)
    marg = _resolve_marginals(k, p, marginals)
    backward, rho_tilde = backward_noise_matrix(p, marg.rho)
    v = invert_noise_matrix(backward).p_inverse
    off_sums = np.abs(v).sum(axis=1) - np.abs(np.diag(v))
    lead = 2.0 * float(off_sums.max()) + float(np.abs(marg.rho - marg.rho_tilde).sum())
    n_star, mode = _n_star(n, rho_tilde, noisy_counts)
    cap = min(
        k * k * math.sqrt(math.pi / 2.0),
        1.0 / math.sqrt(n_star)
        + math.sqrt((math.log(2.0 * k * k) + math.log(n_star)) / 2.0),
    )
    c_n, c_se = _c_n_mc(n, mc_samples, seed)
    value = c_n + lead / math.sqrt(n_star) * cap
    return CorrectionTerm(
        method=ACNL,
        delta_value=value,
        n=n,
        k=k,
        epsilon=_epsilon_of(noise),
        mc_samples=mc_samples,
        c_n=c_n,
        c_n_stderr=c_se,
        n_star=n_star,
        counts_mode=mode,
    )


def delta_crcp(
    n: int,
    k: int,
    noise: NoiseModel | np.ndarray,
    marginals: ClassMarginals | None = None,
) -> CorrectionTerm:
    """Class-count-sensitive correction from backward-inverse weights.

    With Q the backward matrix p(true | noisy) and W = Q^-1:

        w1_i  = W[i, i] * rho_i - rho~_i
        w2_ij = rho_i * W[j, i]
        b(n, j) = (1 - rho~_j)^n + sqrt(pi / (n * rho~_j))
        delta = sum_i ( |w1_i| b(n, i) + sum_{j != i} |w2_ij| b(n, j) )

    Fully deterministic: repeated calls are bit-identical.
    """
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")
    p = _as_matrix(noise, k)
    marg = _resolve_marginals(k, p, marginals)
    backward, rho_tilde = backward_noise_matrix(p, marg.rho)
    if np.any(rho_tilde <= 0.0):
        raise ZeroMarginalError("rho_tilde has a zero entry")
    w = invert_noise_matrix(backward).p_inverse
    b = (1.0 - rho_tilde) ** n + np.sqrt(math.pi / (n * rho_tilde))
    w1 = np.diag(w) * marg.rho - rho_tilde
    w2 = marg.rho[:, None] * w.T  # w2[i, j] = rho_i * W[j, i]
    off = np.abs(w2) * b[None, :]
    value = float(np.abs(w1) @ b + off.sum() - np.trace(off))
    return CorrectionTerm(
        method=CRCP,
        delta_value=value,
        n=n,
        k=k,
        epsilon=_epsilon_of(noise),
    )


def apply_correction(spec: CoverageSpec, term: CorrectionTerm) -> AdjustedLevel:
    """Adjusted search level 1 - alpha + delta; trivial-set flag at >= 1."""
    level = 1.0 - spec.alpha + term.delta_value
    return AdjustedLevel(level=level, trivial_set=level >= 1.0)


def _as_matrix(noise, k: int) -> np.ndarray:
    if isinstance(noise, (UniformNoise, GeneralNoise)):
        return noise_matrix_of(noise, k)
    mat = np.asarray(noise, dtype=np.float64)
    if mat.shape != (k, k):
        raise InvalidArgumentError(f"noise matrix shape {mat.shape}, expected ({k}, {k})")
    return mat


def _epsilon_of(noise) -> float | None:
    return noise.epsilon if isinstance(noise, UniformNoise) else None
