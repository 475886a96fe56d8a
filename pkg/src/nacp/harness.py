"""Repeated-split evaluation protocol and its metrics.

A pooled dataset (probabilities + clean labels + noisy labels) is split many
times into a calibration half and a test half.  Each requested method is
calibrated on the calibration half (noisy labels, except the clean-label
oracle) and scored on the test half against the clean labels; the report
carries the across-split mean and standard deviation of coverage and set
size.  Noisy-label coverage on the test half is reported as a diagnostic;
the headline coverage is always measured against clean labels.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .calibrate import (
    DEFAULT_GRID_BUDGET,
    DEFAULT_GRID_POINTS,
    GeneralSearch,
    METHOD_NACP_GENERAL,
    METHOD_NACP_UNIFORM,
    UniformSearch,
    invert_noise_matrix,
    standard_cp,
    trivial_result,
)
from .core import (
    InvalidArgumentError,
    InvalidConfigError,
    LabeledSet,
    NoiseModel,
    UniformNoise,
    noise_matrix_of,
    validate_probability_matrix,
)
from .guarantees import (
    DEFAULT_MC_SAMPLES,
    ClassMarginals,
    delta_acnl,
    delta_crcp,
    delta_nacp,
)
from .scores import ScoreParams, score_matrix

ORACLE = "Oracle"
NOISY_CP = "NoisyCP"
NRCP_NO_DELTA = "NRCP_noDelta"
NACP_ADJUSTED = "NACP"
ACNL_ADJUSTED = "ACNL_adjusted"
CRCP_ADJUSTED = "CRCP_adjusted"
ALL_METHODS = (
    ORACLE,
    NOISY_CP,
    NRCP_NO_DELTA,
    NACP_ADJUSTED,
    ACNL_ADJUSTED,
    CRCP_ADJUSTED,
)

_CORRECTED = (NRCP_NO_DELTA, NACP_ADJUSTED, ACNL_ADJUSTED, CRCP_ADJUSTED)


@dataclass(frozen=True)
class ExperimentConfig:
    noise: NoiseModel
    methods: tuple[str, ...] = (ORACLE, NOISY_CP, NRCP_NO_DELTA, NACP_ADJUSTED)
    score: ScoreParams = ScoreParams()
    alpha: float = 0.1
    delta_conf: float = 0.001
    split_fraction: float = 0.5
    n_splits: int = 1000
    seed: int = 0
    mc_samples: int = DEFAULT_MC_SAMPLES
    class_prior: tuple[float, ...] | None = None
    grid_budget: int = DEFAULT_GRID_BUDGET
    grid_points: int = DEFAULT_GRID_POINTS
    threads: int = 1
    keep_splits: bool = False

    def __post_init__(self):
        canon = []
        by_lower = {m.lower(): m for m in ALL_METHODS}
        for m in self.methods:
            key = str(m).lower()
            if key not in by_lower:
                raise InvalidConfigError(
                    f"unknown method {m!r}; expected one of {ALL_METHODS}"
                )
            canon.append(by_lower[key])
        object.__setattr__(self, "methods", tuple(canon))
        if not 0.0 < self.alpha < 1.0:
            raise InvalidConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0.0 < self.split_fraction < 1.0:
            raise InvalidConfigError(
                f"split_fraction must be in (0, 1), got {self.split_fraction}"
            )
        if self.n_splits < 1:
            raise InvalidConfigError(f"n_splits must be >= 1, got {self.n_splits}")
        if self.threads < 1:
            raise InvalidConfigError(f"threads must be >= 1, got {self.threads}")


@dataclass(frozen=True)
class MethodSummary:
    mean_coverage: float
    std_coverage: float
    mean_size: float
    std_size: float
    trivial_rate: float
    mean_noisy_coverage: float
    std_noisy_coverage: float


@dataclass(frozen=True)
class TrialReport:
    methods: dict[str, MethodSummary]
    alpha: float
    score_kind: str
    n_splits: int
    n_pool: int
    n_calibration: int
    n_test: int
    seed: int
    epsilon: float | None
    splits: dict | None = field(default=None, compare=False)


def coverage_and_size(
    test: LabeledSet, q: float, params: ScoreParams, row_offset: int = 0
) -> tuple[float, float]:
    """Fraction of rows whose label scores <= q, and the mean set size."""
    if np.isnan(q):
        raise InvalidArgumentError("threshold must not be NaN")
    s = score_matrix(test.probs, params, row_offset=row_offset)
    mask = s <= q
    coverage = float(mask[np.arange(test.n_rows), test.labels].mean())
    avg_size = float(mask.sum(axis=1).mean())
    return coverage, avg_size


def _split_sizes(n_pool: int, fraction: float) -> tuple[int, int]:
    n_cal = int(n_pool * fraction)
    if n_cal < 1 or n_pool - n_cal < 1:
        raise InvalidConfigError(
            f"pool of {n_pool} cannot be split with fraction {fraction}"
        )
    return n_cal, n_pool - n_cal


class _SplitRecord(dict):
    pass


def _evaluate(s_test: np.ndarray, clean: np.ndarray, noisy: np.ndarray, q: float):
    mask = s_test <= q
    rows = np.arange(s_test.shape[0])
    return (
        float(mask[rows, clean].mean()),
        float(mask.sum(axis=1).mean()),
        float(mask[rows, noisy].mean()),
    )


def run_experiment(
    probs, clean_labels, noisy_labels, config: ExperimentConfig
) -> TrialReport:
    """Calibrate every requested method across repeated random splits.

    Deterministic given ``config.seed``: split i draws its permutation from a
    substream keyed by (seed, i), and aggregation order is fixed regardless of
    the thread count.
    """
    pool = validate_probability_matrix(probs)
    clean = np.asarray(clean_labels, dtype=np.int64)
    noisy = np.asarray(noisy_labels, dtype=np.int64)
    n_pool, k = pool.n_rows, pool.n_classes
    if clean.shape != (n_pool,) or noisy.shape != (n_pool,):
        raise InvalidArgumentError("label arrays must match the probability rows")
    n_cal, n_test = _split_sizes(n_pool, config.split_fraction)

    uniform = isinstance(config.noise, UniformNoise)
    epsilon = config.noise.epsilon if uniform else None
    needs_matrix = (not uniform) or any(
        m in (ACNL_ADJUSTED, CRCP_ADJUSTED) for m in config.methods
    )
    p_matrix = noise_matrix_of(config.noise, k) if needs_matrix else None
    p_inverse = invert_noise_matrix(p_matrix).p_inverse if not uniform else None
    marginals = None
    if any(m in (ACNL_ADJUSTED, CRCP_ADJUSTED) for m in config.methods):
        rho = (
            np.asarray(config.class_prior, dtype=np.float64)
            if config.class_prior is not None
            else np.full(k, 1.0 / k)
        )
        marginals = ClassMarginals.from_prior(rho, p_matrix)
    if NACP_ADJUSTED in config.methods and not uniform:
        raise InvalidConfigError(
            "the NACP correction term is defined for uniform noise; "
            "use NRCP_noDelta / ACNL_adjusted / CRCP_adjusted with a general matrix"
        )

    # scored once for the whole pool; splits only index into it
    s_pool = score_matrix(pool, config.score)
    delta_nacp_value = (
        delta_nacp(n_cal, epsilon, config.delta_conf).delta_value
        if NACP_ADJUSTED in config.methods
        else None
    )
    crcp_term = (
        delta_crcp(n_cal, k, p_matrix, marginals)
        if CRCP_ADJUSTED in config.methods
        else None
    )
    nominal = 1.0 - config.alpha

    def run_split(split_idx: int) -> dict:
        rng = np.random.default_rng([config.seed, split_idx])
        perm = rng.permutation(n_pool)
        cal_idx, test_idx = perm[:n_cal], perm[n_cal:]
        s_cal = s_pool[cal_idx]
        s_test = s_pool[test_idx]
        clean_cal, noisy_cal = clean[cal_idx], noisy[cal_idx]
        clean_test, noisy_test = clean[test_idx], noisy[test_idx]
        rows = np.arange(n_cal)

        searcher = None
        if any(m in _CORRECTED for m in config.methods):
            if uniform:
                searcher = UniformSearch(
                    s_cal[rows, noisy_cal],
                    s_cal,
                    epsilon,
                    config.grid_budget,
                    config.grid_points,
                )
            else:
                searcher = GeneralSearch(
                    s_cal,
                    noisy_cal,
                    p_inverse,
                    config.grid_budget,
                    config.grid_points,
                )

        record: dict[str, dict] = {}
        for method in config.methods:
            if method == ORACLE:
                res = standard_cp(s_cal[rows, clean_cal], config.alpha)
            elif method == NOISY_CP:
                res = standard_cp(s_cal[rows, noisy_cal], config.alpha, noisy=True)
            else:
                if method == NRCP_NO_DELTA:
                    delta = 0.0
                elif method == NACP_ADJUSTED:
                    delta = delta_nacp_value
                elif method == ACNL_ADJUSTED:
                    counts = np.bincount(noisy_cal, minlength=k)
                    if counts.min() < 1:
                        # bound diverges with an empty noisy class
                        delta = float("inf")
                    else:
                        delta = delta_acnl(
                            n_cal,
                            k,
                            p_matrix,
                            marginals,
                            noisy_counts=counts,
                            mc_samples=config.mc_samples,
                            seed=config.seed,
                        ).delta_value
                else:
                    delta = crcp_term.delta_value
                level = nominal + delta
                if level >= 1.0:
                    method_name = (
                        METHOD_NACP_UNIFORM if uniform else METHOD_NACP_GENERAL
                    )
                    res = trivial_result(method_name, level, delta)
                else:
                    res = searcher.threshold(level, delta=delta)
            if res.trivial_set:
                cov, size, noisy_cov = 1.0, float(k), 1.0
            else:
                cov, size, noisy_cov = _evaluate(s_test, clean_test, noisy_test, res.q)
            record[method] = {
                "q": res.q,
                "coverage": cov,
                "size": size,
                "noisy_coverage": noisy_cov,
                "trivial": res.trivial_set,
                "achieved_fc": res.achieved_fc,
            }
        if NOISY_CP in record and searcher is not None and uniform:
            record[NOISY_CP]["random_cdf_at_q"] = searcher.random_cdf_at(
                record[NOISY_CP]["q"]
            )
        return record

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool_exec:
            records = list(pool_exec.map(run_split, range(config.n_splits)))
    else:
        records = [run_split(i) for i in range(config.n_splits)]

    summaries: dict[str, MethodSummary] = {}
    for method in config.methods:
        cov = np.array([r[method]["coverage"] for r in records])
        size = np.array([r[method]["size"] for r in records])
        ncov = np.array([r[method]["noisy_coverage"] for r in records])
        triv = np.array([r[method]["trivial"] for r in records], dtype=float)
        ddof = 1 if len(records) > 1 else 0
        summaries[method] = MethodSummary(
            mean_coverage=float(cov.mean()),
            std_coverage=float(cov.std(ddof=ddof)),
            mean_size=float(size.mean()),
            std_size=float(size.std(ddof=ddof)),
            trivial_rate=float(triv.mean()),
            mean_noisy_coverage=float(ncov.mean()),
            std_noisy_coverage=float(ncov.std(ddof=ddof)),
        )

    splits = None
    if config.keep_splits:
        splits = {
            method: {
                key: [r[method].get(key) for r in records]
                for key in records[0][method]
            }
            for method in config.methods
        }
    return TrialReport(
        methods=summaries,
        alpha=config.alpha,
        score_kind=config.score.kind,
        n_splits=config.n_splits,
        n_pool=n_pool,
        n_calibration=n_cal,
        n_test=n_test,
        seed=config.seed,
        epsilon=epsilon,
        splits=splits,
    )


def report_to_dict(report: TrialReport) -> dict:
    """JSON-ready view of a report (per-split details excluded)."""
    return {
        "alpha": report.alpha,
        "score": report.score_kind,
        "n_splits": report.n_splits,
        "n_pool": report.n_pool,
        "n_calibration": report.n_calibration,
        "n_test": report.n_test,
        "seed": report.seed,
        "epsilon": report.epsilon,
        "methods": {
            name: {
                "mean_coverage": s.mean_coverage,
                "std_coverage": s.std_coverage,
                "mean_size": s.mean_size,
                "std_size": s.std_size,
                "trivial_rate": s.trivial_rate,
                "mean_noisy_coverage": s.mean_noisy_coverage,
                "std_noisy_coverage": s.std_noisy_coverage,
            }
            for name, s in report.methods.items()
        },
    }


def report_to_json(report: TrialReport) -> str:
    return json.dumps(report_to_dict(report), indent=2, sort_keys=True)


def report_to_table(report: TrialReport) -> str:
    """Aligned plain-text table of per-method coverage and size."""
    header = f"{'method':<14} {'coverage':>18} {'size':>18} {'trivial%':>9}"
    lines = [header, "-" * len(header)]
    for name, s in report.methods.items():
        cov = f"{s.mean_coverage:.4f} +/- {s.std_coverage:.4f}"
        size = f"{s.mean_size:.2f} +/- {s.std_size:.2f}"
        lines.append(f"{name:<14} {cov:>18} {size:>18} {100 * s.trivial_rate:>8.1f}%")
    return "\n".join(lines)


def splits_to_csv(report: TrialReport) -> str:
    """Per-split rows (requires a report built with keep_splits=True)."""
    if report.splits is None:
        raise InvalidArgumentError(
            "report has no per-split detail; run with keep_splits=True"
        )
    lines = ["split,method,q,coverage,size,noisy_coverage,trivial"]
    for method, cols in report.splits.items():
        for i in range(report.n_splits):
            lines.append(
                f"{i},{method},{cols['q'][i]!r},{cols['coverage'][i]!r},"
                f"{cols['size'][i]!r},{cols['noisy_coverage'][i]!r},"
                f"{int(cols['trivial'][i])}"
            )
    return "\n".join(lines) + "\n"
