"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with ``pytest tests/test_acceptance.py -v -s``).

Reference values marked "published" are literature numbers for these exact
parameter settings; tolerances are fixed here, not tuned.  Three sub-checks
are known to fail and are asserted as stated anyway: the closed-form value
at (n=10000, eps=0.2) is 0.030546, which is outside +/-0.0005 of the
published 0.030 (that cell appears truncated rather than rounded), and the
published class-count-sensitive baseline values at k=1000 are only
reproducible with the realized minimum per-class count of a specific random
draw (about 12-14), not with the expected count n/k = 25 that deterministic
inputs give.  See the failure messages for the computed values.
"""

from contextlib import contextmanager

import numpy as np
import pytest

from nacp.calibrate import UniformSearch, invert_noise_matrix, GeneralSearch
from nacp.core import (
    CoverageSpec,
    GeneralNoise,
    LabeledSet,
    UniformNoise,
    uniform_noise_as_matrix,
)
from nacp.guarantees import apply_correction, delta_acnl, delta_crcp, delta_nacp
from nacp.harness import (
    NACP_ADJUSTED,
    NOISY_CP,
    NRCP_NO_DELTA,
    ORACLE,
    ExperimentConfig,
    run_experiment,
)
from nacp.calibrate import nacp_uniform, standard_cp
from nacp.scores import ScoreParams, label_scores, score_matrix
from nacp.synth import SynthConfig, empirical_transition_matrix, generate, inject_noise

MC_SAMPLES = 100_000


@contextmanager
def criterion(num: int, description: str):
    try:
        yield
    except BaseException:
        print(f"[criterion {num:2d}] FAIL - {description}")
        raise
    else:
        print(f"[criterion {num:2d}] PASS - {description}")


def informative_dataset(seed: int):
    """Fuzzed dataset from an informative classifier with uniform label noise.

    The box (k in [5, 15], eps <= 0.4, alpha in [0.12, 0.3], n in [150, 600])
    keeps the noisy-score quantile away from the saturated all-classes corner,
    where the threshold-order equivalence's exact-equality idealization breaks
    down; 5000 independent draws from this box showed no violation.
    """
    r = np.random.default_rng(seed)
    n = int(r.integers(150, 600))
    k = int(r.integers(5, 16))
    mu = r.uniform(1.5, 4.0)
    alpha = float(r.uniform(0.12, 0.3))
    eps = float(r.uniform(0.0, 0.4))
    data = generate(SynthConfig(k=k, n=n, signal_mu=mu, logit_sigma=1.0, seed=seed))
    noisy = inject_noise(data.labels, UniformNoise(eps), k=k, seed=seed)
    params = ScoreParams(kind=("hps", "aps")[seed % 2])
    return data, noisy, eps, alpha, params


def test_criterion_1_nacp_delta_closed_form_table():
    cells = {
        (5000, 0.1): 0.035,
        (5000, 0.2): 0.043,
        (10000, 0.1): 0.025,
        (10000, 0.2): 0.030,
        (25000, 0.1): 0.016,
        (25000, 0.2): 0.019,
    }
    with criterion(1, "noise-aware delta reproduces the published table cells"):
        mismatches = []
        for (n, eps), expected in cells.items():
            got = delta_nacp(n, eps, 0.001).delta_value
            if abs(got - expected) > 0.0005:
                mismatches.append(f"(n={n}, eps={eps}): got {got:.6f}, table {expected}")
        assert not mismatches, "; ".join(mismatches)


def test_criterion_2_baseline_delta_table():
    acnl_cells = {
        (5000, 10, 0.1): 0.031,
        (5000, 10, 0.2): 0.059,
        (25000, 1000, 0.1): 0.194,
        (25000, 1000, 0.2): 0.466,
    }
    crcp_cells = {
        (5000, 10, 0.1): 0.016,
        (5000, 10, 0.2): 0.036,
        (25000, 1000, 0.1): 0.079,
        (25000, 1000, 0.2): 0.177,
    }
    with criterion(2, "baseline deltas reproduce the published table cells"):
        mismatches = []
        for (n, k, eps), expected in acnl_cells.items():
            got = delta_acnl(
                n, k, uniform_noise_as_matrix(eps, k),
                mc_samples=MC_SAMPLES, seed=0,
            ).delta_value
            if abs(got - expected) > 0.005:
                mismatches.append(
                    f"acnl(n={n}, k={k}, eps={eps}): got {got:.6f}, table {expected}"
                )
        for (n, k, eps), expected in crcp_cells.items():
            got = delta_crcp(n, k, uniform_noise_as_matrix(eps, k)).delta_value
            if abs(got - expected) > 0.002:
                mismatches.append(
                    f"crcp(n={n}, k={k}, eps={eps}): got {got:.6f}, table {expected}"
                )
        assert not mismatches, "; ".join(mismatches)


def test_criterion_3_trivial_set_detection():
    with criterion(3, "trivial-set flag raised for baselines but not the DKW term"):
        spec = CoverageSpec(alpha=0.1, delta=0.001)
        for n, k in ((5000, 200), (25000, 1000)):
            noise = uniform_noise_as_matrix(0.2, k)
            nacp_term = delta_nacp(n, 0.2, 0.001)
            acnl_term = delta_acnl(n, k, noise, mc_samples=MC_SAMPLES, seed=0)
            crcp_term = delta_crcp(n, k, noise)
            assert not apply_correction(spec, nacp_term).trivial_set, (n, k)
            assert apply_correction(spec, acnl_term).trivial_set, (n, k)
            assert apply_correction(spec, crcp_term).trivial_set, (n, k)


def test_criterion_4_synthetic_coverage_and_size():
    with criterion(4, "repeated-split coverage/size ordering on synthetic data"):
        data = generate(
            SynthConfig(k=100, n=20_000, signal_mu=3.0, logit_sigma=1.0, seed=2024)
        )
        noisy = inject_noise(data.labels, UniformNoise(0.2), k=100, seed=2024)
        for kind in ("hps", "aps"):
            cfg = ExperimentConfig(
                noise=UniformNoise(0.2),
                methods=(ORACLE, NOISY_CP, NRCP_NO_DELTA, NACP_ADJUSTED),
                score=ScoreParams(kind=kind),
                alpha=0.1,
                n_splits=200,
                seed=7,
            )
            rep = run_experiment(data.probs.values, data.labels, noisy, cfg)
            oracle = rep.methods[ORACLE]
            noisy_cp = rep.methods[NOISY_CP]
            nrcp = rep.methods[NRCP_NO_DELTA]
            nacp = rep.methods[NACP_ADJUSTED]
            assert 0.89 <= oracle.mean_coverage <= 0.91, (kind, oracle)
            assert 0.885 <= nrcp.mean_coverage <= 0.915, (kind, nrcp)
            assert noisy_cp.mean_coverage >= 0.99, (kind, noisy_cp)
            assert noisy_cp.mean_size >= 3 * oracle.mean_size, (kind, noisy_cp)
            assert nacp.mean_size < noisy_cp.mean_size, (kind, nacp)


def test_criterion_5_zero_noise_reduction_identity():
    with criterion(5, "zero noise collapses the search to the standard quantile"):
        rng = np.random.default_rng(505)
        for trial in range(100):
            k = int(rng.integers(2, 10))
            n = int(rng.integers(2, 120))
            probs = rng.dirichlet(np.full(k, rng.uniform(0.3, 3.0)), size=n)
            labels = rng.integers(0, k, n)
            alpha = float(rng.uniform(0.05, 0.45))
            params = ScoreParams(kind=("hps", "aps", "raps")[trial % 3])
            calib = LabeledSet.from_arrays(probs, labels)
            ref = standard_cp(label_scores(calib.probs, calib.labels, params), alpha)
            got = nacp_uniform(calib, 0.0, alpha, params)
            assert got.q == ref.q, (trial, got.q, ref.q)


def test_criterion_6_uniform_general_consistency():
    with criterion(6, "matrix path matches the uniform formula to 1e-10"):
        rng = np.random.default_rng(606)
        for trial in range(50):
            k = (2, 5, 10)[trial % 3]
            n = int(rng.integers(10, 150))
            eps = float(rng.uniform(0.0, 0.7))
            probs = rng.dirichlet(np.full(k, rng.uniform(0.3, 3.0)), size=n)
            labels = rng.integers(0, k, n)
            params = ScoreParams(kind=("hps", "aps")[trial % 2])
            s = score_matrix(probs, params)
            uni = UniformSearch(s[np.arange(n), labels], s, eps)
            p = uniform_noise_as_matrix(eps, k).matrix
            gen = GeneralSearch(s, np.asarray(labels), invert_noise_matrix(p).p_inverse)
            np.testing.assert_array_equal(uni.breakpoints, gen.breakpoints)
            assert np.abs(uni.clean_cdf - gen.clean_cdf).max() <= 1e-10, trial


def test_criterion_7_bracket_and_lemma_properties():
    with criterion(7, "bracket containment and the noisy<=k*random CDF bound"):
        for trial in range(100):
            data, noisy, eps, alpha, params = informative_dataset(70_000 + trial)
            n, k = data.n_rows, data.n_classes
            s = score_matrix(data.probs, params)
            search = UniformSearch(s[np.arange(n), noisy], s, eps)
            res = search.threshold(1 - alpha)
            assert not res.outside_bracket, trial
            assert res.q1 <= res.q <= res.q2, trial
            assert np.all(
                search.noisy_cdf <= k * search.random_cdf + 1e-12
            ), trial


def test_criterion_8_threshold_order_equivalence():
    with criterion(8, "corrected-vs-noisy threshold order matches the CDF test"):
        for trial in range(100):
            data, noisy, eps, alpha, params = informative_dataset(80_000 + trial)
            n = data.n_rows
            s = score_matrix(data.probs, params)
            search = UniformSearch(s[np.arange(n), noisy], s, eps)
            q_corrected = search.threshold(1 - alpha).q
            q_noisy = standard_cp(s[np.arange(n), noisy], alpha, noisy=True).q
            fr_at_noisy = search.random_cdf_at(q_noisy)
            assert (q_corrected <= q_noisy) == (fr_at_noisy <= 1 - alpha), (
                trial, q_corrected, q_noisy, fr_at_noisy, 1 - alpha,
            )


def brute_force_threshold(class_scores, noisy_labels, epsilon, alpha):
    """Independent exhaustive reference: plain loops, every class score.

    Takes the class-score matrix as input so the comparison is bit-exact;
    the score values themselves are pinned by the hand-value score tests,
    and for the HPS path this test recomputes them from scratch anyway.
    """
    s = np.asarray(class_scores, dtype=float)
    n, k = s.shape
    for q in sorted(set(s.ravel().tolist())):
        fn = sum(1 for i in range(n) if s[i, noisy_labels[i]] <= q) / n
        fr = sum(
            sum(1 for y in range(k) if s[i, y] <= q) / k for i in range(n)
        ) / n
        fc = fn if epsilon == 0 else (fn - epsilon * fr) / (1 - epsilon)
        if fc >= 1 - alpha:
            return q
    return None


def test_criterion_9_brute_force_oracle_equivalence():
    with criterion(9, "search equals exhaustive breakpoint evaluation on tiny sets"):
        # the hand-worked binary example first, with scores recomputed here
        worked_probs = np.array([[0.9, 0.1], [0.8, 0.2], [0.7, 0.3], [0.6, 0.4]])
        worked = LabeledSet.from_arrays(worked_probs, [0, 0, 1, 0])
        res = nacp_uniform(worked, 0.2, 0.2, ScoreParams(kind="hps"))
        assert res.q == pytest.approx(0.4)
        assert res.q == brute_force_threshold(1.0 - worked_probs, worked.labels, 0.2, 0.2)
        rng = np.random.default_rng(909)
        for trial in range(200):
            n = int(rng.integers(2, 7))
            k = int(rng.integers(2, 4))
            probs = rng.dirichlet(np.full(k, rng.uniform(0.4, 2.5)), size=n)
            labels = rng.integers(0, k, n)
            eps = float(rng.uniform(0.0, 0.7))
            alpha = float(rng.uniform(0.05, 0.45))
            kind = ("hps", "aps")[trial % 2]
            params = ScoreParams(kind=kind)
            calib = LabeledSet.from_arrays(probs, labels)
            if kind == "hps":
                s = 1.0 - calib.probs.values
            else:
                s = score_matrix(calib.probs, params)
                # sanity: the matrix agrees with the literal row-order sums
                literal = np.array(
                    [
                        [sum(p for p in row if p >= row[y]) for y in range(k)]
                        for row in calib.probs.values
                    ]
                )
                np.testing.assert_allclose(s, literal, atol=1e-12)
            got = nacp_uniform(calib, eps, alpha, params).q
            expected = brute_force_threshold(s, labels, eps, alpha)
            assert got == expected, (trial, got, expected)


def test_criterion_10_noise_injection_statistics():
    with criterion(10, "empirical transition frequencies match the noise model"):
        n = 100_000
        rng = np.random.default_rng(1010)
        for k, eps in ((2, 0.5), (5, 0.1), (10, 0.2), (20, 0.35)):
            labels = rng.integers(0, k, n)
            noisy = inject_noise(labels, UniformNoise(eps), k=k, seed=k * 7 + 1)
            emp = empirical_transition_matrix(labels, noisy, k)
            expected = uniform_noise_as_matrix(eps, k).matrix
            row_counts = np.bincount(labels, minlength=k).astype(float)
            sigma = np.sqrt(expected * (1 - expected) / row_counts[:, None])
            assert np.all(np.abs(emp - expected) <= 5 * sigma + 1e-12), (k, eps)
        # general transition matrix, same bound per cell
        k = 6
        raw = rng.random((k, k)) + 3 * np.eye(k)
        p = raw / raw.sum(axis=1, keepdims=True)
        labels = rng.integers(0, k, n)
        noisy = inject_noise(labels, GeneralNoise(p), seed=77)
        emp = empirical_transition_matrix(labels, noisy, k)
        row_counts = np.bincount(labels, minlength=k).astype(float)
        sigma = np.sqrt(p * (1 - p) / row_counts[:, None])
        assert np.all(np.abs(emp - p) <= 5 * sigma + 1e-12)
