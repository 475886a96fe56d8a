import json

import numpy as np
import pytest

from nacp.core import GeneralNoise, InvalidConfigError, LabeledSet, UniformNoise
from nacp.harness import (
    ACNL_ADJUSTED,
    CRCP_ADJUSTED,
    NACP_ADJUSTED,
    NOISY_CP,
    NRCP_NO_DELTA,
    ORACLE,
    ExperimentConfig,
    coverage_and_size,
    report_to_dict,
    report_to_json,
    report_to_table,
    run_experiment,
    splits_to_csv,
)
from nacp.scores import ScoreParams
from nacp.synth import SynthConfig, generate, inject_noise

HPS = ScoreParams(kind="hps")


@pytest.fixture(scope="module")
def pool():
    data = generate(SynthConfig(k=10, n=3000, signal_mu=2.5, logit_sigma=1.0, seed=60))
    noisy = inject_noise(data.labels, UniformNoise(0.2), k=10, seed=61)
    return data.probs.values, data.labels, noisy


class TestCoverageAndSize:
    def test_threshold_beyond_max_gives_full_sets(self):
        test = LabeledSet.from_arrays([[0.5, 0.3, 0.2], [0.2, 0.2, 0.6]], [0, 2])
        cov, size = coverage_and_size(test, 10.0, HPS)
        assert (cov, size) == (1.0, 3.0)

    def test_threshold_below_min_gives_empty_sets(self):
        test = LabeledSet.from_arrays([[0.5, 0.3, 0.2], [0.2, 0.2, 0.6]], [0, 2])
        cov, size = coverage_and_size(test, -1.0, HPS)
        assert (cov, size) == (0.0, 0.0)

    def test_worked_example_at_threshold(self):
        # HPS class scores [[.1,.9],[.2,.8],[.3,.7],[.4,.6]]; at q=0.4 each
        # row's set is {0}; against labels [0,0,1,0] coverage is 3/4
        test = LabeledSet.from_arrays(
            [[0.9, 0.1], [0.8, 0.2], [0.7, 0.3], [0.6, 0.4]], [0, 0, 1, 0]
        )
        cov, size = coverage_and_size(test, 0.4, HPS)
        assert size == 1.0
        assert cov == 0.75


class TestExperimentConfig:
    def test_method_names_canonicalized(self):
        cfg = ExperimentConfig(noise=UniformNoise(0.1), methods=("oracle", "noisycp"))
        assert cfg.methods == (ORACLE, NOISY_CP)

    def test_unknown_method(self):
        with pytest.raises(InvalidConfigError):
            ExperimentConfig(noise=UniformNoise(0.1), methods=("bogus",))

    def test_nacp_with_general_noise_rejected(self):
        p = np.eye(3)
        data = generate(SynthConfig(k=3, n=40, seed=0))
        cfg = ExperimentConfig(
            noise=GeneralNoise(p), methods=(NACP_ADJUSTED,), n_splits=1
        )
        with pytest.raises(InvalidConfigError):
            run_experiment(data.probs.values, data.labels, data.labels, cfg)


class TestRunExperiment:
    def test_oracle_coverage_near_nominal(self, pool):
        probs, clean, noisy = pool
        cfg = ExperimentConfig(
            noise=UniformNoise(0.2),
            methods=(ORACLE,),
            score=HPS,
            alpha=0.1,
            n_splits=100,
            seed=3,
        )
        rep = run_experiment(probs, clean, noisy, cfg)
        assert 0.88 <= rep.methods[ORACLE].mean_coverage <= 0.92

    def test_deterministic_given_seed(self, pool):
        probs, clean, noisy = pool
        cfg = ExperimentConfig(
            noise=UniformNoise(0.2),
            methods=(ORACLE, NOISY_CP, NRCP_NO_DELTA, NACP_ADJUSTED),
            score=HPS,
            n_splits=12,
            seed=9,
        )
        assert run_experiment(probs, clean, noisy, cfg) == run_experiment(
            probs, clean, noisy, cfg
        )

    def test_threads_do_not_change_result(self, pool):
        probs, clean, noisy = pool
        base = ExperimentConfig(
            noise=UniformNoise(0.2), methods=(ORACLE, NRCP_NO_DELTA), score=HPS,
            n_splits=8, seed=4,
        )
        threaded = ExperimentConfig(
            noise=UniformNoise(0.2), methods=(ORACLE, NRCP_NO_DELTA), score=HPS,
            n_splits=8, seed=4, threads=4,
        )
        assert run_experiment(probs, clean, noisy, base) == run_experiment(
            probs, clean, noisy, threaded
        )

    def test_adjusted_nacp_covers_at_least_unadjusted(self, pool):
        # a larger target level can only enlarge the threshold and the sets
        probs, clean, noisy = pool
        cfg = ExperimentConfig(
            noise=UniformNoise(0.2),
            methods=(NRCP_NO_DELTA, NACP_ADJUSTED),
            score=HPS,
            n_splits=40,
            seed=11,
            keep_splits=True,
        )
        rep = run_experiment(probs, clean, noisy, cfg)
        q_plain = np.array(rep.splits[NRCP_NO_DELTA]["q"])
        q_adj = np.array(rep.splits[NACP_ADJUSTED]["q"])
        cov_plain = np.array(rep.splits[NRCP_NO_DELTA]["coverage"])
        cov_adj = np.array(rep.splits[NACP_ADJUSTED]["coverage"])
        assert np.all(q_adj >= q_plain)
        assert np.all(cov_adj >= cov_plain)

    def test_threshold_order_equivalence_each_split(self, pool):
        # on every split: q_corrected <= q_noisy  iff  the random-label CDF at
        # the noisy threshold is at most the nominal level
        probs, clean, noisy = pool
        cfg = ExperimentConfig(
            noise=UniformNoise(0.2),
            methods=(NOISY_CP, NRCP_NO_DELTA),
            score=HPS,
            alpha=0.15,
            n_splits=60,
            seed=13,
            keep_splits=True,
        )
        rep = run_experiment(probs, clean, noisy, cfg)
        q_noisy = np.array(rep.splits[NOISY_CP]["q"])
        q_nacp = np.array(rep.splits[NRCP_NO_DELTA]["q"])
        fr = np.array(rep.splits[NOISY_CP]["random_cdf_at_q"])
        lhs = q_nacp <= q_noisy
        rhs = fr <= 1 - cfg.alpha
        assert np.array_equal(lhs, rhs)

    def test_trivial_rate_with_oversized_correction(self):
        # k large relative to n: the ACNL/CRCP-adjusted levels exceed 1
        data = generate(SynthConfig(k=50, n=600, signal_mu=3.0, seed=21))
        noisy = inject_noise(data.labels, UniformNoise(0.2), k=50, seed=22)
        cfg = ExperimentConfig(
            noise=UniformNoise(0.2),
            methods=(ACNL_ADJUSTED, CRCP_ADJUSTED),
            score=HPS,
            n_splits=4,
            seed=2,
            mc_samples=2000,
        )
        rep = run_experiment(data.probs.values, data.labels, noisy, cfg)
        assert rep.methods[ACNL_ADJUSTED].trivial_rate == 1.0
        assert rep.methods[CRCP_ADJUSTED].trivial_rate == 1.0
        assert rep.methods[ACNL_ADJUSTED].mean_size == 50.0
        assert rep.methods[ACNL_ADJUSTED].mean_coverage == 1.0

    def test_general_noise_path(self):
        rng = np.random.default_rng(31)
        k = 4
        raw = rng.random((k, k)) + 4 * np.eye(k)
        p = raw / raw.sum(axis=1, keepdims=True)
        data = generate(SynthConfig(k=k, n=1200, signal_mu=2.0, seed=32))
        noisy = inject_noise(data.labels, GeneralNoise(p), seed=33)
        cfg = ExperimentConfig(
            noise=GeneralNoise(p),
            methods=(ORACLE, NRCP_NO_DELTA),
            score=ScoreParams(kind="aps"),
            n_splits=30,
            seed=5,
        )
        rep = run_experiment(data.probs.values, data.labels, noisy, cfg)
        assert 0.85 <= rep.methods[NRCP_NO_DELTA].mean_coverage <= 0.95


class TestReportOutputs:
    def test_json_round_trip(self, pool):
        probs, clean, noisy = pool
        cfg = ExperimentConfig(
            noise=UniformNoise(0.2), methods=(ORACLE,), score=HPS, n_splits=5, seed=1
        )
        rep = run_experiment(probs, clean, noisy, cfg)
        payload = json.loads(report_to_json(rep))
        assert payload["methods"]["Oracle"]["mean_coverage"] == pytest.approx(
            rep.methods[ORACLE].mean_coverage
        )
        assert payload["n_splits"] == 5
        assert payload == report_to_dict(rep)

    def test_table_contains_rows(self, pool):
        probs, clean, noisy = pool
        cfg = ExperimentConfig(
            noise=UniformNoise(0.2), methods=(ORACLE, NOISY_CP), score=HPS,
            n_splits=5, seed=1,
        )
        table = report_to_table(run_experiment(probs, clean, noisy, cfg))
        assert "Oracle" in table and "NoisyCP" in table

    def test_csv_requires_split_detail(self, pool):
        probs, clean, noisy = pool
        cfg = ExperimentConfig(
            noise=UniformNoise(0.2), methods=(ORACLE,), score=HPS, n_splits=3, seed=1
        )
        rep = run_experiment(probs, clean, noisy, cfg)
        with pytest.raises(Exception):
            splits_to_csv(rep)
        cfg2 = ExperimentConfig(
            noise=UniformNoise(0.2), methods=(ORACLE,), score=HPS, n_splits=3, seed=1,
            keep_splits=True,
        )
        rep2 = run_experiment(probs, clean, noisy, cfg2)
        csv = splits_to_csv(rep2)
        assert csv.startswith("split,method,q,")
        assert len(csv.strip().splitlines()) == 1 + 3
