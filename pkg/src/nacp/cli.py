"""Command-line interface and file formats.

File conventions: probabilities are headerless CSV (n rows, k float columns),
labels are single-column integer CSV with 0-based class indices, noise
matrices are k x k CSV, and reports are UTF-8 JSON.  Exit codes: 0 success,
1 usage or I/O failure, 2 numerical failure (singular matrix, unreachable
level), 3 success with the trivial-set flag raised.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import harness
from .calibrate import (
    DEFAULT_GRID_BUDGET,
    DEFAULT_GRID_POINTS,
    METHOD_NACP_GENERAL,
    METHOD_NACP_UNIFORM,
    ThresholdResult,
    nacp_general,
    nacp_uniform,
    standard_cp,
    trivial_result,
)
from .core import (
    ConformalError,
    CoverageSpec,
    GeneralNoise,
    InvalidArgumentError,
    LabeledSet,
    SingularMatrixError,
    TargetLevelUnreachableError,
    UniformNoise,
    noise_matrix_of,
    validate_probability_matrix,
)
from .guarantees import (
    DEFAULT_MC_SAMPLES,
    ClassMarginals,
    apply_correction,
    delta_acnl,
    delta_crcp,
    delta_nacp,
)
from .scores import ScoreParams, label_scores, prediction_mask
from .synth import SynthConfig, generate, inject_noise

THREADS_ENV = "NACP_THREADS"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_TRIVIAL = 3


def _read_probabilities(path: str) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)


def _read_labels(path: str) -> np.ndarray:
    arr = np.loadtxt(path, delimiter=",", dtype=np.int64, ndmin=1)
    if arr.ndim != 1:
        raise InvalidArgumentError(f"label file {path} must have one column")
    return arr


def _read_matrix(path: str) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)


def _write_probabilities(path: Path, values: np.ndarray) -> None:
    np.savetxt(path, values, delimiter=",", fmt="%.17g")


def _write_labels(path: Path, labels: np.ndarray) -> None:
    np.savetxt(path, labels, fmt="%d")


def _noise_from_flags(epsilon, noise_matrix_path):
    if (epsilon is not None) == (noise_matrix_path is not None):
        raise click.UsageError("specify exactly one of --epsilon / --noise-matrix")
    if epsilon is not None:
        return UniformNoise(epsilon)
    return GeneralNoise(_read_matrix(noise_matrix_path))


def _score_params(score, raps_a, raps_b, randomized, seed) -> ScoreParams:
    return ScoreParams(
        kind=score, raps_a=raps_a, raps_b=raps_b, randomized=randomized, seed=seed
    )


def _result_report(res: ThresholdResult, score: ScoreParams) -> dict:
    return {
        "method": res.method,
        "q": None if res.trivial_set else res.q,
        "q1": None if np.isnan(res.q1) else res.q1,
        "q2": None if np.isnan(res.q2) else res.q2,
        "achieved_fc": res.achieved_fc,
        "target_level": res.target_level,
        "delta": res.delta,
        "breakpoint_count": res.breakpoint_count,
        "grid": res.grid,
        "outside_bracket": res.outside_bracket,
        "trivial_set": res.trivial_set,
        "score": {
            "kind": score.kind,
            "raps_a": score.raps_a,
            "raps_b": score.raps_b,
            "randomized": score.randomized,
            "seed": score.seed,
        },
    }


def _emit(payload: dict, fmt: str, out: str | None) -> None:
    if fmt == "json":
        text = json.dumps(payload, indent=2, sort_keys=True)
    else:
        text = "\n".join(f"{key}: {value}" for key, value in payload.items())
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        click.echo(text)


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


_score_options = [
    click.option(
        "--score",
        type=click.Choice(["hps", "aps", "raps"]),
        default="aps",
        show_default=True,
        help="Conformity score kind.",
    ),
    click.option("--raps-a", type=float, default=0.1, show_default=True),
    click.option("--raps-b", type=int, default=1, show_default=True),
    click.option("--randomized", is_flag=True, help="Randomized APS variant."),
]


def _add_options(options):
    def wrap(fn):
        for opt in reversed(options):
            fn = opt(fn)
        return fn

    return wrap


@click.group()
def cli():
    """Conformal prediction calibration with noisy labels."""


@cli.command("simulate")
@click.option("--k", type=int, required=True, help="Number of classes.")
@click.option("--n", type=int, required=True, help="Number of samples.")
@click.option("--epsilon", type=float, default=None, help="Uniform noise level.")
@click.option(
    "--noise-matrix",
    "noise_matrix_path",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="k x k transition-matrix CSV (alternative to --epsilon).",
)
@click.option("--signal-mu", type=float, default=3.0, show_default=True)
@click.option("--logit-sigma", type=float, default=1.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option(
    "--out-dir",
    type=click.Path(file_okay=False),
    default=".",
    show_default=True,
    help="Directory for probabilities.csv, labels_clean.csv, labels_noisy.csv.",
)
def cmd_simulate(k, n, epsilon, noise_matrix_path, signal_mu, logit_sigma, seed, out_dir):
    """Generate synthetic classifier outputs with noisy labels."""
    noise = _noise_from_flags(epsilon, noise_matrix_path)
    config = SynthConfig(k=k, n=n, signal_mu=signal_mu, logit_sigma=logit_sigma, seed=seed)
    data = generate(config)
    noisy = inject_noise(data.labels, noise, k=k, seed=seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_probabilities(out / "probabilities.csv", data.probs.values)
    _write_labels(out / "labels_clean.csv", data.labels)
    _write_labels(out / "labels_noisy.csv", noisy)
    accuracy = float((np.argmax(data.probs.values, axis=1) == data.labels).mean())
    flip_rate = float((noisy != data.labels).mean())
    click.echo(
        f"wrote {n} x {k} probabilities + labels to {out}\n"
        f"top-1 accuracy: {accuracy:.4f}\n"
        f"empirical flip rate: {flip_rate:.4f}"
    )
    return EXIT_OK


@cli.command("calibrate")
@click.option("--probs", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option(
    "--labels",
    type=click.Path(exists=True, dir_okay=False),
    required=True,
    help="Calibration labels (noisy unless --method standard on clean data).",
)
@click.option("--epsilon", type=float, default=None, help="Uniform noise level.")
@click.option(
    "--noise-matrix",
    "noise_matrix_path",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
)
@click.option("--alpha", type=float, default=0.1, show_default=True)
@click.option(
    "--method",
    type=click.Choice(["standard", "nacp", "acnl", "crcp"]),
    default="nacp",
    show_default=True,
    help="standard = plain quantile; nacp/acnl/crcp = noise-corrected search "
    "(they differ only in which finite-sample term --with-delta adds).",
)
@click.option(
    "--with-delta",
    is_flag=True,
    help="Raise the search level by the method's finite-sample correction.",
)
@click.option("--delta-conf", type=float, default=0.001, show_default=True)
@click.option("--mc-samples", type=int, default=DEFAULT_MC_SAMPLES, show_default=True)
@click.option("--largest-solution", is_flag=True)
@click.option("--grid-budget", type=int, default=DEFAULT_GRID_BUDGET, show_default=True)
@click.option("--grid-points", type=int, default=DEFAULT_GRID_POINTS, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@_add_options(_score_options)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.option("--format", "fmt", type=click.Choice(["json", "text"]), default="json")
def cmd_calibrate(
    probs,
    labels,
    epsilon,
    noise_matrix_path,
    alpha,
    method,
    with_delta,
    delta_conf,
    mc_samples,
    largest_solution,
    grid_budget,
    grid_points,
    seed,
    score,
    raps_a,
    raps_b,
    randomized,
    out,
    fmt,
):
    """Calibrate a prediction-set threshold from probability/label files."""
    params = _score_params(score, raps_a, raps_b, randomized, seed)
    calib = LabeledSet.from_arrays(_read_probabilities(probs), _read_labels(labels))
    k = calib.n_classes

    if method == "standard":
        res = standard_cp(label_scores(calib.probs, calib.labels, params), alpha)
        _emit(_result_report(res, params), fmt, out)
        return EXIT_OK

    noise = _noise_from_flags(epsilon, noise_matrix_path)
    uniform = isinstance(noise, UniformNoise)
    delta = None
    if with_delta:
        if method == "nacp":
            if not uniform:
                raise InvalidArgumentError(
                    "the nacp correction term is defined for uniform noise only"
                )
            delta = delta_nacp(calib.n_rows, noise.epsilon, delta_conf).delta_value
        else:
            p_matrix = noise_matrix_of(noise, k)
            counts = np.bincount(calib.labels, minlength=k)
            if method == "acnl":
                delta = delta_acnl(
                    calib.n_rows,
                    k,
                    p_matrix,
                    noisy_counts=counts,
                    mc_samples=mc_samples,
                    seed=seed,
                ).delta_value
            else:
                delta = delta_crcp(calib.n_rows, k, p_matrix).delta_value
    target = 1.0 - alpha + (delta or 0.0)

    if target >= 1.0:
        name = METHOD_NACP_UNIFORM if uniform else METHOD_NACP_GENERAL
        res = trivial_result(name, target, delta)
    elif uniform:
        res = nacp_uniform(
            calib,
            noise.epsilon,
            alpha,
            params,
            target_level=target,
            largest_solution=largest_solution,
            grid_budget=grid_budget,
            grid_points=grid_points,
            delta=delta,
        )
    else:
        res = nacp_general(
            calib,
            noise.matrix,
            alpha,
            params,
            target_level=target,
            largest_solution=largest_solution,
            grid_budget=grid_budget,
            grid_points=grid_points,
            delta=delta,
        )
    _emit(_result_report(res, params), fmt, out)
    return EXIT_TRIVIAL if res.trivial_set else EXIT_OK


@cli.command("predict")
@click.option("--probs", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--q", "q_value", type=float, default=None, help="Inline threshold.")
@click.option(
    "--report",
    "report_path",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="JSON report from the calibrate command (threshold + score params).",
)
@click.option("--seed", type=int, default=0, show_default=True)
@_add_options(_score_options)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def cmd_predict(probs, q_value, report_path, seed, score, raps_a, raps_b, randomized, out):
    """Write one prediction set per row: sorted class indices, space-separated."""
    if (q_value is None) == (report_path is None):
        raise click.UsageError("specify exactly one of --q / --report")
    trivial = False
    if report_path is not None:
        report = json.loads(Path(report_path).read_text(encoding="utf-8"))
        trivial = bool(report.get("trivial_set", False))
        q_value = float("inf") if trivial else float(report["q"])
        sc = report.get("score", {})
        params = ScoreParams(
            kind=sc.get("kind", score),
            raps_a=sc.get("raps_a", raps_a),
            raps_b=sc.get("raps_b", raps_b),
            randomized=sc.get("randomized", randomized),
            seed=sc.get("seed", seed),
        )
    else:
        params = _score_params(score, raps_a, raps_b, randomized, seed)
    pm = validate_probability_matrix(_read_probabilities(probs))
    mask = prediction_mask(pm, q_value, params)
    lines = [" ".join(str(i) for i in np.flatnonzero(row)) for row in mask]
    text = "\n".join(lines) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)
    return EXIT_TRIVIAL if trivial else EXIT_OK


@cli.command("evaluate")
@click.option("--probs", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--clean-labels", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--noisy-labels", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--synthetic", is_flag=True, help="Generate the pool instead of reading files.")
@click.option("--k", type=int, default=10, show_default=True, help="Synthetic classes.")
@click.option("--n", type=int, default=2000, show_default=True, help="Synthetic pool size.")
@click.option("--signal-mu", type=float, default=3.0, show_default=True)
@click.option("--logit-sigma", type=float, default=1.0, show_default=True)
@click.option("--epsilon", type=float, default=None)
@click.option(
    "--noise-matrix",
    "noise_matrix_path",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
)
@click.option("--alpha", type=float, default=0.1, show_default=True)
@click.option("--delta-conf", type=float, default=0.001, show_default=True)
@click.option(
    "--methods",
    default="Oracle,NoisyCP,NRCP_noDelta,NACP",
    show_default=True,
    help="Comma-separated subset of "
    "Oracle,NoisyCP,NRCP_noDelta,NACP,ACNL_adjusted,CRCP_adjusted.",
)
@click.option("--n-splits", type=int, default=1000, show_default=True)
@click.option("--split-fraction", type=float, default=0.5, show_default=True)
@click.option("--mc-samples", type=int, default=DEFAULT_MC_SAMPLES, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--threads", type=int, default=None, help=f"Defaults to ${THREADS_ENV} or 1.")
@_add_options(_score_options)
@click.option("--out-json", type=click.Path(dir_okay=False), default=None)
@click.option("--out-table", type=click.Path(dir_okay=False), default=None)
@click.option(
    "--out-csv",
    type=click.Path(dir_okay=False),
    default=None,
    help="Per-split rows for external plotting.",
)
@click.option("--format", "fmt", type=click.Choice(["json", "text"]), default="text")
def cmd_evaluate(
    probs,
    clean_labels,
    noisy_labels,
    synthetic,
    k,
    n,
    signal_mu,
    logit_sigma,
    epsilon,
    noise_matrix_path,
    alpha,
    delta_conf,
    methods,
    n_splits,
    split_fraction,
    mc_samples,
    seed,
    threads,
    score,
    raps_a,
    raps_b,
    randomized,
    out_json,
    out_table,
    out_csv,
    fmt,
):
    """Run the repeated-split evaluation and report per-method coverage/size."""
    noise = _noise_from_flags(epsilon, noise_matrix_path)
    if synthetic:
        data = generate(
            SynthConfig(k=k, n=n, signal_mu=signal_mu, logit_sigma=logit_sigma, seed=seed)
        )
        pool_probs = data.probs.values
        clean = data.labels
        noisy = inject_noise(clean, noise, k=k, seed=seed)
    else:
        if not (probs and clean_labels and noisy_labels):
            raise click.UsageError(
                "either pass --synthetic or all of --probs/--clean-labels/--noisy-labels"
            )
        pool_probs = _read_probabilities(probs)
        clean = _read_labels(clean_labels)
        noisy = _read_labels(noisy_labels)

    config = harness.ExperimentConfig(
        noise=noise,
        methods=tuple(m.strip() for m in methods.split(",") if m.strip()),
        score=_score_params(score, raps_a, raps_b, randomized, seed),
        alpha=alpha,
        delta_conf=delta_conf,
        split_fraction=split_fraction,
        n_splits=n_splits,
        seed=seed,
        mc_samples=mc_samples,
        threads=threads if threads is not None else _default_threads(),
        keep_splits=out_csv is not None,
    )
    report = harness.run_experiment(pool_probs, clean, noisy, config)
    if out_json:
        Path(out_json).write_text(harness.report_to_json(report) + "\n", encoding="utf-8")
    if out_table:
        Path(out_table).write_text(harness.report_to_table(report) + "\n", encoding="utf-8")
    if out_csv:
        Path(out_csv).write_text(harness.splits_to_csv(report), encoding="utf-8")
    click.echo(
        harness.report_to_json(report) if fmt == "json" else harness.report_to_table(report)
    )
    return EXIT_OK


@cli.command("guarantee")
@click.option("--n", type=int, required=True, help="Calibration-set size.")
@click.option("--k", type=int, required=True, help="Number of classes.")
@click.option("--epsilon", type=float, default=None)
@click.option(
    "--noise-matrix",
    "noise_matrix_path",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
)
@click.option("--alpha", type=float, default=0.1, show_default=True)
@click.option("--delta", "delta_conf", type=float, default=0.001, show_default=True)
@click.option(
    "--methods",
    default="nacp,acnl,crcp",
    show_default=True,
    help="Comma-separated subset of nacp,acnl,crcp.",
)
@click.option(
    "--priors",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="Clean class prior CSV (default uniform).",
)
@click.option(
    "--counts",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="Observed noisy class counts CSV (default: expected counts).",
)
@click.option("--mc-samples", type=int, default=DEFAULT_MC_SAMPLES, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.option("--format", "fmt", type=click.Choice(["json", "text"]), default="json")
def cmd_guarantee(
    n,
    k,
    epsilon,
    noise_matrix_path,
    alpha,
    delta_conf,
    methods,
    priors,
    counts,
    mc_samples,
    seed,
    out,
    fmt,
):
    """Tabulate finite-sample correction terms for what-if parameters."""
    noise = _noise_from_flags(epsilon, noise_matrix_path)
    spec = CoverageSpec(alpha=alpha, delta=delta_conf)
    wanted = [m.strip().lower() for m in methods.split(",") if m.strip()]
    unknown = set(wanted) - {"nacp", "acnl", "crcp"}
    if unknown:
        raise click.UsageError(f"unknown guarantee methods: {sorted(unknown)}")
    marginals = None
    noisy_counts = _read_labels(counts) if counts else None
    p_matrix = None
    if {"acnl", "crcp"} & set(wanted):
        p_matrix = noise_matrix_of(noise, k)
        if priors:
            rho = np.loadtxt(priors, delimiter=",", dtype=np.float64, ndmin=1)
            marginals = ClassMarginals.from_prior(rho, p_matrix)

    rows = []
    any_trivial = False
    for name in wanted:
        if name == "nacp":
            if not isinstance(noise, UniformNoise):
                raise InvalidArgumentError(
                    "the nacp correction term is defined for uniform noise only"
                )
            term = delta_nacp(n, noise.epsilon, delta_conf)
        elif name == "acnl":
            term = delta_acnl(
                n,
                k,
                p_matrix,
                marginals,
                noisy_counts=noisy_counts,
                mc_samples=mc_samples,
                seed=seed,
            )
        else:
            term = delta_crcp(n, k, p_matrix, marginals)
        adjusted = apply_correction(spec, term)
        any_trivial = any_trivial or adjusted.trivial_set
        rows.append(
            {
                "method": term.method,
                "delta": term.delta_value,
                "n": n,
                "k": k,
                "epsilon": term.epsilon,
                "adjusted_level": adjusted.level,
                "trivial_set": adjusted.trivial_set,
                "n_star": term.n_star,
                "counts_mode": term.counts_mode,
                "mc_samples": term.mc_samples,
                "c_n": term.c_n,
                "c_n_stderr": term.c_n_stderr,
            }
        )
    payload = {"alpha": alpha, "delta_conf": delta_conf, "terms": rows}
    if fmt == "json":
        text = json.dumps(payload, indent=2, sort_keys=True)
    else:
        lines = [f"{'method':<6} {'delta':>10} {'level':>10} {'trivial':>8}"]
        for r in rows:
            lines.append(
                f"{r['method']:<6} {r['delta']:>10.4f} "
                f"{r['adjusted_level']:>10.4f} {str(r['trivial_set']):>8}"
            )
        text = "\n".join(lines)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        click.echo(text)
    return EXIT_TRIVIAL if any_trivial else EXIT_OK


def main(argv=None) -> int:
    """Entry point mapping domain errors to documented exit codes."""
    try:
        result = cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except (SingularMatrixError, TargetLevelUnreachableError) as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return EXIT_NUMERICAL
    except ConformalError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    except OSError as exc:
        click.echo(f"i/o error: {exc}", err=True)
        return EXIT_USAGE
    return int(result) if isinstance(result, int) else EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
