"""Experiment drivers behind the CLI: a single estimate, the sigma2 sweep
across neighbor counts, and the estimator-bias comparison across
evaluation batch sizes.

Every output file embeds the fully resolved configuration so any row can
be re-run from its own metadata, and all randomness derives from explicit
integer seeds, so repeated runs (and runs with a worker pool) reproduce
files byte-identically apart from a single timestamp header line.
"""

from __future__ import annotations

import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from datetime import datetime, timezone

import numpy as np

from .backend import active_backend
from .channels import (
    DwtcParams,
    analytic_cmi,
    analytic_log_ratio,
    draw_joint,
    draw_product,
    sample_dwtc,
)
from .estimators import (
    EstimateReport,
    EstimatorConfig,
    estimate_dv,
    estimate_dv_from_omega,
    estimate_nwj,
    estimate_nwj_from_log_ratio,
    evaluate_omegas,
    run_estimation,
    train_trial_classifier,
)
from .exceptions import ConfigurationError, NumericalError
from .sampling import RNG_SCHEME, split_dataset

EXPERIMENT_KINDS = ("single_estimate", "sweep_sigma2", "bias_boxplot")

# Seed-derivation domains, so distinct streams never collide.
_DOM_SWEEP_DATA = 1
_DOM_SWEEP_CELL = 2
_DOM_BIAS_DATA = 3
_DOM_BIAS_RUN = 4

SWEEP_COLUMNS = ("sigma2", "k", "estimate_mean", "estimate_std", "truth_nats", "failed_trials")
BIAS_COLUMNS = ("repetition", "estimator", "b_eval", "estimate", "truth_nats", "failed_trials")

_COLUMN_DOCS = {
    "sigma2": "eavesdropper noise standard deviation (variance sigma2^2 used internally)",
    "k": "neighbor count used for the product-batch construction",
    "estimate_mean": "Monte Carlo mean estimate over trials, nats",
    "estimate_std": "sample standard deviation over trials (empty when trials < 2)",
    "truth_nats": "closed-form conditional mutual information, nats",
    "failed_trials": "number of diverged trials excluded from the mean",
    "repetition": "independent repetition index (fresh dataset)",
    "estimator": "estimator kind: dv or nwj",
    "b_eval": "evaluation batch size b'",
    "estimate": "repetition-level average estimate over trials, nats",
    "estimate_mean_bits": "estimate_mean converted to bits",
    "estimate_bits": "estimate converted to bits",
    "truth_bits": "truth_nats converted to bits",
}

_LN2 = float(np.log(2.0))


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment: what to run, on which channel, with which estimator
    settings, and where to write the result."""

    kind: str
    channel: DwtcParams
    estimator: EstimatorConfig
    sweep_values: tuple = ()
    k_values: tuple = ()
    repetitions: int = 1
    output_path: str | None = None
    analytic_critic: bool = False
    bits: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigurationError(
                f"kind must be one of {EXPERIMENT_KINDS}, got {self.kind!r}"
            )
        if self.repetitions < 1:
            raise ConfigurationError(f"repetitions must be >= 1, got {self.repetitions}")
        if self.workers < 1:
            raise ConfigurationError(f"workers must be >= 1, got {self.workers}")
        if self.kind in ("sweep_sigma2", "bias_boxplot"):
            values = list(self.sweep_values)
            if not values:
                raise ConfigurationError(f"{self.kind} requires non-empty sweep values")
            if values != sorted(values):
                raise ConfigurationError("sweep values must be sorted ascending")
        if self.kind == "sweep_sigma2":
            if any(v < 0 for v in self.sweep_values):
                raise ConfigurationError("sigma2 sweep values must be >= 0")
            if not self.k_values:
                raise ConfigurationError("sweep_sigma2 requires at least one k value")
            for k in self.k_values:
                if k < 1 or self.estimator.b % k:
                    raise ConfigurationError(
                        f"every swept k must divide b={self.estimator.b}, got k={k}"
                    )
        if self.kind == "bias_boxplot":
            for b_eval in self.sweep_values:
                if int(b_eval) != b_eval or b_eval < 1:
                    raise ConfigurationError(
                        f"b' grid must hold positive integers, got {b_eval}"
                    )
                if not self.analytic_critic and b_eval % self.estimator.k:
                    raise ConfigurationError(
                        f"every b' must be a multiple of k={self.estimator.k}, got {b_eval}"
                    )


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat()


def _metadata(spec: ExperimentSpec) -> dict:
    return {
        "kind": spec.kind,
        "channel": {
            "power": spec.channel.power,
            "sigma1_sq": spec.channel.sigma1_sq,
            "sigma2_sq": spec.channel.sigma2_sq,
            "n": spec.channel.n,
            "seed": spec.channel.seed,
        },
        "estimator": spec.estimator.resolved(),
        "sweep_values": list(spec.sweep_values),
        "k_values": list(spec.k_values),
        "repetitions": spec.repetitions,
        "analytic_critic": spec.analytic_critic,
        "bits": spec.bits,
        "backend": active_backend(),
        "rng_scheme": RNG_SCHEME,
    }


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_rows_csv(path, title: str, metadata: dict, columns, rows) -> None:
    """CSV with a commented header: resolved config, a timestamp isolated
    on its own line, and one doc line per column."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {title}\n")
        fh.write(f"# config: {json.dumps(metadata, sort_keys=True)}\n")
        fh.write(f"# timestamp: {_timestamp()}\n")
        for name in columns:
            doc = _COLUMN_DOCS.get(name, "")
            fh.write(f"# column {name}: {doc}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_format_cell(row[name]) for name in columns) + "\n")


def _log(message: str) -> None:
    print(message, file=sys.stderr, flush=True)


def run_single(spec: ExperimentSpec, progress: bool = False) -> EstimateReport:
    """Generate the channel dataset, run the Monte Carlo estimation, and
    (optionally) write the JSON report."""
    if spec.kind != "single_estimate":
        raise ConfigurationError(f"run_single expects kind=single_estimate, got {spec.kind}")
    data = sample_dwtc(spec.channel)
    spec.estimator.validate_for(data)
    truth = analytic_cmi(spec.channel.power, spec.channel.sigma1_sq, spec.channel.sigma2_sq)
    callback = None
    if progress:
        callback = lambda index, value: _log(
            f"trial {index + 1}/{spec.estimator.trials}: "
            + ("failed" if value is None else f"{value:.4f} nats")
        )
    report = run_estimation(data, spec.estimator, ground_truth=truth, progress=callback)
    if spec.output_path:
        report.to_json(spec.output_path, timestamp=_timestamp())
    return report


def _sweep_cell(args) -> dict:
    channel, estimator, sigma2, k, sigma_index, cell_index = args
    params = replace(
        channel,
        sigma2_sq=float(sigma2) ** 2,
        seed=_derive_seed(channel.seed, _DOM_SWEEP_DATA, sigma_index),
    )
    config = replace(
        estimator,
        k=k,
        master_seed=_derive_seed(estimator.master_seed, _DOM_SWEEP_CELL, cell_index),
    )
    data = sample_dwtc(params)
    config.validate_for(data)
    truth = analytic_cmi(params.power, params.sigma1_sq, params.sigma2_sq)
    report = run_estimation(data, config, ground_truth=truth)
    std = None if report.sample_variance is None else float(np.sqrt(report.sample_variance))
    return {
        "sigma2": float(sigma2),
        "k": int(k),
        "estimate_mean": report.mean,
        "estimate_std": std,
        "truth_nats": truth,
        "failed_trials": len(report.failed_trials),
    }


def _map_tasks(worker, tasks, workers: int):
    if workers == 1 or len(tasks) == 1:
        for task in tasks:
            yield worker(task)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(worker, tasks)


def _add_bits(rows, columns, nat_fields) -> tuple[list[dict], tuple]:
    extended = []
    for row in rows:
        row = dict(row)
        for name in nat_fields:
            bits_name = name.replace("_nats", "") + "_bits" if name.endswith("_nats") else name + "_bits"
            value = row[name]
            row[bits_name] = None if value is None else value / _LN2
        extended.append(row)
    extra = tuple(
        (name.replace("_nats", "") + "_bits" if name.endswith("_nats") else name + "_bits")
        for name in nat_fields
    )
    return extended, columns + extra


def run_sigma2_sweep(spec: ExperimentSpec, progress: bool = False) -> list[dict]:
    """One row per (sigma2, k): Monte Carlo mean, spread, and the analytic
    value. Each sigma2 point gets a fresh dataset; every cell derives its
    own seeds, so results are independent of scheduling."""
    if spec.kind != "sweep_sigma2":
        raise ConfigurationError(f"run_sigma2_sweep expects kind=sweep_sigma2, got {spec.kind}")
    tasks = []
    cell_index = 0
    for sigma_index, sigma2 in enumerate(spec.sweep_values):
        for k in spec.k_values:
            tasks.append((spec.channel, spec.estimator, sigma2, k, sigma_index, cell_index))
            cell_index += 1
    rows = []
    for row in _map_tasks(_sweep_cell, tasks, spec.workers):
        rows.append(row)
        if progress:
            _log(
                f"sigma2={row['sigma2']:g} k={row['k']}: "
                f"{row['estimate_mean']:.4f} nats (truth {row['truth_nats']:.4f})"
            )
    columns = SWEEP_COLUMNS
    if spec.bits:
        rows, columns = _add_bits(rows, columns, ("estimate_mean", "truth_nats"))
    if spec.output_path:
        write_rows_csv(spec.output_path, "condmi sigma2 sweep v1", _metadata(spec), columns, rows)
    return rows


def _bias_repetition(args) -> list[dict]:
    channel, estimator, grid, analytic, rep_index = args
    truth = analytic_cmi(channel.power, channel.sigma1_sq, channel.sigma2_sq)
    sums = {(kind, b_eval): 0.0 for kind in ("dv", "nwj") for b_eval in grid}
    failed = 0
    if analytic:
        rng = np.random.default_rng(
            np.random.SeedSequence([channel.seed, _DOM_BIAS_DATA, rep_index])
        )
        for _ in range(estimator.trials):
            for b_eval in grid:
                xj, yj, zj = draw_joint(channel, b_eval, rng)
                xp, yp, zp = draw_product(channel, b_eval, rng)
                log_ratio_joint = analytic_log_ratio(xj, yj, zj, channel)
                log_ratio_prod = analytic_log_ratio(xp, yp, zp, channel)
                sums["dv", b_eval] += estimate_dv(1.0 + log_ratio_joint, 1.0 + log_ratio_prod)
                sums["nwj", b_eval] += estimate_nwj_from_log_ratio(log_ratio_joint, log_ratio_prod)
    else:
        params = replace(channel, seed=_derive_seed(channel.seed, _DOM_BIAS_DATA, rep_index))
        data = sample_dwtc(params)
        config = replace(estimator, eval_batch_size=max(grid))
        config.validate_for(data)
        root = np.random.SeedSequence([estimator.master_seed, _DOM_BIAS_RUN, rep_index])
        split_ss, *trial_seeds = root.spawn(estimator.trials + 1)
        train_set, test_set = split_dataset(data, estimator.train_fraction, split_ss)
        for trial_ss in trial_seeds:
            train_ss, *eval_seeds = trial_ss.spawn(1 + len(grid))
            try:
                net = train_trial_classifier(train_set, estimator, train_ss)
            except NumericalError:
                failed += 1
                continue
            for b_eval, eval_ss in zip(grid, eval_seeds):
                omega_joint, omega_prod = evaluate_omegas(
                    net, test_set, b_eval, estimator.k, eval_ss, estimator.include_anchor
                )
                sums["dv", b_eval] += estimate_dv_from_omega(omega_joint, omega_prod)
                sums["nwj", b_eval] += estimate_nwj(omega_joint, omega_prod)
    completed = estimator.trials - failed
    return [
        {
            "repetition": rep_index,
            "estimator": kind,
            "b_eval": b_eval,
            "estimate": sums[kind, b_eval] / completed if completed else None,
            "truth_nats": truth,
            "failed_trials": failed,
        }
        for b_eval in grid
        for kind in ("dv", "nwj")
    ]


def run_bias_experiment(spec: ExperimentSpec, progress: bool = False) -> list[dict]:
    """Repetition-level averages of both estimators on shared test
    outputs, across the b' grid; one row per (repetition, estimator, b').

    With ``analytic_critic`` the exact channel log ratio replaces the
    learned classifier and the product batches are sampled exactly instead
    of via k-NN.
    """
    if spec.kind != "bias_boxplot":
        raise ConfigurationError(f"run_bias_experiment expects kind=bias_boxplot, got {spec.kind}")
    grid = tuple(int(v) for v in spec.sweep_values)
    tasks = [
        (spec.channel, spec.estimator, grid, spec.analytic_critic, rep)
        for rep in range(spec.repetitions)
    ]
    rows = []
    for rep_rows in _map_tasks(_bias_repetition, tasks, spec.workers):
        rows.extend(rep_rows)
        if progress:
            _log(f"repetition {rep_rows[0]['repetition'] + 1}/{spec.repetitions} done")
    columns = BIAS_COLUMNS
    if spec.bits:
        rows, columns = _add_bits(rows, columns, ("estimate", "truth_nats"))
    if spec.output_path:
        write_rows_csv(spec.output_path, "condmi bias comparison v1", _metadata(spec), columns, rows)
    return rows
