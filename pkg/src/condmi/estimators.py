"""Variational estimators of conditional mutual information and the
Monte Carlo driver that ties sampling, training, and evaluation together.

Given classifier outputs omega on a joint batch and a product batch, the
plug-in density ratio is lambda = omega / (1 - omega) and the critic that
tightens the linearized bound is f = 1 + ln lambda. Two batch estimates
are supported (all in nats):

* DV (log-partition form, upward-biased under Monte Carlo averaging):
      I_DV  = mean_joint(f) - ln mean_prod(exp f)
* NWJ (linearized, unbiased under averaging):
      I_NWJ = 1 + mean_joint(ln lambda) - mean_prod(lambda)

The driver splits a dataset once, then per trial draws fresh train
batches, trains a fresh classifier, draws fresh test batches, and
evaluates the configured estimator on the test outputs; trial streams
derive deterministically from (master_seed, trial index).
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass

import numpy as np

from . import backend
from .exceptions import ConfigurationError, InputError, NumericalError
from .nn import OMEGA_CLIP, classifier_layers, init_network, predict_omega, train_classifier
from .sampling import RNG_SCHEME, Dataset, sample_batch_pair, split_dataset

ESTIMATOR_KINDS = ("nwj", "dv")

REPORT_SCHEMA_VERSION = 1


def _clip_omega(omega) -> np.ndarray:
    return np.clip(np.asarray(omega, dtype=np.float64), OMEGA_CLIP, 1.0 - OMEGA_CLIP)


def density_ratio(omega):
    """Plug-in density ratio lambda = omega / (1 - omega)."""
    omega = _clip_omega(omega)
    return omega / (1.0 - omega)


def log_density_ratio(omega):
    """ln lambda, computed as ln(omega) - ln(1 - omega)."""
    omega = _clip_omega(omega)
    return np.log(omega) - np.log1p(-omega)


def optimal_critic(omega):
    """Critic value 1 + ln lambda that makes the linearized bound tight."""
    return 1.0 + log_density_ratio(omega)


def _as_batch(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise InputError(f"{name} must be non-empty")
    if not np.isfinite(arr).all():
        raise InputError(f"{name} contains non-finite entries")
    return arr


def _paired_batches(a, b, name_a: str, name_b: str):
    a = _as_batch(a, name_a)
    b = _as_batch(b, name_b)
    if a.shape[0] != b.shape[0]:
        raise InputError(
            f"{name_a} and {name_b} must have equal length, got {a.shape[0]} vs {b.shape[0]}"
        )
    return a, b


def _logmeanexp(values: np.ndarray) -> float:
    shift = values.max()
    return float(shift + np.log(np.mean(np.exp(values - shift))))


def estimate_dv(f_joint, f_prod) -> float:
    """DV estimate mean(f_joint) - ln mean(exp f_prod), with a max-shifted
    log-sum-exp for the second term."""
    f_joint, f_prod = _paired_batches(f_joint, f_prod, "f_joint", "f_prod")
    value = float(np.mean(f_joint)) - _logmeanexp(f_prod)
    if not math.isfinite(value):
        raise NumericalError("DV estimate overflowed despite log-sum-exp shifting")
    return value


def estimate_nwj(omega_joint, omega_prod) -> float:
    """NWJ estimate 1 + mean(ln lambda_joint) - mean(lambda_prod)."""
    omega_joint, omega_prod = _paired_batches(omega_joint, omega_prod, "omega_joint", "omega_prod")
    return float(
        1.0 + np.mean(log_density_ratio(omega_joint)) - np.mean(density_ratio(omega_prod))
    )


def estimate_dv_from_omega(omega_joint, omega_prod) -> float:
    """DV estimate with the plug-in critic 1 + ln lambda substituted."""
    omega_joint, omega_prod = _paired_batches(omega_joint, omega_prod, "omega_joint", "omega_prod")
    return estimate_dv(optimal_critic(omega_joint), optimal_critic(omega_prod))


def estimate_nwj_from_log_ratio(log_ratio_joint, log_ratio_prod) -> float:
    """NWJ estimate from log density ratios directly (no omega detour):
    1 + mean(joint ratios) - mean(exp prod ratios)."""
    lj, lp = _paired_batches(log_ratio_joint, log_ratio_prod, "log_ratio_joint", "log_ratio_prod")
    return float(1.0 + np.mean(lj) - np.mean(np.exp(lp)))


def estimate_dv_from_log_ratio(log_ratio_joint, log_ratio_prod) -> float:
    """DV estimate from log density ratios directly."""
    lj, lp = _paired_batches(log_ratio_joint, log_ratio_prod, "log_ratio_joint", "log_ratio_prod")
    value = float(np.mean(lj)) - _logmeanexp(lp)
    if not math.isfinite(value):
        raise NumericalError("DV estimate overflowed despite log-sum-exp shifting")
    return value


@dataclass(frozen=True)
class EstimatorConfig:
    """Every knob of one estimation run.

    ``eval_batch_size`` is the test-batch size b' and defaults to ``b``;
    ``resplit_per_trial`` redraws the train/test split inside every trial
    instead of once up front.
    """

    k: int
    b: int
    trials: int = 20
    epochs: int = 300
    lr: float = 2e-3
    minibatch_size: int = 4096
    train_fraction: float = 0.5
    master_seed: int = 0
    estimator_kind: str = "nwj"
    eval_batch_size: int | None = None
    hidden_dims: tuple[int, ...] = (64,)
    include_anchor: bool = True
    resplit_per_trial: bool = False

    def __post_init__(self):
        if self.k < 1 or self.b % self.k:
            raise ConfigurationError(f"k={self.k} must divide b={self.b}")
        if self.trials < 1:
            raise ConfigurationError(f"trials must be >= 1, got {self.trials}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be positive, got {self.lr}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigurationError(
                f"train_fraction must be in (0, 1), got {self.train_fraction}"
            )
        if self.estimator_kind not in ESTIMATOR_KINDS:
            raise ConfigurationError(
                f"estimator_kind must be one of {ESTIMATOR_KINDS}, got {self.estimator_kind!r}"
            )
        if self.eval_batch_size is not None:
            if self.eval_batch_size < 1 or self.eval_batch_size % self.k:
                raise ConfigurationError(
                    f"eval_batch_size={self.eval_batch_size} must be a positive multiple of k={self.k}"
                )

    @property
    def b_eval(self) -> int:
        return self.b if self.eval_batch_size is None else self.eval_batch_size

    def validate_for(self, data: Dataset) -> None:
        """Check batch sizes and neighbor counts against the split sizes."""
        n_train = int(np.floor(data.n * self.train_fraction))
        n_test = data.n - n_train
        for name, size, need in (
            ("train", n_train, self.b),
            ("test", n_test, self.b_eval),
        ):
            if need > size:
                raise ConfigurationError(
                    f"batch size {need} exceeds the {name} split of {size} samples"
                )
            if size < 2 * self.k:
                raise ConfigurationError(
                    f"{name} split of {size} samples is too small for k={self.k} "
                    f"(need at least 2k)"
                )

    def resolved(self) -> dict:
        """All settings with defaults made explicit (for output metadata)."""
        doc = dataclasses.asdict(self)
        doc["eval_batch_size"] = self.b_eval
        doc["hidden_dims"] = list(self.hidden_dims)
        return doc


@dataclass
class EstimateReport:
    """Per-trial estimates plus their Monte Carlo summary.

    ``per_trial`` has one entry per trial with NaN at failed slots;
    ``mean`` and ``sample_variance`` (unbiased, T-1) are computed over the
    successful trials, the variance only when at least two succeeded.
    """

    per_trial: list[float]
    mean: float
    sample_variance: float | None
    config: EstimatorConfig
    ground_truth: float | None
    failed_trials: list[dict]
    trial_seconds: list[float]
    backend: str
    rng_scheme: str = RNG_SCHEME

    @property
    def flagged(self) -> bool:
        return bool(self.failed_trials)

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "config": self.config.resolved(),
            "per_trial": list(self.per_trial),
            "mean": self.mean,
            "sample_variance": self.sample_variance,
            "ground_truth": self.ground_truth,
            "failed_trials": list(self.failed_trials),
            "trial_seconds": list(self.trial_seconds),
            "backend": self.backend,
            "rng_scheme": self.rng_scheme,
        }

    def to_json(self, path, timestamp: str | None = None) -> None:
        doc = self.to_dict()
        if timestamp is not None:
            doc["timestamp"] = timestamp
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _summarize(values: list[float]) -> tuple[float, float | None]:
    ok = np.array([v for v in values if math.isfinite(v)])
    if ok.size == 0:
        return math.nan, None
    mean = float(ok.mean())
    variance = float(ok.var(ddof=1)) if ok.size >= 2 else None
    return mean, variance


def train_trial_classifier(train_set: Dataset, config: EstimatorConfig, trial_ss):
    """Fresh classifier for one trial: draw train batches, initialize, train."""
    ss_batch, ss_init, ss_shuffle = trial_ss.spawn(3)
    pair = sample_batch_pair(
        train_set, config.b, config.k, ss_batch, config.include_anchor
    )
    net = init_network(
        classifier_layers(train_set.feature_dim, config.hidden_dims), ss_init
    )
    return train_classifier(
        net, pair, config.epochs, config.lr, config.minibatch_size, ss_shuffle
    )


def evaluate_omegas(net, test_set: Dataset, b: int, k: int, seed, include_anchor=True):
    """Classifier outputs on fresh test batches: (omega_joint, omega_prod)."""
    pair = sample_batch_pair(test_set, b, k, seed, include_anchor)
    return (
        predict_omega(net, pair.joint.features()),
        predict_omega(net, pair.prod.features()),
    )


def _apply_estimator(kind: str, omega_joint, omega_prod) -> float:
    if kind == "nwj":
        return estimate_nwj(omega_joint, omega_prod)
    return estimate_dv_from_omega(omega_joint, omega_prod)


def run_estimation(
    data: Dataset,
    config: EstimatorConfig,
    ground_truth: float | None = None,
    progress=None,
) -> EstimateReport:
    """Monte Carlo estimation: split once, then per trial train a fresh
    classifier on fresh train batches and evaluate on fresh test batches.

    Diverged trials are recorded in ``failed_trials`` (with the trial
    index and message), excluded from the mean, and flag the report.
    ``progress``, if given, is called with (trial_index, value_or_None).
    """
    config.validate_for(data)
    root = np.random.SeedSequence(config.master_seed)
    split_ss, *trial_seeds = root.spawn(config.trials + 1)
    train_set, test_set = split_dataset(data, config.train_fraction, split_ss)

    per_trial: list[float] = []
    failed: list[dict] = []
    seconds: list[float] = []
    for index in range(config.trials):
        started = time.perf_counter()
        trial_split_ss, work_ss = trial_seeds[index].spawn(2)
        if config.resplit_per_trial:
            train_set, test_set = split_dataset(
                data, config.train_fraction, trial_split_ss
            )
        try:
            train_ss, test_ss = work_ss.spawn(2)
            net = train_trial_classifier(train_set, config, train_ss)
            omega_joint, omega_prod = evaluate_omegas(
                net, test_set, config.b_eval, config.k, test_ss, config.include_anchor
            )
            value = _apply_estimator(config.estimator_kind, omega_joint, omega_prod)
            per_trial.append(value)
        except NumericalError as exc:
            per_trial.append(math.nan)
            failed.append({"trial": index, "error": str(exc), **exc.context})
            value = None
        seconds.append(time.perf_counter() - started)
        if progress is not None:
            progress(index, value)

    mean, variance = _summarize(per_trial)
    return EstimateReport(
        per_trial=per_trial,
        mean=mean,
        sample_variance=variance,
        config=config,
        ground_truth=ground_truth,
        failed_trials=failed,
        trial_seconds=seconds,
        backend=backend.active_backend(),
    )
