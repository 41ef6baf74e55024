"""Command-line front end.

Subcommands: ``estimate`` (single Monte Carlo estimate), ``sweep``
(sigma2 grid across k values), ``bias`` (DV vs NWJ comparison across
evaluation batch sizes), ``generate`` (dataset emission), ``oracle``
(closed-form value). Settings come from built-in defaults, overridden by
an optional TOML config file, overridden by explicit flags. Progress and
diagnostics go to stderr; data goes to files and stdout only.
"""

from __future__ import annotations

import sys

import click
from click.core import ParameterSource

from .backend import active_backend
from .channels import (
    DwtcParams,
    analytic_cmi,
    sample_conditionally_independent,
    sample_dwtc,
)
from .estimators import EstimatorConfig, run_estimation
from .exceptions import ConfigurationError, InputError
from .experiments import (
    ExperimentSpec,
    run_bias_experiment,
    run_sigma2_sweep,
    run_single,
)
from .sampling import load_csv, save_csv

_LN2 = 0.6931471805599453


def _load_toml(path) -> dict:
    try:
        import tomllib as toml
    except ImportError:
        try:
            import tomli as toml
        except ImportError:
            raise click.UsageError(
                "reading TOML config files requires Python >= 3.11 or the tomli package"
            )
    with open(path, "rb") as fh:
        return toml.load(fh)


def _resolve(ctx, config: dict, section: str, mapping: dict[str, str]) -> dict:
    """Merge param values: explicit flags win over the config file, which
    wins over built-in defaults."""
    values = config.get(section, {})
    out = {}
    for param, key in mapping.items():
        from_flag = ctx.get_parameter_source(param) == ParameterSource.COMMANDLINE
        if not from_flag and key in values:
            out[param] = values[key]
        else:
            out[param] = ctx.params[param]
    return out


_CHANNEL_KEYS = {
    "power": "power",
    "sigma1_sq": "sigma1_sq",
    "sigma2": "sigma2",
    "n": "n",
    "data_seed": "seed",
}

_ESTIMATOR_KEYS = {
    "k": "k",
    "b": "b",
    "trials": "trials",
    "epochs": "epochs",
    "lr": "lr",
    "minibatch_size": "minibatch_size",
    "train_fraction": "train_fraction",
    "seed": "master_seed",
    "estimator": "estimator_kind",
    "hidden_dims": "hidden_dims",
    "exclude_anchor": "exclude_anchor",
}


def channel_options(f):
    f = click.option("--power", type=float, default=100.0, show_default=True,
                     help="Input variance P.")(f)
    f = click.option("--sigma1-sq", type=float, default=1.0, show_default=True,
                     help="Main-channel noise variance.")(f)
    f = click.option("--sigma2", type=float, default=5.0, show_default=True,
                     help="Degradation noise standard deviation (squared internally).")(f)
    f = click.option("--n", type=int, default=20000, show_default=True,
                     help="Number of sampled triples.")(f)
    f = click.option("--data-seed", type=int, default=1, show_default=True,
                     help="Seed for dataset generation.")(f)
    return f


def estimator_options(f):
    f = click.option("--k", type=int, default=40, show_default=True,
                     help="Neighbor count for product batches.")(f)
    f = click.option("--b", type=int, default=None,
                     help="Batch size (default: n/2).")(f)
    f = click.option("--trials", type=int, default=20, show_default=True,
                     help="Monte Carlo trials.")(f)
    f = click.option("--epochs", type=int, default=300, show_default=True)(f)
    f = click.option("--lr", type=float, default=2e-3, show_default=True)(f)
    f = click.option("--minibatch-size", type=int, default=4096, show_default=True)(f)
    f = click.option("--train-fraction", type=float, default=0.5, show_default=True)(f)
    f = click.option("--seed", type=int, default=0, show_default=True,
                     help="Master seed for the estimation run.")(f)
    f = click.option("--estimator", type=click.Choice(["nwj", "dv"]), default="nwj",
                     show_default=True)(f)
    f = click.option("--hidden-dims", default="64", show_default=True,
                     help="Comma-separated hidden layer widths.")(f)
    f = click.option("--exclude-anchor", is_flag=True,
                     help="Drop each anchor's own triple from its neighborhood.")(f)
    return f


def _build_channel(values: dict) -> DwtcParams:
    return DwtcParams(
        power=values["power"],
        sigma1_sq=values["sigma1_sq"],
        sigma2_sq=float(values["sigma2"]) ** 2,
        n=values["n"],
        seed=values["data_seed"],
    )


def _build_estimator(values: dict, n: int, eval_batch_size=None) -> EstimatorConfig:
    b = values["b"] if values["b"] is not None else n // 2
    hidden = values["hidden_dims"]
    if isinstance(hidden, str):
        hidden = _parse_grid(hidden, int)
    return EstimatorConfig(
        k=values["k"],
        b=b,
        trials=values["trials"],
        epochs=values["epochs"],
        lr=values["lr"],
        minibatch_size=values["minibatch_size"],
        train_fraction=values["train_fraction"],
        master_seed=values["seed"],
        estimator_kind=values["estimator"],
        eval_batch_size=eval_batch_size,
        hidden_dims=tuple(int(h) for h in hidden),
        include_anchor=not values["exclude_anchor"],
    )


def _fail_usage(exc: Exception):
    raise click.UsageError(str(exc))


def _parse_grid(text: str, cast):
    try:
        return tuple(cast(part) for part in text.split(",") if part.strip() != "")
    except ValueError:
        raise click.UsageError(f"could not parse grid {text!r}")


@click.group()
@click.version_option(package_name="condmi")
def main():
    """Conditional mutual information estimation from sampled triples."""


@main.command()
@channel_options
@estimator_options
@click.option("--eval-batch-size", type=int, default=None,
              help="Test batch size b' (default: b).")
@click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Estimate from a CSV dataset instead of simulating.")
@click.option("--ground-truth", type=float, default=None,
              help="Reference value in nats (only used with --data).")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="TOML config file; explicit flags override it.")
@click.option("--output", type=click.Path(dir_okay=False), default=None,
              help="Write the full JSON report here.")
@click.option("--bits", is_flag=True, help="Also print values in bits.")
@click.pass_context
def estimate(ctx, eval_batch_size, data_path, ground_truth, config_path, output, bits, **_):
    """Run the Monte Carlo estimation once and print the summary."""
    config = _load_toml(config_path) if config_path else {}
    channel_values = _resolve(ctx, config, "channel", _CHANNEL_KEYS)
    estimator_values = _resolve(ctx, config, "estimator", _ESTIMATOR_KEYS)
    try:
        if data_path is not None:
            data = load_csv(data_path)
            estimator = _build_estimator(estimator_values, data.n, eval_batch_size)
            estimator.validate_for(data)
            click.echo(f"estimating on {data.n} triples from {data_path}", err=True)
            report = run_estimation(data, estimator, ground_truth=ground_truth)
            if output:
                from .experiments import _timestamp

                report.to_json(output, timestamp=_timestamp())
        else:
            channel = _build_channel(channel_values)
            estimator = _build_estimator(estimator_values, channel.n, eval_batch_size)
            spec = ExperimentSpec(
                kind="single_estimate", channel=channel, estimator=estimator,
                output_path=output, bits=bits,
            )
            report = run_single(spec, progress=True)
    except (ConfigurationError, InputError) as exc:
        _fail_usage(exc)

    def show(label, value):
        if value is None:
            click.echo(f"{label}: n/a")
        elif bits:
            click.echo(f"{label}: {value:.6f} nats ({value / _LN2:.6f} bits)")
        else:
            click.echo(f"{label}: {value:.6f} nats")

    click.echo(f"backend: {report.backend}")
    show("mean estimate", report.mean)
    show("ground truth", report.ground_truth)
    if report.ground_truth is not None:
        show("abs error", abs(report.mean - report.ground_truth))
    if report.failed_trials:
        click.echo(f"warning: {len(report.failed_trials)} trial(s) failed", err=True)
        if len(report.failed_trials) == len(report.per_trial):
            sys.exit(1)


@main.command()
@channel_options
@estimator_options
@click.option("--sigma2-grid", default="0,1,2,3,4,5,6,7,8,9,10", show_default=True,
              help="Comma-separated sigma2 values (standard deviations).")
@click.option("--k-grid", default="5,20,40", show_default=True,
              help="Comma-separated neighbor counts.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None)
@click.option("--output", type=click.Path(dir_okay=False), required=True,
              help="CSV output path.")
@click.option("--workers", type=int, default=1, show_default=True,
              help="Concurrent worker processes for grid cells.")
@click.option("--bits", is_flag=True, help="Add bits columns.")
@click.pass_context
def sweep(ctx, sigma2_grid, k_grid, config_path, output, workers, bits, **_):
    """Estimate across a sigma2 grid for several k values (plot data)."""
    config = _load_toml(config_path) if config_path else {}
    channel_values = _resolve(ctx, config, "channel", _CHANNEL_KEYS)
    estimator_values = _resolve(ctx, config, "estimator", _ESTIMATOR_KEYS)
    sweep_section = config.get("sweep", {})
    if ctx.get_parameter_source("sigma2_grid") != ParameterSource.COMMANDLINE:
        sigma2_values = tuple(sweep_section.get("sigma2_values", _parse_grid(sigma2_grid, float)))
    else:
        sigma2_values = _parse_grid(sigma2_grid, float)
    if ctx.get_parameter_source("k_grid") != ParameterSource.COMMANDLINE:
        k_values = tuple(sweep_section.get("k_values", _parse_grid(k_grid, int)))
    else:
        k_values = _parse_grid(k_grid, int)
    try:
        channel = _build_channel(channel_values)
        estimator = _build_estimator(estimator_values, channel.n)
        spec = ExperimentSpec(
            kind="sweep_sigma2", channel=channel, estimator=estimator,
            sweep_values=tuple(float(v) for v in sigma2_values),
            k_values=tuple(int(v) for v in k_values),
            output_path=output, bits=bits, workers=workers,
        )
        rows = run_sigma2_sweep(spec, progress=True)
    except (ConfigurationError, InputError) as exc:
        _fail_usage(exc)
    click.echo(f"wrote {len(rows)} rows to {output}")
    if any(row["failed_trials"] == spec.estimator.trials for row in rows):
        click.echo("error: at least one grid cell had every trial fail", err=True)
        sys.exit(1)


@main.command()
@channel_options
@estimator_options
@click.option("--b-eval-grid", default="40,120,400,1200,4000", show_default=True,
              help="Comma-separated evaluation batch sizes b'.")
@click.option("--repetitions", type=int, default=50, show_default=True)
@click.option("--analytic-critic", is_flag=True,
              help="Use the exact channel log ratio instead of a learned classifier.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None)
@click.option("--output", type=click.Path(dir_okay=False), required=True,
              help="CSV output path.")
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--bits", is_flag=True, help="Add bits columns.")
@click.pass_context
def bias(ctx, b_eval_grid, repetitions, analytic_critic, config_path, output, workers,
         bits, **_):
    """Compare DV and NWJ averages across evaluation batch sizes."""
    config = _load_toml(config_path) if config_path else {}
    channel_values = _resolve(ctx, config, "channel", _CHANNEL_KEYS)
    estimator_values = _resolve(ctx, config, "estimator", _ESTIMATOR_KEYS)
    bias_section = config.get("bias", {})
    if ctx.get_parameter_source("b_eval_grid") != ParameterSource.COMMANDLINE:
        grid = tuple(bias_section.get("b_eval_values", _parse_grid(b_eval_grid, int)))
    else:
        grid = _parse_grid(b_eval_grid, int)
    if ctx.get_parameter_source("repetitions") != ParameterSource.COMMANDLINE:
        repetitions = bias_section.get("repetitions", repetitions)
    try:
        channel = _build_channel(channel_values)
        estimator = _build_estimator(estimator_values, channel.n)
        spec = ExperimentSpec(
            kind="bias_boxplot", channel=channel, estimator=estimator,
            sweep_values=tuple(int(v) for v in grid), repetitions=repetitions,
            output_path=output, analytic_critic=analytic_critic, bits=bits,
            workers=workers,
        )
        rows = run_bias_experiment(spec, progress=True)
    except (ConfigurationError, InputError) as exc:
        _fail_usage(exc)
    click.echo(f"wrote {len(rows)} rows to {output}")
    if any(row["estimate"] is None for row in rows):
        click.echo("error: at least one repetition had every trial fail", err=True)
        sys.exit(1)


@main.command()
@channel_options
@click.option("--model", type=click.Choice(["dwtc", "null"]), default="dwtc",
              show_default=True,
              help="dwtc: degraded wiretap channel; null: X independent of Y given Z.")
@click.option("--signal-sd", type=float, default=1.0, show_default=True,
              help="Null model: standard deviation of Z.")
@click.option("--noise-sd", type=float, default=1.0, show_default=True,
              help="Null model: standard deviation of the X/Y noises.")
@click.option("--output", type=click.Path(dir_okay=False), required=True,
              help="CSV output path.")
def generate(power, sigma1_sq, sigma2, n, data_seed, model, signal_sd, noise_sd, output):
    """Emit a dataset of (x, y, z) triples as CSV."""
    try:
        if model == "dwtc":
            params = DwtcParams(power=power, sigma1_sq=sigma1_sq,
                                sigma2_sq=sigma2**2, n=n, seed=data_seed)
            data = sample_dwtc(params)
        else:
            data = sample_conditionally_independent(n, data_seed, signal_sd, noise_sd)
    except (ConfigurationError, InputError) as exc:
        _fail_usage(exc)
    save_csv(data, output)
    click.echo(f"wrote {data.n} triples to {output}")


@main.command()
@click.option("--power", type=float, default=100.0, show_default=True)
@click.option("--sigma1-sq", type=float, default=1.0, show_default=True)
@click.option("--sigma2", type=float, default=5.0, show_default=True,
              help="Standard deviation (squared internally).")
@click.option("--bits", is_flag=True)
def oracle(power, sigma1_sq, sigma2, bits):
    """Print the closed-form conditional mutual information."""
    try:
        value = analytic_cmi(power, sigma1_sq, sigma2**2)
    except (ConfigurationError, InputError) as exc:
        _fail_usage(exc)
    if bits:
        click.echo(f"{value:.6f} nats ({value / _LN2:.6f} bits)")
    else:
        click.echo(f"{value:.6f} nats")


if __name__ == "__main__":
    main()
