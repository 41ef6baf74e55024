"""Degraded wiretap channel with additive Gaussian noise, plus the
closed-form quantities used to verify the estimators.

Model: X ~ N(0, P), Y = X + N1, Z = Y + N2 with N1 ~ N(0, sigma1_sq) and
N2 ~ N(0, sigma2_sq) independent, so X - Y - Z is a Markov chain. For this
model both conditionals of X are Gaussian:

    p(x | y, z) = p(x | y) = N(P y / (P + s1), P s1 / (P + s1))
    p(x | z)            = N(P z / (P + s1 + s2), P (s1 + s2) / (P + s1 + s2))

with s1 = sigma1_sq, s2 = sigma2_sq, which gives the exact conditional
mutual information and the exact log density ratio below.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError
from .sampling import Dataset


@dataclass(frozen=True)
class DwtcParams:
    """Channel and sampling settings: input power, the two noise
    variances, the sample count, and the draw seed."""

    power: float
    sigma1_sq: float
    sigma2_sq: float
    n: int
    seed: int

    def __post_init__(self):
        if self.power <= 0:
            raise ConfigurationError(f"power must be positive, got {self.power}")
        if self.sigma1_sq <= 0:
            raise ConfigurationError(f"sigma1_sq must be positive, got {self.sigma1_sq}")
        if self.sigma2_sq < 0:
            raise ConfigurationError(f"sigma2_sq must be >= 0, got {self.sigma2_sq}")
        if self.n < 1:
            raise ConfigurationError(f"n must be >= 1, got {self.n}")


def x_given_y(params: DwtcParams) -> tuple[float, float]:
    """(coefficient, variance) of p(x|y) = N(coef * y, var)."""
    denom = params.power + params.sigma1_sq
    return params.power / denom, params.power * params.sigma1_sq / denom


def x_given_z(params: DwtcParams) -> tuple[float, float]:
    """(coefficient, variance) of p(x|z) = N(coef * z, var)."""
    noise = params.sigma1_sq + params.sigma2_sq
    denom = params.power + noise
    return params.power / denom, params.power * noise / denom


def draw_joint(params: DwtcParams, size: int, rng: np.random.Generator):
    """`size` i.i.d. triples from the channel joint distribution."""
    x = rng.normal(0.0, np.sqrt(params.power), size)
    y = x + rng.normal(0.0, np.sqrt(params.sigma1_sq), size)
    z = y + rng.normal(0.0, np.sqrt(params.sigma2_sq), size)
    return x, y, z


def draw_product(params: DwtcParams, size: int, rng: np.random.Generator):
    """`size` i.i.d. triples from p(x|z) p(y,z): (y, z) from the channel,
    then x redrawn from the exact conditional given z."""
    x0, y, z = draw_joint(params, size, rng)
    del x0
    coef, var = x_given_z(params)
    x = coef * z + rng.normal(0.0, np.sqrt(var), size)
    return x, y, z


def sample_dwtc(params: DwtcParams) -> Dataset:
    """Dataset of n scalar triples from the channel (deterministic given
    the seed)."""
    rng = np.random.default_rng(params.seed)
    x, y, z = draw_joint(params, params.n, rng)
    return Dataset(x, y, z)


def sample_dwtc_product(params: DwtcParams) -> Dataset:
    """Dataset of n scalar triples from p(x|z) p(y,z) (exact sampler, used
    to validate estimators without the k-NN construction)."""
    rng = np.random.default_rng(params.seed)
    x, y, z = draw_product(params, params.n, rng)
    return Dataset(x, y, z)


def analytic_cmi(power: float, sigma1_sq: float, sigma2_sq: float) -> float:
    """I(X;Y|Z) in nats for the Gaussian model:
    (1/2) ln(1 + P/s1) - (1/2) ln(1 + P/(s1 + s2)).

    Zero when sigma2_sq = 0 and increasing in sigma2_sq; the sigma2 -> inf
    limit is the main-channel value (1/2) ln(1 + P/s1).
    """
    if power <= 0 or sigma1_sq <= 0 or sigma2_sq < 0:
        raise ConfigurationError(
            f"invalid channel parameters P={power}, s1={sigma1_sq}, s2={sigma2_sq}"
        )
    return 0.5 * np.log1p(power / sigma1_sq) - 0.5 * np.log1p(
        power / (sigma1_sq + sigma2_sq)
    )


def analytic_log_ratio(x, y, z, params: DwtcParams):
    """ln p(x|y,z) - ln p(x|z) evaluated with the exact Gaussian
    conditionals. Degenerate case sigma2_sq = 0 (both conditionals
    coincide) returns 0 by definition.

    Accepts scalars or equally-shaped arrays; vectorizes elementwise.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if params.sigma2_sq == 0:
        out = np.zeros(np.broadcast(x, y, z).shape)
        return float(out) if out.ndim == 0 else out
    c1, v1 = x_given_y(params)
    c2, v2 = x_given_z(params)
    r1 = x - c1 * y
    r2 = x - c2 * z
    out = -(r1 * r1) / (2.0 * v1) + (r2 * r2) / (2.0 * v2) + 0.5 * np.log(v2 / v1)
    return float(out) if out.ndim == 0 else out


def sample_conditionally_independent(
    n: int, seed, signal_sd: float = 1.0, noise_sd: float = 1.0
) -> Dataset:
    """Null-model dataset with X independent of Y given Z (true CMI = 0):
    Z ~ N(0, signal_sd^2), X = Z + eps_x, Y = Z + eps_y with independent
    N(0, noise_sd^2) noises."""
    if n < 1:
        raise ConfigurationError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    z = rng.normal(0.0, signal_sd, n)
    x = z + rng.normal(0.0, noise_sd, n)
    y = z + rng.normal(0.0, noise_sd, n)
    return Dataset(x, y, z)
