"""Dense feedforward classifier with a sigmoid head.

The classifier scores a concatenated (x, y, z) triple with a probability
omega in (0, 1) of belonging to the joint class. Training minimizes the
mean binary cross-entropy

    L = -(1/2b) [ sum_joint log omega + sum_prod log(1 - omega) ]

with Adam on shuffled, class-balanced minibatches. Outputs are clamped to
[OMEGA_CLIP, 1 - OMEGA_CLIP] before any logarithm so the loss and the
downstream density ratio stay finite; clamped samples carry zero gradient,
keeping backpropagation the exact derivative of the computed loss.

Inputs are standardized per coordinate with the training-batch mean and
standard deviation; the affine map is stored on the network and applied
to every later evaluation. All numerics are double precision.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import backend
from ._python_kernels import (
    IDENTITY,
    RELU,
    SIGMOID,
    bce_loss,
    bce_loss_and_grads,
    adam_apply,
)
from .exceptions import ConfigurationError, InputError, NumericalError
from .sampling import BatchPair

OMEGA_CLIP = 1e-6

_ACTIVATION_CODES = {"identity": IDENTITY, "relu": RELU, "sigmoid": SIGMOID}
_SCALE_FLOOR = 1e-12

MODEL_FORMAT = "condmi.classifier"
MODEL_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    input_dim: int
    output_dim: int
    activation: str

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ConfigurationError(
                f"layer dimensions must be positive, got {self.input_dim}->{self.output_dim}"
            )
        if self.activation not in _ACTIVATION_CODES:
            raise ConfigurationError(
                f"unknown activation {self.activation!r}; expected one of "
                f"{sorted(_ACTIVATION_CODES)}"
            )


def classifier_layers(input_dim: int, hidden_dims=(64,)) -> list[LayerSpec]:
    """ReLU hidden layers followed by a 1-unit sigmoid head.

    The default is a single hidden layer of 64 units (two weight layers).
    A second hidden layer raises the capacity enough to memorize sampling
    noise at the standard 300-epoch budget, which blows up the density
    ratio on held-out product batches; keep (64,) unless the training
    budget changes too.
    """
    dims = [input_dim, *hidden_dims]
    specs = [
        LayerSpec(dims[i], dims[i + 1], "relu") for i in range(len(dims) - 1)
    ]
    specs.append(LayerSpec(dims[-1], 1, "sigmoid"))
    return specs


@dataclass
class ClassifierNet:
    """Layer specs plus per-layer weight matrices (out, in) and bias vectors.

    ``input_mean``/``input_scale`` hold the standardization fitted by
    :func:`train_classifier` (None until trained). ``loss_trace`` records
    (epoch, full-train-batch loss) pairs from training.
    """

    specs: tuple[LayerSpec, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input_mean: np.ndarray | None = None
    input_scale: np.ndarray | None = None
    loss_trace: list[tuple[int, float]] = field(default_factory=list)

    @property
    def input_dim(self) -> int:
        return self.specs[0].input_dim

    @property
    def output_dim(self) -> int:
        return self.specs[-1].output_dim

    def act_codes(self) -> np.ndarray:
        return np.array([_ACTIVATION_CODES[s.activation] for s in self.specs], dtype=np.int32)

    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "ClassifierNet":
        return ClassifierNet(
            specs=self.specs,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            input_mean=None if self.input_mean is None else self.input_mean.copy(),
            input_scale=None if self.input_scale is None else self.input_scale.copy(),
            loss_trace=list(self.loss_trace),
        )


def _validate_specs(specs) -> tuple[LayerSpec, ...]:
    specs = tuple(specs)
    if not specs:
        raise ConfigurationError("at least one layer is required")
    for left, right in zip(specs, specs[1:]):
        if left.output_dim != right.input_dim:
            raise ConfigurationError(
                f"layer dimensions do not chain: {left.output_dim} -> {right.input_dim}"
            )
    if specs[-1].activation != "sigmoid":
        raise ConfigurationError("the final layer must use a sigmoid activation")
    if specs[-1].output_dim != 1:
        raise ConfigurationError("the final layer must have a single output unit")
    return specs


def init_network(specs, seed) -> ClassifierNet:
    """Fresh network: weights uniform on +-sqrt(1/fan_in), biases zero.

    The fan-in scaling keeps early logits near zero, so the classifier
    starts out uninformative (omega ~ 0.5). Reproducible given the seed.
    """
    specs = _validate_specs(specs)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for spec in specs:
        limit = math.sqrt(1.0 / spec.input_dim)
        weights.append(rng.uniform(-limit, limit, size=(spec.output_dim, spec.input_dim)))
        biases.append(np.zeros(spec.output_dim))
    return ClassifierNet(specs=specs, weights=weights, biases=biases)


def _standardized(net: ClassifierNet, features: np.ndarray) -> np.ndarray:
    if net.input_mean is None:
        return np.ascontiguousarray(features, dtype=np.float64)
    return np.ascontiguousarray((features - net.input_mean) / net.input_scale)


def _check_features(net: ClassifierNet, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != net.input_dim:
        raise InputError(
            f"expected inputs of shape (n, {net.input_dim}), got {features.shape}"
        )
    if not np.isfinite(features).all():
        raise InputError("inputs contain non-finite entries")
    return features


def predict_omega(net: ClassifierNet, features: np.ndarray) -> np.ndarray:
    """Classifier outputs for a feature matrix, clamped away from {0, 1}."""
    features = _check_features(net, features)
    out = backend.kernels().forward_batch(
        net.weights, net.biases, net.act_codes(), _standardized(net, features)
    )
    return np.clip(out[:, 0], OMEGA_CLIP, 1.0 - OMEGA_CLIP)


def forward(net: ClassifierNet, x) -> float:
    """Classifier output omega for a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InputError(f"expected a 1-dimensional input, got shape {x.shape}")
    return float(predict_omega(net, x[None, :])[0])


def cross_entropy_loss(net: ClassifierNet, batch: BatchPair) -> float:
    """Mean clamped binary cross-entropy over the 2b labeled samples."""
    features = _check_features(net, batch.features())
    return bce_loss(
        net.weights,
        net.biases,
        net.act_codes(),
        _standardized(net, features),
        batch.labels(),
        OMEGA_CLIP,
    )


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def all_finite(self) -> bool:
        return all(np.isfinite(g).all() for g in self.weights) and all(
            np.isfinite(g).all() for g in self.biases
        )


def backward(net: ClassifierNet, batch: BatchPair) -> Gradients:
    """Gradients of :func:`cross_entropy_loss` w.r.t. every weight and bias."""
    features = _check_features(net, batch.features())
    _, grad_w, grad_b = bce_loss_and_grads(
        net.weights,
        net.biases,
        net.act_codes(),
        _standardized(net, features),
        batch.labels(),
        OMEGA_CLIP,
    )
    return Gradients(weights=grad_w, biases=grad_b)


@dataclass
class AdamState:
    """First/second moment estimates, one tensor per parameter tensor."""

    m_weights: list[np.ndarray]
    v_weights: list[np.ndarray]
    m_biases: list[np.ndarray]
    v_biases: list[np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_net(cls, net: ClassifierNet, beta1=0.9, beta2=0.999, epsilon=1e-8):
        return cls(
            m_weights=[np.zeros_like(w) for w in net.weights],
            v_weights=[np.zeros_like(w) for w in net.weights],
            m_biases=[np.zeros_like(b) for b in net.biases],
            v_biases=[np.zeros_like(b) for b in net.biases],
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


def adam_step(net: ClassifierNet, grads: Gradients, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update of the network, in place."""
    if lr <= 0:
        raise ConfigurationError(f"learning rate must be positive, got {lr}")
    for g, p in zip(grads.weights + grads.biases, net.weights + net.biases):
        if g.shape != p.shape:
            raise ConfigurationError(
                f"gradient shape {g.shape} does not match parameter shape {p.shape}"
            )
    if not grads.all_finite():
        raise NumericalError("non-finite gradients in Adam update")
    state.step_count += 1
    for layer in range(len(net.weights)):
        adam_apply(
            net.weights[layer], grads.weights[layer],
            state.m_weights[layer], state.v_weights[layer],
            state.step_count, lr, state.beta1, state.beta2, state.epsilon,
        )
        adam_apply(
            net.biases[layer], grads.biases[layer],
            state.m_biases[layer], state.v_biases[layer],
            state.step_count, lr, state.beta1, state.beta2, state.epsilon,
        )


def _balanced_order(b: int, half: int, rng: np.random.Generator) -> np.ndarray:
    """Row order over the stacked (joint ++ prod) matrix such that every
    consecutive chunk of 2*half rows holds `half` of each class."""
    perm_joint = rng.permutation(b)
    perm_prod = rng.permutation(b)
    order = np.empty(2 * b, dtype=np.int64)
    pos = 0
    for start in range(0, b, half):
        block_j = perm_joint[start : start + half]
        block_p = perm_prod[start : start + half]
        order[pos : pos + block_j.shape[0]] = block_j
        pos += block_j.shape[0]
        order[pos : pos + block_p.shape[0]] = block_p + b
        pos += block_p.shape[0]
    return order


def _full_batch_loss(net: ClassifierNet, X: np.ndarray, labels: np.ndarray) -> float:
    out = backend.kernels().forward_batch(net.weights, net.biases, net.act_codes(), X)
    omega = np.clip(out[:, 0], OMEGA_CLIP, 1.0 - OMEGA_CLIP)
    return float(-np.mean(labels * np.log(omega) + (1.0 - labels) * np.log1p(-omega)))


def train_classifier(
    net: ClassifierNet,
    train_batch: BatchPair,
    epochs: int,
    lr: float,
    minibatch_size: int = 4096,
    seed=0,
    record_full_loss: bool = False,
) -> ClassifierNet:
    """Train a copy of `net` on the labeled batch pair.

    Runs `epochs` full passes over the 2b samples in shuffled balanced
    minibatches (half joint, half prod; the final partial minibatch is
    kept). Input standardization is fitted here from the training batch.
    The returned network records the full-train-batch loss after the first
    and last epoch (every epoch with ``record_full_loss=True``).

    Raises :class:`NumericalError` with the epoch index if the loss goes
    non-finite.
    """
    if epochs < 1:
        raise ConfigurationError(f"epochs must be >= 1, got {epochs}")
    if minibatch_size < 2 or minibatch_size % 2:
        raise ConfigurationError(
            f"minibatch_size must be even and >= 2, got {minibatch_size}"
        )
    if lr <= 0:
        raise ConfigurationError(f"learning rate must be positive, got {lr}")

    trained = net.copy()
    features = _check_features(net, train_batch.features())
    mean = features.mean(axis=0)
    sd = features.std(axis=0)
    trained.input_mean = mean
    trained.input_scale = np.where(sd > _SCALE_FLOOR, sd, 1.0)
    X = np.ascontiguousarray((features - trained.input_mean) / trained.input_scale)
    labels = train_batch.labels()

    kern = backend.kernels()
    state = AdamState.for_net(trained)
    rng = np.random.default_rng(seed)
    codes = trained.act_codes()
    half = minibatch_size // 2
    trace: list[tuple[int, float]] = []

    for epoch in range(1, epochs + 1):
        order = _balanced_order(train_batch.b, half, rng)
        state.step_count, epoch_loss = kern.train_epoch(
            trained.weights,
            trained.biases,
            codes,
            X,
            labels,
            order,
            minibatch_size,
            state.m_weights,
            state.v_weights,
            state.m_biases,
            state.v_biases,
            state.step_count,
            lr,
            state.beta1,
            state.beta2,
            state.epsilon,
            OMEGA_CLIP,
        )
        if not np.isfinite(epoch_loss):
            raise NumericalError(
                f"training diverged (non-finite loss) at epoch {epoch}", epoch=epoch
            )
        if record_full_loss or epoch in (1, epochs):
            trace.append((epoch, _full_batch_loss(trained, X, labels)))
    trained.loss_trace = trace
    return trained


def gradient_check(net: ClassifierNet, batch: BatchPair, step: float) -> float:
    """Worst relative error of backpropagation against central finite
    differences of the loss, over all parameters.

    The per-component denominator is floored at 1e-4 so exactly-dead
    parameters (zero analytic and zero true gradient) do not amplify
    finite-difference roundoff into spurious error.
    """
    if step <= 0:
        raise ConfigurationError(f"finite-difference step must be positive, got {step}")
    features = _check_features(net, batch.features())
    X = _standardized(net, features)
    labels = batch.labels()
    codes = net.act_codes()
    _, grad_w, grad_b = bce_loss_and_grads(
        net.weights, net.biases, codes, X, labels, OMEGA_CLIP
    )
    worst = 0.0
    for params, grads in ((net.weights, grad_w), (net.biases, grad_b)):
        for p, g in zip(params, grads):
            flat_p = p.reshape(-1)
            flat_g = g.reshape(-1)
            for i in range(flat_p.shape[0]):
                orig = flat_p[i]
                flat_p[i] = orig + step
                up = bce_loss(net.weights, net.biases, codes, X, labels, OMEGA_CLIP)
                flat_p[i] = orig - step
                down = bce_loss(net.weights, net.biases, codes, X, labels, OMEGA_CLIP)
                flat_p[i] = orig
                numeric = (up - down) / (2.0 * step)
                err = abs(numeric - flat_g[i]) / max(abs(numeric), abs(flat_g[i]), 1e-4)
                worst = max(worst, err)
    return worst


def _encode(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode()


def _decode(text: str, shape) -> np.ndarray:
    return np.frombuffer(base64.b64decode(text), dtype="<f8").reshape(shape).copy()


def save_model(net: ClassifierNet, path) -> None:
    """Serialize the network to a versioned JSON container (float64,
    little-endian, base64 payloads; round-trips bit-exactly)."""
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "dtype": "float64",
        "byte_order": "little",
        "layers": [
            {"input_dim": s.input_dim, "output_dim": s.output_dim, "activation": s.activation}
            for s in net.specs
        ],
        "weights": [_encode(w) for w in net.weights],
        "biases": [_encode(b) for b in net.biases],
        "input_mean": None if net.input_mean is None else _encode(net.input_mean),
        "input_scale": None if net.input_scale is None else _encode(net.input_scale),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> ClassifierNet:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise InputError(
            f"unsupported model container: format={doc.get('format')!r} "
            f"version={doc.get('version')!r}"
        )
    specs = _validate_specs(
        LayerSpec(l["input_dim"], l["output_dim"], l["activation"]) for l in doc["layers"]
    )
    weights = [
        _decode(text, (s.output_dim, s.input_dim))
        for text, s in zip(doc["weights"], specs)
    ]
    biases = [_decode(text, (s.output_dim,)) for text, s in zip(doc["biases"], specs)]
    d = specs[0].input_dim
    mean = None if doc["input_mean"] is None else _decode(doc["input_mean"], (d,))
    scale = None if doc["input_scale"] is None else _decode(doc["input_scale"], (d,))
    return ClassifierNet(
        specs=specs, weights=weights, biases=biases, input_mean=mean, input_scale=scale
    )
