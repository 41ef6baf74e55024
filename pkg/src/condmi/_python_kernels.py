"""Pure-numpy training and inference kernels.

This is the fallback backend; ``condmi._speedups`` implements the same
two entry points (``forward_batch`` and ``train_epoch``) in Cython on top
of BLAS. Both backends must agree numerically, so every formula here is
mirrored there.

Conventions: weights are (out, in) row-major float64, biases (out,),
activations coded per layer (0 identity, 1 relu, 2 sigmoid). The loss is
the mean binary cross-entropy with the sigmoid output clamped to
[clip, 1-clip]; clamped samples contribute zero gradient, which keeps the
analytic gradient the exact derivative of the computed loss.
"""

from __future__ import annotations

import numpy as np

NAME = "python"

IDENTITY = 0
RELU = 1
SIGMOID = 2


def _sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _activate(z: np.ndarray, code: int) -> np.ndarray:
    if code == RELU:
        return np.maximum(z, 0.0)
    if code == SIGMOID:
        return _sigmoid(z)
    return z


def forward_batch(weights, biases, act_codes, X) -> np.ndarray:
    """Activations of the final layer for every row of X."""
    h = X
    for W, b, code in zip(weights, biases, act_codes):
        h = _activate(h @ W.T + b, int(code))
    return h


def _forward_cached(weights, biases, act_codes, X):
    hs = [X]
    for W, b, code in zip(weights, biases, act_codes):
        hs.append(_activate(hs[-1] @ W.T + b, int(code)))
    return hs


def _clamped_bce(omega: np.ndarray, labels: np.ndarray, clip: float):
    wc = np.clip(omega, clip, 1.0 - clip)
    loss = float(-np.mean(labels * np.log(wc) + (1.0 - labels) * np.log1p(-wc)))
    return wc, loss


def bce_loss(weights, biases, act_codes, X, labels, clip: float) -> float:
    """Mean clamped cross-entropy of the sigmoid head on (X, labels)."""
    omega = forward_batch(weights, biases, act_codes, X)[:, 0]
    return _clamped_bce(omega, labels, clip)[1]


def bce_loss_and_grads(weights, biases, act_codes, X, labels, clip: float):
    """Loss plus its exact gradients w.r.t. every weight and bias."""
    hs = _forward_cached(weights, biases, act_codes, X)
    omega = hs[-1][:, 0]
    wc, loss = _clamped_bce(omega, labels, clip)
    m = X.shape[0]
    delta = (np.where(omega == wc, wc - labels, 0.0) / m)[:, None]
    n_layers = len(weights)
    grad_w = [None] * n_layers
    grad_b = [None] * n_layers
    for layer in reversed(range(n_layers)):
        grad_w[layer] = delta.T @ hs[layer]
        grad_b[layer] = delta.sum(axis=0)
        if layer:
            dh = delta @ weights[layer]
            h = hs[layer]
            code = int(act_codes[layer - 1])
            if code == RELU:
                delta = dh * (h > 0.0)
            elif code == SIGMOID:
                delta = dh * h * (1.0 - h)
            else:
                delta = dh
    return loss, grad_w, grad_b


def adam_apply(param, grad, m, v, step, lr, beta1, beta2, eps) -> None:
    """One bias-corrected Adam update, in place."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * np.square(grad)
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    param -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def train_epoch(
    weights,
    biases,
    act_codes,
    X,
    labels,
    order,
    minibatch_size,
    m_w,
    v_w,
    m_b,
    v_b,
    step_count,
    lr,
    beta1,
    beta2,
    adam_eps,
    omega_clip,
):
    """One pass over `order` in consecutive minibatch_size chunks.

    Mutates parameters and Adam moments in place; returns the new step
    count and the sample-weighted mean minibatch loss of the epoch.
    """
    n = order.shape[0]
    total = 0.0
    for start in range(0, n, minibatch_size):
        idx = order[start : start + minibatch_size]
        loss, grad_w, grad_b = bce_loss_and_grads(
            weights, biases, act_codes, X[idx], labels[idx], omega_clip
        )
        total += loss * idx.shape[0]
        step_count += 1
        for layer in range(len(weights)):
            adam_apply(
                weights[layer], grad_w[layer], m_w[layer], v_w[layer],
                step_count, lr, beta1, beta2, adam_eps,
            )
            adam_apply(
                biases[layer], grad_b[layer], m_b[layer], v_b[layer],
                step_count, lr, beta1, beta2, adam_eps,
            )
    return step_count, total / n
