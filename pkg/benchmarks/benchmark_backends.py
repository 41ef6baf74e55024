#!/usr/bin/env python3
"""Training-throughput benchmark: compiled extension vs pure-numpy backend.

Runs the classifier training loop (the pipeline's hot kernel) on a
synthetic labeled batch at a configurable scale and reports epochs/second
per backend plus the speedup. Results also sanity-check that both
backends land on the same loss.

Usage:
    python benchmarks/benchmark_backends.py [--b 10000] [--epochs 30]
"""

import argparse
import time

import numpy as np

from condmi import backend
from condmi.nn import classifier_layers, init_network, train_classifier
from condmi.sampling import BatchPair, Dataset


def synthetic_pair(b: int, seed: int) -> BatchPair:
    rng = np.random.default_rng(seed)
    joint = Dataset(rng.normal(0.3, 1.0, b), rng.normal(0.3, 1.0, b), rng.normal(0.0, 1.0, b))
    prod = Dataset(rng.normal(-0.3, 1.0, b), rng.normal(-0.3, 1.0, b), rng.normal(0.0, 1.0, b))
    return BatchPair(joint=joint, prod=prod, k=1)


def time_backend(name: str, pair: BatchPair, epochs: int, minibatch_size: int, hidden):
    net = init_network(classifier_layers(3, hidden), seed=7)
    with backend.use(name):
        start = time.perf_counter()
        trained = train_classifier(
            net, pair, epochs=epochs, lr=2e-3, minibatch_size=minibatch_size, seed=11
        )
        elapsed = time.perf_counter() - start
    return elapsed, trained.loss_trace[-1][1]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--b", type=int, default=10000, help="samples per class")
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--minibatch-size", type=int, default=4096)
    parser.add_argument("--hidden", type=int, nargs="*", default=[64])
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    pair = synthetic_pair(args.b, seed=1)
    print(
        f"training benchmark: 2x{args.b} samples, hidden={tuple(args.hidden)}, "
        f"{args.epochs} epochs, minibatch {args.minibatch_size}"
    )
    results = {}
    for name in backend.available_backends():
        best, loss = min(
            time_backend(name, pair, args.epochs, args.minibatch_size, tuple(args.hidden))
            for _ in range(args.repeats)
        )
        rate = args.epochs / best
        results[name] = (best, rate, loss)
        print(f"  {name:>8}: {best:6.2f} s  ({rate:6.1f} epochs/s, final loss {loss:.6f})")
    if len(results) == 2:
        speedup = results["python"][0] / results["compiled"][0]
        print(f"  speedup (compiled vs python): {speedup:.2f}x")
        drift = abs(results["python"][2] - results["compiled"][2])
        print(f"  final-loss agreement: |diff| = {drift:.2e}")


if __name__ == "__main__":
    main()
