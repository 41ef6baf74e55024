"""Cross-backend agreement: the compiled kernels must match the
pure-numpy fallback everywhere the two are interchangeable."""

import numpy as np
import pytest

from condmi import backend
from condmi.nn import classifier_layers, init_network, train_classifier
from condmi.sampling import BatchPair, Dataset

from conftest import make_pair

needs_compiled = pytest.mark.skipif(
    "compiled" not in backend.available_backends(),
    reason="compiled extension not built",
)


def test_a_backend_is_always_available():
    assert backend.active_backend() in ("compiled", "python")
    assert "python" in backend.available_backends()


def test_use_restores_previous_backend():
    before = backend.active_backend()
    with backend.use("python"):
        assert backend.active_backend() == "python"
    assert backend.active_backend() == before


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        backend.get_kernels("gpu")


@needs_compiled
class TestCompiledMatchesPython:
    def test_forward_batch(self, rng):
        net = init_network(classifier_layers(5, (32, 16)), seed=3)
        X = rng.normal(size=(200, 5))
        outs = {}
        for name in ("compiled", "python"):
            kern = backend.get_kernels(name)
            outs[name] = kern.forward_batch(net.weights, net.biases, net.act_codes(), X)
        np.testing.assert_allclose(outs["compiled"], outs["python"], rtol=1e-13, atol=1e-15)

    def test_single_epoch_updates(self, rng):
        pair = make_pair(128, rng, separation=0.6)
        X = np.ascontiguousarray(pair.features())
        labels = pair.labels()
        order = rng.permutation(256).astype(np.int64)
        results = {}
        for name in ("compiled", "python"):
            net = init_network(classifier_layers(3, (16,)), seed=9)
            m_w = [np.zeros_like(w) for w in net.weights]
            v_w = [np.zeros_like(w) for w in net.weights]
            m_b = [np.zeros_like(b) for b in net.biases]
            v_b = [np.zeros_like(b) for b in net.biases]
            kern = backend.get_kernels(name)
            step, loss = kern.train_epoch(
                net.weights, net.biases, net.act_codes(), X, labels, order, 64,
                m_w, v_w, m_b, v_b, 0, 2e-3, 0.9, 0.999, 1e-8, 1e-6,
            )
            results[name] = (step, loss, net.weights, net.biases)
        assert results["compiled"][0] == results["python"][0] == 4
        assert results["compiled"][1] == pytest.approx(results["python"][1], rel=1e-12)
        for a, b in zip(results["compiled"][2], results["python"][2]):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)
        for a, b in zip(results["compiled"][3], results["python"][3]):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)

    def test_short_training_run(self, rng):
        pair = make_pair(200, rng, separation=1.0)
        net = init_network(classifier_layers(3, (16,)), seed=4)
        trained = {}
        for name in ("compiled", "python"):
            with backend.use(name):
                trained[name] = train_classifier(
                    net, pair, epochs=30, lr=2e-3, minibatch_size=50, seed=8
                )
        for a, b in zip(trained["compiled"].weights, trained["python"].weights):
            np.testing.assert_allclose(a, b, rtol=1e-8, atol=1e-12)
        for (_, la), (_, lb) in zip(
            trained["compiled"].loss_trace, trained["python"].loss_trace
        ):
            assert la == pytest.approx(lb, rel=1e-9)

    def test_partial_final_minibatch(self, rng):
        # 2b = 36 rows with minibatch 16 leaves a 4-row tail chunk
        pair = make_pair(18, rng, separation=0.5)
        results = {}
        for name in ("compiled", "python"):
            with backend.use(name):
                results[name] = train_classifier(
                    pair_net(), pair, epochs=3, lr=1e-3, minibatch_size=16, seed=2
                )
        for a, b in zip(results["compiled"].weights, results["python"].weights):
            np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-14)


def pair_net():
    return init_network(classifier_layers(3, (8,)), seed=6)
