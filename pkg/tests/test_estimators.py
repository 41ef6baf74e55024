import math

import numpy as np
import pytest

from condmi import (
    ConfigurationError,
    Dataset,
    EstimatorConfig,
    InputError,
    density_ratio,
    estimate_dv,
    estimate_dv_from_log_ratio,
    estimate_dv_from_omega,
    estimate_nwj,
    estimate_nwj_from_log_ratio,
    log_density_ratio,
    optimal_critic,
    run_estimation,
    sample_conditionally_independent,
)
from condmi import estimators


def naive_logmeanexp(values):
    """Oracle without shifting (fine at moderate magnitudes)."""
    return math.log(sum(math.exp(v) for v in values) / len(values))


class TestRatioFunctions:
    def test_uninformative_omega(self):
        assert density_ratio(0.5) == pytest.approx(1.0, abs=1e-15)
        assert optimal_critic(0.5) == pytest.approx(1.0, abs=1e-15)

    def test_simple_values(self):
        assert density_ratio(0.8) == pytest.approx(4.0, rel=1e-12)
        # invert lambda = e: omega = e / (1 + e) gives critic 2
        omega = math.e / (1.0 + math.e)
        assert optimal_critic(omega) == pytest.approx(2.0, abs=1e-12)

    def test_reciprocal_symmetry(self, rng):
        omega = rng.uniform(0.01, 0.99, size=200)
        np.testing.assert_allclose(density_ratio(omega) * density_ratio(1 - omega), 1.0, rtol=1e-12)
        np.testing.assert_allclose(
            optimal_critic(omega) + optimal_critic(1 - omega), 2.0, atol=1e-12
        )

    def test_log_ratio_consistency(self, rng):
        omega = rng.uniform(0.01, 0.99, size=100)
        np.testing.assert_allclose(
            np.exp(log_density_ratio(omega)), density_ratio(omega), rtol=1e-12
        )

    def test_clamping_keeps_values_finite(self):
        assert np.isfinite(density_ratio(1.0))
        assert np.isfinite(log_density_ratio(0.0))


class TestEstimateDv:
    def test_constant_critic_is_zero(self):
        for c in (-3.0, 0.0, 2.5):
            assert estimate_dv([c, c, c], [c, c, c]) == pytest.approx(0.0, abs=1e-12)

    def test_hand_evaluated_example(self):
        expected = 1.0 - math.log((1.0 + math.e**2) / 2.0)
        assert estimate_dv([1.0, 1.0], [0.0, 2.0]) == pytest.approx(expected, abs=1e-9)
        assert expected == pytest.approx(-0.4338, abs=1e-4)

    def test_matches_naive_logmeanexp(self, rng):
        f_joint = rng.normal(size=50)
        f_prod = rng.normal(size=50)
        expected = float(np.mean(f_joint)) - naive_logmeanexp(f_prod)
        assert estimate_dv(f_joint, f_prod) == pytest.approx(expected, abs=1e-12)

    def test_shift_invariance(self, rng):
        f_joint = rng.normal(size=100)
        f_prod = rng.normal(size=100)
        base = estimate_dv(f_joint, f_prod)
        for c in (-20.0, -1.0, 0.5, 20.0):
            assert abs(estimate_dv(f_joint + c, f_prod + c) - base) < 1e-10

    def test_stable_at_large_magnitudes(self):
        # naive exponentiation would overflow here
        assert np.isfinite(estimate_dv([800.0], [800.0]))

    def test_rejects_bad_batches(self):
        with pytest.raises(InputError):
            estimate_dv([], [])
        with pytest.raises(InputError):
            estimate_dv([1.0], [1.0, 2.0])
        with pytest.raises(InputError):
            estimate_dv([np.nan], [1.0])


class TestEstimateNwj:
    def test_uninformative_classifier_gives_zero(self):
        assert estimate_nwj([0.5, 0.5], [0.5, 0.5]) == pytest.approx(0.0, abs=1e-12)

    def test_hand_evaluated_examples(self):
        assert estimate_nwj([0.8, 0.8], [0.5, 0.5]) == pytest.approx(math.log(4.0), abs=1e-9)
        expected = 1.0 + math.log(9.0) - 9.0
        assert estimate_nwj([0.9], [0.9]) == pytest.approx(expected, abs=1e-9)
        assert expected == pytest.approx(-5.8028, abs=1e-4)

    def test_log_ratio_form_agrees(self, rng):
        omega_j = rng.uniform(0.05, 0.95, size=64)
        omega_p = rng.uniform(0.05, 0.95, size=64)
        via_omega = estimate_nwj(omega_j, omega_p)
        via_ratio = estimate_nwj_from_log_ratio(
            log_density_ratio(omega_j), log_density_ratio(omega_p)
        )
        assert via_omega == pytest.approx(via_ratio, rel=1e-12)


class TestEstimateDvFromOmega:
    def test_uninformative_classifier_gives_zero(self):
        assert estimate_dv_from_omega([0.5] * 4, [0.5] * 4) == pytest.approx(0.0, abs=1e-12)

    def test_hand_evaluated_example(self):
        assert estimate_dv_from_omega([0.8, 0.8], [0.5, 0.5]) == pytest.approx(
            math.log(4.0), abs=1e-9
        )

    def test_equals_dv_of_plugin_critic(self, rng):
        omega_j = rng.uniform(0.01, 0.99, size=32)
        omega_p = rng.uniform(0.01, 0.99, size=32)
        assert estimate_dv_from_omega(omega_j, omega_p) == pytest.approx(
            estimate_dv(optimal_critic(omega_j), optimal_critic(omega_p)), abs=1e-12
        )

    def test_dominates_nwj_everywhere(self, rng):
        """mean lambda - 1 >= log mean lambda makes DV >= NWJ pointwise."""
        for _ in range(10_000):
            size = int(rng.integers(1, 12))
            omega_j = rng.uniform(0.001, 0.999, size=size)
            omega_p = rng.uniform(0.001, 0.999, size=size)
            dv = estimate_dv_from_omega(omega_j, omega_p)
            nwj = estimate_nwj(omega_j, omega_p)
            assert dv >= nwj - 1e-12

    def test_log_ratio_form_agrees(self, rng):
        omega_j = rng.uniform(0.05, 0.95, size=16)
        omega_p = rng.uniform(0.05, 0.95, size=16)
        assert estimate_dv_from_omega(omega_j, omega_p) == pytest.approx(
            estimate_dv_from_log_ratio(
                log_density_ratio(omega_j), log_density_ratio(omega_p)
            ),
            rel=1e-12,
        )


class TestPermutationInvariance:
    def test_both_estimators(self, rng):
        omega_j = rng.uniform(0.05, 0.95, size=40)
        omega_p = rng.uniform(0.05, 0.95, size=40)
        pj, pp = rng.permutation(40), rng.permutation(40)
        assert estimate_nwj(omega_j, omega_p) == pytest.approx(
            estimate_nwj(omega_j[pj], omega_p[pp]), rel=1e-12
        )
        assert estimate_dv_from_omega(omega_j, omega_p) == pytest.approx(
            estimate_dv_from_omega(omega_j[pj], omega_p[pp]), rel=1e-12
        )


class TestEstimatorConfig:
    def test_rejects_inconsistent_settings(self):
        with pytest.raises(ConfigurationError):
            EstimatorConfig(k=3, b=10)
        with pytest.raises(ConfigurationError):
            EstimatorConfig(k=2, b=10, trials=0)
        with pytest.raises(ConfigurationError):
            EstimatorConfig(k=2, b=10, lr=0.0)
        with pytest.raises(ConfigurationError):
            EstimatorConfig(k=2, b=10, train_fraction=1.0)
        with pytest.raises(ConfigurationError):
            EstimatorConfig(k=2, b=10, estimator_kind="mine")
        with pytest.raises(ConfigurationError):
            EstimatorConfig(k=2, b=10, eval_batch_size=5)

    def test_validate_for_checks_split_sizes(self, rng):
        data = sample_conditionally_independent(100, seed=1)
        EstimatorConfig(k=5, b=40, trials=1, epochs=1).validate_for(data)
        with pytest.raises(ConfigurationError):
            EstimatorConfig(k=5, b=60, trials=1, epochs=1).validate_for(data)
        with pytest.raises(ConfigurationError):
            EstimatorConfig(k=30, b=30, trials=1, epochs=1).validate_for(data)

    def test_resolved_makes_defaults_explicit(self):
        doc = EstimatorConfig(k=5, b=50).resolved()
        assert doc["eval_batch_size"] == 50
        assert doc["minibatch_size"] > 0
        assert doc["estimator_kind"] == "nwj"


def tiny_config(**overrides):
    defaults = dict(
        k=5, b=50, trials=2, epochs=10, lr=2e-3, minibatch_size=20,
        master_seed=7, hidden_dims=(8,),
    )
    defaults.update(overrides)
    return EstimatorConfig(**defaults)


class TestRunEstimation:
    def test_report_structure_and_determinism(self):
        data = sample_conditionally_independent(300, seed=3)
        report = run_estimation(data, tiny_config(), ground_truth=0.0)
        assert len(report.per_trial) == 2
        assert report.mean == pytest.approx(np.mean(report.per_trial))
        assert report.sample_variance == pytest.approx(np.var(report.per_trial, ddof=1))
        assert not report.flagged
        assert len(report.trial_seconds) == 2
        again = run_estimation(data, tiny_config(), ground_truth=0.0)
        assert again.per_trial == report.per_trial

    def test_single_trial_has_no_variance(self):
        data = sample_conditionally_independent(300, seed=3)
        report = run_estimation(data, tiny_config(trials=1))
        assert len(report.per_trial) == 1
        assert report.sample_variance is None

    def test_dv_kind_dominates_nwj_kind(self):
        data = sample_conditionally_independent(300, seed=3)
        nwj = run_estimation(data, tiny_config(estimator_kind="nwj"))
        dv = run_estimation(data, tiny_config(estimator_kind="dv"))
        for d, n in zip(dv.per_trial, nwj.per_trial):
            assert d >= n - 1e-12

    def test_failed_trials_are_flagged_and_excluded(self, monkeypatch):
        from condmi.exceptions import NumericalError

        data = sample_conditionally_independent(300, seed=3)
        real = estimators.train_trial_classifier
        calls = {"count": 0}

        def flaky(train_set, config, trial_ss):
            calls["count"] += 1
            if calls["count"] == 1:
                raise NumericalError("injected divergence", epoch=4)
            return real(train_set, config, trial_ss)

        monkeypatch.setattr(estimators, "train_trial_classifier", flaky)
        report = run_estimation(data, tiny_config(trials=3))
        assert report.flagged
        assert report.failed_trials[0]["trial"] == 0
        assert report.failed_trials[0]["epoch"] == 4
        assert math.isnan(report.per_trial[0])
        finite = [v for v in report.per_trial if math.isfinite(v)]
        assert len(finite) == 2
        assert report.mean == pytest.approx(np.mean(finite))

    def test_resplit_per_trial_changes_values(self):
        data = sample_conditionally_independent(300, seed=3)
        fixed = run_estimation(data, tiny_config())
        resplit = run_estimation(data, tiny_config(resplit_per_trial=True))
        assert fixed.per_trial != resplit.per_trial

    def test_json_round_trip(self, tmp_path):
        import json

        data = sample_conditionally_independent(300, seed=3)
        report = run_estimation(data, tiny_config(), ground_truth=0.0)
        path = tmp_path / "report.json"
        report.to_json(path, timestamp="2020-01-01T00:00:00+00:00")
        doc = json.loads(path.read_text())
        assert doc["mean"] == report.mean
        assert doc["config"]["k"] == 5
        assert doc["ground_truth"] == 0.0
        assert doc["backend"] in ("compiled", "python")
