"""End-to-end acceptance suite.

Each test prints one PASS/FAIL line (visible with ``pytest -s`` or on
failure) and asserts its stated tolerance. The full-pipeline runs are
computed once in module-scoped fixtures; the determinism criterion
recomputes them from the same master seeds and requires bit-identical
numbers. Budget note: the two pipeline fixtures plus their determinism
reruns dominate the suite's runtime (several minutes on 2 CPUs).
"""

import math
import time

import numpy as np
import pytest

from condmi import (
    BatchPair,
    Dataset,
    DwtcParams,
    EstimatorConfig,
    analytic_cmi,
    analytic_log_ratio,
    classifier_layers,
    estimate_dv,
    estimate_dv_from_omega,
    estimate_nwj,
    estimate_nwj_from_log_ratio,
    gradient_check,
    init_network,
    knn_indices,
    run_estimation,
    sample_conditionally_independent,
    sample_dwtc,
)
from condmi.channels import draw_joint, draw_product

REFERENCE_POINT = dict(power=100.0, sigma1_sq=1.0, sigma2_sq=25.0)
TRUTH_AT_REFERENCE_POINT = 0.5 * math.log(101.0) - 0.5 * math.log(1.0 + 100.0 / 26.0)

NULL_DATA_SEED, NULL_MASTER_SEED = 1001, 2001
FIG3_DATA_SEEDS = {0.0: 1002, 5.0: 1003}
FIG3_MASTER_SEEDS = {0.0: 2002, 5.0: 2003}
BIAS_SEED, BIAS_REFERENCE_SEED = 3001, 3002


def report(name, passed, detail):
    print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}", flush=True)
    assert passed, f"{name}: {detail}"


def standard_config(master_seed):
    return EstimatorConfig(
        k=40, b=10000, trials=20, epochs=300, lr=2e-3, master_seed=master_seed
    )


def run_null_pipeline():
    data = sample_conditionally_independent(20000, seed=NULL_DATA_SEED)
    return run_estimation(data, standard_config(NULL_MASTER_SEED), ground_truth=0.0)


def run_fig3_point(sigma2):
    params = DwtcParams(
        power=100.0, sigma1_sq=1.0, sigma2_sq=sigma2**2, n=20000,
        seed=FIG3_DATA_SEEDS[sigma2],
    )
    truth = analytic_cmi(params.power, params.sigma1_sq, params.sigma2_sq)
    data = sample_dwtc(params)
    return run_estimation(data, standard_config(FIG3_MASTER_SEEDS[sigma2]), ground_truth=truth)


def run_bias_draws(seed=BIAS_SEED, draws=10_000, b_eval=50):
    params = DwtcParams(n=1, seed=0, **REFERENCE_POINT)
    rng = np.random.default_rng(seed)
    dv = np.empty(draws)
    nwj = np.empty(draws)
    for i in range(draws):
        lj = analytic_log_ratio(*draw_joint(params, b_eval, rng), params)
        lp = analytic_log_ratio(*draw_product(params, b_eval, rng), params)
        dv[i] = estimate_dv(1.0 + lj, 1.0 + lp)
        nwj[i] = estimate_nwj_from_log_ratio(lj, lp)
    return dv, nwj


@pytest.fixture(scope="module")
def null_run():
    start = time.perf_counter()
    result = run_null_pipeline()
    return result, time.perf_counter() - start


@pytest.fixture(scope="module")
def fig3_runs():
    start = time.perf_counter()
    results = {sigma2: run_fig3_point(sigma2) for sigma2 in (0.0, 5.0)}
    return results, time.perf_counter() - start


@pytest.fixture(scope="module")
def bias_draws():
    start = time.perf_counter()
    dv, nwj = run_bias_draws()
    return dv, nwj, time.perf_counter() - start


def test_criterion_1_gradient_correctness():
    """Backprop matches central finite differences (20 random nets,
    balanced batches of 16, step 1e-5, < 1e-4 relative)."""
    start = time.perf_counter()
    rng = np.random.default_rng(404)
    shapes = [(8,), (16, 8), (24,), (12, 6), (16, 16)]
    worst = 0.0
    for i in range(20):
        dims = [int(rng.integers(1, 3)) for _ in range(3)]
        d = sum(dims)
        hidden = shapes[i % len(shapes)]
        net = init_network(classifier_layers(d, hidden), seed=int(rng.integers(1 << 30)))
        assert net.parameter_count() <= 1000
        joint = Dataset(*(rng.normal(0.4, 1.0, (8, dim)) for dim in dims))
        prod = Dataset(*(rng.normal(-0.4, 1.0, (8, dim)) for dim in dims))
        batch = BatchPair(joint=joint, prod=prod, k=1)
        worst = max(worst, gradient_check(net, batch, step=1e-5))
    elapsed = time.perf_counter() - start
    report(
        "criterion 1 (gradient correctness)",
        worst < 1e-4 and elapsed < 10.0,
        f"max relative error {worst:.3e} (< 1e-4), {elapsed:.1f}s (< 10s)",
    )


def test_criterion_2_knn_exactness():
    """Exact k-NN matches a brute-force all-pairs sort, ties included
    (100 random datasets, n <= 500, dz <= 5)."""
    start = time.perf_counter()
    rng = np.random.default_rng(505)
    checked = 0
    for case in range(100):
        n = int(rng.integers(10, 501))
        dz = int(rng.integers(1, 6))
        if case % 2:
            z = rng.normal(size=(n, dz))
        else:
            z = rng.integers(0, 4, size=(n, dz)).astype(float)  # forces exact ties
        data = Dataset(np.zeros(n), np.zeros(n), z)
        for _ in range(3):
            anchor = int(rng.integers(n))
            k = int(rng.integers(1, n + 1))
            got = knn_indices(data, anchor, k)
            ref = data.z[anchor]
            d2 = [sum((v - r) ** 2 for v, r in zip(row, ref)) for row in data.z]
            want = sorted(range(n), key=lambda j: (d2[j], j))[:k]
            assert list(got) == want, f"mismatch at case {case}"
            checked += 1
    elapsed = time.perf_counter() - start
    report(
        "criterion 2 (k-NN exactness)",
        elapsed < 10.0,
        f"{checked} queries across 100 datasets match brute force, {elapsed:.1f}s (< 10s)",
    )


def test_criterion_3_estimator_algebra():
    """DV shift invariance, DV >= NWJ dominance, and the hand-evaluated
    estimator values."""
    rng = np.random.default_rng(606)
    # shift invariance, |delta| < 1e-10 for |c| <= 20
    f_joint, f_prod = rng.normal(size=200), rng.normal(size=200)
    base = estimate_dv(f_joint, f_prod)
    worst_shift = max(
        abs(estimate_dv(f_joint + c, f_prod + c) - base)
        for c in (-20.0, -7.0, -1.0, 0.3, 7.0, 20.0)
    )
    # dominance on 1e4 random omega pairs, slack 1e-12
    worst_gap = math.inf
    for _ in range(10_000):
        size = int(rng.integers(1, 16))
        omega_j = rng.uniform(1e-3, 1 - 1e-3, size)
        omega_p = rng.uniform(1e-3, 1 - 1e-3, size)
        worst_gap = min(
            worst_gap,
            estimate_dv_from_omega(omega_j, omega_p) - estimate_nwj(omega_j, omega_p),
        )
    # hand-evaluated examples, 1e-9
    examples = (
        abs(estimate_dv([1.0, 1.0], [0.0, 2.0]) - (1.0 - math.log((1.0 + math.e**2) / 2.0))),
        abs(estimate_nwj([0.8, 0.8], [0.5, 0.5]) - math.log(4.0)),
        abs(estimate_nwj([0.9], [0.9]) - (1.0 + math.log(9.0) - 9.0)),
    )
    passed = worst_shift < 1e-10 and worst_gap >= -1e-12 and max(examples) < 1e-9
    report(
        "criterion 3 (estimator algebra)",
        passed,
        f"shift drift {worst_shift:.2e} (< 1e-10), dominance slack {worst_gap:.2e} "
        f"(>= -1e-12), example error {max(examples):.2e} (< 1e-9)",
    )


def test_criterion_4_oracle_tightness():
    """The exact log ratio plugged into the linearized estimator recovers
    the closed-form value at b = 1e5 across 10 seeds."""
    start = time.perf_counter()
    params = DwtcParams(n=1, seed=0, **REFERENCE_POINT)
    errors = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        lj = analytic_log_ratio(*draw_joint(params, 100_000, rng), params)
        lp = analytic_log_ratio(*draw_product(params, 100_000, rng), params)
        estimate = estimate_nwj_from_log_ratio(lj, lp)
        errors.append(abs(estimate - TRUTH_AT_REFERENCE_POINT))
    elapsed = time.perf_counter() - start
    report(
        "criterion 4 (oracle tightness)",
        max(errors) < 0.05 and elapsed < 60.0,
        f"max |error| {max(errors):.4f} (< 0.05) over 10 seeds, {elapsed:.1f}s (< 60s)",
    )


def test_criterion_5_null_case(null_run):
    """Full pipeline on a conditionally independent dataset: the mean
    estimate sits within 0.1 nats of the true value 0."""
    result, elapsed = null_run
    passed = abs(result.mean) < 0.1 and not result.flagged and elapsed < 600.0
    report(
        "criterion 5 (conditional-independence null)",
        passed,
        f"mean {result.mean:+.4f} nats (|.| < 0.1), n=2e4 T=20 k=40, {elapsed:.0f}s (< 600s)",
    )


def test_criterion_6_fig3_anchor_points(fig3_runs):
    """Full pipeline at the two anchored sigma2 points: 0 within +-0.1 of
    zero and 5 within +-20% of the closed-form value."""
    results, elapsed = fig3_runs
    at0, at5 = results[0.0], results[5.0]
    tol5 = 0.2 * TRUTH_AT_REFERENCE_POINT
    ok0 = abs(at0.mean) < 0.1
    ok5 = abs(at5.mean - TRUTH_AT_REFERENCE_POINT) < tol5
    passed = ok0 and ok5 and not at0.flagged and not at5.flagged and elapsed < 1800.0
    report(
        "criterion 6 (sigma2 sweep anchors)",
        passed,
        f"sigma2=0: {at0.mean:+.4f} (|.| < 0.1); "
        f"sigma2=5: {at5.mean:.4f} vs {TRUTH_AT_REFERENCE_POINT:.4f} "
        f"(|err| {abs(at5.mean - TRUTH_AT_REFERENCE_POINT):.4f} < {tol5:.4f}); "
        f"{elapsed:.0f}s (< 1800s)",
    )


def test_criterion_7_monte_carlo_bias(bias_draws):
    """With the exact critic fixed, averaging the log-partition estimator
    over small batches overshoots while the linearized one stays centered:
    mean(DV) - mean(NWJ) > 0 at >= 5 sigma, and mean(NWJ) within 3
    standard errors of its large-batch value."""
    dv, nwj, elapsed = bias_draws
    diff = dv - nwj
    z_score = diff.mean() / (diff.std(ddof=1) / math.sqrt(diff.size))

    params = DwtcParams(n=1, seed=0, **REFERENCE_POINT)
    rng = np.random.default_rng(BIAS_REFERENCE_SEED)
    lj = analytic_log_ratio(*draw_joint(params, 1_000_000, rng), params)
    lp = analytic_log_ratio(*draw_product(params, 1_000_000, rng), params)
    large_batch = estimate_nwj_from_log_ratio(lj, lp)
    nwj_se = nwj.std(ddof=1) / math.sqrt(nwj.size)
    centered = abs(nwj.mean() - large_batch) < 3 * nwj_se

    passed = z_score >= 5.0 and centered and elapsed < 300.0
    report(
        "criterion 7 (Monte Carlo bias)",
        passed,
        f"paired z {z_score:.1f} (>= 5); mean NWJ {nwj.mean():.4f} vs large-batch "
        f"{large_batch:.4f} (|diff| {abs(nwj.mean() - large_batch):.4f} < "
        f"{3 * nwj_se:.4f}); mean DV {dv.mean():.4f}; {elapsed:.0f}s (< 300s)",
    )


def test_criterion_8_determinism(null_run, fig3_runs, bias_draws):
    """Re-running the pipeline criteria with identical master seeds
    reproduces every number bit-identically."""
    null_first, _ = null_run
    fig3_first, _ = fig3_runs
    dv_first, nwj_first, _ = bias_draws

    null_again = run_null_pipeline()
    same_null = null_again.per_trial == null_first.per_trial and (
        null_again.mean == null_first.mean
    )
    same_fig3 = True
    for sigma2 in (0.0, 5.0):
        again = run_fig3_point(sigma2)
        same_fig3 = same_fig3 and again.per_trial == fig3_first[sigma2].per_trial
    dv_again, nwj_again = run_bias_draws()
    same_bias = (dv_again == dv_first).all() and (nwj_again == nwj_first).all()

    report(
        "criterion 8 (determinism)",
        same_null and same_fig3 and same_bias,
        f"null rerun identical: {same_null}; sweep reruns identical: {same_fig3}; "
        f"bias rerun identical: {same_bias}",
    )
