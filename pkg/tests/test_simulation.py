import math

import numpy as np
import pytest

from mtlsi import (MetricsRecord, MultiTaskDataset, SimConfig, compute_metrics,
                   generate_coefficients, generate_design, run_experiment, snr, tune_lambda)
from mtlsi.inference import z_intervals
from mtlsi.simulation import (coefficient_grid, metrics_table, pick_lambda, population_target,
                              projected_target, render_csv, run_replication, validation_mse)


# ---------------------------------------------------------------------------
# data generation

def test_design_identity_correlation():
    X = generate_design(5000, 4, 0.0, np.random.default_rng(0))
    C = np.corrcoef(X, rowvar=False)
    assert np.max(np.abs(C - np.eye(4))) < 0.05


def test_design_equicorrelation():
    X = generate_design(5000, 6, 0.3, np.random.default_rng(1))
    C = np.corrcoef(X, rowvar=False)
    off = C[~np.eye(6, dtype=bool)]
    # sample correlation sd is about (1 - rho^2) / sqrt(n) = 0.013 per pair
    assert abs(off.mean() - 0.3) < 0.03
    assert np.all(np.abs(off - 0.3) < 4 * (1 - 0.3 ** 2) / np.sqrt(5000))


def test_design_centering_scaling_and_seed():
    a = generate_design(100, 3, 0.3, np.random.default_rng(2))
    b = generate_design(100, 3, 0.3, np.random.default_rng(2))
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(a.mean(axis=0), 0.0, atol=1e-15)
    raw = generate_design(100, 3, 0.3, np.random.default_rng(2), normalize=False)
    np.testing.assert_allclose(raw / 10.0, a)
    with pytest.raises(ValueError):
        generate_design(10, 3, -0.6, 0)


def test_coefficient_grid_endpoints():
    grid = coefficient_grid(100, 5)
    assert grid[0] == pytest.approx(3.0349, abs=1e-4)
    assert grid[-1] == pytest.approx(5.2565, abs=1e-4)


@pytest.mark.parametrize("p, K, s_G, s_T", [(100, 5, 0.9, 0.2), (50, 3, 0.9, 0.0), (20, 4, 0.5, 0.5),
                                            (10, 2, 1.0, 0.0), (30, 3, 0.0, 1.0)])
def test_coefficient_structure(p, K, s_G, s_T):
    beta = generate_coefficients(p, K, s_G, s_T, np.random.default_rng(3))
    zero_rows = np.all(beta == 0, axis=1)
    n_zero = math.floor(s_G * p + 0.5)
    n_task_zero = math.floor(s_T * K + 0.5)
    if n_task_zero < K:
        assert zero_rows.sum() == n_zero
    active = ~zero_rows
    assert np.all((beta[active] == 0).sum(axis=1) == n_task_zero)
    mags = np.abs(beta[beta != 0])
    grid = coefficient_grid(p, K)
    assert np.all(np.isin(mags, grid))
    for row in np.abs(beta[active]):
        nz = row[row != 0]
        assert np.unique(nz).size == nz.size  # drawn without replacement


def test_dense_rows_when_no_task_sparsity():
    beta = generate_coefficients(40, 4, 0.8, 0.0, np.random.default_rng(0))
    rows = np.any(beta != 0, axis=1)
    assert np.all(beta[rows] != 0)


@pytest.mark.parametrize("beta, rho, n, sigma, expected", [
    (np.zeros(5), 0.3, 10, 1.0, 0.0),
    (np.ones(4), 0.0, 8, 1.0, 0.5),
    (np.ones(4), 0.0, 8, 2.0, 0.125),
    (np.array([1.0, 1.0]), 0.5, 1, 1.0, 3.0),
])
def test_snr(beta, rho, n, sigma, expected):
    assert snr(beta, rho, n, sigma) == pytest.approx(expected)


def test_snr_order_of_magnitude_in_reference_setting():
    rng = np.random.default_rng(0)
    vals = [np.mean([snr(b, 0.3, 500) for b in generate_coefficients(100, 5, 0.9, 0.2, rng).T])
            for _ in range(20)]
    assert 0.05 < np.mean(vals) < 1.0


def test_targets():
    rng = np.random.default_rng(1)
    X = generate_design(400, 4, 0.3, rng)
    beta = np.array([1.0, 2.0, 0.0, 0.0])
    np.testing.assert_allclose(projected_target(X, beta, [0, 1]), [1.0, 2.0])
    np.testing.assert_allclose(population_target(0.3, beta, [0, 1]), [1.0, 2.0])
    # omitted variable: population coefficient is 1 + 0.3 * 2
    assert population_target(0.3, beta, [0])[0] == pytest.approx(1.6)
    assert projected_target(X, beta, [0])[0] == pytest.approx(1.6, abs=0.15)


# ---------------------------------------------------------------------------
# metrics

def make_iv(labels, est, se=0.1):
    return z_intervals(labels, est, np.full(len(labels), se), 0.1, "m")


def test_metrics_all_cover():
    iv = make_iv([(0, 0), (0, 1)], [1.0, 2.0])
    rec = compute_metrics(iv, [1.0, 2.0], {(0, 0), (0, 1)})
    assert rec.coverage == 1.0 and rec.precision == 1.0 and rec.recall == 1.0 and rec.f1 == 1.0


def test_metrics_half_precision_half_recall():
    iv = make_iv([(0, 0), (0, 1)], [1.0, 2.0])
    rec = compute_metrics(iv, [1.0, 0.0], {(0, 0), (1, 3)})
    assert rec.precision == 0.5 and rec.recall == 0.5 and rec.f1 == pytest.approx(0.5)
    assert rec.coverage == 0.5


def test_metrics_empty_selection():
    from mtlsi import Intervals
    rec = compute_metrics(Intervals.empty(0.1), [], {(0, 0)})
    assert rec.coverage == 1.0 and rec.recall == 0.0 and rec.f1 == 0.0 and rec.precision == 0.0
    assert math.isnan(rec.mean_length)


def test_metrics_nothing_significant():
    iv = make_iv([(0, 0)], [0.0], se=1.0)
    rec = compute_metrics(iv, [0.0], {(0, 0)})
    assert rec.n_significant == 0 and rec.precision == 0.0 and rec.f1 == 0.0


def test_metrics_record_rejects_out_of_range():
    with pytest.raises(ValueError):
        MetricsRecord(rep=0, method="m", lam=1.0, coverage=1.5)


# ---------------------------------------------------------------------------
# tuning

def test_single_value_grid():
    ds = MultiTaskDataset.from_arrays([np.eye(3) - 1 / 3], [np.arange(3.0)])
    lam, mse = tune_lambda(lambda tr, lam, i: [np.array([0])], [(ds, ds)], [0.7])
    assert lam == 0.7 and mse.shape == (1,)


def test_ties_prefer_larger_lambda():
    assert pick_lambda([0.1, 0.2, 0.3, 0.4], [2.0, 1.0, 1.0, 3.0]) == 0.3


def test_validation_mse_of_empty_model():
    rng = np.random.default_rng(0)
    X = generate_design(20, 2, 0.0, rng)
    ds = MultiTaskDataset.from_arrays([X], [rng.normal(size=20)], center=False)
    assert validation_mse(ds, ds, [np.array([], dtype=int)]) == pytest.approx(np.mean(ds.tasks[0].y ** 2))


def test_pure_noise_prefers_sparse_models():
    large = 0
    for seed in range(10):
        cfg = SimConfig(n=100, p=20, K=2, s_G=1.0, n_tune=1, seed=seed, methods=("mtl_si",), n_reps=1)
        from mtlsi.simulation import tune_methods
        t = tune_methods(cfg)["mtl_si"]
        large += t.lam >= np.median(t.grid)
    assert large >= 6


# ---------------------------------------------------------------------------
# experiments

def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(s_G=1.2)
    with pytest.raises(ValueError):
        SimConfig(rho=1.0)
    with pytest.raises(ValueError):
        SimConfig(lam_grid=(0.3, 0.2))
    with pytest.raises(ValueError):
        SimConfig(methods=("nope",))
    with pytest.raises(ValueError):
        SimConfig.from_mapping({"bogus": 1})
    assert SimConfig(rand_scale=1.0).fraction == 0.5


def test_one_replication_one_method():
    res = run_experiment(SimConfig(n=60, p=10, K=2, n_reps=1, lam=1.0), methods=["mtl_si"])
    assert len(res.records) == 1 and res.records[0].method == "MTL(1)+SI"


def test_failures_are_recorded_not_dropped():
    # two held-out rows cannot support inference on the many features a small penalty selects
    cfg = SimConfig(n=10, p=10, K=2, s_G=0.5, n_reps=3, lam=0.01, methods=("ds",), split_frac=0.8)
    res = run_experiment(cfg)
    assert len(res.records) == 3
    failed = [r for r in res.records if not r.ok]
    assert failed and all(r.error for r in failed)
    assert res.summary()["DS(0.8)"]["n_failed"] == len(failed)


def test_replication_is_deterministic():
    cfg = SimConfig(n=60, p=10, K=2, n_reps=2, lam=1.0)
    a = run_replication(cfg, 1, {m: 1.0 for m in cfg.methods})
    b = run_replication(cfg, 1, {m: 1.0 for m in cfg.methods})
    assert a == b


def test_table_is_byte_identical_and_parallel_safe():
    cfg = SimConfig(n=60, p=10, K=2, n_reps=3, n_tune=1, grid_size=4)
    a = render_csv(*metrics_table(run_experiment(cfg)))
    b = render_csv(*metrics_table(run_experiment(cfg)))
    from dataclasses import replace
    c = render_csv(*metrics_table(run_experiment(replace(cfg, n_jobs=2))))
    assert a == b == c
    assert a.count("\n") == 1 + 3 * len(cfg.methods)
