import numpy as np
import pytest

from mtlsi import (LassoConfig, MtlConfig, MultiTaskDataset, NonConvergence, RandomizationSpec,
                   reformulated_objective, run_lasso_selection, run_mtl_selection,
                   update_penalty_weights)
from mtlsi.selection import draw_omegas

from conftest import make_dataset


def test_update_weights_examples():
    coef = np.array([[1.0, 3.0], [0.0, 0.0], [0.01, 0.0]])
    w = update_penalty_weights(coef, lam=2.0, lam0=15.0)
    np.testing.assert_allclose(w, [1.0, 15.0, 15.0])  # 2/sqrt(4); zero row capped; 2/0.1 = 20 capped
    assert np.all(update_penalty_weights(np.zeros((3, 2)), 1.0, 7.0) == 7.0)


def test_update_weights_uses_absolute_values():
    a = update_penalty_weights(np.array([[0.5, -0.5]]), 1.0, 10.0)
    b = update_penalty_weights(np.array([[0.5, 0.5]]), 1.0, 10.0)
    np.testing.assert_array_equal(a, b)


def test_config_defaults_and_validation():
    assert MtlConfig(lam=0.4).lam0 == pytest.approx(20.0)
    with pytest.raises(ValueError):
        MtlConfig(lam=0.0)
    with pytest.raises(ValueError):
        MtlConfig(lam=1.0, lam0=-1.0)


@pytest.mark.parametrize("seed", range(6))
def test_outcome_satisfies_invariants(seed):
    ds, _ = make_dataset(seed, K=3, p=8)
    out = run_mtl_selection(ds, RandomizationSpec(1.0, seed), MtlConfig(lam=1.0))
    out.check()
    for t in out.tasks:
        assert np.all(np.abs(t.subgrad) < 1)
        assert np.all(t.weights > 0)
        np.testing.assert_array_equal(t.active, np.flatnonzero(t.coef))
    np.testing.assert_allclose(out.tasks[0].weights,
                               update_penalty_weights(out.coef, out.lam, out.lam0), rtol=1e-5)


@pytest.mark.parametrize("seed", range(8))
def test_objective_never_increases(seed):
    ds, _ = make_dataset(seed, K=3, p=10, n_active=3)
    out = run_mtl_selection(ds, RandomizationSpec(1.0, seed), MtlConfig(lam=0.8))
    h = np.array(out.objective_history)
    assert np.all(np.diff(h) <= 1e-10 * np.abs(h[:-1]))


def test_history_matches_objective_at_final_iterate():
    ds, _ = make_dataset(3, K=2, p=6)
    out = run_mtl_selection(ds, RandomizationSpec(1.0, 3), MtlConfig(lam=1.0), keep_iterates=True)
    omegas = [t.omega for t in out.tasks]
    ridges = [t.ridge for t in out.tasks]
    assert len(out.iterates) == len(out.objective_history) == out.n_outer + 1
    assert out.objective_history[-1] == pytest.approx(
        reformulated_objective(out.coef, ds, omegas, out.lam, ridges), rel=1e-12)


def test_first_iterate_is_separate_lasso():
    ds, _ = make_dataset(11, K=2, p=6)
    spec = RandomizationSpec(1.0, 11)
    mtl = run_mtl_selection(ds, spec, MtlConfig(lam=1.2), keep_iterates=True)
    single = run_lasso_selection(ds, spec, 1.2)
    np.testing.assert_allclose(mtl.iterates[0], single.coef, atol=1e-9)
    for a, b in zip(single.active_sets, (np.flatnonzero(c) for c in mtl.iterates[0].T)):
        np.testing.assert_array_equal(a, b)


def test_omegas_override_and_determinism():
    ds, _ = make_dataset(5, K=2, p=5)
    spec = RandomizationSpec(1.0, 5)
    a = run_mtl_selection(ds, spec, MtlConfig(lam=1.0))
    b = run_mtl_selection(ds, spec, MtlConfig(lam=1.0), omegas=draw_omegas(ds, spec)[0])
    np.testing.assert_array_equal(a.coef, b.coef)
    zero = run_mtl_selection(ds, spec, MtlConfig(lam=1.0), omegas=[np.zeros(5)] * 2)
    assert all(np.all(t.omega == 0) for t in zero.tasks)


def test_randomization_scales_with_task_sigma():
    ds, _ = make_dataset(0, K=2, p=4)
    ds = ds.with_sigmas([1.0, 3.0])
    omegas, scales = draw_omegas(ds, RandomizationSpec(0.5, 0))
    assert scales == [0.5, 1.5]


def test_outer_loop_nonconvergence():
    ds, _ = make_dataset(1, K=3, p=8)
    with pytest.raises(NonConvergence) as info:
        run_mtl_selection(ds, RandomizationSpec(1.0, 1), MtlConfig(lam=0.5, max_outer=1, outer_tol=1e-300))
    assert info.value.history is not None and len(info.value.history) == 2


def test_shared_penalty_favors_common_support():
    """A feature strong in one task lowers the penalty for the same feature elsewhere."""
    rng = np.random.default_rng(0)
    n, p = 100, 4
    Xs = [rng.normal(size=(n, p)) / np.sqrt(n) for _ in range(2)]
    beta = np.array([[9.0, 1.5], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]])
    ys = [X @ beta[:, k] + 0.3 * rng.normal(size=n) for k, X in enumerate(Xs)]
    ds = MultiTaskDataset.from_arrays(Xs, ys, sigmas=0.3)
    zeros = [np.zeros(p)] * 2
    lam = 2.0
    mtl = run_mtl_selection(ds, RandomizationSpec(1.0), MtlConfig(lam=lam), omegas=zeros)
    single = run_lasso_selection(ds, RandomizationSpec(1.0), lam, LassoConfig(), omegas=zeros)
    assert abs(mtl.coef[0, 1]) > abs(single.coef[0, 1])
