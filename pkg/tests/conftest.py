import numpy as np
import pytest
from hypothesis import settings

from mtlsi import MultiTaskDataset, MtlConfig, RandomizationSpec, run_mtl_selection
from mtlsi.simulation import generate_design

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

ACCEPTANCE = {}


def make_dataset(seed, n=60, p=6, K=2, rho=0.3, n_active=2, scale=4.0, sigma=1.0):
    """Small synthetic problem with the first ``n_active`` features active in every task."""
    rng = np.random.default_rng(seed)
    beta = np.zeros((p, K))
    beta[:n_active] = scale * rng.choice([-1.0, 1.0], (n_active, K)) * rng.uniform(0.7, 1.3, (n_active, K))
    Xs = [generate_design(n, p, rho, rng) for _ in range(K)]
    ys = [X @ beta[:, k] + sigma * rng.standard_normal(n) for k, X in enumerate(Xs)]
    return MultiTaskDataset.from_arrays(Xs, ys, sigmas=sigma), beta


def make_selection(seed, lam=1.0, v=1.0, **kw):
    ds, beta = make_dataset(seed, **kw)
    out = run_mtl_selection(ds, RandomizationSpec(v, seed), MtlConfig(lam=lam))
    return ds, out, beta


@pytest.fixture
def small_selection():
    for seed in range(100):
        ds, out, beta = make_selection(seed)
        if out.q >= 3:
            return ds, out, beta
    raise RuntimeError("no nontrivial selection found")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
