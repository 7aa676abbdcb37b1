import time

import pytest

from ebcal.simulate import SimConfig, run_sweep


@pytest.fixture(scope="session")
def default_sweep():
    """One default-configuration sweep, shared by every test that needs it."""
    cfg = SimConfig()  # theta*=1, mu*=0.5, gamma2*=1, unit noise, 2000 replicates
    start = time.perf_counter()
    result = run_sweep(cfg)
    elapsed = time.perf_counter() - start
    return cfg, result, elapsed
