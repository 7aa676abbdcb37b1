"""Release acceptance gate.

One test per criterion, each enforcing its stated tolerance and runtime
budget and printing a ``[criterion N] PASS`` line on success.  Run with::

    pytest tests/test_acceptance.py -v -s
"""

import math
import time

import numpy as np

from ebcal.allocate import AllocationProblem, default_gamma2_schedule, solve_bruteforce, solve_greedy
from ebcal.cli import run
from ebcal.posterior import posterior_ceb, posterior_flat, posterior_given_prior, posterior_quadrature_oracle
from ebcal.priorfit import (
    _summaries_arrays,
    fit_mle_calibration,
    fit_mle_illusion,
    fit_mm_calibration,
    fit_sure,
    mm_gamma2_raw,
)
from ebcal.semisynth import DgpConfig, run_pipeline
from ebcal.simulate import SimConfig, loglog_slope, run_sweep
from ebcal.studies import BiasPrior, StudyCollection, StudySummary

# Criteria 3-5 share the session-scoped ``default_sweep`` fixture from
# conftest.py (one 2000-replicate run over the default J grid).


def _report(number, message):
    print(f"[criterion {number:2d}] PASS  {message}")


def random_collection(rng, max_obs, min_obs=0):
    j = int(rng.integers(min_obs, max_obs + 1))
    return StudyCollection(
        StudySummary("e", "experimental", float(rng.normal(0, 2)), float(rng.uniform(0.3, 2.0))),
        tuple(
            StudySummary(
                f"o{k}", "observational", float(rng.normal(1, 2)), float(rng.uniform(0.3, 2.0))
            )
            for k in range(j)
        ),
    )


def test_criterion_01_closed_form_matches_quadrature():
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(100):
        c = random_collection(rng, max_obs=10)
        prior = BiasPrior(float(rng.normal()), float(rng.uniform(0.0, 2.0)))
        closed = posterior_given_prior(c, prior)
        quad = posterior_quadrature_oracle(c, prior, grid_halfwidth=10.0, grid_points=100_001)
        worst = max(worst, abs(closed.mean - quad.mean), abs(closed.variance - quad.variance))
        assert abs(closed.mean - quad.mean) <= 1e-6
        assert abs(closed.variance - quad.variance) <= 1e-6
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0
    _report(1, f"100 collections, worst moment gap {worst:.2e} <= 1e-6 ({elapsed:.1f}s)")


def test_criterion_02_flat_and_illusion_identities():
    start = time.perf_counter()
    rng = np.random.default_rng(202)
    for _ in range(1000):
        c = random_collection(rng, max_obs=8, min_obs=1)
        flat = posterior_flat(c.experimental)
        assert flat.mean == c.experimental.estimate
        assert flat.variance == c.experimental.variance
        report, post = fit_mle_illusion(c)
        assert post.mean == c.experimental.estimate
        assert post.variance < c.experimental.variance
    elapsed = time.perf_counter() - start
    assert elapsed < 30.0
    _report(2, f"1000 collections: posterior means pinned bit-exactly, variance shrinks ({elapsed:.1f}s)")


def test_criterion_03_naive_arm_tracks_experimental_variance(default_sweep):
    cfg, result, elapsed = default_sweep
    assert elapsed < 120.0
    values = {J: result.mse("naive", J) for J in cfg.J_grid}
    for J, mse in values.items():
        assert 0.94 <= mse <= 1.06, f"naive MSE {mse} at J={J}"
    assert all(result.row(arm, J).failures == 0 for arm in cfg.arms for J in cfg.J_grid)
    _report(3, f"naive MSE in [0.94, 1.06] at every J: {[round(v, 3) for v in values.values()]} ({elapsed:.1f}s sweep)")


def test_criterion_04_calibrated_arm_scaling(default_sweep):
    cfg, result, _ = default_sweep
    slope = loglog_slope(result, "ceb_mm")
    assert -1.2 <= slope <= -0.8
    re_500 = result.row("ceb_mm", 500).re
    assert re_500 < 0.5 + 0.05
    _report(4, f"ceb_mm log-log slope {slope:.3f} in [-1.2, -0.8]; RE(500) = {re_500:.3f} < 0.55")


def test_criterion_05_mle_and_mm_agree(default_sweep):
    cfg, result, _ = default_sweep
    gaps = {}
    for J in cfg.J_grid:
        mm = result.mse("ceb_mm", J)
        mle = result.mse("ceb_mle", J)
        gaps[J] = abs(mle - mm) / mm
        assert gaps[J] < 0.05
    _report(5, f"per-J relative MSE gap mle vs mm max {max(gaps.values()):.2e} < 0.05")


def test_criterion_06_fitter_consistency_at_large_k():
    start = time.perf_counter()
    rng = np.random.default_rng(606)
    k = 10_000
    y = 0.5 + rng.standard_normal(k) + rng.standard_normal(k)  # mu*=0.5, gamma2*=1, sigma_c=1
    studies = [StudySummary(f"c{i}", "calibration", float(v), 1.0) for i, v in enumerate(y)]
    results = {}
    for name, fitter in (("mm", fit_mm_calibration), ("mle", fit_mle_calibration)):
        report = fitter(studies)
        assert abs(report.prior.mu - 0.5) < 0.05, name
        assert abs(report.prior.gamma2 - 1.0) < 0.1, name
        results[name] = (report.prior.mu, report.prior.gamma2)
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0
    _report(6, f"K=10^4: mm {tuple(round(v, 3) for v in results['mm'])}, mle {tuple(round(v, 3) for v in results['mle'])} ({elapsed:.1f}s)")


def test_criterion_07_moment_matching_finite_sample_bias():
    start = time.perf_counter()
    k, reps = 50, 10_000
    gamma2_star, mu_star, sigma_c2 = 1.0, 0.5, 1.0
    raws = np.empty(reps)
    for r in range(reps):
        rng = np.random.default_rng([707, r])
        y = mu_star + math.sqrt(gamma2_star) * rng.standard_normal(k) + rng.standard_normal(k)
        studies = [StudySummary(f"c{i}", "calibration", float(v), sigma_c2) for i, v in enumerate(y)]
        raws[r] = mm_gamma2_raw(studies)
    expected = gamma2_star - (k * (gamma2_star + sigma_c2)) / k**2
    mc_se = raws.std(ddof=1) / math.sqrt(reps)
    assert abs(raws.mean() - expected) < 3 * mc_se
    elapsed = time.perf_counter() - start
    assert elapsed < 20.0
    _report(7, f"mean raw variance {raws.mean():.4f} vs exact {expected:.4f} (3 se = {3 * mc_se:.4f}, {elapsed:.1f}s)")


def test_criterion_08_semisynthetic_bias_recovery_and_gain():
    start = time.perf_counter()
    runs = 50
    gaps = np.empty(runs)
    wins = 0
    for seed in range(runs):
        result = run_pipeline(DgpConfig(n_units=50_000, n_parts=100, propensity_beta=0.5, seed=seed))
        c = result.collection
        obs = np.array([s.estimate for s in c.observational])
        calv = np.array([s.estimate for s in c.calibration])
        gaps[seed] = calv.mean() - (obs.mean() - result.true_ate)
        prior = fit_mm_calibration(c.calibration).prior
        post = posterior_ceb(c, prior)
        if abs(post.mean - result.true_ate) < abs(c.experimental.estimate - result.true_ate):
            wins += 1
    mc_se = gaps.std(ddof=1) / math.sqrt(runs)
    assert abs(gaps.mean()) < 3 * mc_se
    assert wins >= 0.8 * runs
    elapsed = time.perf_counter() - start
    assert elapsed < 180.0
    _report(8, f"bias-recovery gap {gaps.mean():.4f} (3 se = {3 * mc_se:.4f}); calibrated beats experiment in {wins}/{runs} runs ({elapsed:.1f}s)")


def test_criterion_09_allocation_quality():
    start = time.perf_counter()
    rng = np.random.default_rng(909)
    worst_ratio = 1.0
    for _ in range(500):
        j = int(rng.integers(1, 13))
        p = AllocationProblem(
            budget=float(rng.uniform(1.0, 30.0)),
            cost_experimental=float(rng.uniform(0.5, 8.0)),
            cost_observational=float(rng.uniform(0.5, 4.0)),
            cost_calibration=float(rng.uniform(0.2, 3.0)),
            sigma_e2=float(rng.uniform(0.3, 3.0)),
            sigma_o2=tuple(rng.uniform(0.3, 3.0, j)),
            gamma2_of_nc=default_gamma2_schedule(float(rng.uniform(0.1, 2.0)), float(rng.uniform(0.0, 3.0))),
            nc_max=int(rng.integers(0, 6)),
        )
        greedy = solve_greedy(p)
        brute = solve_bruteforce(p)
        if brute.objective == 0.0:
            assert greedy.objective == 0.0
            continue
        ratio = greedy.objective / brute.objective
        worst_ratio = min(worst_ratio, ratio)
        assert ratio >= 0.5
        assert ratio >= 0.95
    worked = AllocationProblem(
        budget=10.0,
        cost_experimental=5.0,
        cost_observational=1.0,
        cost_calibration=1.0,
        sigma_e2=1.0,
        sigma_o2=(1.0,) * 10,
        gamma2_of_nc=lambda n: 1.0,
        nc_max=10,
    )
    assert solve_greedy(worked).objective == 5.0
    elapsed = time.perf_counter() - start
    assert elapsed < 30.0
    _report(9, f"500 instances: worst greedy/brute ratio {worst_ratio:.4f}; worked instance exact 5.0 ({elapsed:.1f}s)")


def test_criterion_10_sure_matches_dense_grid():
    start = time.perf_counter()
    rng = np.random.default_rng(1010)
    worst_gap = 0.0
    for _ in range(200):
        k = int(rng.integers(3, 9))
        y = rng.normal(rng.uniform(-1, 1), rng.uniform(0.5, 2.0), k)
        s2 = rng.uniform(0.3, 2.5, k)
        studies = [
            StudySummary(f"c{i}", "calibration", float(v), float(w))
            for i, (v, w) in enumerate(zip(y, s2))
        ]
        bound = 50.0
        report = fit_sure(studies, bound=bound)
        yv, s2v = _summaries_arrays(studies)
        g = np.linspace(0.0, bound, 400)[:, None, None]
        mus = np.linspace(yv.min(), yv.max(), 400)[None, :, None]
        v = s2v + g
        grid_best = float((s2v / v**2 * (s2v * (yv - mus) ** 2 + g - s2v)).mean(axis=-1).min())
        gap = report.objective_value - grid_best
        worst_gap = max(worst_gap, gap)
        assert gap <= 1e-6
    elapsed = time.perf_counter() - start
    assert elapsed < 30.0
    _report(10, f"200 instances: worst (optimum - grid best) {worst_gap:.2e} <= 1e-6 ({elapsed:.1f}s)")


def test_criterion_11_bitwise_determinism(tmp_path):
    cfg_path = tmp_path / "sim.toml"
    cfg_path.write_text("J_grid = [5, 10, 20]\nreplicates = 100\nseed = 17\n")
    outputs = []
    for name, threads in (("a", "1"), ("b", "1"), ("c", "8")):
        out = tmp_path / f"{name}.csv"
        code = run(["simulate", "--config", str(cfg_path), "--threads", threads, "--out", str(out)])
        assert code == 0
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1], "identical config must give identical bytes"
    assert outputs[0] == outputs[2], "thread count must not change output"
    cfg = SimConfig(J_grid=(5, 10, 20), replicates=100, seed=17)
    assert run_sweep(cfg, threads=1).to_csv_text() == run_sweep(cfg, threads=8).to_csv_text()
    _report(11, "sweep CSV bit-identical across reruns and thread counts")
