import numpy as np
import pytest

from ebcal.simulate import (
    ARMS,
    DegenerateGrid,
    SimConfig,
    SimResult,
    SimRow,
    generate_collection,
    loglog_slope,
    run_sweep,
)
from ebcal.studies import InputError


def tiny_cfg(**kwargs):
    defaults = dict(J_grid=(4, 8, 16), replicates=60, seed=3, arms=("naive", "ceb_mm", "oracle"))
    defaults.update(kwargs)
    return SimConfig(**defaults)


class TestConfig:
    def test_defaults(self):
        cfg = SimConfig()
        assert cfg.theta_star == 1.0 and cfg.mu_star == 0.5 and cfg.gamma2_star == 1.0
        assert cfg.arms == ARMS

    def test_validation(self):
        with pytest.raises(InputError):
            SimConfig(sigma_e=0.0)
        with pytest.raises(InputError):
            SimConfig(J_grid=())
        with pytest.raises(InputError):
            SimConfig(J_grid=(10, 5))
        with pytest.raises(InputError):
            SimConfig(arms=("naive", "magic"))
        with pytest.raises(InputError):
            SimConfig(replicates=0)
        with pytest.raises(InputError):
            SimConfig(J_grid=(1, 5), arms=("naive", "ceb_mm"))
        SimConfig(J_grid=(1, 5), arms=("naive", "oracle", "eb_illusion"))  # fine


class TestGenerateCollection:
    def test_deterministic_in_stream(self):
        cfg = SimConfig()
        a = generate_collection(cfg, 5, 5, 7)
        b = generate_collection(cfg, 5, 5, 7)
        assert a == b
        c = generate_collection(cfg, 5, 5, 8)
        assert a != c

    def test_structure(self):
        cfg = SimConfig()
        c = generate_collection(cfg, 3, 4, 0)
        assert c.num_observational == 3 and c.num_calibration == 4
        assert c.experimental.variance == cfg.sigma_e**2
        assert all(s.variance == cfg.sigma_o**2 for s in c.observational)

    def test_degenerate_bias_prior(self):
        # With gamma2*=0 and mu*=0 the observational draws are centered at
        # the true effect with pure sampling noise.
        cfg = SimConfig(mu_star=0.0, gamma2_star=0.0, seed=11)
        values = []
        for r in range(400):
            c = generate_collection(cfg, 5, 1, r)
            values.extend(s.estimate for s in c.observational)
        values = np.array(values)
        se = cfg.sigma_o / np.sqrt(values.size)
        assert abs(values.mean() - cfg.theta_star) < 3 * se
        assert abs(values.std(ddof=1) - cfg.sigma_o) < 0.05

    def test_calibration_law_of_large_numbers(self):
        cfg = SimConfig(seed=2)
        c = generate_collection(cfg, 1, 100_000, 0)
        values = np.array([s.estimate for s in c.calibration])
        tol = 3 * np.sqrt((cfg.gamma2_star + cfg.sigma_c**2) / values.size)
        assert abs(values.mean() - cfg.mu_star) < tol


class TestRunSweep:
    def test_relative_efficiency_of_naive_is_one(self):
        res = run_sweep(tiny_cfg())
        for J in (4, 8, 16):
            assert res.row("naive", J).re == 1.0

    def test_rows_cover_arms_by_grid(self):
        cfg = tiny_cfg()
        res = run_sweep(cfg)
        assert len(res.rows) == len(cfg.arms) * len(cfg.J_grid)
        assert all(r.failures == 0 for r in res.rows)

    def test_illusion_arm_equals_naive(self):
        res = run_sweep(tiny_cfg(arms=("naive", "eb_illusion")))
        for J in (4, 8, 16):
            assert res.row("eb_illusion", J).mse == res.row("naive", J).mse

    def test_deterministic_rerun(self):
        a = run_sweep(tiny_cfg())
        b = run_sweep(tiny_cfg())
        assert a.to_csv_text() == b.to_csv_text()

    def test_thread_count_does_not_change_output(self):
        cfg = tiny_cfg(arms=ARMS)
        single = run_sweep(cfg, threads=1)
        multi = run_sweep(cfg, threads=8)
        assert single.to_csv_text() == multi.to_csv_text()

    def test_sweep_matches_collection_level_composition(self):
        # The vectorized sweep and the object-level API see identical draws.
        from ebcal.posterior import posterior_given_prior
        from ebcal.studies import BiasPrior

        cfg = tiny_cfg(arms=("naive", "oracle"), replicates=20)
        res = run_sweep(cfg)
        for J in cfg.J_grid:
            errors = []
            for r in range(cfg.replicates):
                c = generate_collection(cfg, J, J, r)
                prior = BiasPrior(cfg.mu_star, cfg.gamma2_star)
                post = posterior_given_prior(c, prior)
                errors.append((post.mean - cfg.theta_star) ** 2)
            assert np.isclose(res.mse("oracle", J), np.mean(errors), rtol=1e-12)

    def test_sweep_matches_combiners_for_fitted_arms(self):
        # The batched fits agree with the scalar estimators up to optimizer
        # tolerance (the iteration budget couples across a batch, so the
        # match is near-exact rather than bit-exact).
        from ebcal.estimators import CalibratedEBCombiner, ZeroMeanEBCombiner

        cfg = tiny_cfg(arms=("naive", "eb0", "ceb_mle", "ceb_mm"), replicates=15, J_grid=(5, 8))
        res = run_sweep(cfg)
        for J in cfg.J_grid:
            collections = [generate_collection(cfg, J, J, r) for r in range(cfg.replicates)]
            for arm, combiner in (
                ("eb0", ZeroMeanEBCombiner(split="half")),
                ("ceb_mle", CalibratedEBCombiner(method="mle")),
                ("ceb_mm", CalibratedEBCombiner(method="mm")),
            ):
                errors = [
                    (combiner.fit(c).predict(c).mean - cfg.theta_star) ** 2 for c in collections
                ]
                assert np.isclose(res.mse(arm, J), np.mean(errors), rtol=1e-9), arm

    def test_csv_shape(self, tmp_path):
        res = run_sweep(tiny_cfg(replicates=30))
        path = tmp_path / "r.csv"
        res.to_csv(path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "arm,J,mse,mc_se,re"
        assert len(lines) == 1 + len(res.rows)

    def test_missing_row_raises(self):
        res = run_sweep(tiny_cfg(replicates=30))
        with pytest.raises(KeyError):
            res.row("oracle", 999)


class TestSweepQualitativeBehavior:
    """Sweep-level behavior across non-default noise and effect settings."""

    def sweep(self, **kwargs):
        cfg = SimConfig(
            replicates=800,
            J_grid=(5, 10, 50, 100, 200, 500),
            arms=("naive", "ceb_mm"),
            **kwargs,
        )
        return cfg, run_sweep(cfg)

    def test_large_j_error_insensitive_to_experimental_noise(self):
        # The calibrated arm's large-J error floor is set by the prior fit,
        # not by the experiment, so it converges across sigma_e.
        limits = []
        for sigma_e in (0.5, 1.0, 2.0):
            cfg, res = self.sweep(sigma_e=sigma_e, seed=31)
            assert abs(res.mse("naive", 500) - sigma_e**2) < 5 * res.row("naive", 500).mc_se
            limits.append(res.mse("ceb_mm", 500))
        spread = (max(limits) - min(limits)) / min(limits)
        assert spread < 0.25

    def test_observational_noise_orders_mse(self):
        _, low = self.sweep(sigma_o=0.5, seed=32)
        _, high = self.sweep(sigma_o=2.0, seed=32)
        for J in (50, 100, 200, 500):
            assert low.mse("ceb_mm", J) < high.mse("ceb_mm", J)

    def test_effect_size_leaves_error_unchanged(self):
        # Pure translation of the generating process: paired draws shift
        # with it, so the error curve is unchanged up to rounding.
        _, null = self.sweep(theta_star=0.0, seed=33)
        _, large = self.sweep(theta_star=5.0, seed=33)
        for J in (5, 50, 500):
            assert np.isclose(null.mse("ceb_mm", J), large.mse("ceb_mm", J), rtol=1e-6)


class TestDefaultSweepInvariants:
    def test_relative_efficiency_decreasing_in_j(self, default_sweep):
        cfg, result, _ = default_sweep
        for arm in ("ceb_mm", "ceb_mle"):
            rows = [result.row(arm, J) for J in cfg.J_grid]
            for a, b in zip(rows, rows[1:]):
                naive_a = result.mse("naive", a.J)
                naive_b = result.mse("naive", b.J)
                slack = 2 * (a.mc_se / naive_a + b.mc_se / naive_b)
                assert b.re <= a.re + slack, f"{arm}: RE({b.J}) vs RE({a.J})"

    def test_oracle_dominates_calibrated_arms(self, default_sweep):
        cfg, result, _ = default_sweep
        for arm in ("ceb_mm", "ceb_mle"):
            for J in cfg.J_grid:
                oracle = result.row("oracle", J)
                ceb = result.row(arm, J)
                assert oracle.mse <= ceb.mse + 2 * (oracle.mc_se + ceb.mc_se)

    def test_zero_mean_arm_is_biased_under_nonzero_bias_mean(self, default_sweep):
        # With a 0.5 bias mean the zero-mean arm converges to a squared
        # bias floor instead of vanishing risk.
        cfg, result, _ = default_sweep
        largest = max(cfg.J_grid)
        assert result.mse("eb0", largest) > result.mse("ceb_mm", largest)


class TestLoglogSlope:
    def result_with(self, pairs, arm="ceb_mm"):
        cfg = SimConfig(J_grid=tuple(int(j) for j, _ in pairs), replicates=1, arms=(arm,))
        rows = tuple(SimRow(arm, int(j), float(m), 0.0, 1.0) for j, m in pairs)
        return SimResult(cfg, rows)

    def test_exact_inverse_series(self):
        res = self.result_with([(5, 1 / 5), (10, 1 / 10), (50, 1 / 50), (100, 1 / 100)])
        assert abs(loglog_slope(res, "ceb_mm") + 1.0) < 1e-12

    def test_constant_series(self):
        res = self.result_with([(5, 2.0), (10, 2.0), (50, 2.0)])
        assert loglog_slope(res, "ceb_mm") == 0.0

    def test_too_few_points(self):
        res = self.result_with([(5, 1.0), (10, 0.5)])
        with pytest.raises(DegenerateGrid):
            loglog_slope(res, "ceb_mm")
