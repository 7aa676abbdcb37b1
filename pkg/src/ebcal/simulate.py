"""Seeded Monte Carlo harness for the study-combination estimators.

Draws study collections from the hierarchical normal-means process, runs a
configurable set of estimator arms on identical draws, and reports mean
squared error, its Monte Carlo standard error, and efficiency relative to
the experiment-only estimate.

Replicate streams are derived from ``(seed, J, K, replicate)`` and are
independent of the arm, so arms are compared on paired draws; results are
bit-identical across thread counts because each grid cell is reduced in a
fixed order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .posterior import combined_moments
from .priorfit import _fit_mle_calibration_arrays, _fit_mle_zero_mean_arrays, _profiled_mu_arrays
from .studies import InputError, StudyCollection, StudySummary

__all__ = [
    "ARMS",
    "DegenerateGrid",
    "SimConfig",
    "SimRow",
    "SimResult",
    "generate_collection",
    "run_sweep",
    "loglog_slope",
]

ARMS = ("naive", "eb0", "eb_illusion", "ceb_mm", "ceb_mle", "oracle")


class DegenerateGrid(InputError):
    """Too few grid points (or no spread) for a log-log slope."""


@dataclass(frozen=True)
class SimConfig:
    """Sweep configuration.

    One experimental study, ``J`` observational studies, and ``K = J``
    calibration studies are drawn per replicate; every arm sees the same
    draws at a given replicate.
    """

    theta_star: float = 1.0
    mu_star: float = 0.5
    gamma2_star: float = 1.0
    sigma_e: float = 1.0
    sigma_o: float = 1.0
    sigma_c: float = 1.0
    J_grid: tuple[int, ...] = (5, 10, 50, 100, 200, 500)
    replicates: int = 2000
    seed: int = 0
    arms: tuple[str, ...] = ARMS

    def __post_init__(self):
        object.__setattr__(self, "J_grid", tuple(int(j) for j in self.J_grid))
        object.__setattr__(self, "arms", tuple(self.arms))
        for name in ("sigma_e", "sigma_o", "sigma_c"):
            if not getattr(self, name) > 0.0:
                raise InputError(f"{name} must be > 0")
        if self.gamma2_star < 0.0:
            raise InputError("gamma2_star must be >= 0")
        if self.replicates < 1:
            raise InputError("replicates must be >= 1")
        if not self.J_grid or list(self.J_grid) != sorted(set(self.J_grid)):
            raise InputError("J_grid must be nonempty and strictly ascending")
        if min(self.J_grid) < 1:
            raise InputError("J values must be >= 1")
        if not self.arms:
            raise InputError("arms must be nonempty")
        for arm in self.arms:
            if arm not in ARMS:
                raise InputError(f"unknown arm {arm!r}; known arms: {', '.join(ARMS)}")
        fitted = {"eb0", "ceb_mm", "ceb_mle"} & set(self.arms)
        if fitted and min(self.J_grid) < 2:
            raise InputError(
                f"arms {sorted(fitted)} fit a prior and need J >= 2 at every grid point"
            )
        if self.seed < 0:
            raise InputError("seed must be a nonnegative integer")


@dataclass(frozen=True)
class SimRow:
    arm: str
    J: int
    mse: float
    mc_se: float
    re: float
    failures: int = 0


@dataclass(frozen=True)
class SimResult:
    config: SimConfig
    rows: tuple[SimRow, ...]

    def row(self, arm: str, J: int) -> SimRow:
        for r in self.rows:
            if r.arm == arm and r.J == J:
                return r
        raise KeyError(f"no row for arm={arm!r}, J={J}")

    def mse(self, arm: str, J: int) -> float:
        return self.row(arm, J).mse

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(self.to_csv_text())

    def to_csv_text(self) -> str:
        lines = ["arm,J,mse,mc_se,re"]
        for r in self.rows:
            lines.append(f"{r.arm},{r.J},{r.mse!r},{r.mc_se!r},{r.re!r}")
        return "\n".join(lines) + "\n"


def _draw_arrays(cfg: SimConfig, J: int, K: int, replicate_index: int):
    rng = np.random.default_rng([cfg.seed, J, K, replicate_index])
    gamma_sd = math.sqrt(cfg.gamma2_star)
    y_e = cfg.theta_star + cfg.sigma_e * rng.standard_normal()
    b_o = cfg.mu_star + gamma_sd * rng.standard_normal(J)
    y_o = cfg.theta_star + b_o + cfg.sigma_o * rng.standard_normal(J)
    b_c = cfg.mu_star + gamma_sd * rng.standard_normal(K)
    y_c = b_c + cfg.sigma_c * rng.standard_normal(K)
    return float(y_e), y_o, y_c


def generate_collection(cfg: SimConfig, J: int, K: int, replicate_index: int) -> StudyCollection:
    """One replicate's studies as a collection, deterministic in its stream."""
    y_e, y_o, y_c = _draw_arrays(cfg, J, K, replicate_index)
    experimental = StudySummary("exp", "experimental", y_e, cfg.sigma_e**2)
    observational = tuple(
        StudySummary(f"obs-{j:04d}", "observational", float(v), cfg.sigma_o**2)
        for j, v in enumerate(y_o, start=1)
    )
    calibration = tuple(
        StudySummary(f"cal-{k:04d}", "calibration", float(v), cfg.sigma_c**2)
        for k, v in enumerate(y_c, start=1)
    )
    return StudyCollection(experimental, observational, calibration)


def _arm_estimates(cfg: SimConfig, J: int, Y_e, Y_o, Y_c, arms):
    """Point estimates per requested arm, each an array over replicates."""
    se2 = cfg.sigma_e**2
    so2 = np.full(J, cfg.sigma_o**2)
    sc2 = np.full(Y_c.shape[1], cfg.sigma_c**2)
    out = {}
    for arm in arms:
        if arm == "naive" or arm == "eb_illusion":
            # The full-EB fit pins the posterior mean to the experimental
            # estimate for every variance, so both arms share the estimate.
            out[arm] = Y_e
        elif arm == "oracle":
            out[arm] = combined_moments(Y_e, se2, Y_o, so2, cfg.mu_star, cfg.gamma2_star)[0]
        elif arm == "ceb_mm":
            raw = ((Y_c - Y_c.mean(axis=1, keepdims=True)) ** 2 - sc2).mean(axis=1)
            g2 = np.maximum(raw, 0.0)
            mu = _profiled_mu_arrays(g2, Y_c, sc2)
            out[arm] = combined_moments(Y_e, se2, Y_o, so2, mu, g2)[0]
        elif arm == "ceb_mle":
            spread = ((Y_c - Y_c.mean(axis=1, keepdims=True)) ** 2).mean(axis=1)
            bound = 1e3 * np.maximum(spread, sc2.max())
            mu, g2, _, _ = _fit_mle_calibration_arrays(Y_c, sc2, bound)
            out[arm] = combined_moments(Y_e, se2, Y_o, so2, mu, g2)[0]
        elif arm == "eb0":
            # Sample split: combine the leading half, fit the variance on
            # the trailing half jointly with the experiment (all studies
            # when the trailing half would hold fewer than two).
            cut = (J + 1) // 2
            est_y, est_s = Y_o[:, :cut], so2[:cut]
            fit_y, fit_s = Y_o[:, cut:], so2[cut:]
            if fit_y.shape[1] < 2:
                est_y, est_s, fit_y, fit_s = Y_o, so2, Y_o, so2
            spread = ((fit_y - fit_y.mean(axis=1, keepdims=True)) ** 2).mean(axis=1)
            bound = 1e3 * np.maximum(spread, fit_s.max())
            g2, _, _ = _fit_mle_zero_mean_arrays(Y_e, se2, fit_y, fit_s, bound)
            out[arm] = combined_moments(Y_e, se2, est_y, est_s, 0.0, g2)[0]
        else:  # pragma: no cover - blocked by SimConfig validation
            raise InputError(f"unknown arm {arm!r}")
    return out


def _sweep_one_J(cfg: SimConfig, J: int):
    K = J
    R = cfg.replicates
    Y_e = np.empty(R)
    Y_o = np.empty((R, J))
    Y_c = np.empty((R, K))
    for r in range(R):
        Y_e[r], Y_o[r], Y_c[r] = _draw_arrays(cfg, J, K, r)

    arms = tuple(dict.fromkeys(cfg.arms + ("naive",)))  # naive anchors relative efficiency
    estimates = _arm_estimates(cfg, J, Y_e, Y_o, Y_c, arms)

    stats = {}
    for arm, est in estimates.items():
        ok = np.isfinite(est)
        failures = int((~ok).sum())
        sq = (est[ok] - cfg.theta_star) ** 2
        mse = float(sq.mean())
        mc_se = float(sq.std(ddof=1) / math.sqrt(sq.size)) if sq.size > 1 else float("nan")
        stats[arm] = (mse, mc_se, failures)
    return stats


def run_sweep(cfg: SimConfig, threads: int = 1) -> SimResult:
    """Run every arm over the J grid.

    ``threads`` parallelizes across grid points only; output is identical
    for any thread count.
    """
    if threads < 1:
        raise InputError("threads must be >= 1")
    if threads == 1:
        per_J = [_sweep_one_J(cfg, J) for J in cfg.J_grid]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_J = list(pool.map(lambda J: _sweep_one_J(cfg, J), cfg.J_grid))

    rows = []
    for arm in cfg.arms:
        for J, stats in zip(cfg.J_grid, per_J):
            mse, mc_se, failures = stats[arm]
            naive_mse = stats["naive"][0]
            rows.append(SimRow(arm, J, mse, mc_se, mse / naive_mse, failures))
    return SimResult(cfg, tuple(rows))


def loglog_slope(result: SimResult, arm: str) -> float:
    """Least-squares slope of log MSE against log J for one arm."""
    points = [(r.J, r.mse) for r in result.rows if r.arm == arm]
    if len(points) < 3:
        raise DegenerateGrid(f"need >= 3 grid points for a slope, got {len(points)}")
    x = np.log(np.array([p[0] for p in points], dtype=np.float64))
    y = np.log(np.array([p[1] for p in points], dtype=np.float64))
    xc = x - x.mean()
    denom = (xc**2).sum()
    if denom == 0.0:
        raise DegenerateGrid("J grid has no spread")
    return float((xc * (y - y.mean())).sum() / denom)
