"""Fitting the Gaussian bias prior from study data.

Three fitting strategies are provided:

* maximum marginal likelihood (``mle``), with the prior mean profiled out
  in closed form and the prior variance found by a bracketed golden-section
  search seeded on a grid;
* moment matching (``mm``), a closed-form estimator with the negative part
  of the variance estimate clamped to zero;
* Stein-unbiased-risk minimization (``sure``), used for internal
  (study-paired) calibration where the goal is to shrink each calibration
  estimate toward the pool before subtracting it from its paired study.

The marginal likelihoods operate on summary statistics only; everything is
a pure function of its inputs.  The internal array helpers broadcast over a
leading replicate axis so the simulation harness can fit thousands of
instances in one vectorized pass through the exact same code path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .posterior import combined_moments, posterior_flat
from .studies import (
    BiasPrior,
    GaussianPosterior,
    InputError,
    StudyCollection,
    StudySummary,
)

__all__ = [
    "EmptyCalibrationSet",
    "TooFewCalibrationStudies",
    "TooFewObservationalStudies",
    "NonFiniteObjective",
    "LengthMismatch",
    "FitReport",
    "calibration_loglik",
    "joint_marginal_loglik",
    "marginal_loglik",
    "profiled_mu",
    "default_bound",
    "fit_mle_calibration",
    "fit_mle_zero_mean",
    "fit_mle_illusion",
    "fit_mm_calibration",
    "mm_gamma2_raw",
    "fit_mm_zero_mean",
    "sure_objective",
    "fit_sure",
    "shrink_biases",
    "internal_eb_theta",
    "split_observational",
]

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_GRID_SIZE = 256
_XATOL = 1e-10


class EmptyCalibrationSet(InputError):
    """No calibration studies were supplied."""


class TooFewCalibrationStudies(InputError):
    """The operation needs at least two calibration studies."""


class TooFewObservationalStudies(InputError):
    """The operation needs more observational studies than were supplied."""


class NonFiniteObjective(InputError):
    """The fitting objective evaluated to NaN or infinity everywhere."""


class LengthMismatch(InputError):
    """A per-study vector does not line up with the study list."""


@dataclass(frozen=True)
class FitReport:
    """Result of one prior fit.

    ``bound_hit`` flags a variance estimate pinned at 0 or at the search
    upper bound; ``objective_value`` is the fitted value of the method's
    own criterion (log-likelihood for ``mle`` and ``mm``, risk estimate
    for ``sure``).
    """

    prior: BiasPrior
    method: str
    objective_value: float
    iterations: int
    bound_hit: bool


def _summaries_arrays(studies: Sequence[StudySummary]):
    y = np.array([s.estimate for s in studies], dtype=np.float64)
    v = np.array([s.variance for s in studies], dtype=np.float64)
    return y, v


# ---------------------------------------------------------------------------
# log-likelihoods (study axis last, leading axes broadcast)
# ---------------------------------------------------------------------------


def _cal_loglik_arrays(mu, gamma2, y, s2):
    v = s2 + np.expand_dims(np.asarray(gamma2, dtype=np.float64), -1)
    resid = y - np.expand_dims(np.asarray(mu, dtype=np.float64), -1)
    return (-0.5 * resid**2 / v - 0.5 * np.log(v)).sum(axis=-1)


def _joint_loglik_arrays(mu, gamma2, y_e, se2, y_o, so2):
    v = so2 + np.expand_dims(np.asarray(gamma2, dtype=np.float64), -1)
    resid = y_o - np.expand_dims(np.asarray(mu, dtype=np.float64), -1)
    w = 1.0 / v
    precision = 1.0 / se2 + w.sum(axis=-1)
    numer = y_e / se2 + (w * resid).sum(axis=-1)
    return 0.5 * (
        numer**2 / precision
        - y_e**2 / se2
        - (resid**2 / v).sum(axis=-1)
        - np.log(v).sum(axis=-1)
        - np.log(precision)
    )


def _profiled_mu_arrays(gamma2, y, s2):
    w = 1.0 / (s2 + np.expand_dims(np.asarray(gamma2, dtype=np.float64), -1))
    return (w * y).sum(axis=-1) / w.sum(axis=-1)


def _cal_profile_objective(gamma2, y, s2):
    """Calibration log-likelihood with the prior mean profiled out."""
    return _cal_loglik_arrays(_profiled_mu_arrays(gamma2, y, s2), gamma2, y, s2)


def _zero_mean_objective(gamma2, y_e, se2, y_o, so2):
    return _joint_loglik_arrays(0.0, gamma2, y_e, se2, y_o, so2)


def _illusion_objective(gamma2, se2, y_o, so2):
    """Joint marginal log-likelihood with the mean profiled out.

    Profiling makes the objective independent of the experimental estimate
    (only its variance enters): the profiled mean absorbs the gap between
    the pooled observational mean and the experiment.
    """
    v = so2 + np.expand_dims(np.asarray(gamma2, dtype=np.float64), -1)
    w = 1.0 / v
    pooled = (w * y_o).sum(axis=-1) / w.sum(axis=-1)
    resid = y_o - pooled[..., None]
    precision = 1.0 / se2 + w.sum(axis=-1)
    return 0.5 * (-(resid**2 * w).sum(axis=-1) - np.log(v).sum(axis=-1) - np.log(precision))


def _sure_profiled_mu_arrays(gamma2, y, s2):
    c = s2**2 / (s2 + np.expand_dims(np.asarray(gamma2, dtype=np.float64), -1)) ** 2
    return (c * y).sum(axis=-1) / c.sum(axis=-1)


def _sure_objective_arrays(mu, gamma2, y, s2):
    g = np.expand_dims(np.asarray(gamma2, dtype=np.float64), -1)
    v = s2 + g
    resid = y - np.expand_dims(np.asarray(mu, dtype=np.float64), -1)
    term = s2 / v**2 * (s2 * resid**2 + g - s2)
    return term.mean(axis=-1)


def _sure_profile_objective(gamma2, y, s2):
    return _sure_objective_arrays(_sure_profiled_mu_arrays(gamma2, y, s2), gamma2, y, s2)


def calibration_loglik(mu: float, gamma2: float, calibration: Sequence[StudySummary]) -> float:
    """Marginal log-likelihood of the calibration estimates.

    Each calibration estimate is normal around its study bias, and the
    biases share the ``N(mu, gamma2)`` prior, so marginally
    ``y_k ~ N(mu, gamma2 + s2_k)``.  Additive constants are dropped
    (fixed to zero), leaving ``sum_k [-(y_k-mu)^2/(2 v_k) - log(v_k)/2]``.
    """
    if len(calibration) == 0:
        raise EmptyCalibrationSet("need at least one calibration study")
    y, s2 = _summaries_arrays(calibration)
    return float(_cal_loglik_arrays(float(mu), float(gamma2), y, s2))


def joint_marginal_loglik(
    mu: float,
    gamma2: float,
    experimental: StudySummary,
    observational: Sequence[StudySummary],
) -> float:
    """Marginal log-likelihood of the experiment and observational studies.

    The effect is integrated out under its flat prior and the biases under
    ``N(mu, gamma2)``.  Additive constants are fixed to zero, so values are
    comparable across ``(mu, gamma2)`` for fixed data only.
    """
    y_o, so2 = _summaries_arrays(observational)
    return float(
        _joint_loglik_arrays(
            float(mu), float(gamma2), experimental.estimate, experimental.variance, y_o, so2
        )
    )


def marginal_loglik(mu: float, gamma2: float, c: StudyCollection) -> float:
    """Full-model marginal log-likelihood of a collection.

    Sum of the joint experimental/observational term and, when calibration
    studies are present, their independent marginal term.
    """
    total = joint_marginal_loglik(mu, gamma2, c.experimental, c.observational)
    if c.calibration:
        total += calibration_loglik(mu, gamma2, c.calibration)
    return total


def profiled_mu(gamma2: float, calibration: Sequence[StudySummary]) -> float:
    """Precision-weighted mean of calibration estimates at a fixed variance.

    This is the exact maximizer of the calibration likelihood in the mean
    for the given ``gamma2`` (weights ``1/(gamma2 + s2_k)``).
    """
    if len(calibration) == 0:
        raise EmptyCalibrationSet("need at least one calibration study")
    y, s2 = _summaries_arrays(calibration)
    return float(_profiled_mu_arrays(float(gamma2), y, s2))


# ---------------------------------------------------------------------------
# one-dimensional bounded search over the prior variance
# ---------------------------------------------------------------------------


def _maximize_over_gamma2(objective, bound, xatol=_XATOL):
    """Maximize ``objective`` over ``[0, bound]`` elementwise.

    ``objective`` maps an array of variance candidates, one per instance,
    to objective values of the same shape; ``bound`` is the per-instance
    upper bound.  A 256-point log-spaced-plus-zero grid seeds a bracketed
    golden-section refinement.  Ties in the final candidate comparison go
    to the smallest variance so results never depend on evaluation order.

    Returns ``(gamma2, value, iterations)``.
    """
    bound = np.asarray(bound, dtype=np.float64)
    if not np.all(np.isfinite(bound)) or np.any(bound <= 0.0):
        raise InputError("search bound must be finite and > 0")
    rel = np.concatenate([[0.0], np.geomspace(1e-12, 1.0, _GRID_SIZE)])

    best_val = np.full(bound.shape, -np.inf)
    best_idx = np.zeros(bound.shape, dtype=np.intp)
    for i, r in enumerate(rel):
        val = np.asarray(objective(bound * r), dtype=np.float64)
        improved = val > best_val
        best_val = np.where(improved, val, best_val)
        best_idx = np.where(improved, i, best_idx)
    if not np.all(np.isfinite(best_val)):
        raise NonFiniteObjective("objective is non-finite on the entire search grid")

    lo = rel[np.maximum(best_idx - 1, 0)] * bound
    hi = rel[np.minimum(best_idx + 1, len(rel) - 1)] * bound

    span = float(np.max(hi - lo))
    iterations = 0
    if span > xatol:
        iterations = int(math.ceil(math.log(xatol / span) / math.log(_GOLDEN)))
        a, b = lo.copy(), hi.copy()
        x1 = b - _GOLDEN * (b - a)
        x2 = a + _GOLDEN * (b - a)
        f1 = np.asarray(objective(x1), dtype=np.float64)
        f2 = np.asarray(objective(x2), dtype=np.float64)
        for _ in range(iterations):
            left = f1 > f2
            b = np.where(left, x2, b)
            a = np.where(left, a, x1)
            x1_new = np.where(left, b - _GOLDEN * (b - a), x2)
            x2_new = np.where(left, x1, a + _GOLDEN * (b - a))
            probe = np.where(left, x1_new, x2_new)
            f_probe = np.asarray(objective(probe), dtype=np.float64)
            f1, f2 = np.where(left, f_probe, f2), np.where(left, f1, f_probe)
            x1, x2 = x1_new, x2_new
        refined = 0.5 * (a + b)
    else:
        refined = rel[best_idx] * bound

    # Pick the best of the exact endpoints, the grid winner, and the
    # refined point; strict inequality keeps the smallest variance on ties.
    candidates = np.stack(
        [np.zeros_like(bound), refined, rel[best_idx] * bound, bound], axis=-1
    )
    candidates = np.sort(candidates, axis=-1)
    gamma2 = candidates[..., 0]
    value = np.asarray(objective(gamma2), dtype=np.float64)
    for k in range(1, candidates.shape[-1]):
        cand = candidates[..., k]
        val = np.asarray(objective(cand), dtype=np.float64)
        better = val > value
        gamma2 = np.where(better, cand, gamma2)
        value = np.where(better, val, value)

    # Near the maximum the objective is flat to within float noise, which
    # caps the golden-section accuracy around sqrt(eps) in the argument.
    # Two parabolic-vertex passes over wider, signal-dominant stencils
    # recover the extra digits: the first uses a relative stencil and
    # estimates the curvature, the second sizes its stencil from that
    # curvature to balance cubic bias against evaluation noise.  Applied
    # only where the winner is interior and the three-point fit is
    # concave, with the step kept inside the stencil.
    h = 1e-4 * np.maximum(gamma2, 1e-6 * bound)
    for _ in range(2):
        interior = (gamma2 - h > 0.0) & (gamma2 + h < bound) & (h > 0.0)
        if not np.any(interior):
            break
        f_lo = np.asarray(objective(np.where(interior, gamma2 - h, gamma2)), dtype=np.float64)
        f_hi = np.asarray(objective(np.where(interior, gamma2 + h, gamma2)), dtype=np.float64)
        denom = f_lo + f_hi - 2.0 * value
        ok = interior & (denom < 0.0)
        step = np.where(ok, 0.5 * h * (f_lo - f_hi) / np.where(ok, denom, 1.0), 0.0)
        accept = ok & (np.abs(step) <= h)
        gamma2 = np.where(accept, gamma2 + step, gamma2)
        value = np.where(accept, np.asarray(objective(gamma2), dtype=np.float64), value)
        curvature = np.where(ok, -denom / np.where(h > 0.0, h, 1.0) ** 2, 0.0)
        noise = np.finfo(np.float64).eps * (np.abs(value) + 1.0)
        h = np.where(
            curvature > 0.0,
            np.minimum(np.cbrt(noise / np.maximum(curvature, 1e-300)), h),
            0.0,
        )

    gamma2 = np.where(gamma2 < xatol, 0.0, gamma2)
    gamma2 = np.where(bound - gamma2 < xatol, bound, gamma2)
    value = np.asarray(objective(gamma2), dtype=np.float64)
    if not np.all(np.isfinite(value)):
        raise NonFiniteObjective("objective is non-finite at the fitted variance")
    return gamma2, value, iterations


def default_bound(studies: Sequence[StudySummary]) -> float:
    """Default upper bound for the variance search.

    One thousand times the larger of the sample variance of the estimates
    and the largest sampling variance; generous enough that interior
    optima are never clipped at sane scales.
    """
    if len(studies) == 0:
        raise EmptyCalibrationSet("cannot derive a search bound from no studies")
    y, s2 = _summaries_arrays(studies)
    spread = float(np.mean((y - y.mean()) ** 2))
    return 1e3 * max(spread, float(s2.max()))


# ---------------------------------------------------------------------------
# maximum marginal likelihood
# ---------------------------------------------------------------------------


def _fit_mle_calibration_arrays(y, s2, bound):
    gamma2, value, iterations = _maximize_over_gamma2(
        lambda g: _cal_profile_objective(g, y, s2), bound
    )
    return _profiled_mu_arrays(gamma2, y, s2), gamma2, value, iterations


def fit_mle_calibration(calibration: Sequence[StudySummary], bound: float | None = None) -> FitReport:
    """Fit the bias prior to calibration studies by marginal likelihood.

    The mean is profiled out exactly at every candidate variance, reducing
    the problem to a one-dimensional bounded search over the variance.

    Parameters
    ----------
    calibration : sequence of StudySummary
        At least two calibration studies.
    bound : float, optional
        Upper bound for the variance search; defaults to
        :func:`default_bound` of the calibration studies.
    """
    if len(calibration) == 0:
        raise EmptyCalibrationSet("cannot fit a prior with no calibration studies")
    if len(calibration) < 2:
        raise TooFewCalibrationStudies("need at least 2 calibration studies to fit a prior")
    y, s2 = _summaries_arrays(calibration)
    b = default_bound(calibration) if bound is None else float(bound)
    mu, gamma2, value, iterations = _fit_mle_calibration_arrays(y, s2, np.asarray(b))
    g = float(gamma2)
    return FitReport(
        prior=BiasPrior(float(mu), g),
        method="mle",
        objective_value=float(value),
        iterations=iterations,
        bound_hit=(g == 0.0 or g == b),
    )


def _fit_mle_zero_mean_arrays(y_e, se2, y_o, so2, bound):
    gamma2, value, iterations = _maximize_over_gamma2(
        lambda g: _zero_mean_objective(g, y_e, se2, y_o, so2), bound
    )
    return gamma2, value, iterations


def fit_mle_zero_mean(c: StudyCollection, bound: float | None = None) -> FitReport:
    """Fit the bias variance with the mean pinned to zero.

    Maximizes the joint marginal likelihood of the experimental estimate
    and the observational estimates over the variance alone.
    """
    if c.num_observational < 2:
        raise TooFewObservationalStudies(
            f"zero-mean fit needs at least 2 observational studies, got {c.num_observational}"
        )
    y_o, so2 = _summaries_arrays(c.observational)
    b = default_bound(c.observational) if bound is None else float(bound)
    gamma2, value, iterations = _fit_mle_zero_mean_arrays(
        c.experimental.estimate, c.experimental.variance, y_o, so2, np.asarray(b)
    )
    g = float(gamma2)
    return FitReport(
        prior=BiasPrior(0.0, g),
        method="mle",
        objective_value=float(value),
        iterations=iterations,
        bound_hit=(g == 0.0 or g == b),
    )


def _fit_mle_illusion_arrays(y_e, se2, y_o, so2, bound):
    gamma2, value, iterations = _maximize_over_gamma2(
        lambda g: _illusion_objective(g, se2, y_o, so2), bound
    )
    mu = _profiled_mu_arrays(gamma2, y_o, so2) - y_e
    return mu, gamma2, value, iterations


def fit_mle_illusion(
    c: StudyCollection, bound: float | None = None
) -> tuple[FitReport, GaussianPosterior]:
    """Fit both prior parameters from the studies themselves.

    The profiled mean equals the pooled observational mean minus the
    experimental estimate, which forces the posterior mean back onto the
    experimental estimate for every variance: the returned posterior mean
    is set to ``y_e`` directly (an algebraic identity, not an optimizer
    output), while the posterior variance still shrinks with every
    additional study.
    """
    if c.num_observational < 1:
        raise TooFewObservationalStudies("need at least 1 observational study")
    y_o, so2 = _summaries_arrays(c.observational)
    y_e = c.experimental.estimate
    se2 = c.experimental.variance
    b = default_bound(c.observational) if bound is None else float(bound)
    mu, gamma2, value, iterations = _fit_mle_illusion_arrays(y_e, se2, y_o, so2, np.asarray(b))
    g = float(gamma2)
    report = FitReport(
        prior=BiasPrior(float(mu), g),
        method="mle",
        objective_value=float(value),
        iterations=iterations,
        bound_hit=(g == 0.0 or g == b),
    )
    variance = 1.0 / (1.0 / se2 + (1.0 / (so2 + g)).sum())
    return report, GaussianPosterior(y_e, float(variance))


# ---------------------------------------------------------------------------
# moment matching
# ---------------------------------------------------------------------------


def mm_gamma2_raw(calibration: Sequence[StudySummary]) -> float:
    """Unclamped moment-matching variance: mean of ``(y_k - ybar)^2 - s2_k``.

    Can be negative in finite samples; :func:`fit_mm_calibration` clamps
    at zero.
    """
    if len(calibration) < 2:
        raise TooFewCalibrationStudies("need at least 2 calibration studies")
    y, s2 = _summaries_arrays(calibration)
    return float(np.mean((y - y.mean()) ** 2 - s2))


def fit_mm_calibration(calibration: Sequence[StudySummary]) -> FitReport:
    """Moment-matching fit of the bias prior on calibration studies.

    The variance estimate is the average squared deviation from the plain
    mean minus the average sampling variance (clamped at zero); the mean
    is then the precision-weighted mean at that variance.
    """
    raw = mm_gamma2_raw(calibration)
    gamma2 = max(0.0, raw)
    mu = profiled_mu(gamma2, calibration)
    return FitReport(
        prior=BiasPrior(mu, gamma2),
        method="mm",
        objective_value=calibration_loglik(mu, gamma2, calibration),
        iterations=0,
        bound_hit=(raw <= 0.0),
    )


def fit_mm_zero_mean(observational_holdout: Sequence[StudySummary]) -> FitReport:
    """Moment-matching variance fit under a known zero bias mean.

    Intended for the held-out half of a sample-split zero-mean analysis;
    the estimator is the average of ``y_j^2 - s2_j``, clamped at zero.
    """
    if len(observational_holdout) < 2:
        raise TooFewObservationalStudies("need at least 2 studies in the holdout")
    y, s2 = _summaries_arrays(observational_holdout)
    raw = float(np.mean(y**2 - s2))
    gamma2 = max(0.0, raw)
    return FitReport(
        prior=BiasPrior(0.0, gamma2),
        method="mm",
        objective_value=float(_cal_loglik_arrays(0.0, gamma2, y, s2)),
        iterations=0,
        bound_hit=(raw <= 0.0),
    )


# ---------------------------------------------------------------------------
# SURE shrinkage for internal calibration
# ---------------------------------------------------------------------------


def sure_objective(mu: float, gamma2: float, calibration: Sequence[StudySummary]) -> float:
    """Stein unbiased risk estimate of the shrinkage rule ``(mu, gamma2)``."""
    y, s2 = _summaries_arrays(calibration)
    return float(_sure_objective_arrays(float(mu), float(gamma2), y, s2))


def fit_sure(calibration: Sequence[StudySummary], bound: float | None = None) -> FitReport:
    """Pick shrinkage hyperparameters by minimizing the unbiased risk estimate.

    The objective is quadratic in the mean at every fixed variance, so the
    mean is profiled out in closed form and the variance found by the same
    one-dimensional bounded search used for maximum likelihood.
    """
    if len(calibration) < 2:
        raise TooFewCalibrationStudies("need at least 2 calibration studies")
    y, s2 = _summaries_arrays(calibration)
    b = default_bound(calibration) if bound is None else float(bound)
    gamma2, neg_value, iterations = _maximize_over_gamma2(
        lambda g: -_sure_profile_objective(g, y, s2), np.asarray(b)
    )
    g = float(gamma2)
    mu = float(_sure_profiled_mu_arrays(g, y, s2))
    return FitReport(
        prior=BiasPrior(mu, g),
        method="sure",
        objective_value=float(-neg_value),
        iterations=iterations,
        bound_hit=(g == 0.0 or g == b),
    )


def shrink_biases(calibration: Sequence[StudySummary], prior: BiasPrior) -> list[float]:
    """Shrink each calibration estimate toward the prior mean.

    Returns ``gamma2/(s2_k+gamma2) * y_k + s2_k/(s2_k+gamma2) * mu`` per
    study: full shrinkage to the mean at ``gamma2 = 0``, no shrinkage in
    the large-``gamma2`` limit.
    """
    y, s2 = _summaries_arrays(calibration)
    lam = prior.gamma2 / (s2 + prior.gamma2) if prior.gamma2 > 0.0 else np.zeros_like(s2)
    return [float(b) for b in lam * y + (1.0 - lam) * prior.mu]


def internal_eb_theta(c: StudyCollection, bhat: Sequence[float]) -> GaussianPosterior:
    """Combine studies after subtracting per-study bias estimates.

    ``bhat[j]`` is paired positionally with observational study ``j``.
    The reported variance is the reciprocal precision of the weighted mean
    and ignores the uncertainty in the bias estimates themselves, so it is
    an approximation (typically an understatement).
    """
    if len(bhat) != c.num_observational:
        raise LengthMismatch(
            f"got {len(bhat)} bias estimates for {c.num_observational} observational studies"
        )
    if c.num_observational == 0:
        return posterior_flat(c.experimental)
    y_o, so2 = _summaries_arrays(c.observational)
    mean, var = combined_moments(
        c.experimental.estimate,
        c.experimental.variance,
        y_o - np.asarray(bhat, dtype=np.float64),
        so2,
        0.0,
        0.0,
    )
    return GaussianPosterior(float(mean), float(var))


# ---------------------------------------------------------------------------
# sample splitting for the zero-mean regime
# ---------------------------------------------------------------------------


def split_observational(c: StudyCollection, mode: str = "half"):
    """Split a collection's observational studies for sample-split fitting.

    Returns ``(estimation, fitting)`` collections sharing the experimental
    study.  ``"half"`` gives the leading studies (rounding up) to the
    estimation side and the rest to the fitting side; ``"evenodd"``
    alternates; ``"none"`` uses every study on both sides.
    """
    obs = c.observational
    if mode == "none":
        return c, c
    if mode == "half":
        cut = (len(obs) + 1) // 2
        est, fit = obs[:cut], obs[cut:]
    elif mode == "evenodd":
        est, fit = obs[0::2], obs[1::2]
    else:
        raise InputError(f"unknown split mode {mode!r}; expected half, evenodd, or none")
    return c.with_observational(est), c.with_observational(fit)
