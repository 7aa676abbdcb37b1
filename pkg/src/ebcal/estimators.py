"""Scikit-learn style combiners for the four inference regimes.

Each combiner follows the fit/predict protocol: ``fit`` learns the bias
prior from study data, ``predict`` returns the Gaussian posterior of the
causal effect for a collection.  Hyperparameters live in ``__init__`` and
are introspectable through ``get_params``, so the combiners work with
``sklearn.base.clone`` and ecosystem tooling.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import priorfit
from .posterior import (
    posterior_ceb,
    posterior_flat,
    posterior_given_prior,
    posterior_zero_mean,
)
from .studies import (
    CALIBRATION,
    InputError,
    StudyCollection,
    StudySummary,
    validate_collection,
)

__all__ = [
    "as_collection",
    "as_calibration_studies",
    "FlatPriorCombiner",
    "ZeroMeanEBCombiner",
    "FullEBCombiner",
    "CalibratedEBCombiner",
    "InternalCalibrationCombiner",
]


def as_collection(studies) -> StudyCollection:
    """Validate and return a study collection.

    Accepts a :class:`StudyCollection` (validated in place) or an iterable
    of :class:`StudySummary` with exactly one experimental entry.
    """
    if isinstance(studies, StudyCollection):
        return validate_collection(studies)
    from .studies import collection_from_summaries

    return collection_from_summaries(list(studies))


def as_calibration_studies(studies) -> list[StudySummary]:
    """Extract calibration summaries from a collection or a flat sequence."""
    if isinstance(studies, StudyCollection):
        return list(studies.calibration)
    out = list(studies)
    for s in out:
        if not isinstance(s, StudySummary):
            raise InputError(f"expected StudySummary entries, got {type(s).__name__}")
        if s.kind != CALIBRATION:
            raise InputError(f"study {s.id!r} has kind {s.kind!r}, expected calibration")
    return out


class FlatPriorCombiner(BaseEstimator):
    """Experiment-only inference: a flat prior on the biases.

    Observational studies supplied alongside the experiment are ignored by
    contract; the posterior is exactly the experimental likelihood.
    """

    def fit(self, studies, y=None):
        as_collection(studies)
        self.n_features_in_ = 0
        return self

    def predict(self, studies):
        check_is_fitted(self)
        c = as_collection(studies)
        return posterior_flat(c.experimental)


class ZeroMeanEBCombiner(BaseEstimator):
    """Zero-mean bias prior with the variance fit from the studies.

    Parameters
    ----------
    method : {"mle", "mm"}
        Variance fitting strategy.
    split : {"half", "evenodd", "none"}
        How to separate fitting from estimation studies.  ``"half"`` (the
        default) fits the variance on the trailing half of the
        observational studies and combines only the leading half;
        ``"none"`` fits and combines on all of them.  When the fitting
        side of a split would hold fewer than two studies, the fit falls
        back to ``"none"``.
    bound : float, optional
        Upper bound for the variance search (``mle`` only).
    """

    def __init__(self, method="mle", split="half", bound=None):
        self.method = method
        self.split = split
        self.bound = bound

    def _split(self, c):
        est, fit = priorfit.split_observational(c, self.split)
        if fit.num_observational < 2:
            return c, c
        return est, fit

    def fit(self, studies, y=None):
        c = as_collection(studies)
        if c.num_observational < 2:
            raise priorfit.TooFewObservationalStudies(
                f"zero-mean regime needs at least 2 observational studies, got {c.num_observational}"
            )
        _, fitting = self._split(c)
        if self.method == "mle":
            report = priorfit.fit_mle_zero_mean(fitting, self.bound)
        elif self.method == "mm":
            report = priorfit.fit_mm_zero_mean(fitting.observational)
        else:
            raise InputError(f"unknown method {self.method!r}; expected mle or mm")
        self.fit_report_ = report
        self.gamma2_ = report.prior.gamma2
        return self

    def predict(self, studies):
        check_is_fitted(self)
        c = as_collection(studies)
        estimation, _ = self._split(c)
        return posterior_zero_mean(estimation, self.gamma2_)


class FullEBCombiner(BaseEstimator):
    """Both prior parameters fit from the combined studies.

    Fitting the bias mean from the same studies being combined pins the
    posterior mean to the experimental estimate while the posterior
    variance keeps shrinking, so this combiner mainly serves as the
    overconfident baseline the calibrated combiner is measured against.
    """

    def __init__(self, bound=None):
        self.bound = bound

    def fit(self, studies, y=None):
        c = as_collection(studies)
        self.fit_report_, self.posterior_ = priorfit.fit_mle_illusion(c, self.bound)
        self.prior_ = self.fit_report_.prior
        self._fitted_collection = c
        return self

    def predict(self, studies=None):
        """Posterior for the fitted collection, or transfer the prior.

        With no argument (or the collection passed to ``fit``), returns
        the regime posterior, whose mean is the experimental estimate bit
        for bit.  For a different collection the fitted prior is applied
        as-is, which no longer pins the mean.
        """
        check_is_fitted(self)
        if studies is None:
            return self.posterior_
        c = as_collection(studies)
        if c == self._fitted_collection:
            return self.posterior_
        return posterior_given_prior(c, self.prior_)


class CalibratedEBCombiner(BaseEstimator):
    """Bias prior fit on calibration studies, applied to the full model.

    Parameters
    ----------
    method : {"mle", "mm", "sure"}
        Prior fitting strategy on the calibration studies.
    bound : float, optional
        Upper bound for the variance search (``mle``/``sure``).
    """

    def __init__(self, method="mle", bound=None):
        self.method = method
        self.bound = bound

    def fit(self, studies, y=None):
        calibration = as_calibration_studies(studies)
        if self.method == "mle":
            report = priorfit.fit_mle_calibration(calibration, self.bound)
        elif self.method == "mm":
            report = priorfit.fit_mm_calibration(calibration)
        elif self.method == "sure":
            report = priorfit.fit_sure(calibration, self.bound)
        else:
            raise InputError(f"unknown method {self.method!r}; expected mle, mm, or sure")
        self.fit_report_ = report
        self.prior_ = report.prior
        return self

    def predict(self, studies):
        check_is_fitted(self)
        c = as_collection(studies)
        return posterior_ceb(c, self.prior_)


class InternalCalibrationCombiner(BaseEstimator):
    """Study-paired calibration: shrink per-study bias reads, then combine.

    ``fit`` learns shrinkage hyperparameters from the calibration
    estimates (by unbiased-risk minimization, or the other prior fitters);
    ``predict`` expects a collection whose calibration studies are paired
    positionally with its observational studies, shrinks each calibration
    estimate, and subtracts it from its partner before pooling.
    """

    def __init__(self, method="sure", bound=None):
        self.method = method
        self.bound = bound

    def fit(self, studies, y=None):
        calibration = as_calibration_studies(studies)
        if self.method == "sure":
            report = priorfit.fit_sure(calibration, self.bound)
        elif self.method == "mle":
            report = priorfit.fit_mle_calibration(calibration, self.bound)
        elif self.method == "mm":
            report = priorfit.fit_mm_calibration(calibration)
        else:
            raise InputError(f"unknown method {self.method!r}; expected sure, mle, or mm")
        self.fit_report_ = report
        self.prior_ = report.prior
        return self

    def predict(self, studies):
        check_is_fitted(self)
        c = as_collection(studies)
        if c.num_calibration != c.num_observational:
            raise priorfit.LengthMismatch(
                "internal calibration needs one calibration study per observational study"
            )
        bhat = priorfit.shrink_biases(c.calibration, self.prior_)
        return priorfit.internal_eb_theta(c, bhat)
