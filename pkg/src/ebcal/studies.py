"""Core study-level data types, validation, and serialization.

A causal question is summarized by a :class:`StudyCollection`: one
experimental study, any number of observational studies (biased by
confounding), and any number of calibration studies (observational designs
whose true effect is zero, so their estimates read bias directly).  All
types are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace

__all__ = [
    "EXPERIMENTAL",
    "OBSERVATIONAL",
    "CALIBRATION",
    "KINDS",
    "InputError",
    "NonPositiveVariance",
    "KindMismatch",
    "MissingExperimental",
    "DuplicateExperimental",
    "ParseError",
    "StudySummary",
    "BiasPrior",
    "GaussianPosterior",
    "StudyCollection",
    "UnitRecord",
    "validate_collection",
    "read_summaries_csv",
    "read_studies_csv",
    "write_studies_csv",
    "write_posterior_json",
]

EXPERIMENTAL = "experimental"
OBSERVATIONAL = "observational"
CALIBRATION = "calibration"
KINDS = (EXPERIMENTAL, OBSERVATIONAL, CALIBRATION)


class InputError(ValueError):
    """Root of all data-validation errors raised by this package."""


class NonPositiveVariance(InputError):
    """A study's sampling variance is zero, negative, or non-finite."""

    def __init__(self, study_id: str, variance: float):
        self.study_id = study_id
        self.variance = variance
        super().__init__(
            f"study {study_id!r} has non-positive or non-finite variance "
            f"{variance!r}; sampling variances must be finite and > 0"
        )


class KindMismatch(InputError):
    """A study sits in a slot that disagrees with its declared kind."""

    def __init__(self, study_id: str, expected: str, actual: str):
        self.study_id = study_id
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"study {study_id!r} has kind {actual!r} but was placed in the "
            f"{expected!r} slot"
        )


class MissingExperimental(InputError):
    """A collection has no experimental study."""


class DuplicateExperimental(InputError):
    """More than one experimental study was supplied for one collection."""


class ParseError(InputError):
    """A CSV row could not be parsed; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


def _check_finite(study_id: str, name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise InputError(f"study {study_id!r}: {name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class StudySummary:
    """One study's point estimate and sampling variance.

    Parameters
    ----------
    id : str
        Label, unique within a collection by convention.
    kind : str
        One of ``"experimental"``, ``"observational"``, ``"calibration"``.
    estimate : float
        Point estimate in effect units.
    variance : float
        Sampling variance of the estimate, strictly positive.
    """

    id: str
    kind: str
    estimate: float
    variance: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise KindMismatch(self.id, "|".join(KINDS), self.kind)
        object.__setattr__(self, "estimate", _check_finite(self.id, "estimate", self.estimate))
        variance = float(self.variance)
        if not math.isfinite(variance) or variance <= 0.0:
            raise NonPositiveVariance(self.id, variance)
        object.__setattr__(self, "variance", variance)


@dataclass(frozen=True)
class BiasPrior:
    """Gaussian prior over study biases: mean ``mu``, variance ``gamma2``."""

    mu: float
    gamma2: float

    def __post_init__(self):
        mu = float(self.mu)
        gamma2 = float(self.gamma2)
        if not math.isfinite(mu):
            raise InputError(f"prior mean must be finite, got {mu!r}")
        if not math.isfinite(gamma2) or gamma2 < 0.0:
            raise InputError(f"prior variance must be finite and >= 0, got {gamma2!r}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "gamma2", gamma2)


@dataclass(frozen=True)
class GaussianPosterior:
    """Gaussian posterior for the causal effect."""

    mean: float
    variance: float

    def __post_init__(self):
        mean = float(self.mean)
        variance = float(self.variance)
        if not math.isfinite(mean):
            raise InputError(f"posterior mean must be finite, got {mean!r}")
        if not math.isfinite(variance) or variance <= 0.0:
            raise InputError(f"posterior variance must be finite and > 0, got {variance!r}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", variance)

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)

    def interval(self, z: float = 1.96) -> tuple[float, float]:
        """Central interval ``mean +/- z * sd``."""
        half = z * self.sd
        return (self.mean - half, self.mean + half)


@dataclass(frozen=True)
class StudyCollection:
    """One experimental study plus observational and calibration studies.

    Study order is preserved so that seeded runs are reproducible.
    """

    experimental: StudySummary
    observational: tuple[StudySummary, ...] = ()
    calibration: tuple[StudySummary, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "observational", tuple(self.observational))
        object.__setattr__(self, "calibration", tuple(self.calibration))
        validate_collection(self)

    @property
    def num_observational(self) -> int:
        return len(self.observational)

    @property
    def num_calibration(self) -> int:
        return len(self.calibration)

    def with_observational(self, observational) -> "StudyCollection":
        """Copy of this collection with the observational slate replaced."""
        return replace(self, observational=tuple(observational))


@dataclass(frozen=True)
class UnitRecord:
    """Individual-level row: covariates, binary treatment, outcome, weight."""

    covariate: tuple[float, ...]
    treatment: int
    outcome: float
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "covariate", tuple(float(x) for x in self.covariate))
        if self.treatment not in (0, 1):
            raise InputError(f"treatment must be 0 or 1, got {self.treatment!r}")
        if not math.isfinite(self.outcome):
            raise InputError(f"outcome must be finite, got {self.outcome!r}")
        if not (math.isfinite(self.weight) and self.weight >= 0.0):
            raise InputError(f"weight must be finite and >= 0, got {self.weight!r}")


def validate_collection(c: StudyCollection) -> StudyCollection:
    """Check every collection invariant and return ``c`` unchanged.

    Idempotent: a collection that validates once validates again.

    Raises
    ------
    MissingExperimental
        If the experimental slot is empty.
    KindMismatch
        If any study's kind disagrees with its slot.
    NonPositiveVariance
        If any study's variance is not finite and positive.
    """
    if c.experimental is None:
        raise MissingExperimental("collection has no experimental study")
    slots = (
        ((c.experimental,), EXPERIMENTAL),
        (c.observational, OBSERVATIONAL),
        (c.calibration, CALIBRATION),
    )
    for studies, expected in slots:
        for s in studies:
            if s.kind != expected:
                raise KindMismatch(s.id, expected, s.kind)
            if not math.isfinite(s.variance) or s.variance <= 0.0:
                raise NonPositiveVariance(s.id, s.variance)
            _check_finite(s.id, "estimate", s.estimate)
    return c


_CSV_HEADER = ["id", "kind", "estimate", "variance"]


def _parse_float(text: str, line: int, name: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(line, f"could not parse {name} from {text!r}") from None
    if not math.isfinite(value):
        raise ParseError(line, f"{name} must be finite, got {text!r}")
    return value


def read_summaries_csv(path) -> list[StudySummary]:
    """Read study summaries from a ``id,kind,estimate,variance`` CSV."""
    summaries = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(1, "empty file; expected header id,kind,estimate,variance") from None
        if [h.strip() for h in header] != _CSV_HEADER:
            raise ParseError(1, f"expected header {','.join(_CSV_HEADER)}, got {','.join(header)!r}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(line, f"expected 4 fields, got {len(row)}")
            study_id, kind, est_text, var_text = (f.strip() for f in row)
            if kind not in KINDS:
                raise ParseError(line, f"unknown study kind {kind!r}")
            estimate = _parse_float(est_text, line, "estimate")
            variance = _parse_float(var_text, line, "variance")
            try:
                summaries.append(StudySummary(study_id, kind, estimate, variance))
            except InputError as exc:
                raise ParseError(line, str(exc)) from None
    return summaries


def collection_from_summaries(summaries) -> StudyCollection:
    """Assemble a :class:`StudyCollection` from a flat list of summaries."""
    experimental = None
    observational = []
    calibration = []
    for s in summaries:
        if s.kind == EXPERIMENTAL:
            if experimental is not None:
                raise DuplicateExperimental(
                    f"studies {experimental.id!r} and {s.id!r} are both experimental"
                )
            experimental = s
        elif s.kind == OBSERVATIONAL:
            observational.append(s)
        else:
            calibration.append(s)
    if experimental is None:
        raise MissingExperimental("no experimental study in input")
    return StudyCollection(experimental, tuple(observational), tuple(calibration))


def read_studies_csv(path) -> StudyCollection:
    """Read a full collection (exactly one experimental row) from CSV."""
    return collection_from_summaries(read_summaries_csv(path))


def _iter_summaries(c):
    if isinstance(c, StudyCollection):
        yield c.experimental
        yield from c.observational
        yield from c.calibration
    else:
        yield from c


def write_studies_csv(c, path) -> None:
    """Write a collection (or iterable of summaries) to CSV.

    Floats are written with ``repr`` so ``read(write(x)) == x`` bit for bit.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_HEADER)
        for s in _iter_summaries(c):
            writer.writerow([s.id, s.kind, repr(s.estimate), repr(s.variance)])


def write_posterior_json(p: GaussianPosterior, path) -> None:
    """Write ``{"mean": ..., "variance": ...}`` to ``path``."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"mean": p.mean, "variance": p.variance}, fh)
        fh.write("\n")
