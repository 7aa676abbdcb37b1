"""Study-level summaries from unit-level data.

Turns individual ``(covariates, treatment, outcome, weight)`` rows into the
``(estimate, variance)`` summaries consumed by the combiners: weighted
difference in means with a conservative variance, nearest-neighbor
matching over treated units, inverse-probability weighting, and a seeded
bootstrap for variances that lack a clean closed form.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .studies import EXPERIMENTAL, InputError, ParseError, StudySummary, UnitRecord

__all__ = [
    "OneArmEmpty",
    "NotEnoughControls",
    "PropensityOutOfBounds",
    "ResampleDegenerate",
    "UnitDataset",
    "dim_point",
    "difference_in_means",
    "matching_point",
    "matching_estimate",
    "ipw_point",
    "ipw_estimate",
    "bootstrap_variance",
    "read_units_csv",
    "write_units_csv",
]

PROPENSITY_EPS = 1e-6


class OneArmEmpty(InputError):
    """A contrast needs both arms populated (with positive weight)."""


class NotEnoughControls(InputError):
    """Fewer control units than requested matches."""


class PropensityOutOfBounds(InputError):
    """A propensity value violates the overlap guard."""

    def __init__(self, row: int, value: float):
        self.row = row
        self.value = value
        super().__init__(
            f"propensity {value!r} at row {row} is outside "
            f"({PROPENSITY_EPS}, {1 - PROPENSITY_EPS})"
        )


class ResampleDegenerate(InputError):
    """Bootstrap resampling kept producing datasets the estimator rejects."""


@dataclass(frozen=True, eq=False)
class UnitDataset:
    """Column-oriented unit-level dataset.

    Attributes
    ----------
    x : ndarray, shape (n, d)
        Covariates.
    a : ndarray, shape (n,)
        Binary treatment indicator.
    o : ndarray, shape (n,)
        Observed outcome.
    w : ndarray, shape (n,)
        Nonnegative unit weights (all ones unless reweighted).
    ids : ndarray or None
        Optional original unit identifiers, carried through partitioning.
    """

    x: np.ndarray
    a: np.ndarray
    o: np.ndarray
    w: np.ndarray = None
    ids: np.ndarray = None

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        a = np.asarray(self.a, dtype=np.int64)
        o = np.asarray(self.o, dtype=np.float64)
        w = np.ones(len(o)) if self.w is None else np.asarray(self.w, dtype=np.float64)
        if x.shape[0] != a.shape[0] or a.shape != o.shape or o.shape != w.shape:
            raise InputError("x, a, o, w must have one entry per unit")
        if not np.isin(a, (0, 1)).all():
            raise InputError("treatment indicator must be 0/1")
        if not (np.isfinite(o).all() and np.isfinite(x).all()):
            raise InputError("covariates and outcomes must be finite")
        if not (np.isfinite(w).all() and (w >= 0.0).all()):
            raise InputError("weights must be finite and >= 0")
        for name, arr in (("x", x), ("a", a), ("o", o), ("w", w)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.ids is not None:
            ids = np.asarray(self.ids, dtype=np.int64).copy()
            if ids.shape != o.shape:
                raise InputError("ids must have one entry per unit")
            ids.setflags(write=False)
            object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return self.o.shape[0]

    @property
    def covariate_dim(self) -> int:
        return self.x.shape[1]

    def take(self, indices) -> "UnitDataset":
        """Row subset (or resample) preserving all columns."""
        indices = np.asarray(indices)
        return UnitDataset(
            self.x[indices],
            self.a[indices],
            self.o[indices],
            self.w[indices],
            None if self.ids is None else self.ids[indices],
        )

    @classmethod
    def from_records(cls, records) -> "UnitDataset":
        records = list(records)
        if not records:
            raise InputError("need at least one unit record")
        return cls(
            np.array([r.covariate for r in records], dtype=np.float64),
            np.array([r.treatment for r in records], dtype=np.int64),
            np.array([r.outcome for r in records], dtype=np.float64),
            np.array([r.weight for r in records], dtype=np.float64),
        )

    def records(self) -> list[UnitRecord]:
        return [
            UnitRecord(tuple(self.x[i]), int(self.a[i]), float(self.o[i]), float(self.w[i]))
            for i in range(len(self))
        ]


def _arm_masks(d: UnitDataset):
    treated = d.a == 1
    control = ~treated
    if not treated.any() or d.w[treated].sum() <= 0.0:
        raise OneArmEmpty("treated arm is empty or carries zero weight")
    if not control.any() or d.w[control].sum() <= 0.0:
        raise OneArmEmpty("control arm is empty or carries zero weight")
    return treated, control


def _weighted_mean(o, w):
    return float((w * o).sum() / w.sum())


def dim_point(d: UnitDataset) -> float:
    """Weighted difference in means: treated mean minus control mean."""
    treated, control = _arm_masks(d)
    return _weighted_mean(d.o[treated], d.w[treated]) - _weighted_mean(
        d.o[control], d.w[control]
    )


def _arm_variance_of_mean(o, w):
    """Conservative variance of a weighted arm mean: s^2 / n_eff.

    Uses the frequency-corrected weighted sample variance and the
    effective sample size ``(sum w)^2 / sum w^2``; with unit weights this
    is exactly the usual ``s^2/n`` with an ``n-1`` denominator.
    """
    sw = w.sum()
    sw2 = (w**2).sum()
    denom = sw - sw2 / sw
    if denom <= 0.0:
        raise OneArmEmpty("an arm needs at least 2 effectively weighted units for a variance")
    m = (w * o).sum() / sw
    s2 = float((w * (o - m) ** 2).sum() / denom)
    return s2 / (sw**2 / sw2)


def difference_in_means(
    d: UnitDataset, study_id: str = "dim", kind: str = EXPERIMENTAL
) -> StudySummary:
    """Difference-in-means summary with the conservative two-arm variance.

    The variance is the sum of per-arm ``s^2/n`` terms, a slight
    overestimate of the true sampling variance of the contrast.  Raises
    ``NonPositiveVariance`` through the summary constructor when the
    outcomes have literally zero dispersion; use :func:`dim_point` when
    only the point estimate is meaningful.
    """
    treated, control = _arm_masks(d)
    estimate = dim_point(d)
    variance = _arm_variance_of_mean(d.o[treated], d.w[treated]) + _arm_variance_of_mean(
        d.o[control], d.w[control]
    )
    return StudySummary(study_id, kind, estimate, variance)


def matching_point(d: UnitDataset, n_matches: int) -> float:
    """Matching contrast averaged over treated units.

    Each treated unit is compared with the mean outcome of its
    ``n_matches`` nearest controls in Euclidean covariate distance; exact
    distance ties are broken by the lowest original row index.  Weights
    are ignored; the contrast is the plain average over treated units.
    """
    if n_matches < 1:
        raise InputError(f"n_matches must be >= 1, got {n_matches}")
    treated = d.a == 1
    control = ~treated
    n_controls = int(control.sum())
    if not treated.any():
        raise OneArmEmpty("no treated units to match")
    if n_controls < n_matches:
        raise NotEnoughControls(f"{n_controls} controls available, {n_matches} matches requested")
    xt = d.x[treated]
    xc = d.x[control]
    oc = d.o[control]
    # Full (treated x control) distance matrix; stable argsort keeps the
    # lowest-index control on exact ties.
    dist = np.sqrt(((xt[:, None, :] - xc[None, :, :]) ** 2).sum(axis=2))
    order = np.argsort(dist, axis=1, kind="stable")[:, :n_matches]
    matched_mean = oc[order].mean(axis=1)
    return float((d.o[treated] - matched_mean).mean())


def matching_estimate(
    d: UnitDataset,
    n_matches: int,
    study_id: str = "matching",
    kind: str = EXPERIMENTAL,
    bootstrap_reps: int = 200,
    seed: int = 0,
) -> StudySummary:
    """Matching summary; the variance comes from the seeded bootstrap."""
    estimate = matching_point(d, n_matches)
    variance = bootstrap_variance(d, lambda dd: matching_point(dd, n_matches), bootstrap_reps, seed)
    return StudySummary(study_id, kind, estimate, variance)


def _propensity_values(d: UnitDataset, propensity) -> np.ndarray:
    e = np.asarray(propensity(d.x), dtype=np.float64).reshape(-1)
    if e.shape[0] != len(d):
        raise InputError("propensity function must return one value per unit")
    bad = ~((e > PROPENSITY_EPS) & (e < 1.0 - PROPENSITY_EPS))
    if bad.any():
        row = int(np.argmax(bad))
        raise PropensityOutOfBounds(row, float(e[row]))
    return e


def ipw_point(d: UnitDataset, propensity) -> float:
    """Inverse-probability-weighted contrast.

    ``propensity`` maps the covariate matrix to per-unit treatment
    probabilities, which must respect the overlap guard.  Unit weights are
    ignored; the estimator is the plain average of the weighted terms.
    """
    e = _propensity_values(d, propensity)
    a = d.a.astype(np.float64)
    return float((a * d.o / e - (1.0 - a) * d.o / (1.0 - e)).mean())


def ipw_estimate(
    d: UnitDataset,
    propensity,
    study_id: str = "ipw",
    kind: str = EXPERIMENTAL,
    bootstrap_reps: int = 200,
    seed: int = 0,
) -> StudySummary:
    """IPW summary; the variance comes from the seeded bootstrap."""
    estimate = ipw_point(d, propensity)
    variance = bootstrap_variance(d, lambda dd: ipw_point(dd, propensity), bootstrap_reps, seed)
    return StudySummary(study_id, kind, estimate, variance)


def bootstrap_variance(d: UnitDataset, estimator, n_reps: int, seed: int) -> float:
    """Bootstrap variance of a point estimator, deterministic in ``seed``.

    Rows are resampled with replacement; each replicate draws from its own
    ``(seed, replicate, attempt)`` stream so the result is independent of
    evaluation order.  Replicates that break the estimator (for example by
    emptying an arm) are redrawn up to 100 times before giving up.

    ``estimator`` maps a dataset to a float or to a StudySummary (whose
    estimate is used).
    """
    if n_reps < 100:
        raise InputError(f"need at least 100 bootstrap replicates, got {n_reps}")
    n = len(d)
    values = np.empty(n_reps)
    for rep in range(n_reps):
        for attempt in range(100):
            rng = np.random.default_rng([seed, rep, attempt])
            resample = d.take(rng.integers(0, n, size=n))
            try:
                result = estimator(resample)
            except InputError:
                continue
            values[rep] = result.estimate if isinstance(result, StudySummary) else float(result)
            break
        else:
            raise ResampleDegenerate(
                f"replicate {rep}: no valid resample in 100 attempts"
            )
    return float(values.var(ddof=1))


# ---------------------------------------------------------------------------
# unit-level CSV: x1,...,xd,a,o[,w]
# ---------------------------------------------------------------------------


def read_units_csv(path) -> UnitDataset:
    """Read a unit-level dataset; the weight column is optional."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(1, "empty file; expected header x1,...,xd,a,o[,w]") from None
        has_weight = header and header[-1] == "w"
        core = header[:-1] if has_weight else header
        if len(core) < 2 or core[-2] != "a" or core[-1] != "o":
            raise ParseError(1, f"expected header x1,...,xd,a,o[,w], got {','.join(header)!r}")
        dim = len(core) - 2
        if [f"x{i + 1}" for i in range(dim)] != core[:dim]:
            raise ParseError(1, f"covariate columns must be named x1..x{dim}")
        xs, As, os_, ws = [], [], [], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(line, f"expected {len(header)} fields, got {len(row)}")
            try:
                vals = [float(f) for f in row]
            except ValueError:
                raise ParseError(line, f"non-numeric field in {row!r}") from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError(line, "all fields must be finite")
            xs.append(vals[:dim])
            a = vals[dim]
            if a not in (0.0, 1.0):
                raise ParseError(line, f"treatment must be 0 or 1, got {a!r}")
            As.append(int(a))
            os_.append(vals[dim + 1])
            ws.append(vals[dim + 2] if has_weight else 1.0)
    if not As:
        raise ParseError(2, "no data rows")
    return UnitDataset(np.array(xs).reshape(len(As), dim), As, os_, ws)


def write_units_csv(d: UnitDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i + 1}" for i in range(d.covariate_dim)] + ["a", "o", "w"])
        for i in range(len(d)):
            writer.writerow(
                [repr(float(v)) for v in d.x[i]]
                + [int(d.a[i]), repr(float(d.o[i])), repr(float(d.w[i]))]
            )
