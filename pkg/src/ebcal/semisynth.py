"""Semi-synthetic pipeline: one population, many derived study designs.

Generates a randomized population under a linear outcome model, partitions
it into disjoint parts by stratified sampling, and derives from each part
an observational dataset (covariate-dependent treatment induced by
importance reweighting) and a calibration dataset (a pseudo-treatment with
the same covariate dependence and no causal effect).  Part 1 keeps the
original randomized assignment and plays the experiment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .studies import (
    CALIBRATION,
    EXPERIMENTAL,
    OBSERVATIONAL,
    InputError,
    StudyCollection,
)
from .withinstudy import UnitDataset, difference_in_means

__all__ = [
    "TooFewUnits",
    "DgpConfig",
    "ReweightedPart",
    "PipelineResult",
    "generate_population",
    "partition_stratified",
    "induce_confounding",
    "make_calibration",
    "build_study_collection",
    "run_pipeline",
]


class TooFewUnits(InputError):
    """Not enough units per arm to build the requested partition."""


@dataclass(frozen=True)
class DgpConfig:
    """Configuration of the synthetic data-generating process.

    The outcome model is linear: ``O = alpha + beta * A + delta . X + eps``
    with standard-normal covariates and ``eps ~ N(0, noise_sd^2)``, so the
    true average treatment effect is ``beta`` exactly.  Only the first
    covariate drives the confounded designs, through the logistic
    propensity ``e(X) = sigmoid(propensity_beta * X_1)``.
    """

    n_units: int = 50_000
    alpha: float = 0.0
    beta: float = -0.5
    delta: tuple[float, ...] = (1.0,)
    noise_sd: float = 1.0
    propensity_beta: float = 0.5
    n_parts: int = 100
    treated_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "delta", tuple(float(v) for v in self.delta))
        if self.n_parts < 2:
            raise InputError(f"n_parts must be >= 2, got {self.n_parts}")
        if self.n_units < 2 * self.n_parts:
            raise InputError(
                f"need n_units >= 2 * n_parts, got {self.n_units} units for {self.n_parts} parts"
            )
        if not self.noise_sd > 0.0:
            raise InputError(f"noise_sd must be > 0, got {self.noise_sd}")
        if not 0.0 < self.treated_fraction < 1.0:
            raise InputError(f"treated_fraction must be in (0, 1), got {self.treated_fraction}")
        if not self.delta:
            raise InputError("delta must have at least one coefficient")

    @property
    def true_ate(self) -> float:
        return self.beta


@dataclass(frozen=True)
class ReweightedPart:
    """A part with confounding-inducing weights and its induced bias."""

    dataset: UnitDataset
    bias: float


@dataclass(frozen=True)
class PipelineResult:
    """Everything one seeded pipeline run produced."""

    collection: StudyCollection
    true_ate: float
    part_biases: tuple[float, ...]
    experimental_part: UnitDataset
    observational_parts: tuple[UnitDataset, ...]
    calibration_parts: tuple[UnitDataset, ...]

    @property
    def bias_mean(self) -> float:
        return float(np.mean(self.part_biases)) if self.part_biases else 0.0


def _sigmoid(u):
    return 1.0 / (1.0 + np.exp(-u))


def generate_population(cfg: DgpConfig) -> UnitDataset:
    """Draw the randomized population under the linear outcome model."""
    rng = np.random.default_rng([cfg.seed, 0])
    dim = len(cfg.delta)
    x = rng.standard_normal((cfg.n_units, dim))
    a = (rng.random(cfg.n_units) < cfg.treated_fraction).astype(np.int64)
    o = cfg.alpha + cfg.beta * a + x @ np.asarray(cfg.delta) + cfg.noise_sd * rng.standard_normal(
        cfg.n_units
    )
    return UnitDataset(x, a, o, ids=np.arange(cfg.n_units))


def partition_stratified(d: UnitDataset, n_parts: int, seed: int) -> list[UnitDataset]:
    """Split a dataset into disjoint parts with balanced arm proportions.

    Each arm is shuffled separately and dealt into ``n_parts`` chunks whose
    sizes differ by at most one unit, so treated/control proportions match
    across parts up to that one unit.  The union of the parts is the input.
    """
    if n_parts < 1:
        raise InputError(f"n_parts must be >= 1, got {n_parts}")
    treated_idx = np.flatnonzero(d.a == 1)
    control_idx = np.flatnonzero(d.a == 0)
    if len(treated_idx) < n_parts or len(control_idx) < n_parts:
        raise TooFewUnits(
            f"each arm needs at least {n_parts} units, got "
            f"{len(treated_idx)} treated / {len(control_idx)} control"
        )
    rng = np.random.default_rng([seed, 1])
    treated_chunks = np.array_split(rng.permutation(treated_idx), n_parts)
    control_chunks = np.array_split(rng.permutation(control_idx), n_parts)
    parts = []
    for tc, cc in zip(treated_chunks, control_chunks):
        parts.append(d.take(np.sort(np.concatenate([tc, cc]))))
    return parts


def induce_confounding(
    part: UnitDataset, propensity_beta: float, delta, seed: int | None = None
) -> ReweightedPart:
    """Reweight a randomized part so treatment looks covariate-dependent.

    Treated units get weight proportional to ``e(X)`` and controls to
    ``1 - e(X)``, where ``e(X) = sigmoid(propensity_beta * X_1)``; each
    arm is normalized by the part-level mean of its propensity so that a
    flat propensity yields exactly unit weights.  Reweighting is
    deterministic; ``seed`` is accepted for call-site symmetry with the
    sampling steps and ignored.

    The induced bias is ``delta`` dotted with the design-level covariate
    imbalance, i.e. the gap between the ``e``-weighted and
    ``(1-e)``-weighted covariate means over the whole part.  A flat
    propensity gives exactly zero bias.
    """
    delta = np.asarray(delta, dtype=np.float64)
    e = _sigmoid(propensity_beta * part.x[:, 0])
    if not (part.a == 1).any() or not (part.a == 0).any():
        raise InputError("part needs both treated and control units")
    w = np.where(part.a == 1, e / e.mean(), (1.0 - e) / (1.0 - e).mean()) * part.w
    reweighted = UnitDataset(part.x, part.a, part.o, w, part.ids)
    xbar_t = (e[:, None] * part.x).sum(axis=0) / e.sum()
    xbar_c = ((1.0 - e)[:, None] * part.x).sum(axis=0) / (1.0 - e).sum()
    bias = float(delta @ (xbar_t - xbar_c))
    return ReweightedPart(reweighted, bias)


def make_calibration(part: UnitDataset, propensity_beta: float, seed: int) -> UnitDataset:
    """Replace treatment with a causally inert pseudo-treatment.

    The pseudo-treatment is drawn from the same covariate-dependent
    propensity used by the observational design, independently of the
    original assignment and outcome given the covariates.  Outcomes are
    left untouched, so the pseudo-contrast reads pure confounding bias.
    """
    rng = np.random.default_rng([seed, 2])
    e = _sigmoid(propensity_beta * part.x[:, 0])
    pseudo = (rng.random(len(part)) < e).astype(np.int64)
    return UnitDataset(part.x, pseudo, part.o, np.ones(len(part)), part.ids)


def _derive(parts, cfg: DgpConfig):
    experimental = difference_in_means(parts[0], study_id="exp", kind=EXPERIMENTAL)
    observational, calibration = [], []
    obs_parts, cal_parts, biases = [], [], []
    for j, part in enumerate(parts[1:], start=1):
        reweighted = induce_confounding(part, cfg.propensity_beta, cfg.delta)
        obs_parts.append(reweighted.dataset)
        biases.append(reweighted.bias)
        observational.append(
            difference_in_means(reweighted.dataset, study_id=f"obs-{j:03d}", kind=OBSERVATIONAL)
        )
        cal = make_calibration(part, cfg.propensity_beta, seed=_part_seed(cfg.seed, j))
        cal_parts.append(cal)
        calibration.append(difference_in_means(cal, study_id=f"cal-{j:03d}", kind=CALIBRATION))
    collection = StudyCollection(experimental, tuple(observational), tuple(calibration))
    return collection, parts[0], obs_parts, cal_parts, biases


def _part_seed(seed: int, part_index: int) -> int:
    # Stable per-part stream: parts can be processed in any order.
    return int(np.random.SeedSequence([seed, 3, part_index]).generate_state(1)[0])


def build_study_collection(parts, cfg: DgpConfig) -> StudyCollection:
    """Summarize parts into one collection.

    Part 1 becomes the experimental summary (randomized assignment,
    difference in means); every later part contributes one confounded
    observational summary, analyzed while deliberately ignoring the
    covariates, and one pseudo-treatment calibration summary.
    """
    parts = list(parts)
    if len(parts) < 2:
        raise InputError(f"need at least 2 parts, got {len(parts)}")
    collection, *_ = _derive(parts, cfg)
    return collection


def run_pipeline(cfg: DgpConfig) -> PipelineResult:
    """Generate, partition, and summarize one seeded pipeline run."""
    population = generate_population(cfg)
    parts = partition_stratified(population, cfg.n_parts, cfg.seed)
    collection, exp_part, obs_parts, cal_parts, biases = _derive(parts, cfg)
    return PipelineResult(
        collection=collection,
        true_ate=cfg.true_ate,
        part_biases=tuple(biases),
        experimental_part=exp_part,
        observational_parts=tuple(obs_parts),
        calibration_parts=tuple(cal_parts),
    )
