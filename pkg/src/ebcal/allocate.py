"""Budgeted allocation of experimental, observational, and calibration studies.

Chooses how many experiments to run, which observational study candidates
to commission, and how many calibration studies to buy, to maximize the
posterior precision of the combined effect estimate under a cost budget.
For each calibration count the remaining problem is a knapsack with one
unbounded item (experiments); it is solved by LP-relaxation greedy rounding
plus a one-swap local search, and the best calibration count wins.  A
brute-force solver doubles as the exactness oracle on small instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .studies import InputError

__all__ = [
    "InfeasibleAllocation",
    "SearchSpaceTooLarge",
    "AllocationProblem",
    "Allocation",
    "default_gamma2_schedule",
    "precision_objective",
    "solve_greedy",
    "solve_bruteforce",
]

_EPS = 1e-9


class InfeasibleAllocation(InputError):
    """The allocation costs more than the budget."""


class SearchSpaceTooLarge(InputError):
    """Brute force would enumerate too many nodes."""


@dataclass(frozen=True)
class AllocationProblem:
    """Inputs of one allocation decision.

    ``gamma2_of_nc`` maps the number of calibration studies to the bias
    variance the posterior would be computed with; more calibration
    studies typically mean a smaller (better-identified) value.  There is
    no canonical form for that mapping, so it is caller-supplied; see
    :func:`default_gamma2_schedule` for an explicit heuristic default.
    """

    budget: float
    cost_experimental: float
    cost_observational: float
    cost_calibration: float
    sigma_e2: float
    sigma_o2: tuple[float, ...]
    gamma2_of_nc: Callable[[int], float]
    nc_max: int

    def __post_init__(self):
        object.__setattr__(self, "sigma_o2", tuple(float(v) for v in self.sigma_o2))
        if not (math.isfinite(self.budget) and self.budget >= 0.0):
            raise InputError(f"budget must be finite and >= 0, got {self.budget}")
        for name in ("cost_experimental", "cost_observational", "cost_calibration"):
            if not getattr(self, name) > 0.0:
                raise InputError(f"{name} must be > 0")
        if not self.sigma_e2 > 0.0:
            raise InputError("sigma_e2 must be > 0")
        if any(v <= 0.0 for v in self.sigma_o2):
            raise InputError("all observational variances must be > 0")
        if self.nc_max < 0:
            raise InputError("nc_max must be >= 0")

    def gamma2(self, n_c: int) -> float:
        g = float(self.gamma2_of_nc(n_c))
        if not (math.isfinite(g) and g >= 0.0):
            raise InputError(f"gamma2_of_nc({n_c}) must be finite and >= 0, got {g}")
        return g


@dataclass(frozen=True)
class Allocation:
    """A feasible choice: experiment count, calibration count, candidate picks."""

    n_e: int
    n_c: int
    z: tuple[int, ...]
    objective: float

    def cost(self, p: AllocationProblem) -> float:
        return (
            self.n_e * p.cost_experimental
            + sum(self.z) * p.cost_observational
            + self.n_c * p.cost_calibration
        )


def default_gamma2_schedule(gamma0_sq: float, excess: float) -> Callable[[int], float]:
    """Heuristic bias-variance schedule ``gamma0_sq * (1 + excess/max(n_c, 1))``.

    This is an artifact of the solver, not an estimated quantity: it
    simply makes the effective bias variance shrink toward ``gamma0_sq``
    as calibration studies accumulate.  Replace it with a fitted mapping
    whenever one is available.
    """
    if gamma0_sq < 0.0 or excess < 0.0:
        raise InputError("gamma0_sq and excess must be >= 0")
    return lambda n_c: gamma0_sq * (1.0 + excess / max(n_c, 1))


def precision_objective(a: Allocation, p: AllocationProblem) -> float:
    """Posterior precision of an allocation; raises if it busts the budget."""
    if len(a.z) != len(p.sigma_o2):
        raise InputError(f"z has {len(a.z)} entries for {len(p.sigma_o2)} candidates")
    if a.n_e < 0 or a.n_c < 0 or any(zj not in (0, 1) for zj in a.z):
        raise InputError("n_e, n_c must be >= 0 and z binary")
    if a.cost(p) > p.budget + _EPS * max(1.0, p.budget):
        raise InfeasibleAllocation(
            f"allocation costs {a.cost(p)!r}, budget is {p.budget!r}"
        )
    g = p.gamma2(a.n_c)
    value = a.n_e / p.sigma_e2
    for zj, so2 in zip(a.z, p.sigma_o2):
        if zj:
            value += 1.0 / (so2 + g)
    return value


def _greedy_for_nc(p: AllocationProblem, n_c: int):
    budget = p.budget - n_c * p.cost_calibration
    if budget < -_EPS:
        return None
    g = p.gamma2(n_c)
    J = len(p.sigma_o2)
    value_e = 1.0 / p.sigma_e2
    values = [1.0 / (so2 + g) for so2 in p.sigma_o2]
    co, ce = p.cost_observational, p.cost_experimental

    # Candidates cost the same, so any greedy- or swap-reachable selection
    # is a prefix of the value order; track the prefix length m.
    order = sorted(range(J), key=lambda j: (-values[j], j))
    ordered_values = [values[j] for j in order]

    def state(m, n_e):
        remaining = budget - m * co - n_e * ce
        return m, n_e, remaining, n_e * value_e + sum(ordered_values[:m])

    def spend_leftover(m, n_e):
        # Step (3): extend the prefix while affordable, floor the rest
        # into experiments.
        remaining = budget - m * co - n_e * ce
        while m < J and co <= remaining + _EPS:
            m += 1
            remaining -= co
        n_e += int((remaining + _EPS) // ce)
        return state(m, n_e)

    # Step (2): LP-relaxation fill by descending value-per-cost ratio with
    # the experiment as the single unbounded item, rounded down.
    items = [(values[j] / co, 0, j) for j in range(J)]
    items.append((value_e / ce, 1, J))
    items.sort(key=lambda t: (-t[0], t[1], t[2]))
    m, n_e, remaining = 0, 0, budget
    for _, tag, _j in items:
        if tag == 0:
            if co <= remaining + _EPS:
                m += 1
                remaining -= co
        else:
            take = int((remaining + _EPS) // ce)
            n_e += take
            remaining -= take * ce
    m, n_e, remaining, obj = spend_leftover(m, n_e)

    # Step (4): local search over single conversions.  Unit costs differ,
    # so converting between study types means freeing just enough budget
    # for one unit of the other kind, then re-spending any leftover.
    while True:
        best = None
        if n_e >= 1:
            cand = spend_leftover(m, n_e - 1)  # one experiment -> candidates
            if cand[3] > obj + _EPS:
                best = cand
        if m >= 1 and ce > remaining + _EPS:
            # Drop the fewest (lowest-value) candidates that make one more
            # experiment affordable.
            drop = int(math.ceil((ce - remaining - _EPS) / co))
            if drop <= m:
                cand = spend_leftover(m - drop, n_e + 1)
                if cand[3] > obj + _EPS and (best is None or cand[3] > best[3]):
                    best = cand
        if best is None:
            break
        m, n_e, remaining, obj = best

    z = [0] * J
    for j in order[:m]:
        z[j] = 1
    return Allocation(n_e, n_c, tuple(z), obj)


def solve_greedy(p: AllocationProblem) -> Allocation:
    """Greedy-plus-local-search allocation over the calibration grid.

    For each calibration count: compute value-per-cost ratios, fill by the
    LP-relaxation order, round down, spend any leftover budget, then
    improve by one-swap moves.  The best calibration count wins; ties go
    to the smallest.  The empty allocation is always feasible, so the
    solver never fails.
    """
    best = Allocation(0, 0, tuple([0] * len(p.sigma_o2)), 0.0)
    for n_c in range(p.nc_max + 1):
        candidate = _greedy_for_nc(p, n_c)
        if candidate is not None and candidate.objective > best.objective + _EPS:
            best = candidate
    return best


def solve_bruteforce(p: AllocationProblem) -> Allocation:
    """Exhaustive optimum over calibration counts and candidate subsets.

    For each subset the experiment count is set to the largest affordable
    value, which is optimal because the objective is strictly increasing
    in it.  Node count is ``(nc_max + 1) * 2^J``, guarded at 1e7.
    """
    J = len(p.sigma_o2)
    nodes = (p.nc_max + 1) * (2**J)
    if J > 60 or nodes > 10**7:
        raise SearchSpaceTooLarge(f"{nodes} nodes exceeds the 1e7 brute-force budget")

    subsets = np.arange(2**J, dtype=np.int64)
    bits = (subsets[:, None] >> np.arange(J)) & 1
    subset_cost = bits.sum(axis=1) * p.cost_observational
    so2 = np.asarray(p.sigma_o2)

    best = Allocation(0, 0, tuple([0] * J), 0.0)
    for n_c in range(p.nc_max + 1):
        budget = p.budget - n_c * p.cost_calibration
        if budget < -_EPS:
            continue
        g = p.gamma2(n_c)
        values = bits @ (1.0 / (so2 + g)) if J else np.zeros(1)
        slack = budget - subset_cost
        affordable = slack >= -_EPS
        n_e = np.floor((slack + _EPS) / p.cost_experimental).astype(np.int64)
        n_e = np.where(affordable, np.maximum(n_e, 0), 0)
        objective = np.where(affordable, n_e / p.sigma_e2 + values, -np.inf)
        idx = int(np.argmax(objective))
        if objective[idx] > best.objective + _EPS:
            best = Allocation(
                int(n_e[idx]), n_c, tuple(int(b) for b in bits[idx]), float(objective[idx])
            )
    return best
