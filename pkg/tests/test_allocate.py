import numpy as np
import pytest

from ebcal.allocate import (
    Allocation,
    AllocationProblem,
    InfeasibleAllocation,
    SearchSpaceTooLarge,
    default_gamma2_schedule,
    precision_objective,
    solve_bruteforce,
    solve_greedy,
)
from ebcal.studies import InputError


def problem(**kwargs):
    defaults = dict(
        budget=10.0,
        cost_experimental=5.0,
        cost_observational=1.0,
        cost_calibration=1.0,
        sigma_e2=1.0,
        sigma_o2=(1.0,) * 10,
        gamma2_of_nc=lambda n: 1.0,
        nc_max=10,
    )
    defaults.update(kwargs)
    return AllocationProblem(**defaults)


def random_problem(rng, max_candidates=12):
    j = int(rng.integers(1, max_candidates + 1))
    schedule = default_gamma2_schedule(float(rng.uniform(0.1, 2.0)), float(rng.uniform(0.0, 3.0)))
    return AllocationProblem(
        budget=float(rng.uniform(1.0, 30.0)),
        cost_experimental=float(rng.uniform(0.5, 8.0)),
        cost_observational=float(rng.uniform(0.5, 4.0)),
        cost_calibration=float(rng.uniform(0.2, 3.0)),
        sigma_e2=float(rng.uniform(0.3, 3.0)),
        sigma_o2=tuple(rng.uniform(0.3, 3.0, j)),
        gamma2_of_nc=schedule,
        nc_max=int(rng.integers(0, 6)),
    )


class TestObjective:
    def test_single_experiment(self):
        p = problem()
        a = Allocation(1, 0, (0,) * 10, 0.0)
        assert precision_objective(a, p) == 1.0

    def test_single_candidate(self):
        p = problem()
        a = Allocation(0, 0, (1,) + (0,) * 9, 0.0)
        assert precision_objective(a, p) == 0.5  # 1/(1 + 1)

    def test_empty(self):
        p = problem()
        assert precision_objective(Allocation(0, 0, (0,) * 10, 0.0), p) == 0.0

    def test_infeasible(self):
        p = problem()
        with pytest.raises(InfeasibleAllocation):
            precision_objective(Allocation(3, 0, (0,) * 10, 0.0), p)

    def test_schedule_validation(self):
        p = problem(gamma2_of_nc=lambda n: -1.0)
        with pytest.raises(InputError):
            precision_objective(Allocation(0, 0, (0,) * 10, 0.0), p)


class TestWorkedInstance:
    def test_all_observational_beats_two_experiments(self):
        p = problem()
        greedy = solve_greedy(p)
        brute = solve_bruteforce(p)
        assert brute.objective == 5.0
        assert greedy.objective == 5.0
        assert greedy.n_e == 0 and sum(greedy.z) == 10
        assert precision_objective(greedy, p) == greedy.objective


class TestBruteForce:
    def test_zero_budget(self):
        p = problem(budget=0.0)
        a = solve_bruteforce(p)
        assert (a.n_e, a.n_c, sum(a.z), a.objective) == (0, 0, 0, 0.0)

    def test_only_experiments_affordable(self):
        p = problem(budget=12.0, cost_observational=100.0, cost_calibration=100.0, nc_max=2)
        a = solve_bruteforce(p)
        assert a.n_e == 2  # floor(12 / 5)
        assert sum(a.z) == 0

    def test_monotone_in_budget(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            p = random_problem(rng, max_candidates=8)
            lo = solve_bruteforce(p)
            grown = AllocationProblem(
                budget=p.budget * 1.5,
                cost_experimental=p.cost_experimental,
                cost_observational=p.cost_observational,
                cost_calibration=p.cost_calibration,
                sigma_e2=p.sigma_e2,
                sigma_o2=p.sigma_o2,
                gamma2_of_nc=p.gamma2_of_nc,
                nc_max=p.nc_max,
            )
            hi = solve_bruteforce(grown)
            assert hi.objective >= lo.objective - 1e-12

    def test_search_space_guard(self):
        p = problem(sigma_o2=(1.0,) * 30, nc_max=50)
        with pytest.raises(SearchSpaceTooLarge):
            solve_bruteforce(p)


class TestGreedy:
    def test_feasible_and_consistent(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            p = random_problem(rng)
            a = solve_greedy(p)
            assert a.cost(p) <= p.budget + 1e-9
            assert np.isclose(precision_objective(a, p), a.objective, rtol=1e-12)

    def test_cheap_observational_dominance(self):
        p = problem(cost_experimental=1e6, budget=4.0, sigma_o2=(0.5, 1.0, 2.0, 4.0), nc_max=0)
        a = solve_greedy(p)
        assert a.n_e == 0
        assert a.z == (1, 1, 1, 1)

    def test_nothing_affordable(self):
        p = problem(budget=0.5, cost_observational=1.0, cost_calibration=1.0)
        a = solve_greedy(p)
        assert (a.n_e, a.n_c, sum(a.z), a.objective) == (0, 0, 0, 0.0)

    def test_against_bruteforce_on_random_instances(self):
        rng = np.random.default_rng(99)
        ratios = []
        for _ in range(150):
            p = random_problem(rng)
            greedy = solve_greedy(p)
            brute = solve_bruteforce(p)
            if brute.objective == 0.0:
                assert greedy.objective == 0.0
                continue
            ratio = greedy.objective / brute.objective
            assert ratio >= 0.5 - 1e-12
            ratios.append(ratio)
        assert np.mean([r >= 0.95 for r in ratios]) >= 0.95
