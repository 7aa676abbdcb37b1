"""Command-line interface.

Subcommands: ``fit-prior``, ``posterior``, ``estimate``, ``simulate``,
``semisynth``, ``allocate``.  Every path is a thin composition of library
calls; no numeric logic lives here.  Exit codes: 0 success, 1 usage error,
2 data or validation error.  Diagnostics go to stderr, results to ``--out``
or stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import allocate as alloc_mod
from . import semisynth as semisynth_mod
from . import simulate as sim_mod
from .estimators import (
    CalibratedEBCombiner,
    FlatPriorCombiner,
    FullEBCombiner,
    ZeroMeanEBCombiner,
)
from .studies import (
    GaussianPosterior,
    InputError,
    StudyCollection,
    read_studies_csv,
    read_summaries_csv,
    write_posterior_json,
    write_studies_csv,
)
from .withinstudy import (
    difference_in_means,
    ipw_estimate,
    matching_estimate,
    read_units_csv,
    write_units_csv,
)

#: Seed used when neither the command line nor a config file provides one.
DEFAULT_SEED = 12345


class RegimeRequirementUnmet(InputError):
    """The requested inference regime's precondition does not hold."""


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def model_dispatch(
    model_flag: str,
    c: StudyCollection,
    method_flag: str = "mle",
    bound: float | None = None,
    split: str = "half",
) -> GaussianPosterior:
    """Route a collection to the requested inference regime.

    ``flat`` ignores the observational studies; ``eb0`` assumes zero-mean
    biases and fits only their variance (sample-split by default); ``eb``
    fits mean and variance from the studies themselves; ``ceb`` fits the
    prior on calibration studies and combines everything.
    """
    if model_flag == "flat":
        return FlatPriorCombiner().fit(c).predict(c)
    if model_flag == "eb0":
        if c.num_observational < 2:
            raise RegimeRequirementUnmet(
                f"the zero-mean regime needs more than one observational study; "
                f"got J={c.num_observational}"
            )
        if method_flag not in ("mle", "mm"):
            raise InputError(f"eb0 supports methods mle and mm, not {method_flag!r}")
        return ZeroMeanEBCombiner(method=method_flag, split=split, bound=bound).fit(c).predict(c)
    if model_flag == "eb":
        if c.num_observational < 1:
            raise RegimeRequirementUnmet(
                "the full empirical-Bayes regime needs at least one observational study"
            )
        return FullEBCombiner(bound=bound).fit(c).predict()
    if model_flag == "ceb":
        if c.num_calibration < 2:
            raise RegimeRequirementUnmet(
                f"the calibrated regime needs at least two calibration studies; "
                f"got K={c.num_calibration}"
            )
        return CalibratedEBCombiner(method=method_flag, bound=bound).fit(c).predict(c)
    raise InputError(f"unknown model {model_flag!r}; expected flat, eb0, eb, or ceb")


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _render_pairs(pairs, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(dict(pairs)) + "\n"
    if fmt == "csv":
        keys = ",".join(k for k, _ in pairs)
        vals = ",".join(repr(v) if isinstance(v, float) else str(v) for _, v in pairs)
        return f"{keys}\n{vals}\n"
    width = max(len(k) for k, _ in pairs)
    lines = [f"{k:<{width}}  {v!r}" if isinstance(v, float) else f"{k:<{width}}  {v}" for k, v in pairs]
    return "\n".join(lines) + "\n"


def _render_posterior(p: GaussianPosterior, fmt: str) -> str:
    if fmt == "table":
        lo, hi = p.interval()
        header = f"{'mean':>12}  {'95% interval':>24}"
        row = f"{p.mean:>12.4g}  [{lo:>10.4g}, {hi:>10.4g}]"
        return f"{header}\n{row}\n"
    return _render_pairs([("mean", p.mean), ("variance", p.variance)], fmt)


def _read_config(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise InputError(f"could not parse config {path}: {exc}") from None


def _config_section(config: dict, name: str) -> dict:
    section = config.get(name, config)
    if not isinstance(section, dict):
        raise InputError(f"config section {name!r} must be a table")
    return dict(section)


def _effective_seed(args, config: dict) -> int:
    if args.seed is not None:
        return args.seed
    if "seed" in config:
        return int(config["seed"])
    return DEFAULT_SEED


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_posterior(args) -> int:
    c = read_studies_csv(args.studies)
    p = model_dispatch(args.model, c, args.method, args.bound, args.split)
    if args.format == "json" and args.out:
        write_posterior_json(p, args.out)
    else:
        _emit(_render_posterior(p, args.format), args.out)
    return 0


def _cmd_fit_prior(args) -> int:
    calibration = [s for s in read_summaries_csv(args.calibration) if s.kind == "calibration"]
    combiner = CalibratedEBCombiner(method=args.method, bound=args.bound).fit(calibration)
    report = combiner.fit_report_
    pairs = [
        ("mu", report.prior.mu),
        ("gamma2", report.prior.gamma2),
        ("method", report.method),
        ("objective", report.objective_value),
        ("bound_hit", report.bound_hit),
    ]
    _emit(_render_pairs(pairs, args.format), args.out)
    return 0


def _cmd_estimate(args) -> int:
    d = read_units_csv(args.data)
    seed = args.seed if args.seed is not None else DEFAULT_SEED
    if args.estimator == "dim":
        s = difference_in_means(d, study_id=args.id, kind=args.kind)
    elif args.estimator == "matching":
        s = matching_estimate(
            d,
            args.matches,
            study_id=args.id,
            kind=args.kind,
            bootstrap_reps=args.bootstrap_reps,
            seed=seed,
        )
    else:
        beta = args.propensity_beta

        def propensity(x):
            return 1.0 / (1.0 + np.exp(-beta * x[:, 0]))

        s = ipw_estimate(
            d,
            propensity,
            study_id=args.id,
            kind=args.kind,
            bootstrap_reps=args.bootstrap_reps,
            seed=seed,
        )
    pairs = [("id", s.id), ("kind", s.kind), ("estimate", s.estimate), ("variance", s.variance)]
    _emit(_render_pairs(pairs, args.format), args.out)
    return 0


def _cmd_simulate(args) -> int:
    config = _config_section(_read_config(args.config), "simulate")
    config["seed"] = _effective_seed(args, config)
    try:
        cfg = sim_mod.SimConfig(**config)
    except TypeError as exc:
        raise InputError(f"bad simulate config: {exc}") from None
    result = sim_mod.run_sweep(cfg, threads=args.threads)
    _emit(result.to_csv_text(), args.out)
    return 0


def _cmd_semisynth(args) -> int:
    if not args.out:
        raise _UsageError("semisynth requires --out <directory>")
    config = _config_section(_read_config(args.config), "dgp")
    config["seed"] = _effective_seed(args, config)
    try:
        cfg = semisynth_mod.DgpConfig(**config)
    except TypeError as exc:
        raise InputError(f"bad semisynth config: {exc}") from None
    result = semisynth_mod.run_pipeline(cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_units_csv(result.experimental_part, out_dir / "experimental.csv")
    for j, part in enumerate(result.observational_parts, start=1):
        write_units_csv(part, out_dir / f"observational-{j:03d}.csv")
    for j, part in enumerate(result.calibration_parts, start=1):
        write_units_csv(part, out_dir / f"calibration-{j:03d}.csv")
    write_studies_csv(result.collection, out_dir / "studies.csv")
    with open(out_dir / "truth.json", "w", encoding="utf-8") as fh:
        json.dump({"ate": result.true_ate, "bias_mean": result.bias_mean}, fh)
        fh.write("\n")
    print(f"wrote {2 * len(result.observational_parts) + 1} unit datasets to {out_dir}", file=sys.stderr)
    return 0


def _cmd_allocate(args) -> int:
    with open(args.sigma_o2_file, encoding="utf-8") as fh:
        sigma_o2 = [float(line) for line in fh.read().split()]
    problem = alloc_mod.AllocationProblem(
        budget=args.budget,
        cost_experimental=args.cost_exp,
        cost_observational=args.cost_obs,
        cost_calibration=args.cost_cal,
        sigma_e2=args.sigma_e2,
        sigma_o2=tuple(sigma_o2),
        gamma2_of_nc=alloc_mod.default_gamma2_schedule(args.gamma0_sq, args.gamma_excess),
        nc_max=args.nc_max,
    )
    solver = alloc_mod.solve_bruteforce if args.solver == "bruteforce" else alloc_mod.solve_greedy
    a = solver(problem)
    payload = {
        "n_e": a.n_e,
        "n_c": a.n_c,
        "z": list(a.z),
        "objective": a.objective,
        "cost": a.cost(problem),
    }
    _emit(json.dumps(payload) + "\n", args.out)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help=f"RNG seed (default {DEFAULT_SEED})")
    common.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")
    common.add_argument("--out", default=None, help="output path (default: stdout)")
    common.add_argument(
        "--format", choices=("json", "csv", "table"), default="json", help="output format"
    )

    parser = _Parser(prog="ebcal", description="Combine experimental, observational, and calibration studies.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("posterior", parents=[common], help="effect posterior for a collection")
    p.add_argument("--model", choices=("flat", "eb0", "eb", "ceb"), required=True)
    p.add_argument("--studies", required=True, help="study CSV (id,kind,estimate,variance)")
    p.add_argument("--method", choices=("mle", "mm", "sure"), default="mle")
    p.add_argument("--bound", type=float, default=None, help="upper bound for the variance search")
    p.add_argument("--split", choices=("half", "evenodd", "none"), default="half")
    p.set_defaults(func=_cmd_posterior)

    p = sub.add_parser("fit-prior", parents=[common], help="fit the bias prior on calibration studies")
    p.add_argument("--method", choices=("mle", "mm", "sure"), required=True)
    p.add_argument("--calibration", required=True, help="calibration study CSV")
    p.add_argument("--bound", type=float, default=None)
    p.set_defaults(func=_cmd_fit_prior)

    p = sub.add_parser("estimate", parents=[common], help="study summary from unit-level data")
    p.add_argument("--data", required=True, help="unit CSV (x1,...,xd,a,o[,w])")
    p.add_argument("--estimator", choices=("dim", "matching", "ipw"), default="dim")
    p.add_argument("--matches", type=int, default=1, help="matches per treated unit")
    p.add_argument("--propensity-beta", type=float, default=0.5, help="logistic slope on x1 for ipw")
    p.add_argument("--bootstrap-reps", type=int, default=200)
    p.add_argument("--id", default="study")
    p.add_argument("--kind", choices=("experimental", "observational", "calibration"), default="experimental")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo sweep over J")
    p.add_argument("--config", required=True, help="TOML config with SimConfig fields")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("semisynth", parents=[common], help="run the semi-synthetic pipeline")
    p.add_argument("--config", required=True, help="TOML config with DgpConfig fields")
    p.set_defaults(func=_cmd_semisynth)

    p = sub.add_parser("allocate", parents=[common], help="budgeted study allocation")
    p.add_argument("--budget", type=float, required=True)
    p.add_argument("--cost-exp", type=float, required=True)
    p.add_argument("--cost-obs", type=float, required=True)
    p.add_argument("--cost-cal", type=float, required=True)
    p.add_argument("--sigma-e2", type=float, required=True)
    p.add_argument("--sigma-o2-file", required=True, help="one observational variance per line")
    p.add_argument("--nc-max", type=int, required=True)
    p.add_argument("--gamma0-sq", type=float, default=1.0, help="limit of the heuristic bias-variance schedule")
    p.add_argument("--gamma-excess", type=float, default=1.0, help="1/n_c excess of the heuristic schedule")
    p.add_argument("--solver", choices=("greedy", "bruteforce"), default="greedy")
    p.set_defaults(func=_cmd_allocate)

    return parser


def run(argv=None) -> int:
    """Parse and execute; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
