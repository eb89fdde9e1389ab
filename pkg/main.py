"""Entry point: parse the command line, run one command, write its report."""

import argparse
import asyncio
import signal
import sys
import traceback
from itertools import combinations
from typing import List, Optional

import config
from logger import setup_logger
from module.instance import Instance, InstanceError, parse_instance
from module.lp import LpNumericalError
from module.matroid import MatroidError
from module.polytope import (
    DecompositionError,
    Mode,
    NotInPolytopeError,
    decompose_base,
    decompose_point,
)
from module.report import RunReport, write_report
from module.rng import fresh_seed, stream
from module.rounding import (
    METHODS,
    IndependentRounder,
    RoundingError,
    RoundingTrace,
    make_rounder,
    verify_trace,
)
from module.solvers import (
    SolverInfeasible,
    SolverParams,
    crossing_rows,
    pareto_query,
    solve_matroid_knapsacks,
    solve_loose_packing,
    solve_mincost_packing,
    solve_minimax,
)
from module.stats import (
    MIN_MARGINAL_TRIALS,
    RoundingTask,
    draw_async,
    estimate_marginals,
    verify_independent_submodular_tails,
    verify_linear_tails,
    verify_negative_correlation,
    verify_submodular_lower_tail,
)
from module.trials import TrialRunner, TrialsInterrupted

logger = setup_logger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

# Keyed by why the run ended. A failed check, a solver that found nothing and
# an interrupted run share a code; the log says which it was.
EXIT_CODES = {
    None: EXIT_OK,
    "failed": EXIT_FAILURE,
    "interrupted": EXIT_FAILURE,
    "usage": EXIT_USAGE,
}

CHECKS = ("marginals", "negcorr", "tails", "submod-lower", "submod-indep")
PROBLEMS = ("knapsack", "loose", "minimax", "mincost", "pareto")
DEFAULT_DELTAS = "0.2,0.4,0.6,0.8,1.0"

# Errors that mean the computation itself gave up, as opposed to bad input.
COMPUTE_ERRORS = (
    SolverInfeasible,
    RoundingError,
    DecompositionError,
    LpNumericalError,
)


class UsageError(Exception):
    """The command line is malformed or asks for something the instance lacks."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _non_negative(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {value}")
    return value


def _positive(text: str) -> int:
    value = _non_negative(text)
    if value == 0:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def _deltas(text: str) -> List[float]:
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not values or any(not 0 <= v <= 1 for v in values):
        raise argparse.ArgumentTypeError("deltas must lie in [0, 1]")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="matround", description="Dependent rounding in matroid polytopes")
    commands = parser.add_subparsers(dest="command", required=True)

    def common(sub):
        sub.add_argument("--instance", required=True, help="instance JSON file")
        sub.add_argument("--seed", type=_non_negative, help="root seed of every random stream")
        sub.add_argument("--out", help="report path; stdout when absent")
        sub.add_argument("--jobs", type=_positive, help=f"worker processes (default {config.JOBS})")

    common(commands.add_parser("decompose", help="write the point as a convex combination"))

    round_cmd = commands.add_parser("round", help="round the instance's point")
    common(round_cmd)
    round_cmd.add_argument("--method", choices=METHODS, default="swap")
    round_cmd.add_argument("--trials", type=_positive, default=1)
    round_cmd.add_argument("--trace", action="store_true", help="record and check every step")

    verify_cmd = commands.add_parser("verify", help="Monte Carlo check of a rounding guarantee")
    verify_cmd.add_argument("check", choices=CHECKS)
    common(verify_cmd)
    verify_cmd.add_argument("--method", choices=METHODS, default="swap")
    verify_cmd.add_argument("--trials", type=_positive, default=20000)
    verify_cmd.add_argument("--deltas", type=_deltas, default=_deltas(DEFAULT_DELTAS))
    verify_cmd.add_argument("--subsets", type=_non_negative, default=10, help="random subsets beyond all pairs")

    solve_cmd = commands.add_parser("solve", help="run an optimization pipeline")
    solve_cmd.add_argument("problem", choices=PROBLEMS)
    common(solve_cmd)
    solve_cmd.add_argument("--epsilon", type=float, default=None)
    solve_cmd.add_argument("--steps", type=_positive, default=None)
    solve_cmd.add_argument("--samples", type=_positive, default=None)
    solve_cmd.add_argument("--depth", type=_non_negative, default=None)
    solve_cmd.add_argument("--trials", type=_positive, default=None)
    return parser


def _describe_crash(error: BaseException) -> str:
    """Describe an unexpected failure by type and traceback frames."""
    frames = "".join(traceback.format_tb(error.__traceback__)).rstrip()
    if not frames:
        return type(error).__name__
    return f"{type(error).__name__}\n{frames}"


def _labelled(instance: Instance, s) -> List[str]:
    return [instance.matroid.ground.label(i) for i in sorted(s)]


def _rounder(instance: Instance, method: str):
    point = instance.require("point", f"{method} rounding")
    return make_rounder(method, instance.matroid, instance.mode, point, instance.combination)


# --- Commands ---------------------------------------------------------------


async def _decompose(instance: Instance, args, seed: int, runner: TrialRunner):
    point = instance.require("point", "decompose")
    decompose = decompose_base if instance.mode is Mode.B else decompose_point
    combination = decompose(instance.matroid, point)
    error = float(abs(combination.point(instance.n) - point).max())
    logger.info(f"Decomposed into {len(combination.terms)} terms, recomposition error {error:.3g}")
    return {
        "combination": combination.to_json(),
        "terms": len(combination.terms),
        "recomposition_error": error,
    }, None


async def _round(instance: Instance, args, seed: int, runner: TrialRunner):
    rounder = _rounder(instance, args.method)
    outputs = {"method": args.method}
    if args.trace:
        sets, traces, violations = [], [], []
        for trial in range(args.trials):
            trace = RoundingTrace()
            sets.append(rounder.traced(stream(seed, "trial", trial), trace))
            traces.append(trace.to_json())
            violations.extend(f"trial {trial}: {problem}" for problem in verify_trace(trace))
            await asyncio.sleep(0)
            if runner.stop_event.is_set():
                raise TrialsInterrupted(trial + 1, args.trials)
        outputs["traces"] = traces
        outputs["trace_violations"] = violations
    else:
        sets = await runner.run(RoundingTask(rounder, seed), args.trials)
        violations = []

    m = instance.matroid
    invalid = [
        sorted(s) for s in sets
        if not m.is_independent(s)
        or (rounder.expected_size is not None and len(s) != rounder.expected_size)
    ]
    outputs["sets"] = [sorted(s) for s in sets]
    outputs["labels"] = [_labelled(instance, s) for s in sets]
    outputs["invalid_sets"] = invalid
    return outputs, not invalid and not violations


def _subsets(n: int, extra: int, seed: int) -> List[List[int]]:
    subsets = [list(pair) for pair in combinations(range(n), 2)] or [[0]]
    rng = stream(seed, "subsets")
    for _ in range(extra):
        size = int(rng.integers(3, n + 1)) if n >= 3 else n
        subsets.append(sorted(int(e) for e in rng.choice(n, size=size, replace=False)))
    return subsets


async def _verify(instance: Instance, args, seed: int, runner: TrialRunner):
    if args.check == "marginals" and args.trials < MIN_MARGINAL_TRIALS:
        raise UsageError(f"marginal checks need --trials of at least {MIN_MARGINAL_TRIALS}")

    if args.check == "submod-indep":
        f = instance.require("functions", "submod-indep")[0]
        rounder = IndependentRounder(instance.require("point", "submod-indep"))
        batch = await draw_async(rounder, args.trials, seed, runner)
        report = verify_independent_submodular_tails(
            f, rounder.point, args.deltas, args.trials, seed, scale=instance.scale, batch=batch
        )
        return report.to_json(), report.passed

    rounder = _rounder(instance, args.method)
    batch = await draw_async(rounder, args.trials, seed, runner)
    if args.check == "marginals":
        report = estimate_marginals(rounder, args.trials, seed, batch=batch)
    elif args.check == "negcorr":
        subsets = _subsets(instance.n, args.subsets, seed)
        report = verify_negative_correlation(rounder, subsets, args.trials, seed, batch=batch)
    elif args.check == "tails":
        weights = instance.tail_weights if instance.tail_weights is not None else [1.0] * instance.n
        report = verify_linear_tails(rounder, weights, args.deltas, args.trials, seed, batch=batch)
    else:
        f = instance.require("functions", "submod-lower")[0]
        report = verify_submodular_lower_tail(
            f, rounder, args.deltas, args.trials, seed, scale=instance.scale, batch=batch
        )
    return report.to_json(), report.passed


def _solver_params(args, seed: int) -> SolverParams:
    overrides = {
        name: getattr(args, name)
        for name in ("epsilon", "steps", "samples", "depth", "trials")
        if getattr(args, name) is not None
    }
    try:
        return SolverParams(seed=seed, **overrides)
    except MatroidError as error:
        raise UsageError(str(error)) from None


async def _solve(instance: Instance, args, seed: int, runner: TrialRunner):
    params = _solver_params(args, seed)
    m = instance.matroid
    if args.problem == "knapsack":
        f = instance.require("functions", "knapsack")[0]
        result = solve_matroid_knapsacks(f, m, instance.require("packing", "knapsack"), params)
    elif args.problem == "loose":
        f = instance.require("functions", "loose")[0]
        result = solve_loose_packing(f, m, instance.require("packing", "loose"), params)
    elif args.problem == "minimax":
        if instance.cuts is not None:
            loads = crossing_rows(m, instance.cuts)
        else:
            loads = instance.require("packing", "minimax").A
        result = solve_minimax(m, loads, params)
    elif args.problem == "mincost":
        result = solve_mincost_packing(m, instance.require("packing", "mincost"), params)
    else:
        functions = instance.require("functions", "pareto")
        result = pareto_query(functions, m, instance.require("targets", "pareto"), params)

    outputs = result.to_json()
    if result.solution is not None:
        outputs["labels"] = _labelled(instance, result.solution)
    outputs["params"] = params.to_json()
    return outputs, result.passed


COMMANDS = {
    "decompose": _decompose,
    "round": _round,
    "verify": _verify,
    "solve": _solve,
}


def _install_signal_handlers(loop, stop_event: asyncio.Event) -> List[int]:
    installed = []
    if sys.platform != "win32":
        for sig in (signal.SIGTERM, signal.SIGINT):
            # The handler only sets the event; the runner stops between chunks.
            loop.add_signal_handler(sig, stop_event.set)
            installed.append(sig)
    return installed


def _echo(args) -> dict:
    return {key: value for key, value in sorted(vars(args).items()) if key != "seed"}


async def _run_command(argv: List[str]) -> Optional[str]:
    """Parse, execute and report. Returns the reason for a non-zero exit, if any."""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as error:
        logger.error(f"Usage error: {error}")
        return "usage"
    if args.command == "verify" and args.seed is None:
        logger.error("Usage error: verify needs --seed so its report can be reproduced")
        return "usage"
    try:
        instance = parse_instance(args.instance)
    except InstanceError as error:
        logger.error(f"Instance rejected: {error}")
        return "usage"

    seed = args.seed if args.seed is not None else fresh_seed()
    report = RunReport(args.command, argv, _echo(args), seed)
    stop_event = asyncio.Event()
    runner = TrialRunner(args.jobs, config.TRIAL_CHUNK, stop_event)
    loop = asyncio.get_running_loop()
    # Solvers never yield to the loop, so they keep the default interrupt.
    installed = [] if args.command == "solve" else _install_signal_handlers(loop, stop_event)
    logger.info(f"Running {args.command} with seed {seed}")
    try:
        outputs, passed = await COMMANDS[args.command](instance, args, seed, runner)
    except TrialsInterrupted as error:
        logger.warning(f"Stopped: {error}")
        return "interrupted"
    except (UsageError, InstanceError) as error:
        logger.error(f"Usage error: {error}")
        return "usage"
    except COMPUTE_ERRORS as error:
        logger.error(f"{args.command} failed: {type(error).__name__}: {error}")
        return "failed"
    except (NotInPolytopeError, MatroidError) as error:
        logger.error(f"{args.command} rejected its input: {type(error).__name__}: {error}")
        return "usage"
    finally:
        for sig in installed:
            loop.remove_signal_handler(sig)

    write_report(report.finish(outputs, passed), args.out)
    if passed is False:
        logger.warning(f"{args.command} finished with failing checks")
        return "failed"
    return None


async def run(argv: Optional[List[str]] = None) -> int:
    """Run one command. Returns the process exit code."""
    # config.py cannot import the logger, so it only records what it clamped.
    for notice in config.CLAMP_NOTICES:
        logger.warning(f"Configuration adjusted: {notice}")
    argv = list(sys.argv[1:] if argv is None else argv)
    return EXIT_CODES[await _run_command(argv)]


if __name__ == "__main__":
    logger.info("Starting up")
    code = EXIT_OK
    try:
        code = asyncio.run(run())
    except KeyboardInterrupt:
        # Reached from inside a solve, which keeps the default interrupt.
        logger.warning("Interrupted")
        code = EXIT_FAILURE
    except Exception as error:
        logger.error(f"Fatal error: {_describe_crash(error)}")
        code = EXIT_FAILURE
    finally:
        logger.info(f"Exiting with code {code}")
        sys.exit(code)
