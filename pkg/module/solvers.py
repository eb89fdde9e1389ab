"""Optimization pipelines built on continuous greedy and dependent rounding.

Each solver takes its instance and a SolverParams, draws every random number
from rng.stream(params.seed, <solver label>, ...), and returns a SolveReport.
Given the same instance, params and seed, the report is the same.
"""

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

import config
from logger import setup_logger
from module.lp import (
    CutPool,
    LinearProgram,
    LpStatus,
    Relation,
    Row,
    Sense,
    feasibility_check,
    optimize_over_matroid_intersection,
)
from module.matroid import (
    Contraction,
    ContractViolation,
    ElementSet,
    GraphicMatroid,
    Matroid,
    greedy_max_weight_independent,
    to_mask,
)
from module.polytope import Mode, decompose_base, decompose_point
from module.rng import stream
from module.rounding import SwapPointRounder, SwapRounder
from module.submodular import (
    ResidualFunction,
    SubmodularFunction,
    gradient_estimate,
    gradient_exact,
    multilinear_estimate,
    multilinear_exact,
)

logger = setup_logger(__name__)

ONE_MINUS_INV_E = 1.0 - 1.0 / math.e

# Ratio bins of the rounded congestion histogram.
CONGESTION_BINS = (0.0, 1.0, 1.25, 1.5, 2.0, 3.0, math.inf)


class SolverInfeasible(RuntimeError):
    """The relaxation a solver depends on has no feasible point."""


@dataclass(frozen=True)
class SolverParams:
    epsilon: float = field(default_factory=lambda: config.EPSILON)
    steps: int = field(default_factory=lambda: config.GREEDY_STEPS)
    samples: int = field(default_factory=lambda: config.GRADIENT_SAMPLES)
    depth: int = field(default_factory=lambda: config.DEPTH)
    trials: int = field(default_factory=lambda: config.SOLVER_TRIALS)
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.epsilon < 0.5:
            raise ContractViolation(f"epsilon must lie in (0, 1/2), got {self.epsilon}")
        if self.steps < 10:
            raise ContractViolation(f"greedy steps must be at least 10, got {self.steps}")
        if self.depth < 0:
            raise ContractViolation(f"depth must be non-negative, got {self.depth}")
        if self.samples < 1 or self.trials < 1:
            raise ContractViolation("samples and trials must be at least 1")
        if self.seed < 0:
            raise ContractViolation(f"seed must be non-negative, got {self.seed}")

    def to_json(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "steps": self.steps,
            "samples": self.samples,
            "depth": self.depth,
            "trials": self.trials,
            "seed": self.seed,
        }


@dataclass(frozen=True, eq=False)
class PackingSystem:
    """Rows A x <= b with A in [0,1]^(m x n), plus an optional cost vector."""

    A: np.ndarray
    b: np.ndarray
    c: Optional[np.ndarray] = None

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "b", b)
        if a.shape[0] < 1:
            raise ContractViolation("a packing system needs at least one row")
        if b.shape != (a.shape[0],):
            raise ContractViolation(f"b has {b.size} entries for {a.shape[0]} rows")
        if ((a < 0) | (a > 1)).any():
            raise ContractViolation("packing coefficients must lie in [0, 1]")
        if (b < 0).any():
            raise ContractViolation("packing right-hand sides must be non-negative")
        if self.c is not None:
            c = np.asarray(self.c, dtype=float)
            if c.shape != (a.shape[1],):
                raise ContractViolation(f"cost vector has shape {c.shape}, expected ({a.shape[1]},)")
            object.__setattr__(self, "c", c)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    def rows(self, rhs: Optional[Sequence[float]] = None) -> List[Row]:
        rhs = self.b if rhs is None else np.asarray(rhs, dtype=float)
        return [Row(self.A[i], Relation.LE, float(rhs[i]), f"packing row {i}") for i in range(self.m)]

    def loads(self, s: Iterable[int]) -> np.ndarray:
        return self.A[:, sorted(s)].sum(axis=1)

    def fits(self, s: Iterable[int], rhs: Optional[np.ndarray] = None) -> bool:
        rhs = self.b if rhs is None else rhs
        return bool((self.loads(s) <= rhs + config.MEMBERSHIP_TOL).all())

    def to_json(self) -> dict:
        payload = {"A": self.A.tolist(), "b": self.b.tolist()}
        if self.c is not None:
            payload["c"] = self.c.tolist()
        return payload


@dataclass(frozen=True, eq=False)
class TargetVector:
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if values.size < 1 or (values <= 0).any():
            raise ContractViolation("targets must be a non-empty vector of positive values")
        object.__setattr__(self, "values", values)

    @property
    def k(self) -> int:
        return self.values.size


@dataclass
class Certificate:
    """An infeasible direction program: no independent set meets every target."""

    step: int
    targets: List[float]
    program: LinearProgram
    reason: str

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "targets": self.targets,
            "reason": self.reason,
            "program": self.program.to_json(),
        }


@dataclass
class SolveReport:
    problem: str
    status: str
    solution: Optional[ElementSet] = None
    value: Optional[float] = None
    details: Dict[str, object] = field(default_factory=dict)
    certificate: Optional[Certificate] = None

    @property
    def passed(self) -> bool:
        return self.status in ("ok", "certificate")

    def to_json(self) -> dict:
        payload = {"problem": self.problem, "status": self.status, "passed": self.passed}
        if self.solution is not None:
            payload["set"] = sorted(self.solution)
        if self.value is not None:
            payload["value"] = self.value
        payload.update(self.details)
        if self.certificate is not None:
            payload["certificate"] = self.certificate.to_json()
        return payload


# --- Continuous greedy ------------------------------------------------------


def _exact_allowed(f: SubmodularFunction) -> bool:
    return f.n <= config.EXACT_GRADIENT_LIMIT or f.has_closed_form


def _gradient(
    f: SubmodularFunction, x: np.ndarray, params: SolverParams, rng: np.random.Generator
) -> Tuple[np.ndarray, float]:
    """The gradient of F at x and its largest standard error."""
    if _exact_allowed(f):
        return gradient_exact(f, x), 0.0
    estimates = gradient_estimate(f, x, params.samples, rng)
    return (
        np.array([e.value for e in estimates]),
        max(e.stderr for e in estimates),
    )


def _multilinear(
    f: SubmodularFunction, x: np.ndarray, params: SolverParams, rng: np.random.Generator
) -> Tuple[float, float]:
    if _exact_allowed(f):
        return multilinear_exact(f, x), 0.0
    estimate = multilinear_estimate(f, x, params.samples, rng)
    return estimate.value, estimate.stderr


def continuous_greedy(
    f: SubmodularFunction,
    m: Matroid,
    params: SolverParams,
    extra_rows: Sequence[Row] = (),
    scale: float = 1.0,
    fixed_zero: Iterable[int] = (),
    label: str = "continuous-greedy",
    counters: Sequence[int] = (),
) -> np.ndarray:
    """Ascend F over scale * (P(M) intersected with the extra rows).

    Takes params.steps steps of size 1/steps, each along the region's point
    maximizing the current gradient.
    """
    if f.n != m.n:
        raise ContractViolation(f"function over {f.n} elements, matroid over {m.n}")
    fixed = sorted(set(fixed_zero))
    pool = CutPool(m.n)
    x = np.zeros(m.n)
    for t in range(params.steps):
        gradient, _ = _gradient(f, x, params, stream(params.seed, label, *counters, t))
        gradient[fixed] = 0.0
        if extra_rows:
            outcome = optimize_over_matroid_intersection(
                m, Mode.P, extra_rows, gradient, Sense.MAX, fixed, pool, scale
            )
            if not outcome.optimal:
                raise SolverInfeasible(f"direction program at step {t} is {outcome.status.value}")
            direction = outcome.x
        else:
            direction = np.zeros(m.n)
            direction[sorted(greedy_max_weight_independent(m, gradient, excluded=fixed))] = scale
        x = x + direction / params.steps
    return np.clip(x, 0.0, 1.0)


def _multiobjective(
    functions: Sequence[SubmodularFunction],
    targets: np.ndarray,
    m: Matroid,
    params: SolverParams,
    extra_rows: Sequence[Row] = (),
    fixed_zero: Iterable[int] = (),
    label: str = "multiobjective",
    counters: Sequence[int] = (),
) -> Tuple[Optional[np.ndarray], Optional[Certificate]]:
    fixed = sorted(set(fixed_zero))
    pool = CutPool(m.n)
    y = np.zeros(m.n)
    for t in range(params.steps):
        rows = list(extra_rows)
        relaxed = []
        for k, f in enumerate(functions):
            rng = stream(params.seed, label, *counters, t, k)
            gradient, gradient_error = _gradient(f, y, params, rng)
            value, value_error = _multilinear(f, y, params, rng)
            slack = 4.0 * m.n * gradient_error + 4.0 * value_error + config.LP_FEASIBILITY_TOL
            need = float(targets[k] - value - slack)
            relaxed.append(need)
            rows.append(Row(gradient, Relation.GE, need, f"target {k}"))
        outcome = optimize_over_matroid_intersection(
            m, Mode.P, rows, np.zeros(m.n), Sense.MAX, fixed, pool
        )
        if outcome.status is LpStatus.INFEASIBLE:
            logger.info(f"Direction program infeasible at step {t}; emitting a certificate")
            return None, Certificate(t, relaxed, outcome.program, f"row {outcome.certificate} cannot be met")
        if not outcome.optimal:
            raise SolverInfeasible(f"direction program at step {t} is {outcome.status.value}")
        y = y + outcome.x / params.steps
    return np.clip(y, 0.0, 1.0), None


def multiobjective_continuous_greedy(
    functions: Sequence[SubmodularFunction],
    targets: TargetVector,
    m: Matroid,
    params: SolverParams,
    extra_rows: Sequence[Row] = (),
) -> Tuple[Optional[np.ndarray], Optional[Certificate]]:
    """A point reaching (1 - 1/e) of every target, or a certificate that none can.

    Returns (point, None) or (None, certificate).
    """
    if len(functions) != targets.k:
        raise ContractViolation(f"{len(functions)} functions for {targets.k} targets")
    return _multiobjective(functions, targets.values, m, params, extra_rows)


def _rounded(rounder, trials: int, seed: int, label: str, *counters: int) -> List[ElementSet]:
    return [rounder(stream(seed, label, *counters, trial)) for trial in range(trials)]


# --- Matroid plus knapsacks -------------------------------------------------


def _guess_sets(
    f: SubmodularFunction, m: Matroid, knapsacks: PackingSystem, depth: int
) -> List[ElementSet]:
    guesses = []
    for size in range(min(depth, m.d) + 1):
        for combo in combinations(range(m.n), size):
            guess = frozenset(combo)
            if m.is_independent(guess) and knapsacks.fits(guess):
                guesses.append(guess)
    return sorted(guesses, key=lambda g: (-f.evaluate(g), len(g), to_mask(g)))


def solve_matroid_knapsacks(
    f: SubmodularFunction, m: Matroid, knapsacks: PackingSystem, params: SolverParams
) -> SolveReport:
    """Maximize f over independent sets that fit every knapsack row."""
    eps, k = params.epsilon, knapsacks.m
    regime = "full" if params.depth >= math.ceil(eps ** -4) else "capped"
    guesses = _guess_sets(f, m, knapsacks, params.depth)
    logger.info(f"Knapsack solve: {len(guesses)} guess sets, {regime} regime")

    best, best_value, best_guess, best_fractional = frozenset(), f.evaluate(()), 0, None
    feasible_rounds = rounds = 0
    for g_index, guess in enumerate(guesses):
        base_value = f.evaluate(guess)
        if base_value > best_value:
            best, best_value, best_guess = guess, base_value, g_index
        residual_capacity = np.maximum(knapsacks.b - knapsacks.loads(guess), 0.0)
        discarded = set(guess)
        for i in range(m.n):
            if i in guess:
                continue
            if (knapsacks.A[:, i] > residual_capacity + config.MEMBERSHIP_TOL).any():
                discarded.add(i)
            elif regime == "full" and (
                f.marginal(i, guess) > eps ** 4 * base_value
                or (knapsacks.A[:, i] > k * eps ** 3 * residual_capacity).any()
            ):
                discarded.add(i)

        contracted = Contraction(m, guess)
        residual = ResidualFunction(f, guess)
        x = continuous_greedy(
            residual,
            contracted,
            params,
            extra_rows=knapsacks.rows(residual_capacity),
            scale=1.0 - eps,
            fixed_zero=discarded,
            label="knapsack-greedy",
            counters=(g_index,),
        )
        rounder = SwapPointRounder(contracted, decompose_point(contracted, x))
        for rounded in _rounded(rounder, params.trials, params.seed, "knapsack-round", g_index):
            rounds += 1
            candidate = guess | rounded
            if not knapsacks.fits(candidate):
                continue
            feasible_rounds += 1
            value = f.evaluate(candidate)
            if value > best_value + 1e-12:
                best, best_value, best_guess = candidate, value, g_index
                if _exact_allowed(residual):
                    best_fractional = base_value + multilinear_exact(residual, x)

    logger.info(f"Knapsack solve finished with value {best_value:.6g}")
    return SolveReport(
        "knapsack",
        "ok",
        best,
        best_value,
        {
            "regime": regime,
            "guesses": len(guesses),
            "best_guess": sorted(guesses[best_guess]) if guesses else [],
            "fractional_value": best_fractional,
            "loads": knapsacks.loads(best).tolist(),
            "capacities": knapsacks.b.tolist(),
            "rounds": rounds,
            "feasible_rate": feasible_rounds / rounds if rounds else None,
        },
    )


# --- Loose packing ----------------------------------------------------------


def looseness_holds(system: PackingSystem, epsilon: float) -> bool:
    """Whether b_i >= A_ij * (6 / eps^2) * ln(m) for every entry."""
    factor = 6.0 / epsilon ** 2 * math.log(system.m) if system.m > 1 else 0.0
    return bool((system.A * factor <= system.b[:, None] + config.MEMBERSHIP_TOL).all())


def loose_packing_relaxation(
    f: SubmodularFunction, m: Matroid, system: PackingSystem, params: SolverParams
) -> np.ndarray:
    return continuous_greedy(
        f, m, params, extra_rows=system.rows(), scale=1.0 - params.epsilon, label="loose-greedy"
    )


def solve_loose_packing(
    f: SubmodularFunction, m: Matroid, system: PackingSystem, params: SolverParams
) -> SolveReport:
    """One continuous greedy run and one rounding; fails if the rounding overflows."""
    loose = looseness_holds(system, params.epsilon)
    if not loose:
        logger.warning("Packing rows are not loose enough for the concentration guarantee")
    x = loose_packing_relaxation(f, m, system, params)
    rounder = SwapPointRounder(m, decompose_point(m, x))
    rounded = rounder(stream(params.seed, "loose-round", 0))
    fits = system.fits(rounded)
    if not fits:
        logger.info("Rounded set overflows a packing row")
    return SolveReport(
        "loose",
        "ok" if fits else "failed",
        rounded,
        f.evaluate(rounded),
        {
            "looseness_holds": loose,
            "fractional_value": multilinear_exact(f, x) if _exact_allowed(f) else None,
            "loads": system.loads(rounded).tolist(),
            "capacities": system.b.tolist(),
        },
    )


# --- Minimax congestion -----------------------------------------------------


def crossing_rows(m: GraphicMatroid, cuts: Sequence[Iterable[int]]) -> np.ndarray:
    """0/1 rows marking the edges with exactly one endpoint inside each cut."""
    rows = np.zeros((len(cuts), m.n))
    for r, cut in enumerate(cuts):
        inside = set(cut)
        stray = [v for v in inside if not 0 <= v < m.vertex_count]
        if stray:
            raise ContractViolation(f"cut {r} names vertices {stray} outside the graph")
        for e, (u, v) in enumerate(m.edges):
            rows[r, e] = float((u in inside) != (v in inside))
    return rows


def _congestion_feasible(
    m: Matroid, A: np.ndarray, level: float, pool: CutPool
) -> Optional[np.ndarray]:
    zeroed = np.flatnonzero((A > level + config.MEMBERSHIP_TOL).any(axis=0))
    rows = [Row(A[i], Relation.LE, level, f"load row {i}") for i in range(A.shape[0])]
    outcome = feasibility_check(m, Mode.B, rows, fixed_zero=zeroed, cuts=pool)
    logger.debug(f"Congestion level {level:.6g} is {outcome.status.value}")
    return outcome.x if outcome.optimal else None


def _ratio(congestion: float, level: float) -> float:
    if level > 0:
        return congestion / level
    return 1.0 if congestion <= config.MEMBERSHIP_TOL else math.inf


def solve_minimax(m: Matroid, A: Sequence[Sequence[float]], params: SolverParams) -> SolveReport:
    """A base minimizing the largest row load of A, within the rounding factor.

    Binary search finds the smallest fractional load level to within a factor
    of 1 + epsilon; swap rounding of that point is repeated params.trials
    times and the least congested base is kept.
    """
    A = PackingSystem(A, np.ones(np.atleast_2d(A).shape[0])).A
    if A.shape[1] != m.n:
        raise ContractViolation(f"load matrix has {A.shape[1]} columns for {m.n} elements")
    pool = CutPool(m.n)
    hi = float(A.sum(axis=1).max())
    point = _congestion_feasible(m, A, hi, pool)
    if point is None:
        raise SolverInfeasible(f"no fractional base has load at most {hi}")

    lo = 0.0
    zero_point = _congestion_feasible(m, A, 0.0, pool)
    if zero_point is not None:
        hi, point = 0.0, zero_point
    else:
        for _ in range(200):
            if lo > 0 and hi <= (1.0 + params.epsilon) * lo:
                break
            mid = (lo + hi) / 2.0
            candidate = _congestion_feasible(m, A, mid, pool)
            if candidate is None:
                lo = mid
            else:
                hi, point = mid, candidate
    logger.info(f"Fractional congestion {hi:.6g} (lower bracket {lo:.6g}, {len(pool)} cuts)")

    rounder = SwapRounder(m, decompose_base(m, point))
    bases = _rounded(rounder, params.trials, params.seed, "minimax-round")
    congestion = [float((A[:, sorted(base)].sum(axis=1)).max()) for base in bases]
    best = int(np.argmin(congestion))
    ratios = [_ratio(c, hi) for c in congestion]
    counts, _ = np.histogram(np.minimum(ratios, 1e9), bins=np.array(CONGESTION_BINS[:-1] + (1e18,)))
    histogram = {
        f"{low:g}-{high:g}": int(count)
        for low, high, count in zip(CONGESTION_BINS[:-1], CONGESTION_BINS[1:], counts)
    }
    return SolveReport(
        "minimax",
        "ok",
        bases[best],
        congestion[best],
        {
            "lambda": hi,
            "lambda_lower": lo,
            "ratio": ratios[best],
            "congestion": congestion,
            "within_3_lambda": sum(c <= 3.0 * hi + config.MEMBERSHIP_TOL for c in congestion)
            / len(congestion),
            "ratio_histogram": histogram,
            "cuts": len(pool),
        },
    )


# --- Min-cost packing -------------------------------------------------------


def solve_mincost_packing(m: Matroid, system: PackingSystem, params: SolverParams) -> SolveReport:
    """A cheap base whose loads overflow the rows by a bounded factor.

    Rounds until the cost is within 1 + epsilon of the LP optimum, for at most
    params.trials attempts, and keeps the cheapest base seen.
    """
    if system.c is None:
        raise ContractViolation("min-cost packing needs a cost vector")
    oversized = np.flatnonzero((system.A > system.b[:, None] + config.MEMBERSHIP_TOL).any(axis=0))
    outcome = optimize_over_matroid_intersection(
        m, Mode.B, system.rows(), system.c, Sense.MIN, fixed_zero=oversized
    )
    if not outcome.optimal:
        raise SolverInfeasible(f"min-cost relaxation is {outcome.status.value}")
    lp_cost = float(outcome.value)
    budget = (1.0 + params.epsilon) * lp_cost + config.MEMBERSHIP_TOL
    logger.info(f"Min-cost relaxation value {lp_cost:.6g}, {len(oversized)} elements pre-deleted")

    rounder = SwapRounder(m, decompose_base(m, outcome.x))
    best, best_cost, attempts = None, math.inf, 0
    for trial in range(params.trials):
        attempts += 1
        base = rounder(stream(params.seed, "mincost-round", trial))
        cost = float(system.c[sorted(base)].sum())
        if cost < best_cost:
            best, best_cost = base, cost
        if cost <= budget:
            break

    loads = system.loads(best)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(system.b > 0, loads / system.b, np.where(loads > 0, math.inf, 0.0))
    return SolveReport(
        "mincost",
        "ok",
        best,
        best_cost,
        {
            "lp_cost": lp_cost,
            "cost_ratio": best_cost / lp_cost if lp_cost > 0 else None,
            "within_budget": best_cost <= budget,
            "overflow": float(ratios.max()),
            "loads": loads.tolist(),
            "attempts": attempts,
            "pre_deleted": oversized.tolist(),
        },
    )


# --- Pareto queries ---------------------------------------------------------


def _guess_prefixes(
    functions: Sequence[SubmodularFunction], targets: np.ndarray, m: Matroid, depth: int
) -> List[ElementSet]:
    """Greedy prefixes by target-normalized marginal sum, lengths 0..depth."""
    prefixes = [frozenset()]
    current = frozenset()
    for _ in range(min(depth, m.d)):
        scores = []
        for i in range(m.n):
            if i in current or not m.is_independent(current | {i}):
                continue
            score = sum(f.marginal(i, current) / v for f, v in zip(functions, targets))
            scores.append((-score, i))
        if not scores:
            break
        current = current | {min(scores)[1]}
        prefixes.append(current)
    return prefixes


def pareto_query(
    functions: Sequence[SubmodularFunction],
    m: Matroid,
    targets: TargetVector,
    params: SolverParams,
) -> SolveReport:
    """An independent set with f_i(S) >= (1 - 1/e - eps) V_i for all i, or a certificate."""
    if len(functions) != targets.k:
        raise ContractViolation(f"{len(functions)} functions for {targets.k} targets")
    goal = (ONE_MINUS_INV_E - params.epsilon) * targets.values
    certificate = None
    prefixes = _guess_prefixes(functions, targets.values, m, params.depth)

    for g_index, guess in enumerate(prefixes):
        residuals = [ResidualFunction(f, guess) for f in functions]
        remaining = np.maximum(
            targets.values - np.array([f.evaluate(guess) for f in functions]), 0.0
        )
        contracted = Contraction(m, guess)
        point, found = _multiobjective(
            residuals, remaining, contracted, params, fixed_zero=guess,
            label="pareto-greedy", counters=(g_index,),
        )
        if found is not None:
            if not guess:
                certificate = found
            continue
        rounder = SwapPointRounder(contracted, decompose_point(contracted, point))
        for trial, rounded in enumerate(
            _rounded(rounder, params.trials, params.seed, "pareto-round", g_index)
        ):
            candidate = guess | rounded
            values = np.array([f.evaluate(candidate) for f in functions])
            if (values >= goal - 1e-12).all():
                logger.info(f"Pareto query met every target with guess {sorted(guess)}, trial {trial}")
                return SolveReport(
                    "pareto",
                    "ok",
                    candidate,
                    float(values.min()),
                    {"values": values.tolist(), "goal": goal.tolist(), "guess": sorted(guess)},
                )

    details = {"goal": goal.tolist(), "guesses": len(prefixes)}
    if certificate is not None:
        return SolveReport("pareto", "certificate", details=details, certificate=certificate)
    logger.info("Pareto query found neither a qualifying set nor a certificate")
    return SolveReport("pareto", "failed", details=details)
