"""Monte Carlo checks of the rounding guarantees.

Every check is one-sided: an observation fails only when it exceeds its
bound by more than config.SE_SLACK standard errors (for tail bounds, when
the upper end of the Wilson interval at that many standard errors lies
above the bound).

Each verify function either draws its own SampleBatch through a
TrialRunner or takes one drawn beforehand, which is how main.py shares one
asynchronous draw between the event loop and these synchronous checks.
"""

import asyncio
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

import config
from logger import setup_logger
from module.matroid import ContractViolation, ElementSet
from module.rng import stream
from module.rounding import IndependentRounder, Rounder
from module.submodular import (
    ModularFunction,
    SubmodularFunction,
    multilinear_estimate,
    multilinear_exact,
)
from module.trials import TrialRunner

logger = setup_logger(__name__)

MIN_MARGINAL_TRIALS = 1000
# Wilson interval reported next to each estimate.
REPORT_Z = 1.96


@dataclass(frozen=True)
class RoundingTask:
    """Trial t rounds with the stream (seed, label, t)."""

    rounder: Rounder
    seed: int
    label: str = "trial"

    def __call__(self, trial: int) -> ElementSet:
        return self.rounder(stream(self.seed, self.label, trial))


@dataclass(eq=False)
class SampleBatch:
    """Rounded sets as a trials-by-n indicator matrix."""

    indicators: np.ndarray

    @classmethod
    def from_sets(cls, sets: Sequence[Iterable[int]], n: int) -> "SampleBatch":
        indicators = np.zeros((len(sets), n), dtype=bool)
        for row, s in enumerate(sets):
            indicators[row, sorted(s)] = True
        return cls(indicators)

    @property
    def trials(self) -> int:
        return self.indicators.shape[0]

    @property
    def n(self) -> int:
        return self.indicators.shape[1]

    def distinct(self) -> List[ElementSet]:
        return [frozenset(np.flatnonzero(row).tolist()) for row in np.unique(self.indicators, axis=0)]


async def draw_async(
    rounder: Rounder, trials: int, seed: int, runner: Optional[TrialRunner] = None
) -> SampleBatch:
    runner = runner if runner is not None else TrialRunner()
    sets = await runner.run(RoundingTask(rounder, seed), trials)
    return SampleBatch.from_sets(sets, len(rounder.point))


def draw(
    rounder: Rounder, trials: int, seed: int, runner: Optional[TrialRunner] = None
) -> SampleBatch:
    return asyncio.run(draw_async(rounder, trials, seed, runner))


def _batch_for(rounder, trials, seed, runner, batch) -> SampleBatch:
    if batch is not None:
        if batch.n != len(rounder.point):
            raise ContractViolation(f"batch covers {batch.n} elements, point has {len(rounder.point)}")
        return batch
    if trials < 1:
        raise ContractViolation(f"trials must be at least 1, got {trials}")
    return draw(rounder, trials, seed, runner)


def wilson_interval(successes: int, trials: int, z: float = REPORT_Z) -> Tuple[float, float]:
    if trials < 1:
        raise ContractViolation("a Wilson interval needs at least one trial")
    p = successes / trials
    denominator = 1.0 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denominator
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denominator
    return max(0.0, centre - half), min(1.0, centre + half)


def _structure_failures(rounder: Rounder, batch: SampleBatch) -> int:
    """Trials whose set is dependent or, for base rounders, of the wrong size."""
    bad = np.zeros(batch.trials, dtype=bool)
    if rounder.expected_size is not None:
        bad |= batch.indicators.sum(axis=1) != rounder.expected_size
    if rounder.matroid is not None:
        for s in batch.distinct():
            if rounder.matroid.is_independent(s):
                continue
            row = np.zeros(batch.n, dtype=bool)
            row[sorted(s)] = True
            bad |= (batch.indicators == row).all(axis=1)
    return int(bad.sum())


# --- Marginals --------------------------------------------------------------


@dataclass
class MarginalReport:
    expected: List[float]
    observed: List[float]
    stderr: List[float]
    intervals: List[Tuple[float, float]]
    trials: int
    flagged: List[int]
    structure_failures: int

    @property
    def passed(self) -> bool:
        return not self.flagged and self.structure_failures == 0

    def to_json(self) -> dict:
        return {
            "check": "marginals",
            "trials": self.trials,
            "expected": self.expected,
            "observed": self.observed,
            "stderr": self.stderr,
            "intervals": [list(interval) for interval in self.intervals],
            "flagged": self.flagged,
            "structure_failures": self.structure_failures,
            "passed": self.passed,
        }


def estimate_marginals(
    rounder: Rounder,
    trials: int,
    seed: int,
    runner: Optional[TrialRunner] = None,
    batch: Optional[SampleBatch] = None,
) -> MarginalReport:
    """Frequencies of every element against its coordinate of the point."""
    if batch is None and trials < MIN_MARGINAL_TRIALS:
        raise ContractViolation(f"marginal estimates need at least {MIN_MARGINAL_TRIALS} trials")
    batch = _batch_for(rounder, trials, seed, runner, batch)
    x = np.asarray(rounder.point, dtype=float)
    counts = batch.indicators.sum(axis=0)
    observed = counts / batch.trials
    stderr = np.sqrt(np.clip(x * (1 - x), 0.0, None) / batch.trials)
    flagged = np.flatnonzero(np.abs(observed - x) > config.SE_SLACK * stderr + 1e-12)
    if flagged.size:
        logger.warning(f"Marginals off by more than {config.SE_SLACK} SE at elements {flagged.tolist()}")
    return MarginalReport(
        expected=x.tolist(),
        observed=observed.tolist(),
        stderr=stderr.tolist(),
        intervals=[wilson_interval(int(c), batch.trials) for c in counts],
        trials=batch.trials,
        flagged=flagged.tolist(),
        structure_failures=_structure_failures(rounder, batch),
    )


# --- Negative correlation ---------------------------------------------------


@dataclass
class ProductCheck:
    subset: List[int]
    complement: bool
    observed: float
    product: float
    stderr: float

    @property
    def passed(self) -> bool:
        return self.observed <= self.product + config.SE_SLACK * self.stderr + 1e-12

    def to_json(self) -> dict:
        return {
            "subset": self.subset,
            "complement": self.complement,
            "observed": self.observed,
            "product": self.product,
            "stderr": self.stderr,
            "passed": self.passed,
        }


@dataclass
class CorrelationReport:
    trials: int
    checks: List[ProductCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def to_json(self) -> dict:
        return {
            "check": "negative_correlation",
            "trials": self.trials,
            "checks": [check.to_json() for check in self.checks],
            "passed": self.passed,
        }


def verify_negative_correlation(
    rounder: Rounder,
    subsets: Sequence[Iterable[int]],
    trials: int,
    seed: int,
    runner: Optional[TrialRunner] = None,
    batch: Optional[SampleBatch] = None,
) -> CorrelationReport:
    """E[prod X_i] <= prod x_i and E[prod (1 - X_i)] <= prod (1 - x_i) per subset."""
    subsets = [sorted(set(s)) for s in subsets]
    if not subsets or any(not s for s in subsets):
        raise ContractViolation("negative correlation needs non-empty subsets")
    batch = _batch_for(rounder, trials, seed, runner, batch)
    x = np.asarray(rounder.point, dtype=float)
    report = CorrelationReport(batch.trials)
    for subset in subsets:
        for complement in (False, True):
            columns = batch.indicators[:, subset]
            values = ~columns if complement else columns
            coords = 1.0 - x[subset] if complement else x[subset]
            product = float(np.prod(coords))
            report.checks.append(
                ProductCheck(
                    subset=subset,
                    complement=complement,
                    observed=float(values.all(axis=1).mean()),
                    product=product,
                    stderr=math.sqrt(max(product * (1 - product), 0.0) / batch.trials),
                )
            )
    failed = [check.subset for check in report.checks if not check.passed]
    if failed:
        logger.warning(f"Negative correlation failed on {len(failed)} checks, first {failed[0]}")
    return report


# --- Tails ------------------------------------------------------------------


def chernoff_upper(mu: float, delta: float) -> float:
    """(e^delta / (1 + delta)^(1 + delta))^mu."""
    if mu == 0 or delta == 0:
        return 1.0
    return math.exp(mu * (delta - (1 + delta) * math.log1p(delta)))


def simple_upper(mu: float, delta: float) -> float:
    return math.exp(-mu * delta * delta / 3.0)


def chernoff_lower(mu: float, delta: float) -> float:
    return math.exp(-mu * delta * delta / 2.0)


def submodular_lower(mu: float, delta: float) -> float:
    return math.exp(-mu * delta * delta / 8.0)


@dataclass
class TailPoint:
    delta: float
    side: str
    bound_name: str
    threshold: float
    empirical: float
    interval: Tuple[float, float]
    bound: float
    # None when the bound is not a guarantee for this rounder.
    passed: Optional[bool]

    def to_json(self) -> dict:
        return {
            "delta": self.delta,
            "side": self.side,
            "bound_name": self.bound_name,
            "threshold": self.threshold,
            "empirical": self.empirical,
            "interval": list(self.interval),
            "bound": self.bound,
            "passed": self.passed,
        }


@dataclass
class MeanCheck:
    observed: float
    expected: float
    stderr: float

    @property
    def passed(self) -> bool:
        return self.observed >= self.expected - config.SE_SLACK * self.stderr - 1e-12

    def to_json(self) -> dict:
        return {
            "observed": self.observed,
            "expected": self.expected,
            "stderr": self.stderr,
            "passed": self.passed,
        }


@dataclass
class TailReport:
    check: str
    mu: float
    trials: int
    points: List[TailPoint] = field(default_factory=list)
    mean: Optional[MeanCheck] = None
    informational: bool = False

    @property
    def passed(self) -> bool:
        verdicts = [p.passed for p in self.points if p.passed is not None]
        if self.mean is not None:
            verdicts.append(self.mean.passed)
        return all(verdicts)

    def to_json(self) -> dict:
        payload = {
            "check": self.check,
            "mu": self.mu,
            "trials": self.trials,
            "informational": self.informational,
            "points": [p.to_json() for p in self.points],
            "passed": self.passed,
        }
        if self.mean is not None:
            payload["mean"] = self.mean.to_json()
        return payload


def _tail_point(
    values: np.ndarray,
    delta: float,
    side: str,
    threshold: float,
    bound_name: str,
    bound: float,
    graded: bool = True,
) -> TailPoint:
    if side == "upper":
        hits = int((values >= threshold - 1e-12).sum())
    else:
        hits = int((values <= threshold + 1e-12).sum())
    trials = len(values)
    upper_end = wilson_interval(hits, trials, z=config.SE_SLACK)[1]
    return TailPoint(
        delta=delta,
        side=side,
        bound_name=bound_name,
        threshold=threshold,
        empirical=hits / trials,
        interval=wilson_interval(hits, trials),
        bound=bound,
        passed=(upper_end <= bound + 1e-12) if graded else None,
    )


def _check_deltas(deltas: Sequence[float]) -> List[float]:
    deltas = [float(d) for d in deltas]
    if not deltas or any(not 0 <= d <= 1 for d in deltas):
        raise ContractViolation("tail deltas must be a non-empty list within [0, 1]")
    return deltas


def verify_linear_tails(
    rounder: Rounder,
    weights: Sequence[float],
    deltas: Sequence[float],
    trials: int,
    seed: int,
    runner: Optional[TrialRunner] = None,
    batch: Optional[SampleBatch] = None,
) -> TailReport:
    """Both tails of X = a . 1_R around mu = a . x against the Chernoff bounds."""
    a = np.asarray(weights, dtype=float)
    if a.shape != (len(rounder.point),) or ((a < 0) | (a > 1)).any():
        raise ContractViolation("tail weights must be one value in [0, 1] per element")
    deltas = _check_deltas(deltas)
    batch = _batch_for(rounder, trials, seed, runner, batch)
    mu = float(a @ np.asarray(rounder.point, dtype=float))
    values = batch.indicators.astype(float) @ a

    report = TailReport("linear_tails", mu, batch.trials)
    for delta in deltas:
        upper = (1 + delta) * mu
        report.points.append(_tail_point(values, delta, "upper", upper, "chernoff", chernoff_upper(mu, delta)))
        report.points.append(_tail_point(values, delta, "upper", upper, "simplified", simple_upper(mu, delta)))
        report.points.append(
            _tail_point(values, delta, "lower", (1 - delta) * mu, "chernoff", chernoff_lower(mu, delta))
        )
    return report


def _scaled_mean(
    f: SubmodularFunction, x: np.ndarray, scale: float, trials: int, seed: int
) -> float:
    if f.has_closed_form or f.n <= config.BRUTE_FORCE_LIMIT:
        return multilinear_exact(f, x) / scale
    return multilinear_estimate(f, x, trials, stream(seed, "starting-value")).value / scale


def verify_submodular_lower_tail(
    f: SubmodularFunction,
    rounder: Rounder,
    deltas: Sequence[float],
    trials: int,
    seed: int,
    scale: float = 1.0,
    runner: Optional[TrialRunner] = None,
    batch: Optional[SampleBatch] = None,
) -> TailReport:
    """Lower tail of f(R) against exp(-mu0 delta^2 / 8), with mu0 = F(x).

    Values are divided by `scale`, which must bound every marginal of f.
    Only swap rounding carries this guarantee; for other rounders the
    tail points are recorded without a verdict.
    """
    if not scale > 0:
        raise ContractViolation(f"scale must be positive, got {scale}")
    deltas = _check_deltas(deltas)
    batch = _batch_for(rounder, trials, seed, runner, batch)
    x = np.asarray(rounder.point, dtype=float)
    mu0 = _scaled_mean(f, x, scale, batch.trials, seed)
    values = f.evaluate_many(batch.indicators) / scale
    graded = rounder.name == "swap"
    if not graded:
        logger.warning(f"Lower tail of {rounder.name} rounding is recorded as informational")

    report = TailReport("submodular_lower_tail", mu0, batch.trials, informational=not graded)
    for delta in deltas:
        threshold = (1 - delta) * mu0
        report.points.append(
            _tail_point(values, delta, "lower", threshold, "submodular", submodular_lower(mu0, delta), graded)
        )
        if isinstance(f, ModularFunction):
            report.points.append(
                _tail_point(values, delta, "lower", threshold, "chernoff", chernoff_lower(mu0, delta), graded)
            )
    stderr = float(values.std(ddof=1) / math.sqrt(batch.trials)) if batch.trials > 1 else 0.0
    report.mean = MeanCheck(float(values.mean()), mu0, stderr)
    return report


def verify_independent_submodular_tails(
    f: SubmodularFunction,
    x: Sequence[float],
    deltas: Sequence[float],
    trials: int,
    seed: int,
    scale: float = 1.0,
    runner: Optional[TrialRunner] = None,
    batch: Optional[SampleBatch] = None,
) -> TailReport:
    """Both tails of f under independent rounding of x."""
    if not scale > 0:
        raise ContractViolation(f"scale must be positive, got {scale}")
    deltas = _check_deltas(deltas)
    rounder = IndependentRounder(x)
    batch = _batch_for(rounder, trials, seed, runner, batch)
    mu = _scaled_mean(f, rounder.point, scale, batch.trials, seed)
    values = f.evaluate_many(batch.indicators) / scale

    report = TailReport("independent_submodular_tails", mu, batch.trials)
    for delta in deltas:
        report.points.append(
            _tail_point(values, delta, "upper", (1 + delta) * mu, "chernoff", chernoff_upper(mu, delta))
        )
        report.points.append(
            _tail_point(values, delta, "lower", (1 - delta) * mu, "chernoff", chernoff_lower(mu, delta))
        )
    return report
