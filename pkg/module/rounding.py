"""Dependent randomized rounding inside matroid polytopes.

Swap rounding folds a convex combination of bases (or independent sets) into
one set by random exchanges. Pipage rounding walks a point of the base
polytope along two-coordinate directions until it is integral. Both preserve
every marginal, and every elementary step of either one can be recorded in a
RoundingTrace and checked afterwards with verify_trace().

Whenever there is a choice of element, the lowest index is taken.
"""

from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Protocol, Sequence, Tuple

import numpy as np

import config
from logger import setup_logger
from module.matroid import (
    ContractViolation,
    ElementSet,
    Matroid,
    Restriction,
    Truncation,
    all_masks,
    find_exchange,
    from_mask,
    subset_sums,
)
from module.polytope import (
    ConvexCombination,
    Mode,
    NotInPolytopeError,
    as_point,
    check_membership,
    decompose_base,
    decompose_point,
)

logger = setup_logger(__name__)

# Branch expectations are reconstructed within this distance.
TRACE_TOL = 1e-12


class RoundingError(RuntimeError):
    """A rounding procedure broke one of its own guarantees."""


@dataclass
class TraceStep:
    """One elementary step: the coordinates it touched and both possible outcomes."""

    indices: Tuple[int, ...]
    before: Tuple[float, ...]
    branches: Tuple[Tuple[float, Tuple[float, ...]], ...]
    taken: int

    @property
    def after(self) -> Tuple[float, ...]:
        return self.branches[self.taken][1]

    @property
    def probability(self) -> float:
        return self.branches[self.taken][0]

    def to_json(self) -> dict:
        return {
            "indices": list(self.indices),
            "before": list(self.before),
            "branches": [
                {"probability": p, "values": list(values)} for p, values in self.branches
            ],
            "taken": self.taken,
        }


@dataclass
class RoundingTrace:
    steps: List[TraceStep] = field(default_factory=list)
    snapshots: Optional[List[List[float]]] = None

    def record(
        self,
        indices: Tuple[int, ...],
        before: Sequence[float],
        branches: Sequence[Tuple[float, Sequence[float]]],
        taken: int,
        state: Optional[np.ndarray] = None,
    ) -> None:
        self.steps.append(
            TraceStep(
                tuple(int(i) for i in indices),
                tuple(float(v) for v in before),
                tuple((float(p), tuple(float(v) for v in values)) for p, values in branches),
                taken,
            )
        )
        if self.snapshots is not None and state is not None:
            self.snapshots.append([float(v) for v in state])

    def to_json(self) -> dict:
        payload = {"steps": [step.to_json() for step in self.steps]}
        if self.snapshots is not None:
            payload["snapshots"] = self.snapshots
        return payload


def verify_trace(trace: RoundingTrace, tol: float = TRACE_TOL) -> List[str]:
    """Violations of the elementary-step conditions, one line each.

    Per step: at most two coordinates change, a changed pair keeps its sum in
    both branches, and the branch probabilities average back to the prior
    values.
    """
    problems: List[str] = []
    # Float addition alone moves a pair sum by a few ulps.
    tol = tol + 1e-15
    for number, step in enumerate(trace.steps):
        if len(step.indices) > 2:
            problems.append(f"step {number} changes {len(step.indices)} coordinates")
            continue
        total = sum(p for p, _ in step.branches)
        if abs(total - 1.0) > tol:
            problems.append(f"step {number} branch probabilities sum to {total!r}")
        for p, _ in step.branches:
            if not -tol <= p <= 1 + tol:
                problems.append(f"step {number} has branch probability {p!r}")
        if len(step.indices) == 2:
            for _, values in step.branches:
                if abs(sum(values) - sum(step.before)) > tol:
                    problems.append(f"step {number} does not preserve the pair sum")
                    break
        for k, prior in enumerate(step.before):
            expected = sum(p * values[k] for p, values in step.branches)
            if abs(expected - prior) > tol:
                problems.append(
                    f"step {number} moves coordinate {step.indices[k]} in expectation "
                    f"by {expected - prior:.3g}"
                )
    return problems


def _clamp(y: np.ndarray) -> np.ndarray:
    y[np.abs(y) <= config.CLAMP_TOL] = 0.0
    y[np.abs(y - 1.0) <= config.CLAMP_TOL] = 1.0
    return y


# --- Swap rounding ----------------------------------------------------------


def _merge(
    m: Matroid,
    beta1: float,
    b1: Iterable[int],
    beta2: float,
    b2: Iterable[int],
    rng: np.random.Generator,
    trace: Optional[RoundingTrace] = None,
    state: Optional[np.ndarray] = None,
) -> ElementSet:
    b1, b2 = frozenset(b1), frozenset(b2)
    keep_first = beta1 / (beta1 + beta2)
    for _ in range(len(b1) + 1):
        if b1 == b2:
            return b1
        i = min(b1 - b2)
        j = find_exchange(m, b1, b2, i, check=False)
        second_takes_i = rng.random() < keep_first
        if trace is not None:
            before = (state[i], state[j])
            into_second = (state[i] + beta2, state[j] - beta2)
            into_first = (state[i] - beta1, state[j] + beta1)
            trace.record(
                (i, j),
                before,
                ((keep_first, into_second), (1.0 - keep_first, into_first)),
                0 if second_takes_i else 1,
            )
            state[i], state[j] = into_second if second_takes_i else into_first
            if trace.snapshots is not None:
                trace.snapshots.append(state.tolist())
        if second_takes_i:
            b2 = (b2 - {j}) | {i}
        else:
            b1 = (b1 - {i}) | {j}
    raise RoundingError(f"merging bases of size {len(b1)} did not converge")


def merge_bases(
    beta1: float,
    b1: Iterable[int],
    beta2: float,
    b2: Iterable[int],
    m: Matroid,
    rng: np.random.Generator,
) -> ElementSet:
    """Merge two weighted bases into one by random exchanges."""
    if not (beta1 > 0 and beta2 > 0):
        raise ContractViolation(f"merge weights must be positive, got {beta1}, {beta2}")
    for name, b in (("b1", b1), ("b2", b2)):
        if not m.is_base(b):
            raise ContractViolation(f"{name} = {sorted(b)} is not a base")
    return _merge(m, beta1, b1, beta2, b2, rng)


def swap_round(
    c: ConvexCombination,
    m: Matroid,
    rng: np.random.Generator,
    trace: Optional[RoundingTrace] = None,
) -> ElementSet:
    """Round a convex combination of bases to one base, left to right."""
    c.validate(m, Mode.B)
    state = c.point(m.n) if trace is not None else None
    if trace is not None and trace.snapshots is not None:
        trace.snapshots.append(state.tolist())
    weight, current = c.terms[0]
    for beta, base in c.terms[1:]:
        current = _merge(m, weight, current, beta, base, rng, trace, state)
        weight += beta
    return current


def merge_indep_sets(
    beta1: float,
    i1: Iterable[int],
    beta2: float,
    i2: Iterable[int],
    m: Matroid,
    rng: np.random.Generator,
) -> ElementSet:
    """Merge two weighted independent sets into one.

    The smaller set is padded from the larger one up to equal size, the two
    are merged as bases of the truncation at that size, and each padding
    element is then dropped with the smaller set's share of the weight.
    """
    i1, i2 = m.check(i1), m.check(i2)
    for name, s in (("i1", i1), ("i2", i2)):
        if not m.is_independent(s):
            raise ContractViolation(f"{name} = {sorted(s)} is not independent")
    if len(i1) < len(i2):
        beta1, i1, beta2, i2 = beta2, i2, beta1, i1

    padded, padding = set(i2), set()
    for element in sorted(i1 - i2):
        if len(padded) == len(i1):
            break
        if m.is_independent(frozenset(padded | {element})):
            padded.add(element)
            padding.add(element)
    if len(padded) != len(i1):
        raise RoundingError(f"could not pad {sorted(i2)} up to the size of {sorted(i1)}")

    merged = _merge(Truncation(m, len(i1)), beta1, i1, beta2, padded, rng)
    drop = beta2 / (beta1 + beta2)
    return frozenset(
        element
        for element in sorted(merged)
        if not (element in padding and rng.random() < drop)
    )


def swap_round_point(
    c: ConvexCombination, m: Matroid, rng: np.random.Generator
) -> ElementSet:
    """Round a convex combination of independent sets to one independent set."""
    c.validate(m, Mode.P)
    weight, current = c.terms[0]
    for beta, s in c.terms[1:]:
        current = merge_indep_sets(weight, current, beta, s, m, rng)
        weight += beta
    return current


# --- Pipage rounding --------------------------------------------------------


@dataclass(frozen=True)
class TightSet:
    set: ElementSet
    slack: float


def hit_constraint(
    m: Matroid, y: Sequence[float], i: int, j: int, check: bool = True
) -> Tuple[np.ndarray, TightSet]:
    """Move mass from j to i until a rank constraint through i (not j) is tight.

    The step is capped by y_j, in which case the limiting set is {j}.
    """
    y = as_point(y, m.n)
    if i == j:
        raise ContractViolation("hit_constraint needs two distinct elements")
    if check and not check_membership(m, y, Mode.B):
        raise NotInPolytopeError("hit_constraint needs a point of the base polytope")

    masks = all_masks(m.n)
    slack = m.rank_table() - subset_sums(y)
    eligible = ((masks >> i) & 1 == 1) & ((masks >> j) & 1 == 0)
    candidates = slack[eligible]
    lowest = candidates.min()
    pick = int(np.flatnonzero(candidates <= lowest + 1e-12)[0])
    delta = max(float(candidates[pick]), 0.0)
    limiting = from_mask(int(masks[eligible][pick]))
    if y[j] < delta:
        delta = float(y[j])
        limiting = frozenset({j})

    moved = y.copy()
    moved[i] += delta
    moved[j] -= delta
    moved = _clamp(moved)
    at_hit = m.rank(limiting) - float(moved[list(limiting)].sum())
    return moved, TightSet(limiting, at_hit)


def _fractional(y: np.ndarray) -> np.ndarray:
    tol = config.MEMBERSHIP_TOL
    return np.flatnonzero((y > tol) & (y < 1.0 - tol))


def pipage_round(
    m: Matroid,
    y: Sequence[float],
    rng: np.random.Generator,
    trace: Optional[RoundingTrace] = None,
) -> ElementSet:
    """Round a point of B(M) to a base."""
    y = as_point(y, m.n).copy()
    if not check_membership(m, y, Mode.B):
        raise NotInPolytopeError("pipage rounding needs a point of the base polytope")
    y = _clamp(np.clip(y, 0.0, 1.0))
    whole = frozenset(range(m.n))
    steps = 0
    guard = m.n * m.n

    while True:
        fractional = _fractional(y)
        if fractional.size == 0:
            break
        if fractional.size == 1:
            # A lone fractional coordinate is rounding noise: x(N) is an integer.
            y[fractional] = np.round(y[fractional])
            break
        tight = whole
        while True:
            candidates = [int(e) for e in _fractional(y) if e in tight]
            if len(candidates) < 2:
                break
            i, j = candidates[0], candidates[1]
            y_plus, a_plus = hit_constraint(m, y, i, j, check=False)
            y_minus, a_minus = hit_constraint(m, y, j, i, check=False)
            span = float(np.linalg.norm(y_plus - y_minus))
            p = float(np.linalg.norm(y_plus - y)) / span if span > 0 else 0.0
            to_minus = rng.random() < p
            if trace is not None:
                trace.record(
                    (i, j),
                    (y[i], y[j]),
                    ((p, (y_minus[i], y_minus[j])), (1.0 - p, (y_plus[i], y_plus[j]))),
                    0 if to_minus else 1,
                    state=y_minus if to_minus else y_plus,
                )
            y, limiting = (y_minus, a_minus) if to_minus else (y_plus, a_plus)
            tight = tight & limiting.set
            steps += 1
            if steps > guard:
                raise RoundingError(f"pipage rounding exceeded {guard} steps")

    result = frozenset(int(e) for e in np.flatnonzero(y > 0.5))
    if not m.is_base(result):
        raise RoundingError(f"pipage rounding ended on a non-base {sorted(result)}")
    return result


def adjust(
    m: Matroid,
    x: Sequence[float],
    rng: np.random.Generator,
    trace: Optional[RoundingTrace] = None,
) -> Tuple[Restriction, np.ndarray]:
    """Randomly raise or zero coordinates of x in P(M) until it is a base point.

    Returns the restriction of M to the surviving elements and the point,
    which lies in that restriction's base polytope.
    """
    x = as_point(x, m.n).copy()
    if not check_membership(m, x, Mode.P):
        raise NotInPolytopeError("adjust needs a point of the matroid polytope")
    x = _clamp(np.clip(x, 0.0, 1.0))
    tol = config.MEMBERSHIP_TOL
    masks = all_masks(m.n)
    keep = set(range(m.n))

    for _ in range(2 * m.n + 2):
        for element in sorted(keep):
            if x[element] <= tol:
                x[element] = 0.0
                keep.discard(element)
        reduced = Restriction(m, keep)
        if abs(float(x.sum()) - reduced.d) <= tol:
            return reduced, x

        slack = reduced.rank_table() - subset_sums(x)
        for i in sorted(keep):
            room = float(slack[(masks >> i) & 1 == 1].min())
            if room > tol:
                break
        else:
            raise RoundingError("no coordinate can be raised, yet the point is not a base point")

        ceiling = float(x[i]) + room
        p = float(x[i]) / ceiling
        raised = rng.random() < p
        if trace is not None:
            trace.record(
                (i,), (x[i],), ((p, (ceiling,)), (1.0 - p, (0.0,))), 0 if raised else 1
            )
        x[i] = ceiling if raised else 0.0
        x = _clamp(x)
    raise RoundingError("adjust did not reach the base polytope")


def pipage_round_point(
    m: Matroid,
    x: Sequence[float],
    rng: np.random.Generator,
    trace: Optional[RoundingTrace] = None,
) -> ElementSet:
    """Round a point of P(M) to an independent set: adjust, then pipage."""
    reduced, y = adjust(m, x, rng, trace)
    return pipage_round(reduced, y, rng, trace)


def independent_round(x: Sequence[float], rng: np.random.Generator) -> ElementSet:
    x = np.asarray(x, dtype=float)
    return frozenset(int(e) for e in np.flatnonzero(rng.random(len(x)) < x))


# --- Rounders ---------------------------------------------------------------


class Rounder(Protocol):
    """A picklable rounding procedure bound to its instance."""

    name: str
    point: np.ndarray
    matroid: Optional[Matroid]
    # Size every output must have, or None when sizes vary.
    expected_size: Optional[int]

    def __call__(self, rng: np.random.Generator) -> ElementSet:
        ...

    def traced(self, rng: np.random.Generator, trace: RoundingTrace) -> ElementSet:
        ...


class SwapRounder:
    name = "swap"

    def __init__(self, matroid: Matroid, combination: ConvexCombination):
        combination.validate(matroid, Mode.B)
        self.matroid = matroid
        self.combination = combination
        self.point = combination.point(matroid.n)
        self.expected_size = matroid.d

    def __call__(self, rng):
        return swap_round(self.combination, self.matroid, rng)

    def traced(self, rng, trace):
        return swap_round(self.combination, self.matroid, rng, trace)


class SwapPointRounder:
    name = "swap"

    def __init__(self, matroid: Matroid, combination: ConvexCombination):
        combination.validate(matroid, Mode.P)
        self.matroid = matroid
        self.combination = combination
        self.point = combination.point(matroid.n)
        self.expected_size = None

    def __call__(self, rng):
        return swap_round_point(self.combination, self.matroid, rng)

    def traced(self, rng, trace):
        raise ContractViolation("swap rounding of independent sets is not traced")


class PipageRounder:
    name = "pipage"

    def __init__(self, matroid: Matroid, point: Sequence[float]):
        self.matroid = matroid
        self.point = as_point(point, matroid.n)
        self.expected_size = matroid.d

    def __call__(self, rng):
        return pipage_round(self.matroid, self.point, rng)

    def traced(self, rng, trace):
        return pipage_round(self.matroid, self.point, rng, trace)


class AdjustPipageRounder:
    name = "pipage"

    def __init__(self, matroid: Matroid, point: Sequence[float]):
        self.matroid = matroid
        self.point = as_point(point, matroid.n)
        self.expected_size = None

    def __call__(self, rng):
        return pipage_round_point(self.matroid, self.point, rng)

    def traced(self, rng, trace):
        return pipage_round_point(self.matroid, self.point, rng, trace)


class IndependentRounder:
    name = "independent"

    def __init__(self, point: Sequence[float]):
        self.point = np.asarray(point, dtype=float)
        self.matroid = None
        self.expected_size = None

    def __call__(self, rng):
        return independent_round(self.point, rng)

    def traced(self, rng, trace):
        raise ContractViolation("independent rounding has no elementary steps to trace")


METHODS = ("swap", "pipage", "independent")


def make_rounder(
    method: str,
    matroid: Matroid,
    mode: Mode,
    point: Optional[Sequence[float]] = None,
    combination: Optional[ConvexCombination] = None,
) -> Rounder:
    """Bind a rounding method to an instance, decomposing the point if needed."""
    if method not in METHODS:
        raise ContractViolation(f"unknown rounding method {method!r}; expected one of {METHODS}")
    if point is None and combination is None:
        raise ContractViolation("a rounder needs a point or a convex combination")
    if point is None:
        point = combination.point(matroid.n)

    if method == "independent":
        return IndependentRounder(point)
    if method == "pipage":
        return PipageRounder(matroid, point) if mode is Mode.B else AdjustPipageRounder(matroid, point)
    if combination is None:
        combination = decompose_base(matroid, point) if mode is Mode.B else decompose_point(matroid, point)
        logger.info(f"Decomposed the point into {len(combination.terms)} terms for swap rounding")
    if mode is Mode.B:
        return SwapRounder(matroid, combination)
    return SwapPointRounder(matroid, combination)
