"""Monotone submodular functions and their multilinear extensions.

F(x) is the expected value of f on the random set that takes each element i
independently with probability x_i. Modular and coverage functions have
closed forms for F and its gradient; everything else is enumerated over all
2^n subsets (n <= config.BRUTE_FORCE_LIMIT) or sampled.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import FrozenSet, Iterable, List, Optional, Sequence

import numpy as np

import config
from logger import setup_logger
from module import rng as rng_streams
from module.matroid import (
    ContractViolation,
    ElementRangeError,
    Matroid,
    all_masks,
    from_mask,
    matroid_from_json,
    require_enumerable,
    to_mask,
)

logger = setup_logger(__name__)

# Largest ground set whose monotonicity and submodularity are checked exhaustively.
EXHAUSTIVE_PROPERTY_LIMIT = 12


class SubmodularityError(ValueError):
    """A function is not normalized, monotone and submodular."""


@dataclass(frozen=True)
class EstimateResult:
    value: float
    stderr: float
    samples: int

    def to_json(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "samples": self.samples}


def mask_rows(n: int) -> np.ndarray:
    """Membership matrix of all 2^n subsets, one row per bitmask."""
    return ((all_masks(n)[:, None] >> np.arange(n)) & 1).astype(bool)


class SubmodularFunction(ABC):
    kind = "abstract"

    def __init__(self, n: int):
        if n < 1:
            raise SubmodularityError(f"a function needs a ground set of at least one element, got {n}")
        self.n = n
        self._table: Optional[np.ndarray] = None

    def check(self, s: Iterable[int]) -> FrozenSet[int]:
        s = frozenset(int(e) for e in s)
        for element in s:
            if not 0 <= element < self.n:
                raise ElementRangeError(f"element {element} is outside 0..{self.n - 1}")
        return s

    def evaluate(self, s: Iterable[int]) -> float:
        return float(self._value(self.check(s)))

    def marginal(self, i: int, s: Iterable[int]) -> float:
        """f(s + i) - f(s)."""
        s = self.check(s)
        if i in s:
            raise ContractViolation(f"element {i} is already in the set")
        return float(self._value(s | {i}) - self._value(s))

    @abstractmethod
    def _value(self, s: FrozenSet[int]) -> float:
        ...

    def evaluate_many(self, rows: np.ndarray) -> np.ndarray:
        """f on each row of a boolean membership matrix."""
        return np.array(
            [self._value(frozenset(np.flatnonzero(row).tolist())) for row in rows], dtype=float
        )

    def value_table(self) -> np.ndarray:
        """f(S) for all 2^n subsets, indexed by bitmask."""
        if self._table is None:
            require_enumerable(self.n, "the value table")
            table = np.asarray(self.evaluate_many(mask_rows(self.n)), dtype=float)
            table.setflags(write=False)
            self._table = table
        return self._table

    def _closed_multilinear(self, x: np.ndarray) -> Optional[float]:
        return None

    def _closed_gradient(self, x: np.ndarray) -> Optional[np.ndarray]:
        return None

    @property
    def has_closed_form(self) -> bool:
        return self._closed_multilinear(np.zeros(self.n)) is not None

    def to_json(self) -> dict:
        raise NotImplementedError(f"{self.kind} functions are internal and not serialized")


class ModularFunction(SubmodularFunction):
    kind = "modular"

    def __init__(self, weights: Sequence[float]):
        super().__init__(len(weights))
        self.weights = np.asarray(weights, dtype=float)
        if (self.weights < 0).any():
            raise SubmodularityError("modular weights must be non-negative for monotonicity")

    def _value(self, s):
        return float(self.weights[list(s)].sum())

    def evaluate_many(self, rows):
        return rows.astype(float) @ self.weights

    def _closed_multilinear(self, x):
        return float(self.weights @ x)

    def _closed_gradient(self, x):
        return self.weights.copy()

    def to_json(self) -> dict:
        return {"type": self.kind, "weights": self.weights.tolist()}


class CoverageFunction(SubmodularFunction):
    """Total weight of the items covered by at least one chosen element."""

    kind = "coverage"

    def __init__(self, item_weights: Sequence[float], covers: Sequence[Sequence[int]]):
        super().__init__(len(covers))
        self.item_weights = np.asarray(item_weights, dtype=float)
        if (self.item_weights < 0).any():
            raise SubmodularityError("coverage item weights must be non-negative")
        self.covers = tuple(tuple(sorted(set(int(u) for u in items))) for items in covers)
        self._incidence = np.zeros((self.n, len(self.item_weights)))
        for element, items in enumerate(self.covers):
            for item in items:
                if not 0 <= item < len(self.item_weights):
                    raise SubmodularityError(f"element {element} covers unknown item {item}")
                self._incidence[element, item] = 1.0

    def _value(self, s):
        covered = self._incidence[list(s)].sum(axis=0) > 0
        return float(self.item_weights[covered].sum())

    def evaluate_many(self, rows):
        covered = (rows.astype(float) @ self._incidence) > 0
        return covered.astype(float) @ self.item_weights

    def _missed(self, x: np.ndarray, skip: Optional[int] = None) -> np.ndarray:
        """Per item, the probability that no chosen element covers it."""
        missed = np.ones(len(self.item_weights))
        for element in range(self.n):
            if element != skip:
                missed *= np.where(self._incidence[element] > 0, 1.0 - x[element], 1.0)
        return missed

    def _closed_multilinear(self, x):
        return float(self.item_weights @ (1.0 - self._missed(x)))

    def _closed_gradient(self, x):
        return np.array(
            [
                float((self.item_weights * self._incidence[i]) @ self._missed(x, skip=i))
                for i in range(self.n)
            ]
        )

    def to_json(self) -> dict:
        return {
            "type": self.kind,
            "items": self.item_weights.tolist(),
            "covers": [list(items) for items in self.covers],
        }


class MatroidRankFunction(SubmodularFunction):
    kind = "matroid_rank"

    def __init__(self, matroid: Matroid):
        super().__init__(matroid.n)
        self.matroid = matroid

    def _value(self, s):
        return float(self.matroid.rank(s))

    def value_table(self):
        if self._table is None:
            table = self.matroid.rank_table().astype(float)
            table.setflags(write=False)
            self._table = table
        return self._table

    def evaluate_many(self, rows):
        if self.n <= config.BRUTE_FORCE_LIMIT:
            return self.value_table()[rows.astype(np.int64) @ (1 << np.arange(self.n))]
        return super().evaluate_many(rows)

    def to_json(self) -> dict:
        return {"type": self.kind, "matroid": self.matroid.to_json()}


class ExplicitFunction(SubmodularFunction):
    """A dense value table over all 2^n subsets, indexed by bitmask."""

    kind = "explicit"

    def __init__(self, n: int, values: Sequence[float]):
        super().__init__(n)
        require_enumerable(n, "an explicit function")
        if len(values) != 1 << n:
            raise SubmodularityError(f"a table over {n} elements needs {1 << n} values, got {len(values)}")
        table = np.asarray(values, dtype=float)
        table.setflags(write=False)
        self._table = table
        problems = check_properties(self)
        if problems:
            raise SubmodularityError(problems[0])

    def _value(self, s):
        return float(self._table[to_mask(s)])

    def evaluate_many(self, rows):
        return self._table[rows.astype(np.int64) @ (1 << np.arange(self.n))]

    def to_json(self) -> dict:
        return {"type": self.kind, "n": self.n, "values": self._table.tolist()}


class ResidualFunction(SubmodularFunction):
    """f_A(S) = f(S | A) - f(A) for a fixed set A."""

    kind = "residual"

    def __init__(self, base: SubmodularFunction, fixed: Iterable[int]):
        super().__init__(base.n)
        self.base = base
        self.fixed = base.check(fixed)
        self._fixed_list = sorted(self.fixed)
        self._offset = base._value(self.fixed)

    def _lift(self, x: np.ndarray) -> np.ndarray:
        lifted = np.array(x, dtype=float)
        lifted[self._fixed_list] = 1.0
        return lifted

    def _value(self, s):
        return self.base._value(s | self.fixed) - self._offset

    def evaluate_many(self, rows):
        lifted = np.array(rows, dtype=bool)
        lifted[:, self._fixed_list] = True
        return self.base.evaluate_many(lifted) - self._offset

    def _closed_multilinear(self, x):
        value = self.base._closed_multilinear(self._lift(x))
        return None if value is None else value - self._offset

    def _closed_gradient(self, x):
        gradient = self.base._closed_gradient(self._lift(x))
        if gradient is None:
            return None
        gradient[self._fixed_list] = 0.0
        return gradient


def check_properties(f: SubmodularFunction, samples: int = 500) -> List[str]:
    """Problems with f(empty) = 0, monotonicity or submodularity, if any."""
    problems: List[str] = []
    if f.n <= EXHAUSTIVE_PROPERTY_LIMIT:
        table = f.value_table()
        masks = all_masks(f.n)
        tol = config.MEMBERSHIP_TOL
        if abs(table[0]) > tol:
            problems.append(f"f(empty set) = {table[0]:g}, not 0")
        for i in range(f.n):
            bit = 1 << i
            lower = masks[(masks & bit) == 0]
            falling = table[lower | bit] < table[lower] - tol
            if falling.any():
                s = sorted(from_mask(int(lower[np.flatnonzero(falling)[0]])))
                problems.append(f"monotonicity violated adding {i} to {s}")
            for j in range(i + 1, f.n):
                both = bit | (1 << j)
                base = masks[(masks & both) == 0]
                excess = table[base | both] + table[base] - table[base | bit] - table[base | (1 << j)]
                if (excess > tol).any():
                    s = sorted(from_mask(int(base[np.flatnonzero(excess > tol)[0]])))
                    problems.append(f"submodularity violated for {i}, {j} over {s}")
        return problems

    gen = rng_streams.stream(0, "submodular-properties", f.n)
    for _ in range(samples):
        i, j = (int(e) for e in gen.choice(f.n, size=2, replace=False))
        s = frozenset(np.flatnonzero(gen.random(f.n) < 0.5).tolist()) - {i, j}
        fs, fi, fj, fij = (f._value(s), f._value(s | {i}), f._value(s | {j}), f._value(s | {i, j}))
        if fi < fs - config.MEMBERSHIP_TOL:
            problems.append(f"monotonicity violated adding {i} to {sorted(s)}")
        if fij + fs > fi + fj + config.MEMBERSHIP_TOL:
            problems.append(f"submodularity violated for {i}, {j} over {sorted(s)}")
        if problems:
            break
    return problems


def subset_probabilities(x: Sequence[float]) -> np.ndarray:
    """Probability of every subset under independent rounding of x, by bitmask."""
    probabilities = np.ones(1)
    for value in x:
        probabilities = np.concatenate([probabilities * (1.0 - value), probabilities * value])
    return probabilities


def multilinear_exact(f: SubmodularFunction, x: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float)
    closed = f._closed_multilinear(x)
    if closed is not None:
        return closed
    return float(subset_probabilities(x) @ f.value_table())


def multilinear_estimate(
    f: SubmodularFunction, x: Sequence[float], samples: int, rng: np.random.Generator
) -> EstimateResult:
    if samples < 1:
        raise ContractViolation(f"samples must be at least 1, got {samples}")
    x = np.asarray(x, dtype=float)
    values = f.evaluate_many(rng.random((samples, f.n)) < x)
    stderr = float(values.std(ddof=1) / np.sqrt(samples)) if samples > 1 else 0.0
    return EstimateResult(float(values.mean()), stderr, samples)


def gradient_estimate(
    f: SubmodularFunction, x: Sequence[float], samples: int, rng: np.random.Generator
) -> List[EstimateResult]:
    """dF/dx_i = F(x, x_i <- 1) - F(x, x_i <- 0), both ends on the same samples."""
    if samples < 1:
        raise ContractViolation(f"samples must be at least 1, got {samples}")
    x = np.asarray(x, dtype=float)
    closed = f._closed_gradient(x)
    if closed is not None:
        return [EstimateResult(float(g), 0.0, samples) for g in closed]

    rows = rng.random((samples, f.n)) < x
    estimates = []
    for i in range(f.n):
        high, low = rows.copy(), rows.copy()
        high[:, i] = True
        low[:, i] = False
        differences = f.evaluate_many(high) - f.evaluate_many(low)
        stderr = float(differences.std(ddof=1) / np.sqrt(samples)) if samples > 1 else 0.0
        estimates.append(EstimateResult(float(differences.mean()), stderr, samples))
    return estimates


def gradient_exact(f: SubmodularFunction, x: Sequence[float]) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    closed = f._closed_gradient(x)
    if closed is not None:
        return closed
    table = f.value_table()
    gradient = np.empty(f.n)
    for i in range(f.n):
        high, low = x.copy(), x.copy()
        high[i], low[i] = 1.0, 0.0
        gradient[i] = (subset_probabilities(high) - subset_probabilities(low)) @ table
    return gradient


def function_from_json(data: dict) -> SubmodularFunction:
    if not isinstance(data, dict):
        raise SubmodularityError("a function description must be a JSON object")
    kind = data.get("type")
    try:
        if kind == "modular":
            return ModularFunction(data["weights"])
        if kind == "coverage":
            return CoverageFunction(data["items"], data["covers"])
        if kind == "matroid_rank":
            return MatroidRankFunction(matroid_from_json(data["matroid"]))
        if kind == "explicit":
            return ExplicitFunction(int(data["n"]), data["values"])
    except KeyError as missing:
        raise SubmodularityError(f"{kind} function is missing field {missing}") from None
    except (TypeError, ValueError) as error:
        if isinstance(error, SubmodularityError):
            raise
        raise SubmodularityError(f"{kind} function is malformed: {error}") from None
    raise SubmodularityError(f"unknown function type {kind!r}")
