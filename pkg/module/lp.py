"""Dense two-phase simplex and cutting-plane optimization over matroid polytopes.

Every program here lives in a finite box, so the simplex shifts variables by
their lower bounds, turns upper bounds into rows and runs Bland's rule on a
dense tableau. Matroid rank constraints are never listed up front: the
cutting-plane loop solves with the cuts it has, asks the separation oracle
for a violated x(S) <= r(S), and adds it until none is left.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

import config
from logger import setup_logger
from module.matroid import ContractViolation, ElementSet, Matroid, to_mask
from module.polytope import Mode, separate

logger = setup_logger(__name__)

# Entries smaller than this never serve as pivots.
PIVOT_TOL = 1e-9


class LpNumericalError(ArithmeticError):
    """The simplex returned a point that misses its own constraints."""


class Relation(str, Enum):
    LE = "<="
    EQ = "="
    GE = ">="


class Sense(str, Enum):
    MAX = "max"
    MIN = "min"


class LpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True, eq=False)
class Row:
    coeffs: np.ndarray
    relation: Relation
    rhs: float
    name: str = ""

    def violation(self, x: np.ndarray) -> float:
        lhs = float(np.dot(self.coeffs, x))
        if self.relation is Relation.LE:
            return max(0.0, lhs - self.rhs)
        if self.relation is Relation.GE:
            return max(0.0, self.rhs - lhs)
        return abs(lhs - self.rhs)

    def scaled(self, factor: float) -> "Row":
        return Row(self.coeffs, self.relation, self.rhs * factor, self.name)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "coeffs": [float(a) for a in self.coeffs],
            "relation": self.relation.value,
            "rhs": float(self.rhs),
        }


def row(coeffs: Sequence[float], relation: Relation, rhs: float, name: str = "") -> Row:
    return Row(np.asarray(coeffs, dtype=float), Relation(relation), float(rhs), name)


@dataclass(eq=False)
class LinearProgram:
    c: np.ndarray
    rows: List[Row]
    lower: np.ndarray
    upper: np.ndarray
    sense: Sense = Sense.MAX

    @classmethod
    def boxed(
        cls,
        c: Sequence[float],
        rows: Iterable[Row] = (),
        lower: float = 0.0,
        upper: float = 1.0,
        sense: Sense = Sense.MAX,
    ) -> "LinearProgram":
        c = np.asarray(c, dtype=float)
        n = len(c)
        return cls(c, list(rows), np.full(n, float(lower)), np.full(n, float(upper)), Sense(sense))

    @property
    def n(self) -> int:
        return len(self.c)

    def violation(self, x: np.ndarray) -> float:
        worst = max((r.violation(x) for r in self.rows), default=0.0)
        worst = max(worst, float(np.max(self.lower - x, initial=0.0)))
        return max(worst, float(np.max(x - self.upper, initial=0.0)))

    def to_json(self) -> dict:
        return {
            "sense": self.sense.value,
            "c": [float(v) for v in self.c],
            "rows": [r.to_json() for r in self.rows],
            "bounds": [[float(lo), float(hi)] for lo, hi in zip(self.lower, self.upper)],
        }


@dataclass
class LpOutcome:
    status: LpStatus
    x: Optional[np.ndarray] = None
    value: Optional[float] = None
    # Infeasible: the name of the row left unsatisfied by phase 1.
    # Unbounded: an improving ray over the original variables.
    certificate: Optional[object] = None
    iterations: int = 0
    cuts: int = 0
    program: Optional[LinearProgram] = None

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL

    def to_json(self) -> dict:
        payload = {"status": self.status.value, "iterations": self.iterations, "cuts": self.cuts}
        if self.x is not None:
            payload["x"] = [float(v) for v in self.x]
            payload["value"] = self.value
        if isinstance(self.certificate, np.ndarray):
            payload["certificate"] = [float(v) for v in self.certificate]
        elif self.certificate is not None:
            payload["certificate"] = self.certificate
        if self.program is not None:
            payload["program"] = self.program.to_json()
        return payload


# --- Simplex ----------------------------------------------------------------


class _Tableau:
    """Canonical-form tableau T x = b with one basic column per row."""

    def __init__(self, matrix: np.ndarray, rhs: np.ndarray, basis: List[int], names: List[str]):
        self.matrix = matrix
        self.rhs = rhs
        self.basis = basis
        self.names = names
        self.iterations = 0

    def pivot(self, r: int, col: int) -> None:
        self.rhs[r] /= self.matrix[r, col]
        self.matrix[r] /= self.matrix[r, col]
        factors = self.matrix[:, col].copy()
        factors[r] = 0.0
        self.matrix -= np.outer(factors, self.matrix[r])
        self.rhs -= factors * self.rhs[r]
        self.rhs[np.abs(self.rhs) < config.CLAMP_TOL] = 0.0
        self.basis[r] = col
        self.iterations += 1

    def drop_row(self, r: int) -> None:
        self.matrix = np.delete(self.matrix, r, axis=0)
        self.rhs = np.delete(self.rhs, r)
        del self.basis[r]
        del self.names[r]

    def iterate(self, cost: np.ndarray, allowed: np.ndarray, limit: int) -> Optional[int]:
        """Maximize cost over the tableau; return an unbounded column, if any."""
        for _ in range(limit):
            reduced = cost - cost[self.basis] @ self.matrix
            reduced[~allowed] = 0.0
            reduced[self.basis] = 0.0
            entering = np.flatnonzero(reduced > PIVOT_TOL)
            if entering.size == 0:
                return None
            col = int(entering[0])
            column = self.matrix[:, col]
            candidates = np.flatnonzero(column > PIVOT_TOL)
            if candidates.size == 0:
                return col
            ratios = self.rhs[candidates] / column[candidates]
            ties = candidates[ratios <= ratios.min() + config.CLAMP_TOL]
            leaving = min(ties, key=lambda i: self.basis[i])
            self.pivot(int(leaving), col)
        raise LpNumericalError(f"simplex did not converge in {limit} pivots")


def _standard_rows(lp: LinearProgram) -> Tuple[np.ndarray, np.ndarray, List[Relation], List[str]]:
    n = lp.n
    coeffs, rhs, relations, names = [], [], [], []
    for k, r in enumerate(lp.rows):
        if len(r.coeffs) != n:
            raise ContractViolation(f"row {r.name or k} has {len(r.coeffs)} coefficients, expected {n}")
        coeffs.append(np.asarray(r.coeffs, dtype=float))
        rhs.append(r.rhs - float(np.dot(r.coeffs, lp.lower)))
        relations.append(r.relation)
        names.append(r.name or f"row {k}")
    for j in range(n):
        unit = np.zeros(n)
        unit[j] = 1.0
        coeffs.append(unit)
        rhs.append(float(lp.upper[j] - lp.lower[j]))
        relations.append(Relation.LE)
        names.append(f"upper bound of x{j}")
    matrix = np.array(coeffs, dtype=float).reshape(len(coeffs), n)
    return matrix, np.array(rhs, dtype=float), relations, names


_FLIPPED = {Relation.LE: Relation.GE, Relation.GE: Relation.LE, Relation.EQ: Relation.EQ}


def simplex_solve(lp: LinearProgram) -> LpOutcome:
    """Solve a boxed LP by the two-phase simplex method with Bland's rule."""
    if not (np.all(np.isfinite(lp.lower)) and np.all(np.isfinite(lp.upper))):
        raise ContractViolation("every variable needs finite bounds")
    n = lp.n
    matrix, rhs, relations, names = _standard_rows(lp)
    negative = rhs < 0
    matrix[negative] *= -1.0
    rhs[negative] *= -1.0
    relations = [_FLIPPED[rel] if flip else rel for rel, flip in zip(relations, negative)]

    rows = len(rhs)
    slack_rows = [i for i, rel in enumerate(relations) if rel is not Relation.EQ]
    artificial_rows = [i for i, rel in enumerate(relations) if rel is not Relation.LE]
    width = n + len(slack_rows) + len(artificial_rows)
    table = np.zeros((rows, width))
    table[:, :n] = matrix
    basis = [0] * rows
    for k, i in enumerate(slack_rows):
        table[i, n + k] = 1.0 if relations[i] is Relation.LE else -1.0
        if relations[i] is Relation.LE:
            basis[i] = n + k
    first_artificial = n + len(slack_rows)
    for k, i in enumerate(artificial_rows):
        table[i, first_artificial + k] = 1.0
        basis[i] = first_artificial + k

    tableau = _Tableau(table, rhs, basis, names)
    limit = 50 * (rows + width) + 100
    artificial = np.zeros(width, dtype=bool)
    artificial[first_artificial:] = True

    if artificial_rows:
        tableau.iterate(-artificial.astype(float), np.ones(width, dtype=bool), limit)
        residual = [
            (tableau.rhs[i], tableau.names[i])
            for i, col in enumerate(tableau.basis)
            if artificial[col]
        ]
        worst = max(residual, default=(0.0, ""))
        if sum(value for value, _ in residual) > config.LP_FEASIBILITY_TOL:
            return LpOutcome(LpStatus.INFEASIBLE, certificate=worst[1], iterations=tableau.iterations, program=lp)
        for i in reversed(range(len(tableau.basis))):
            if not artificial[tableau.basis[i]]:
                continue
            replacements = np.flatnonzero((np.abs(tableau.matrix[i]) > PIVOT_TOL) & ~artificial)
            if replacements.size:
                tableau.pivot(i, int(replacements[0]))
            else:
                tableau.drop_row(i)

    cost = np.zeros(width)
    cost[:n] = lp.c if lp.sense is Sense.MAX else -lp.c
    unbounded = tableau.iterate(cost, ~artificial, limit)
    if unbounded is not None:
        ray = np.zeros(width)
        ray[unbounded] = 1.0
        ray[tableau.basis] = -tableau.matrix[:, unbounded]
        return LpOutcome(LpStatus.UNBOUNDED, certificate=ray[:n], iterations=tableau.iterations, program=lp)

    values = np.zeros(width)
    values[tableau.basis] = tableau.rhs
    x = values[:n] + lp.lower
    x[np.abs(x) < config.CLAMP_TOL] = 0.0
    residual = lp.violation(x)
    if residual > config.LP_NUMERICAL_TOL:
        raise LpNumericalError(f"simplex optimum violates its constraints by {residual:.3g}")
    return LpOutcome(
        LpStatus.OPTIMAL,
        x=x,
        value=float(np.dot(lp.c, x)),
        iterations=tableau.iterations,
        program=lp,
    )


# --- Cutting planes ---------------------------------------------------------


class CutPool:
    """Rank cuts x(S) <= r(S) found so far, reusable across related solves."""

    def __init__(self, n: int):
        self.n = n
        self._cuts: Dict[int, Tuple[ElementSet, int]] = {}

    def __len__(self) -> int:
        return len(self._cuts)

    def add(self, s: ElementSet, rank: int) -> bool:
        mask = to_mask(s)
        if mask in self._cuts:
            return False
        self._cuts[mask] = (frozenset(s), int(rank))
        return True

    def rows(self, scale: float = 1.0) -> List[Row]:
        result = []
        for mask in sorted(self._cuts):
            s, rank = self._cuts[mask]
            coeffs = np.zeros(self.n)
            coeffs[list(s)] = 1.0
            result.append(Row(coeffs, Relation.LE, scale * rank, f"rank cut {sorted(s)}"))
        return result


def optimize_over_matroid_intersection(
    m: Matroid,
    mode: Mode,
    extra_rows: Sequence[Row],
    c: Sequence[float],
    sense: Sense = Sense.MAX,
    fixed_zero: Iterable[int] = (),
    cuts: Optional[CutPool] = None,
    scale: float = 1.0,
) -> LpOutcome:
    """Optimize c.x over scale * (P(M) or B(M)) intersected with the extra rows.

    Elements in fixed_zero are held at 0. Cuts found are added to the pool
    passed in, so a caller solving a sequence of related programs keeps them.
    """
    c = np.asarray(c, dtype=float)
    if c.shape != (m.n,):
        raise ContractViolation(f"objective has shape {c.shape}, expected ({m.n},)")
    if not scale > 0:
        raise ContractViolation(f"region scale must be positive, got {scale}")
    pool = cuts if cuts is not None else CutPool(m.n)
    fixed = sorted(set(fixed_zero))

    upper = np.full(m.n, scale)
    upper[fixed] = 0.0
    fixed_rows = [r.scaled(scale) for r in extra_rows]
    if mode is Mode.B:
        fixed_rows.append(Row(np.ones(m.n), Relation.EQ, scale * m.d, "base size"))

    added = 0
    for _ in range((1 << m.n) + 1):
        program = LinearProgram(c, fixed_rows + pool.rows(scale), np.zeros(m.n), upper, Sense(sense))
        outcome = simplex_solve(program)
        outcome.cuts = added
        if not outcome.optimal:
            return outcome
        violated = separate(m, np.clip(outcome.x / scale, 0.0, 1.0))
        if violated is None:
            return outcome
        if not pool.add(violated.set, m.rank(violated.set)):
            raise LpNumericalError(f"separation returned the known cut {sorted(violated.set)}")
        added += 1
        logger.debug(f"Added rank cut on {sorted(violated.set)} with slack {violated.slack:.3g}")
    raise LpNumericalError("cutting-plane loop did not terminate")


def feasibility_check(
    m: Matroid,
    mode: Mode,
    rows: Sequence[Row],
    fixed_zero: Iterable[int] = (),
    cuts: Optional[CutPool] = None,
) -> LpOutcome:
    """A point of the polytope meeting every row, or an infeasible outcome."""
    return optimize_over_matroid_intersection(
        m, mode, rows, np.zeros(m.n), Sense.MAX, fixed_zero=fixed_zero, cuts=cuts
    )
