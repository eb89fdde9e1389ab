"""Membership, separation and convex decomposition for P(M) and B(M).

P(M) is the convex hull of the independent sets' indicator vectors, B(M) the
face of it where x(N) = d. Both are handled through the rank table, so every
path here enumerates subsets and is limited to n <= config.BRUTE_FORCE_LIMIT.
Above the limit, separation still works for partition matroids (per block)
and graphic matroids (per vertex subset).
"""

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

import config
from logger import setup_logger
from module.matroid import (
    BruteForceLimitError,
    ContractViolation,
    DummyExtension,
    ElementSet,
    GraphicMatroid,
    Matroid,
    PartitionMatroid,
    all_masks,
    from_mask,
    popcounts,
    require_enumerable,
    subset_sums,
    to_mask,
)

logger = setup_logger(__name__)

# Slack differences below this are ties, resolved toward the smaller set.
_TIE_TOL = 1e-12


class Mode(str, Enum):
    P = "P"
    B = "B"


class NotInPolytopeError(ValueError):
    """A point is outside the polytope an operation requires."""


class InvalidCombinationError(ValueError):
    """A convex combination is malformed or uses sets the matroid rejects."""


class DecompositionError(RuntimeError):
    """Decomposition made no progress or failed to recompose its input."""


class Violation(NamedTuple):
    set: ElementSet
    slack: float


def as_point(x: Sequence[float], n: int) -> np.ndarray:
    point = np.asarray(x, dtype=float)
    if point.shape != (n,):
        raise ContractViolation(f"point has shape {point.shape}, expected ({n},)")
    return point


@dataclass(frozen=True)
class ConvexCombination:
    """sum of weight * 1_set over the terms; weights positive, summing to 1."""

    terms: Tuple[Tuple[float, ElementSet], ...]

    def __post_init__(self):
        if not self.terms:
            raise InvalidCombinationError("a convex combination needs at least one term")
        for weight, _ in self.terms:
            if not weight > 0:
                raise InvalidCombinationError(f"weights must be positive, got {weight}")
        total = sum(weight for weight, _ in self.terms)
        if abs(total - 1.0) > config.MEMBERSHIP_TOL:
            raise InvalidCombinationError(f"weights sum to {total!r}, not 1")

    @classmethod
    def build(cls, terms: Iterable[Tuple[float, Iterable[int]]]) -> "ConvexCombination":
        """Merge repeated sets, drop empty weights and renormalize to sum 1."""
        merged: dict = {}
        for weight, s in terms:
            key = frozenset(int(e) for e in s)
            merged[key] = merged.get(key, 0.0) + float(weight)
        kept = [(w, s) for s, w in merged.items() if w > 0]
        total = sum(w for w, _ in kept)
        if total <= 0:
            raise InvalidCombinationError("a convex combination needs positive total weight")
        kept.sort(key=lambda term: (to_mask(term[1]), term[0]))
        return cls(tuple((w / total, s) for w, s in kept))

    @property
    def weights(self) -> List[float]:
        return [weight for weight, _ in self.terms]

    @property
    def sets(self) -> List[ElementSet]:
        return [s for _, s in self.terms]

    def point(self, n: int) -> np.ndarray:
        x = np.zeros(n)
        for weight, s in self.terms:
            for element in s:
                x[element] += weight
        return x

    def validate(self, m: Matroid, mode: Mode) -> None:
        for _, s in self.terms:
            s = m.check(s)
            if mode is Mode.B and not m.is_base(s):
                raise InvalidCombinationError(f"term {sorted(s)} is not a base")
            if not m.is_independent(s):
                raise InvalidCombinationError(f"term {sorted(s)} is not independent")

    def to_json(self) -> list:
        return [{"weight": weight, "set": sorted(s)} for weight, s in self.terms]

    @classmethod
    def from_json(cls, data) -> "ConvexCombination":
        if not isinstance(data, list):
            raise InvalidCombinationError("a combination must be a list of terms")
        try:
            return cls.build((term["weight"], term["set"]) for term in data)
        except (KeyError, TypeError) as error:
            raise InvalidCombinationError(f"malformed combination term: {error}") from None


# --- Separation -------------------------------------------------------------


def separate(m: Matroid, x: Sequence[float]) -> Optional[Violation]:
    """The nonempty S minimizing r(S) - x(S), if that minimum is below -1e-9.

    Ties go to the smallest bitmask.
    """
    x = as_point(x, m.n)
    if m.n <= config.BRUTE_FORCE_LIMIT:
        violation = _separate_by_table(m, x)
    elif isinstance(m, PartitionMatroid):
        violation = _separate_partition(m, x)
    elif isinstance(m, GraphicMatroid):
        violation = _separate_graphic(m, x)
    else:
        raise BruteForceLimitError(
            f"separation for {m.kind} matroids is limited to n <= {config.BRUTE_FORCE_LIMIT}"
        )
    if violation is not None and violation.slack < -config.SEPARATION_TOL:
        return violation
    return None


def _argmin_smallest(values: np.ndarray) -> int:
    lowest = values.min()
    return int(np.flatnonzero(values <= lowest + _TIE_TOL)[0])


def _separate_by_table(m: Matroid, x: np.ndarray) -> Violation:
    slack = m.rank_table() - subset_sums(x)
    slack[0] = np.inf
    mask = _argmin_smallest(slack)
    return Violation(from_mask(mask), float(slack[mask]))


def _separate_partition(m: PartitionMatroid, x: np.ndarray) -> Violation:
    # The minimum splits over blocks, and inside a block the best set of each
    # size is the prefix of largest coordinates.
    chosen: set = set()
    total = 0.0
    for block, cap in zip(m.blocks, m.capacities):
        order = sorted(block, key=lambda e: (-x[e], e))
        best, best_size, running = 0.0, 0, 0.0
        for size, element in enumerate(order, start=1):
            running += x[element]
            value = min(size, cap) - running
            if value < best - _TIE_TOL:
                best, best_size = value, size
        chosen.update(order[:best_size])
        total += best
    return Violation(frozenset(chosen), total)


def _separate_graphic(m: GraphicMatroid, x: np.ndarray) -> Violation:
    # Edge sets induced by a vertex subset. Finds a violated constraint
    # whenever one exists; the reported slack is that of the best induced set.
    require_enumerable(m.vertex_count, "vertex-subset separation")
    best: Optional[Violation] = None
    for vertex_mask in range(1, 1 << m.vertex_count):
        induced = frozenset(
            e for e, (u, v) in enumerate(m.edges) if vertex_mask >> u & 1 and vertex_mask >> v & 1
        )
        if not induced:
            continue
        value = m.rank(induced) - float(sum(x[e] for e in induced))
        if best is None or value < best.slack - _TIE_TOL:
            best = Violation(induced, value)
    return best if best is not None else Violation(frozenset(), 0.0)


def check_membership(m: Matroid, x: Sequence[float], mode: Mode) -> bool:
    x = as_point(x, m.n)
    tol = config.MEMBERSHIP_TOL
    if (x < -tol).any() or (x > 1 + tol).any():
        return False
    if mode is Mode.B and abs(float(x.sum()) - m.d) > tol:
        return False
    return separate(m, np.clip(x, 0.0, 1.0)) is None


# --- Decomposition ----------------------------------------------------------


def _maximal_chain(tight: np.ndarray, sizes: np.ndarray, full: int) -> List[int]:
    """A maximal chain of tight sets from the empty set up to N."""
    chain = []
    current = 0
    while current != full:
        above = tight[((tight & current) == current) & (tight != current)]
        if above.size == 0:
            # N itself is tight up to tolerance in the base polytope.
            chain.append(full)
            break
        current = int(above[np.lexsort((above, sizes[above]))[0]])
        chain.append(current)
    return chain


def _face_vertex(m: Matroid, z: np.ndarray, tight: np.ndarray) -> ElementSet:
    """A base on the minimal face of B(M) containing z.

    Greedy over an order that exhausts each set of a maximal tight chain before
    leaving it, so the base spans every set in the chain.
    """
    sizes = popcounts(m.n)
    chain = _maximal_chain(tight, sizes, (1 << m.n) - 1)
    level = [len(chain)] * m.n
    for depth, mask in reversed(list(enumerate(chain))):
        for element in from_mask(mask):
            level[element] = depth
    order = sorted(range(m.n), key=lambda e: (level[e], -z[e], e))
    chosen: set = set()
    for element in order:
        if len(chosen) == m.d:
            break
        if m.is_independent(frozenset(chosen | {element})):
            chosen.add(element)
    return frozenset(chosen)


def _largest_step(
    table: np.ndarray, z: np.ndarray, slack: np.ndarray, base: ElementSet
) -> float:
    """Largest t with (z - t*1_base) / (1 - t) still in B(M)."""
    n = len(z)
    inside = np.zeros(n, dtype=bool)
    inside[list(base)] = True
    step = float(z[inside].min()) if inside.any() else 1.0
    if (~inside).any():
        step = min(step, 1.0 - float(z[~inside].max()))
    covered = popcounts(n)[all_masks(n) & to_mask(base)]
    room = table - covered
    limiting = room > 0
    if limiting.any():
        step = min(step, float((slack[limiting] / room[limiting]).min()))
    return max(min(step, 1.0), 0.0)


def _reduce_terms(terms: List[Tuple[float, ElementSet]], n: int, limit: int):
    """Carathéodory reduction: drop terms along affine dependencies."""
    while len(terms) > limit:
        vectors = np.zeros((n + 1, len(terms)))
        for k, (_, s) in enumerate(terms):
            vectors[list(s), k] = 1.0
        vectors[n, :] = 1.0
        _, singular, vh = np.linalg.svd(vectors)
        rank = int((singular > 1e-10).sum())
        if rank >= len(terms):
            break
        direction = vh[-1]
        if direction.max() <= 0:
            direction = -direction
        weights = np.array([w for w, _ in terms])
        positive = direction > 1e-12
        alpha = float((weights[positive] / direction[positive]).min())
        weights = weights - alpha * direction
        terms = [(float(w), s) for w, (_, s) in zip(weights, terms) if w > 1e-15]
    return terms


def _recomposition_error(combination: ConvexCombination, x: np.ndarray) -> float:
    return float(np.abs(combination.point(len(x)) - x).max())


def decompose_base(m: Matroid, x: Sequence[float]) -> ConvexCombination:
    """Write x in B(M) as a convex combination of at most n bases."""
    x = as_point(x, m.n)
    require_enumerable(m.n, "decomposition")
    if not check_membership(m, x, Mode.B):
        raise NotInPolytopeError(f"point is not in the base polytope of {m!r}")

    table = m.rank_table()
    masks = all_masks(m.n)
    tol = config.MEMBERSHIP_TOL
    residual = np.clip(x, 0.0, 1.0)
    remaining = 1.0
    terms: List[Tuple[float, ElementSet]] = []

    for _ in range(m.n + 2):
        if remaining <= config.CLAMP_TOL:
            break
        z = np.clip(residual / remaining, 0.0, 1.0)
        slack = table - subset_sums(z)
        tight = slack <= tol
        base = _face_vertex(m, z, masks[tight])
        step = _largest_step(table, z, slack, base)
        if step >= 1.0 - tol:
            terms.append((remaining, base))
            remaining = 0.0
            break
        if step <= tol:
            raise DecompositionError(f"decomposition stalled after {len(terms)} terms")
        weight = step * remaining
        terms.append((weight, base))
        residual = np.clip(residual - weight * np.isin(np.arange(m.n), list(base)), 0.0, 1.0)
        remaining -= weight
    if remaining > config.CLAMP_TOL:
        raise DecompositionError("decomposition did not finish within n + 2 steps")

    combination = ConvexCombination.build(_reduce_terms(terms, m.n, m.n))
    error = _recomposition_error(combination, x)
    if error > tol:
        raise DecompositionError(f"decomposition recomposes with error {error:.3g}")
    logger.debug(f"Decomposed a point of {m!r} into {len(combination.terms)} bases")
    return combination


def pad_with_dummies(m: Matroid, x: np.ndarray) -> Tuple[DummyExtension, np.ndarray]:
    """Extend M by d dummies and x by dummy mass d - x(N), filled to 1 in index order."""
    extension = DummyExtension(m)
    mass = max(m.d - float(x.sum()), 0.0)
    padding = []
    for _ in range(extension.extra):
        value = min(1.0, mass)
        padding.append(value)
        mass -= value
    return extension, np.concatenate([x, np.array(padding, dtype=float)])


def decompose_point(m: Matroid, x: Sequence[float]) -> ConvexCombination:
    """Write x in P(M) as a convex combination of at most n + 1 independent sets."""
    x = as_point(x, m.n)
    if not check_membership(m, x, Mode.P):
        raise NotInPolytopeError(f"point is not in the matroid polytope of {m!r}")
    if float(np.abs(x).max(initial=0.0)) <= config.MEMBERSHIP_TOL or m.d == 0:
        return ConvexCombination(((1.0, frozenset()),))

    if m.n + m.d > config.BRUTE_FORCE_LIMIT:
        # The padded ground set has n + d elements and is enumerated.
        raise BruteForceLimitError(
            f"point decomposition pads {m.n} elements with {m.d} dummies and is limited to "
            f"n + rank <= {config.BRUTE_FORCE_LIMIT}, got {m.n + m.d}"
        )
    extension, padded = pad_with_dummies(m, np.clip(x, 0.0, 1.0))
    projected = [
        (weight, frozenset(e for e in s if e < m.n))
        for weight, s in decompose_base(extension, padded).terms
    ]
    merged = ConvexCombination.build(projected)
    combination = ConvexCombination.build(_reduce_terms(list(merged.terms), m.n, m.n + 1))
    error = _recomposition_error(combination, x)
    if error > config.MEMBERSHIP_TOL:
        raise DecompositionError(f"point decomposition recomposes with error {error:.3g}")
    return combination
