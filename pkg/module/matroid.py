"""Ground sets, matroid oracles, and the strong base exchange.

Sets of elements are frozensets of indices 0..n-1. Wherever a whole family
of subsets is handled at once, a subset is its bitmask instead, with element
i contributing 2**i; "smallest set" always means smallest bitmask.

Oracles are immutable after construction, so the rank table each one builds
on first use is cached for the oracle's lifetime and shared freely with
worker processes.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import lru_cache
from typing import FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from networkx.utils import UnionFind

import config
from logger import setup_logger
from module import rng as rng_streams

logger = setup_logger(__name__)

ElementSet = FrozenSet[int]

# Largest ground set the axiom check covers exhaustively.
EXHAUSTIVE_AXIOM_LIMIT = 16


class MatroidError(Exception):
    """A matroid description is malformed or inconsistent."""


class ElementRangeError(MatroidError, IndexError):
    """An element index lies outside the ground set."""


class ContractViolation(MatroidError):
    """An operation was called outside its precondition."""


class BruteForceLimitError(MatroidError):
    """A subset-enumerating path was asked for a ground set past the limit."""


def to_mask(s: Iterable[int]) -> int:
    mask = 0
    for element in s:
        mask |= 1 << element
    return mask


def from_mask(mask: int) -> ElementSet:
    return frozenset(i for i in range(int(mask).bit_length()) if mask >> i & 1)


@lru_cache(maxsize=None)
def popcounts(n: int) -> np.ndarray:
    """|S| for every subset S of an n-element ground set, indexed by bitmask."""
    counts = np.zeros(1, dtype=np.int64)
    for _ in range(n):
        counts = np.concatenate([counts, counts + 1])
    counts.setflags(write=False)
    return counts


@lru_cache(maxsize=None)
def all_masks(n: int) -> np.ndarray:
    masks = np.arange(1 << n, dtype=np.int64)
    masks.setflags(write=False)
    return masks


def subset_sums(x: np.ndarray) -> np.ndarray:
    """x(S) for every subset S, indexed by bitmask."""
    sums = np.zeros(1, dtype=float)
    for value in x:
        sums = np.concatenate([sums, sums + value])
    return sums


def require_enumerable(n: int, what: str) -> None:
    if n > config.BRUTE_FORCE_LIMIT:
        raise BruteForceLimitError(
            f"{what} enumerates all subsets and is limited to n <= "
            f"{config.BRUTE_FORCE_LIMIT}, got n = {n}"
        )


@dataclass(frozen=True)
class GroundSet:
    n: int
    labels: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if self.n < 1:
            raise MatroidError(f"a ground set needs at least one element, got n = {self.n}")
        if self.labels is not None and len(self.labels) != self.n:
            raise MatroidError(
                f"{len(self.labels)} labels given for a ground set of {self.n} elements"
            )

    def label(self, i: int) -> str:
        return self.labels[i] if self.labels is not None else str(i)


class Matroid(ABC):
    """Independence and rank over a ground set.

    Subclasses answer _independent() on a validated frozenset; _rank() falls
    back to one greedy pass when a subclass has no closed form.
    """

    kind = "abstract"

    def __init__(self, ground: GroundSet):
        self.ground = ground
        self._rank_table: Optional[np.ndarray] = None
        self._d: Optional[int] = None

    @property
    def n(self) -> int:
        return self.ground.n

    @property
    def d(self) -> int:
        """Rank of the whole ground set."""
        if self._d is None:
            self._d = self._rank(frozenset(range(self.n)))
        return self._d

    def check(self, s: Iterable[int]) -> ElementSet:
        s = frozenset(int(e) for e in s)
        for element in s:
            if not 0 <= element < self.n:
                raise ElementRangeError(
                    f"element {element} is outside the ground set 0..{self.n - 1}"
                )
        return s

    def is_independent(self, s: Iterable[int]) -> bool:
        return self._independent(self.check(s))

    def rank(self, s: Iterable[int]) -> int:
        return self._rank(self.check(s))

    def is_base(self, s: Iterable[int]) -> bool:
        s = self.check(s)
        return len(s) == self.d and self._independent(s)

    @abstractmethod
    def _independent(self, s: ElementSet) -> bool:
        ...

    def _rank(self, s: ElementSet) -> int:
        basis: set = set()
        for element in sorted(s):
            basis.add(element)
            if not self._independent(frozenset(basis)):
                basis.discard(element)
        return len(basis)

    def rank_table(self) -> np.ndarray:
        """r(S) for all 2^n subsets, indexed by bitmask. Read-only."""
        if self._rank_table is None:
            require_enumerable(self.n, "the rank table")
            table = np.asarray(self._build_rank_table(), dtype=np.int64)
            table.setflags(write=False)
            self._rank_table = table
        return self._rank_table

    def _build_rank_table(self) -> np.ndarray:
        return np.fromiter(
            (self._rank(from_mask(mask)) for mask in range(1 << self.n)),
            dtype=np.int64,
            count=1 << self.n,
        )

    def to_json(self) -> dict:
        raise NotImplementedError(f"{self.kind} matroids are internal and not serialized")

    def _labels_json(self, payload: dict) -> dict:
        if self.ground.labels is not None:
            payload["labels"] = list(self.ground.labels)
        return payload

    def _require_positive_rank(self) -> None:
        if self.d < 1:
            raise MatroidError(f"a {self.kind} matroid needs rank at least 1, got {self.d}")

    def __repr__(self) -> str:
        return f"{type(self).__name__}(n={self.n})"


class UniformMatroid(Matroid):
    kind = "uniform"

    def __init__(self, n: int, k: int, labels: Optional[Sequence[str]] = None):
        super().__init__(GroundSet(n, tuple(labels) if labels is not None else None))
        if not 1 <= k <= n:
            raise MatroidError(f"uniform matroid rank must lie in 1..{n}, got {k}")
        self.k = k

    def _independent(self, s: ElementSet) -> bool:
        return len(s) <= self.k

    def _rank(self, s: ElementSet) -> int:
        return min(len(s), self.k)

    def _build_rank_table(self) -> np.ndarray:
        return np.minimum(popcounts(self.n), self.k)

    def to_json(self) -> dict:
        return self._labels_json({"type": self.kind, "n": self.n, "k": self.k})

    def __repr__(self) -> str:
        return f"UniformMatroid(k={self.k}, n={self.n})"


class PartitionMatroid(Matroid):
    """At most capacities[b] elements from each block b."""

    kind = "partition"

    def __init__(
        self,
        blocks: Sequence[Sequence[int]],
        capacities: Sequence[int],
        labels: Optional[Sequence[str]] = None,
    ):
        if len(blocks) != len(capacities):
            raise MatroidError(
                f"{len(blocks)} blocks but {len(capacities)} capacities"
            )
        members = [int(e) for block in blocks for e in block]
        n = len(members)
        if sorted(members) != list(range(n)):
            raise MatroidError("partition blocks must cover 0..n-1, each element exactly once")
        if any(int(c) < 0 for c in capacities):
            raise MatroidError("partition capacities must be non-negative")
        super().__init__(GroundSet(n, tuple(labels) if labels is not None else None))
        self.blocks = tuple(tuple(int(e) for e in block) for block in blocks)
        self.capacities = tuple(int(c) for c in capacities)
        self._block_of = {e: b for b, block in enumerate(self.blocks) for e in block}
        self._require_positive_rank()

    def _counts(self, s: ElementSet) -> List[int]:
        counts = [0] * len(self.blocks)
        for element in s:
            counts[self._block_of[element]] += 1
        return counts

    def _independent(self, s: ElementSet) -> bool:
        return all(c <= cap for c, cap in zip(self._counts(s), self.capacities))

    def _rank(self, s: ElementSet) -> int:
        return sum(min(c, cap) for c, cap in zip(self._counts(s), self.capacities))

    def _build_rank_table(self) -> np.ndarray:
        masks = all_masks(self.n)
        counts = popcounts(self.n)
        table = np.zeros(1 << self.n, dtype=np.int64)
        for block, cap in zip(self.blocks, self.capacities):
            table += np.minimum(counts[masks & to_mask(block)], cap)
        return table

    def to_json(self) -> dict:
        return self._labels_json(
            {
                "type": self.kind,
                "blocks": [list(block) for block in self.blocks],
                "capacities": list(self.capacities),
            }
        )


class GraphicMatroid(Matroid):
    """Edge sets of a multigraph; a set is independent iff it is a forest."""

    kind = "graphic"

    def __init__(
        self,
        vertex_count: int,
        edges: Sequence[Sequence[int]],
        labels: Optional[Sequence[str]] = None,
    ):
        edges = tuple((int(u), int(v)) for u, v in edges)
        for u, v in edges:
            if not (0 <= u < vertex_count and 0 <= v < vertex_count):
                raise MatroidError(
                    f"edge ({u}, {v}) names a vertex outside 0..{vertex_count - 1}"
                )
        if labels is None:
            labels = [f"e{u}{v}" if vertex_count <= 10 else f"e{u}-{v}" for u, v in edges]
        super().__init__(GroundSet(len(edges), tuple(labels)))
        self.vertex_count = vertex_count
        self.edges = edges
        self._require_positive_rank()

    def _independent(self, s: ElementSet) -> bool:
        forest = UnionFind()
        for element in s:
            u, v = self.edges[element]
            if forest[u] == forest[v]:
                return False
            forest.union(u, v)
        return True

    def _rank(self, s: ElementSet) -> int:
        forest = UnionFind()
        joined = 0
        for element in s:
            u, v = self.edges[element]
            if forest[u] != forest[v]:
                forest.union(u, v)
                joined += 1
        return joined

    def incidence_rows(self) -> np.ndarray:
        """Vertex-by-edge incidence matrix: row v is 1 on the edges at v."""
        rows = np.zeros((self.vertex_count, self.n))
        for e, (u, v) in enumerate(self.edges):
            rows[u, e] = 1.0
            rows[v, e] = 1.0
        return rows

    def to_json(self) -> dict:
        return {
            "type": self.kind,
            "vertices": self.vertex_count,
            "edges": [list(edge) for edge in self.edges],
            "labels": list(self.ground.labels),
        }


class ExplicitMatroid(Matroid):
    """A matroid given by its full rank table, its independent sets, or both.

    Independent sets are closed downward on construction, so listing the
    bases is enough. The rank axioms are not checked here; validate_axioms()
    reports on them.
    """

    kind = "explicit"

    def __init__(
        self,
        n: int,
        rank_table: Optional[Sequence[int]] = None,
        independent: Optional[Sequence[Sequence[int]]] = None,
        labels: Optional[Sequence[str]] = None,
    ):
        super().__init__(GroundSet(n, tuple(labels) if labels is not None else None))
        if rank_table is None and independent is None:
            raise MatroidError("an explicit matroid needs a rank table or independent sets")
        require_enumerable(n, "an explicit matroid")
        self._given_table = list(rank_table) if rank_table is not None else None
        self._given_sets = (
            [sorted(self.check(s)) for s in independent] if independent is not None else None
        )

        derived = self._table_from_sets(self._given_sets) if independent is not None else None
        if rank_table is not None:
            if len(rank_table) != 1 << n:
                raise MatroidError(
                    f"a rank table over {n} elements needs {1 << n} entries, got {len(rank_table)}"
                )
            table = np.asarray(rank_table, dtype=np.int64)
            if derived is not None and not np.array_equal(table, derived):
                mask = int(np.flatnonzero(table != derived)[0])
                raise MatroidError(
                    f"rank table and independent sets disagree at {sorted(from_mask(mask))}: "
                    f"table says {int(table[mask])}, sets say {int(derived[mask])}"
                )
        else:
            table = derived
        table.setflags(write=False)
        self._rank_table = table
        self._require_positive_rank()

    def _table_from_sets(self, sets: List[List[int]]) -> np.ndarray:
        size = 1 << self.n
        masks = all_masks(self.n)
        flags = np.zeros(size, dtype=bool)
        flags[[to_mask(s) for s in sets] + [0]] = True
        # Downward closure, one bit at a time.
        for i in range(self.n):
            bit = 1 << i
            upper = masks[(masks & bit) != 0]
            flags[upper ^ bit] |= flags[upper]
        table = np.where(flags, popcounts(self.n), 0)
        # Largest independent subset: maximum over subsets, one bit at a time.
        for i in range(self.n):
            bit = 1 << i
            upper = masks[(masks & bit) != 0]
            table[upper] = np.maximum(table[upper], table[upper ^ bit])
        return table

    def _independent(self, s: ElementSet) -> bool:
        return int(self._rank_table[to_mask(s)]) == len(s)

    def _rank(self, s: ElementSet) -> int:
        return int(self._rank_table[to_mask(s)])

    def to_json(self) -> dict:
        payload = {"type": self.kind, "n": self.n}
        if self._given_table is not None:
            payload["rank"] = list(self._given_table)
        if self._given_sets is not None:
            payload["independent"] = [list(s) for s in self._given_sets]
        return self._labels_json(payload)


# --- Derived matroids -------------------------------------------------------


class Restriction(Matroid):
    """M restricted to `keep`; deleted elements behave as loops.

    Keeps the parent's indexing so points and sets need no translation.
    """

    kind = "restriction"

    def __init__(self, parent: Matroid, keep: Iterable[int]):
        super().__init__(parent.ground)
        self.parent = parent
        self.keep = parent.check(keep)
        self._keep_mask = to_mask(self.keep)

    def _independent(self, s: ElementSet) -> bool:
        return s <= self.keep and self.parent._independent(s)

    def _rank(self, s: ElementSet) -> int:
        return self.parent._rank(s & self.keep)

    def _build_rank_table(self) -> np.ndarray:
        return self.parent.rank_table()[all_masks(self.n) & self._keep_mask]


class Contraction(Matroid):
    """M/A for an independent set A; the elements of A become loops."""

    kind = "contraction"

    def __init__(self, parent: Matroid, contracted: Iterable[int]):
        super().__init__(parent.ground)
        self.parent = parent
        self.contracted = parent.check(contracted)
        if not parent._independent(self.contracted):
            raise ContractViolation(
                f"contracted set {sorted(self.contracted)} is not independent"
            )
        self._contracted_mask = to_mask(self.contracted)

    def _independent(self, s: ElementSet) -> bool:
        return not (s & self.contracted) and self.parent._independent(s | self.contracted)

    def _rank(self, s: ElementSet) -> int:
        return self.parent._rank(s | self.contracted) - len(self.contracted)

    def _build_rank_table(self) -> np.ndarray:
        table = self.parent.rank_table()
        return table[all_masks(self.n) | self._contracted_mask] - len(self.contracted)


class Truncation(Matroid):
    """Independent sets of M with at most k elements."""

    kind = "truncation"

    def __init__(self, parent: Matroid, k: int):
        super().__init__(parent.ground)
        self.parent = parent
        self.k = k

    def _independent(self, s: ElementSet) -> bool:
        return len(s) <= self.k and self.parent._independent(s)

    def _rank(self, s: ElementSet) -> int:
        return min(self.parent._rank(s), self.k)

    def _build_rank_table(self) -> np.ndarray:
        return np.minimum(self.parent.rank_table(), self.k)


class DummyExtension(Matroid):
    """M plus `extra` dummy elements n..n+extra-1.

    A set is independent iff its part inside N is independent in M and it
    has at most d(M) elements in total, so every independent set of M pads
    with dummies to a base.
    """

    kind = "dummy_extension"

    def __init__(self, parent: Matroid, extra: Optional[int] = None):
        extra = parent.d if extra is None else extra
        super().__init__(GroundSet(parent.n + extra))
        self.parent = parent
        self.extra = extra
        self._cap = parent.d
        self._original = frozenset(range(parent.n))

    def _independent(self, s: ElementSet) -> bool:
        return len(s) <= self._cap and self.parent._independent(s & self._original)

    def _rank(self, s: ElementSet) -> int:
        inside = s & self._original
        return min(self.parent._rank(inside) + len(s) - len(inside), self._cap)

    def _build_rank_table(self) -> np.ndarray:
        masks = all_masks(self.n)
        low = masks & ((1 << self.parent.n) - 1)
        dummies = popcounts(self.n)[masks >> self.parent.n]
        return np.minimum(self.parent.rank_table()[low] + dummies, self._cap)


# --- Operations -------------------------------------------------------------


def _greedy(m: Matroid, order: Iterable[int]) -> ElementSet:
    chosen: set = set()
    for element in order:
        if len(chosen) == m.d:
            break
        candidate = frozenset(chosen | {element})
        if m._independent(candidate):
            chosen.add(element)
    return frozenset(chosen)


def greedy_max_weight_base(m: Matroid, w: Sequence[float]) -> ElementSet:
    """A base maximizing the total weight; ties go to the lowest index."""
    if len(w) != m.n:
        raise ContractViolation(f"weight vector has {len(w)} entries for {m.n} elements")
    order = sorted(range(m.n), key=lambda i: (-w[i], i))
    return _greedy(m, order)


def greedy_max_weight_independent(
    m: Matroid, w: Sequence[float], excluded: Iterable[int] = ()
) -> ElementSet:
    """An independent set maximizing the total weight, using positive weights only."""
    if len(w) != m.n:
        raise ContractViolation(f"weight vector has {len(w)} entries for {m.n} elements")
    excluded = frozenset(excluded)
    order = sorted(
        (i for i in range(m.n) if w[i] > 0 and i not in excluded),
        key=lambda i: (-w[i], i),
    )
    return _greedy(m, order)


def find_exchange(
    m: Matroid, b1: Iterable[int], b2: Iterable[int], i: int, check: bool = True
) -> int:
    """The first j in b2 \\ b1, by index, with b1-i+j and b2-j+i both bases."""
    b1, b2 = frozenset(b1), frozenset(b2)
    if check:
        for name, b in (("b1", b1), ("b2", b2)):
            if not m.is_base(b):
                raise ContractViolation(f"{name} = {sorted(b)} is not a base")
    if i not in b1 or i in b2:
        raise ContractViolation(f"element {i} is not in b1 \\ b2")
    without_i = b1 - {i}
    for j in sorted(b2 - b1):
        if m._independent(without_i | {j}) and m._independent((b2 - {j}) | {i}):
            return j
    raise ContractViolation(
        f"no exchange partner for {i} between {sorted(b1)} and {sorted(b2)}"
    )


@dataclass
class AxiomReport:
    exhaustive: bool
    violations: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_json(self) -> dict:
        return {
            "exhaustive": self.exhaustive,
            "violations": list(self.violations),
            "passed": self.passed,
        }


def _first_violation(
    report: AxiomReport, failing: np.ndarray, masks: np.ndarray, describe
) -> None:
    if failing.any():
        report.violations.append(describe(int(masks[np.flatnonzero(failing)[0]])))


def validate_axioms(m: Matroid, samples: int = 500) -> AxiomReport:
    """Check the rank axioms and the exchange axiom; never raises on failure."""
    exhaustive = m.n <= min(EXHAUSTIVE_AXIOM_LIMIT, config.BRUTE_FORCE_LIMIT)
    report = AxiomReport(exhaustive=exhaustive)
    gen = rng_streams.stream(0, "axioms", m.n)

    if exhaustive:
        _validate_table(m, report)
    else:
        _validate_sampled(m, report, gen, samples)

    # Exchange axiom on sampled pairs of independent sets.
    for _ in range(min(samples, 200)):
        small = _random_independent(m, gen)
        large = _random_independent(m, gen)
        if len(small) > len(large):
            small, large = large, small
        if len(small) == len(large):
            continue
        if not any(m._independent(small | {e}) for e in large - small):
            report.violations.append(
                f"exchange axiom violated: nothing in {sorted(large)} extends {sorted(small)}"
            )
            break

    if report.violations:
        logger.info(f"{m!r} fails {len(report.violations)} axiom check(s)")
    return report


def _validate_table(m: Matroid, report: AxiomReport) -> None:
    table = m.rank_table()
    masks = all_masks(m.n)
    sizes = popcounts(m.n)

    if table[0] != 0:
        report.violations.append(f"r(empty set) = 0 violated (r = {int(table[0])})")
    _first_violation(
        report,
        (table < 0) | (table > sizes),
        masks,
        lambda mask: f"0 <= r(S) <= |S| violated at S = {sorted(from_mask(mask))} "
        f"(r = {int(table[mask])})",
    )
    for i in range(m.n):
        bit = 1 << i
        lower = masks[(masks & bit) == 0]
        grow = table[lower | bit] - table[lower]
        _first_violation(
            report,
            grow < 0,
            lower,
            lambda mask, i=i: f"monotonicity violated adding {i} to {sorted(from_mask(mask))}",
        )
        _first_violation(
            report,
            grow > 1,
            lower,
            lambda mask, i=i: f"unit increase violated adding {i} to {sorted(from_mask(mask))}",
        )
        for j in range(i + 1, m.n):
            both = bit | (1 << j)
            base = masks[(masks & both) == 0]
            lhs = table[base | bit] + table[base | (1 << j)]
            rhs = table[base | both] + table[base]
            _first_violation(
                report,
                lhs < rhs,
                base,
                lambda mask, i=i, j=j: f"submodularity violated for {i}, {j} over "
                f"{sorted(from_mask(mask))}",
            )

    if not isinstance(m, ExplicitMatroid) and m.n <= 12:
        for mask in range(1 << m.n):
            s = from_mask(mask)
            if m._independent(s) != (int(table[mask]) == len(s)):
                report.violations.append(
                    f"independence disagrees with rank at {sorted(s)}"
                )
                break


def _validate_sampled(
    m: Matroid, report: AxiomReport, gen: np.random.Generator, samples: int
) -> None:
    for _ in range(samples):
        s = frozenset(np.flatnonzero(gen.random(m.n) < 0.5).tolist())
        i, j = (int(e) for e in gen.choice(m.n, size=2, replace=False))
        s = s - {i, j}
        r = m._rank(s)
        ri, rj, rij = m._rank(s | {i}), m._rank(s | {j}), m._rank(s | {i, j})
        if not 0 <= r <= len(s):
            report.violations.append(f"0 <= r(S) <= |S| violated at S = {sorted(s)}")
        if not r <= ri <= r + 1:
            report.violations.append(f"monotonicity or unit increase violated adding {i} to {sorted(s)}")
        if ri + rj < rij + r:
            report.violations.append(f"submodularity violated for {i}, {j} over {sorted(s)}")
        if report.violations:
            return


def _random_independent(m: Matroid, gen: np.random.Generator) -> ElementSet:
    order = gen.permutation(m.n).tolist()
    cut = int(gen.integers(0, m.n + 1))
    return _greedy(m, order[:cut])


# --- Serialization ----------------------------------------------------------


def matroid_from_json(data: dict) -> Matroid:
    """Build a matroid from its JSON description."""
    if not isinstance(data, dict):
        raise MatroidError("a matroid description must be a JSON object")
    kind = data.get("type")
    labels = data.get("labels")
    try:
        if kind == "uniform":
            return UniformMatroid(int(data["n"]), int(data["k"]), labels=labels)
        if kind == "partition":
            return PartitionMatroid(data["blocks"], data["capacities"], labels=labels)
        if kind == "graphic":
            return GraphicMatroid(int(data["vertices"]), data["edges"], labels=labels)
        if kind == "explicit":
            return ExplicitMatroid(
                int(data["n"]),
                rank_table=data.get("rank"),
                independent=data.get("independent"),
                labels=labels,
            )
    except KeyError as missing:
        raise MatroidError(f"{kind} matroid is missing field {missing}") from None
    except (TypeError, ValueError) as error:
        raise MatroidError(f"{kind} matroid is malformed: {error}") from None
    raise MatroidError(f"unknown matroid type {kind!r}")
