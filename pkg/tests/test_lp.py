"""Tests for the simplex and the cutting-plane loop.

Small programs are checked against brute-force vertex enumeration: every
choice of n tight constraints that pins down a feasible point is a vertex,
and the optimum of a bounded program is attained at one of them.
"""

from itertools import combinations

import numpy as np
import pytest

from module.lp import (
    CutPool,
    LinearProgram,
    LpNumericalError,
    LpStatus,
    Relation,
    Sense,
    feasibility_check,
    optimize_over_matroid_intersection,
    row,
    simplex_solve,
)
from module.matroid import ContractViolation, GraphicMatroid, PartitionMatroid, UniformMatroid
from module.polytope import Mode, check_membership
from module.rng import stream


def _vertex_optimum(lp: LinearProgram):
    """Best objective over all basic feasible points, or None if there are none."""
    n = lp.n
    planes = [(r.coeffs, r.rhs) for r in lp.rows]
    for j in range(n):
        unit = np.zeros(n)
        unit[j] = 1.0
        planes.append((unit, lp.lower[j]))
        planes.append((unit, lp.upper[j]))
    sign = 1.0 if lp.sense is Sense.MAX else -1.0
    best = None
    for chosen in combinations(range(len(planes)), n):
        matrix = np.array([planes[k][0] for k in chosen])
        if abs(np.linalg.det(matrix)) < 1e-9:
            continue
        x = np.linalg.solve(matrix, np.array([planes[k][1] for k in chosen]))
        if lp.violation(x) > 1e-9:
            continue
        value = float(lp.c @ x)
        if best is None or sign * value > sign * best:
            best = value
    return best


def _random_program(seed: int) -> LinearProgram:
    rng = stream(seed, "test-programs")
    n = int(rng.integers(2, 4))
    rows = []
    for k in range(int(rng.integers(1, 4))):
        relation = [Relation.LE, Relation.GE, Relation.EQ][int(rng.integers(0, 3))]
        coeffs = np.round(rng.uniform(-1, 2, n), 2)
        rows.append(row(coeffs, relation, round(float(rng.uniform(-0.5, 2.0)), 2), f"r{k}"))
    sense = Sense.MAX if rng.random() < 0.5 else Sense.MIN
    return LinearProgram.boxed(np.round(rng.uniform(-2, 2, n), 2), rows, sense=sense)


# --- Simplex ----------------------------------------------------------------


def test_a_textbook_program():
    lp = LinearProgram.boxed(
        [3.0, 2.0],
        [row([1, 1], "<=", 1.5), row([1, -1], "<=", 0.5)],
        upper=10.0,
    )
    outcome = simplex_solve(lp)
    assert outcome.optimal
    assert outcome.x.tolist() == pytest.approx([1.0, 0.5])
    assert outcome.value == pytest.approx(4.0)


def test_minimization_with_a_covering_row():
    lp = LinearProgram.boxed([1.0, 3.0], [row([1, 1], ">=", 1.2)], sense=Sense.MIN)
    outcome = simplex_solve(lp)
    assert outcome.value == pytest.approx(1.0 + 3 * 0.2)


def test_infeasible_programs_name_a_row_they_cannot_meet():
    lp = LinearProgram.boxed([1.0, 1.0], [row([1, 1], ">=", 3.0, "too much")])
    outcome = simplex_solve(lp)
    assert outcome.status is LpStatus.INFEASIBLE
    assert outcome.certificate == "too much"
    assert outcome.x is None


def test_equality_rows_and_shifted_bounds():
    lp = LinearProgram(
        np.array([1.0, 1.0]),
        [row([1, -1], "=", 0.0)],
        np.array([-1.0, -1.0]),
        np.array([0.5, 2.0]),
        Sense.MAX,
    )
    outcome = simplex_solve(lp)
    assert outcome.x.tolist() == pytest.approx([0.5, 0.5])


def test_redundant_equalities_do_not_break_phase_two():
    lp = LinearProgram.boxed(
        [1.0, 2.0, 0.0],
        [row([1, 1, 1], "=", 1.0), row([2, 2, 2], "=", 2.0)],
    )
    outcome = simplex_solve(lp)
    assert outcome.value == pytest.approx(2.0)


def test_unbounded_variables_are_refused():
    lp = LinearProgram(np.array([1.0]), [], np.array([0.0]), np.array([np.inf]))
    with pytest.raises(ContractViolation):
        simplex_solve(lp)


def test_rows_must_match_the_variable_count():
    lp = LinearProgram.boxed([1.0, 1.0], [row([1.0], "<=", 1.0)])
    with pytest.raises(ContractViolation):
        simplex_solve(lp)


@pytest.mark.parametrize("seed", range(40))
def test_the_simplex_agrees_with_vertex_enumeration(seed):
    lp = _random_program(seed)
    expected = _vertex_optimum(lp)
    outcome = simplex_solve(lp)
    if expected is None:
        assert outcome.status is LpStatus.INFEASIBLE
    else:
        assert outcome.optimal
        assert outcome.value == pytest.approx(expected, abs=1e-7)
        assert lp.violation(outcome.x) <= 1e-6


def test_an_outcome_serializes_its_program():
    outcome = simplex_solve(LinearProgram.boxed([1.0], [row([1.0], "<=", 0.5, "half")]))
    payload = outcome.to_json()
    assert payload["status"] == "optimal"
    assert payload["program"]["rows"][0] == {
        "name": "half",
        "coeffs": [1.0],
        "relation": "<=",
        "rhs": 0.5,
    }


# --- Cutting planes ---------------------------------------------------------


def test_the_heaviest_base_of_a_uniform_matroid():
    m = UniformMatroid(4, 2)
    outcome = optimize_over_matroid_intersection(m, Mode.B, [], [4.0, 3.0, 2.0, 1.0])
    assert outcome.value == pytest.approx(7.0)
    assert outcome.x.tolist() == pytest.approx([1.0, 1.0, 0.0, 0.0])


def test_an_extra_row_moves_the_optimum():
    m = UniformMatroid(4, 2)
    outcome = optimize_over_matroid_intersection(
        m, Mode.B, [row([1, 1, 0, 0], "<=", 1.0)], [4.0, 3.0, 2.0, 1.0]
    )
    assert outcome.value == pytest.approx(6.0)


def test_the_independent_set_polytope_of_a_triangle():
    m = GraphicMatroid(3, [(0, 1), (0, 2), (1, 2)])
    outcome = optimize_over_matroid_intersection(m, Mode.P, [], [1.0, 1.0, 1.0])
    assert outcome.value == pytest.approx(2.0)
    assert check_membership(m, outcome.x, Mode.P)


def test_a_scaled_region_scales_the_optimum():
    m = PartitionMatroid([[0, 1], [2, 3]], [1, 1])
    outcome = optimize_over_matroid_intersection(m, Mode.P, [], [1.0, 1.0, 1.0, 1.0], scale=0.5)
    assert outcome.value == pytest.approx(1.0)
    assert check_membership(m, outcome.x / 0.5, Mode.P)


def test_fixed_zero_elements_stay_at_zero():
    m = UniformMatroid(4, 2)
    outcome = optimize_over_matroid_intersection(
        m, Mode.B, [], [4.0, 3.0, 2.0, 1.0], fixed_zero=[0]
    )
    assert outcome.x[0] == 0.0
    assert outcome.value == pytest.approx(5.0)


def test_cuts_carry_over_between_related_solves():
    m = GraphicMatroid(4, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
    pool = CutPool(m.n)
    first = optimize_over_matroid_intersection(m, Mode.P, [], np.ones(6), cuts=pool)
    found = len(pool)
    assert found == first.cuts
    second = optimize_over_matroid_intersection(m, Mode.P, [], np.ones(6), cuts=pool)
    assert second.cuts == 0
    assert second.value == pytest.approx(first.value)


def test_the_pool_ignores_a_cut_it_already_has():
    pool = CutPool(3)
    assert pool.add(frozenset({0, 1}), 1)
    assert not pool.add(frozenset({1, 0}), 1)
    assert len(pool) == 1
    (cut,) = pool.rows(scale=2.0)
    assert cut.rhs == 2.0
    assert cut.coeffs.tolist() == [1.0, 1.0, 0.0]


def test_an_infeasible_intersection_is_reported_not_raised():
    m = UniformMatroid(3, 2)
    outcome = feasibility_check(m, Mode.B, [row([1, 1, 1], "<=", 1.0)])
    assert outcome.status is LpStatus.INFEASIBLE


def test_numerical_failures_are_arithmetic_errors():
    assert issubclass(LpNumericalError, ArithmeticError)
