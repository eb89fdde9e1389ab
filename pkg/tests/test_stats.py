"""Tests for the Monte Carlo checks.

Correct rounders must pass; deliberately broken fake rounders must be
caught. Every draw runs in-process with a fixed seed.
"""

import math
import os

import numpy as np
import pytest

from module.instance import parse_instance
from module.matroid import ContractViolation, PartitionMatroid, UniformMatroid
from module.polytope import Mode
from module.rounding import make_rounder
from module.stats import (
    SampleBatch,
    chernoff_lower,
    chernoff_upper,
    draw,
    estimate_marginals,
    simple_upper,
    submodular_lower,
    verify_independent_submodular_tails,
    verify_linear_tails,
    verify_negative_correlation,
    verify_submodular_lower_tail,
    wilson_interval,
)
from module.submodular import CoverageFunction, ModularFunction
from module.trials import TrialRunner

# Items of weight 1/2 on a ring of eight, element i covering items i and i + 1.
RING = CoverageFunction([0.5] * 8, [[i, (i + 1) % 8] for i in range(8)])

FIXTURES = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "fixtures")


class _AlwaysFirst:
    """Puts all the mass on element 0, whatever the point says."""

    name = "fake"
    matroid = None
    expected_size = None

    def __init__(self, n):
        self.point = np.full(n, 0.5)

    def __call__(self, rng):
        return frozenset({0})


class _AllOrNothing:
    """Right marginals, maximal positive correlation."""

    name = "fake"
    matroid = None
    expected_size = None
    point = np.full(3, 0.5)

    def __call__(self, rng):
        return frozenset({0, 1, 2}) if rng.random() < 0.5 else frozenset()


class _Overfull:
    """Returns a dependent set of the wrong size for U(2, 1)."""

    name = "fake"
    matroid = UniformMatroid(2, 1)
    expected_size = 1
    point = np.array([0.5, 0.5])

    def __call__(self, rng):
        return frozenset({0, 1})


@pytest.fixture
def runner():
    return TrialRunner(jobs=1, chunk_size=500)


@pytest.fixture
def swap_2_4():
    return make_rounder("swap", UniformMatroid(4, 2), Mode.B, [0.5] * 4)


# --- Intervals and bounds ---------------------------------------------------


def test_wilson_intervals_stay_inside_the_unit_interval():
    assert wilson_interval(0, 10)[0] == 0.0
    assert wilson_interval(10, 10)[1] == 1.0
    low, high = wilson_interval(50, 100)
    assert low < 0.5 < high
    assert 0.5 - low == pytest.approx(high - 0.5)


def test_wilson_intervals_widen_with_z():
    assert wilson_interval(30, 100, z=4.0)[1] > wilson_interval(30, 100)[1]


def test_wilson_intervals_need_a_trial():
    with pytest.raises(ContractViolation):
        wilson_interval(0, 0)


def test_the_tail_bounds_at_known_points():
    assert chernoff_upper(2.0, 0.0) == 1.0
    assert chernoff_upper(2.0, 1.0) == pytest.approx((math.e / 4) ** 2)
    assert simple_upper(3.0, 1.0) == pytest.approx(math.exp(-1))
    assert chernoff_lower(2.0, 1.0) == pytest.approx(math.exp(-1))
    assert submodular_lower(8.0, 1.0) == pytest.approx(math.exp(-1))


@pytest.mark.parametrize("delta", [0.1, 0.3, 0.5, 0.8, 1.0])
def test_the_simplified_upper_bound_is_weaker_than_the_full_one(delta):
    assert chernoff_upper(5.0, delta) <= simple_upper(5.0, delta)


# --- Sample batches ---------------------------------------------------------


def test_a_batch_holds_one_row_per_trial():
    batch = SampleBatch.from_sets([{0, 2}, {1}, {0, 2}], 3)
    assert batch.trials == 3
    assert batch.n == 3
    assert batch.indicators[1].tolist() == [False, True, False]
    assert sorted(batch.distinct(), key=sorted) == [frozenset({0, 2}), frozenset({1})]


def test_a_draw_is_repeatable(swap_2_4, runner):
    first = draw(swap_2_4, 200, 3, runner)
    second = draw(swap_2_4, 200, 3, runner)
    assert np.array_equal(first.indicators, second.indicators)


def test_a_shared_batch_must_cover_the_rounder_point(swap_2_4):
    with pytest.raises(ContractViolation):
        verify_negative_correlation(
            swap_2_4, [[0, 1]], 0, 0, batch=SampleBatch.from_sets([{0}], 3)
        )


# --- Marginals --------------------------------------------------------------


def test_swap_rounding_passes_the_marginal_check(swap_2_4, runner):
    report = estimate_marginals(swap_2_4, 4000, 1, runner)
    assert report.passed, report.flagged
    assert report.trials == 4000
    assert report.structure_failures == 0
    assert all(low <= 0.5 <= high for low, high in report.intervals)


def test_pipage_rounding_passes_the_marginal_check(runner):
    x = [0.2, 0.3, 0.5, 0.6, 0.4, 0.7, 0.6, 0.7]
    m = PartitionMatroid([[0, 1, 2], [3, 4], [5, 6, 7]], [1, 1, 2])
    report = estimate_marginals(make_rounder("pipage", m, Mode.B, x), 2000, 2, runner)
    assert report.passed, report.flagged


def test_marginals_need_enough_trials(swap_2_4):
    with pytest.raises(ContractViolation, match="1000"):
        estimate_marginals(swap_2_4, 999, 0)


def test_a_biased_rounder_is_flagged(runner):
    report = estimate_marginals(_AlwaysFirst(2), 1000, 0, runner)
    assert not report.passed
    assert report.flagged == [0, 1]
    assert report.to_json()["passed"] is False


def test_dependent_or_short_sets_are_counted_once_per_trial(runner):
    report = estimate_marginals(_Overfull(), 1000, 0, runner)
    assert report.structure_failures == 1000
    assert not report.passed


# --- Negative correlation ---------------------------------------------------


def test_swap_rounding_is_negatively_correlated(swap_2_4, runner):
    batch = draw(swap_2_4, 4000, 4, runner)
    report = verify_negative_correlation(swap_2_4, [[0, 1], [0, 1, 2], [3]], 0, 0, batch=batch)
    assert report.passed
    assert report.trials == 4000
    assert len(report.checks) == 6


def test_one_batch_serves_several_checks(swap_2_4, runner):
    batch = draw(swap_2_4, 1000, 4, runner)
    marginals = estimate_marginals(swap_2_4, 0, 0, batch=batch)
    correlation = verify_negative_correlation(swap_2_4, [[0, 1]], 0, 0, batch=batch)
    assert marginals.trials == correlation.trials == 1000


def test_positive_correlation_is_caught(runner):
    report = verify_negative_correlation(_AllOrNothing(), [[0, 1, 2]], 2000, 5, runner)
    assert not report.passed
    assert all(not check.passed for check in report.checks)


def test_correlation_subsets_must_be_non_empty(swap_2_4):
    with pytest.raises(ContractViolation):
        verify_negative_correlation(swap_2_4, [[]], 100, 0)


# --- Tails ------------------------------------------------------------------


def test_linear_tails_of_swap_rounding(runner):
    m = UniformMatroid(10, 5)
    rounder = make_rounder("swap", m, Mode.B, [0.5] * 10)
    weights = [1.0] * 5 + [0.0] * 5
    report = verify_linear_tails(rounder, weights, [0.2, 0.5], 2000, 6, runner)
    assert report.mu == pytest.approx(2.5)
    assert len(report.points) == 6
    assert report.passed
    assert {p.bound_name for p in report.points} == {"chernoff", "simplified"}


@pytest.mark.slow
@pytest.mark.parametrize("method", ["swap", "pipage"])
@pytest.mark.parametrize("name", ["uniform_5_10", "partition_3block", "graphic_8"])
def test_linear_tails_hold_across_the_delta_grid(name, method, runner):
    instance = parse_instance(os.path.join(FIXTURES, f"{name}.json"))
    rounder = make_rounder(method, instance.matroid, instance.mode, instance.point, instance.combination)
    deltas = [0.2, 0.4, 0.6, 0.8, 1.0]
    report = verify_linear_tails(rounder, instance.tail_weights, deltas, 20000, 10, runner)
    assert len(report.points) == 3 * len(deltas)
    failing = [p.to_json() for p in report.points if not p.passed]
    assert failing == []


@pytest.mark.parametrize(
    "weights, deltas",
    [([1.5, 0, 0, 0], [0.5]), ([1, 1, 1], [0.5]), ([1, 1, 1, 1], [1.5]), ([1, 1, 1, 1], [])],
    ids=["weight", "length", "delta", "no-deltas"],
)
def test_tail_arguments_are_checked(swap_2_4, weights, deltas):
    with pytest.raises(ContractViolation):
        verify_linear_tails(swap_2_4, weights, deltas, 100, 0)


def test_the_submodular_lower_tail_is_graded_for_swap_rounding(runner):
    rounder = make_rounder("swap", UniformMatroid(8, 4), Mode.B, [0.5] * 8)
    report = verify_submodular_lower_tail(RING, rounder, [0.3, 0.6], 2000, 7, runner=runner)
    # Each item is covered with probability 3/4 under independent halves.
    assert report.mu == pytest.approx(3.0)
    assert not report.informational
    assert all(p.passed is not None for p in report.points)
    assert report.passed
    assert report.mean.passed


def test_the_submodular_lower_tail_is_informational_for_pipage(runner):
    rounder = make_rounder("pipage", UniformMatroid(8, 4), Mode.B, [0.5] * 8)
    report = verify_submodular_lower_tail(RING, rounder, [0.3], 1000, 7, runner=runner)
    assert report.informational
    assert all(p.passed is None for p in report.points)
    assert report.to_json()["informational"] is True


def test_modular_functions_also_get_the_chernoff_lower_bound(swap_2_4, runner):
    f = ModularFunction([1.0, 1.0, 0.0, 0.0])
    report = verify_submodular_lower_tail(f, swap_2_4, [0.5], 1000, 8, runner=runner)
    assert [p.bound_name for p in report.points] == ["submodular", "chernoff"]


def test_scale_divides_values_and_the_mean(swap_2_4, runner):
    f = ModularFunction([2.0, 2.0, 2.0, 2.0])
    report = verify_submodular_lower_tail(f, swap_2_4, [0.5], 1000, 8, scale=2.0, runner=runner)
    assert report.mu == pytest.approx(2.0)
    assert report.mean.observed == pytest.approx(2.0)
    with pytest.raises(ContractViolation):
        verify_submodular_lower_tail(f, swap_2_4, [0.5], 1000, 8, scale=0.0)


def test_independent_rounding_tails_of_a_coverage_function(runner):
    report = verify_independent_submodular_tails(RING, [0.5] * 8, [0.5], 2000, 9, runner=runner)
    assert report.mu == pytest.approx(3.0)
    assert [p.side for p in report.points] == ["upper", "lower"]
    assert report.passed
