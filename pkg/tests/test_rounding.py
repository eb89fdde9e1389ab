"""Tests for swap rounding, pipage rounding and their traces.

The statistical tests draw a few thousand rounds from counter-based streams,
so every one of them sees the same draws on every run; the tolerances are
still set at several standard errors so that a correct change to the draw
order does not turn them into coin flips.
"""

import os

import numpy as np
import pytest

from module.instance import parse_instance
from module.matroid import (
    ContractViolation,
    ExplicitMatroid,
    GraphicMatroid,
    PartitionMatroid,
    UniformMatroid,
)
from module.polytope import ConvexCombination, Mode, NotInPolytopeError, decompose_base
from module.rng import stream
from module.rounding import (
    AdjustPipageRounder,
    IndependentRounder,
    PipageRounder,
    RoundingTrace,
    SwapPointRounder,
    SwapRounder,
    TraceStep,
    adjust,
    hit_constraint,
    make_rounder,
    merge_bases,
    merge_indep_sets,
    pipage_round,
    pipage_round_point,
    swap_round,
    verify_trace,
)

EIGHT_EDGES = [(0, 1), (0, 2), (0, 3), (0, 4), (1, 2), (2, 3), (3, 4), (1, 4)]
GRAPH = GraphicMatroid(5, EIGHT_EDGES)
TREES = ConvexCombination.build(
    [(0.4, [0, 1, 2, 3]), (0.3, [0, 4, 5, 6]), (0.2, [1, 5, 6, 7]), (0.1, [2, 3, 4, 7])]
)
PARTITION = PartitionMatroid([[0, 1, 2], [3, 4], [5, 6, 7]], [1, 1, 2])
PARTITION_POINT = np.array([0.2, 0.3, 0.5, 0.6, 0.4, 0.7, 0.6, 0.7])
TRIANGLE = GraphicMatroid(3, [(0, 1), (0, 2), (1, 2)])

FIXTURES = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "fixtures")
BASE_FIXTURES = [
    "coverage_4_8",
    "coverage_5_10",
    "explicit",
    "graphic_8",
    "k3",
    "partition_3block",
    "uniform_2_4",
    "uniform_5_10",
]


def _frequencies(round_once, n, trials, label):
    counts = np.zeros(n)
    for trial in range(trials):
        counts[sorted(round_once(stream(11, label, trial)))] += 1
    return counts / trials


def _assert_marginals(frequencies, x, trials):
    stderr = np.sqrt(x * (1 - x) / trials)
    assert (np.abs(frequencies - x) <= 4 * stderr + 1e-12).all(), (frequencies, x)


# --- Swap rounding ----------------------------------------------------------


def test_merging_a_base_with_itself_is_a_no_op():
    m = UniformMatroid(4, 2)
    assert merge_bases(0.3, {0, 1}, 0.7, {0, 1}, m, stream(0, "t")) == frozenset({0, 1})


def test_merge_refuses_non_bases_and_empty_weights():
    m = UniformMatroid(4, 2)
    with pytest.raises(ContractViolation):
        merge_bases(0.5, {0}, 0.5, {1, 2}, m, stream(0, "t"))
    with pytest.raises(ContractViolation):
        merge_bases(0.0, {0, 1}, 1.0, {2, 3}, m, stream(0, "t"))


def test_merge_keeps_the_first_base_with_its_weight():
    """Two disjoint bases of U(1, 2): the merge is a single exchange, kept
    one way with probability beta1 / (beta1 + beta2)."""
    m = UniformMatroid(2, 1)
    kept = sum(
        merge_bases(0.8, {0}, 0.2, {1}, m, stream(5, "merge", t)) == frozenset({0})
        for t in range(4000)
    )
    assert abs(kept / 4000 - 0.8) <= 4 * np.sqrt(0.8 * 0.2 / 4000)


def test_merging_two_disjoint_bases_of_u24_reaches_four_bases_equally():
    """{0,1} and {2,3} at equal weight: two exchanges, each a fair coin."""
    m = UniformMatroid(4, 2)
    trials = 4000
    counts = {}
    for t in range(trials):
        base = merge_bases(0.5, {0, 1}, 0.5, {2, 3}, m, stream(12, "merge-u24", t))
        counts[base] = counts.get(base, 0) + 1
    assert set(counts) == {
        frozenset({0, 1}),
        frozenset({0, 3}),
        frozenset({1, 2}),
        frozenset({2, 3}),
    }
    stderr = np.sqrt(0.25 * 0.75 / trials)
    for base, count in counts.items():
        assert abs(count / trials - 0.25) <= 4 * stderr, (sorted(base), count)


def test_swap_rounding_always_returns_a_base():
    for trial in range(200):
        assert GRAPH.is_base(swap_round(TREES, GRAPH, stream(1, "trial", trial)))


def test_swap_rounding_preserves_marginals_on_spanning_trees():
    trials = 4000
    frequencies = _frequencies(lambda rng: swap_round(TREES, GRAPH, rng), GRAPH.n, trials, "swap")
    _assert_marginals(frequencies, TREES.point(GRAPH.n), trials)


def test_a_single_term_combination_rounds_to_its_base():
    single = ConvexCombination.build([(1.0, [0, 1, 2, 3])])
    assert swap_round(single, GRAPH, stream(0, "t")) == frozenset({0, 1, 2, 3})


def test_swap_rounding_of_independent_sets_stays_independent_and_unbiased():
    m = UniformMatroid(4, 2)
    combination = ConvexCombination.build([(0.5, [0, 1]), (0.3, [2]), (0.2, [])])
    rounder = SwapPointRounder(m, combination)
    trials = 4000
    counts = np.zeros(4)
    for trial in range(trials):
        s = rounder(stream(2, "trial", trial))
        assert m.is_independent(s)
        counts[sorted(s)] += 1
    _assert_marginals(counts / trials, combination.point(4), trials)


def test_merge_of_unequal_independent_sets_drops_padding_at_the_right_rate():
    m = UniformMatroid(3, 2)
    hits = np.zeros(3)
    trials = 4000
    for trial in range(trials):
        hits[sorted(merge_indep_sets(0.5, {0, 1}, 0.5, {2}, m, stream(3, "pad", trial)))] += 1
    _assert_marginals(hits / trials, np.array([0.5, 0.5, 0.5]), trials)


# --- Traces -----------------------------------------------------------------


def test_a_swap_trace_preserves_pair_sums_and_expectations():
    trace = RoundingTrace(snapshots=[])
    base = swap_round(TREES, GRAPH, stream(9, "trial", 0), trace)
    assert trace.steps
    assert verify_trace(trace) == []
    final = np.array(trace.snapshots[-1])
    assert final.tolist() == pytest.approx([1.0 if e in base else 0.0 for e in range(GRAPH.n)])


def test_verify_trace_reports_a_biased_step():
    trace = RoundingTrace()
    trace.steps.append(TraceStep((0, 1), (0.5, 0.5), ((0.6, (1.0, 0.0)), (0.4, (0.0, 1.0))), 0))
    (problem,) = [p for p in verify_trace(trace) if "coordinate 0" in p]
    assert "in expectation" in problem


def test_verify_trace_reports_a_step_that_breaks_the_pair_sum():
    trace = RoundingTrace()
    trace.steps.append(TraceStep((0, 1), (0.5, 0.5), ((0.5, (1.0, 0.5)), (0.5, (0.0, 0.5))), 0))
    assert any("pair sum" in p for p in verify_trace(trace))


def test_verify_trace_reports_steps_touching_three_coordinates():
    trace = RoundingTrace()
    trace.steps.append(TraceStep((0, 1, 2), (0.5, 0.5, 0.5), ((1.0, (0.5, 0.5, 0.5)),), 0))
    assert verify_trace(trace) == ["step 0 changes 3 coordinates"]


def _fixture_rounder(name, method):
    instance = parse_instance(os.path.join(FIXTURES, f"{name}.json"))
    return make_rounder(method, instance.matroid, instance.mode, instance.point, instance.combination)


@pytest.mark.slow
@pytest.mark.parametrize("method", ["swap", "pipage"])
@pytest.mark.parametrize("name", BASE_FIXTURES)
def test_a_thousand_traced_runs_have_no_violations(name, method):
    rounder = _fixture_rounder(name, method)
    n = rounder.matroid.n
    for trial in range(1000):
        trace = RoundingTrace()
        base = rounder.traced(stream(13, f"traced-{method}", trial), trace)
        assert rounder.matroid.is_base(base)
        assert verify_trace(trace) == [], (trial, verify_trace(trace))
        if method == "pipage":
            assert len(trace.steps) <= n * n


# --- Pipage rounding --------------------------------------------------------


def test_hit_constraint_stops_at_the_first_tight_set():
    m = UniformMatroid(3, 2)
    moved, tight = hit_constraint(m, [0.5, 0.5, 1.0], 0, 1)
    assert moved.tolist() == [1.0, 0.0, 1.0]
    assert tight.set == frozenset({0})
    assert tight.slack == pytest.approx(0.0)


def test_hit_constraint_can_be_stopped_by_everything_but_the_donor():
    """On a base point the slack of N - j equals y_j, so a step that empties
    the donor ends on that set, lowest mask first."""
    m = UniformMatroid(4, 2)
    moved, tight = hit_constraint(m, [0.5, 0.125, 0.625, 0.75], 0, 1)
    assert moved.tolist() == [0.625, 0.0, 0.625, 0.75]
    assert tight.set == frozenset({0, 2, 3})
    assert tight.slack == pytest.approx(0.0, abs=1e-12)


def test_hit_constraint_needs_two_elements_and_a_base_point():
    m = UniformMatroid(3, 2)
    with pytest.raises(ContractViolation):
        hit_constraint(m, [0.5, 0.5, 1.0], 1, 1)
    with pytest.raises(NotInPolytopeError):
        hit_constraint(m, [0.5, 0.5, 0.5], 0, 1)


@pytest.mark.parametrize(
    "m, x",
    [
        (UniformMatroid(4, 2), [0.5, 0.5, 0.5, 0.5]),
        (PARTITION, PARTITION_POINT),
        (GRAPH, [0.7, 0.6, 0.5, 0.5, 0.4, 0.5, 0.5, 0.3]),
        (ExplicitMatroid(3, rank_table=[0, 1, 1, 1, 1, 2, 2, 2]), [0.5, 0.5, 1.0]),
    ],
    ids=["uniform", "partition", "graphic", "explicit"],
)
def test_pipage_rounding_returns_bases_with_valid_traces(m, x):
    for trial in range(50):
        trace = RoundingTrace()
        base = pipage_round(m, x, stream(4, "trial", trial), trace)
        assert m.is_base(base)
        assert verify_trace(trace) == []
        assert len(trace.steps) <= m.n * m.n


def test_pipage_rounding_preserves_marginals():
    trials = 4000
    frequencies = _frequencies(
        lambda rng: pipage_round(PARTITION, PARTITION_POINT, rng), PARTITION.n, trials, "pipage"
    )
    _assert_marginals(frequencies, PARTITION_POINT, trials)


def test_pipage_rounding_refuses_points_outside_the_base_polytope():
    with pytest.raises(NotInPolytopeError):
        pipage_round(UniformMatroid(4, 2), [0.5, 0.5, 0.5, 0.0], stream(0, "t"))


def test_an_integral_point_rounds_to_itself_without_steps():
    trace = RoundingTrace()
    assert pipage_round(UniformMatroid(4, 2), [0, 1, 1, 0], stream(0, "t"), trace) == frozenset({1, 2})
    assert trace.steps == []


def test_adjust_reaches_a_base_point_of_the_surviving_elements():
    m = UniformMatroid(4, 2)
    for trial in range(50):
        trace = RoundingTrace()
        reduced, y = adjust(m, [0.5, 0.25, 0.25, 0.0], stream(6, "adjust", trial), trace)
        assert abs(y.sum() - reduced.d) <= 1e-9
        assert verify_trace(trace) == []
        assert (y[sorted(set(range(4)) - reduced.keep)] == 0).all()


def test_pipage_rounding_of_matroid_polytope_points_is_unbiased():
    m = UniformMatroid(4, 2)
    x = np.array([0.5, 0.25, 0.25, 0.0])
    trials = 4000
    frequencies = _frequencies(lambda rng: pipage_round_point(m, x, rng), 4, trials, "adjust")
    _assert_marginals(frequencies, x, trials)


# --- Pairwise products ------------------------------------------------------


@pytest.mark.parametrize("method", ["swap", "pipage"])
def test_edge_pairs_of_a_triangle_stay_below_the_independent_product(method):
    """x = 2/3 on every edge; a spanning tree holds two of three edges, so
    each pair appears together with probability 1/3 < 4/9."""
    rounder = make_rounder(method, TRIANGLE, Mode.B, [2 / 3] * 3)
    trials = 4000
    together = np.zeros((3, 3))
    for trial in range(trials):
        chosen = sorted(rounder(stream(14, f"k3-{method}", trial)))
        for e in chosen:
            for f in chosen:
                together[e, f] += 1
    for e, f in [(0, 1), (0, 2), (1, 2)]:
        p = together[e, f] / trials
        stderr = np.sqrt(max(p * (1 - p), 1e-12) / trials)
        assert p <= 4 / 9 + 4 * stderr, (e, f, p)


# --- Rounders ---------------------------------------------------------------


def test_make_rounder_picks_the_variant_for_the_polytope():
    m = UniformMatroid(4, 2)
    half = [0.5, 0.5, 0.5, 0.5]
    assert isinstance(make_rounder("swap", m, Mode.B, half), SwapRounder)
    assert isinstance(make_rounder("swap", m, Mode.P, [0.5, 0.5, 0.5, 0.0]), SwapPointRounder)
    assert isinstance(make_rounder("pipage", m, Mode.B, half), PipageRounder)
    assert isinstance(make_rounder("pipage", m, Mode.P, half), AdjustPipageRounder)
    assert isinstance(make_rounder("independent", m, Mode.B, half), IndependentRounder)


def test_make_rounder_uses_a_supplied_combination_as_is():
    rounder = make_rounder("swap", GRAPH, Mode.B, combination=TREES)
    assert rounder.combination is TREES
    assert rounder.point.tolist() == pytest.approx([0.7, 0.6, 0.5, 0.5, 0.4, 0.5, 0.5, 0.3])


def test_make_rounder_rejects_unknown_methods_and_missing_points():
    m = UniformMatroid(4, 2)
    with pytest.raises(ContractViolation):
        make_rounder("randomized", m, Mode.B, [0.5] * 4)
    with pytest.raises(ContractViolation):
        make_rounder("swap", m, Mode.B)


def test_base_rounders_promise_their_output_size():
    m = UniformMatroid(4, 2)
    assert SwapRounder(m, decompose_base(m, [0.5] * 4)).expected_size == 2
    assert PipageRounder(m, [0.5] * 4).expected_size == 2
    assert IndependentRounder([0.5] * 4).expected_size is None


def test_untraceable_rounders_say_so():
    with pytest.raises(ContractViolation):
        IndependentRounder([0.5, 0.5]).traced(stream(0, "t"), RoundingTrace())
    rounder = SwapPointRounder(UniformMatroid(2, 1), ConvexCombination.build([(1.0, [0])]))
    with pytest.raises(ContractViolation):
        rounder.traced(stream(0, "t"), RoundingTrace())
