import numpy as np
import pytest

from module.matroid import GraphicMatroid, UniformMatroid
from module.rng import stream
from module.submodular import (
    CoverageFunction,
    ExplicitFunction,
    MatroidRankFunction,
    ModularFunction,
    ResidualFunction,
    SubmodularityError,
    check_properties,
    function_from_json,
    gradient_estimate,
    gradient_exact,
    multilinear_estimate,
    multilinear_exact,
    subset_probabilities,
)

RING = CoverageFunction([0.5] * 6, [[0, 1], [1, 2], [2, 3], [3, 4], [4, 5], [5, 0]])


def _functions():
    return [
        ModularFunction([2.0, 1.0, 0.0, 0.5]),
        RING,
        MatroidRankFunction(GraphicMatroid(4, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])),
        ExplicitFunction(2, [0.0, 1.0, 1.0, 1.5]),
    ]


@pytest.mark.parametrize("f", _functions(), ids=lambda f: f.kind)
def test_every_built_in_function_is_monotone_and_submodular(f):
    assert check_properties(f) == []


def test_coverage_counts_each_item_once():
    assert RING.evaluate({0}) == 1.0
    assert RING.evaluate({0, 1}) == 1.5
    assert RING.evaluate({0, 3}) == 2.0
    assert RING.marginal(1, {0}) == 0.5


def test_a_supermodular_table_is_rejected():
    with pytest.raises(SubmodularityError, match="submodularity"):
        ExplicitFunction(2, [0.0, 1.0, 1.0, 3.0])


def test_a_decreasing_table_is_rejected():
    with pytest.raises(SubmodularityError, match="monotonicity"):
        ExplicitFunction(2, [0.0, 1.0, 0.5, 0.5])


def test_negative_modular_weights_are_rejected():
    with pytest.raises(SubmodularityError):
        ModularFunction([1.0, -1.0])


def test_subset_probabilities_follow_the_bitmask_order():
    probabilities = subset_probabilities([0.25, 0.5])
    assert probabilities.tolist() == [0.375, 0.125, 0.375, 0.125]
    assert probabilities.sum() == pytest.approx(1.0)


@pytest.mark.parametrize("f", _functions(), ids=lambda f: f.kind)
def test_closed_forms_match_enumeration(f):
    """Modular and coverage functions answer F from a formula; the others
    enumerate. Forcing the enumeration path on the same point must agree."""
    x = np.linspace(0.1, 0.9, f.n)
    enumerated = float(subset_probabilities(x) @ f.value_table())
    assert multilinear_exact(f, x) == pytest.approx(enumerated, abs=1e-12)


def test_the_coverage_gradient_matches_finite_differences_of_the_table():
    x = np.array([0.2, 0.4, 0.6, 0.8, 0.1, 0.3])
    table = RING.value_table()
    for i in range(RING.n):
        high, low = x.copy(), x.copy()
        high[i], low[i] = 1.0, 0.0
        expected = (subset_probabilities(high) - subset_probabilities(low)) @ table
        assert gradient_exact(RING, x)[i] == pytest.approx(expected, abs=1e-12)


def _pinned(x, i, j, xi, xj):
    y = np.array(x, dtype=float)
    y[i], y[j] = xi, xj
    return y


# Ten elements over five items, each item covered four times.
PENTAGON = CoverageFunction([0.4] * 5, [[i % 5, (i + 2) % 5] for i in range(10)])


@pytest.mark.parametrize("f", _functions() + [PENTAGON], ids=lambda f: f"{f.kind}-{f.n}")
def test_mixed_second_differences_are_never_positive(f):
    """F is multilinear, so d2F/dxi dxj is the exact second difference with
    x_i and x_j pinned to 0 and 1."""
    gen = stream(21, "cross-derivatives", f.n)
    grid = [np.zeros(f.n), np.ones(f.n), np.full(f.n, 0.5)] + [gen.random(f.n) for _ in range(6)]
    for x in grid:
        for i in range(f.n):
            for j in range(i + 1, f.n):
                mixed = (
                    multilinear_exact(f, _pinned(x, i, j, 1.0, 1.0))
                    - multilinear_exact(f, _pinned(x, i, j, 1.0, 0.0))
                    - multilinear_exact(f, _pinned(x, i, j, 0.0, 1.0))
                    + multilinear_exact(f, _pinned(x, i, j, 0.0, 0.0))
                )
                assert mixed <= 1e-9, (x.tolist(), i, j, mixed)


def test_sampled_values_land_within_a_few_standard_errors():
    f = MatroidRankFunction(UniformMatroid(6, 3))
    x = np.full(6, 0.5)
    estimate = multilinear_estimate(f, x, 20000, stream(3, "test-estimate"))
    assert estimate.samples == 20000
    assert abs(estimate.value - multilinear_exact(f, x)) <= 4 * estimate.stderr + 1e-9


def test_sampled_gradients_land_within_a_few_standard_errors():
    f = MatroidRankFunction(UniformMatroid(5, 2))
    x = np.array([0.1, 0.3, 0.5, 0.7, 0.4])
    exact = gradient_exact(f, x)
    for i, estimate in enumerate(gradient_estimate(f, x, 20000, stream(4, "test-gradient"))):
        assert abs(estimate.value - exact[i]) <= 4 * estimate.stderr + 1e-9


def test_closed_form_gradients_are_returned_without_sampling():
    f = ModularFunction([1.0, 2.0])
    estimates = gradient_estimate(f, [0.5, 0.5], 10, stream(0, "unused"))
    assert [e.value for e in estimates] == [1.0, 2.0]
    assert all(e.stderr == 0.0 for e in estimates)


def test_the_residual_function_measures_gains_over_the_fixed_set():
    residual = ResidualFunction(RING, {0})
    assert residual.evaluate(set()) == 0.0
    assert residual.evaluate({1}) == 0.5
    assert residual.evaluate({3}) == 1.0
    x = np.array([0.0, 0.5, 0.0, 1.0, 0.0, 0.0])
    lifted = x.copy()
    lifted[0] = 1.0
    assert multilinear_exact(residual, x) == pytest.approx(multilinear_exact(RING, lifted) - 1.0)
    assert gradient_exact(residual, x)[0] == 0.0


def test_functions_are_rebuilt_from_json():
    for f in _functions():
        rebuilt = function_from_json(f.to_json())
        assert np.allclose(rebuilt.value_table(), f.value_table())


@pytest.mark.parametrize(
    "data",
    [{"type": "modular"}, {"type": "polynomial"}, {"type": "explicit", "n": 2, "values": [0, 1]}],
    ids=["missing-field", "unknown-type", "short-table"],
)
def test_malformed_function_descriptions_are_rejected(data):
    with pytest.raises(SubmodularityError):
        function_from_json(data)
