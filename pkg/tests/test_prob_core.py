import numpy as np
import pytest
from conftest import allocations, nonneg_rvs, probs
from hypothesis import given
from hypothesis import strategies as st

from riskshare.prob_core import (
    Allocation,
    DomainError,
    FiniteProbSpace,
    PriceMeasure,
    RandomVariable,
    ValidationError,
    check_dependence,
    conditional_expectation,
    convex_order_leq,
    distribution,
    expectation,
    extend_with_independent_categorical,
    extend_with_uniform_cuts,
    refine_uniformly,
    stop_loss,
)


def test_space_rejects_bad_probabilities():
    # [TRIVIAL] probabilities must be a simplex point
    with pytest.raises(ValidationError):
        FiniteProbSpace.from_probs([0.5, 0.4])
    with pytest.raises(ValidationError):
        FiniteProbSpace.from_probs([1.2, -0.2])


def test_refinement_splits_evenly():
    # [TRIVIAL] each atom splits into k children of equal mass
    space = FiniteProbSpace.from_probs([0.25, 0.75])
    fine = refine_uniformly(space, 4)
    assert fine.size == 8
    np.testing.assert_allclose(fine.probs, np.repeat([0.25, 0.75], 4) / 4)
    assert fine.refines(space)


def test_categorical_extension_win_probabilities():
    # [DERIVED] an independent device with weights theta gives P(A_i) = theta_i
    space = FiniteProbSpace.from_probs([0.5, 0.3, 0.2])
    theta = np.array([0.2, 0.5, 0.3])
    ext, part = extend_with_independent_categorical(space, theta)
    np.testing.assert_allclose(part.win_probabilities(), theta, atol=1e-15)


def test_categorical_extension_trailing_zero_weight():
    # [DERIVED] a zero weight owns nothing, not a rounding sliver
    space = FiniteProbSpace.uniform(3)
    ext, part = extend_with_independent_categorical(space, np.array([0.1, 0.2, 0.7, 0.0]))
    assert part.win_probabilities()[3] == 0.0
    assert np.all(ext.probs > 0)


def test_uniform_cuts_realize_requested_shares():
    # [DERIVED] cut widths become conditional win probabilities per atom
    space = FiniteProbSpace.from_probs([0.5, 0.5])
    cuts = np.array([[0.0, 0.25, 1.0], [0.0, 0.5, 1.0]])
    ext, part = extend_with_uniform_cuts(space, cuts)
    np.testing.assert_allclose(part.win_probabilities(), [0.5 * 0.25 + 0.5 * 0.5, 0.5 * 0.75 + 0.5 * 0.5])


def test_stop_loss_and_convex_order_simple():
    # [DERIVED] a fair coin on {0, 2} is a mean-preserving spread of the constant 1
    space = FiniteProbSpace.uniform(2)
    one = RandomVariable.constant(space, 1.0)
    coin = RandomVariable(space, np.array([0.0, 2.0]))
    assert stop_loss(coin, 1.0) == pytest.approx(0.5)
    assert stop_loss(one, 1.0) == pytest.approx(0.0)
    assert convex_order_leq(one, coin).holds
    assert not convex_order_leq(coin, one).holds
    shifted = RandomVariable(space, np.array([0.5, 2.5]))
    assert not convex_order_leq(one, shifted).holds


def test_dependence_modes():
    # [TRIVIAL] hand-built patterns
    space = FiniteProbSpace.uniform(3)
    jack = Allocation(space, np.array([[1.0, 0, 0], [0, 2.0, 0], [0, 0, 3.0]]))
    assert check_dependence(jack, "jackpot")
    assert check_dependence(jack, "counter_monotonic")
    como = Allocation(space, np.array([[1.0, 2, 3], [2.0, 4, 6]]))
    assert check_dependence(como, "comonotonic")
    assert not check_dependence(como, "counter_monotonic")
    assert not check_dependence(como, "jackpot")
    with pytest.raises(ValidationError):
        check_dependence(jack, "independent")


def test_price_measure_normalizes():
    # [TRIVIAL] E[dQ/dP] = 1
    space = FiniteProbSpace.from_probs([0.25, 0.75])
    q = PriceMeasure.from_unnormalized(space, [2.0, 1.0])
    assert float(q.density @ space.probs) == pytest.approx(1.0)
    X = RandomVariable(space, np.array([4.0, 0.0]))
    assert expectation(X, q) == pytest.approx(4.0 * 0.25 * q.density[0])


def test_distribution_merges_ties():
    # [TRIVIAL]
    space = FiniteProbSpace.uniform(4)
    vals, masses = distribution(RandomVariable(space, np.array([1.0, 2.0, 1.0, 3.0])))
    np.testing.assert_allclose(vals, [1, 2, 3])
    np.testing.assert_allclose(masses, [0.5, 0.25, 0.25])


def test_negative_scalar_rejected_where_domain_requires():
    space = FiniteProbSpace.uniform(2)
    with pytest.raises((ValidationError, DomainError)):
        RandomVariable(space, np.array([1.0]))


@given(nonneg_rvs(), st.integers(1, 4))
def test_lift_then_condition_is_identity(X, k):
    # [DERIVED] refining and averaging back recovers X
    fine = refine_uniformly(X.space, k)
    back = conditional_expectation(X.lift(fine), X.space)
    np.testing.assert_allclose(back.values, X.values, atol=1e-12)


@given(nonneg_rvs(), st.floats(0.0, 10.0))
def test_stop_loss_matches_definition(X, t):
    # [DERIVED] E[(X - t)+] straight from the atoms
    direct = float(np.dot(X.space.probs, np.maximum(X.values - t, 0.0)))
    assert stop_loss(X, t) == pytest.approx(direct, abs=1e-12)


@given(nonneg_rvs())
def test_mean_is_least_risky(X):
    # [DERIVED] Jensen: the constant E[X] is below X in convex order
    m = float(X.values @ X.space.probs)
    assert convex_order_leq(RandomVariable.constant(X.space, m), X).holds


@given(allocations(), probs(1, 4))
def test_categorical_jackpot_sums_to_total(alloc, theta):
    # [DERIVED] a jackpot hands each refined state to exactly one agent
    X = alloc.total_rv()
    ext, part = extend_with_independent_categorical(X.space, theta)
    jack = part.jackpot(X)
    np.testing.assert_allclose(jack.components.sum(axis=0), X.lift(ext).values, atol=1e-12)
    assert check_dependence(jack, "jackpot")
