import numpy as np
import pytest
from conftest import allocations, convex_agent
from hypothesis import given
from hypothesis import strategies as st

from riskshare.allocation_engine import (
    counter_monotonic_improve,
    individually_rational,
    lambda_optimal,
    mixed_lambda_optimal,
    optimal_split,
    pareto_check_rs,
    ra_lambda_optimal,
    rs_lambda_optimal,
    shifted_improve,
    simplex_grid,
    split_threshold,
    unextended_jackpot_improvements,
    upf_trace,
    v_lambda,
    water_fill,
)
from riskshare.oracle import brute_force_weighted_max
from riskshare.preferences import Agent, UtilityFunction
from riskshare.prob_core import (
    Allocation,
    DomainError,
    FiniteProbSpace,
    RandomVariable,
    ValidationError,
    check_dependence,
    conditional_expectation,
    convex_order_leq,
)

CONVEX = Agent(UtilityFunction("quadratic", {"a": 3, "b": 1}))
CONCAVE = Agent(UtilityFunction("capped_quadratic", {"a": 5, "t": 2}))
MIXED = [CONVEX, CONVEX, CONCAVE, CONCAVE]


def example2():
    space = FiniteProbSpace.uniform(4)
    rows = np.array([[3.0, 0, 0, 1], [0, 3.0, 0, 1], [0, 0, 3.0, 1]])
    return Allocation(space, rows)


def test_simplex_grid_counts():
    # [TRIVIAL] C(points + n - 2, n - 1) points
    assert len(simplex_grid(2, 21)) == 21
    assert len(simplex_grid(3, 5)) == 15


def test_example2_needs_outside_randomization():
    # [PAPER] none of the 81 owner maps on the four states improves every agent
    search = unextended_jackpot_improvements(example2())
    assert search.owner_maps == 81
    assert not search.exists


def test_example2_extended_construction():
    # [PAPER] with randomization each agent wins with probability 1/3
    res = counter_monotonic_improve(example2())
    np.testing.assert_allclose(res.partition.win_probabilities(), [1 / 3] * 3, atol=1e-15)
    assert check_dependence(res.allocation, "jackpot")


def test_improve_rejects_negative_shares():
    space = FiniteProbSpace.uniform(2)
    alloc = Allocation(space, np.array([[-1.0, 2.0], [2.0, 0.0]]))
    with pytest.raises(DomainError):
        counter_monotonic_improve(alloc)
    shifted = shifted_improve(alloc)
    assert check_dependence(shifted.allocation, "counter_monotonic")


@given(allocations())
def test_improvement_properties(alloc):
    # [DERIVED] jackpot, same total, conditional means kept, riskier in convex order
    res = counter_monotonic_improve(alloc)
    Y = res.allocation
    base = alloc.lift(res.space)
    assert check_dependence(Y, "jackpot")
    np.testing.assert_allclose(Y.components.sum(axis=0), base.total, atol=1e-12)
    for i in range(alloc.n):
        cond = conditional_expectation(Y.component(i), alloc.space).values
        np.testing.assert_allclose(cond, alloc.components[i], atol=1e-12)
        assert convex_order_leq(base.component(i), Y.component(i)).holds


def test_example_s1_utilities():
    # [PAPER] 27/64 and 175/256 at equal weights, X uniform on [0, 1]
    m = 10_000
    X = RandomVariable(FiniteProbSpace.uniform(m), (np.arange(m) + 0.5) / m)
    agents = [convex_agent(2, 3), convex_agent(3, 4)]
    opt = rs_lambda_optimal([0.5, 0.5], agents, X)
    utils = [float(agents[i].utility(opt.allocation.components[i]) @ X.space.probs) for i in range(2)]
    assert utils[0] == pytest.approx(27 / 64, abs=1e-3)
    assert utils[1] == pytest.approx(175 / 256, abs=1e-3)


def test_v_lambda_argmax():
    # [DERIVED] 3x^2 versus 4x^3 cross at x = 3/4
    agents = [convex_agent(2, 3), convex_agent(3, 4)]
    v, who = v_lambda([1, 1], agents, np.array([0.5, 0.75, 1.0]))
    np.testing.assert_allclose(v, [0.75, 1.6875, 4.0])
    assert list(who) == [0, 0, 1]


def test_water_fill_equal_concave():
    # [DERIVED] identical concave agents with equal weight split evenly
    agents = [Agent(UtilityFunction("linear_log", {"a": 1, "x0": 0.1}))] * 3
    shares, _ = water_fill([1, 1, 1], agents, np.array([0.0, 3.0]))
    np.testing.assert_allclose(shares[:, 1], [1, 1, 1], atol=1e-12)
    np.testing.assert_allclose(shares[:, 0], 0.0)


def test_water_fill_kkt():
    # [DERIVED] exponential utilities: weighted marginals agree where shares are positive
    agents = [Agent(UtilityFunction("exponential", {"k": k})) for k in (0.5, 1.0, 2.0)]
    lam = np.array([1.0, 2.0, 0.7])
    shares, _ = water_fill(lam, agents, np.array([0.3, 2.0, 7.0]))
    np.testing.assert_allclose(shares.sum(axis=0), [0.3, 2.0, 7.0], atol=1e-12)
    for s in range(3):
        pos = shares[:, s] > 1e-9
        marg = np.array([lam[i] * float(agents[i].utility.derivative(shares[i, s])) for i in range(3)])
        assert np.ptp(marg[pos]) < 1e-6
        if not pos.all():
            assert marg[~pos].max() <= marg[pos].min() + 1e-6


def test_ra_lambda_optimal_is_comonotonic():
    # [DERIVED] water-filling shares increase with the total
    agents = [Agent(UtilityFunction("exponential", {"k": k})) for k in (0.5, 2.0)]
    X = RandomVariable(FiniteProbSpace.uniform(4), np.array([0.5, 1.0, 2.0, 4.0]))
    opt = ra_lambda_optimal([1, 1], agents, X)
    assert check_dependence(opt.allocation, "comonotonic")


def test_example3a_threshold():
    # [PAPER] c = 5/9 for weights 5/4 and 1
    lam = [1.25, 1.25, 1, 1]
    c = split_threshold(lam, [0, 1], [2, 3], MIXED, 0.01, 2.0)
    assert c == pytest.approx(5 / 9, abs=1e-6)
    y, _ = optimal_split(np.asarray(lam), [0, 1], [2, 3], MIXED, np.array([0.5, 0.6, 1.5]))
    np.testing.assert_allclose(y, [0.0, 0.6, 1.5], atol=1e-9)


def test_example3b_interior_split():
    # [PAPER] weights 1 and 2 at x = 2 give X_S = 1/2, X_T = 3/2
    y, _ = optimal_split(np.array([1.0, 1, 2, 2]), [0, 1], [2, 3], MIXED, np.array([2.0]))
    assert y[0] == pytest.approx(0.5, abs=1e-6)


def test_mixed_allocation_structure():
    # [PAPER] above the threshold a single S agent wins; below it T splits evenly
    X = RandomVariable(FiniteProbSpace.uniform(4), np.array([0.3, 0.5, 1.0, 2.0]))
    opt = mixed_lambda_optimal([1.25, 1.25, 1, 1], [0, 1], [2, 3], MIXED, X)
    comps = opt.allocation.components
    np.testing.assert_allclose(comps[2:, :2], [[0.15, 0.25], [0.15, 0.25]], atol=1e-9)
    np.testing.assert_allclose(comps[:, 2:].sum(axis=0) - comps[:2, 2:].sum(axis=0), 0.0, atol=1e-9)
    with pytest.raises(ValidationError):
        mixed_lambda_optimal([1, 1, 1, 1], [0, 2], [1, 3], MIXED, X)


def test_pareto_check_rs():
    # [DERIVED] an even split is not Pareto optimal; a lambda-optimal jackpot is
    space = FiniteProbSpace.uniform(2)
    agents = [convex_agent(2), convex_agent(3)]
    even = Allocation(space, np.array([[0.5, 1.0], [0.5, 1.0]]))
    assert not pareto_check_rs(even, agents).optimal
    X = RandomVariable(space, np.array([1.0, 2.0]))
    opt = rs_lambda_optimal([0.5, 0.5], agents, X)
    verdict = pareto_check_rs(opt.allocation, agents)
    assert verdict.optimal and verdict.witness_lambda is not None
    # giving the big state to agent 0 and the small state to agent 1 inverts the ranking
    flipped = Allocation(space, np.array([[0.0, 2.0], [1.0, 0.0]]))
    assert not pareto_check_rs(flipped, agents).optimal


def test_upf_and_individual_rationality():
    # [TRIVIAL] endpoints of the frontier hand everything to one agent
    X = RandomVariable(FiniteProbSpace.uniform(3), np.array([0.5, 1.0, 2.0]))
    agents = [convex_agent(2, 3), convex_agent(3, 4)]
    trace = upf_trace(agents, X, 11)
    assert len(trace) == 11
    total = float(agents[1].utility(X.values) @ X.space.probs)
    assert trace[0].utilities[0] == 0.0 and trace[0].utilities[1] == pytest.approx(total)
    # [DERIVED] endpoints give someone nothing, so a positive reference drops them
    kept = individually_rational(trace, [1e-6, 1e-6])
    assert 0 < len(kept) <= len(trace) - 2


@given(
    st.lists(st.floats(1.0, 4.0), min_size=2, max_size=3),
    st.lists(st.floats(0.05, 3.0), min_size=1, max_size=3),
    st.lists(st.floats(0.05, 1.0), min_size=3, max_size=3),
)
def test_rs_engine_beats_grid_oracle(alphas, xs, lam):
    # [DERIVED] the pointwise maximum is the optimum, so no grid allocation does better
    n = len(alphas)
    agents = [convex_agent(a) for a in alphas]
    X = RandomVariable(FiniteProbSpace.uniform(len(xs)), np.asarray(xs))
    opt, _ = lambda_optimal(lam[:n], agents, X)
    rep = brute_force_weighted_max(lam[:n], agents, X).compare(opt.value)
    assert not rep.engine_defect
    assert rep.best_value <= opt.value + 1e-12
