import numpy as np
import pytest
from conftest import convex_agent, tk_agent
from hypothesis import given, settings
from hypothesis import strategies as st

from riskshare.allocation_engine import agent_utilities, pareto_check_rs
from riskshare.equilibrium import (
    EquilibriumRefused,
    audit_crossings,
    equal_endowments,
    fixed_point_search,
    homogeneous_equilibrium,
    jackpot_structure,
    proportional_endowments,
    rdu_constant_equilibrium,
    solve_individual,
    two_agent_equilibrium,
    two_point_mixed_equilibrium,
    verify_equilibrium,
    welfare_check,
)
from riskshare.preferences import Agent, UtilityFunction
from riskshare.prob_core import Allocation, FiniteProbSpace, PriceMeasure, RandomVariable, ValidationError

CONVEX = Agent(UtilityFunction("quadratic", {"a": 3, "b": 1}))
CONCAVE = Agent(UtilityFunction("capped_quadratic", {"a": 5, "t": 2}))


def two_states():
    return RandomVariable(FiniteProbSpace.uniform(2), np.array([1.0, 2.0]))


def test_homogeneous_equal_split():
    # [DERIVED] u = x^2, X = (1, 2): E[u(X)] = 5/2, theta = (1/2, 1/2) so each gets 5/4
    X = two_states()
    res = homogeneous_equilibrium(convex_agent(2), X, equal_endowments(X, 2))
    np.testing.assert_allclose(agent_utilities([convex_agent(2)] * 2, res.allocation), [1.25, 1.25], atol=1e-12)
    assert res.certificate.valid and res.certificate.exact
    # [DERIVED] price proportional to u(X)/X = X
    np.testing.assert_allclose(res.base_price.density, [2 / 3, 4 / 3], atol=1e-12)


def test_homogeneous_trivial_endowment_noted():
    X = two_states()
    own = Allocation(X.space, np.array([[1.0, 2.0], [0.0, 0.0]]))
    res = homogeneous_equilibrium(convex_agent(2), X, own)
    assert res.notes and res.certificate.valid


def test_two_agent_values():
    # [DERIVED] the price is u_0(X)/X normalized; agent utilities (5/4, 5/2)
    X = two_states()
    agents = [convex_agent(2), convex_agent(3)]
    res = two_agent_equilibrium(agents, X, equal_endowments(X, 2))
    np.testing.assert_allclose(agent_utilities(agents, res.allocation), [1.25, 2.5], atol=1e-12)
    assert res.certificate.valid and res.certificate.exact


def test_fixed_point_matches_two_agent():
    # [DERIVED] the same economy through the general search
    X = two_states()
    agents = [convex_agent(2), convex_agent(3)]
    res = fixed_point_search(agents, X, theta=[0.5, 0.5])
    assert res.status == "certified" and res.certificate.valid
    np.testing.assert_allclose(agent_utilities(agents, res.allocation), [1.25, 2.5], atol=1e-9)


def test_fixed_point_general_endowments():
    # [DERIVED] certificates are checked against the endowments themselves
    X = RandomVariable(FiniteProbSpace.uniform(3), np.array([1.0, 2.0, 4.0]))
    own = Allocation(X.space, np.array([[1.0, 0.0, 1.0], [0.0, 1.5, 1.0], [0.0, 0.5, 2.0]]))
    agents = [convex_agent(2), convex_agent(3), Agent(UtilityFunction("exponential", {"k": -1.0}))]
    res = fixed_point_search(agents, X, endowments=own)
    assert res.certificate.valid
    assert welfare_check(res, agents) == (True, True)


def test_example4_interval():
    # [PAPER] L = 4/5 and R = 7/9; eps in [1/9, 1/8] supports the threshold allocation
    tp = two_point_mixed_equilibrium(0.5, 1.5, 0.5, [CONVEX, CONVEX], [CONCAVE, CONCAVE])
    assert abs(tp.L - 0.8) <= 1e-12 and abs(tp.R - 7 / 9) <= 1e-12
    assert tp.interval == pytest.approx((7 / 9, 0.8))
    for eps, ok in [(1 / 9, True), (0.115, True), (1 / 8, True), (0.10, False), (0.14, False)]:
        alloc, price, own = tp.build((1 - eps) / (1 + eps))
        cert = verify_equilibrium(alloc, price, own, tp.agents)
        assert cert.valid is ok, eps
        assert cert.exact


def test_two_point_collapses_when_b_near_a():
    # [PAPER] with b close to a the admissible interval is empty
    tp = two_point_mixed_equilibrium(0.5, 0.5001, 0.5, [CONVEX], [CONCAVE])
    assert tp.interval is None
    assert not tp.necessary_holds


def test_verify_rejects_wrong_price():
    # [DERIVED] a physical price with equal endowments lets agent 1 buy the big state cheaply
    X = two_states()
    agents = [convex_agent(2), convex_agent(2)]
    own = equal_endowments(X, 2)
    cert = verify_equilibrium(own, PriceMeasure.physical(X.space), own, agents)
    assert not cert.valid
    assert max(cert.deviation_gaps) > 1e-3


def test_solve_individual_knapsack():
    # [DERIVED] u = x^2 at physical prices on X = (1, 2): budget 1/2 buys half the mass on X = 2
    X = two_states()
    opt = solve_individual(convex_agent(2), X, PriceMeasure.physical(X.space), 0.5)
    assert opt.value == pytest.approx(1.0)


def test_rdu_constant():
    # [PAPER] endowments worth at most x * beta_w are supported at the physical price
    agent = tk_agent()
    space = FiniteProbSpace.uniform(1)
    X = RandomVariable(space, np.ones(1))
    res = rdu_constant_equilibrium(agent, 1.0, equal_endowments(X, 8))
    assert res.certificate.valid
    assert any("heuristic" in w or "heuristically" in w for w in res.certificate.warnings)
    rich = Allocation(space, np.array([[0.5], [0.5]]))
    with pytest.raises(EquilibriumRefused):
        rdu_constant_equilibrium(agent, 1.0, rich)


def test_crossing_audit_flags_proportional_utilities():
    # [DERIVED] u and 2u have a constant log ratio everywhere
    warns = audit_crossings([convex_agent(2), convex_agent(2, 2.0)], 3.0)
    assert warns


def test_homogeneous_rejects_concave():
    X = two_states()
    with pytest.raises(ValidationError):
        homogeneous_equilibrium(Agent(UtilityFunction("linear_log", {})), X, equal_endowments(X, 2))


@settings(max_examples=25)
@given(
    st.lists(st.floats(0.1, 1.0), min_size=5, max_size=5),
    st.lists(st.integers(1, 10), min_size=3, max_size=3),
)
def test_homogeneous_uniqueness(xs, weights):
    # [PAPER] the price depends on nothing but X, and utilities are E[u(X)] theta
    X = RandomVariable(FiniteProbSpace.uniform(5), np.cumsum(xs))
    agent = convex_agent(2.5)
    theta = np.asarray(weights, float) / sum(weights)
    res = homogeneous_equilibrium(agent, X, proportional_endowments(X, theta))
    ratio = np.asarray(agent.utility(X.values)) / X.values
    np.testing.assert_allclose(res.base_price.density, ratio / float(ratio @ X.space.probs), atol=1e-12)
    eu = float(np.asarray(agent.utility(X.values)) @ X.space.probs)
    np.testing.assert_allclose(agent_utilities([agent] * 3, res.allocation), eu * res.theta, atol=1e-9)
    assert res.certificate.valid
    assert pareto_check_rs(res.allocation, [agent] * 3).optimal
    assert jackpot_structure(res.allocation, [agent] * 3)
