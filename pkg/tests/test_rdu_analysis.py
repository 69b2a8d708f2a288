import numpy as np
import pytest
from conftest import tk_agent

from riskshare.oracle import enumerate_jackpot_partitions
from riskshare.preferences import Agent, UtilityFunction, WeightingFunction
from riskshare.prob_core import DomainError, FiniteProbSpace, RandomVariable, refine_uniformly
from riskshare.rdu_analysis import (
    dominance_sweep,
    epsilon_perturbation,
    find_y0,
    jackpot_vs_proportional,
    layer_integral,
    make_rdu_scenario,
    rdu_sum_optimal_value,
    strict_concavity_gain,
)

ONE = FiniteProbSpace.uniform(1)


def constant(c):
    return RandomVariable(ONE, np.array([float(c)]))


def test_layer_integral_matches_choquet():
    # [DERIVED] two-point X = (0, 2) w.p. 1/2: int w(P(X > x)) dx = 2 w(1/2)
    w = WeightingFunction("tk", {"gamma": 0.71})
    assert layer_integral(np.array([0.0, 2.0]), np.array([0.5, 0.5]), w) == pytest.approx(2 * float(w(0.5)))


def test_sum_optimal_value_eight_agents():
    # [DERIVED] X = 1 <= x0, n = 8: n * w(1/8) since w meets its envelope on [0, 1/8]
    sc = make_rdu_scenario(tk_agent(), constant(1.0), 8)
    assert sc.audit_passed
    value = rdu_sum_optimal_value(sc)
    assert value == pytest.approx(8 * 0.19043, abs=1e-4)
    fine = refine_uniformly(ONE, 8)
    rep = enumerate_jackpot_partitions(fine, 8, [tk_agent()] * 8, constant(1.0).lift(fine))
    assert rep.best_value <= value + 1e-9
    assert rep.best_value == pytest.approx(value, abs=1e-9)


def test_sum_optimal_refuses_beyond_linear_range():
    sc = make_rdu_scenario(tk_agent(), constant(2.0), 8)
    with pytest.raises(DomainError):
        rdu_sum_optimal_value(sc)


def test_jackpot_dominates_small_stakes():
    # [PAPER] with w(1/8) > 1/8 and u linear, the lottery wins: margin w(1/8) - 1/8
    d = jackpot_vs_proportional(make_rdu_scenario(tk_agent(), constant(1.0), 8))
    assert d.verdict == "jackpot_strictly_dominates"
    assert d.margin == pytest.approx(0.19043 - 0.125, abs=1e-4)


def test_satiation_reverses():
    # [PAPER] utility flat beyond y0 and X >= n y0: even shares win
    agent = Agent(UtilityFunction("satiation", {"a": 1, "x0": 1, "y0": 2}), WeightingFunction("tk", {"gamma": 0.71}))
    d = jackpot_vs_proportional(make_rdu_scenario(agent, constant(10.0), 4))
    assert d.verdict == "proportional_strictly_dominates"


def test_audit_warns_for_small_n():
    # [DERIVED] 1/2 lies past beta_w, where w is below its envelope
    sc = make_rdu_scenario(tk_agent(), constant(1.0), 2)
    assert not sc.audit_passed


def test_find_y0_and_flip():
    # [PAPER] a finite y0 exists for log growth, and beyond it even shares dominate
    sc = make_rdu_scenario(tk_agent(), constant(1.0), 8)
    y = find_y0(sc)
    assert y.y0 is not None and np.isfinite(y.y0)
    for factor in (1.01, 2.0, 10.0, 1000.0):
        d = jackpot_vs_proportional(make_rdu_scenario(tk_agent(), constant(y.y0 * factor), 8))
        assert d.verdict == "proportional_strictly_dominates", factor


def test_find_y0_linear_utility_has_none():
    # [DERIVED] u(x/n)/u(x) = 1/n never exceeds sup w(t/n)/w(t)
    agent = Agent(UtilityFunction("power", {"alpha": 1}), WeightingFunction("tk", {"gamma": 0.71}))
    assert find_y0(make_rdu_scenario(agent, constant(1.0), 8)).y0 is None


def test_epsilon_derivative():
    # [PAPER] d/de at 0 equals n u'(y) (w(1/n) - 1/n)
    sc = make_rdu_scenario(tk_agent(), constant(1.0), 8)
    r = epsilon_perturbation(0.5, sc, 0.01)
    assert abs(r.derivative_estimate - r.derivative_closed_form) <= 1e-4
    assert r.utility == pytest.approx(r.engine_utility, abs=1e-12)
    assert r.dominates_safe


def test_dominance_sweep_sign_change():
    # [DERIVED] positive for small totals, negative for large ones under log growth
    rows = dominance_sweep(tk_agent(), 8, [0.5, 1e6])
    assert rows[0, 1] > 0 > rows[1, 1]


def test_strict_concavity_gain_positive():
    # [DERIVED] n w_bar(p/n) - w(p) > 0 when p/n is below beta_w and w(p) < n w(p/n)
    env = make_rdu_scenario(tk_agent(), constant(1.0), 8).envelope
    gain = strict_concavity_gain(env, 8, np.array([0.5, 1.0]))
    assert np.all(gain > 0)
