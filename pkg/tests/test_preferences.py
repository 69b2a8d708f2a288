import numpy as np
import pytest
from conftest import nonneg_rvs
from hypothesis import given
from hypothesis import strategies as st

from riskshare.preferences import (
    Agent,
    UtilityFunction,
    WeightingFunction,
    check_cavexity,
    check_tech_con,
    choquet,
    concave_envelope,
    expected_utility,
    rdu_utility,
)
from riskshare.prob_core import DomainError, FiniteProbSpace, RandomVariable, ValidationError

TK = WeightingFunction("tk", {"gamma": 0.71})


def test_family_values():
    # [TRIVIAL] closed forms
    assert float(UtilityFunction("power", {"alpha": 2, "scale": 3})(0.5)) == pytest.approx(0.75)
    assert float(UtilityFunction("quadratic", {"a": 3, "b": 1})(1.0)) == pytest.approx(4.0)
    ll = UtilityFunction("linear_log", {"a": 1, "x0": 1})
    assert float(ll(0.5)) == pytest.approx(0.5)
    assert float(ll(np.e)) == pytest.approx(2.0)
    cq = UtilityFunction("capped_quadratic", {"a": 5, "t": 2})
    assert float(cq(1.0)) == pytest.approx(3.0)
    assert float(cq(1.5)) == pytest.approx(3.5)  # slope 1 beyond 2/t


def test_attitude_tags():
    # [TRIVIAL]
    assert UtilityFunction("power", {"alpha": 3}).risk_seeking
    assert UtilityFunction("linear_log", {}).risk_averse
    assert not UtilityFunction("quadratic", {"a": 3, "b": 1}).risk_averse
    with pytest.raises(ValidationError):
        UtilityFunction("power", {"alpha": 2}, attitude="wobbly")


def test_unknown_family_rejected():
    with pytest.raises(ValidationError):
        UtilityFunction("sigmoid", {})
    with pytest.raises(ValidationError):
        WeightingFunction("prelec", {})


def test_tk_values():
    # [DERIVED] t^g / (t^g + (1-t)^g)^(1/g) with g = 0.71, evaluated by hand
    assert float(TK(0.125)) == pytest.approx(0.19043, abs=1e-5)
    assert float(TK(0.0)) == 0.0 and float(TK(1.0)) == 1.0


def test_envelope_and_inflection():
    # [PAPER] beta_w about 0.133 and inflection about 0.452 for gamma 0.71
    env = concave_envelope(TK, 20001)
    assert env.beta == pytest.approx(0.133, abs=0.002)
    assert check_cavexity(TK, 20001) == pytest.approx(0.452, abs=0.005)
    ts = np.linspace(0, 1, 501)
    assert np.all(np.asarray(env(ts)) >= np.asarray(TK(ts)) - 1e-12)


def test_envelope_of_concave_is_itself():
    # [DERIVED] a concave w is its own envelope, so beta_w = 1
    w = WeightingFunction("power", {"gamma": 0.5})
    env = concave_envelope(w, 4001)
    assert env.beta == pytest.approx(1.0)
    assert check_cavexity(WeightingFunction("power", {"gamma": 2.0}), 4001) in (None, 0.0)


def test_tech_condition_for_tk_linear_log():
    # [DERIVED] sup w(t/n)/w(t) stays below 1 and u(x/n)/u(x) -> 1 for log growth
    rep = check_tech_con(TK, UtilityFunction("linear_log", {"a": 1, "x0": 1}), 8)
    assert rep.satisfied
    assert rep.sup_ratio_estimate == pytest.approx(0.269472, abs=1e-3)
    lin = check_tech_con(TK, UtilityFunction("power", {"alpha": 1}), 8)
    assert not lin.satisfied


def test_inverse_derivative_round_trip():
    # [DERIVED] u'(inv(t)) = t inside the range
    for u in (UtilityFunction("exponential", {"k": 1.0}), UtilityFunction("capped_quadratic", {"a": 5, "t": 1}),
              UtilityFunction("piecewise_linear", {"xs": [0, 1, 3], "ys": [0, 2, 3]})):
        ts = np.linspace(0.6, 0.95, 5) * float(u.derivative(0.0, "right"))
        ys = u.inverse_derivative(ts, 10.0)
        for t, y in zip(ts, ys):
            if 0 < y < 10:
                assert float(u.derivative(y, "left")) >= t - 1e-9


def test_choquet_rejects_negative():
    space = FiniteProbSpace.uniform(2)
    with pytest.raises(DomainError):
        choquet(RandomVariable(space, np.array([-1.0, 1.0])), TK)


def test_rdu_of_fair_lottery():
    # [DERIVED] a 1/8 chance at 1 under linear u is worth w(1/8)
    agent = Agent(UtilityFunction("linear_log", {}), TK)
    space = FiniteProbSpace.uniform(8)
    Y = RandomVariable(space, np.eye(8)[0])
    assert rdu_utility(agent, Y) == pytest.approx(float(TK(0.125)), abs=1e-14)


weightings = st.sampled_from(
    [TK, WeightingFunction("power", {"gamma": 0.5}), WeightingFunction("power", {"gamma": 2.0}),
     WeightingFunction("tk", {"gamma": 0.61})]
)


@given(nonneg_rvs(), st.lists(st.floats(0, 3), min_size=6, max_size=6), weightings)
def test_choquet_monotone(X, bumps, w):
    # [DERIVED] more in every state is never worth less
    Y = RandomVariable(X.space, X.values + np.asarray(bumps[: X.space.size]))
    assert choquet(Y, w) >= choquet(X, w) - 1e-10


@given(nonneg_rvs(), st.floats(0.0, 50.0), weightings)
def test_choquet_positively_homogeneous(X, c, w):
    # [DERIVED]
    assert choquet(X * c, w) == pytest.approx(c * choquet(X, w), abs=1e-10 * max(1.0, c))


@given(nonneg_rvs(), st.floats(0.0, 1.0), st.floats(0.0, 3.0), weightings)
def test_choquet_comonotonic_additive(X, a, b, w):
    # [DERIVED] a X and b X^2 move together
    Y = X * a
    Z = X.map(lambda v: b * v**2)
    assert choquet(Y + Z, w) == pytest.approx(choquet(Y, w) + choquet(Z, w), abs=1e-10 * max(1.0, choquet(Z, w)))


@given(nonneg_rvs())
def test_identity_weighting_is_expectation(X):
    # [DERIVED] with w(t) = t the Choquet integral is the mean
    u = UtilityFunction("power", {"alpha": 2})
    agent = Agent(u)
    assert rdu_utility(agent, X) == pytest.approx(expected_utility(u, X), abs=1e-10 * max(1.0, expected_utility(u, X)))
