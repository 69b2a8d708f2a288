"""Jackpot versus proportional sharing among identical rank-dependent agents.

With u linear near zero and a weighting that is concave on small
probabilities, a fair lottery over the whole of X beats splitting it evenly.
For large stakes and a utility that flattens out, the ranking reverses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .preferences import (
    Agent,
    EnvelopeResult,
    WeightingFunction,
    check_cavexity,
    check_tech_con,
    concave_envelope,
    rdu_utility,
)
from .prob_core import (
    DomainError,
    FiniteProbSpace,
    RandomVariable,
    ValidationError,
    extend_with_independent_categorical,
    merge_atoms,
)

VERDICT_TOL = 1e-10
ENVELOPE_TOL = 1e-6
FD_STEP = 1e-5


@dataclass(frozen=True, eq=False)
class RduScenario:
    n: int
    agent: Agent
    X: RandomVariable
    x0: float
    slope: float
    envelope: EnvelopeResult
    inflection: float | None
    warnings: tuple[str, ...] = ()

    @property
    def audit_passed(self) -> bool:
        return not self.warnings


def make_rdu_scenario(agent: Agent, X: RandomVariable, n: int, grid_size: int = 10001) -> RduScenario:
    """Bundle the inputs and record which standing assumptions fail."""
    if n < 1:
        raise ValidationError("n must be at least 1")
    if X.min() < 0:
        raise DomainError("X must be nonnegative")
    warnings = []
    u = agent.utility
    x0, slope = u.linear_part()
    if abs(float(u(0.0))) > 1e-12:
        warnings.append("u(0) != 0")
    if not x0 > 0 or not slope > 0:
        warnings.append("u has no linear stretch [0, x0] with positive slope")
    w = agent.weighting
    env = concave_envelope(w, grid_size)
    inflection = check_cavexity(w, grid_size)
    if inflection is None:
        warnings.append("weighting is not concave-then-convex")
    if n > 1:
        ts = np.linspace(0.0, 1.0 / n, 2001)
        dev = float(np.max(np.abs(np.asarray(env(ts)) - np.asarray(w(ts)))))
        if dev > ENVELOPE_TOL:
            warnings.append(f"w departs from its concave envelope on [0, 1/n] by {dev:.3g} (n < 1/beta_w = {1 / env.beta:.4g})")
    return RduScenario(n, agent, X, float(x0), float(slope), env, inflection, tuple(warnings))


# ---------------------------------------------------------------------------
# dominance
# ---------------------------------------------------------------------------


def layer_integral(values: np.ndarray, probs: np.ndarray, w, scale: float = 1.0) -> float:
    """int_0^inf w(scale * P(V > x)) dx for a discrete nonnegative V."""
    vals, masses = merge_atoms(np.asarray(values, dtype=float), np.asarray(probs, dtype=float))
    vals, masses = vals[::-1], masses[::-1]
    tail = np.minimum(np.cumsum(masses), 1.0)
    steps = vals - np.concatenate([vals[1:], [0.0]])
    keep = vals > 0
    return float(np.dot(steps[keep], np.asarray(w(scale * tail[keep]))))


@dataclass(frozen=True)
class DominanceReport:
    jackpot_utilities: np.ndarray
    proportional_utilities: np.ndarray
    verdict: str
    margin: float
    layer_integral: float
    warnings: tuple[str, ...] = ()


def jackpot_vs_proportional(scenario: RduScenario) -> DominanceReport:
    n, agent, X = scenario.n, scenario.agent, scenario.X
    ext, part = extend_with_independent_categorical(X.space, np.full(n, 1.0 / n))
    jack = part.jackpot(X)
    jackpot = np.array([rdu_utility(agent, jack.component(i)) for i in range(n)])
    prop_one = rdu_utility(agent, X * (1.0 / n))
    proportional = np.full(n, prop_one)
    layers = layer_integral(np.asarray(agent.utility(X.values)), X.space.probs, agent.weighting, 1.0 / n)
    margin = float(np.min(jackpot - proportional)) if n > 1 else 0.0
    worst = float(np.max(jackpot - proportional)) if n > 1 else 0.0
    if n > 1 and margin > VERDICT_TOL:
        verdict = "jackpot_strictly_dominates"
    elif n > 1 and worst < -VERDICT_TOL:
        verdict = "proportional_strictly_dominates"
        margin = worst
    else:
        verdict = "incomparable"
    return DominanceReport(jackpot, proportional, verdict, margin, layers, scenario.warnings)


def dominance_sweep(agent: Agent, n: int, xs) -> np.ndarray:
    """Rows (x, jackpot minus proportional utility) for a constant total x."""
    w = agent.weighting
    rows = []
    for x in np.asarray(xs, dtype=float):
        jackpot = float(w(1.0 / n)) * float(agent.utility(x))
        proportional = float(agent.utility(x / n))
        rows.append((x, jackpot - proportional))
    return np.array(rows)


def rdu_sum_optimal_value(scenario: RduScenario) -> float:
    """n * slope * int w_bar(P(X > x)/n) dx, the largest utility sum when X <= x0."""
    X = scenario.X
    if X.max() > scenario.x0 * (1 + 1e-12):
        raise DomainError(f"X reaches {X.max():.6g} beyond the linear range [0, {scenario.x0:.6g}] of u")
    return scenario.n * scenario.slope * layer_integral(X.values, X.space.probs, scenario.envelope, 1.0 / scenario.n)


# ---------------------------------------------------------------------------
# large stakes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Y0Search:
    y0: float | None
    theta: float | None
    sup_ratio: float | None
    diagnostic: str
    table: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))


def find_y0(scenario: RduScenario, theta_margin: float = 1e-3, x_search_range: tuple[float, float] = (1e-3, 1e8)) -> Y0Search:
    """Smallest grid point beyond which u(x/n) > theta u(x) throughout the range."""
    n, u = scenario.n, scenario.agent.utility
    if n < 2:
        return Y0Search(None, None, None, "a single agent has nothing to share")
    report = check_tech_con(scenario.agent.weighting, u, n)
    if not report.satisfied:
        return Y0Search(
            None,
            None,
            report.sup_ratio_estimate,
            f"tail condition fails: sup w(t/n)/w(t) = {report.sup_ratio_estimate:.6g}, "
            f"w(1/n) = {report.w_at_1_over_n:.6g}, u(x/n)/u(x) at the far end = {report.utility_ratio_limit_estimate:.6g}",
        )
    theta = min(report.sup_ratio_estimate + theta_margin, 1.0 - 1e-12)
    lo, hi = x_search_range
    if not 0 < lo < hi:
        raise ValidationError("x_search_range must satisfy 0 < lo < hi")
    decades = math.log10(hi / lo)
    xs = np.logspace(math.log10(lo), math.log10(hi), int(math.ceil(64 * decades)) + 1)
    ux = np.asarray(u(xs))
    gap = np.asarray(u(xs / n)) - theta * ux
    ok = gap > 0
    table = np.column_stack([xs, gap])
    if ok.all():
        return Y0Search(float(xs[0]), theta, report.sup_ratio_estimate, "condition holds on the whole range", table)
    last_bad = int(np.flatnonzero(~ok)[-1])
    if last_bad == xs.size - 1:
        return Y0Search(None, theta, report.sup_ratio_estimate, "condition still fails at the top of the search range", table)
    return Y0Search(float(xs[last_bad + 1]), theta, report.sup_ratio_estimate, "found", table)


@dataclass(frozen=True)
class EpsilonResult:
    epsilon: float
    utility: float
    engine_utility: float
    safe_utility: float
    derivative_estimate: float
    derivative_closed_form: float
    dominates_safe: bool


def epsilon_perturbation(y: float, scenario: RduScenario, eps: float) -> EpsilonResult:
    """Everyone gives up eps so that one agent, drawn fairly, gains n * eps."""
    n, u, w = scenario.n, scenario.agent.utility, scenario.agent.weighting
    if not y > 0:
        raise DomainError("y must be positive")
    if not 0 <= eps < y:
        raise DomainError("need 0 <= eps < y")
    wn = float(w(1.0 / n))

    def closed(e: float) -> float:
        lo = float(u(y - e))
        return lo + (float(u(y + (n - 1) * e)) - lo) * wn

    value = closed(eps)
    space = FiniteProbSpace.uniform(1)
    ext, part = extend_with_independent_categorical(space, np.full(n, 1.0 / n))
    Z = RandomVariable(ext, y - eps + n * eps * part.indicators()[0])
    engine = rdu_utility(scenario.agent, Z)
    h = min(FD_STEP, 0.5 * y / max(n - 1, 1))
    derivative = (closed(h) - closed(-h)) / (2 * h)
    exact = n * float(u.derivative(y)) * (wn - 1.0 / n)
    safe = float(u(y))
    return EpsilonResult(eps, value, engine, safe, derivative, exact, bool(value > safe + VERDICT_TOL))


def strict_concavity_gain(envelope: EnvelopeResult, n: int, ps) -> np.ndarray:
    """n * w_bar(p/n) - w(p) on a grid of p; positive where splitting a prize pays."""
    ps = np.asarray(ps, dtype=float)
    w: WeightingFunction = envelope.weighting
    return n * np.asarray(envelope(ps / n)) - np.asarray(w(ps))
