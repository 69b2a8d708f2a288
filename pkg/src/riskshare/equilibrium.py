"""Competitive equilibria: pricing measures, certificates and constructions.

A certificate re-solves every agent's individual problem

    max U_i(Y)  subject to  0 <= Y <= X atomwise,  E^Q[Y] <= E^Q[xi_i]

and records how far the allocated payoff falls short of the best deviation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.optimize import linprog, minimize

from .allocation_engine import as_weights, pareto_check_rs, v_lambda, water_fill
from .oracle import VERTEX_ATOM_CAP, vertex_individual_opt
from .preferences import Agent, UtilityFunction, choquet_values, concave_envelope, rdu_utility
from .prob_core import (
    ZERO_TOL,
    Allocation,
    DependenceVerdict,
    DomainError,
    FiniteProbSpace,
    PriceMeasure,
    RandomVariable,
    ValidationError,
    check_dependence,
    expectation,
    extend_with_independent_categorical,
    extend_with_uniform_cuts,
)

BUDGET_TOL = 1e-9
CLEARANCE_TOL = 1e-9
GAP_TOL = 1e-7
RDU_VERTEX_CAP = 10
EXACT_METHODS = frozenset({"exact_vertex", "water_filling", "ratio_bound"})
STRICT_CONVEX = frozenset({"strictly_convex", "ratio_increasing"})


class EquilibriumRefused(ValidationError):
    """The requested construction does not apply to these inputs."""


# ---------------------------------------------------------------------------
# endowments and prices
# ---------------------------------------------------------------------------


def proportional_endowments(X: RandomVariable, theta) -> Allocation:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.size < 1 or np.any(theta < -1e-12) or abs(math.fsum(theta) - 1.0) > 1e-12:
        raise ValidationError("theta must lie in the probability simplex")
    theta = np.clip(theta, 0.0, None)
    comps = theta[:, None] * X.values[None, :]
    # put rounding residue on the largest share so the rows sum to X
    comps[int(np.argmax(theta))] += X.values - comps.sum(axis=0)
    return Allocation(X.space, comps, X.values)


def equal_endowments(X: RandomVariable, n: int) -> Allocation:
    return proportional_endowments(X, np.full(n, 1.0 / n))


def price_from_lambda(lam, agents: Sequence[Agent], X: RandomVariable) -> PriceMeasure:
    """Density proportional to V_lambda(X)/X, zero where X = 0."""
    lam = as_weights(lam)
    if not all(a.is_eu for a in agents):
        raise ValidationError("price_from_lambda needs EU agents")
    if lam.size != len(agents):
        raise ValidationError("one weight per agent is required")
    values, _ = v_lambda(lam, agents, X.values)
    pos = X.values > ZERO_TOL
    dens = np.zeros(X.space.size)
    dens[pos] = values[pos] / X.values[pos]
    return PriceMeasure.from_unnormalized(X.space, dens)


# ---------------------------------------------------------------------------
# individual problems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IndividualOptimum:
    value: float
    witness: np.ndarray
    method: str
    detail: dict[str, Any] = field(default_factory=dict)


def _greedy_fill(order: np.ndarray, cost: np.ndarray, budget: float) -> np.ndarray:
    """Fractions in [0, 1] taking atoms in ``order`` until the budget runs out."""
    frac = np.zeros(cost.size)
    c = cost[order]
    cum = np.cumsum(c)
    full = cum <= budget * (1 + 1e-15) + 1e-300
    frac[order[full]] = 1.0
    k = int(np.argmin(full)) if not full.all() else c.size
    if k < c.size and c[k] > 0:
        before = cum[k - 1] if k > 0 else 0.0
        frac[order[k]] = min(max((budget - before) / c[k], 0.0), 1.0)
    return frac


def _ratio_bound(u: UtilityFunction, x, p, d, budget) -> IndividualOptimum:
    """Fractional-knapsack bound sum p u(x)/x * Y, valid when u(y)/y is nondecreasing."""
    free = d <= 0
    priced = np.flatnonzero(~free & (x > 0))
    ux = np.asarray(u(x))
    cost = p[priced] * d[priced] * x[priced]
    gain = p[priced] * ux[priced]
    order = np.argsort(-gain / cost, kind="stable")
    frac = _greedy_fill(order, cost, max(budget, 0.0))
    Y = np.where(free, x, 0.0)
    Y[priced] = frac * x[priced]
    bound = float(np.dot(p[free], ux[free]) + np.dot(frac, gain))
    value = float(np.dot(p, u(Y)))
    return IndividualOptimum(value, Y, "heuristic", {"upper_bound": bound})


def _water_filling(u: UtilityFunction, x, p, d, budget) -> IndividualOptimum:
    """KKT solution Y_s = clip((u')^{-1}(mu d_s), 0, x_s) with mu set by bisection."""
    free = (d <= 0) | (x <= 0)
    Y = np.where(free, x, 0.0)
    idx = np.flatnonzero(~free)
    budget = max(budget, 0.0)
    if idx.size == 0:
        return IndividualOptimum(float(np.dot(p, u(Y))), Y, "water_filling", {"kkt_residual": 0.0, "multiplier": 0.0})
    xs, ps, ds = x[idx], p[idx], d[idx]
    full_cost = float(np.dot(ps * ds, xs))
    if full_cost <= budget:
        Y[idx] = xs
        return IndividualOptimum(float(np.dot(p, u(Y))), Y, "water_filling", {"kkt_residual": 0.0, "multiplier": 0.0})
    with np.errstate(divide="ignore", over="ignore"):
        top = np.max(np.asarray(u.derivative(np.zeros_like(xs), "right")) / ds)
        bottom = np.min(np.asarray(u.derivative(xs, "left")) / ds)
    lo = math.log(min(max(bottom, 1e-300), 1e300))
    hi = math.log(min(max(top, 1e-300), 1e300))
    hi = max(hi, lo)

    def demand(log_mu: float) -> np.ndarray:
        return u.inverse_derivative(math.exp(log_mu) * ds, xs)

    for _ in range(300):
        mid = 0.5 * (lo + hi)
        if np.dot(ps * ds, demand(mid)) >= budget:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15:
            break
    rich, poor = demand(lo), demand(hi)
    c_rich, c_poor = float(np.dot(ps * ds, rich)), float(np.dot(ps * ds, poor))
    weight = (budget - c_poor) / (c_rich - c_poor) if c_rich > c_poor else 0.0
    weight = min(max(weight, 0.0), 1.0)
    Y[idx] = np.minimum(poor + weight * (rich - poor), xs)
    spent = float(np.dot(ps * ds, Y[idx]))
    return IndividualOptimum(
        float(np.dot(p, u(Y))),
        Y,
        "water_filling",
        {"kkt_residual": abs(spent - budget), "multiplier": math.exp(0.5 * (lo + hi))},
    )


def _rdu_search(agent: Agent, x, p, d, budget, start: np.ndarray, seed: int) -> IndividualOptimum:
    """Best deviation found among budget-filling orders, vertices and local moves."""
    rng = np.random.default_rng(seed)
    free = (d <= 0) | (x <= 0)
    priced = np.flatnonzero(~free)
    base = np.where(free, x, 0.0)
    budget = max(budget, 0.0)
    cost = p[priced] * d[priced] * x[priced]

    def value(frac: np.ndarray) -> float:
        Y = base.copy()
        Y[priced] = frac * x[priced]
        return choquet_values(np.asarray(agent.utility(Y)), p, agent.weighting)

    best_val, best_frac = -math.inf, np.zeros(priced.size)

    def consider(frac: np.ndarray) -> None:
        nonlocal best_val, best_frac
        v = value(frac)
        if v > best_val:
            best_val, best_frac = v, frac.copy()

    if priced.size == 0:
        return IndividualOptimum(value(best_frac), base, "heuristic", {"candidates": 1})
    ux = np.asarray(agent.utility(x[priced]))
    orders = [
        np.argsort(d[priced], kind="stable"),
        np.argsort(-x[priced], kind="stable"),
        np.argsort(x[priced], kind="stable"),
        np.argsort(-ux / (d[priced] * x[priced]), kind="stable"),
    ]
    orders += [rng.permutation(priced.size) for _ in range(20)]
    for order in orders:
        consider(_greedy_fill(order, cost, budget))
    k = priced.size
    if k <= RDU_VERTEX_CAP:
        for mask in range(2**k):
            bits = np.array([(mask >> j) & 1 for j in range(k)], dtype=float)
            spent = float(np.dot(bits, cost))
            if spent > budget * (1 + 1e-12):
                continue
            consider(bits)
            for j in np.flatnonzero(bits == 0):
                frac = bits.copy()
                frac[j] = min((budget - spent) / cost[j], 1.0)
                consider(frac)
    start_frac = np.divide(start[priced], x[priced], out=np.zeros(k), where=x[priced] > 0)
    consider(np.clip(start_frac, 0.0, 1.0))
    # pairwise budget transfers with a shrinking step
    frac = best_frac.copy()
    step = 0.5
    for _ in range(400):
        i, j = rng.choice(k, size=2, replace=k < 2) if k >= 2 else (0, 0)
        if i == j:
            step *= 0.98
            continue
        move = step * min(frac[i] * cost[i], (1 - frac[j]) * cost[j])
        if move <= 0:
            step *= 0.98
            continue
        trial = frac.copy()
        trial[i] -= move / cost[i]
        trial[j] += move / cost[j]
        v = value(np.clip(trial, 0.0, 1.0))
        if v > best_val:
            best_val, best_frac, frac = v, trial, trial
        else:
            step *= 0.98
    Y = base.copy()
    Y[priced] = best_frac * x[priced]
    return IndividualOptimum(best_val, Y, "heuristic", {"candidates": len(orders)})


def solve_individual(agent: Agent, X: RandomVariable, price: PriceMeasure, budget: float, start=None, seed: int = 0) -> IndividualOptimum:
    """Best payoff 0 <= Y <= X with E^Q[Y] <= budget, method picked by attitude."""
    price = price.lift(X.space)
    x, p, d = X.values, X.space.probs, price.density
    tag = agent.utility.attitude
    start = np.zeros_like(x) if start is None else np.asarray(start, dtype=float)
    if agent.is_eu and tag in ("strictly_convex", "convex", "linear", "ratio_increasing"):
        # u(y) <= y u(x)/x for y <= x, so the knapsack bound caps every deviation;
        # splitting its one fractional atom in two attains it
        bound = _ratio_bound(agent.utility, x, p, d, budget)
        best = bound.detail["upper_bound"]
        priced = int(np.count_nonzero((x > 0) & (d > 0)))
        if tag != "ratio_increasing" and priced <= VERTEX_ATOM_CAP:
            rep = vertex_individual_opt(agent, X, price, budget)
            detail = {"upper_bound": best, "vertex_value": rep.best_value}
            return IndividualOptimum(max(best, rep.best_value), bound.witness, "exact_vertex", detail)
        return IndividualOptimum(best, bound.witness, "ratio_bound", bound.detail)
    if agent.is_eu and tag in ("strictly_concave", "concave"):
        return _water_filling(agent.utility, x, p, d, budget)
    # let the search use randomisation inside atoms by splitting each into k pieces
    k = 4 if x.size <= 8 else 2 if x.size <= 16 else 1
    opt = _rdu_search(agent, np.repeat(x, k), np.repeat(p / k, k), np.repeat(d, k), budget, np.repeat(start, k), seed)
    return IndividualOptimum(opt.value, opt.witness, opt.method, {**opt.detail, "pieces_per_atom": k})


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AgentCheck:
    budget: float
    budget_residual: float
    achieved: float
    best: float
    gap: float
    method: str
    witness: np.ndarray
    detail: dict[str, Any] = field(default_factory=dict)


@dataclass(eq=False)
class EquilibriumCertificate:
    allocation: Allocation
    price: PriceMeasure
    endowments: Allocation
    rows: list[AgentCheck]
    clearance_residual: float
    method: str
    warnings: list[str] = field(default_factory=list)

    @property
    def budget_residuals(self) -> np.ndarray:
        return np.array([r.budget_residual for r in self.rows])

    @property
    def deviation_gaps(self) -> np.ndarray:
        return np.array([r.gap for r in self.rows])

    @property
    def verification_methods(self) -> list[str]:
        return [r.method for r in self.rows]

    @property
    def valid(self) -> bool:
        return (
            bool(np.all(self.budget_residuals >= -BUDGET_TOL))
            and self.clearance_residual <= CLEARANCE_TOL
            and bool(np.all(self.deviation_gaps <= GAP_TOL))
        )

    @property
    def exact(self) -> bool:
        return all(m in EXACT_METHODS for m in self.verification_methods)

    def table(self) -> list[dict[str, Any]]:
        return [
            {
                "agent": i,
                "budget": r.budget,
                "budget_residual": r.budget_residual,
                "achieved": r.achieved,
                "best_deviation": r.best,
                "gap": r.gap,
                "method": r.method,
            }
            for i, r in enumerate(self.rows)
        ]


def _on_space(obj, space: FiniteProbSpace, what: str):
    if obj.space.same_as(space):
        return obj
    if not space.refines(obj.space):
        raise ValidationError(f"{what} lives on a space unrelated to the allocation")
    return obj.lift(space)


def verify_equilibrium(
    alloc: Allocation,
    price: PriceMeasure,
    endowments: Allocation,
    agents: Sequence[Agent],
    method: str = "given",
    seed: int = 0,
) -> EquilibriumCertificate:
    if len(agents) != alloc.n or endowments.n != alloc.n:
        raise ValidationError("allocation, endowments and agents must have the same length")
    space = alloc.space
    price = _on_space(price, space, "price")
    endowments = _on_space(endowments, space, "endowment")
    X = alloc.total_rv()
    clearance = float(np.max(np.abs(alloc.components.sum(axis=0) - endowments.components.sum(axis=0))))
    clearance = max(clearance, float(np.max(np.abs(endowments.total_rv().values - X.values))))
    rows = []
    warnings = []
    for i, agent in enumerate(agents):
        Xi = alloc.component(i)
        budget = expectation(endowments.component(i), price)
        spent = expectation(Xi, price)
        achieved = rdu_utility(agent, Xi)
        opt = solve_individual(agent, X, price, budget, start=Xi.values, seed=seed + i)
        best = opt.value
        if opt.method == "heuristic":
            warnings.append(f"agent {i}: optimality checked heuristically, not proven")
        rows.append(AgentCheck(budget, budget - spent, achieved, best, best - achieved, opt.method, opt.witness, opt.detail))
    return EquilibriumCertificate(alloc, price, endowments, rows, clearance, method, warnings)


def jackpot_structure(alloc: Allocation, agents: Sequence[Agent]) -> DependenceVerdict:
    """Strictly risk-seeking payoffs together with the remainder form a jackpot."""
    S = [i for i, a in enumerate(agents) if a.is_eu and a.utility.attitude in STRICT_CONVEX | {"convex"}]
    comps = alloc.components[S] if S else np.zeros((0, alloc.space.size))
    rest = alloc.total_rv().values - comps.sum(axis=0)
    rest = np.where(np.abs(rest) <= 1e-12 * max(1.0, float(np.max(np.abs(alloc.total_rv().values)))), 0.0, rest)
    sub = Allocation(alloc.space, np.vstack([comps, rest[None, :]]), alloc.total_rv().values)
    return check_dependence(sub, "jackpot")


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class EquilibriumResult:
    allocation: Allocation
    price: PriceMeasure
    endowments: Allocation
    base_price: PriceMeasure
    theta: np.ndarray | None
    method: str
    notes: list[str] = field(default_factory=list)
    certificate: EquilibriumCertificate | None = None
    lam: np.ndarray | None = None
    residual: float = 0.0
    status: str = "certified"

    def __iter__(self):
        yield self.allocation
        yield self.price


def _finish(result: EquilibriumResult, agents: Sequence[Agent], certify: bool, seed: int = 0) -> EquilibriumResult:
    if certify:
        cert = verify_equilibrium(result.allocation, result.price, result.endowments, agents, result.method, seed)
        result.certificate = cert
        if not cert.valid:
            result.status = "uncertified"
    return result


def _check_endowments(X: RandomVariable, endowments: Allocation) -> tuple[RandomVariable, Allocation]:
    if endowments.space.same_as(X.space):
        Xb = X
    elif endowments.space.refines(X.space):
        Xb = X.lift(endowments.space)
    else:
        raise ValidationError("endowments must live on the space of X or a refinement of it")
    scale = max(1.0, float(np.max(np.abs(Xb.values))))
    if np.max(np.abs(endowments.components.sum(axis=0) - Xb.values)) > 1e-12 * scale * endowments.n:
        raise ValidationError("endowments do not add up to X")
    if np.any(endowments.components < -ZERO_TOL):
        raise ValidationError("endowments must be nonnegative")
    return Xb, endowments


# ---------------------------------------------------------------------------
# homogeneous risk seekers
# ---------------------------------------------------------------------------


def _single_agent(agents) -> Agent:
    if isinstance(agents, UtilityFunction):
        return Agent(agents)
    if isinstance(agents, Agent):
        return agents
    agents = list(agents)
    first = agents[0].to_dict()
    if any(a.to_dict() != first for a in agents[1:]):
        raise ValidationError("agents are not homogeneous")
    return agents[0]


def homogeneous_equilibrium(agent, X: RandomVariable, endowments: Allocation, certify: bool = True) -> EquilibriumResult:
    agent = _single_agent(agent)
    if not (agent.is_eu and agent.utility.attitude in STRICT_CONVEX):
        raise ValidationError("homogeneous_equilibrium needs strictly risk-seeking EU agents")
    X, endowments = _check_endowments(X, endowments)
    n = endowments.n
    agents = [agent] * n
    price = price_from_lambda([1.0], [agent], X)
    theta = np.array([expectation(endowments.component(i), price) for i in range(n)]) / expectation(X, price)
    if not endowments.is_nontrivial():
        note = "trivial endowment: any price supports it; the formula price is reported"
        res = EquilibriumResult(endowments, price, endowments, price, theta, "homogeneous", [note])
        return _finish(res, agents, certify)
    theta = np.clip(theta, 0.0, None)
    theta = theta / theta.sum()
    ext, part = extend_with_independent_categorical(X.space, theta)
    alloc = part.jackpot(X)
    res = EquilibriumResult(alloc, price.lift(ext), endowments.lift(ext), price, theta, "homogeneous")
    return _finish(res, agents, certify)


# ---------------------------------------------------------------------------
# two heterogeneous risk seekers
# ---------------------------------------------------------------------------


def two_agent_equilibrium(agents: Sequence[Agent], X: RandomVariable, endowments: Allocation, certify: bool = True) -> EquilibriumResult:
    """Agent 0 takes a tail event of u_0(X)/u_1(X) worth exactly its budget."""
    agents = list(agents)
    if len(agents) != 2 or not all(a.is_eu and a.utility.attitude in STRICT_CONVEX for a in agents):
        raise ValidationError("two_agent_equilibrium needs two strictly risk-seeking EU agents")
    X, endowments = _check_endowments(X, endowments)
    space = X.space
    price = price_from_lambda([1.0, 0.0], agents, X)
    budgets = np.array([expectation(endowments.component(i), price) for i in range(2)])
    total = expectation(X, price)
    notes = []
    m = space.size
    cuts = np.zeros((m, 3))
    cuts[:, 2] = 1.0
    if budgets[0] <= 1e-15 * total:
        notes.append("agent 0 has no purchasing power: corner allocation")
    elif budgets[1] <= 1e-15 * total:
        cuts[:, 1] = 1.0
        notes.append("agent 1 has no purchasing power: corner allocation")
    else:
        pos = np.flatnonzero(X.values > 0)
        u0 = np.asarray(agents[0].utility(X.values[pos]))
        u1 = np.asarray(agents[1].utility(X.values[pos]))
        ratio = u0 / u1
        order = pos[np.argsort(-ratio, kind="stable")]
        cost = space.probs[order] * price.density[order] * X.values[order]
        frac = _greedy_fill(np.arange(order.size), cost, budgets[0])
        cuts[order, 1] = frac
    ext, part = extend_with_uniform_cuts(space, cuts)
    alloc = part.jackpot(X)
    res = EquilibriumResult(alloc, price.lift(ext), endowments.lift(ext), price, budgets / total, "two_agent_tail", notes)
    return _finish(res, agents, certify)


# ---------------------------------------------------------------------------
# simplex fixed point for heterogeneous risk seekers
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class FixedPointResult(EquilibriumResult):
    history: list[float] = field(default_factory=list)
    split: np.ndarray | None = None

    def __iter__(self):
        yield self.lam
        yield self.allocation
        yield self.price
        yield self.residual


class _Market:
    """Distinct values of X as goods; agent i values good s at u_i(x_s)."""

    def __init__(self, agents: Sequence[Agent], X: RandomVariable, endowments: Allocation, theta):
        self.xv, self.inverse = np.unique(X.values, return_inverse=True)
        self.pv = np.bincount(self.inverse, weights=X.space.probs)
        self.U = np.stack([np.asarray(a.utility(self.xv)) for a in agents])
        self.n = len(agents)
        self.pos = self.xv > 0
        self.theta = None if theta is None else np.asarray(theta, dtype=float)
        # xi_mass[i, s] = sum over atoms of value x_s of p * xi_i
        self.xi_mass = np.zeros((self.n, self.xv.size))
        for i in range(self.n):
            self.xi_mass[i] = np.bincount(self.inverse, weights=X.space.probs * endowments.components[i], minlength=self.xv.size)

    def values(self, lam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        W = lam[:, None] * self.U
        return W.max(axis=0), W.argmax(axis=0)

    def g(self, lam: np.ndarray) -> np.ndarray:
        if self.theta is not None:
            return self.theta
        V, _ = self.values(lam)
        dens = np.divide(V, self.xv, out=np.zeros_like(V), where=self.pos)
        return (self.xi_mass @ dens) / float(np.dot(self.pv, V))

    def f(self, lam: np.ndarray, split: np.ndarray | None = None) -> np.ndarray:
        V, owner = self.values(lam)
        mass = self.pv * V
        if split is None:
            split = np.zeros((self.n, self.xv.size))
            split[owner, np.arange(self.xv.size)] = 1.0
        return (split @ mass) / mass.sum()


def _fisher_weights(mkt: _Market, theta: np.ndarray, lam0: np.ndarray) -> np.ndarray:
    """Minimise sum_s p_s max_i lam_i u_i(x_s) - sum_i theta_i log lam_i.

    Its minimiser prices every good at the weighted value of its best bidder
    while each agent's bundle costs exactly theta_i.
    """
    act = np.flatnonzero(theta > 1e-15)
    goods = np.flatnonzero(mkt.pos)
    if act.size == 0 or goods.size == 0:
        return np.asarray(lam0, dtype=float)
    A = mkt.pv[goods][None, :] * mkt.U[np.ix_(act, goods)]
    th = theta[act]
    scale = A.max(axis=1, keepdims=True)
    scale[scale <= 0] = 1.0
    A = A / scale
    # proportional response warm start
    bids = th[:, None] * (A > 0) / np.maximum((A > 0).sum(axis=1, keepdims=True), 1)
    for _ in range(2000):
        prices = bids.sum(axis=0)
        share = np.divide(bids, prices, out=np.zeros_like(bids), where=prices > 0)
        util = (A * share).sum(axis=1)
        bids = th[:, None] * A * share / np.maximum(util, 1e-300)[:, None]
    prices = bids.sum(axis=0)
    share = np.divide(bids, prices, out=np.zeros_like(bids), where=prices > 0)
    lam = th / np.maximum((A * share).sum(axis=1), 1e-300)
    na, ng = A.shape
    if na * ng <= 20000 and na > 1:
        t0 = (lam[:, None] * A).max(axis=0)
        z0 = np.concatenate([np.log(lam), t0])
        rows = []
        for i in range(na):
            r = np.zeros((ng, na + ng))
            r[:, na:] = np.eye(ng)
            rows.append((i, r))

        def obj(z):
            return float(z[na:].sum() - np.dot(th, z[:na]))

        def grad(z):
            return np.concatenate([-th, np.ones(ng)])

        def cons(z):
            return (z[na:][None, :] - np.exp(z[:na])[:, None] * A).ravel()

        def cons_jac(z):
            J = np.zeros((na * ng, na + ng))
            e = np.exp(z[:na])
            for i in range(na):
                J[i * ng:(i + 1) * ng, i] = -e[i] * A[i]
                J[i * ng:(i + 1) * ng, na:] = np.eye(ng)
            return J

        sol = minimize(
            obj, z0, jac=grad, method="SLSQP",
            constraints=[{"type": "ineq", "fun": cons, "jac": cons_jac}],
            options={"maxiter": 500, "ftol": 1e-15},
        )
        if np.all(np.isfinite(sol.x)):
            cand = np.exp(sol.x[:na])
            if _phi(cand, A, th) <= _phi(lam, A, th) + 1e-14:
                lam = cand
    out = np.zeros(mkt.n)
    out[act] = lam / scale[:, 0]
    return out / out.sum()


def _phi(lam, A, th) -> float:
    return float((lam[:, None] * A).max(axis=0).sum() - np.dot(th, np.log(lam)))


def _snap(mkt: _Market, lam: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Make near-ties exact along a spanning forest of the tie graph.

    Returns the snapped weights and a component label per agent (-1 for zero weight).
    """
    W = lam[:, None] * mkt.U
    V = W.max(axis=0)
    ties = (W >= V * (1 - tau)) & (W > 0) & mkt.pos[None, :]
    adj: dict[int, list[tuple[int, int]]] = {i: [] for i in range(mkt.n)}
    for s in np.flatnonzero(ties.sum(axis=0) >= 2):
        members = np.flatnonzero(ties[:, s])
        for a in members:
            for b in members:
                if a != b:
                    adj[int(a)].append((int(b), int(s)))
    log_lam = np.full(mkt.n, -np.inf)
    pos_lam = lam > 0
    log_lam[pos_lam] = np.log(lam[pos_lam])
    comp = np.full(mkt.n, -1)
    for root in np.argsort(-lam, kind="stable"):
        if comp[root] >= 0 or lam[root] <= 0:
            continue
        comp[root] = root
        queue = [int(root)]
        while queue:
            a = queue.pop(0)
            for b, s in adj[a]:
                if comp[b] < 0 and lam[b] > 0:
                    comp[b] = root
                    log_lam[b] = log_lam[a] + math.log(mkt.U[a, s]) - math.log(mkt.U[b, s])
                    queue.append(b)
    out = np.where(np.isfinite(log_lam), np.exp(log_lam - np.max(log_lam[np.isfinite(log_lam)])), 0.0)
    return out / out.sum(), comp


def _rescale(mkt: _Market, lam: np.ndarray, comp: np.ndarray) -> np.ndarray:
    """Scale each tie component so its value share equals its budget share.

    With y_D the value share of component D, budgets read y = A y for a
    column-stochastic A, so y is a stationary vector of A.
    """
    labels = np.unique(comp[comp >= 0])
    if labels.size < 2:
        return lam
    W = lam[:, None] * mkt.U
    V, owner = W.max(axis=0), W.argmax(axis=0)
    good_comp = np.where(mkt.pos, comp[owner], -1)
    mass = mkt.pv * V
    dens = np.divide(V, mkt.xv, out=np.zeros_like(V), where=mkt.pos)
    k = labels.size
    M = np.array([mass[good_comp == c].sum() for c in labels])
    if np.any(M <= 0):
        return lam
    N = np.zeros((k, k))
    for ci, c in enumerate(labels):
        xi_c = mkt.xi_mass[comp == c].sum(axis=0)
        for di, dl in enumerate(labels):
            sel = good_comp == dl
            N[ci, di] = float(np.dot(dens[sel], xi_c[sel]))
    A = N / M[None, :]
    lhs = np.vstack([A - np.eye(k), np.ones((1, k))])
    rhs = np.concatenate([np.zeros(k), [1.0]])
    y = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    if np.any(y <= 0):
        return lam
    scale = y / M
    out = lam.copy()
    for ci, c in enumerate(labels):
        out[comp == c] *= scale[ci]
    return out / out.sum()


def _split(mkt: _Market, lam: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, float]:
    """Share tied goods so that the value shares match ``target`` as closely as possible."""
    W = lam[:, None] * mkt.U
    V, owner = W.max(axis=0), W.argmax(axis=0)
    k = mkt.xv.size
    split = np.zeros((mkt.n, k))
    split[owner, np.arange(k)] = 1.0
    mass = mkt.pv * V
    total = mass.sum()
    ties = (W >= V * (1 - 1e-11)) & (W > 0) & mkt.pos[None, :]
    tied_goods = np.flatnonzero(ties.sum(axis=0) >= 2)
    fixed = split.copy()
    fixed[:, tied_goods] = 0.0
    base = (fixed @ mass) / total
    if tied_goods.size == 0:
        return split, float(np.abs(base - target).sum())
    pairs = [(int(i), int(s)) for s in tied_goods for i in np.flatnonzero(ties[:, s])]
    nv = len(pairs)
    n = mkt.n
    # variables: pi for each pair, then e_plus, e_minus per agent
    c = np.concatenate([np.zeros(nv), np.ones(2 * n)])
    A_eq = np.zeros((tied_goods.size + n, nv + 2 * n))
    b_eq = np.zeros(tied_goods.size + n)
    good_row = {int(s): r for r, s in enumerate(tied_goods)}
    for v, (i, s) in enumerate(pairs):
        A_eq[good_row[s], v] = 1.0
        A_eq[tied_goods.size + i, v] = mass[s] / total
    b_eq[: tied_goods.size] = 1.0
    for i in range(n):
        A_eq[tied_goods.size + i, nv + i] = -1.0
        A_eq[tied_goods.size + i, nv + n + i] = 1.0
        b_eq[tied_goods.size + i] = target[i] - base[i]
    sol = linprog(c, A_eq=A_eq, b_eq=b_eq, bounds=[(0, 1)] * nv + [(0, None)] * (2 * n), method="highs")
    if sol.status != 0:
        return split, float(np.abs(base + 0 - target).sum())
    pi = np.clip(sol.x[:nv], 0.0, 1.0)
    split[:, tied_goods] = 0.0
    for v, (i, s) in enumerate(pairs):
        split[i, s] = pi[v]
    split[:, tied_goods] /= split[:, tied_goods].sum(axis=0, keepdims=True)
    return split, float(np.abs((split @ mass) / total - target).sum())


def _polish(mkt: _Market, lam: np.ndarray, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    lam = _fisher_weights(mkt, theta, lam)
    best = None
    for tau in (1e-10, 1e-8, 1e-6, 1e-4):
        snapped, comp = _snap(mkt, lam, tau)
        snapped = _rescale(mkt, snapped, comp)
        split, resid = _split(mkt, snapped, mkt.g(snapped))
        if best is None or resid < best[2]:
            best = (snapped, split, resid)
    return best


def audit_crossings(agents: Sequence[Agent], hi: float, points: int = 2001) -> list[str]:
    """Warn where two agents' utilities are proportional on a stretch of values."""
    xs = np.linspace(0.0, hi, points)[1:]
    warnings = []
    logs = []
    for a in agents:
        with np.errstate(divide="ignore"):
            logs.append(np.log(np.asarray(a.utility(xs))))
    for i in range(len(agents)):
        for j in range(i + 1, len(agents)):
            diff = logs[i] - logs[j]
            flat = np.abs(np.diff(diff)) <= 1e-13 * np.maximum(1.0, np.abs(diff[1:]))
            if np.any(flat & np.isfinite(diff[1:])):
                warnings.append(f"agents {i} and {j}: weighted utilities coincide on an interval; ties are split by linear programming")
    return warnings


def fixed_point_search(
    agents: Sequence[Agent],
    X: RandomVariable,
    theta=None,
    endowments: Allocation | None = None,
    max_iters: int = 500,
    tol: float = 1e-6,
    restarts: int = 10,
    damping: float = 0.5,
    certify: bool = True,
    seed: int = 0,
) -> FixedPointResult:
    agents = list(agents)
    n = len(agents)
    if not all(a.is_eu and a.risk_seeking for a in agents):
        raise ValidationError("fixed_point_search needs risk-seeking EU agents")
    if (theta is None) == (endowments is None):
        raise ValidationError("give exactly one of theta or endowments")
    if theta is not None:
        endowments = proportional_endowments(X, theta)
        theta = np.asarray(theta, dtype=float)
    X, endowments = _check_endowments(X, endowments)
    if endowments.n != n:
        raise ValidationError("one endowment per agent is required")
    if np.all(X.values <= 0):
        raise DomainError("X vanishes everywhere; no price can be formed")
    mkt = _Market(agents, X, endowments, theta)
    notes = audit_crossings(agents, float(X.values.max())) if n > 1 else []
    history: list[float] = []

    def resid_argmax(lam):
        return float(np.abs(mkt.f(lam) - mkt.g(lam)).sum())

    if n == 1:
        lam, split, resid = np.ones(1), np.ones((1, mkt.xv.size)), 0.0
    else:
        # coarse phase: damped multiplicative iteration from several simplex points
        starts = [np.full(n, 1.0 / n)]
        rng = np.random.default_rng(seed)
        starts += [rng.dirichlet(np.ones(n)) for _ in range(restarts)]
        best_lam, best_r = starts[0], math.inf
        for lam in starts:
            lam = np.maximum(lam, 1e-6)
            lam /= lam.sum()
            for _ in range(max_iters // max(1, restarts)):
                f, g = mkt.f(lam), mkt.g(lam)
                r = float(np.abs(f - g).sum())
                if r < best_r:
                    best_lam, best_r = lam.copy(), r
                if r <= tol:
                    break
                step = np.clip((g + 1e-12) / (f + 1e-12), 1e-3, 1e3) ** damping
                lam = lam * step
                lam /= lam.sum()
            history.append(best_r)
        # polish: exact market-clearing weights for the current budget shares
        target = mkt.g(best_lam)
        lam = best_lam
        best = None
        for _ in range(max(1, max_iters // 5)):
            lam, split, resid = _polish(mkt, lam, target)
            history.append(resid)
            if best is None or resid < best[2]:
                best = (lam, split, resid)
            if resid <= tol * 1e-3 or theta is not None:
                break
            target = (1 - damping) * target + damping * mkt.g(lam)
            target = np.clip(target, 0.0, None)
            target /= target.sum()
        lam, split, resid = best
    # realise the shares with one uniform device per atom
    atom_split = split[:, mkt.inverse]
    atom_split[:, X.values <= 0] = 0.0
    atom_split[0, X.values <= 0] = 1.0
    atom_split[atom_split < 1e-14] = 0.0
    atom_split /= atom_split.sum(axis=0, keepdims=True)
    cuts = np.concatenate([np.zeros((X.space.size, 1)), np.cumsum(atom_split.T, axis=1)], axis=1)
    # agents after the last positive share must get an empty interval, not float residue
    last = n - np.argmax(atom_split[::-1] > 0, axis=0)
    cuts[np.arange(n + 1)[None, :] >= last[:, None]] = 1.0
    cuts = np.minimum(cuts, 1.0)
    ext, part = extend_with_uniform_cuts(X.space, cuts)
    alloc = part.jackpot(X)
    base_price = price_from_lambda(lam, agents, X)
    status = "certified" if resid <= tol else "best_effort"
    if status == "best_effort":
        notes.append(f"residual {resid:.3e} exceeds tolerance {tol:.1e}; no equilibrium certified")
    res = FixedPointResult(
        alloc,
        base_price.lift(ext),
        endowments.lift(ext),
        base_price,
        mkt.g(lam),
        "fixed_point",
        notes,
        lam=lam,
        residual=resid,
        status=status,
        history=history,
        split=split,
    )
    if certify and status == "certified":
        _finish(res, agents, True, seed)
    return res


# ---------------------------------------------------------------------------
# two-point mixed economy
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class TwoPointEquilibrium:
    a: float
    b: float
    p: float
    S_agents: list[Agent]
    T_agents: list[Agent]
    a_shares: np.ndarray
    L: float
    R: float
    necessary_lhs: float
    notes: list[str] = field(default_factory=list)

    @property
    def interval(self) -> tuple[float, float] | None:
        """Admissible price ratios alpha/beta, or None when empty."""
        return (self.R, self.L) if self.L >= self.R else None

    @property
    def necessary_holds(self) -> bool:
        return self.necessary_lhs >= self.R

    @property
    def agents(self) -> list[Agent]:
        return self.S_agents + self.T_agents

    def build(self, ratio: float) -> tuple[Allocation, PriceMeasure, Allocation]:
        """Allocation, price with density ratio alpha/beta = ``ratio``, endowments (= allocation)."""
        if ratio <= 0:
            raise ValidationError("price ratio must be positive")
        s, t = len(self.S_agents), len(self.T_agents)
        space = FiniteProbSpace.from_probs([self.p, 1 - self.p], ["a", "b"])
        cuts = np.zeros((2, s + 1))
        cuts[0, 1:] = 1.0
        cuts[1] = np.linspace(0.0, 1.0, s + 1)
        ext, part = extend_with_uniform_cuts(space, cuts)
        at_a = ext.parent_index == 0
        X = np.where(at_a, self.a, self.b)
        comps = np.zeros((s + t, ext.size))
        ind = part.indicators()
        for j in range(s):
            comps[j] = np.where(at_a, 0.0, self.b * ind[j])
        for i in range(t):
            comps[s + i] = np.where(at_a, self.a_shares[i], 0.0)
        alloc = Allocation(ext, comps, X)
        beta = 1.0 / (self.p * ratio + 1 - self.p)
        price = PriceMeasure(ext, np.where(at_a, ratio * beta, beta))
        return alloc, price, alloc


def two_point_mixed_equilibrium(a: float, b: float, p: float, S_agents: Sequence[Agent], T_agents: Sequence[Agent]) -> TwoPointEquilibrium:
    """X = a with probability p and b otherwise; risk seekers S, risk averters T."""
    if not 0 < a < b:
        raise ValidationError("need 0 < a < b")
    if not 0 < p < 1:
        raise ValidationError("p must lie in (0, 1)")
    S_agents, T_agents = list(S_agents), list(T_agents)
    if not S_agents or not T_agents:
        raise ValidationError("both groups must be nonempty")
    if not all(g.is_eu and g.utility.attitude in ("strictly_convex", "convex") for g in S_agents):
        raise ValidationError("S agents must be convex EU")
    if not all(g.is_eu and g.utility.attitude in ("strictly_concave", "concave") for g in T_agents):
        raise ValidationError("T agents must be concave EU")
    shares, _ = water_fill(np.ones(len(T_agents)), T_agents, [a])
    a_i = shares[:, 0]
    L = min(float(g.utility.derivative(a_i[i], "left")) / float(g.utility.derivative(0.0, "right")) for i, g in enumerate(T_agents))
    R = max(b * float(g.utility(a)) / (a * float(g.utility(b))) for g in S_agents)
    t = len(T_agents)
    lhs = max(float(g.utility.derivative(a / t, "left")) / float(g.utility.derivative(0.0, "right")) for g in T_agents)
    res = TwoPointEquilibrium(a, b, p, S_agents, T_agents, a_i, L, R, lhs)
    if L < R:
        res.notes.append(
            f"empty price interval: L = {L:.6g} < R = {R:.6g}; necessary bound {lhs:.6g} "
            + ("holds" if lhs >= R else "fails, so no equilibrium with both groups active exists")
        )
    return res


# ---------------------------------------------------------------------------
# homogeneous RDU agents with a constant total
# ---------------------------------------------------------------------------


def rdu_constant_equilibrium(agent: Agent, x: float, endowments: Allocation, certify: bool = True, grid_size: int = 10001) -> EquilibriumResult:
    """Lottery over a constant x at the physical price, when endowments are small."""
    if x <= 0:
        raise DomainError("x must be positive")
    X = RandomVariable.constant(endowments.space, x)
    X, endowments = _check_endowments(X, endowments)
    n = endowments.n
    x0, slope = agent.utility.linear_part()
    if x > x0 * (1 + 1e-12) or slope <= 0:
        raise DomainError(f"x = {x} lies outside the linear range [0, {x0}] of u")
    env = concave_envelope(agent.weighting, grid_size)
    notes = []
    if n > 1 and 1.0 / n > env.beta + 1e-6:
        notes.append(f"weighting departs from its concave envelope before 1/n (beta_w = {env.beta:.6g} < 1/{n})")
    means = endowments.components @ endowments.space.probs
    if n > 1 and np.any(means > x * env.beta * (1 + 1e-12)):
        worst = int(np.argmax(means))
        raise EquilibriumRefused(
            f"agent {worst} holds E[xi] = {means[worst]:.6g} > x * beta_w = {x * env.beta:.6g}; "
            "no equilibrium construction is known for endowments this large"
        )
    price = PriceMeasure.physical(X.space)
    theta = means / x
    theta = np.clip(theta, 0.0, None)
    theta /= theta.sum()
    if n == 1:
        res = EquilibriumResult(endowments, price, endowments, price, theta, "rdu_constant", notes)
        return _finish(res, [agent], certify)
    ext, part = extend_with_independent_categorical(X.space, theta)
    alloc = part.jackpot(X)
    res = EquilibriumResult(alloc, price.lift(ext), endowments.lift(ext), price, theta, "rdu_constant", notes)
    return _finish(res, [agent] * n, certify)


def welfare_check(result: EquilibriumResult, agents: Sequence[Agent]) -> tuple[bool, bool]:
    """(Pareto check passes, jackpot structure holds) for a risk-seeking equilibrium."""
    return bool(pareto_check_rs(result.allocation, agents).optimal), bool(jackpot_structure(result.allocation, agents))
