"""Jackpot improvements and lambda-optimal allocations.

Risk seekers share X by handing each state to whoever values it most after
weighting (the pointwise maximum ``v_lambda``).  Risk averters split each
value by equalising weighted marginal utility.  Mixed groups first decide, per
value of X, how much goes to the risk-seeking side.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .preferences import Agent, rdu_utility
from .prob_core import (
    ZERO_TOL,
    Allocation,
    DomainError,
    FiniteProbSpace,
    PartitionVector,
    RandomVariable,
    ValidationError,
    check_dependence,
    convex_order_leq,
    extend_with_uniform_cuts,
)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
LOG_SLACK = 1e-9


# ---------------------------------------------------------------------------
# weights and small helpers
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NegishiWeights:
    values: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.size == 0 or np.any(v < 0) or not v.sum() > 0 or np.any(~np.isfinite(v)):
            raise ValidationError("Negishi weights must be nonnegative and not all zero")
        if self.normalized:
            v = v / v.sum()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def as_weights(lam) -> np.ndarray:
    if isinstance(lam, NegishiWeights):
        return lam.values
    return NegishiWeights(lam).values


def simplex_grid(n: int, points: int) -> list[np.ndarray]:
    """Points of the simplex with coordinates in multiples of 1/(points - 1)."""
    if n == 1:
        return [np.ones(1)]
    steps = points - 1
    out = []
    for head in itertools.product(range(steps + 1), repeat=n - 1):
        if sum(head) <= steps:
            out.append(np.array([*head, steps - sum(head)], dtype=float) / steps)
    return out


def agent_utilities(agents: Sequence[Agent], alloc: Allocation) -> np.ndarray:
    if alloc.n != len(agents):
        raise ValidationError("one agent per allocation component is required")
    return np.array([rdu_utility(ag, alloc.component(i)) for i, ag in enumerate(agents)])


def _nonnegative_total(X: RandomVariable) -> None:
    if np.any(X.values < -ZERO_TOL):
        raise DomainError("total payoff must be nonnegative")


# ---------------------------------------------------------------------------
# counter-monotonic improvement
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ImprovementResult:
    space: FiniteProbSpace
    allocation: Allocation
    cuts: np.ndarray
    partition: PartitionVector


def counter_monotonic_improve(alloc: Allocation) -> ImprovementResult:
    """Replace each share X_i by a jackpot Y_i with E[Y_i | base state] = X_i."""
    comps = alloc.components
    if np.any(comps < -ZERO_TOL):
        i, s = np.argwhere(comps < -ZERO_TOL)[0]
        raise DomainError(
            f"component {int(i)} is negative at atom {alloc.space.ids[int(s)]}; "
            "the jackpot construction needs shares bounded below by 0 (use shifted_improve)"
        )
    comps = np.maximum(comps, 0.0)
    X = comps.sum(axis=0)
    n = alloc.n
    cuts = np.zeros((alloc.space.size, n + 1))
    pos = X > 0
    cuts[pos, 1:] = np.cumsum(comps[:, pos], axis=0).T / X[pos, None]
    cuts[~pos, 1:] = 1.0  # nobody shares a zero total; agent 0 keeps it
    cuts[:, -1] = 1.0
    cuts = np.minimum(np.maximum.accumulate(cuts, axis=1), 1.0)
    space, part = extend_with_uniform_cuts(alloc.space, cuts)
    total = alloc.total[space.index_into(alloc.space)]
    Y = part.indicators() * total[None, :]
    return ImprovementResult(space, Allocation(space, Y, total), cuts, part)


@dataclass(frozen=True)
class UnextendedSearch:
    owner_maps: int
    feasible: list[np.ndarray]

    @property
    def exists(self) -> bool:
        return bool(self.feasible)


def unextended_jackpot_improvements(alloc: Allocation, max_maps: int = 10**6) -> UnextendedSearch:
    """Jackpots X 1_{A_i} on the given atoms (no extra randomisation) that keep
    every mean and dominate every X_i in convex order."""
    n, m = alloc.n, alloc.space.size
    if n**m > max_maps:
        raise ValidationError(f"{n}^{m} owner maps exceed the limit of {max_maps}")
    X = alloc.total_rv()
    means = alloc.components @ alloc.space.probs
    p = alloc.space.probs
    feasible = []
    count = 0
    for owner in itertools.product(range(n), repeat=m):
        count += 1
        owner = np.asarray(owner)
        comps = (owner[None, :] == np.arange(n)[:, None]) * X.values[None, :]
        if np.any(np.abs(comps @ p - means) > 1e-12 * max(1.0, float(np.abs(means).max()))):
            continue
        if all(convex_order_leq(alloc.component(i), RandomVariable(alloc.space, comps[i])).holds for i in range(n)):
            feasible.append(owner)
    return UnextendedSearch(count, feasible)


@dataclass(frozen=True, eq=False)
class ShiftedImprovement:
    allocation: Allocation
    shifts: np.ndarray
    direction: str
    improvement: ImprovementResult


def shifted_improve(alloc: Allocation, direction: str | None = None) -> ShiftedImprovement:
    """Improve shares that are bounded below (or above) by shifting them to 0 first."""
    comps = alloc.components
    if direction is None:
        direction = "above" if np.all(comps <= ZERO_TOL) and np.any(comps < -ZERO_TOL) else "below"
    if direction == "below":
        shifts = comps.min(axis=1)
        moved = comps - shifts[:, None]
    elif direction == "above":
        shifts = comps.max(axis=1)
        moved = shifts[:, None] - comps
    else:
        raise ValidationError("direction must be 'below' or 'above'")
    inner = counter_monotonic_improve(Allocation(alloc.space, np.maximum(moved, 0.0)))
    Y = inner.allocation.components
    out = Y + shifts[:, None] if direction == "below" else shifts[:, None] - Y
    total = alloc.total[inner.space.index_into(alloc.space)]
    return ShiftedImprovement(Allocation(inner.space, out, total), shifts, direction, inner)


# ---------------------------------------------------------------------------
# risk seekers
# ---------------------------------------------------------------------------


def v_lambda(lam, agents: Sequence[Agent], x) -> tuple[np.ndarray, np.ndarray]:
    """max_i lam_i u_i(x) and the lowest index attaining it."""
    lam = as_weights(lam)
    x = np.asarray(x, dtype=float)
    if np.any(x < -ZERO_TOL):
        raise DomainError("v_lambda is defined for x >= 0")
    table = np.stack([lam[i] * np.asarray(ag.utility(np.maximum(x, 0.0))) for i, ag in enumerate(agents)])
    return table.max(axis=0), table.argmax(axis=0)


@dataclass(frozen=True, eq=False)
class LambdaOptimum:
    allocation: Allocation
    value: float
    lam: np.ndarray
    partition: PartitionVector | None = None
    split: np.ndarray | None = None
    notes: list[str] = field(default_factory=list)

    def __iter__(self):
        yield self.allocation
        yield self.value


def _require(agents: Sequence[Agent], idx: Sequence[int], check, what: str, hint: str) -> None:
    bad = [i for i in idx if not check(agents[i])]
    if bad:
        raise ValidationError(f"agent(s) {bad} are not {what}; {hint}")


def rs_lambda_optimal(lam, agents: Sequence[Agent], X: RandomVariable) -> LambdaOptimum:
    lam = as_weights(lam)
    _require(agents, range(len(agents)), lambda a: a.risk_seeking, "risk-seeking EU agents", "use mixed_lambda_optimal")
    if lam.size != len(agents):
        raise ValidationError("one weight per agent is required")
    _nonnegative_total(X)
    values, owner = v_lambda(lam, agents, X.values)
    part = PartitionVector(X.space, owner, len(agents))
    alloc = part.jackpot(X)
    return LambdaOptimum(alloc, float(np.dot(X.space.probs, values)), lam, part)


# ---------------------------------------------------------------------------
# risk averters
# ---------------------------------------------------------------------------


def water_fill(lam, agents: Sequence[Agent], x) -> tuple[np.ndarray, np.ndarray]:
    """Split each amount in ``x`` to maximise sum_i lam_i u_i(share_i).

    Returns shares of shape (n, len(x)) and the weighted value per amount.
    """
    lam = as_weights(lam)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = len(agents)
    shares = np.zeros((n, x.size))
    active = [i for i in range(n) if lam[i] > 0]
    pos = x > 0
    if not active or not np.any(pos):
        return shares, np.zeros(x.size)
    xp = x[pos]
    if len(active) == 1:
        shares[active[0], pos] = xp
    elif all(lam[i] == lam[active[0]] and agents[i].utility.to_dict() == agents[active[0]].utility.to_dict() for i in active):
        # identical concave agents: the even split equalises marginals
        shares[np.ix_(active, np.flatnonzero(pos))] = xp[None, :] / len(active)
    else:
        with np.errstate(divide="ignore", over="ignore"):
            top = np.max([lam[i] * np.asarray(agents[i].utility.derivative(np.zeros_like(xp), "right")) for i in active], axis=0)
            bottom = np.min([lam[i] * np.asarray(agents[i].utility.derivative(xp, "left")) for i in active], axis=0)
        lo = np.log(np.clip(bottom, 1e-300, 1e300))
        hi = np.log(np.clip(top, 1e-300, 1e300))
        hi = np.maximum(hi, lo)

        def demand(log_mu: np.ndarray) -> np.ndarray:
            mu = np.exp(log_mu)
            return np.stack([agents[i].utility.inverse_derivative(mu / lam[i], xp) for i in active])

        for _ in range(400):
            mid = 0.5 * (lo + hi)
            over = demand(mid).sum(axis=0) >= xp
            lo = np.where(over, mid, lo)
            hi = np.where(over, hi, mid)
            if np.all(hi - lo <= 1e-15):
                break
        rich = demand(lo)
        poor = demand(hi)
        gap = rich.sum(axis=0) - poor.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            weight = np.where(gap > 0, (xp - poor.sum(axis=0)) / gap, 0.0)
        weight = np.clip(weight, 0.0, 1.0)
        part = poor + weight[None, :] * (rich - poor)
        # put float residue on the largest share so rows sum to x exactly
        resid = xp - part.sum(axis=0)
        k = np.argmax(part, axis=0)
        part[k, np.arange(xp.size)] += resid
        shares[np.ix_(active, np.flatnonzero(pos))] = np.maximum(part, 0.0)
    value = np.sum([lam[i] * np.asarray(agents[i].utility(shares[i])) for i in range(n)], axis=0)
    return shares, value


def ra_lambda_optimal(lam, agents: Sequence[Agent], X: RandomVariable) -> LambdaOptimum:
    lam = as_weights(lam)
    _require(agents, range(len(agents)), lambda a: a.risk_averse, "risk-averse EU agents", "use mixed_lambda_optimal")
    _nonnegative_total(X)
    xs, inverse = np.unique(X.values, return_inverse=True)
    shares, value = water_fill(lam, agents, xs)
    comps = shares[:, inverse]
    alloc = Allocation(X.space, comps, X.values)
    return LambdaOptimum(alloc, float(np.dot(X.space.probs, value[inverse])), lam)


# ---------------------------------------------------------------------------
# mixed groups
# ---------------------------------------------------------------------------


def _group_value(lam, agents, S, T):
    lam_s = np.asarray([lam[i] for i in S])
    lam_t = np.asarray([lam[i] for i in T])
    s_agents = [agents[i] for i in S]
    t_agents = [agents[i] for i in T]

    def ws(y: np.ndarray) -> np.ndarray:
        if lam_s.sum() == 0:
            return np.zeros_like(y)
        return np.max([lam_s[k] * np.asarray(a.utility(y)) for k, a in enumerate(s_agents)], axis=0)

    def wt(z: np.ndarray) -> np.ndarray:
        if lam_t.sum() == 0:
            return np.zeros_like(z)
        return water_fill(lam_t, t_agents, z.reshape(-1))[1].reshape(z.shape)

    return ws, wt


def optimal_split(lam, S, T, agents, xs, outer_grid: int = 2048, refine_iters: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Best amount y*(x) for the risk-seeking side, per value in ``xs``."""
    ws, wt = _group_value(lam, agents, S, T)
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    best_y = np.zeros(xs.size)
    best_f = np.zeros(xs.size)
    frac = np.arange(outer_grid + 1) / outer_grid
    block = max(1, 2**20 // (outer_grid + 1))
    for start in range(0, xs.size, block):
        x = xs[start : start + block]
        y = x[:, None] * frac[None, :]
        f = ws(y) + wt(np.maximum(x[:, None] - y, 0.0))
        j = np.argmax(f, axis=1)
        rows = np.arange(x.size)
        gy, gf = y[rows, j], f[rows, j]
        a = x * frac[np.maximum(j - 1, 0)]
        b = x * frac[np.minimum(j + 1, outer_grid)]

        def obj(t: np.ndarray) -> np.ndarray:
            return ws(t) + wt(np.maximum(x - t, 0.0))

        c = b - GOLDEN * (b - a)
        d = a + GOLDEN * (b - a)
        fc, fd = obj(c), obj(d)
        for _ in range(refine_iters):
            left = fc >= fd  # the maximum lies in [a, d]
            a = np.where(left, a, c)
            b = np.where(left, d, b)
            keep = np.where(left, c, d)
            fkeep = np.where(left, fc, fd)
            fresh = np.where(left, b - GOLDEN * (b - a), a + GOLDEN * (b - a))
            ffresh = obj(fresh)
            c = np.where(left, fresh, keep)
            d = np.where(left, keep, fresh)
            fc = np.where(left, ffresh, fkeep)
            fd = np.where(left, fkeep, ffresh)
        ry = np.where(fc >= fd, c, d)
        rf = np.maximum(fc, fd)
        better = rf > gf
        best_y[start : start + block] = np.where(better, ry, gy)
        best_f[start : start + block] = np.where(better, rf, gf)
    return best_y, best_f


def _check_groups(agents, S, T) -> tuple[list[int], list[int]]:
    S, T = list(S), list(T)
    if not S or not T:
        raise ValidationError("both groups must be nonempty; use rs_lambda_optimal or ra_lambda_optimal")
    if sorted(S + T) != list(range(len(agents))):
        raise ValidationError("S and T must partition the agents")
    _require(agents, S, lambda a: a.risk_seeking, "risk seeking", "move them to T")
    _require(agents, T, lambda a: a.risk_averse, "risk averse", "move them to S")
    return S, T


def mixed_lambda_optimal(
    lam, S: Sequence[int], T: Sequence[int], agents: Sequence[Agent], X: RandomVariable, outer_grid: int = 2048, refine_iters: int = 60
) -> LambdaOptimum:
    lam = as_weights(lam)
    S, T = _check_groups(agents, S, T)
    _nonnegative_total(X)
    xs, inverse = np.unique(X.values, return_inverse=True)
    y, f = optimal_split(lam, S, T, agents, xs, outer_grid, refine_iters)
    n = len(agents)
    comps = np.zeros((n, xs.size))
    lam_s = [lam[i] for i in S]
    _, winner = v_lambda(lam_s, [agents[i] for i in S], y)
    for k, i in enumerate(S):
        comps[i] = np.where(winner == k, y, 0.0)
    t_shares, _ = water_fill([lam[i] for i in T], [agents[i] for i in T], np.maximum(xs - y, 0.0))
    for k, i in enumerate(T):
        comps[i] = t_shares[k]
    alloc = Allocation(X.space, comps[:, inverse], X.values)
    return LambdaOptimum(alloc, float(np.dot(X.space.probs, f[inverse])), lam, split=y[inverse])


def split_threshold(lam, S, T, agents, lo: float, hi: float, tol: float = 1e-12, outer_grid: int = 2048) -> float:
    """Value of X where the optimal split switches from the T side to the S side."""
    S, T = _check_groups(agents, S, T)

    def to_s(xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        y, _ = optimal_split(as_weights(lam), S, T, agents, xs, outer_grid)
        return y > 0.5 * xs

    ends = to_s([lo, hi])
    if ends[0] or not ends[1]:
        raise ValidationError("the split does not switch from T to S inside [lo, hi]")
    # one vectorized call shrinks the bracket 16-fold
    while hi - lo > tol:
        xs = np.linspace(lo, hi, 17)[1:-1]
        flags = to_s(xs)
        k = int(np.argmax(flags)) if flags.any() else xs.size
        if k < xs.size:
            hi = float(xs[k])
        if k > 0:
            lo = float(xs[k - 1])
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Pareto check for risk seekers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParetoVerdict:
    optimal: bool
    reason: str
    witness_lambda: np.ndarray | None = None
    violation: tuple | None = None


def pareto_check_rs(alloc: Allocation, agents: Sequence[Agent]) -> ParetoVerdict:
    """Pareto optimality of an allocation among risk-seeking EU agents.

    Optimal exactly when it is a jackpot and some weights make every winner
    the weighted argmax on the states it wins; the weights solve a system of
    difference constraints in log space.
    """
    _require(agents, range(len(agents)), lambda a: a.risk_seeking, "risk-seeking EU agents", "the check needs risk seekers")
    if alloc.n != len(agents):
        raise ValidationError("one agent per allocation component is required")
    jp = check_dependence(alloc, "jackpot")
    if not jp.holds:
        return ParetoVerdict(False, "not a jackpot allocation", violation=jp.witness)
    n = alloc.n
    X = alloc.total
    live = X > ZERO_TOL
    owner = np.argmax(alloc.components > ZERO_TOL, axis=0)
    utils = np.stack([np.asarray(ag.utility(np.maximum(X, 0.0))) for ag in agents])
    bound = np.full((n, n), -np.inf)  # bound[i, j]: need log l_i - log l_j >= bound
    where = {}
    with np.errstate(divide="ignore"):
        logs = np.log(utils)
    for s in np.flatnonzero(live):
        i = owner[s]
        if utils[i, s] <= 0:
            continue
        for j in range(n):
            if j == i or utils[j, s] <= 0:
                continue
            c = logs[j, s] - logs[i, s]
            if c > bound[i, j]:
                bound[i, j] = c
                where[(i, j)] = alloc.space.ids[s]
    # Bellman-Ford: d_j <= d_i - bound[i, j] + slack, virtual source at 0
    dist = np.zeros(n)
    pred = np.full(n, -1)
    edges = [(i, j, -bound[i, j] + LOG_SLACK) for i in range(n) for j in range(n) if np.isfinite(bound[i, j])]
    relaxed = -1
    for _ in range(n + 1):
        relaxed = -1
        for i, j, w in edges:
            if dist[i] + w < dist[j] - 1e-15:
                dist[j] = dist[i] + w
                pred[j] = i
                relaxed = j
        if relaxed < 0:
            break
    if relaxed >= 0:
        v = relaxed
        for _ in range(n):
            v = pred[v]
        cycle = [v]
        u = pred[v]
        while u != v:
            cycle.append(u)
            u = pred[u]
        cycle = cycle[::-1]
        atoms = tuple(where.get((cycle[k], cycle[(k + 1) % len(cycle)])) for k in range(len(cycle)))
        return ParetoVerdict(False, "no Negishi weights support the winners", violation=(tuple(int(c) for c in cycle), atoms))
    lam = np.exp(dist - dist.max())
    return ParetoVerdict(True, "jackpot with supporting weights", lam / lam.sum())


# ---------------------------------------------------------------------------
# utility possibility frontier
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UpfPoint:
    lam: np.ndarray
    utilities: np.ndarray
    solver: str


def lambda_optimal(lam, agents: Sequence[Agent], X: RandomVariable, outer_grid: int = 2048) -> tuple[LambdaOptimum, str]:
    if all(a.risk_seeking for a in agents):
        return rs_lambda_optimal(lam, agents, X), "rs"
    if all(a.risk_averse for a in agents):
        return ra_lambda_optimal(lam, agents, X), "ra"
    S = [i for i, a in enumerate(agents) if a.risk_seeking and not a.risk_averse]
    T = [i for i in range(len(agents)) if i not in S]
    return mixed_lambda_optimal(lam, S, T, agents, X, outer_grid=outer_grid), "mixed"


def upf_trace(agents: Sequence[Agent], X: RandomVariable, lam_grid) -> list[UpfPoint]:
    if isinstance(lam_grid, int):
        lam_grid = simplex_grid(len(agents), lam_grid)
    out = []
    for lam in lam_grid:
        opt, solver = lambda_optimal(lam, agents, X)
        out.append(UpfPoint(np.asarray(opt.lam), agent_utilities(agents, opt.allocation), solver))
    return out


def individually_rational(trace: Sequence[UpfPoint], endowment_utilities, tol: float = 1e-12) -> list[UpfPoint]:
    ref = np.asarray(endowment_utilities, dtype=float)
    return [pt for pt in trace if np.all(pt.utilities >= ref - tol)]
