"""Brute-force reference solvers.

Everything here is deliberately naive: exhaustive grids, full enumeration of
owner maps and of polytope vertices.  Engine results are checked against
these at desk scale, never the other way round.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .preferences import Agent, rdu_utility
from .prob_core import FiniteProbSpace, PriceMeasure, RandomVariable, ValidationError, refine_uniformly

COMBINATION_BUDGET = 10**7
VERTEX_ATOM_CAP = 18


class BudgetExceeded(ValidationError):
    """The requested enumeration is larger than the oracle is allowed to run."""


@dataclass
class OracleReport:
    method: str
    resolution: float
    best_value: float
    best_witness: Any = None
    gap: float | None = None
    details: dict[str, Any] = field(default_factory=dict)

    def compare(self, engine_value: float) -> OracleReport:
        """Record engine minus oracle; negative beyond resolution is a defect."""
        self.gap = float(engine_value - self.best_value)
        return self

    @property
    def engine_defect(self) -> bool:
        return self.gap is not None and self.gap < -self.resolution - 1e-12


def _grid_compositions(n: int, levels: int) -> np.ndarray:
    """All (k_1..k_{n-1}) with sum <= levels - 1, as fractions plus remainder."""
    if n == 1:
        return np.ones((1, 1))
    steps = levels - 1
    rows = [k for k in itertools.product(range(levels), repeat=n - 1) if sum(k) <= steps]
    head = np.asarray(rows, dtype=float) / steps
    tail = 1.0 - head.sum(axis=1, keepdims=True)
    return np.hstack([head, np.maximum(tail, 0.0)])


def _n_compositions(n: int, levels: int) -> int:
    return math.comb(levels - 1 + n - 1, n - 1)


def _modulus(u, hi: float, h: float) -> float:
    """max over z in [0, hi - h] of u(z + h) - u(z), sampled with endpoints."""
    if h <= 0 or hi <= 0:
        return 0.0
    z = np.linspace(0.0, max(hi - h, 0.0), 513)
    return float(np.max(np.asarray(u(z + h)) - np.asarray(u(z))))


def brute_force_weighted_max(lam: Sequence[float], agents: Sequence[Agent], X: RandomVariable, per_atom_grid: int = 51) -> OracleReport:
    """Exhaustive grid search for max sum_i lam_i E[u_i(X_i)] over allocations of X."""
    lam = np.asarray(lam, dtype=float)
    n = len(agents)
    if lam.size != n:
        raise ValidationError("one weight per agent is required")
    if np.any(X.values < 0):
        raise ValidationError("the oracle handles nonnegative totals only")
    per_atom = _n_compositions(n, per_atom_grid)
    total = per_atom * X.space.size
    if total > COMBINATION_BUDGET:
        raise BudgetExceeded(f"{X.space.size} atoms x {per_atom} grid compositions = {total} > {COMBINATION_BUDGET}")
    shares = _grid_compositions(n, per_atom_grid)
    best = np.zeros((n, X.space.size))
    value = 0.0
    resolution = 0.0
    h_frac = 1.0 / (per_atom_grid - 1)
    for s, (x, p) in enumerate(zip(X.values, X.space.probs)):
        amounts = shares * x
        scores = np.zeros(shares.shape[0])
        for i, ag in enumerate(agents):
            scores += lam[i] * np.asarray(ag.utility(amounts[:, i]))
        k = int(np.argmax(scores))
        best[:, s] = amounts[k]
        value += p * scores[k]
        resolution += p * sum(lam[i] * _modulus(agents[i].utility, x, h_frac * x) for i in range(n - 1))
    return OracleReport(
        "brute_force_weighted_max",
        float(resolution),
        float(value),
        best,
        details={"combinations": total, "per_atom_grid": per_atom_grid},
    )


def _eu_matrix(agents: Sequence[Agent], comps: np.ndarray, probs: np.ndarray) -> np.ndarray:
    return np.array([np.dot(probs, ag.utility(comps[i])) for i, ag in enumerate(agents)])


def _utilities(agents: Sequence[Agent], space: FiniteProbSpace, comps: np.ndarray) -> np.ndarray:
    if all(ag.is_eu for ag in agents):
        return _eu_matrix(agents, comps, space.probs)
    return np.array([rdu_utility(ag, RandomVariable(space, comps[i])) for i, ag in enumerate(agents)])


def brute_force_pareto_probe(
    alloc,
    agents: Sequence[Agent],
    per_atom_grid: int = 11,
    samples: int = 2000,
    seed: int = 0,
    split: int = 1,
    tol: float = 1e-12,
) -> OracleReport:
    """Look for an allocation that strictly dominates ``alloc``.

    A hit disproves Pareto optimality; a miss is only consistent with it at
    the searched resolution.  ``split`` refines every atom into equally likely
    children first so that randomized allocations are reachable.
    """
    n = alloc.n
    space = alloc.space if split <= 1 else refine_uniformly(alloc.space, split)
    base = alloc.lift(space)
    X = base.total
    m = space.size
    target = _utilities(agents, space, base.components)
    per_atom = _n_compositions(n, per_atom_grid)
    grid_count = per_atom**m
    jackpot_count = n**m
    eu = all(ag.is_eu for ag in agents)
    use_grid = eu and grid_count <= COMBINATION_BUDGET
    use_jackpots = jackpot_count <= COMBINATION_BUDGET
    if not use_grid and not use_jackpots and samples <= 0:
        raise BudgetExceeded(f"grid {grid_count} and jackpot {jackpot_count} enumerations exceed the budget")
    scale = max(1.0, float(np.max(np.abs(target))))
    best_gain = -np.inf
    best_witness = None
    found = False
    searched = 0

    def consider(utils: np.ndarray, make_witness) -> None:
        nonlocal best_gain, best_witness, found
        gains = utils - target[None, :]
        ok = np.all(gains >= -tol * scale, axis=1) & np.any(gains > tol * scale, axis=1)
        if np.any(ok):
            k = int(np.flatnonzero(ok)[np.argmax(gains[ok].sum(axis=1))])
            if not found or gains[k].sum() > best_gain:
                found = True
                best_gain = float(gains[k].sum())
                best_witness = {"utilities": utils[k].tolist(), "components": make_witness(k)}
        elif not found:
            worst = gains.min(axis=1)
            k = int(np.argmax(worst))
            if worst[k] > best_gain:
                best_gain = float(worst[k])
                best_witness = {"utilities": utils[k].tolist(), "components": make_witness(k)}

    if use_grid:
        shares = _grid_compositions(n, per_atom_grid)
        tables = []
        for s in range(m):
            amounts = shares * X[s]
            tables.append(
                np.stack([space.probs[s] * np.asarray(ag.utility(amounts[:, i])) for i, ag in enumerate(agents)], axis=1)
            )
        idx_iter = itertools.product(range(per_atom), repeat=max(m - 1, 0))
        # fix the first m-1 atoms one combination at a time and vectorize the last
        for prefix in idx_iter:
            partial = sum((tables[s][k] for s, k in enumerate(prefix)), np.zeros(n))
            utils = partial[None, :] + tables[m - 1]
            consider(
                utils,
                lambda k, prefix=prefix: (shares[list(prefix) + [k]] * X[:, None]).T.tolist(),
            )
            searched += per_atom
    if use_jackpots:
        owners = np.array(list(itertools.product(range(n), repeat=m)), dtype=np.int64).reshape(-1, m)
        for start in range(0, owners.shape[0], 100000):
            block = owners[start : start + 100000]
            if eu:
                utils = np.zeros((block.shape[0], n))
                for i, ag in enumerate(agents):
                    per_atom_u = space.probs * np.asarray(ag.utility(X))
                    utils[:, i] = (block == i) @ per_atom_u
            else:
                utils = np.array(
                    [_utilities(agents, space, (row[None, :] == np.arange(n)[:, None]) * X[None, :]) for row in block]
                )
            consider(utils, lambda k, block=block: ((block[k][None, :] == np.arange(n)[:, None]) * X[None, :]).tolist())
            searched += block.shape[0]
    if samples > 0:
        rng = np.random.default_rng(seed)
        draws = rng.dirichlet(np.ones(n), size=(samples, m))
        comps = np.transpose(draws, (0, 2, 1)) * X[None, None, :]
        utils = np.array([_utilities(agents, space, c) for c in comps])
        consider(utils, lambda k: comps[k].tolist())
        searched += samples
    return OracleReport(
        "brute_force_pareto_probe",
        1.0 / (per_atom_grid - 1),
        float(best_gain),
        best_witness,
        details={"dominator_found": found, "candidates": searched, "split": split},
    )


def _set_partitions(m: int, max_blocks: int):
    """Restricted growth strings of length m using at most max_blocks labels."""
    a = [0] * m

    def rec(k: int, used: int):
        if k == m:
            yield tuple(a)
            return
        for label in range(min(used + 1, max_blocks)):
            a[k] = label
            yield from rec(k + 1, max(used, label + 1))

    yield from rec(0, 0)


def enumerate_jackpot_partitions(
    space: FiniteProbSpace, n: int, agents: Sequence[Agent], X: RandomVariable, symmetric: bool | None = None
) -> OracleReport:
    """Best total RDU utility over all winner-take-all owner maps of X."""
    X = X.lift(space)
    m = space.size
    if len(agents) != n:
        raise ValidationError("one agent per index is required")
    if symmetric is None:
        first = agents[0].to_dict()
        symmetric = all(ag.to_dict() | {"name": ""} == first | {"name": ""} for ag in agents)
    if not symmetric and n**m > COMBINATION_BUDGET:
        raise BudgetExceeded(f"{n}^{m} owner maps exceed {COMBINATION_BUDGET}")
    if m > 22:
        raise BudgetExceeded("subset tables are limited to 22 atoms")
    masks = np.arange(2**m)
    bits = (masks[:, None] >> np.arange(m)[None, :]) & 1
    table = np.zeros((n, masks.size))
    for i, ag in enumerate(agents):
        if i > 0 and symmetric:
            table[i] = table[0]
            continue
        for k in range(masks.size):
            table[i, k] = rdu_utility(ag, RandomVariable(space, bits[k] * X.values))
    weights = 1 << np.arange(m)
    best = -np.inf
    best_owner = None
    count = 0
    if symmetric:
        source = _set_partitions(m, n)
    else:
        source = itertools.product(range(n), repeat=m)
    chunk: list[tuple[int, ...]] = []

    def flush() -> None:
        nonlocal best, best_owner, count
        owners = np.asarray(chunk, dtype=np.int64).reshape(-1, m)
        totals = np.zeros(owners.shape[0])
        for i in range(n):
            totals += table[i, (owners == i) @ weights]
        k = int(np.argmax(totals))
        if totals[k] > best:
            best = float(totals[k])
            best_owner = tuple(int(v) for v in owners[k])
        count += owners.shape[0]
        chunk.clear()

    for owner in source:
        chunk.append(owner)
        if len(chunk) >= 65536:
            flush()
    if chunk:
        flush()
    return OracleReport(
        "enumerate_jackpot_partitions",
        0.0,
        best,
        best_owner,
        details={"owner_maps": count, "symmetric": bool(symmetric)},
    )


def vertex_individual_opt(agent: Agent, X: RandomVariable, price: PriceMeasure, budget: float) -> OracleReport:
    """Exact optimum of max E[u(Y)] s.t. 0 <= Y <= X, E^Q[Y] <= budget for convex u.

    A convex objective over this polytope peaks at a vertex: every atom at 0 or
    X_s except at most one atom that absorbs the remaining budget.
    """
    if not agent.is_eu or agent.utility.attitude not in ("strictly_convex", "convex", "linear"):
        raise ValidationError("vertex enumeration is exact only for convex EU agents")
    price = price.lift(X.space) if not price.space.same_as(X.space) else price
    x = X.values
    p = X.space.probs
    live = x > 0
    free = live & (price.density <= 0)
    priced = np.flatnonzero(live & ~free)
    if priced.size > VERTEX_ATOM_CAP:
        raise BudgetExceeded(f"{priced.size} priced atoms exceed the vertex cap of {VERTEX_ATOM_CAP}")
    budget = max(float(budget), 0.0)
    gain = p * np.asarray(agent.utility(x))
    base_value = float(gain[free].sum())
    cost = p[priced] * price.density[priced] * x[priced]
    value = gain[priced]
    k = priced.size
    masks = np.arange(2**k)
    bits = ((masks[:, None] >> np.arange(k)[None, :]) & 1).astype(float)
    mask_cost = bits @ cost
    mask_value = bits @ value
    slack = 1e-12 * max(1.0, budget)
    feasible = mask_cost <= budget + slack
    best_value = -np.inf
    best_mask, best_frac = 0, None
    if np.any(feasible):
        j = int(np.flatnonzero(feasible)[np.argmax(mask_value[feasible])])
        best_value, best_mask = float(mask_value[j]), j
    for f in range(k):
        cand = feasible & (bits[:, f] == 0) & (mask_cost + cost[f] > budget + slack)
        if not np.any(cand):
            continue
        frac = np.clip((budget - mask_cost[cand]) / cost[f], 0.0, 1.0)
        vals = mask_value[cand] + p[priced[f]] * np.asarray(agent.utility(frac * x[priced[f]]))
        j = int(np.argmax(vals))
        if vals[j] > best_value:
            best_value = float(vals[j])
            best_mask = int(np.flatnonzero(cand)[j])
            best_frac = (f, float(frac[j]))
    Y = np.where(free, x, 0.0)
    Y[priced] = bits[best_mask] * x[priced]
    if best_frac is not None:
        f, frac = best_frac
        Y[priced[f]] = frac * x[priced[f]]
    return OracleReport(
        "vertex_individual_opt",
        0.0,
        base_value + best_value,
        Y,
        details={"vertices": int(masks.size * (k + 1)), "priced_atoms": int(k)},
    )
