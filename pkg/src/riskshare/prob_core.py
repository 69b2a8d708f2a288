"""Finite probability spaces, payoffs, allocations and the dependence and
convex-order checks used throughout the engine.

Randomization is never simulated.  When a construction needs an independent
uniform or categorical device, the space is refined by splitting atoms
exactly, and every child remembers its parent so payoffs can be lifted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PROB_TOL = 1e-12
MERGE_TOL = 1e-9
ORDER_TOL = 1e-10
ZERO_TOL = 1e-12


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


class DomainError(ValueError):
    """Raised when a value lies outside the domain an operation supports."""


# ---------------------------------------------------------------------------
# spaces and random variables
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FiniteProbSpace:
    probs: np.ndarray
    ids: tuple[str, ...]
    parent_space: FiniteProbSpace | None = None
    parent_index: np.ndarray | None = None

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1 or probs.size == 0:
            raise ValidationError("a space needs at least one atom")
        if np.any(~np.isfinite(probs)) or np.any(probs <= 0.0):
            raise ValidationError("atom probabilities must be strictly positive")
        if abs(math.fsum(probs) - 1.0) > PROB_TOL:
            raise ValidationError(f"atom probabilities sum to {math.fsum(probs)!r}, not 1")
        if len(self.ids) != probs.size:
            raise ValidationError("one id per atom is required")
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError("atom ids must be unique")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        if (self.parent_space is None) != (self.parent_index is None):
            raise ValidationError("parent space and parent index come together")
        if self.parent_space is not None:
            idx = np.asarray(self.parent_index, dtype=np.int64)
            if idx.shape != probs.shape:
                raise ValidationError("parent map must be total")
            if idx.min() < 0 or idx.max() >= self.parent_space.size:
                raise ValidationError("parent index out of range")
            mass = np.bincount(idx, weights=probs, minlength=self.parent_space.size)
            if np.max(np.abs(mass - self.parent_space.probs)) > PROB_TOL:
                raise ValidationError("children do not carry their parent's probability")
            idx.setflags(write=False)
            object.__setattr__(self, "parent_index", idx)

    @classmethod
    def from_probs(cls, probs: Sequence[float], ids: Sequence[str] | None = None) -> FiniteProbSpace:
        probs = np.asarray(probs, dtype=float)
        if ids is None:
            ids = tuple(f"w{k}" for k in range(probs.size))
        return cls(probs, tuple(str(i) for i in ids))

    @classmethod
    def uniform(cls, m: int) -> FiniteProbSpace:
        if m < 1:
            raise ValidationError("uniform space needs m >= 1")
        return cls.from_probs(np.full(m, 1.0 / m))

    @property
    def size(self) -> int:
        return int(self.probs.size)

    @property
    def parent_map(self) -> dict[str, str] | None:
        if self.parent_space is None:
            return None
        pids = self.parent_space.ids
        return {cid: pids[k] for cid, k in zip(self.ids, self.parent_index)}

    def ancestry(self) -> list[FiniteProbSpace]:
        chain = [self]
        while chain[-1].parent_space is not None:
            chain.append(chain[-1].parent_space)
        return chain

    def same_as(self, other: FiniteProbSpace) -> bool:
        if self is other:
            return True
        return (
            self.ids == other.ids
            and np.array_equal(self.probs, other.probs)
            and (self.parent_space is None) == (other.parent_space is None)
            and (self.parent_space is None or self.parent_space.same_as(other.parent_space))
        )

    def refines(self, coarse: FiniteProbSpace) -> bool:
        return any(s.same_as(coarse) for s in self.ancestry())

    def index_into(self, coarse: FiniteProbSpace) -> np.ndarray:
        """Atom index of ``coarse`` containing each atom of this space."""
        idx = np.arange(self.size)
        space: FiniteProbSpace | None = self
        while space is not None and not space.same_as(coarse):
            if space.parent_space is None:
                raise ValidationError("space is not a refinement of the requested space")
            idx = space.parent_index[idx]
            space = space.parent_space
        return idx


def _check_same(a: FiniteProbSpace, b: FiniteProbSpace) -> None:
    if not a.same_as(b):
        raise ValidationError("operands live on different spaces")


@dataclass(frozen=True, eq=False)
class RandomVariable:
    space: FiniteProbSpace
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.size != self.space.size:
            raise ValidationError(f"expected {self.space.size} values, got {values.size}")
        if np.any(~np.isfinite(values)):
            raise ValidationError("payoff values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, space: FiniteProbSpace, c: float) -> RandomVariable:
        return cls(space, np.full(space.size, float(c)))

    def lift(self, space: FiniteProbSpace) -> RandomVariable:
        if space.same_as(self.space):
            return self
        return RandomVariable(space, self.values[space.index_into(self.space)])

    def map(self, fn) -> RandomVariable:
        return RandomVariable(self.space, fn(self.values))

    def _other(self, other) -> np.ndarray | float:
        if isinstance(other, RandomVariable):
            _check_same(self.space, other.space)
            return other.values
        return float(other)

    def __add__(self, other) -> RandomVariable:
        return RandomVariable(self.space, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other) -> RandomVariable:
        return RandomVariable(self.space, self.values - self._other(other))

    def __rsub__(self, other) -> RandomVariable:
        return RandomVariable(self.space, self._other(other) - self.values)

    def __mul__(self, other) -> RandomVariable:
        return RandomVariable(self.space, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other) -> RandomVariable:
        return RandomVariable(self.space, self.values / self._other(other))

    def __neg__(self) -> RandomVariable:
        return RandomVariable(self.space, -self.values)

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())

    def is_degenerate(self, tol: float = MERGE_TOL) -> bool:
        return self.max() - self.min() <= tol


@dataclass(frozen=True, eq=False)
class PriceMeasure:
    """A pricing measure given by its density with respect to P."""

    space: FiniteProbSpace
    density: np.ndarray

    def __post_init__(self) -> None:
        d = np.array(self.density, dtype=float).reshape(-1)
        if d.size != self.space.size:
            raise ValidationError("one density value per atom is required")
        if np.any(d < 0) or np.any(~np.isfinite(d)):
            raise ValidationError("price density must be finite and nonnegative")
        mean = float(np.dot(self.space.probs, d))
        if mean <= 0:
            raise ValidationError("price density has zero mass")
        if abs(mean - 1.0) > PROB_TOL:
            d = d / mean
        d.setflags(write=False)
        object.__setattr__(self, "density", d)

    @classmethod
    def from_unnormalized(cls, space: FiniteProbSpace, weights) -> PriceMeasure:
        w = np.asarray(weights, dtype=float)
        mass = float(np.dot(space.probs, w))
        if not mass > 0:
            raise ValidationError("degenerate price: density vanishes everywhere")
        return cls(space, w / mass)

    @classmethod
    def physical(cls, space: FiniteProbSpace) -> PriceMeasure:
        return cls(space, np.ones(space.size))

    def lift(self, space: FiniteProbSpace) -> PriceMeasure:
        if space.same_as(self.space):
            return self
        return PriceMeasure(space, self.density[space.index_into(self.space)])

    @property
    def weights(self) -> np.ndarray:
        return self.space.probs * self.density


@dataclass(frozen=True, eq=False)
class Allocation:
    """``n`` payoffs on a common space; row ``i`` belongs to agent ``i``."""

    space: FiniteProbSpace
    components: np.ndarray
    total: np.ndarray | None = field(default=None)

    def __post_init__(self) -> None:
        comps = np.array(self.components, dtype=float)
        if comps.ndim == 1:
            comps = comps.reshape(1, -1)
        if comps.ndim != 2 or comps.shape[1] != self.space.size or comps.shape[0] < 1:
            raise ValidationError(f"components must have shape (n, {self.space.size})")
        if np.any(~np.isfinite(comps)):
            raise ValidationError("allocation values must be finite")
        summed = comps.sum(axis=0)
        if self.total is None:
            total = summed
        else:
            total = np.array(
                self.total.values if isinstance(self.total, RandomVariable) else self.total, dtype=float
            ).reshape(-1)
            if total.size != self.space.size:
                raise ValidationError("total payoff has the wrong length")
            scale = np.maximum(1.0, np.abs(total))
            bad = np.abs(summed - total) > PROB_TOL * scale * max(1, comps.shape[0])
            if np.any(bad):
                s = int(np.flatnonzero(bad)[0])
                raise ValidationError(
                    f"components sum to {summed[s]!r} but the total is {total[s]!r} at atom {self.space.ids[s]}"
                )
        comps.setflags(write=False)
        total.setflags(write=False)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "total", total)

    @classmethod
    def from_rvs(cls, rvs: Sequence[RandomVariable], total: RandomVariable | None = None) -> Allocation:
        space = rvs[0].space
        for rv in rvs[1:]:
            _check_same(space, rv.space)
        if total is not None:
            _check_same(space, total.space)
        return cls(space, np.vstack([rv.values for rv in rvs]), None if total is None else total.values)

    @property
    def n(self) -> int:
        return int(self.components.shape[0])

    def component(self, i: int) -> RandomVariable:
        return RandomVariable(self.space, self.components[i])

    def total_rv(self) -> RandomVariable:
        return RandomVariable(self.space, self.total)

    def lift(self, space: FiniteProbSpace) -> Allocation:
        if space.same_as(self.space):
            return self
        idx = space.index_into(self.space)
        return Allocation(space, self.components[:, idx], self.total[idx])

    def is_nontrivial(self, tol: float = ZERO_TOL) -> bool:
        nonzero = np.any(np.abs(self.components) > tol, axis=1)
        return int(nonzero.sum()) >= 2


@dataclass(frozen=True, eq=False)
class PartitionVector:
    space: FiniteProbSpace
    owner: np.ndarray
    n_agents: int

    def __post_init__(self) -> None:
        owner = np.array(self.owner, dtype=np.int64).reshape(-1)
        if owner.size != self.space.size:
            raise ValidationError("every atom needs exactly one owner")
        if self.n_agents < 1 or owner.min() < 0 or owner.max() >= self.n_agents:
            raise ValidationError("owner index out of range")
        owner.setflags(write=False)
        object.__setattr__(self, "owner", owner)

    def indicators(self) -> np.ndarray:
        return (self.owner[None, :] == np.arange(self.n_agents)[:, None]).astype(float)

    def win_probabilities(self) -> np.ndarray:
        return np.bincount(self.owner, weights=self.space.probs, minlength=self.n_agents)

    def jackpot(self, X: RandomVariable) -> Allocation:
        X = X.lift(self.space)
        return Allocation(self.space, self.indicators() * X.values[None, :], X.values)


@dataclass(frozen=True)
class OrderVerdict:
    holds: bool
    strict: bool
    witness: tuple[float, float] | None = None


@dataclass(frozen=True)
class DependenceVerdict:
    holds: bool
    mode: str
    witness: tuple | None = None

    def __bool__(self) -> bool:
        return self.holds


# ---------------------------------------------------------------------------
# randomization extensions
# ---------------------------------------------------------------------------


def extend_with_uniform_cuts(space: FiniteProbSpace, cuts) -> tuple[FiniteProbSpace, PartitionVector]:
    """Split atom ``s`` at ``cuts[s]``; the child for interval ``k`` is owned by ``k``."""
    cuts = np.asarray(cuts, dtype=float)
    if cuts.ndim != 2 or cuts.shape[0] != space.size or cuts.shape[1] < 2:
        raise ValidationError(f"cuts must have shape ({space.size}, n + 1)")
    if np.any(np.abs(cuts[:, 0]) > PROB_TOL) or np.any(np.abs(cuts[:, -1] - 1.0) > PROB_TOL):
        raise ValidationError("every cut list must start at 0 and end at 1")
    widths = np.diff(cuts, axis=1)
    if np.any(widths < -PROB_TOL):
        s = int(np.flatnonzero(np.any(widths < -PROB_TOL, axis=1))[0])
        raise ValidationError(f"cut list for atom {space.ids[s]} is not nondecreasing")
    cuts = cuts.copy()
    cuts[:, 0] = 0.0
    cuts[:, -1] = 1.0
    cuts = np.maximum.accumulate(cuts, axis=1)
    widths = np.diff(cuts, axis=1)
    parent, owner = np.nonzero(widths > 0.0)
    probs = space.probs[parent] * widths[parent, owner]
    probs = _renormalize_children(space, parent, probs)
    ids = tuple(f"{space.ids[s]}.{k}" for s, k in zip(parent, owner))
    child = FiniteProbSpace(probs, ids, space, parent)
    return child, PartitionVector(child, owner, cuts.shape[1] - 1)


def extend_with_independent_categorical(space: FiniteProbSpace, theta) -> tuple[FiniteProbSpace, PartitionVector]:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.size < 1 or np.any(theta < -PROB_TOL) or abs(math.fsum(theta) - 1.0) > PROB_TOL:
        raise ValidationError("theta must lie in the probability simplex")
    theta = np.clip(theta, 0.0, None)
    cum = np.concatenate([[0.0], np.cumsum(theta)])
    # trailing zero weights must give empty intervals rather than rounding residue
    last = int(np.flatnonzero(theta > 0)[-1]) + 1
    cum[last:] = 1.0
    return extend_with_uniform_cuts(space, np.tile(cum, (space.size, 1)))


def _renormalize_children(space: FiniteProbSpace, parent: np.ndarray, probs: np.ndarray) -> np.ndarray:
    # absorb float rounding so children of each parent sum to the parent mass
    mass = np.bincount(parent, weights=probs, minlength=space.size)
    return probs * (space.probs / mass)[parent]


def refine_uniformly(space: FiniteProbSpace, k: int) -> FiniteProbSpace:
    """Split every atom into ``k`` equally likely children."""
    cuts = np.tile(np.linspace(0.0, 1.0, k + 1), (space.size, 1))
    return extend_with_uniform_cuts(space, cuts)[0]


# ---------------------------------------------------------------------------
# expectations, distributions and convex order
# ---------------------------------------------------------------------------


def expectation(X: RandomVariable, Q: PriceMeasure | None = None) -> float:
    if Q is None:
        return float(np.dot(X.space.probs, X.values))
    _check_same(X.space, Q.space)
    return float(np.dot(Q.weights, X.values))


def conditional_expectation(Y: RandomVariable, coarse: FiniteProbSpace) -> RandomVariable:
    idx = Y.space.index_into(coarse)
    num = np.bincount(idx, weights=Y.space.probs * Y.values, minlength=coarse.size)
    return RandomVariable(coarse, num / coarse.probs)


def distribution(X: RandomVariable, tol: float = MERGE_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Support points (ascending) and masses, merging values within ``tol``."""
    return merge_atoms(X.values, X.space.probs, tol)


def merge_atoms(values: np.ndarray, probs: np.ndarray, tol: float = MERGE_TOL) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(values, kind="stable")
    vals = values[order]
    starts = np.concatenate([[True], np.diff(vals) > tol])
    group = np.cumsum(starts) - 1
    masses = np.bincount(group, weights=probs[order])
    return vals[starts], masses


def _stop_loss_curve(vals: np.ndarray, probs: np.ndarray, ts: np.ndarray) -> np.ndarray:
    order = np.argsort(vals)
    v = vals[order]
    p = probs[order]
    tail_p = np.concatenate([np.cumsum(p[::-1])[::-1], [0.0]])
    tail_pv = np.concatenate([np.cumsum((p * v)[::-1])[::-1], [0.0]])
    k = np.searchsorted(v, ts, side="right")
    return tail_pv[k] - ts * tail_p[k]


def stop_loss(X: RandomVariable, t: float) -> float:
    return float(np.dot(X.space.probs, np.maximum(X.values - t, 0.0)))


def convex_order_leq(X: RandomVariable, Y: RandomVariable, tol: float = ORDER_TOL) -> OrderVerdict:
    """Decide X <=_cx Y from the stop-loss transforms at every kink."""
    ts = np.union1d(X.values, Y.values)
    sx = _stop_loss_curve(X.values, X.space.probs, ts)
    sy = _stop_loss_curve(Y.values, Y.space.probs, ts)
    mean_gap = expectation(X) - expectation(Y)
    if abs(mean_gap) > tol:
        # below every atom the stop-loss gap is exactly the mean gap
        return OrderVerdict(False, False, (float(ts[0]), float(sx[0] - sy[0])))
    excess = sx - sy
    worst = int(np.argmax(excess))
    if excess[worst] > tol:
        return OrderVerdict(False, False, (float(ts[worst]), float(excess[worst])))
    vx, px = distribution(X)
    vy, py = distribution(Y)
    same = vx.size == vy.size and np.allclose(vx, vy, rtol=0, atol=MERGE_TOL) and np.allclose(px, py, rtol=0, atol=tol)
    if same:
        return OrderVerdict(True, False, None)
    best = int(np.argmin(excess))
    return OrderVerdict(True, True, (float(ts[best]), float(excess[best])))


# ---------------------------------------------------------------------------
# dependence structure
# ---------------------------------------------------------------------------


def _comonotone_pair(a: np.ndarray, b: np.ndarray, tol: float) -> tuple[int, int] | None:
    """Return atoms (s, t) with a_s < a_t and b_s > b_t beyond tol, or None."""
    order = np.argsort(a, kind="stable")
    a_sorted = a[order]
    # cluster a-values that agree within tol so near ties never count as rises
    new_cluster = np.concatenate([[True], np.diff(a_sorted) > tol])
    cluster = np.cumsum(new_cluster) - 1
    n_cl = int(cluster[-1]) + 1
    cl_max = np.full(n_cl, -np.inf)
    cl_min = np.full(n_cl, np.inf)
    np.maximum.at(cl_max, cluster, b[order])
    np.minimum.at(cl_min, cluster, b[order])
    run_max = -np.inf
    run_arg = -1
    for c in range(n_cl):
        if run_arg >= 0 and cl_min[c] < run_max - tol:
            members = order[cluster == c]
            t = int(members[np.argmin(b[members])])
            earlier = order[cluster == run_arg]
            s = int(earlier[np.argmax(b[earlier])])
            if a[t] - a[s] > tol:
                return s, t
        if cl_max[c] > run_max:
            run_max = cl_max[c]
            run_arg = c
    return None


def check_dependence(alloc: Allocation, mode: str, tol: float = ZERO_TOL) -> DependenceVerdict:
    comps = alloc.components
    n = alloc.n
    if mode == "jackpot":
        neg = np.argwhere(comps < -tol)
        if neg.size:
            i, s = (int(v) for v in neg[0])
            return DependenceVerdict(False, mode, (i, alloc.space.ids[s]))
        positive = comps > tol
        crowded = np.flatnonzero(positive.sum(axis=0) > 1)
        if crowded.size:
            s = int(crowded[0])
            who = tuple(int(i) for i in np.flatnonzero(positive[:, s])[:2])
            return DependenceVerdict(False, mode, (*who, alloc.space.ids[s]))
        return DependenceVerdict(True, mode)
    if mode not in ("comonotonic", "counter_monotonic"):
        raise ValidationError(f"unknown dependence mode {mode!r}")
    sign = -1.0 if mode == "counter_monotonic" else 1.0
    for i in range(n):
        for j in range(i + 1, n):
            hit = _comonotone_pair(comps[i], sign * comps[j], tol)
            if hit is not None:
                s, t = hit
                return DependenceVerdict(False, mode, (i, j, alloc.space.ids[s], alloc.space.ids[t]))
    return DependenceVerdict(True, mode)


@dataclass(frozen=True)
class CounterMonotonicRepresentation:
    form: str
    shifts: np.ndarray | None
    partition: PartitionVector | None
    pairwise_holds: bool | None = None


def counter_monotonic_representation(alloc: Allocation, tol: float = 1e-10) -> CounterMonotonicRepresentation | None:
    """Write a counter-monotonic allocation as shifted jackpot pieces.

    Returns ``form="deferred"`` with the pairwise verdict when fewer than three
    components are non-degenerate, and None when no representation exists.
    """
    comps = alloc.components
    nondeg = np.ptp(comps, axis=1) > MERGE_TOL
    if int(nondeg.sum()) < 3:
        ok = check_dependence(alloc, "counter_monotonic").holds
        return CounterMonotonicRepresentation("deferred", None, None, ok)
    total = alloc.total
    for form in ("lower", "upper"):
        shifts = comps.min(axis=1) if form == "lower" else comps.max(axis=1)
        off = np.abs(comps - shifts[:, None]) > tol
        if np.any(off.sum(axis=0) > 1):
            continue
        owner = np.where(off.any(axis=0), np.argmax(off, axis=0), 0)
        part = PartitionVector(alloc.space, owner, alloc.n)
        rebuilt = part.indicators() * (total - shifts.sum())[None, :] + shifts[:, None]
        if np.max(np.abs(rebuilt - comps)) <= tol:
            return CounterMonotonicRepresentation(form, shifts.copy(), part)
    return None


def mix_allocations(first: Allocation, second: Allocation, weight: float) -> Allocation:
    """Play ``first`` with probability ``weight`` via an independent coin."""
    _check_same(first.space, second.space)
    if not 0.0 < weight < 1.0:
        raise ValidationError("mixing weight must lie strictly between 0 and 1")
    space, coin = extend_with_independent_categorical(first.space, [weight, 1.0 - weight])
    a = first.lift(space)
    b = second.lift(space)
    heads = coin.owner == 0
    comps = np.where(heads[None, :], a.components, b.components)
    return Allocation(space, comps, a.total)
