"""Command-line front end driven by JSON scenario files.

    riskshare <task> --scenario FILE|DIR [--out DIR] [--format json|csv|text] [--seed N] [--oracle]

Exit status: 0 when everything ran and every certificate or check held,
1 on engine errors, 2 on invalid scenarios, 3 when a certificate or a
reproduction check failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .allocation_engine import (
    counter_monotonic_improve,
    lambda_optimal,
    optimal_split,
    pareto_check_rs,
    split_threshold,
    unextended_jackpot_improvements,
    upf_trace,
)
from .equilibrium import (
    EquilibriumCertificate,
    fixed_point_search,
    homogeneous_equilibrium,
    jackpot_structure,
    rdu_constant_equilibrium,
    two_agent_equilibrium,
    two_point_mixed_equilibrium,
    verify_equilibrium,
)
from .oracle import BudgetExceeded, brute_force_pareto_probe, brute_force_weighted_max, enumerate_jackpot_partitions
from .preferences import Agent, UtilityFunction, WeightingFunction, expected_utility
from .prob_core import (
    Allocation,
    FiniteProbSpace,
    PriceMeasure,
    RandomVariable,
    ValidationError,
    check_dependence,
    conditional_expectation,
    convex_order_leq,
    refine_uniformly,
)
from .rdu_analysis import (
    dominance_sweep,
    epsilon_perturbation,
    find_y0,
    jackpot_vs_proportional,
    make_rdu_scenario,
    rdu_sum_optimal_value,
)

SCHEMA = "riskshare/1"
REPORT_SCHEMA = "riskshare-report/1"
TASKS = ("improve", "pareto", "upf", "equilibrium", "rdu", "reproduce")
EXIT_OK, EXIT_ENGINE, EXIT_INVALID, EXIT_CERT = 0, 1, 2, 3


class ScenarioError(Exception):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ScenarioConfig:
    name: str
    seed: int
    space: FiniteProbSpace
    X: RandomVariable
    agents: list[Agent]
    groups: list[str | None]
    endowments: Allocation | None
    endowment_spec: dict[str, Any]
    task: str
    params: dict[str, Any]
    expect: list[dict[str, Any]]
    raw: dict[str, Any]
    origin: str = "<memory>"


def _simplex_error(values, where: str) -> str | None:
    try:
        arr = np.asarray(values, dtype=float).reshape(-1)
    except (TypeError, ValueError):
        return f"{where}: expected a list of numbers"
    if arr.size == 0:
        return f"{where}: empty"
    if np.any(arr < 0) or np.any(~np.isfinite(arr)):
        return f"{where}: entries must be finite and nonnegative"
    total = math.fsum(arr)
    if abs(total - 1.0) > 1e-9:
        return f"{where}: sums to {total:.12g}, not 1"
    return None


def _parse_space(doc: dict, errors: list[str]) -> tuple[FiniteProbSpace | None, np.ndarray | None]:
    spec = doc.get("space")
    if not isinstance(spec, dict):
        errors.append("space: missing or not an object")
        return None, None
    gen = spec.get("generator")
    try:
        if gen == "uniform_grid":
            m = int(spec.get("m", 0))
            if m < 1:
                errors.append("space.m: must be a positive integer")
                return None, None
            lo, hi = float(spec.get("lo", 0.0)), float(spec.get("hi", 1.0))
            values = lo + (hi - lo) * (np.arange(m) + 0.5) / m
            return FiniteProbSpace.uniform(m), values
        if gen == "two_point":
            a, b, p = float(spec["a"]), float(spec["b"]), float(spec.get("p", 0.5))
            if not 0 < p < 1:
                errors.append("space.p: must lie in (0, 1)")
                return None, None
            return FiniteProbSpace.from_probs([p, 1 - p], ["a", "b"]), np.array([a, b])
        if gen is not None:
            errors.append(f"space.generator: unknown generator {gen!r} (uniform_grid, two_point)")
            return None, None
        if "atoms" in spec:
            atoms = spec["atoms"]
            probs = [float(a["p"]) for a in atoms]
            values = np.array([float(a.get("x", 0.0)) for a in atoms])
            ids = [str(a["id"]) for a in atoms] if all("id" in a for a in atoms) else None
        else:
            probs = spec.get("probs")
            values = np.asarray(spec.get("values", np.zeros(len(probs or []))), dtype=float)
            ids = spec.get("ids")
        msg = _simplex_error(probs, "space.probs")
        if msg:
            errors.append(msg)
            return None, None
        if len(values) != len(probs):
            errors.append("space.values: one value per atom is required")
            return None, None
        return FiniteProbSpace.from_probs(probs, ids), values
    except (KeyError, TypeError, ValueError) as exc:
        errors.append(f"space: {exc}")
        return None, None


def _resolve(entry, table: dict, kind: str, where: str, errors: list[str]):
    if isinstance(entry, str):
        if entry not in table:
            errors.append(f"{where}: unknown {kind} reference {entry!r}")
            return None
        return table[entry]
    return entry


def _parse_agents(doc: dict, errors: list[str]) -> tuple[list[Agent], list[str | None]]:
    defs = doc.get("definitions", {}) or {}
    utils = defs.get("utilities", {}) or {}
    weights = defs.get("weightings", {}) or {}
    entries = doc.get("agents")
    if not isinstance(entries, list) or not entries:
        errors.append("agents: expected a nonempty list")
        return [], []
    agents, groups = [], []
    for k, entry in enumerate(entries):
        where = f"agents[{k}]"
        if not isinstance(entry, dict):
            errors.append(f"{where}: expected an object")
            continue
        u_spec = _resolve(entry.get("utility"), utils, "utility", f"{where}.utility", errors)
        w_spec = _resolve(entry.get("weighting", {"family": "identity"}), weights, "weighting", f"{where}.weighting", errors)
        if u_spec is None or w_spec is None:
            if entry.get("utility") is None:
                errors.append(f"{where}.utility: missing")
            continue
        try:
            u = UtilityFunction(u_spec["family"], u_spec.get("params", {}), u_spec.get("attitude"), u_spec.get("range_hi"))
        except (KeyError, TypeError, ValueError) as exc:
            errors.append(f"{where}.utility: {exc}")
            continue
        try:
            w = WeightingFunction(w_spec["family"], w_spec.get("params", {}))
        except (KeyError, TypeError, ValueError) as exc:
            errors.append(f"{where}.weighting: {exc}")
            continue
        count = entry.get("count", 1)
        if not isinstance(count, int) or count < 1:
            errors.append(f"{where}.count: must be a positive integer")
            continue
        try:
            agent = Agent(u, w, entry.get("attitude"), str(entry.get("name", "")))
        except ValueError as exc:
            errors.append(f"{where}.attitude: {exc}")
            continue
        group = entry.get("group")
        if group not in (None, "S", "T"):
            errors.append(f"{where}.group: must be 'S' or 'T'")
        agents.extend([agent] * count)
        groups.extend([group] * count)
    return agents, groups


def _parse_endowments(doc: dict, X: RandomVariable, n: int, errors: list[str]) -> Allocation | None:
    spec = doc.get("endowments")
    if spec is None:
        return None
    kind = spec.get("type")
    try:
        if kind == "equal":
            theta = np.full(n, 1.0 / n)
        elif kind == "proportional":
            msg = _simplex_error(spec.get("theta"), "endowments.theta")
            if msg:
                errors.append(msg)
                return None
            theta = np.asarray(spec["theta"], dtype=float)
            if theta.size != n:
                errors.append(f"endowments.theta: {theta.size} entries for {n} agents")
                return None
        elif kind == "explicit":
            rows = np.asarray(spec.get("values"), dtype=float)
            if rows.shape != (n, X.space.size):
                errors.append(f"endowments.values: expected shape ({n}, {X.space.size}), got {rows.shape}")
                return None
            return Allocation(X.space, rows)
        else:
            errors.append(f"endowments.type: unknown type {kind!r} (explicit, proportional, equal)")
            return None
    except (TypeError, ValueError) as exc:
        errors.append(f"endowments: {exc}")
        return None
    theta = theta / theta.sum()
    comps = theta[:, None] * X.values[None, :]
    comps[int(np.argmax(theta))] += X.values - comps.sum(axis=0)
    return Allocation(X.space, comps, X.values)


def parse_document(doc: Any, origin: str = "<memory>") -> ScenarioConfig:
    errors: list[str] = []
    if not isinstance(doc, dict):
        raise ScenarioError([f"{origin}: top level must be an object"])
    schema = doc.get("schema", SCHEMA)
    if schema != SCHEMA:
        errors.append(f"schema: unsupported {schema!r}, expected {SCHEMA!r}")
    task_spec = doc.get("task", {})
    if isinstance(task_spec, str):
        task_spec = {"type": task_spec}
    task = task_spec.get("type")
    if task not in TASKS:
        errors.append(f"task.type: unknown task {task!r} ({', '.join(TASKS)})")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        errors.append("seed: must be an integer")
        seed = 0
    expect = doc.get("expect", [])
    if not isinstance(expect, list) or any(not isinstance(e, dict) or "quantity" not in e for e in expect):
        errors.append("expect: expected a list of objects with a 'quantity' field")
        expect = []
    if task == "reproduce":
        if errors:
            raise ScenarioError(errors)
        empty = FiniteProbSpace.uniform(1)
        return ScenarioConfig(
            str(doc.get("name", "reproduce")), seed, empty, RandomVariable(empty, np.zeros(1)), [], [], None, {},
            task, {k: v for k, v in task_spec.items() if k != "type"}, expect, doc, origin,
        )
    space, values = _parse_space(doc, errors)
    agents, groups = _parse_agents(doc, errors)
    X = None
    if space is not None:
        total = doc.get("total")
        try:
            if isinstance(total, dict) and "constant" in total:
                values = np.full(space.size, float(total["constant"]))
            elif total is not None:
                values = np.asarray(total, dtype=float)
            if values.shape != (space.size,):
                errors.append("total: one value per atom is required")
            elif np.any(values < 0):
                errors.append("total: the total payoff must be nonnegative")
            else:
                X = RandomVariable(space, values)
        except (TypeError, ValueError) as exc:
            errors.append(f"total: {exc}")
    endowments = _parse_endowments(doc, X, len(agents), errors) if X is not None and agents else None
    params = {k: v for k, v in task_spec.items() if k != "type"}
    if "lambda" in params:
        lam = params["lambda"]
        if not isinstance(lam, list) or len(lam) != len(agents) or any(not isinstance(v, (int, float)) or v < 0 for v in lam):
            errors.append(f"task.lambda: expected {len(agents)} nonnegative numbers")
    if errors:
        raise ScenarioError(errors)
    return ScenarioConfig(
        str(doc.get("name", Path(origin).stem)), seed, space, X, agents, groups, endowments,
        doc.get("endowments") or {}, task, params, expect, doc, origin,
    )


def parse_scenario(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError([f"{path}: {exc.strerror}"]) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}"]) from exc
    return parse_document(doc, str(path))


def fixture_names() -> list[str]:
    root = resources.files("riskshare") / "fixtures"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_fixture(name: str) -> ScenarioConfig:
    root = resources.files("riskshare") / "fixtures"
    target = root / f"{name}.json"
    if not target.is_file():
        raise ScenarioError([f"unknown reproduction target {name!r}; available: {', '.join(fixture_names())}"])
    return parse_document(json.loads(target.read_text()), f"fixtures/{name}.json")


# ---------------------------------------------------------------------------
# report plumbing
# ---------------------------------------------------------------------------


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


@dataclass
class Report:
    quantities: dict[str, Any] = field(default_factory=dict)
    tables: dict[str, dict[str, Any]] = field(default_factory=dict)
    certificates: list[dict[str, Any]] = field(default_factory=list)
    checks: list[dict[str, Any]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)

    def q(self, name: str, value) -> None:
        self.quantities[name] = _plain(value)

    def table(self, name: str, columns: list[str], rows) -> None:
        self.tables[name] = {"columns": columns, "rows": _plain([list(r) for r in rows])}

    def certificate(self, label: str, cert: EquilibriumCertificate) -> None:
        self.certificates.append(
            _plain(
                {
                    "label": label,
                    "valid": cert.valid,
                    "exact": cert.exact,
                    "method": cert.method,
                    "clearance_residual": cert.clearance_residual,
                    "agents": cert.table(),
                    "warnings": cert.warnings,
                }
            )
        )
        self.q(f"valid[{label}]", cert.valid)
        self.warnings.extend(f"{label}: {w}" for w in cert.warnings)


def _groups(cfg: ScenarioConfig) -> tuple[list[int], list[int]]:
    if any(g is not None for g in cfg.groups):
        S = [i for i, g in enumerate(cfg.groups) if g == "S"]
        T = [i for i, g in enumerate(cfg.groups) if g != "S"]
    else:
        S = [i for i, a in enumerate(cfg.agents) if a.risk_seeking and not a.risk_averse]
        T = [i for i in range(len(cfg.agents)) if i not in S]
    return S, T


def _allocation_param(cfg: ScenarioConfig, p: dict) -> Allocation | None:
    spec = p.get("allocation", "endowments")
    if spec == "endowments":
        return cfg.endowments
    if isinstance(spec, list):
        rows = np.asarray(spec, dtype=float)
        return Allocation(cfg.space, rows, cfg.X.values)
    return None


def _all_rs(agents) -> bool:
    return all(a.is_eu and a.risk_seeking for a in agents)


# ---------------------------------------------------------------------------
# tasks
# ---------------------------------------------------------------------------


def _task_improve(cfg: ScenarioConfig, rep: Report, oracle: bool) -> None:
    alloc = _allocation_param(cfg, cfg.params)
    if alloc is None:
        raise ScenarioError(["task.allocation: give explicit rows or define endowments"])
    n, m = alloc.n, alloc.space.size
    if n**m <= 10**6:
        search = unextended_jackpot_improvements(alloc)
        rep.q("unextended_owner_maps", search.owner_maps)
        rep.q("unextended_exists", search.exists)
    res = counter_monotonic_improve(alloc)
    Y = res.allocation
    base = alloc.lift(res.space)
    rep.q("extended_atoms", res.space.size)
    rep.q("jackpot", bool(check_dependence(Y, "jackpot")))
    rep.q("sum_error", float(np.max(np.abs(Y.components.sum(axis=0) - base.total))))
    rows = []
    worst_cond = 0.0
    all_cx = True
    wins = res.partition.win_probabilities()
    for i in range(n):
        Yi = Y.component(i)
        cond = conditional_expectation(Yi, alloc.space).values - alloc.components[i]
        err = float(np.max(np.abs(cond)))
        cx = convex_order_leq(base.component(i), Yi)
        worst_cond = max(worst_cond, err)
        all_cx &= cx.holds
        rows.append((i, wins[i], float(alloc.components[i] @ alloc.space.probs), float(Yi.values @ Yi.space.probs), err, cx.holds))
        rep.q(f"win_probability[{i}]", wins[i])
    rep.q("max_conditional_mean_error", worst_cond)
    rep.q("convex_order_all", all_cx)
    rep.table("improvement", ["agent", "win_probability", "mean_before", "mean_after", "conditional_mean_error", "convex_order"], rows)
    if cfg.agents and len(cfg.agents) == n:
        before = [expected_or_rdu(a, alloc.component(i)) for i, a in enumerate(cfg.agents)]
        after = [expected_or_rdu(a, Y.component(i)) for i, a in enumerate(cfg.agents)]
        rep.table("utilities", ["agent", "before", "after"], [(i, before[i], after[i]) for i in range(n)])
        rep.q("strict_improvement", all(b > a + 1e-12 for a, b in zip(before, after)))


def expected_or_rdu(agent: Agent, Y: RandomVariable) -> float:
    from .preferences import rdu_utility

    return rdu_utility(agent, Y)


def _task_pareto(cfg: ScenarioConfig, rep: Report, oracle: bool) -> None:
    p = cfg.params
    agents, X = cfg.agents, cfg.X
    S, T = _groups(cfg)
    alloc = None
    if "lambda" in p:
        opt, solver = lambda_optimal(p["lambda"], agents, X, outer_grid=int(p.get("outer_grid", 2048)))
        alloc = opt.allocation
        rep.q("solver", solver)
        rep.q("weighted_value", opt.value)
        from .allocation_engine import agent_utilities

        for i, v in enumerate(agent_utilities(agents, alloc)):
            rep.q(f"utility[{i}]", v)
        if "threshold" in p:
            th = p["threshold"]
            rep.q("threshold", split_threshold(p["lambda"], S, T, agents, float(th["lo"]), float(th["hi"]), float(th.get("tol", 1e-12))))
        if "split_at" in p:
            xs = np.asarray(p["split_at"], dtype=float)
            y, _ = optimal_split(np.asarray(p["lambda"], dtype=float), S, T, agents, xs)
            rep.table("split", ["x", "to_S", "to_T"], zip(xs, y, xs - y))
            for x, ys in zip(xs, y):
                rep.q(f"split_S[{x:g}]", ys)
                rep.q(f"split_T[{x:g}]", x - ys)
    elif "allocation" in p:
        alloc = _allocation_param(cfg, p)
    if alloc is None:
        raise ScenarioError(["task: give lambda or an allocation"])
    if _all_rs(agents):
        verdict = pareto_check_rs(alloc, agents)
        rep.q("pareto_optimal", verdict.optimal)
        rep.q("pareto_reason", verdict.reason)
        if verdict.witness_lambda is not None:
            rep.q("supporting_lambda", verdict.witness_lambda)
        if oracle:
            try:
                probe = brute_force_pareto_probe(alloc, agents, seed=cfg.seed)
                rep.q("oracle_dominator_found", probe.details.get("dominator_found"))
                rep.warnings.append("Pareto probe is a search, not a proof")
            except BudgetExceeded as exc:
                rep.warnings.append(f"oracle skipped: {exc}")
    else:
        rep.warnings.append("Pareto status is certified only for risk-seeking EU agents")


def _task_upf(cfg: ScenarioConfig, rep: Report, oracle: bool) -> None:
    p = cfg.params
    agents, X = cfg.agents, cfg.X
    grid = p.get("lambda_grid", 21)
    trace = upf_trace(agents, X, grid if isinstance(grid, int) else [np.asarray(g, dtype=float) for g in grid])
    n = len(agents)
    rep.table("upf", [f"utility_{i + 1}" for i in range(n)], [pt.utilities for pt in trace])
    rep.table("upf_weights", [f"lambda_{i + 1}" for i in range(n)], [pt.lam for pt in trace])
    rep.q("points", len(trace))
    for k, lam in enumerate(p.get("probe", [])):
        (pt,) = upf_trace(agents, X, [np.asarray(lam, dtype=float)])
        for i, v in enumerate(pt.utilities):
            rep.q(f"probe[{k}].utility[{i}]", v)
        if oracle:
            try:
                opt, _ = lambda_optimal(lam, agents, X)
                rep_o = brute_force_weighted_max(lam, agents, X).compare(opt.value)
                rep.q(f"probe[{k}].oracle_gap", rep_o.gap)
                rep.q(f"probe[{k}].oracle_defect", rep_o.engine_defect)
            except BudgetExceeded as exc:
                rep.warnings.append(f"oracle skipped: {exc}")


def _welfare(rep: Report, label: str, alloc: Allocation, agents) -> None:
    if _all_rs(agents):
        rep.q(f"pareto[{label}]", pareto_check_rs(alloc, agents).optimal)
        rep.q(f"jackpot_structure[{label}]", bool(jackpot_structure(alloc, agents)))


def _task_equilibrium(cfg: ScenarioConfig, rep: Report, oracle: bool) -> None:
    p = cfg.params
    method = p.get("method", "fixed_point")
    agents, X, endow = cfg.agents, cfg.X, cfg.endowments
    if method in ("homogeneous", "two_agent", "fixed_point", "rdu_constant") and endow is None:
        raise ScenarioError([f"endowments: required by method {method!r}"])
    if method == "homogeneous":
        res = homogeneous_equilibrium(agents, X, endow)
        rep.q("theta", res.theta)
        rep.q("price_density", res.base_price.density)
        from .allocation_engine import agent_utilities

        utils = agent_utilities(agents, res.allocation)
        target = expected_utility(agents[0].utility, X) * res.theta
        rep.q("utility_error", float(np.max(np.abs(utils - target))))
    elif method == "two_agent":
        res = two_agent_equilibrium(agents, X, endow)
        rep.q("price_density", res.base_price.density)
        ratio = np.asarray(agents[0].utility(X.values)) / X.values
        ratio = ratio / float(ratio @ cfg.space.probs)
        rep.q("price_error", float(np.max(np.abs(res.base_price.density - ratio))))
    elif method == "fixed_point":
        kind = cfg.endowment_spec.get("type")
        if kind in ("proportional", "equal"):
            theta = endow.components @ cfg.space.probs / float(X.values @ cfg.space.probs)
            kwargs = {"theta": theta / theta.sum()}
        else:
            kwargs = {"endowments": endow}
        res = fixed_point_search(agents, X, max_iters=int(p.get("max_iters", 500)), tol=float(p.get("tol", 1e-6)), seed=cfg.seed, **kwargs)
        rep.q("residual", res.residual)
        rep.q("lambda", res.lam)
        rep.q("status", res.status)
        rep.q("price_density", res.base_price.density)
    elif method == "rdu_constant":
        x = float(p.get("x", X.values[0]))
        res = rdu_constant_equilibrium(agents[0], x, endow)
        rep.q("theta", res.theta)
    elif method == "two_point":
        S, T = _groups(cfg)
        if cfg.space.size != 2:
            raise ScenarioError(["space: the two_point method needs a two-atom space"])
        (a, b), pa = X.values, cfg.space.probs[0]
        if a > b:
            a, b, pa = b, a, 1 - pa
        tp = two_point_mixed_equilibrium(a, b, pa, [agents[i] for i in S], [agents[i] for i in T])
        rep.q("L", tp.L)
        rep.q("R", tp.R)
        rep.q("interval_nonempty", tp.interval is not None)
        rep.q("necessary_bound", tp.necessary_lhs)
        rep.q("a_shares", tp.a_shares)
        rep.warnings.extend(tp.notes)
        for eps in p.get("epsilons", []):
            alloc, price, own = tp.build((1 - eps) / (1 + eps))
            rep.certificate(f"eps={eps:.6g}", verify_equilibrium(alloc, price, own, tp.agents, "two_point", cfg.seed))
        for ratio in p.get("ratios", []):
            alloc, price, own = tp.build(ratio)
            rep.certificate(f"ratio={ratio:.6g}", verify_equilibrium(alloc, price, own, tp.agents, "two_point", cfg.seed))
        return
    elif method == "verify":
        alloc = _allocation_param(cfg, p)
        price = PriceMeasure.from_unnormalized(cfg.space, np.asarray(p["price"], dtype=float))
        cert = verify_equilibrium(alloc, price, endow if endow is not None else alloc, agents, "given", cfg.seed)
        rep.certificate("given", cert)
        _welfare(rep, "given", alloc, agents)
        return
    else:
        raise ScenarioError([f"task.method: unknown method {method!r}"])
    rep.warnings.extend(res.notes)
    rep.q("extended_atoms", res.allocation.space.size)
    if res.certificate is not None:
        rep.certificate(method, res.certificate)
        rep.q("exact", res.certificate.exact)
    else:
        rep.errors.append("no certificate was produced")
    _welfare(rep, method, res.allocation, agents if res.allocation.n == len(agents) else [agents[0]] * res.allocation.n)


def _task_rdu(cfg: ScenarioConfig, rep: Report, oracle: bool) -> None:
    p = cfg.params
    agent = cfg.agents[0]
    if any(a.to_dict() != agent.to_dict() for a in cfg.agents):
        raise ScenarioError(["agents: the rdu task needs identical agents"])
    n = int(p.get("n", len(cfg.agents)))
    sc = make_rdu_scenario(agent, cfg.X, n, int(p.get("grid_size", 10001)))
    rep.warnings.extend(f"audit: {w}" for w in sc.warnings)
    analyses = p.get("analyses", ["envelope", "dominance"])
    if "envelope" in analyses:
        rep.q("beta_w", sc.envelope.beta)
        rep.q("inflection", sc.inflection)
        rep.q("envelope_slope", sc.envelope.slope)
    if "dominance" in analyses:
        d = jackpot_vs_proportional(sc)
        rep.q("verdict", d.verdict)
        rep.q("margin", d.margin)
        rep.q("jackpot_utility", d.jackpot_utilities[0])
        rep.q("proportional_utility", d.proportional_utilities[0])
        rep.q("layer_integral_error", abs(d.layer_integral - d.jackpot_utilities[0]))
    if "sum_optimal" in analyses:
        value = rdu_sum_optimal_value(sc)
        rep.q("sum_optimal_value", value)
        d = jackpot_vs_proportional(sc)
        rep.q("equal_jackpot_sum_error", abs(float(d.jackpot_utilities.sum()) - value))
        pieces = int(p.get("pieces", 0))
        if pieces or oracle:
            ext = refine_uniformly(cfg.space, pieces or n)
            try:
                r = enumerate_jackpot_partitions(ext, n, [agent] * n, cfg.X.lift(ext), symmetric=True)
            except BudgetExceeded as exc:
                rep.warnings.append(f"jackpot enumeration skipped: {exc}")
            else:
                rep.q("enumerated_best", r.best_value)
                rep.q("enumerated_excess", r.best_value - value)
                rep.q("enumerated_maps", r.details.get("owner_maps"))
    if "y0" in analyses:
        y = find_y0(sc, float(p.get("theta_margin", 1e-3)), tuple(p.get("x_search_range", (1e-3, 1e8))))
        rep.q("y0", y.y0)
        rep.q("y0_theta", y.theta)
        rep.q("y0_diagnostic", y.diagnostic)
        if y.table.size:
            rep.table("y0_search", ["x", "gap"], y.table)
        if y.y0 is not None:
            one = FiniteProbSpace.uniform(1)
            for factor in p.get("flip_factors", [0.5, 1.01, 2.0]):
                c = y.y0 * factor
                s2 = make_rdu_scenario(agent, RandomVariable.constant(one, c), n, int(p.get("grid_size", 10001)))
                rep.q(f"verdict_at_y0x{factor:g}", jackpot_vs_proportional(s2).verdict)
    if "epsilon" in analyses:
        y0 = float(p["y"])
        rows = []
        for eps in p.get("epsilons", [0.0, 1e-3, 1e-2]):
            r = epsilon_perturbation(y0, sc, float(eps))
            rows.append((eps, r.utility, r.safe_utility, r.utility - r.safe_utility))
        rep.table("epsilon", ["epsilon", "utility", "safe_utility", "gain"], rows)
        rep.q("derivative_estimate", r.derivative_estimate)
        rep.q("derivative_closed_form", r.derivative_closed_form)
        rep.q("derivative_error", abs(r.derivative_estimate - r.derivative_closed_form))
        rep.q("epsilon_dominates_safe", r.dominates_safe)
    if "sweep" in analyses:
        xs = np.asarray(p.get("sweep_points", np.logspace(-2, 3, 51)), dtype=float)
        rep.table("dominance_sweep", ["x", "utility_gap"], dominance_sweep(agent, n, xs))


def _apply_checks(cfg: ScenarioConfig, rep: Report, prefix: str = "") -> None:
    for e in cfg.expect:
        name = e["quantity"]
        got = rep.quantities.get(name)
        row = {"target": cfg.name, "quantity": name, "value": got}
        if "equals" in e:
            row["expected"] = e["equals"]
            row["pass"] = got == e["equals"]
        elif "max" in e or "min" in e:
            ok = isinstance(got, (int, float)) and not isinstance(got, bool)
            if "max" in e:
                ok = ok and got <= e["max"]
            if "min" in e:
                ok = ok and got >= e["min"]
            row["expected"] = {k: e[k] for k in ("min", "max") if k in e}
            row["pass"] = bool(ok)
        else:
            tol = float(e.get("tol", 1e-9))
            row["expected"] = e["value"]
            row["tol"] = tol
            row["pass"] = isinstance(got, (int, float)) and not isinstance(got, bool) and abs(got - e["value"]) <= tol
        rep.checks.append(_plain(row))


RUNNERS = {
    "improve": _task_improve,
    "pareto": _task_pareto,
    "upf": _task_upf,
    "equilibrium": _task_equilibrium,
    "rdu": _task_rdu,
}


def _run_into(cfg: ScenarioConfig, rep: Report, oracle: bool) -> None:
    RUNNERS[cfg.task](cfg, rep, oracle)
    _apply_checks(cfg, rep)


def run_scenario(
    cfg: ScenarioConfig, oracle: bool = False, seed: int | None = None, timing: bool = False, reproducing: bool = False
) -> dict[str, Any]:
    """Run one scenario and return the report document.

    When reproducing, the scenario's expectations decide the status, so a
    certificate that is expected to fail does not count against the run.
    """
    if seed is not None:
        cfg.seed = seed
    rep = Report()
    t0 = time.perf_counter()
    try:
        if cfg.task == "reproduce":
            target = cfg.params.get("target", "all")
            names = fixture_names() if target == "all" else ([target] if isinstance(target, str) else list(target))
            for name in names:
                sub = load_fixture(name)
                sub.seed = cfg.seed
                inner = Report()
                _run_into(sub, inner, oracle)
                for k, v in inner.quantities.items():
                    rep.quantities[f"{name}.{k}"] = v
                rep.certificates.extend({**c, "label": f"{name}.{c['label']}"} for c in inner.certificates)
                rep.checks.extend(inner.checks)
                rep.warnings.extend(f"{name}: {w}" for w in inner.warnings)
                rep.errors.extend(f"{name}: {e}" for e in inner.errors)
        else:
            _run_into(cfg, rep, oracle)
    except ScenarioError as exc:
        rep.errors.extend(exc.errors)
        status = "invalid"
    except ValidationError as exc:
        rep.errors.append(str(exc))
        status = "invalid"
    except KeyError as exc:
        rep.errors.append(f"task: missing parameter {exc}")
        status = "invalid"
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        rep.errors.append(f"{type(exc).__name__}: {exc}")
        status = "error"
    else:
        status = "ok"
    reproducing = reproducing or cfg.task == "reproduce"
    if status == "ok" and rep.checks and not all(c["pass"] for c in rep.checks):
        status = "check_failed"
    elif status == "ok" and not reproducing and any(not c["valid"] for c in rep.certificates):
        status = "invalid_certificate"
    if status == "ok" and rep.errors:
        status = "error"
    if rep.checks:
        rep.table("checks", ["target", "quantity", "value", "expected", "pass"],
                  [(c["target"], c["quantity"], json.dumps(c["value"]), json.dumps(c["expected"]), c["pass"]) for c in rep.checks])
    doc = {
        "schema": REPORT_SCHEMA,
        "engine_version": __version__,
        "scenario": cfg.raw,
        "name": cfg.name,
        "task": cfg.task,
        "seed": cfg.seed,
        "status": status,
        "quantities": rep.quantities,
        "tables": rep.tables,
        "certificates": rep.certificates,
        "checks": rep.checks,
        "warnings": rep.warnings,
        "errors": rep.errors,
    }
    if timing:
        doc["timing"] = {"seconds": time.perf_counter() - t0}
    return _plain(doc)


def exit_code(doc: dict[str, Any]) -> int:
    return {
        "ok": EXIT_OK,
        "invalid": EXIT_INVALID,
        "error": EXIT_ENGINE,
        "invalid_certificate": EXIT_CERT,
        "check_failed": EXIT_CERT,
    }[doc["status"]]


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def render_json(doc: dict[str, Any]) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def render_text(doc: dict[str, Any]) -> str:
    out = io.StringIO()
    out.write(f"{doc['name']}  task={doc['task']}  status={doc['status']}  seed={doc['seed']}\n")
    for k in sorted(doc["quantities"]):
        out.write(f"  {k} = {doc['quantities'][k]}\n")
    for cert in doc["certificates"]:
        out.write(f"  certificate {cert['label']}: {'valid' if cert['valid'] else 'INVALID'}"
                  f" ({'exact' if cert['exact'] else 'heuristic'})\n")
        for row in cert["agents"]:
            out.write(f"    agent {row['agent']}: budget residual {row['budget_residual']:.3g}, gap {row['gap']:.3g} [{row['method']}]\n")
    for c in doc["checks"]:
        out.write(f"  {'PASS' if c['pass'] else 'FAIL'} {c['target']}:{c['quantity']} = {c['value']} (expected {c['expected']})\n")
    for name, t in doc["tables"].items():
        out.write(f"  table {name}: {len(t['rows'])} rows x {len(t['columns'])} columns\n")
    for w in doc["warnings"]:
        out.write(f"  warning: {w}\n")
    for e in doc["errors"]:
        out.write(f"  error: {e}\n")
    return out.getvalue()


def _csv_text(columns: list[str], rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def emit_report(doc: dict[str, Any], out_dir, fmt: str) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "json":
        path = out / "report.json"
        path.write_text(render_json(doc))
        written.append(path)
    elif fmt == "text":
        path = out / "report.txt"
        path.write_text(render_text(doc))
        written.append(path)
    elif fmt == "csv":
        manifest = {"name": doc["name"], "task": doc["task"], "status": doc["status"], "files": []}
        tables = dict(doc["tables"])
        tables["quantities"] = {"columns": ["quantity", "value"], "rows": [[k, json.dumps(v)] for k, v in sorted(doc["quantities"].items())]}
        for cert in doc["certificates"]:
            cols = ["agent", "budget", "budget_residual", "achieved", "best_deviation", "gap", "method"]
            tables[f"certificate_{cert['label']}"] = {"columns": cols, "rows": [[r[c] for c in cols] for r in cert["agents"]]}
        for name in sorted(tables):
            t = tables[name]
            fname = "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name) + ".csv"
            path = out / fname
            path.write_text(_csv_text(t["columns"], t["rows"]))
            manifest["files"].append({"table": name, "file": fname, "columns": t["columns"], "rows": len(t["rows"])})
            written.append(path)
        path = out / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        written.append(path)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return written


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _load(task: str, source: str) -> ScenarioConfig:
    path = Path(source)
    if not path.exists() and task == "reproduce":
        if source == "all" or source in fixture_names():
            return parse_document({"schema": SCHEMA, "name": source, "task": {"type": "reproduce", "target": source}}, source)
    cfg = parse_scenario(path)
    if cfg.task != task:
        if task == "reproduce":
            if not cfg.expect:
                raise ScenarioError([f"{source}: no 'expect' block to reproduce"])
            return cfg
        raise ScenarioError([f"{source}: scenario declares task {cfg.task!r}, not {task!r}"])
    return cfg


def _run_one(task: str, source: str, args) -> tuple[str, dict[str, Any]]:
    try:
        cfg = _load(task, source)
    except ScenarioError as exc:
        doc = {
            "schema": REPORT_SCHEMA, "engine_version": __version__, "scenario": None, "name": Path(source).stem,
            "task": task, "seed": args.seed if args.seed is not None else 0, "status": "invalid", "quantities": {}, "tables": {},
            "certificates": [], "checks": [], "warnings": [], "errors": exc.errors,
        }
        return source, doc
    return source, run_scenario(cfg, oracle=args.oracle, seed=args.seed, timing=args.timing, reproducing=task == "reproduce")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riskshare", description="Risk sharing scenarios: improvements, Pareto checks, frontiers, equilibria, RDU comparisons.")
    parser.add_argument("task", choices=TASKS)
    parser.add_argument("--scenario", required=True, help="scenario JSON file, a directory of them, or a fixture name for reproduce")
    parser.add_argument("--out", help="output directory (json and text go to stdout when omitted)")
    parser.add_argument("--format", choices=("json", "csv", "text"), default="json")
    parser.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    parser.add_argument("--oracle", action="store_true", help="add brute-force cross-checks where the instance is small enough")
    parser.add_argument("--timing", action="store_true", help="record wall time (makes output nondeterministic)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    source = Path(args.scenario)
    if args.format == "csv" and not args.out:
        print("error: --format csv needs --out", file=sys.stderr)
        return EXIT_INVALID
    if source.is_dir():
        files = sorted(str(p) for p in source.glob("*.json"))
        if not files:
            print(f"error: no scenario files in {source}", file=sys.stderr)
            return EXIT_INVALID
        threads = max(1, int(os.environ.get("RISKSHARE_THREADS", os.cpu_count() or 1)))
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda f: _run_one(args.task, f, args), files))
        codes = []
        for f, doc in results:
            code = exit_code(doc)
            codes.append(code)
            if args.out:
                emit_report(doc, Path(args.out) / Path(f).stem, args.format)
            print(f"{Path(f).stem}: {doc['status']} (exit {code})")
        return max(codes)
    _, doc = _run_one(args.task, args.scenario, args)
    if args.out:
        emit_report(doc, args.out, args.format)
    else:
        sys.stdout.write(render_json(doc) if args.format == "json" else render_text(doc))
    for e in doc["errors"]:
        print(f"error: {e}", file=sys.stderr)
    return exit_code(doc)


if __name__ == "__main__":
    raise SystemExit(main())
