"""Brute-force ground truth for small instances.

Exhaustively enumerates canonical plans (and micro-batch sizes for the joint
search) and returns the exact argmin under the same deterministic order the
graph solver uses.  A closed-form option-count estimate refuses runs that
would exceed the configured evaluation budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations, product

from .costmodel import (
    LatencyReport,
    PlanEvaluator,
    ScenarioCosts,
    solution_sort_key,
)
from .scenario import RateTable, Scenario, SplitPlan

DEFAULT_LIMIT = 10_000_000


class EnumerationLimitError(ValueError):
    def __init__(self, estimate: int, limit: int):
        super().__init__(
            f"enumeration would evaluate ~{estimate:.3g} options, over the "
            f"limit of {limit:.3g}"
        )
        self.estimate = estimate
        self.limit = limit


@dataclass(frozen=True)
class OracleResult:
    plan: SplitPlan
    report: LatencyReport
    b: int
    evaluated: int  # number of (plan, b) evaluations performed


def estimate_enumeration_count(
    layer_count: int, servers: int, minibatch: int, max_submodels: int | None = None
) -> int:
    """Closed-form size of the exhaustive joint search:
    sum over k of B * C(I-1, k-1) * k! * C(N, k)."""
    upper = servers if max_submodels is None else min(servers, max_submodels)
    total = 0
    for k in range(2, upper + 1):
        total += (
            minibatch
            * math.comb(layer_count - 1, k - 1)
            * math.factorial(k)
            * math.comb(servers, k)
        )
    return total


def plan_count(
    layer_count: int,
    servers: int,
    max_submodels: int,
    allow_node_reuse: bool = False,
) -> int:
    """Exact number of canonical plans at a fixed micro-batch size."""
    total = 0
    for k_eff in range(2, max_submodels + 1):
        hosts = k_eff - 1
        if allow_node_reuse:
            placements = servers * (servers - 1) ** (hosts - 1) if hosts else 1
        else:
            placements = math.perm(servers, hosts)
        total += math.comb(layer_count - 1, k_eff - 1) * placements
    return total


def iter_plans(scenario: Scenario, allow_node_reuse: bool = False):
    """All canonical plans in deterministic order."""
    server_ids = sorted(n.id for n in scenario.servers())
    n_layers = scenario.layer_count
    for k_eff in range(2, scenario.max_submodels + 1):
        for cuts in combinations(range(1, n_layers), k_eff - 1):
            for placement in product(server_ids, repeat=k_eff - 1):
                if allow_node_reuse:
                    if any(a == b for a, b in zip(placement, placement[1:])):
                        continue
                elif len(set(placement)) != len(placement):
                    continue
                yield SplitPlan(cuts, placement)


def enumerate_msp(
    scenario: Scenario,
    b: int,
    limit: int = DEFAULT_LIMIT,
    allow_node_reuse: bool = False,
    strict_interval: bool = False,
    rates: RateTable | None = None,
    costs: ScenarioCosts | None = None,
) -> OracleResult:
    """Exact optimum over all canonical plans at fixed micro-batch size."""
    estimate = plan_count(
        scenario.layer_count, len(scenario.servers()), scenario.max_submodels,
        allow_node_reuse,
    )
    if estimate > limit:
        raise EnumerationLimitError(estimate, limit)
    if costs is None:
        costs = ScenarioCosts(scenario, rates)
    best_key = None
    best: tuple[SplitPlan, LatencyReport] | None = None
    evaluated = 0
    for plan in iter_plans(scenario, allow_node_reuse):
        ev = PlanEvaluator(costs, plan, strict_interval=strict_interval)
        evaluated += 1
        if ev.violations(b):
            continue
        total, first, interval = ev.totals(b)
        key = solution_sort_key(total, interval, plan, costs.server_rank)
        if best_key is None or key < best_key:
            best_key = key
            best = (plan, ev.report(b, validate=False))
    if best is None:
        raise ValueError(f"no feasible plan at micro-batch {b}")
    return OracleResult(best[0], best[1], b, evaluated)


def enumerate_joint(
    scenario: Scenario,
    limit: int = DEFAULT_LIMIT,
    allow_node_reuse: bool = False,
    strict_interval: bool = False,
    rates: RateTable | None = None,
    costs: ScenarioCosts | None = None,
) -> OracleResult:
    """Exact joint optimum over (plan, b): full scan of every micro-batch size
    for every canonical plan.  Ties prefer the solution order, then smaller b."""
    n_plans = plan_count(
        scenario.layer_count, len(scenario.servers()), scenario.max_submodels,
        allow_node_reuse,
    )
    estimate = n_plans * scenario.minibatch
    if estimate > limit:
        raise EnumerationLimitError(estimate, limit)
    if costs is None:
        costs = ScenarioCosts(scenario, rates)
    B = scenario.minibatch
    best_key = None
    best: tuple[SplitPlan, int] | None = None
    evaluated = 0
    for plan in iter_plans(scenario, allow_node_reuse):
        ev = PlanEvaluator(costs, plan, strict_interval=strict_interval)
        for b in range(1, B + 1):
            evaluated += 1
            if ev.violations(b):
                break  # memory demand grows with b
            total, first, interval = ev.totals(b)
            key = solution_sort_key(total, interval, plan, costs.server_rank) + (b,)
            if best_key is None or key < best_key:
                best_key = key
                best = (plan, b)
    if best is None:
        raise ValueError("no feasible (plan, micro-batch) pair")
    plan, b = best
    report = PlanEvaluator(costs, plan, strict_interval=strict_interval).report(b)
    return OracleResult(plan, report, b, evaluated)
