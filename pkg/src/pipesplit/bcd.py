"""Alternating optimization of (split, placement) and micro-batch size, plus
the benchmark schemes it is compared against.

Each outer iteration solves the placement problem exactly at the current
micro-batch size, feeds the realized steady interval as the budget to the
exact micro-batch step, and stops once the total latency change falls below
the tolerance.  Both half-steps are exact argmins, so the total latency trace
never increases.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .costmodel import PlanEvaluator, ScenarioCosts
from .microbatch import MicrobatchInfeasibleError, best_microbatch
from .mspgraph import InfeasibleScenarioError, MspSolution, solve_msp
from .scenario import RateTable, Scenario, SplitPlan

SCHEMES = ("bcd", "rc_op", "rp_oc", "no_pipeline")


@dataclass(frozen=True)
class BcdIteration:
    plan: SplitPlan
    b: int              # micro-batch chosen this iteration
    t_interval: float   # interval budget handed to the micro-batch step
    total_s: float      # latency of (plan, b) after both half-steps
    wall_time: float


@dataclass(frozen=True)
class BcdTrace:
    iterations: tuple[BcdIteration, ...]
    converged: bool
    final: MspSolution

    @property
    def final_b(self) -> int:
        return self.final.b


def _final_solution(
    costs: ScenarioCosts, sol: MspSolution, b: int, strict_interval: bool
) -> MspSolution:
    report = PlanEvaluator(costs, sol.plan, strict_interval=strict_interval).report(b)
    return MspSolution(
        sol.plan, report, b, sol.subgraphs_searched, sol.subgraphs_pruned,
        sol.wall_time, sol.bound_value,
    )


def solve_joint(
    scenario: Scenario,
    tol: float = 0.01,
    b0: int = 20,
    max_iters: int = 50,
    lower_bound_provider=None,
    rates: RateTable | None = None,
    costs: ScenarioCosts | None = None,
    prune: bool = True,
    allow_node_reuse: bool = False,
    strict_interval: bool = False,
    vertex_filter=None,
    starts: tuple[int, ...] | None = None,
    refine_probes: int = 6,
) -> BcdTrace:
    """Alternate exact placement and exact micro-batching until the total
    latency change drops below tol (or the iteration cap, as a safety net).

    The micro-batch half-step minimizes the realized total latency of the
    fixed plan directly, so perturbing either block alone can never improve a
    trace point.  Because the placement found at one micro-batch size can trap
    the descent in a basin, the loop restarts from a short ladder of initial
    sizes (b0, 1, sqrt(B), B by default), then probes the best plan's own
    next-best micro-batch sizes with further short descents, and returns the
    best run's trace.  Infeasible starts other than b0 are skipped silently.
    """
    if costs is None:
        costs = ScenarioCosts(scenario, rates)
    B = scenario.minibatch
    b0 = min(max(b0, 1), B)
    if starts is None:
        ladder = [b0, 1, max(math.isqrt(B), 1), B]
    else:
        ladder = [min(max(s, 1), B) for s in starts] or [b0]
    seen = set()
    ladder = [s for s in ladder if not (s in seen or seen.add(s))]

    best: BcdTrace | None = None
    visited: set[int] = set()
    first_error: InfeasibleScenarioError | None = None

    def attempt(start: int, record_first: bool = False) -> None:
        nonlocal best, first_error
        visited.add(start)
        try:
            trace = _descend(
                scenario, costs, tol, start, max_iters, lower_bound_provider,
                prune, allow_node_reuse, strict_interval, vertex_filter,
            )
        except (InfeasibleScenarioError, MicrobatchInfeasibleError) as exc:
            if record_first and isinstance(exc, InfeasibleScenarioError):
                first_error = exc
            return
        visited.update(it.b for it in trace.iterations)
        if best is None or trace.final.report.total_s < best.final.report.total_s:
            best = trace

    for idx, start in enumerate(ladder):
        attempt(start, record_first=idx == 0)
    if best is not None and refine_probes > 0:
        ev = PlanEvaluator(
            costs, best.final.plan, strict_interval=strict_interval)
        ranked = []
        for cand in _round_step_sizes(B):
            if cand in visited or ev.violations(cand):
                continue
            ranked.append((ev.totals(cand)[0], cand))
        for _, cand in sorted(ranked)[:refine_probes]:
            attempt(cand)
            # uneven client shards bias a plan's curve toward one parity;
            # the neighbour catches basins sitting just off it
            if cand - 1 not in visited and cand > 1:
                attempt(cand - 1)
    if best is None:
        raise first_error or InfeasibleScenarioError(
            "no feasible starting micro-batch size")
    return best


def _round_step_sizes(minibatch: int) -> list[int]:
    """Micro-batch sizes where the round count steps (plus 1 and B)."""
    out = {1, minibatch}
    root = math.isqrt(minibatch) + 1
    for q in range(1, root + 1):
        out.add(q)
        out.add(-(-minibatch // q))
    return sorted(out)


def _descend(
    scenario, costs, tol, b0, max_iters, lower_bound_provider,
    prune, allow_node_reuse, strict_interval, vertex_filter,
) -> BcdTrace:
    b = b0
    iterations: list[BcdIteration] = []
    prev_total = None
    converged = False
    sol = None
    for _ in range(max_iters):
        t0 = time.perf_counter()
        sol = solve_msp(
            scenario, b,
            lower_bound_provider=lower_bound_provider,
            costs=costs,
            prune=prune,
            allow_node_reuse=allow_node_reuse,
            strict_interval=strict_interval,
            vertex_filter=vertex_filter,
        )
        t_interval = sol.report.interval_s
        b, total = best_microbatch(
            scenario, sol.plan,
            costs=costs, strict_interval=strict_interval,
            extra_candidates=(b,),
        )
        iterations.append(
            BcdIteration(sol.plan, b, t_interval, total,
                         time.perf_counter() - t0)
        )
        if prev_total is not None and abs(total - prev_total) < tol:
            converged = True
            break
        prev_total = total
    return BcdTrace(
        tuple(iterations), converged,
        _final_solution(costs, sol, b, strict_interval),
    )


# ---------------------------------------------------------------------------
# benchmark schemes


def _range_filter(cuts: tuple[int, ...], n_layers: int):
    """Admit only vertices matching the fixed cut ranges."""
    bounds = [(1, cuts[0])]
    for a, c in zip(cuts, cuts[1:]):
        bounds.append((a + 1, c))
    bounds.append((cuts[-1] + 1, n_layers))
    k_eff = len(bounds)

    def admit(v) -> bool:
        if v.k > k_eff:
            return False
        return (v.first, v.last) == bounds[v.k - 1]

    return admit


def _fixed_placement_filter(placement: tuple[str, ...], n_layers: int):
    """Admit only vertices on the fixed host sequence, forcing its length."""
    k_eff = len(placement) + 1

    def admit(v) -> bool:
        if v.k == 1:
            return True
        if v.k > k_eff or v.node_id != placement[v.k - 2]:
            return False
        # force the full chain: intermediates stop short of the last layer
        if v.k < k_eff:
            return v.last < n_layers
        return v.last == n_layers

    return admit


def solve_baseline(
    scenario: Scenario,
    scheme: str,
    seed: int = 0,
    b0: int = 20,
    tol: float = 0.01,
    max_iters: int = 50,
    max_retries: int = 1000,
    rates: RateTable | None = None,
    costs: ScenarioCosts | None = None,
    allow_node_reuse: bool = False,
    strict_interval: bool = False,
) -> MspSolution:
    """Benchmark schemes: random cuts with optimal placement, random placement
    with optimal cuts, or the full optimizer without pipelining (b = B)."""
    if scheme not in ("rc_op", "rp_oc", "no_pipeline"):
        raise ValueError(f"unknown baseline scheme {scheme!r}")
    if costs is None:
        costs = ScenarioCosts(scenario, rates)

    if scheme == "no_pipeline":
        sol = solve_msp(
            scenario, scenario.minibatch, costs=costs,
            allow_node_reuse=allow_node_reuse, strict_interval=strict_interval,
        )
        return sol

    rng = np.random.default_rng((seed, 0 if scheme == "rc_op" else 1))
    n_layers = scenario.layer_count
    server_ids = sorted(n.id for n in scenario.servers())
    last_error: Exception | None = None
    for _ in range(max_retries):
        k_eff = int(rng.integers(2, scenario.max_submodels + 1))
        if scheme == "rc_op":
            cuts = tuple(
                sorted(rng.choice(n_layers - 1, size=k_eff - 1, replace=False) + 1)
            )
            cuts = tuple(int(c) for c in cuts)
            vfilter = _range_filter(cuts, n_layers)
        else:
            hosts: list[str] = []
            for _k in range(k_eff - 1):
                banned = set(hosts) if not allow_node_reuse else (
                    {hosts[-1]} if hosts else set())
                options = [sid for sid in server_ids if sid not in banned]
                if not options:
                    break
                hosts.append(str(rng.choice(options)))
            if len(hosts) != k_eff - 1:
                continue
            vfilter = _fixed_placement_filter(tuple(hosts), n_layers)
        try:
            trace = solve_joint(
                scenario, tol=tol, b0=b0, max_iters=max_iters,
                costs=costs, allow_node_reuse=allow_node_reuse,
                strict_interval=strict_interval, vertex_filter=vfilter,
            )
            return trace.final
        except InfeasibleScenarioError as exc:
            last_error = exc
            continue
    raise InfeasibleScenarioError(
        f"{scheme}: no feasible random draw in {max_retries} tries "
        f"(last: {last_error})"
    )
