"""Optimal micro-batch size for a fixed plan and interval budget.

With the plan and the steady interval budget T1 fixed, the objective is
first_batch(b) + ceil((B-b)/b) * T1 over feasible b.  Feasibility requires the
memory constraints and that every pipeline stage fits within T1, both of which
are monotone in b, so the feasible set is a prefix [1, b_max].

Because first_batch(b) is non-decreasing in b and the round count is a
staircase, the exact argmin (with ties broken toward smaller b) always sits at
the smallest b of some constant-round interval.  The closed-form candidate
b_tilde = sqrt(B*T1/slope) from the continuous relaxation is evaluated too,
together with the per-case feasibility boundaries, but the staircase left
endpoints are what make the candidate search provably exact against the
full scan.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .costmodel import PlanEvaluator, ScenarioCosts, pipeline_rounds
from .scenario import RateTable, Scenario, SplitPlan

CASES = ("both_below", "both_above", "client_below", "server_below")


class MicrobatchInfeasibleError(ValueError):
    """No micro-batch size satisfies the memory and interval constraints."""


@dataclass(frozen=True)
class MicrobatchSolution:
    b_star: int
    case: str
    b_tilde: float   # unconstrained continuous optimizer for the active case
    b_v: int         # tightest per-constraint feasibility boundary, case-adjusted
    objective: float


def _thresholds(ev: PlanEvaluator) -> tuple[int, int]:
    th_c = min(c.bp_threshold for c in ev.costs.clients)
    th_s = min(h.bp_threshold for h in ev.hosts)
    return th_c, th_s


def case_of(b: int, th_c: int, th_s: int) -> str:
    below_c = b <= th_c
    below_s = b <= th_s
    if below_c and below_s:
        return "both_below"
    if not below_c and not below_s:
        return "both_above"
    if below_c:
        return "client_below"   # client flat, server above threshold
    return "server_below"       # server flat, client above threshold


def slope_of_first_batch(
    scenario: Scenario,
    plan: SplitPlan,
    case: str,
    rates: RateTable | None = None,
    costs: ScenarioCosts | None = None,
) -> float:
    """Per-sample growth rate of the first-batch latency within one case.

    Client terms enter at 1/M of their per-shard coefficients (even shard
    approximation); the backward-pass compute slopes switch on only in the
    cases where the respective side sits above its threshold.
    """
    if case not in CASES:
        raise ValueError(f"unknown case {case!r}")
    ev = PlanEvaluator(costs if costs is not None else scenario, plan, rates)
    c = ev.costs
    server_bp_on = case in ("both_above", "client_below")
    client_bp_on = case in ("both_above", "server_below")

    slope = 0.0
    for k in range(2, ev.k_eff + 1):
        host = ev.hosts[k - 2]
        first, last = ev.ranges[k - 2]
        slope += host.intensity * (c.fp_cum[last] - c.fp_cum[first - 1]) / host.compute
        if server_bp_on:
            slope += (
                host.intensity * (c.bp_cum[last] - c.bp_cum[first - 1]) / host.compute
            )
    for k in range(2, ev.k_eff):
        cut = plan.cuts[k - 1]
        src, dst = ev.hosts[k - 2].id, ev.hosts[k - 1].id
        slope += c.act[cut - 1] * c.rates.delay_per_bit(src, dst)
        slope += c.grad[cut] * c.rates.delay_per_bit(dst, src)

    m = len(c.clients)
    cut1 = ev.cut1
    head = ev.hosts[0].id
    up = max(
        (cl.intensity * c.fp_cum[cut1] / cl.compute
         + c.act[cut1 - 1] * c.rates.delay_per_bit(cl.id, head)) / m
        for cl in c.clients
    )
    down = max(
        ((cl.intensity * c.bp_cum[cut1] / cl.compute if client_bp_on else 0.0)
         + c.grad[cut1] * c.rates.delay_per_bit(head, cl.id)) / m
        for cl in c.clients
    )
    return slope + up + down


def _floor_cap(numerator: float, denominator: float) -> float:
    """floor(numerator / denominator) as a cap; no constraint when the term
    does not grow with b."""
    if denominator <= 0.0:
        return math.inf
    return math.floor(numerator / denominator)


def boundary_bv(
    scenario: Scenario,
    plan: SplitPlan,
    t_interval: float,
    case: str,
    rates: RateTable | None = None,
    costs: ScenarioCosts | None = None,
) -> int:
    """Closed-form largest micro-batch honoring every per-constraint cap.

    Memory caps and forward-pass compute/transfer caps apply in every case;
    the backward-pass caps join in the cases where that side's latency grows
    with b.  Client-side caps carry the even-shard 1/M approximation of the
    closed forms; 0 means the interval budget is infeasible outright.
    """
    if case not in CASES:
        raise ValueError(f"unknown case {case!r}")
    ev = PlanEvaluator(costs if costs is not None else scenario, plan, rates)
    c = ev.costs
    m = len(c.clients)
    caps: list[float] = []

    # per-node aggregates over hosted submodels
    agg: dict[str, dict[str, float]] = {}
    for k in range(2, ev.k_eff + 1):
        host = ev.hosts[k - 2]
        first, last = ev.ranges[k - 2]
        entry = agg.setdefault(
            host.id, {"mem": 0.0, "fp": 0.0, "bp": 0.0, "t0": 0.0, "t1": 0.0}
        )
        entry["mem"] += c.mem_per_sample(first, last)
        entry["fp"] += host.intensity * (c.fp_cum[last] - c.fp_cum[first - 1])
        entry["bp"] += host.intensity * (c.bp_cum[last] - c.bp_cum[first - 1])
        entry["t0"] += host.init_fp_s
        entry["t1"] += host.init_bp_s

    server_bp_on = case in ("both_above", "client_below")
    for node_id, entry in agg.items():
        node = c.nodes_by_id[node_id]
        caps.append(_floor_cap(node.memory_bits, entry["mem"]))
        caps.append(
            _floor_cap(node.compute * (t_interval - entry["t0"]), entry["fp"])
        )
        if server_bp_on and entry["bp"] > 0.0:
            cap = node.compute * (t_interval - entry["t1"]) / entry["bp"]
            caps.append(math.floor(cap + node.bp_threshold))

    for k in range(2, ev.k_eff):
        cut = plan.cuts[k - 1]
        src, dst = ev.hosts[k - 2].id, ev.hosts[k - 1].id
        caps.append(
            _floor_cap(t_interval, c.act[cut - 1] * c.rates.delay_per_bit(src, dst))
        )
        caps.append(
            _floor_cap(t_interval, c.grad[cut] * c.rates.delay_per_bit(dst, src))
        )

    cut1 = ev.cut1
    head = ev.hosts[0].id
    client_bp_on = case in ("both_above", "server_below")
    for cl in c.clients:
        caps.append(_floor_cap(m * cl.memory_bits, c.mem_cum[cut1]))
        caps.append(
            _floor_cap(
                m * t_interval, c.act[cut1 - 1] * c.rates.delay_per_bit(cl.id, head))
        )
        caps.append(
            _floor_cap(
                m * t_interval, c.grad[cut1] * c.rates.delay_per_bit(head, cl.id))
        )
        fp_coeff = cl.intensity * c.fp_cum[cut1]
        caps.append(_floor_cap(m * cl.compute * (t_interval - cl.init_fp_s), fp_coeff))
        if client_bp_on:
            bp_coeff = cl.intensity * c.bp_cum[cut1]
            if bp_coeff > 0.0:
                cap = m * cl.compute * (t_interval - cl.init_bp_s) / bp_coeff
                caps.append(math.floor(cap + m * cl.bp_threshold))

    bv = min(caps) if caps else math.inf
    if not math.isfinite(bv):
        return scenario.minibatch
    return max(int(bv), 0)


def b_tilde(
    scenario: Scenario,
    plan: SplitPlan,
    t_interval: float,
    case: str,
    rates: RateTable | None = None,
    costs: ScenarioCosts | None = None,
) -> float:
    """Continuous minimizer sqrt(B * T1 / slope) of the relaxed objective."""
    slope = slope_of_first_batch(scenario, plan, case, rates, costs)
    if slope <= 0.0:
        return float(scenario.minibatch)
    return math.sqrt(scenario.minibatch * t_interval / slope)


def _objective_and_feasible(
    ev: PlanEvaluator, b: int, t_interval: float
) -> tuple[float, bool]:
    if ev.violations(b):
        return math.inf, False
    _, first, interval = ev.totals(b)
    feasible = interval <= t_interval
    rounds = pipeline_rounds(ev.scenario.minibatch, b)
    return first + rounds * t_interval, feasible


def scan_microbatch(
    scenario: Scenario,
    plan: SplitPlan,
    t_interval: float,
    rates: RateTable | None = None,
    costs: ScenarioCosts | None = None,
    strict_interval: bool = False,
) -> MicrobatchSolution:
    """Ground truth: exact objective at every b in [1, B], smallest-b ties."""
    ev = PlanEvaluator(
        costs if costs is not None else scenario, plan, rates, strict_interval)
    B = scenario.minibatch
    best_b = None
    best_obj = math.inf
    for b in range(1, B + 1):
        obj, ok = _objective_and_feasible(ev, b, t_interval)
        if not ok:
            break  # feasibility is monotone: nothing larger can pass
        if obj < best_obj:
            best_obj = obj
            best_b = b
    if best_b is None:
        raise MicrobatchInfeasibleError(
            f"no feasible micro-batch size for interval budget {t_interval:.6g} s"
        )
    return _finish(scenario, plan, ev, best_b, best_obj, t_interval, rates, costs)


def optimal_microbatch(
    scenario: Scenario,
    plan: SplitPlan,
    t_interval: float,
    rates: RateTable | None = None,
    costs: ScenarioCosts | None = None,
    strict_interval: bool = False,
) -> MicrobatchSolution:
    """Closed-form candidate search; exact argmin over the candidate set.

    Candidates: 1 and B; the staircase left endpoints ceil(B/j) where the
    round count changes; floor/ceil of b_tilde per case; the per-case
    feasibility boundaries; the thresholds and their client-shard multiples.
    """
    ev = PlanEvaluator(
        costs if costs is not None else scenario, plan, rates, strict_interval)
    B = scenario.minibatch
    th_c, th_s = _thresholds(ev)
    m = len(ev.costs.clients)

    cands: set[int] = {1, B, th_c, th_c + 1, th_s, th_s + 1, m * th_c, m * th_c + 1}
    # left endpoints of the constant-round intervals: {ceil(B/j)} for all j is
    # covered by quotients at j <= sqrt(B) plus every value up to sqrt(B)+1
    root = int(math.isqrt(B)) + 1
    for q in range(1, root + 1):
        cands.add(q)
        cands.add(-(-B // q))
    for case in CASES:
        bt = b_tilde(scenario, plan, t_interval, case, rates, ev.costs)
        if math.isfinite(bt):
            cands.add(int(math.floor(bt)))
            cands.add(int(math.ceil(bt)))
        bv = boundary_bv(scenario, plan, t_interval, case, rates, ev.costs)
        cands.add(bv)
        cands.add(min(bv, B))

    best_b = None
    best_obj = math.inf
    for b in sorted(c for c in cands if 1 <= c <= B):
        obj, ok = _objective_and_feasible(ev, b, t_interval)
        if not ok:
            continue
        if obj < best_obj:
            best_obj = obj
            best_b = b
    if best_b is None:
        raise MicrobatchInfeasibleError(
            f"no feasible micro-batch size for interval budget {t_interval:.6g} s"
        )
    return _finish(scenario, plan, ev, best_b, best_obj, t_interval, rates, costs)


def best_microbatch(
    scenario: Scenario,
    plan: SplitPlan,
    rates: RateTable | None = None,
    costs: ScenarioCosts | None = None,
    strict_interval: bool = False,
    extra_candidates: tuple[int, ...] = (),
) -> tuple[int, float]:
    """Exact argmin over b of the realized total latency of a fixed plan.

    Unlike the interval-budget problem above, this minimizes
    first_batch(b) + rounds(b) * interval(plan, b) directly.  Both terms are
    non-decreasing in b within a constant-round interval, so the staircase
    left endpoints again contain the argmin; ties prefer smaller b.
    Returns (b, total latency).
    """
    ev = PlanEvaluator(
        costs if costs is not None else scenario, plan, rates, strict_interval)
    B = scenario.minibatch
    cands: set[int] = {1, B}
    cands.update(extra_candidates)
    root = int(math.isqrt(B)) + 1
    for q in range(1, root + 1):
        cands.add(q)
        cands.add(-(-B // q))
    best_b = None
    best_total = math.inf
    for b in sorted(c for c in cands if 1 <= c <= B):
        if ev.violations(b):
            continue
        total = ev.totals(b)[0]
        if total < best_total:
            best_total = total
            best_b = b
    if best_b is None:
        raise MicrobatchInfeasibleError("no memory-feasible micro-batch size")
    return best_b, best_total


def _finish(
    scenario, plan, ev, b_star, objective, t_interval, rates, costs
) -> MicrobatchSolution:
    th_c, th_s = _thresholds(ev)
    case = case_of(b_star, th_c, th_s)
    return MicrobatchSolution(
        b_star=b_star,
        case=case,
        b_tilde=b_tilde(scenario, plan, t_interval, case, rates, ev.costs),
        b_v=boundary_bv(scenario, plan, t_interval, case, rates, ev.costs),
        objective=objective,
    )
