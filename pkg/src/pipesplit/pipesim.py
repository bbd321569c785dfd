"""Discrete-event simulation of the micro-batch pipeline.

The pipeline is simulated as a chain of unit-capacity FIFO stages with
unbounded buffers; the makespan emerges from the event loop rather than from
the analytic formulas, which makes it an independent check of the cost model.
A perturbed mode rescales every node's compute speed and every directed
link's rate by truncated Gaussian factors before deriving stage times, to
study robustness against measurement noise.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, replace
from heapq import heappop, heappush

import numpy as np

from .costmodel import (
    InfeasiblePlanError,
    PlanEvaluator,
    ScenarioCosts,
    pipeline_rounds,
)
from .scenario import RateTable, Scenario, SplitPlan, effective_rate_matrix


@dataclass(frozen=True)
class SimResult:
    makespan: float
    stage_labels: tuple[tuple[str, int], ...]   # (kind, submodel/boundary index)
    busy: tuple[float, ...]                     # total service time per stage
    idle: tuple[float, ...]                     # makespan minus busy per stage
    num_micro_batches: int
    events: tuple[tuple[str, float, str, int], ...] | None


def _perturbed_evaluator(
    scenario: Scenario,
    plan: SplitPlan,
    cv_compute: float,
    cv_rate: float,
    seed: int,
) -> PlanEvaluator:
    """Rescale node speeds and link rates by 1 + N(0, cv^2), floored at 0.1."""
    rng = np.random.default_rng((int(seed), 0xD15C))
    nodes = tuple(
        replace(n, compute=n.compute * max(0.1, 1.0 + rng.normal(0.0, cv_compute)))
        for n in scenario.nodes
    )
    factors = {
        (l.src, l.dst): max(0.1, 1.0 + rng.normal(0.0, cv_rate))
        for l in scenario.links
    }
    perturbed = replace(scenario, nodes=nodes)
    rates = effective_rate_matrix(perturbed, link_rate_factors=factors)
    return PlanEvaluator(ScenarioCosts(perturbed, rates), plan)


def simulate(
    scenario: Scenario,
    plan: SplitPlan,
    b: int,
    mode: str = "nominal",
    cv_compute: float = 0.0,
    cv_rate: float = 0.0,
    seed: int = 0,
    ragged_last: bool = False,
    collect_events: bool = False,
    rates: RateTable | None = None,
    costs: ScenarioCosts | None = None,
) -> SimResult:
    """Run ceil(B/b) micro-batches of size b through the stage chain.

    nominal mode uses the cost model's stage times verbatim; perturbed mode
    rescales resources first.  With ragged_last, the final micro-batch only
    carries the remainder of the mini-batch instead of a full b samples.
    """
    if mode not in ("nominal", "perturbed"):
        raise ValueError(f"unknown mode {mode!r}")
    nominal_ev = PlanEvaluator(costs if costs is not None else scenario, plan, rates)
    bad = nominal_ev.violations(b)
    if bad:
        raise InfeasiblePlanError(bad)
    if mode == "perturbed":
        ev = _perturbed_evaluator(scenario, plan, cv_compute, cv_rate, seed)
    else:
        ev = nominal_ev

    num = pipeline_rounds(scenario.minibatch, b) + 1
    chain = ev.stage_times(b).chain()
    labels = tuple((kind, idx) for kind, idx, _ in chain)
    service = [t for _, _, t in chain]
    per_batch = [service] * num
    if ragged_last:
        rem = scenario.minibatch - (num - 1) * b
        if 0 < rem < b:
            last_chain = ev.stage_times(rem).chain()
            per_batch = [service] * (num - 1) + [[t for _, _, t in last_chain]]

    n_stages = len(chain)
    queues = [deque() for _ in range(n_stages)]
    busy = [False] * n_stages
    busy_time = [0.0] * n_stages
    log: list[tuple[str, float, str, int]] | None = [] if collect_events else None
    heap: list[tuple[float, int, int]] = []  # (time, stage, micro-batch)
    makespan = 0.0

    def start(stage: int, mb: int, now: float) -> None:
        busy[stage] = True
        dt = per_batch[mb][stage]
        busy_time[stage] += dt
        if log is not None:
            log.append(("start", now, f"{labels[stage][0]}:{labels[stage][1]}", mb))
        heappush(heap, (now + dt, stage, mb))

    for mb in range(num):
        queues[0].append(mb)
    start(0, queues[0].popleft(), 0.0)

    while heap:
        now, stage, mb = heappop(heap)
        busy[stage] = False
        makespan = now
        if log is not None:
            log.append(("finish", now, f"{labels[stage][0]}:{labels[stage][1]}", mb))
        if stage + 1 < n_stages:
            queues[stage + 1].append(mb)
            if not busy[stage + 1]:
                start(stage + 1, queues[stage + 1].popleft(), now)
        if queues[stage]:
            start(stage, queues[stage].popleft(), now)

    return SimResult(
        makespan=makespan,
        stage_labels=labels,
        busy=tuple(busy_time),
        idle=tuple(makespan - t for t in busy_time),
        num_micro_batches=num,
        events=tuple(log) if log is not None else None,
    )


def export_event_log(result: SimResult, path: str) -> None:
    """Write the event log as CSV: event,time_s,stage,micro_batch."""
    if result.events is None:
        raise ValueError("simulation ran without collect_events")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["event", "time_s", "stage", "micro_batch"])
        for event, t, stage, mb in result.events:
            writer.writerow([event, repr(t), stage, mb])
