"""Analytic latency and memory model for a pipelined split plan.

Every solver and the discrete-event simulator are tested against this module.
The pipeline is a chain of unit-capacity stages per micro-batch:

    client FP+uplink -> server FP / link FP ... -> server BP / link BP
    (reverse order) -> client downlink+BP

Client compute and its boundary transfer form one sequential stage; server
compute stages and inter-server transfers overlap as separate stages.  The
first-batch latency sums one instance of every stage; the steady interval is
the bottleneck stage; total latency adds ceil((B-b)/b) intervals on top.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .scenario import (
    NodeProfile,
    RateTable,
    Scenario,
    SplitPlan,
    effective_rate_matrix,
)


class InfeasiblePlanError(ValueError):
    def __init__(self, violations: list["Violation"]):
        super().__init__("; ".join(str(v) for v in violations))
        self.violations = violations


@dataclass(frozen=True)
class Violation:
    constraint: str  # e.g. "client_memory", "node_memory", "micro_batch_range"
    subject: str     # node id or plan element
    detail: str

    def __str__(self) -> str:
        return f"{self.constraint}[{self.subject}]: {self.detail}"


@dataclass(frozen=True)
class StageTimes:
    """Per-stage service times in chain order for one micro-batch of size b.

    server_fp/server_bp are indexed by submodel k = 2..K_eff (offset k-2);
    link_fp/link_bp cover the server-server boundaries k -> k+1 for
    k = 2..K_eff-1 (offset k-2).
    """

    client_fp_plus_uplink: float
    client_bp_plus_downlink: float
    server_fp: tuple[float, ...]
    server_bp: tuple[float, ...]
    link_fp: tuple[float, ...]
    link_bp: tuple[float, ...]

    def chain(self) -> list[tuple[str, int, float]]:
        """Stages in traversal order: (kind, submodel-or-boundary index, seconds)."""
        k_eff = len(self.server_fp) + 1
        out: list[tuple[str, int, float]] = [
            ("client_fp_tx", 1, self.client_fp_plus_uplink)
        ]
        for k in range(2, k_eff + 1):
            out.append(("server_fp", k, self.server_fp[k - 2]))
            if k <= k_eff - 1:
                out.append(("link_fp", k, self.link_fp[k - 2]))
        for k in range(k_eff, 1, -1):
            out.append(("server_bp", k, self.server_bp[k - 2]))
            if k >= 3:
                out.append(("link_bp", k - 1, self.link_bp[k - 3]))
        out.append(("client_bp_rx", 1, self.client_bp_plus_downlink))
        return out


@dataclass(frozen=True)
class LatencyReport:
    total_s: float          # whole-round latency
    first_batch_s: float    # first micro-batch through all FP and BP stages
    interval_s: float       # steady-state inter-batch interval (bottleneck)
    micro_batch: int
    num_micro_batches: int
    stages: StageTimes


def shard_sizes(b: int, num_clients: int) -> list[int]:
    """Split a micro-batch across clients: the last client takes the remainder."""
    if b < 1 or num_clients < 1:
        raise ValueError(f"need b >= 1 and clients >= 1, got {b}, {num_clients}")
    base = b // num_clients
    return [base] * (num_clients - 1) + [b - (num_clients - 1) * base]


def pipeline_rounds(minibatch: int, b: int) -> int:
    """Number of steady-state intervals after the first batch: ceil((B-b)/b)."""
    return -((minibatch - b) // -b)


def _fp_time(batch: int, node: NodeProfile, work: float) -> float:
    return batch * node.intensity * work / node.compute + node.init_fp_s


def _bp_time(batch: int, node: NodeProfile, work: float) -> float:
    # flat at or below the threshold, linear in the excess above it
    if batch <= node.bp_threshold:
        return node.init_bp_s
    return (
        (batch - node.bp_threshold) * node.intensity * work / node.compute
        + node.init_bp_s
    )


class ScenarioCosts:
    """Per-scenario tables shared by the evaluator, the assignment graph, and
    the bound/LP builders, so all of them run the same float arithmetic."""

    def __init__(self, scenario: Scenario, rates: RateTable | None = None):
        self.scenario = scenario
        self.rates = rates if rates is not None else effective_rate_matrix(scenario)
        self.clients = scenario.clients()
        self.servers = scenario.servers()
        self.server_rank = {n.id: i for i, n in enumerate(
            sorted(self.servers, key=lambda n: n.id))}
        self.nodes_by_id = {n.id: n for n in scenario.nodes}
        layers = scenario.layers
        self.layer_count = len(layers)
        self.fp_cum = [0.0] + [ly.fp_work_cum for ly in layers]
        self.bp_cum = [0.0] + [ly.bp_work_cum for ly in layers]
        self.mem_cum = [0.0] + [
            ly.act_bits_cum + ly.grad_bits_cum + ly.opt_state_bits_cum
            + ly.param_bits_cum
            for ly in layers
        ]
        self.act = [ly.act_bits for ly in layers]    # act[i-1]: layer i output
        self.grad = [ly.grad_bits for ly in layers]  # grad[i-1]: gradients at layer i

    # -- per-stage primitives (single source of truth) ----------------------

    def server_fp_time(self, node: NodeProfile, first: int, last: int, b: int) -> float:
        return _fp_time(b, node, self.fp_cum[last] - self.fp_cum[first - 1])

    def server_bp_time(self, node: NodeProfile, first: int, last: int, b: int) -> float:
        return _bp_time(b, node, self.bp_cum[last] - self.bp_cum[first - 1])

    def link_fp_time(self, cut: int, src_id: str, dst_id: str, b: int) -> float:
        """Activations of the cut layer crossing src -> dst."""
        return b * self.act[cut - 1] * self.rates.delay_per_bit(src_id, dst_id)

    def link_bp_time(self, cut: int, src_id: str, dst_id: str, b: int) -> float:
        """Gradients at layer cut+1 crossing back dst -> src."""
        return b * self.grad[cut] * self.rates.delay_per_bit(dst_id, src_id)

    def client_uplink_times(self, cut1: int, host_id: str, b: int) -> list[float]:
        shards = shard_sizes(b, len(self.clients))
        phi = self.act[cut1 - 1]
        return [
            bm * phi * self.rates.delay_per_bit(c.id, host_id)
            for c, bm in zip(self.clients, shards)
        ]

    def client_downlink_times(self, cut1: int, host_id: str, b: int) -> list[float]:
        shards = shard_sizes(b, len(self.clients))
        phi = self.grad[cut1]
        return [
            bm * phi * self.rates.delay_per_bit(host_id, c.id)
            for c, bm in zip(self.clients, shards)
        ]

    def client_composite(self, cut1: int, host_id: str, b: int) -> tuple[float, float]:
        """(FP compute + uplink, downlink + BP compute), each a max over clients."""
        shards = shard_sizes(b, len(self.clients))
        fp_work = self.fp_cum[cut1]
        bp_work = self.bp_cum[cut1]
        phi_up = self.act[cut1 - 1]
        phi_down = self.grad[cut1]
        up = -math.inf
        down = -math.inf
        for c, bm in zip(self.clients, shards):
            t_up = (_fp_time(bm, c, fp_work)
                    + bm * phi_up * self.rates.delay_per_bit(c.id, host_id))
            t_down = (_bp_time(bm, c, bp_work)
                      + bm * phi_down * self.rates.delay_per_bit(host_id, c.id))
            up = max(up, t_up)
            down = max(down, t_down)
        return up, down

    # -- memory --------------------------------------------------------------

    def mem_per_sample(self, first: int, last: int) -> float:
        return self.mem_cum[last] - self.mem_cum[first - 1]

    def client_memory_violations(self, cut1: int, b: int) -> list[Violation]:
        shards = shard_sizes(b, len(self.clients))
        per_sample = self.mem_cum[cut1]
        out = []
        for c, bm in zip(self.clients, shards):
            need = bm * per_sample
            if need > c.memory_bits:
                out.append(Violation(
                    "client_memory", c.id,
                    f"needs {need:.3e} bits, has {c.memory_bits:.3e}"))
        return out

    def client_memory_ok(self, cut1: int, b: int) -> bool:
        shards = shard_sizes(b, len(self.clients))
        per_sample = self.mem_cum[cut1]
        return all(bm * per_sample <= c.memory_bits
                   for c, bm in zip(self.clients, shards))

    def server_memory_ok(self, node: NodeProfile, first: int, last: int, b: int) -> bool:
        return b * self.mem_per_sample(first, last) <= node.memory_bits


class PlanEvaluator:
    """Pre-resolved view of (scenario, plan) for fast per-b evaluation.

    Reuse one instance when sweeping micro-batch sizes for a fixed plan; the
    free functions below wrap it for one-shot calls.
    """

    def __init__(
        self,
        costs_or_scenario: ScenarioCosts | Scenario,
        plan: SplitPlan,
        rates: RateTable | None = None,
        strict_interval: bool = False,
    ):
        if isinstance(costs_or_scenario, ScenarioCosts):
            self.costs = costs_or_scenario
        else:
            self.costs = ScenarioCosts(costs_or_scenario, rates)
        self.scenario = self.costs.scenario
        self.plan = plan
        self.strict_interval = strict_interval
        self.k_eff = plan.effective_count
        n_layers = self.costs.layer_count

        self.hosts: list[NodeProfile] = [
            self.costs.nodes_by_id[plan.placement[k - 2]]
            for k in range(2, self.k_eff + 1)
        ]
        self.cut1 = plan.cuts[0]
        self.ranges: list[tuple[int, int]] = [
            plan.submodel_range(k, n_layers) for k in range(2, self.k_eff + 1)
        ]
        self.client_mem_per_sample = self.costs.mem_cum[self.cut1]
        self.server_mem_per_sample = [
            self.costs.mem_per_sample(first, last) for first, last in self.ranges
        ]

    # -- per-stage times -----------------------------------------------------

    def client_composite_times(self, b: int) -> tuple[float, float]:
        return self.costs.client_composite(self.cut1, self.hosts[0].id, b)

    def client_uplink_times(self, b: int) -> list[float]:
        return self.costs.client_uplink_times(self.cut1, self.hosts[0].id, b)

    def client_downlink_times(self, b: int) -> list[float]:
        return self.costs.client_downlink_times(self.cut1, self.hosts[0].id, b)

    def server_fp_time(self, k: int, b: int) -> float:
        first, last = self.ranges[k - 2]
        return self.costs.server_fp_time(self.hosts[k - 2], first, last, b)

    def server_bp_time(self, k: int, b: int) -> float:
        first, last = self.ranges[k - 2]
        return self.costs.server_bp_time(self.hosts[k - 2], first, last, b)

    def link_fp_time(self, k: int, b: int) -> float:
        cut = self.plan.cuts[k - 1]
        return self.costs.link_fp_time(
            cut, self.hosts[k - 2].id, self.hosts[k - 1].id, b)

    def link_bp_time(self, k: int, b: int) -> float:
        cut = self.plan.cuts[k - 1]
        return self.costs.link_bp_time(
            cut, self.hosts[k - 2].id, self.hosts[k - 1].id, b)

    def stage_times(self, b: int) -> StageTimes:
        up, down = self.client_composite_times(b)
        return StageTimes(
            client_fp_plus_uplink=up,
            client_bp_plus_downlink=down,
            server_fp=tuple(
                self.server_fp_time(k, b) for k in range(2, self.k_eff + 1)
            ),
            server_bp=tuple(
                self.server_bp_time(k, b) for k in range(2, self.k_eff + 1)
            ),
            link_fp=tuple(self.link_fp_time(k, b) for k in range(2, self.k_eff)),
            link_bp=tuple(self.link_bp_time(k, b) for k in range(2, self.k_eff)),
        )

    # -- feasibility -----------------------------------------------------------

    def violations(self, b: int) -> list[Violation]:
        out: list[Violation] = []
        B = self.scenario.minibatch
        if not (1 <= b <= B):
            out.append(
                Violation("micro_batch_range", str(b), f"b must be in [1, {B}]")
            )
            return out
        out.extend(self.costs.client_memory_violations(self.cut1, b))
        per_node: dict[str, float] = {}
        for k in range(2, self.k_eff + 1):
            host = self.hosts[k - 2]
            per_node[host.id] = (
                per_node.get(host.id, 0.0) + b * self.server_mem_per_sample[k - 2]
            )
        for node_id, need in per_node.items():
            cap = self.costs.nodes_by_id[node_id].memory_bits
            if need > cap:
                out.append(
                    Violation(
                        "node_memory", node_id,
                        f"needs {need:.3e} bits, has {cap:.3e}",
                    )
                )
        return out

    def feasible(self, b: int) -> bool:
        return not self.violations(b)

    # -- aggregation -----------------------------------------------------------

    def totals(self, b: int, stages: StageTimes | None = None) -> tuple[float, float, float]:
        """(total, first_batch, interval) latency for micro-batch size b.

        The first-batch sum folds in boundary order: the client composite pair,
        then per inner boundary (link FP + link BP + that submodel's FP + BP),
        then the final submodel's compute.  The assignment graph mirrors this
        fold so path sums match bit for bit.
        """
        st = stages if stages is not None else self.stage_times(b)
        k_eff = self.k_eff
        first = st.client_fp_plus_uplink + st.client_bp_plus_downlink
        for k in range(2, k_eff):
            first += (
                st.link_fp[k - 2] + st.link_bp[k - 2]
                + st.server_fp[k - 2] + st.server_bp[k - 2]
            )
        first += st.server_fp[k_eff - 2] + st.server_bp[k_eff - 2]

        candidates = [st.client_fp_plus_uplink, st.client_bp_plus_downlink]
        last = k_eff - 1 if self.strict_interval else k_eff
        candidates.extend(st.server_fp[: last - 1])
        candidates.extend(st.server_bp[: last - 1])
        candidates.extend(st.link_fp)
        candidates.extend(st.link_bp)
        interval = max(candidates)
        total = first + pipeline_rounds(self.scenario.minibatch, b) * interval
        return total, first, interval

    def report(self, b: int, validate: bool = True) -> LatencyReport:
        if validate:
            bad = self.violations(b)
            if bad:
                raise InfeasiblePlanError(bad)
        st = self.stage_times(b)
        total, first, interval = self.totals(b, st)
        return LatencyReport(
            total_s=total,
            first_batch_s=first,
            interval_s=interval,
            micro_batch=b,
            num_micro_batches=pipeline_rounds(self.scenario.minibatch, b) + 1,
            stages=st,
        )


# ---------------------------------------------------------------------------
# free-function surface


def fp_latency(scenario: Scenario, plan: SplitPlan, k: int, b: int,
               client_index: int = 0) -> float:
    """Forward-pass compute time of submodel k (one client's shard for k=1)."""
    ev = PlanEvaluator(scenario, plan)
    if k == 1:
        c = ev.costs.clients[client_index]
        bm = shard_sizes(b, len(ev.costs.clients))[client_index]
        return _fp_time(bm, c, ev.costs.fp_cum[ev.cut1])
    return ev.server_fp_time(k, b)


def bp_latency(scenario: Scenario, plan: SplitPlan, k: int, b: int,
               client_index: int = 0) -> float:
    ev = PlanEvaluator(scenario, plan)
    if k == 1:
        c = ev.costs.clients[client_index]
        bm = shard_sizes(b, len(ev.costs.clients))[client_index]
        return _bp_time(bm, c, ev.costs.bp_cum[ev.cut1])
    return ev.server_bp_time(k, b)


def activation_bits(scenario: Scenario, plan: SplitPlan, k: int, b: int) -> float:
    """Bits crossing boundary k -> k+1 forward (max client shard for k=1)."""
    if not (1 <= k <= plan.effective_count - 1):
        raise ValueError(f"boundary {k} does not exist")
    cut = plan.cuts[k - 1]
    phi = scenario.layers[cut - 1].act_bits
    if k == 1:
        return max(shard_sizes(b, len(scenario.clients()))) * phi
    return b * phi


def gradient_bits(scenario: Scenario, plan: SplitPlan, k: int, b: int) -> float:
    """Bits crossing boundary k -> k+1 backward (gradients at layer cut+1)."""
    if not (1 <= k <= plan.effective_count - 1):
        raise ValueError(f"boundary {k} does not exist")
    cut = plan.cuts[k - 1]
    phi = scenario.layers[cut].grad_bits
    if k == 1:
        return max(shard_sizes(b, len(scenario.clients()))) * phi
    return b * phi


def comm_latency(
    scenario: Scenario,
    plan: SplitPlan,
    k: int,
    b: int,
    rates: RateTable | None = None,
    direction: str = "fp",
    per_client: bool = False,
) -> float | tuple[list[float], float]:
    """Transfer time over boundary k (max over clients for k=1).

    With per_client=True and k=1, returns (per-client vector, max)."""
    ev = PlanEvaluator(scenario, plan, rates)
    if k == 1:
        times = (
            ev.client_uplink_times(b) if direction == "fp"
            else ev.client_downlink_times(b)
        )
        return (times, max(times)) if per_client else max(times)
    if not (2 <= k <= plan.effective_count - 1):
        raise ValueError(f"boundary {k} does not exist")
    return ev.link_fp_time(k, b) if direction == "fp" else ev.link_bp_time(k, b)


def memory_bits(scenario: Scenario, plan: SplitPlan, k: int, b: int,
                client_index: int = 0) -> float:
    """Memory demand of submodel k at micro-batch b (one client's shard for k=1)."""
    ev = PlanEvaluator(scenario, plan)
    if k == 1:
        bm = shard_sizes(b, len(ev.costs.clients))[client_index]
        return bm * ev.client_mem_per_sample
    return b * ev.server_mem_per_sample[k - 2]


def check_feasibility(scenario: Scenario, plan: SplitPlan, b: int) -> list[Violation]:
    """All constraint violations of (plan, b); empty list means feasible."""
    return PlanEvaluator(scenario, plan).violations(b)


def evaluate(
    scenario: Scenario,
    plan: SplitPlan,
    b: int,
    rates: RateTable | None = None,
    strict_interval: bool = False,
) -> LatencyReport:
    """Full latency report; raises InfeasiblePlanError on infeasible input."""
    return PlanEvaluator(scenario, plan, rates, strict_interval).report(b)


def solution_sort_key(
    total_s: float,
    interval_s: float,
    plan: SplitPlan,
    server_rank: dict[str, int],
) -> tuple:
    """Deterministic order over solutions: total latency, then interval, then
    fewer submodels, then lexicographic placement, then cuts."""
    return (
        total_s,
        interval_s,
        plan.effective_count,
        tuple(server_rank[p] for p in plan.placement),
        plan.cuts,
    )
