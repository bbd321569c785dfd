"""Assignment graph and the exact splitting/placement (MSP) solver.

The search space of (cuts, placement) maps onto a layered DAG: a vertex
assigns a contiguous layer range to one submodel on one node, and a
source-to-destination path is exactly one canonical plan.  Each edge carries
two weights: a sum cost (its share of the first-batch latency, so path sums
equal the evaluator's first-batch figure bit for bit) and a bottleneck cost
(the largest single pipeline stage the edge contributes).

The solver scans candidate bottleneck values in descending order; for each
value it runs a min-sum pass over the subgraph capped at that bottleneck and
scores sum + rounds * bottleneck.  Three work-saving rules never change the
answer: a lower-bound skip (bound + rounds * cap above the incumbent), a jump
past caps between a pass's cap and the bottleneck its winning path actually
realized, and a stop once the capped min-sum alone exceeds the incumbent.
"""

from __future__ import annotations

import bisect
import heapq
import time
from dataclasses import dataclass

import numpy as np

from .costmodel import (
    LatencyReport,
    PlanEvaluator,
    ScenarioCosts,
    pipeline_rounds,
    solution_sort_key,
)
from .scenario import RateTable, Scenario, SplitPlan

SOURCE = -1  # virtual source vertex index
DEST = -2    # virtual destination vertex index


class InfeasibleScenarioError(ValueError):
    """No feasible plan exists at the requested micro-batch size."""


@dataclass(frozen=True)
class Vertex:
    index: int
    k: int                 # submodel position (1 = client pool)
    node_id: str | None    # None for the client pool
    first: int             # first layer (inclusive)
    last: int              # last layer (inclusive)
    rank: int              # server rank by id order; -1 for the pool
    mem_ok: bool           # this submodel alone fits its host at this b


@dataclass(frozen=True)
class Edge:
    index: int
    tail: int              # vertex index, or SOURCE
    head: int              # vertex index, or DEST
    cost: float            # contribution to the first-batch sum
    beta: float            # max component stage (bottleneck weight)
    stages: tuple[tuple[str, float], ...]


@dataclass(frozen=True)
class PathResult:
    cost: float
    bottleneck: float
    plan: SplitPlan
    vertex_indices: tuple[int, ...]


class AssignmentGraph:
    def __init__(
        self,
        scenario: Scenario,
        b: int,
        costs: ScenarioCosts,
        strict_interval: bool,
        vertices: list[Vertex],
        edges: list[Edge],
        vertex_index: dict,
    ):
        self.scenario = scenario
        self.b = b
        self.costs = costs
        self.strict_interval = strict_interval
        self.vertices = vertices
        self.edges = edges  # topological order: source edges, then by tail layer
        self.vertex_index = vertex_index
        self.server_ids = sorted(n.id for n in scenario.servers())
        self.server_rank = {nid: i for i, nid in enumerate(self.server_ids)}
        self.out_edges: list[list[Edge]] = [[] for _ in vertices]
        self.source_edges: list[Edge] = []
        self._edge_by_pair: dict[tuple[int, int], Edge] = {}
        for e in edges:
            if e.tail == SOURCE:
                self.source_edges.append(e)
            else:
                self.out_edges[e.tail].append(e)
            self._edge_by_pair[(e.tail, e.head)] = e
        self.beta_values = np.unique(
            [e.beta for e in edges if e.tail != SOURCE]
        )  # ascending, deduplicated

    def edge_between(self, tail: int, head: int) -> Edge:
        return self._edge_by_pair[(tail, head)]

    def path_vertices(self, plan: SplitPlan) -> tuple[int, ...]:
        """Vertex indices realizing a plan (excluding the virtual endpoints)."""
        n_layers = self.costs.layer_count
        idx = []
        for k in range(1, plan.effective_count + 1):
            first, last = plan.submodel_range(k, n_layers)
            idx.append(self.vertex_index[(k, plan.host(k), first, last)])
        return tuple(idx)

    def path_edges(self, plan: SplitPlan) -> list[Edge]:
        verts = self.path_vertices(plan)
        seq = [self.edge_between(SOURCE, verts[0])]
        for a, b2 in zip(verts, verts[1:]):
            seq.append(self.edge_between(a, b2))
        seq.append(self.edge_between(verts[-1], DEST))
        return seq

    def path_bottleneck(self, plan: SplitPlan) -> float:
        return max(e.beta for e in self.path_edges(plan))

    def path_sum(self, plan: SplitPlan) -> float:
        total = 0.0
        for e in self.path_edges(plan):
            total = total + e.cost
        return total


def build_graph(
    scenario: Scenario,
    b: int,
    rates: RateTable | None = None,
    costs: ScenarioCosts | None = None,
    strict_interval: bool = False,
) -> AssignmentGraph:
    """Materialize the layered decision graph for micro-batch size b.

    Vertex set: the client pool with layer ranges [1, c] for c < I, plus every
    (submodel k in [2, K], server, layer range [a, c]) with k <= a <= c <= I.
    Edges connect consecutive submodels on distinct nodes with contiguous
    ranges; any server vertex ending at the last layer also closes the plan.
    """
    if costs is None:
        costs = ScenarioCosts(scenario, rates)
    n_layers = costs.layer_count
    cap_k = scenario.max_submodels
    servers = sorted(scenario.servers(), key=lambda n: n.id)

    vertices: list[Vertex] = []
    vindex: dict[tuple, int] = {}

    def add_vertex(k, node_id, first, last, rank, mem_ok):
        v = Vertex(len(vertices), k, node_id, first, last, rank, mem_ok)
        vertices.append(v)
        vindex[(k, node_id, first, last)] = v.index

    for c in range(1, n_layers):
        add_vertex(1, None, 1, c, -1, costs.client_memory_ok(c, b))
    for k in range(2, cap_k + 1):
        for rank, node in enumerate(servers):
            for first in range(k, n_layers + 1):
                for last in range(first, n_layers + 1):
                    add_vertex(
                        k, node.id, first, last, rank,
                        costs.server_memory_ok(node, first, last, b),
                    )

    # per-vertex compute stage times (shared by several edges)
    sfp = [0.0] * len(vertices)
    sbp = [0.0] * len(vertices)
    for v in vertices:
        if v.k >= 2:
            node = costs.nodes_by_id[v.node_id]
            sfp[v.index] = costs.server_fp_time(node, v.first, v.last, b)
            sbp[v.index] = costs.server_bp_time(node, v.first, v.last, b)

    edges: list[Edge] = []

    def add_edge(tail, head, cost, beta, stages):
        edges.append(Edge(len(edges), tail, head, cost, beta, stages))

    for v in vertices:
        if v.k == 1:
            add_edge(SOURCE, v.index, 0.0, 0.0, ())
    for v in vertices:
        if v.k == 1:
            for node in servers:
                up, down = costs.client_composite(v.last, node.id, b)
                cost = up + down
                beta = max(up, down)
                stages = (("client_fp_tx", up), ("client_bp_rx", down))
                for last2 in range(v.last + 1, n_layers + 1):
                    head = vindex[(2, node.id, v.last + 1, last2)]
                    add_edge(v.index, head, cost, beta, stages)
        else:
            if v.last == n_layers:
                if strict_interval:
                    add_edge(v.index, DEST, sfp[v.index] + sbp[v.index], 0.0, ())
                else:
                    stages = (
                        ("server_fp", sfp[v.index]), ("server_bp", sbp[v.index]))
                    add_edge(
                        v.index, DEST, sfp[v.index] + sbp[v.index],
                        max(sfp[v.index], sbp[v.index]), stages,
                    )
            if v.k < cap_k and v.last < n_layers:
                for node in servers:
                    if node.id == v.node_id:
                        continue
                    lfp = costs.link_fp_time(v.last, v.node_id, node.id, b)
                    lbp = costs.link_bp_time(v.last, v.node_id, node.id, b)
                    cost = lfp + lbp + sfp[v.index] + sbp[v.index]
                    beta = max(sfp[v.index], sbp[v.index], lfp, lbp)
                    stages = (
                        ("server_fp", sfp[v.index]),
                        ("server_bp", sbp[v.index]),
                        ("link_fp", lfp),
                        ("link_bp", lbp),
                    )
                    for last2 in range(v.last + 1, n_layers + 1):
                        head = vindex[(v.k + 1, node.id, v.last + 1, last2)]
                        add_edge(v.index, head, cost, beta, stages)

    return AssignmentGraph(
        scenario, b, costs, strict_interval, vertices, edges, vindex)


# ---------------------------------------------------------------------------
# shortest-path engine
#
# Labels are (cost, tie, placement_ranks, cuts).  Two tie orders exist:
#   "solution": placement tuple then cuts (plus fewer submodels first at the
#               destination) -- the documented solution order;
#   "sequence": interleaved (c1, rank2, c2, rank3, ...) -- lexicographically
#               smallest vertex sequence, the constrained-path contract.
# Both orders compose over shared prefixes, so one label per state suffices.


def _make_allowed(graph: AssignmentGraph, require: Edge | None):
    """Edge admission rule forcing every complete path through `require`."""
    if require is None:
        return None
    vertices = graph.vertices
    req_layer = 0 if require.tail == SOURCE else vertices[require.tail].k
    req_terminal = require.head == DEST

    def allowed(e: Edge) -> bool:
        if e is require:
            return True
        if req_terminal:
            if e.head == DEST:
                return False
            return e.tail == SOURCE or vertices[e.tail].k < req_layer
        layer = 0 if e.tail == SOURCE else vertices[e.tail].k
        if layer == req_layer:
            return False
        if e.head == DEST and layer < req_layer:
            return False
        return True

    return allowed


def _shortest_pass(
    graph: AssignmentGraph,
    cap: float,
    mem_ok: list[bool],
    distinct_nodes: bool,
    tie_mode: str = "solution",
    require: Edge | None = None,
):
    """Min-sum source-to-destination pass over edges with beta <= cap.

    distinct_nodes forbids reusing a server anywhere along the path; states
    are then keyed by the placement prefix, which keeps the pass exact.  With
    require set, every surviving complete path contains that edge.  Returns
    the best destination label (cost, tie, placement_ranks, cuts) or None.
    """
    vertices = graph.vertices
    allowed = _make_allowed(graph, require)
    solution_tie = tie_mode == "solution"

    labels: list = [{} if distinct_nodes else None for _ in vertices]
    best_dest: tuple | None = None

    for e in graph.source_edges:
        if allowed is not None and not allowed(e):
            continue
        head = vertices[e.head]
        if not mem_ok[e.head]:
            continue
        cand = (e.cost, ((), ()) if solution_tie else (head.last,), (), ())
        slot = labels[e.head]
        if distinct_nodes:
            prev = slot.get(())
            if prev is None or (cand[0], cand[1]) < (prev[0], prev[1]):
                slot[()] = cand
        else:
            if slot is None or (cand[0], cand[1]) < (slot[0], slot[1]):
                labels[e.head] = cand

    for v in vertices:  # vertices come in topological (layer-ascending) order
        slot = labels[v.index]
        if not slot:
            continue
        vlabels = slot.values() if distinct_nodes else (slot,)
        outs = graph.out_edges[v.index]
        v_last = v.last
        for label in vlabels:
            cost, tie, pl, cuts = label
            for e in outs:
                if e.beta > cap:
                    continue
                if allowed is not None and not allowed(e):
                    continue
                ncost = cost + e.cost
                if e.head == DEST:
                    if best_dest is not None and ncost > best_dest[0]:
                        continue
                    ntie = (len(pl), pl, cuts) if solution_tie else tie
                    cand = (ncost, ntie, pl, cuts)
                    if best_dest is None or (cand[0], cand[1]) < (
                            best_dest[0], best_dest[1]):
                        best_dest = cand
                    continue
                if not mem_ok[e.head]:
                    continue
                head = vertices[e.head]
                if distinct_nodes:
                    if head.rank in pl:
                        continue
                    npl = pl + (head.rank,)
                    hslot = labels[e.head]
                    prev = hslot.get(npl)
                    if prev is not None and ncost > prev[0]:
                        continue
                    ncuts = cuts + (v_last,)
                    ntie = (npl, ncuts) if solution_tie else tie + (
                        head.rank, head.last)
                    cand = (ncost, ntie, npl, ncuts)
                    if prev is None or (cand[0], cand[1]) < (prev[0], prev[1]):
                        hslot[npl] = cand
                else:
                    prev = labels[e.head]
                    if prev is not None and ncost > prev[0]:
                        continue
                    npl = pl + (head.rank,)
                    ncuts = cuts + (v_last,)
                    ntie = (npl, ncuts) if solution_tie else tie + (
                        head.rank, head.last)
                    cand = (ncost, ntie, npl, ncuts)
                    if prev is None or (cand[0], cand[1]) < (prev[0], prev[1]):
                        labels[e.head] = cand
    return best_dest


def _plan_from_label(graph: AssignmentGraph, label: tuple) -> SplitPlan:
    _, _, pl, cuts = label
    return SplitPlan(cuts, tuple(graph.server_ids[r] for r in pl))


def _mem_flags(graph: AssignmentGraph, memory_check=None) -> list[bool]:
    if memory_check is None:
        return [v.mem_ok for v in graph.vertices]
    return [bool(memory_check(v)) for v in graph.vertices]


def min_sum_bound(graph: AssignmentGraph) -> float:
    """Unconstrained min-sum path cost: no memory, no bottleneck cap, node
    reuse allowed.  Every feasible plan's first-batch latency is >= this."""
    label = _shortest_pass(
        graph, np.inf, [True] * len(graph.vertices), distinct_nodes=False
    )
    if label is None:
        raise InfeasibleScenarioError("assignment graph has no complete path")
    return label[0]


# ---------------------------------------------------------------------------
# constrained shortest path (single required edge)


def _aggregate_ok(graph: AssignmentGraph, plan: SplitPlan) -> bool:
    return PlanEvaluator(graph.costs, plan).feasible(graph.b)


def _enumerate_paths(
    graph: AssignmentGraph,
    cap: float,
    mem_ok: list[bool],
    require: Edge | None,
    limit: int,
):
    """Yield up to `limit` complete paths as (cost, placement_ranks, cuts) in
    exact (cost, vertex-sequence) order.

    Best-first search over path prefixes with an exact cost-to-go bound; used
    as the continuation search when aggregate memory rejects the best path
    under node reuse.
    """
    vertices = graph.vertices
    allowed = _make_allowed(graph, require)

    def edge_open(e: Edge) -> bool:
        if e.beta > cap:
            return False
        return allowed is None or allowed(e)

    # exact cost-to-go by backward sweep over the admitted subgraph
    to_go: dict[int, float] = {}
    for v in reversed(vertices):
        best = np.inf
        for e in graph.out_edges[v.index]:
            if not edge_open(e):
                continue
            if e.head == DEST:
                best = min(best, e.cost)
            elif mem_ok[e.head] and e.head in to_go:
                best = min(best, e.cost + to_go[e.head])
        if best < np.inf:
            to_go[v.index] = best

    counter = 0
    heap: list = []

    def push(f, tie, g, last_vertex, pl, cuts, complete):
        nonlocal counter
        counter += 1
        heapq.heappush(heap, (f, tie, counter, g, last_vertex, pl, cuts, complete))

    for e in graph.source_edges:
        if edge_open(e) and mem_ok[e.head] and e.head in to_go:
            head = vertices[e.head]
            push(e.cost + to_go[e.head], (head.last,), e.cost, e.head, (), (), False)

    yielded = 0
    while heap and yielded < limit:
        f, tie, _, g, vi, pl, cuts, complete = heapq.heappop(heap)
        if complete:
            yielded += 1
            yield (g, pl, cuts)
            continue
        v = vertices[vi]
        for e in graph.out_edges[vi]:
            if not edge_open(e):
                continue
            if e.head == DEST:
                push(g + e.cost, tie, g + e.cost, vi, pl, cuts, True)
                continue
            if not mem_ok[e.head] or e.head not in to_go:
                continue
            head = vertices[e.head]
            push(
                g + e.cost + to_go[e.head],
                tie + (head.rank, head.last),
                g + e.cost,
                e.head,
                pl + (head.rank,),
                cuts + (v.last,),
                False,
            )


def constrained_shortest_path(
    graph: AssignmentGraph,
    required_edge: Edge,
    bottleneck_cap: float,
    memory_check=None,
    allow_node_reuse: bool = False,
    reuse_limit: int = 32,
) -> PathResult | None:
    """Minimum-sum source-to-destination path through required_edge using only
    edges with bottleneck weight <= bottleneck_cap.  Vertices must pass the
    per-vertex memory check; the winning path is revalidated against aggregate
    per-node memory.  Ties break toward the lexicographically smallest vertex
    sequence.  Returns None when no such path exists.
    """
    mem_ok = _mem_flags(graph, memory_check)
    label = _shortest_pass(
        graph,
        bottleneck_cap,
        mem_ok,
        distinct_nodes=not allow_node_reuse,
        tie_mode="sequence",
        require=required_edge,
    )
    if label is None:
        return None
    plan = _plan_from_label(graph, label)
    if not _aggregate_ok(graph, plan):
        if not allow_node_reuse:
            return None  # per-vertex checks are exact without reuse
        for cost, pl, cuts in _enumerate_paths(
            graph, bottleneck_cap, mem_ok, required_edge, reuse_limit
        ):
            cand = SplitPlan(cuts, tuple(graph.server_ids[r] for r in pl))
            if _aggregate_ok(graph, cand):
                return PathResult(
                    cost, graph.path_bottleneck(cand), cand,
                    graph.path_vertices(cand),
                )
        return None
    return PathResult(
        label[0], graph.path_bottleneck(plan), plan, graph.path_vertices(plan)
    )


# ---------------------------------------------------------------------------
# bottleneck-aware solve


@dataclass(frozen=True)
class MspSolution:
    plan: SplitPlan
    report: LatencyReport
    b: int
    subgraphs_searched: int
    subgraphs_pruned: int
    wall_time: float
    bound_value: float


def _diagnose(graph: AssignmentGraph) -> str:
    if not any(v.mem_ok for v in graph.vertices if v.k == 1):
        return (
            "client memory: no first-submodel cut fits the client pool at "
            f"micro-batch {graph.b}"
        )
    if not any(
        v.mem_ok
        for v in graph.vertices
        if v.k >= 2 and v.last == graph.costs.layer_count
    ):
        return (
            "server memory: no final submodel fits any server at micro-batch "
            f"{graph.b}"
        )
    return f"memory: no feasible submodel chain at micro-batch {graph.b}"


def solve_msp(
    scenario: Scenario,
    b: int,
    lower_bound_provider=None,
    rates: RateTable | None = None,
    costs: ScenarioCosts | None = None,
    prune: bool = True,
    allow_node_reuse: bool = False,
    strict_interval: bool = False,
    reuse_limit: int = 32,
    graph: AssignmentGraph | None = None,
    vertex_filter=None,
) -> MspSolution:
    """Exact minimizer of total latency over canonical plans at fixed b.

    lower_bound_provider: callable(graph) -> float lower bound on the min-sum
    part; defaults to the unconstrained shortest-path bound.  vertex_filter
    restricts the search space (used by the fixed-cut / fixed-placement
    baselines).  Raises InfeasibleScenarioError naming the binding constraint
    when no plan fits.
    """
    t0 = time.perf_counter()
    if graph is None:
        graph = build_graph(scenario, b, rates, costs, strict_interval)
    costs = graph.costs
    lb = (
        lower_bound_provider(graph)
        if lower_bound_provider is not None
        else min_sum_bound(graph)
    )
    xi = pipeline_rounds(scenario.minibatch, b)
    asc = graph.beta_values.tolist()
    n_beta = len(asc)
    mem_ok = _mem_flags(graph)
    if vertex_filter is not None:
        mem_ok = [
            ok and bool(vertex_filter(v))
            for ok, v in zip(mem_ok, graph.vertices)
        ]
    distinct = not allow_node_reuse

    best_key = None
    best_plan = None
    best_report = None
    searched = 0
    pruned = 0
    i = 0
    while i < n_beta:
        cap = asc[n_beta - 1 - i]
        if (
            prune
            and best_report is not None
            and xi > 0
            and lb + xi * cap > best_report.total_s
        ):
            # every cap above (best - bound)/rounds is provably hopeless
            x = (best_report.total_s - lb) / xi
            j = max(n_beta - bisect.bisect_right(asc, x), i + 1)
            pruned += j - i
            i = j
            continue
        label = _shortest_pass(graph, cap, mem_ok, distinct, "solution")
        searched += 1
        if label is None:
            if searched == 1:
                raise InfeasibleScenarioError(_diagnose(graph))
            pruned += n_beta - i - 1
            break  # smaller caps only remove edges
        pass_min_sum = label[0]
        if best_report is not None and pass_min_sum > best_report.total_s:
            pruned += n_beta - i - 1
            break  # capped min-sum alone exceeds the incumbent
        plan = _plan_from_label(graph, label)
        used_fallback = False
        if allow_node_reuse and not _aggregate_ok(graph, plan):
            plan = None
            for cost, pl, cuts in _enumerate_paths(
                graph, cap, mem_ok, None, reuse_limit
            ):
                cand = SplitPlan(cuts, tuple(graph.server_ids[r] for r in pl))
                if _aggregate_ok(graph, cand):
                    plan = cand
                    used_fallback = True
                    break
        if plan is None:
            i += 1
            continue
        report = PlanEvaluator(
            costs, plan, strict_interval=graph.strict_interval
        ).report(b)
        key = solution_sort_key(
            report.total_s, report.interval_s, plan, costs.server_rank
        )
        if best_key is None or key < best_key:
            best_key = key
            best_plan = plan
            best_report = report
        if used_fallback:
            i += 1
            continue
        # caps in (realized bottleneck, cap] cannot beat this pass's plan
        u = graph.path_bottleneck(plan)
        j = max(n_beta - bisect.bisect_left(asc, u), i + 1)
        pruned += j - i - 1
        i = j

    if best_plan is None:
        raise InfeasibleScenarioError(_diagnose(graph))
    return MspSolution(
        best_plan,
        best_report,
        b,
        searched,
        pruned,
        time.perf_counter() - t0,
        lb,
    )
