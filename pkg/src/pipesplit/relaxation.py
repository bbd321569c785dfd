"""Lower bounds for the placement search: a combinatorial shortest-path bound
and a linear-programming relaxation solved by a bundled two-phase simplex.

The LP relaxes the binary assignment to marginal variables: mu[k, n, i] is the
weight on submodel k sitting on node n with last layer i, and zeta links each
consecutive pair of assignments.  Marginal-consistency rows tie zeta to mu on
both sides, which is exactly the product relaxation of the binary model; the
layer ordering is structural (zeta indices only pair increasing layer ends).
Every integral feasible plan maps to a feasible point whose objective equals
its first-batch latency, so the LP optimum never exceeds the true min-sum
optimum.  See docs/lower_bound_lp.md for the full statement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .costmodel import ScenarioCosts, _bp_time, _fp_time, shard_sizes
from .mspgraph import AssignmentGraph, min_sum_bound
from .scenario import RateTable, Scenario


@dataclass(frozen=True)
class LowerBound:
    value: float
    provider: str                     # "combinatorial" | "rlt"
    certificate: np.ndarray | None    # LP solution when provider == "rlt"


@dataclass
class LinearProgram:
    """min objective . x  subject to  rows(x) sense rhs,  x >= 0.

    mu and zeta columns additionally carry implied upper bounds of 1 (their
    block totals are pinned to 1 by the assignment rows, so the bounds never
    need explicit rows).
    """

    objective: np.ndarray
    rows: np.ndarray
    senses: list[str]          # "<=", "=", ">="
    rhs: np.ndarray
    column_names: list[str]
    row_names: list[str]
    blocks: dict[str, tuple[int, int]]   # name -> [start, stop) column range

    @property
    def num_columns(self) -> int:
        return len(self.column_names)


# ---------------------------------------------------------------------------
# combinatorial bound


def combinatorial_bound(graph: AssignmentGraph) -> LowerBound:
    """Unconstrained min-sum shortest path; sound for every feasible plan."""
    return LowerBound(min_sum_bound(graph), "combinatorial", None)


# ---------------------------------------------------------------------------
# LP construction


def build_rlt_lp(
    scenario: Scenario,
    b: int,
    rates: RateTable | None = None,
    costs: ScenarioCosts | None = None,
) -> LinearProgram:
    """Marginal relaxation of the min-sum objective at micro-batch size b.

    Columns: mu[k, n, i] (pool for k=1), zeta[k, n, i, n', i'], and two
    epigraph variables for the client-side maxima.  Rows: the pool and
    second-submodel assignments, pair-marginal consistency on both sides,
    client and per-server memory, and the epigraph inequalities.
    """
    if costs is None:
        costs = ScenarioCosts(scenario, rates)
    n_layers = costs.layer_count
    cap_k = scenario.max_submodels
    servers = sorted(scenario.servers(), key=lambda n: n.id)
    clients = costs.clients
    shards = shard_sizes(b, len(clients))

    mu_keys: list[tuple] = []
    for i in range(1, n_layers):
        mu_keys.append((1, None, i))
    for k in range(2, cap_k + 1):
        ends = [n_layers] if k == cap_k else list(range(k, n_layers + 1))
        for node in servers:
            for i in ends:
                mu_keys.append((k, node.id, i))

    zeta_keys: list[tuple] = []
    for k in range(1, cap_k):
        tails = (
            [(None, i) for i in range(1, n_layers)]
            if k == 1
            else [
                (node.id, i)
                for node in servers
                for i in range(k, n_layers)
            ]
        )
        head_ends = (
            [n_layers] if k + 1 == cap_k else list(range(k + 1, n_layers + 1))
        )
        for tail_n, i in tails:
            for node in servers:
                if node.id == tail_n:
                    continue
                for i2 in head_ends:
                    if i2 > i:
                        zeta_keys.append((k, tail_n, i, node.id, i2))

    mu_index = {key: j for j, key in enumerate(mu_keys)}
    zeta_off = len(mu_keys)
    zeta_index = {key: zeta_off + j for j, key in enumerate(zeta_keys)}
    t_up = zeta_off + len(zeta_keys)
    t_down = t_up + 1
    n_cols = t_down + 1

    column_names = (
        [f"mu[{k},{n or 'pool'},{i}]" for k, n, i in mu_keys]
        + [f"zeta[{k},{n or 'pool'},{i}->{n2},{i2}]" for k, n, i, n2, i2 in zeta_keys]
        + ["t_client_up", "t_client_down"]
    )

    objective = np.zeros(n_cols)
    for (k, node_id, i), j in mu_index.items():
        if k == 1:
            continue
        node = costs.nodes_by_id[node_id]
        coeff = b * node.intensity * costs.fp_cum[i] / node.compute + node.init_fp_s
        if b > node.bp_threshold:
            coeff += (
                (b - node.bp_threshold) * node.intensity * costs.bp_cum[i]
                / node.compute
            )
        coeff += node.init_bp_s
        objective[j] = coeff
    for (k, tail_n, i, head_n, i2), j in zeta_index.items():
        head = costs.nodes_by_id[head_n]
        # start-of-submodel subtraction for the head assignment
        coeff = -b * head.intensity * costs.fp_cum[i] / head.compute
        if b > head.bp_threshold:
            coeff -= (
                (b - head.bp_threshold) * head.intensity * costs.bp_cum[i]
                / head.compute
            )
        if k >= 2:
            coeff += b * (
                costs.act[i - 1] * costs.rates.delay_per_bit(tail_n, head_n)
                + costs.grad[i] * costs.rates.delay_per_bit(head_n, tail_n)
            )
        objective[j] = coeff
    objective[t_up] = 1.0
    objective[t_down] = 1.0

    rows: list[np.ndarray] = []
    senses: list[str] = []
    rhs: list[float] = []
    row_names: list[str] = []

    def add_row(name, coeffs, sense, value):
        row = np.zeros(n_cols)
        for j, cf in coeffs:
            row[j] += cf
        rows.append(row)
        senses.append(sense)
        rhs.append(value)
        row_names.append(name)

    add_row(
        "assign_pool",
        [(mu_index[(1, None, i)], 1.0) for i in range(1, n_layers)],
        "=",
        1.0,
    )
    add_row(
        "assign_k2",
        [(j, 1.0) for (k, n, i), j in mu_index.items() if k == 2],
        "=",
        1.0,
    )

    by_tail: dict[tuple, list[int]] = {}
    by_head: dict[tuple, list[int]] = {}
    for (k, tail_n, i, head_n, i2), j in zeta_index.items():
        by_tail.setdefault((k, tail_n, i), []).append(j)
        by_head.setdefault((k + 1, head_n, i2), []).append(j)
    for (k, node_id, i), j in mu_index.items():
        if i < n_layers and k < cap_k:
            add_row(
                f"continue[{k},{node_id or 'pool'},{i}]",
                [(z, 1.0) for z in by_tail.get((k, node_id, i), [])] + [(j, -1.0)],
                "=",
                0.0,
            )
        if k >= 2:
            add_row(
                f"arrive[{k},{node_id},{i}]",
                [(z, 1.0) for z in by_head.get((k, node_id, i), [])] + [(j, -1.0)],
                "=",
                0.0,
            )

    for m, client in enumerate(clients):
        add_row(
            f"mem_client[{client.id}]",
            [
                (mu_index[(1, None, i)], shards[m] * costs.mem_cum[i])
                for i in range(1, n_layers)
            ],
            "<=",
            client.memory_bits,
        )
    for node in servers:
        coeffs = []
        for (k, node_id, i), j in mu_index.items():
            if k >= 2 and node_id == node.id:
                coeffs.append((j, b * costs.mem_cum[i]))
        for (k, tail_n, i, head_n, i2), j in zeta_index.items():
            if head_n == node.id:
                coeffs.append((j, -b * costs.mem_cum[i]))
        add_row(f"mem_server[{node.id}]", coeffs, "<=", node.memory_bits)

    for m, client in enumerate(clients):
        up_coeffs = [(t_up, 1.0)]
        down_coeffs = [(t_down, 1.0)]
        for (k, tail_n, i, head_n, i2), j in zeta_index.items():
            if k != 1:
                continue
            up = (
                _fp_time(shards[m], client, costs.fp_cum[i])
                + shards[m] * costs.act[i - 1]
                * costs.rates.delay_per_bit(client.id, head_n)
            )
            down = (
                _bp_time(shards[m], client, costs.bp_cum[i])
                + shards[m] * costs.grad[i]
                * costs.rates.delay_per_bit(head_n, client.id)
            )
            up_coeffs.append((j, -up))
            down_coeffs.append((j, -down))
        add_row(f"epi_up[{client.id}]", up_coeffs, ">=", 0.0)
        add_row(f"epi_down[{client.id}]", down_coeffs, ">=", 0.0)

    return LinearProgram(
        objective=objective,
        rows=np.array(rows),
        senses=senses,
        rhs=np.array(rhs),
        column_names=column_names,
        row_names=row_names,
        blocks={
            "mu": (0, zeta_off),
            "zeta": (zeta_off, t_up),
            "aux": (t_up, n_cols),
        },
    )


def plan_to_lp_point(
    lp: LinearProgram,
    scenario: Scenario,
    b: int,
    plan,
    costs: ScenarioCosts | None = None,
    rates: RateTable | None = None,
) -> np.ndarray:
    """Integral LP point of a canonical plan (for the plug-in feasibility and
    objective-reproduction checks)."""
    if costs is None:
        costs = ScenarioCosts(scenario, rates)
    x = np.zeros(lp.num_columns)
    names = {name: j for j, name in enumerate(lp.column_names)}
    k_eff = plan.effective_count
    ends = [plan.submodel_range(k, costs.layer_count)[1] for k in range(1, k_eff + 1)]
    hosts = ["pool"] + [plan.host(k) for k in range(2, k_eff + 1)]
    for k in range(1, k_eff + 1):
        x[names[f"mu[{k},{hosts[k - 1]},{ends[k - 1]}]"]] = 1.0
    for k in range(1, k_eff):
        key = f"zeta[{k},{hosts[k - 1]},{ends[k - 1]}->{hosts[k]},{ends[k]}]"
        x[names[key]] = 1.0
    up, down = costs.client_composite(plan.cuts[0], plan.host(2), b)
    x[names["t_client_up"]] = up
    x[names["t_client_down"]] = down
    return x


# ---------------------------------------------------------------------------
# two-phase simplex


@dataclass(frozen=True)
class SimplexResult:
    status: str                 # optimal | infeasible | unbounded | iteration_limit
    value: float | None
    x: np.ndarray | None
    dual_value: float | None


_TOL = 1e-9


def simplex_solve(lp: LinearProgram, max_pivots: int = 1_000_000) -> SimplexResult:
    """Dense two-phase primal simplex with Bland's rule (anti-cycling)."""
    a = lp.rows.astype(float).copy()
    rhs = lp.rhs.astype(float).copy()
    senses = list(lp.senses)
    m, n = a.shape

    # row equilibration: bring wildly mixed units (bits vs seconds) to O(1)
    # magnitudes so fixed pivot tolerances behave; duals are scale-invariant
    for i in range(m):
        scale = float(np.max(np.abs(a[i])))
        if scale > 0.0:
            a[i] /= scale
            rhs[i] /= scale

    for i in range(m):
        if rhs[i] < 0.0:
            a[i] = -a[i]
            rhs[i] = -rhs[i]
            senses[i] = {"<=": ">=", ">=": "<=", "=": "="}[senses[i]]

    n_slack = sum(1 for s in senses if s == "<=")
    n_surplus = sum(1 for s in senses if s == ">=")
    n_art = sum(1 for s in senses if s in ("=", ">="))
    total = n + n_slack + n_surplus + n_art
    slack_at = n
    surplus_at = n + n_slack
    art_at = n + n_slack + n_surplus

    tableau = np.zeros((m + 1, total + 1))
    tableau[:m, :n] = a
    tableau[:m, -1] = rhs
    basis = [0] * m
    row_unit_col = [0] * m  # slack or artificial column owning each row
    si = ui = ai = 0
    art_cols = []
    for i in range(m):
        if senses[i] == "<=":
            col = slack_at + si
            tableau[i, col] = 1.0
            basis[i] = col
            row_unit_col[i] = col
            si += 1
        elif senses[i] == ">=":
            tableau[i, surplus_at + ui] = -1.0
            ui += 1
            col = art_at + ai
            tableau[i, col] = 1.0
            basis[i] = col
            row_unit_col[i] = col
            art_cols.append(col)
            ai += 1
        else:
            col = art_at + ai
            tableau[i, col] = 1.0
            basis[i] = col
            row_unit_col[i] = col
            art_cols.append(col)
            ai += 1
    art_set = set(art_cols)

    def pivot(row: int, col: int) -> None:
        tableau[row] /= tableau[row, col]
        factors = tableau[:, col].copy()
        factors[row] = 0.0
        tableau[:, :] -= np.outer(factors, tableau[row])
        basis[row] = col

    def run(blocked: set[int]) -> str:
        for _ in range(max_pivots):
            cost = tableau[-1]
            entering = -1
            for j in range(total):  # Bland: smallest eligible index
                if j in blocked:
                    continue
                if cost[j] < -_TOL:
                    entering = j
                    break
            if entering < 0:
                return "optimal"
            col = tableau[:m, entering]
            best_i = -1
            best_ratio = math.inf
            for i in range(m):
                if col[i] > _TOL:
                    ratio = tableau[i, -1] / col[i]
                    if ratio < best_ratio - _TOL or (
                        abs(ratio - best_ratio) <= _TOL
                        and (best_i < 0 or basis[i] < basis[best_i])
                    ):
                        best_ratio = ratio
                        best_i = i
            if best_i < 0:
                return "unbounded"
            pivot(best_i, entering)
        return "iteration_limit"

    # phase 1: minimize the artificial total
    phase1_cost = np.zeros(total + 1)
    for col in art_cols:
        phase1_cost[col] = 1.0
    tableau[-1] = phase1_cost
    for i in range(m):
        if basis[i] in art_set:
            tableau[-1] -= tableau[i]
    status = run(blocked=set())
    if status != "optimal":
        return SimplexResult(status, None, None, None)
    if -tableau[-1, -1] > 1e-7:
        return SimplexResult("infeasible", None, None, None)
    for i in range(m):  # drive remaining artificials out of the basis
        if basis[i] in art_set:
            for j in range(total):
                if j not in art_set and abs(tableau[i, j]) > _TOL:
                    pivot(i, j)
                    break

    # phase 2: the real objective (artificial columns stay blocked)
    cost2 = np.zeros(total + 1)
    cost2[:n] = lp.objective
    tableau[-1] = cost2
    for i in range(m):
        cj = cost2[basis[i]]
        if cj != 0.0:
            tableau[-1] -= cj * tableau[i]
    status = run(blocked=art_set)
    if status != "optimal":
        return SimplexResult(status, None, None, None)

    x = np.zeros(n)
    for i in range(m):
        if basis[i] < n:
            x[basis[i]] = tableau[i, -1]
    value = -tableau[-1, -1]
    # duals from the reduced costs of each row's founding unit column
    y = np.array([-tableau[-1, row_unit_col[i]] for i in range(m)])
    dual_value = float(y @ rhs)
    return SimplexResult("optimal", float(value), x, dual_value)


# ---------------------------------------------------------------------------
# providers and export


def rlt_bound(
    scenario: Scenario,
    b: int,
    rates: RateTable | None = None,
    costs: ScenarioCosts | None = None,
) -> LowerBound:
    lp = build_rlt_lp(scenario, b, rates, costs)
    res = simplex_solve(lp)
    if res.status == "infeasible":
        return LowerBound(math.inf, "rlt", None)
    if res.status != "optimal":
        return LowerBound(-math.inf, "rlt", None)
    # shave a relative margin so float noise can never overshoot the optimum
    value = res.value - abs(res.value) * 1e-9 - 1e-12
    return LowerBound(value, "rlt", res.x)


def bound_provider(kind: str = "fast"):
    """Pruning-bound factory for the placement solver: callable(graph) -> float."""
    if kind in ("fast", "combinatorial"):
        return lambda graph: min_sum_bound(graph)
    if kind == "rlt":
        def provider(graph: AssignmentGraph) -> float:
            comb = min_sum_bound(graph)
            lp = rlt_bound(graph.scenario, graph.b, costs=graph.costs)
            if math.isfinite(lp.value):
                return max(comb, lp.value)
            return comb
        return provider
    raise ValueError(f"unknown bound kind {kind!r}")


def dump_lp(lp: LinearProgram, path: str) -> None:
    """Plain-text tabular export for external cross-checks."""
    with open(path, "w") as fh:
        fh.write(f"columns {lp.num_columns}\n")
        for name, (start, stop) in lp.blocks.items():
            fh.write(f"block {name} {start} {stop}\n")
        fh.write("minimize\n")
        for j, coeff in enumerate(lp.objective):
            if coeff != 0.0:
                fh.write(f"  {lp.column_names[j]} {coeff!r}\n")
        fh.write("subject_to\n")
        for i, name in enumerate(lp.row_names):
            terms = " ".join(
                f"{lp.column_names[j]}={lp.rows[i, j]!r}"
                for j in np.nonzero(lp.rows[i])[0]
            )
            fh.write(f"  {name} {lp.senses[i]} {lp.rhs[i]!r} : {terms}\n")
        fh.write("bounds 0 <= mu,zeta <= 1 ; aux >= 0\n")
