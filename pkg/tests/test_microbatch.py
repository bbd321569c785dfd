import itertools
import math

import pytest

from pipesplit.costmodel import PlanEvaluator, ScenarioCosts, pipeline_rounds
from pipesplit.microbatch import (
    CASES,
    MicrobatchInfeasibleError,
    _objective_and_feasible,
    _thresholds,
    b_tilde,
    best_microbatch,
    boundary_bv,
    case_of,
    optimal_microbatch,
    scan_microbatch,
    slope_of_first_batch,
)
from pipesplit.oracle import iter_plans
from pipesplit.scenario import canonical_plan, generate_scenario

from conftest import (
    explicit_scenario,
    full_mesh_links,
    make_layer,
    make_node,
    random_small_scenario,
)


def fixture_pair(rng, minibatch=512, max_clients=2, scale=(0.3, 4.0)):
    """Random (scenario, plan, interval budget) with at least b=1 feasible."""
    while True:
        s = random_small_scenario(
            rng, minibatch=minibatch, max_layers=10, max_servers=5,
            max_k=4, max_clients=max_clients, scale_range=scale)
        costs = ScenarioCosts(s)
        plans = list(itertools.islice(iter_plans(s), 120))
        plan = plans[int(rng.integers(0, len(plans)))]
        ev = PlanEvaluator(costs, plan)
        if ev.violations(1):
            continue
        probe = 20
        while ev.violations(probe):
            probe = max(1, probe // 2)
        t1 = ev.totals(probe)[2] * float(rng.uniform(0.8, 3.0))
        return s, plan, t1, costs


def test_case_mapping():
    assert case_of(10, 32, 32) == "both_below"
    assert case_of(32, 32, 32) == "both_below"  # boundary sits in the flat region
    assert case_of(33, 32, 32) == "both_above"
    assert case_of(20, 32, 16) == "client_below"
    assert case_of(20, 16, 32) == "server_below"


def test_scan_minibatch_one():
    s = generate_scenario(1, servers=2, layer_count=4, minibatch=1)
    plan = canonical_plan([2], ["s0"], 4)
    ev = PlanEvaluator(ScenarioCosts(s), plan)
    t1 = ev.totals(1)[2]
    assert scan_microbatch(s, plan, t1).b_star == 1


def test_scan_is_locally_optimal(rng):
    for _ in range(25):
        s, plan, t1, costs = fixture_pair(rng, minibatch=64)
        try:
            sol = scan_microbatch(s, plan, t1, costs=costs)
        except MicrobatchInfeasibleError:
            continue
        ev = PlanEvaluator(costs, plan)
        obj, ok = _objective_and_feasible(ev, sol.b_star, t1)
        assert ok and obj == sol.objective
        for nb in (sol.b_star - 1, sol.b_star + 1):
            if 1 <= nb <= s.minibatch:
                other, feas = _objective_and_feasible(ev, nb, t1)
                if feas:
                    assert sol.objective <= other


def test_optimal_equals_scan_on_random_fixtures(rng):
    mismatches = 0
    for _ in range(100):
        s, plan, t1, costs = fixture_pair(rng)
        try:
            scan = scan_microbatch(s, plan, t1, costs=costs)
        except MicrobatchInfeasibleError:
            with pytest.raises(MicrobatchInfeasibleError):
                optimal_microbatch(s, plan, t1, costs=costs)
            continue
        fast = optimal_microbatch(s, plan, t1, costs=costs)
        if fast != scan:
            mismatches += 1
    assert mismatches == 0


def test_objective_matches_invariant(rng):
    s, plan, t1, costs = fixture_pair(rng)
    sol = optimal_microbatch(s, plan, t1, costs=costs)
    ev = PlanEvaluator(costs, plan)
    first = ev.totals(sol.b_star)[1]
    rounds = pipeline_rounds(s.minibatch, sol.b_star)
    assert sol.objective == first + rounds * t1
    assert 1 <= sol.b_star <= s.minibatch
    th_c, th_s = _thresholds(ev)
    assert sol.case == case_of(sol.b_star, th_c, th_s)


def test_b_tilde_formula_identity():
    s = generate_scenario(4, servers=2, layer_count=4, minibatch=256)
    plan = canonical_plan([2], ["s0"], 4)
    slope = slope_of_first_batch(s, plan, "both_below")
    # with the interval budget equal to the slope, b-tilde reduces to sqrt(B)
    assert b_tilde(s, plan, slope, "both_below") == pytest.approx(
        math.sqrt(256), rel=1e-12)


def single_server_compute_scenario(minibatch=128):
    layers = [make_layer(fp=8e8, bp=1.6e9), make_layer(fp=8e8, bp=1.6e9)]
    nodes = [make_node("c0", "client", flops=2e12),
             make_node("s0", "server", flops=1e12)]
    return explicit_scenario(layers, nodes,
                             full_mesh_links(["c0", "s0"], rate=1e30),
                             minibatch=minibatch)


def test_slope_zero_comm_single_server():
    s = single_server_compute_scenario()
    plan = canonical_plan([1], ["s0"], 2)
    # below both thresholds: forward-pass compute terms only
    want = 1.0 * 8e8 / 1e12 + (1.0 * 8e8 / 2e12)
    assert slope_of_first_batch(s, plan, "both_below") == pytest.approx(
        want, rel=1e-12)
    # above both thresholds the backward-pass slopes join
    above = want + 1.6e9 / 1e12 + 1.6e9 / 2e12
    assert slope_of_first_batch(s, plan, "both_above") == pytest.approx(
        above, rel=1e-12)


def test_slope_matches_finite_difference_above_thresholds():
    s = single_server_compute_scenario()
    plan = canonical_plan([1], ["s0"], 2)
    ev = PlanEvaluator(ScenarioCosts(s), plan)
    diff = ev.totals(101)[1] - ev.totals(100)[1]
    assert slope_of_first_batch(s, plan, "both_above") == pytest.approx(
        diff, rel=1e-9)


def test_slope_and_intercept_reproduce_first_batch(rng):
    # single client: the first-batch latency is exactly affine within a case
    s = single_server_compute_scenario()
    plan = canonical_plan([1], ["s0"], 2)
    ev = PlanEvaluator(ScenarioCosts(s), plan)
    slope = slope_of_first_batch(s, plan, "both_above")
    anchor = 60
    intercept = ev.totals(anchor)[1] - slope * anchor
    for b in (40, 77, 101):
        assert ev.totals(b)[1] == pytest.approx(
            slope * b + intercept, abs=1e-9)


def test_piecewise_assembly_matches_evaluator_everywhere():
    # single client: slopes and per-region intercepts reproduce the
    # first-batch latency at every micro-batch size
    s = single_server_compute_scenario(minibatch=128)
    plan = canonical_plan([1], ["s0"], 2)
    ev = PlanEvaluator(ScenarioCosts(s), plan)
    regions = {  # case -> (anchor, b range); thresholds sit at 32
        "both_below": (16, range(1, 33)),
        "both_above": (64, range(33, 129)),
    }
    worst = 0.0
    for case, (anchor, span) in regions.items():
        slope = slope_of_first_batch(s, plan, case)
        intercept = ev.totals(anchor)[1] - slope * anchor
        for b in span:
            worst = max(worst, abs(ev.totals(b)[1] - (slope * b + intercept)))
    assert worst < 1e-9


def test_piecewise_continuity_multi_client_on_shard_lattice():
    s = explicit_scenario(
        [make_layer(fp=8e8, bp=1.6e9), make_layer(fp=8e8, bp=1.6e9)],
        [make_node("c0", "client", flops=2e12),
         make_node("c1", "client", flops=2e12),
         make_node("s0", "server", flops=1e12)],
        full_mesh_links(["c0", "c1", "s0"], rate=1e30),
        minibatch=256,
    )
    plan = canonical_plan([1], ["s0"], 2)
    ev = PlanEvaluator(ScenarioCosts(s), plan)
    slope = slope_of_first_batch(s, plan, "both_above")
    anchor = 100  # divisible by the client count: shards stay even
    intercept = ev.totals(anchor)[1] - slope * anchor
    for b in range(90, 181, 2):
        assert ev.totals(b)[1] == pytest.approx(slope * b + intercept, abs=1e-9)


def test_boundary_bv_compute_cap_dominates():
    s = single_server_compute_scenario()
    plan = canonical_plan([1], ["s0"], 2)
    t1 = 0.05
    # infinite memory and rates leave only the compute caps
    server_cap = math.floor(1e12 * (t1 - 0.001) / 8e8)
    client_cap = math.floor(2e12 * (t1 - 0.001) / 8e8)
    assert boundary_bv(s, plan, t1, "both_below") == min(server_cap, client_cap)


def test_boundary_bv_single_binding_memory_cap():
    layers = [make_layer(fp=1e6, act=1.0, grad=1.0, opt=1.0, param=1.0),
              make_layer(fp=1e6, act=1.0, grad=1.0, opt=1.0, param=1.0)]
    nodes = [make_node("c0", "client"),
             make_node("s0", "server", memory_bits=100.0)]
    s = explicit_scenario(layers, nodes, full_mesh_links(["c0", "s0"],
                                                         rate=1e30),
                          minibatch=512)
    plan = canonical_plan([1], ["s0"], 2)
    # submodel 2 per-sample memory: cumulative sum at layer 2 minus layer 1
    per_sample = 2 * 4.0 - 4.0
    want = math.floor(100.0 / per_sample)
    assert want == 25
    assert boundary_bv(s, plan, 1e6, "both_below") == want


def test_boundary_bv_nondecreasing_in_budget(rng):
    s, plan, t1, costs = fixture_pair(rng, minibatch=64)
    values = [boundary_bv(s, plan, t1 * f, "both_above", costs=costs)
              for f in (0.5, 1.0, 2.0, 4.0)]
    assert values == sorted(values)


def test_zero_budget_is_infeasible():
    s = single_server_compute_scenario()
    plan = canonical_plan([1], ["s0"], 2)
    assert boundary_bv(s, plan, 0.0, "both_below") == 0
    with pytest.raises(MicrobatchInfeasibleError):
        scan_microbatch(s, plan, 0.0)
    with pytest.raises(MicrobatchInfeasibleError):
        optimal_microbatch(s, plan, 0.0)


def test_round_staircase_candidates_are_load_bearing(rng):
    """Dropping the constant-round left endpoints from the candidate set must
    change at least one answer; the closed-form candidates alone miss optima
    that sit at a round-count step."""

    def literal_only(s, plan, t1, costs):
        ev = PlanEvaluator(costs, plan)
        th_c, th_s = _thresholds(ev)
        m = len(ev.costs.clients)
        B = s.minibatch
        cands = {1, B, th_c, th_c + 1, th_s, th_s + 1, m * th_c, m * th_c + 1}
        for case in CASES:
            bt = b_tilde(s, plan, t1, case, costs=costs)
            if math.isfinite(bt):
                cands.add(int(math.floor(bt)))
                cands.add(int(math.ceil(bt)))
            bv = boundary_bv(s, plan, t1, case, costs=costs)
            cands.update((bv, min(bv, B)))
        best_b, best_obj = None, math.inf
        for b in sorted(c for c in cands if 1 <= c <= B):
            obj, ok = _objective_and_feasible(ev, b, t1)
            if ok and obj < best_obj:
                best_obj, best_b = obj, b
        return best_b

    diverged = 0
    for _ in range(120):
        s, plan, t1, costs = fixture_pair(rng, max_clients=1, scale=(0.5, 3.0))
        try:
            scan = scan_microbatch(s, plan, t1, costs=costs)
        except MicrobatchInfeasibleError:
            continue
        assert optimal_microbatch(s, plan, t1, costs=costs).b_star == scan.b_star
        if literal_only(s, plan, t1, costs) != scan.b_star:
            diverged += 1
    assert diverged >= 1


def test_feasibility_filter_is_load_bearing():
    # without the interval-budget filter the raw argmin lands on a larger,
    # budget-violating micro-batch
    s = single_server_compute_scenario(minibatch=128)
    plan = canonical_plan([1], ["s0"], 2)
    ev = PlanEvaluator(ScenarioCosts(s), plan)
    t1 = ev.totals(8)[2]
    sol = scan_microbatch(s, plan, t1)
    unfiltered = min(
        range(1, 129),
        key=lambda b: ev.totals(b)[1] + pipeline_rounds(128, b) * t1,
    )
    assert ev.totals(unfiltered)[2] > t1
    assert ev.totals(sol.b_star)[2] <= t1
    assert unfiltered != sol.b_star


def test_best_microbatch_matches_true_scan(rng):
    for _ in range(40):
        s = random_small_scenario(rng, minibatch=96, max_servers=3)
        costs = ScenarioCosts(s)
        plans = list(itertools.islice(iter_plans(s), 40))
        plan = plans[int(rng.integers(0, len(plans)))]
        ev = PlanEvaluator(costs, plan)
        if ev.violations(1):
            continue
        b_star, total = best_microbatch(s, plan, costs=costs)
        truth = None
        for b in range(1, 97):
            if ev.violations(b):
                break
            t = ev.totals(b)[0]
            if truth is None or t < truth[1]:
                truth = (b, t)
        assert (b_star, total) == truth
