import statistics

import pytest

from pipesplit.bcd import solve_baseline, solve_joint
from pipesplit.costmodel import ScenarioCosts
from pipesplit.microbatch import best_microbatch
from pipesplit.mspgraph import InfeasibleScenarioError, solve_msp
from pipesplit.oracle import enumerate_joint
from pipesplit.scenario import generate_scenario

from conftest import (
    explicit_scenario,
    full_mesh_links,
    make_layer,
    make_node,
    random_small_scenario,
)


def test_fixed_point_converges_quickly():
    s = generate_scenario(7, servers=4, layer_count=8)
    first = solve_joint(s)
    again = solve_joint(s, b0=first.final.b)
    assert again.converged
    assert len(again.iterations) <= 2
    assert again.final.report.total_s == first.final.report.total_s


def test_trace_is_monotone_on_random_scenarios(rng):
    for _ in range(100):
        s = random_small_scenario(rng, minibatch=128, max_servers=4)
        try:
            trace = solve_joint(s)
        except InfeasibleScenarioError:
            continue
        totals = [it.total_s for it in trace.iterations]
        for a, b in zip(totals, totals[1:]):
            assert b <= a + 1e-9
        assert trace.final.report.total_s == totals[-1]


def _trace_key(trace):
    return (
        [(it.plan, it.b, it.t_interval, it.total_s) for it in trace.iterations],
        trace.converged,
        trace.final.plan,
        trace.final.b,
        trace.final.report,
    )


def test_determinism():
    s = generate_scenario(11, servers=5, layer_count=8)
    assert _trace_key(solve_joint(s)) == _trace_key(solve_joint(s))
    x = solve_baseline(s, "rc_op", seed=5)
    y = solve_baseline(s, "rc_op", seed=5)
    assert (x.plan, x.b, x.report) == (y.plan, y.b, y.report)


def test_no_pipeline_is_single_batch():
    s = generate_scenario(3, servers=4, layer_count=8)
    sol = solve_baseline(s, "no_pipeline")
    assert sol.b == s.minibatch
    assert sol.report.total_s == sol.report.first_batch_s
    assert sol.report.num_micro_batches == 1


def test_rc_op_degenerate_instance_is_optimal():
    # two layers, one server: the only cut and placement are forced
    layers = [make_layer(fp=5e8, bp=1e9, act=1e6, grad=9e5),
              make_layer(fp=1e9, bp=2e9, act=5e5, grad=4e5)]
    nodes = [make_node("c0", "client"), make_node("s0", "server")]
    s = explicit_scenario(layers, nodes, full_mesh_links(["c0", "s0"],
                                                         rate=1e7),
                          minibatch=64)
    base = solve_baseline(s, "rc_op", seed=1)
    joint = enumerate_joint(s)
    assert base.report.total_s == joint.report.total_s
    assert base.plan == joint.plan


def test_random_schemes_never_beat_the_planner():
    gaps_rc, gaps_rp = [], []
    for seed in range(30):
        s = generate_scenario(seed, servers=4, layer_count=6, minibatch=256)
        ours = solve_joint(s).final.report.total_s
        gaps_rc.append(solve_baseline(s, "rc_op", seed=seed).report.total_s - ours)
        gaps_rp.append(solve_baseline(s, "rp_oc", seed=seed).report.total_s - ours)
    assert statistics.mean(gaps_rc) >= 0.0
    assert statistics.mean(gaps_rp) >= 0.0


def test_block_exactness_spot_check(rng):
    for _ in range(10):
        s = random_small_scenario(rng, minibatch=64, max_servers=3, max_k=3)
        try:
            trace = solve_joint(s)
        except InfeasibleScenarioError:
            continue
        plan, b = trace.final.plan, trace.final.b
        total = trace.final.report.total_s
        costs = ScenarioCosts(s)
        # perturbing the micro-batch never lowers the total
        _, best_total = best_microbatch(s, plan, costs=costs)
        assert total == pytest.approx(best_total, rel=1e-12)
        # perturbing the plan (exact re-solve at b) never lowers it either
        assert solve_msp(s, b, costs=costs).report.total_s == pytest.approx(
            total, rel=1e-12)


def test_near_optimal_on_ten_server_mesh():
    s = generate_scenario(42, servers=10, layer_count=6, minibatch=256,
                          max_submodels=3)
    joint = enumerate_joint(s, limit=10 ** 7)
    trace = solve_joint(s)
    gap = trace.final.report.total_s / joint.report.total_s - 1.0
    assert gap <= 0.05
    assert joint.report.total_s <= trace.final.report.total_s + 1e-12


def test_pipelining_speedup_on_defaults():
    ratios = []
    for seed in range(5):
        s = generate_scenario(seed, servers=6, clients=1)
        ours = solve_joint(s).final.report.total_s
        flat = solve_baseline(s, "no_pipeline", seed=seed).report.total_s
        ratios.append(flat / ours)
    assert min(ratios) >= 2.0


def test_infeasible_at_start_reports_binding_constraint():
    layers = [make_layer(fp=1e9, act=1e6, grad=1e6, opt=1e12, param=1e12)
              for _ in range(4)]
    nodes = [make_node("c0", "client", memory_bits=1e6),
             make_node("s0", "server", memory_bits=1e6)]
    s = explicit_scenario(layers, nodes, full_mesh_links(["c0", "s0"],
                                                         rate=1e7),
                          minibatch=64)
    with pytest.raises(InfeasibleScenarioError, match="memory"):
        solve_joint(s)


def test_unknown_scheme_rejected():
    s = generate_scenario(1, servers=2, layer_count=4)
    with pytest.raises(ValueError, match="scheme"):
        solve_baseline(s, "optimal")
