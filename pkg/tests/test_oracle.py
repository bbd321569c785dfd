import pytest

from pipesplit.bcd import solve_joint
from pipesplit.costmodel import evaluate
from pipesplit.mspgraph import InfeasibleScenarioError, solve_msp
from pipesplit.oracle import (
    EnumerationLimitError,
    enumerate_joint,
    enumerate_msp,
    estimate_enumeration_count,
    iter_plans,
    plan_count,
)
from pipesplit.scenario import generate_scenario

from conftest import (
    explicit_scenario,
    full_mesh_links,
    make_layer,
    make_node,
    random_small_scenario,
)


def test_option_count_closed_form_anchor():
    # 256-sample batches, a 16-layer model, at most 5 nodes: ~5.76e7 options
    assert estimate_enumeration_count(16, 5, 256) == 57_600_000


def test_joint_enumeration_count_matches_closed_form():
    s = generate_scenario(1, servers=2, layer_count=3, max_submodels=2,
                          minibatch=8)
    res = enumerate_joint(s)
    # every (plan, b) pair is visited when no memory violation cuts the scan
    assert res.evaluated == estimate_enumeration_count(3, 2, 8, 2)
    assert res.evaluated == plan_count(3, 2, 2) * 8


def test_plan_count_matches_iterator(rng):
    for _ in range(10):
        s = random_small_scenario(rng)
        want = plan_count(s.layer_count, len(s.servers()), s.max_submodels)
        assert sum(1 for _ in iter_plans(s)) == want
        loose = plan_count(s.layer_count, len(s.servers()), s.max_submodels,
                           allow_node_reuse=True)
        assert sum(1 for _ in iter_plans(s, allow_node_reuse=True)) == loose


def test_single_plan_scenario_returns_it():
    layers = [make_layer(fp=5e8, act=1e6, grad=9e5),
              make_layer(fp=1e9, act=5e5, grad=4e5)]
    nodes = [make_node("c0", "client"), make_node("s0", "server")]
    s = explicit_scenario(layers, nodes, full_mesh_links(["c0", "s0"],
                                                         rate=1e7))
    res = enumerate_msp(s, 4)
    assert res.plan.cuts == (1,)
    assert res.plan.placement == ("s0",)
    assert res.report == evaluate(s, res.plan, 4)


def test_limit_refusal_carries_estimate():
    s = generate_scenario(2, servers=4, layer_count=8, max_submodels=4)
    with pytest.raises(EnumerationLimitError) as err:
        enumerate_msp(s, 4, limit=10)
    assert err.value.estimate > 10


def test_joint_reduces_to_msp_at_single_batch():
    s = generate_scenario(4, servers=2, layer_count=4, minibatch=1)
    joint = enumerate_joint(s)
    fixed = enumerate_msp(s, 1)
    assert joint.b == 1
    assert joint.report.total_s == fixed.report.total_s
    assert joint.plan == fixed.plan


def test_joint_never_above_bcd(rng):
    for _ in range(25):
        s = random_small_scenario(rng, minibatch=48, max_servers=3)
        try:
            trace = solve_joint(s)
        except InfeasibleScenarioError:
            continue
        joint = enumerate_joint(s)
        assert joint.report.total_s <= trace.final.report.total_s + 1e-12


def test_msp_agreement_is_symmetric(rng):
    # the oracle applies the same deterministic tie-break as the graph solver
    for _ in range(30):
        s = random_small_scenario(rng)
        b = int(rng.integers(1, 17))
        try:
            sol = solve_msp(s, b)
        except InfeasibleScenarioError:
            continue
        res = enumerate_msp(s, b)
        assert (res.plan, res.report.total_s) == (sol.plan, sol.report.total_s)
