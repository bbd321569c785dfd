import itertools
import json
import math

import pytest

from pipesplit.scenario import (
    PlanError,
    ScenarioError,
    canonical_plan,
    dbm_to_watts,
    effective_rate_matrix,
    generate_scenario,
    load_plan,
    load_scenario,
    save_plan,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
    validate_scenario,
)

from conftest import explicit_scenario, make_layer, make_link, make_node

MINIMAL_DOC = {
    "layers": [make_layer(fp=1e9, bp=2e9, act=1e6, grad=9e5, opt=1e5, param=1e5),
               make_layer(fp=1e9, bp=2e9, act=5e5, grad=4e5, opt=1e5, param=1e5)],
    "nodes": [
        make_node("c0", "client"),
        make_node("s0", "server", pos=(10.0, 0.0)),
        make_node("s1", "server", pos=(0.0, 10.0)),
    ],
    "links": [make_link("c0", "s0", rate=1e9), make_link("s0", "c0", rate=1e9),
              make_link("c0", "s1", rate=1e9), make_link("s1", "c0", rate=1e9),
              make_link("s0", "s1", rate=1e9), make_link("s1", "s0", rate=1e9)],
    "params": {"minibatch": 64, "max_submodels": 2, "pathloss_exponent": 3.5,
               "topology": "explicit", "noise_dbm_per_hz": -174},
}


def test_minimal_file_round_trip(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(MINIMAL_DOC))
    s = load_scenario(str(path))
    assert s.layer_count == 2
    assert len(s.servers()) == 2
    assert len(s.clients()) == 1


def test_plan_cut_beyond_layers_rejected(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(MINIMAL_DOC))
    s = load_scenario(str(path))
    plan_path = tmp_path / "plan.json"
    plan_path.write_text(json.dumps({"cuts": [3], "placement": ["s0"],
                                     "micro_batch": 4}))
    with pytest.raises(PlanError):
        load_plan(str(plan_path), s)


def test_table_defaults_file(tmp_path):
    doc = {
        "layers": [make_layer(fp=1e9, act=1e6, grad=1e6) for _ in range(16)],
        "nodes": [
            make_node("c0", "client", flops=5e12, intensity=1 / 32),
            {"id": "s0", "kind": "server", "tflops": 5.0, "intensity": 1 / 32,
             "memory_gb": 8.0, "tx_power_mw": 300.0, "position_m": [100.0, 0.0],
             "bp_threshold": 32},
        ],
        "links": [{"src": "c0", "dst": "s0", "bandwidth_mhz": 30.0},
                  {"src": "s0", "dst": "c0", "bandwidth_mhz": 30.0}],
        "params": {"minibatch": 512, "max_submodels": 3,
                   "pathloss_exponent": 3.5, "noise_dbm_per_hz": -174},
    }
    path = tmp_path / "defaults.json"
    path.write_text(json.dumps(doc))
    s = load_scenario(str(path))
    assert s.minibatch == 512
    assert s.pathloss_exp == 3.5
    assert s.nodes[0].intensity == 1 / 32
    # unit conversions
    server = s.node("s0")
    assert server.compute == 5e12
    assert server.memory_bits == 8.0 * 8e9
    assert server.tx_power_w == pytest.approx(0.3)
    assert s.links[0].bandwidth_hz == 30e6
    assert s.noise_w_per_hz == pytest.approx(dbm_to_watts(-174))


def test_unknown_fields_rejected():
    doc = json.loads(json.dumps(MINIMAL_DOC))
    doc["nodes"][0]["bogus"] = 1
    with pytest.raises(ScenarioError, match="bogus"):
        scenario_from_dict(doc)


def test_validation_names_the_invariant():
    doc = json.loads(json.dumps(MINIMAL_DOC))
    doc["nodes"][1]["compute_flops"] = -1.0
    with pytest.raises(ScenarioError, match="compute"):
        scenario_from_dict(doc)


def test_parse_error_reports_position(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"layers": [,]}')
    with pytest.raises(ScenarioError, match="line 1"):
        load_scenario(str(path))


def test_generated_round_trip(tmp_path):
    for seed, scale in ((7, 1.0), (11, 3.5)):
        s = generate_scenario(seed, servers=4, layer_count=6, model_scale=scale)
        path = tmp_path / f"s{seed}.json"
        save_scenario(s, str(path))
        assert load_scenario(str(path)) == s


def test_plan_file_round_trip(tmp_path):
    s = generate_scenario(3, servers=3, layer_count=6)
    plan = canonical_plan([2, 4], ["s0", "s2"], 6)
    path = tmp_path / "plan.json"
    save_plan(plan, 12, str(path))
    loaded, b = load_plan(str(path), s)
    assert loaded == plan and b == 12


def test_generator_determinism():
    a = json.dumps(scenario_to_dict(generate_scenario(7, servers=6)))
    b = json.dumps(scenario_to_dict(generate_scenario(7, servers=6)))
    assert a == b


def test_generator_nesting_across_server_counts():
    small = generate_scenario(7, servers=4)
    big = generate_scenario(7, servers=6)
    assert small.nodes[:5] == big.nodes[:5]  # client + first four servers


def test_line_topology_two_servers():
    s = generate_scenario(7, servers=2, topology="line")
    ss = [(l.src, l.dst) for l in s.links if l.src.startswith("s")
          and l.dst.startswith("s")]
    assert sorted(ss) == [("s0", "s1"), ("s1", "s0")]


def test_generated_compute_within_range():
    for seed in range(40):
        s = generate_scenario(seed, servers=3, layer_count=4)
        for node in s.nodes:
            assert 1e12 <= node.compute <= 10e12


def test_generator_invariants_property_sweep():
    for seed in range(1000):
        s = generate_scenario(seed, servers=3, clients=1, layer_count=4)
        validate_scenario(s)  # raises on any invariant violation


def test_generator_rejects_bad_knobs():
    with pytest.raises(ScenarioError, match="topology"):
        generate_scenario(1, topology="ring")
    with pytest.raises(ScenarioError, match="server"):
        generate_scenario(1, servers=0)


# ---------------------------------------------------------------------------
# effective rates


def test_rate_unit_snr():
    # arrange p * d^-gamma / (N0 * W) = 1 with W = 1 MHz: r = W * log2(2)
    w = 1e6
    noise = 1e-15
    d = 10.0
    gamma = 2.0
    p = noise * w * d ** gamma
    s = explicit_scenario(
        MINIMAL_DOC["layers"],
        [make_node("c0", "client", power_w=p),
         make_node("s0", "server", power_w=p, pos=(d, 0.0))],
        [make_link("c0", "s0", bandwidth_hz=w),
         make_link("s0", "c0", bandwidth_hz=w)],
        pathloss=gamma,
        noise=noise,
    )
    rt = effective_rate_matrix(s)
    assert rt.delay_per_bit("c0", "s0") == pytest.approx(1e-6, rel=1e-12)


def test_star_relay_additivity():
    s = generate_scenario(5, servers=4, topology="star")
    rt = effective_rate_matrix(s)
    hub = "s0"
    for a, b in itertools.permutations(["s1", "s2", "s3"], 2):
        assert rt.delay_per_bit(a, b) == pytest.approx(
            rt.delay_per_bit(a, hub) + rt.delay_per_bit(hub, b), rel=1e-12)


def _brute_force_delays(s):
    """Minimum summed delay over all simple routes, per ordered pair."""
    from pipesplit.scenario import link_rate

    ids = [n.id for n in s.nodes]
    direct = {}
    for link in s.links:
        r = link_rate(link, s.node(link.src), s.node(link.dst),
                      s.pathloss_exp, s.noise_w_per_hz)
        direct[(link.src, link.dst)] = min(
            direct.get((link.src, link.dst), math.inf), 1.0 / r)
    best = {}
    for src in ids:
        for dst in ids:
            if src == dst:
                continue
            routes = []
            others = [x for x in ids if x not in (src, dst)]
            for k in range(len(others) + 1):
                for mid in itertools.permutations(others, k):
                    hops = list(zip((src,) + mid, mid + (dst,)))
                    if all(h in direct for h in hops):
                        routes.append(sum(direct[h] for h in hops))
            best[(src, dst)] = min(routes) if routes else math.inf
    return best


def test_mesh_matrix_matches_route_enumeration():
    s = generate_scenario(7, servers=5, clients=1, layer_count=4)
    rt = effective_rate_matrix(s)
    expected = _brute_force_delays(s)
    for (src, dst), want in expected.items():
        assert rt.delay_per_bit(src, dst) == pytest.approx(want, rel=1e-12)


def test_rate_matrix_permutation_equivariance():
    s = generate_scenario(9, servers=4, clients=1, layer_count=4)
    rt = effective_rate_matrix(s)
    doc = scenario_to_dict(s)
    mapping = {"s0": "zz", "s1": "aa", "s2": "mm", "s3": "bb", "c0": "kk"}
    for rec in doc["nodes"]:
        rec["id"] = mapping[rec["id"]]
    for rec in doc["links"]:
        rec["src"] = mapping[rec["src"]]
        rec["dst"] = mapping[rec["dst"]]
    renamed = scenario_from_dict(doc)
    rt2 = effective_rate_matrix(renamed)
    for a in mapping:
        for b in mapping:
            if a != b:
                assert rt.delay_per_bit(a, b) == rt2.delay_per_bit(
                    mapping[a], mapping[b])


def test_disconnected_pair_is_infinite():
    s = explicit_scenario(
        MINIMAL_DOC["layers"],
        [make_node("c0", "client"), make_node("s0", "server", pos=(5, 0))],
        [make_link("c0", "s0", rate=1e9)],
    )
    rt = effective_rate_matrix(s)
    assert rt.delay_per_bit("s0", "c0") == math.inf


# ---------------------------------------------------------------------------
# plans


def test_canonical_plan_removes_empty_submodels():
    plan = canonical_plan([2, 2, 4, 6], ["a", "b", "c", "d"], 6)
    assert plan.cuts == (2, 4)
    assert plan.placement == ("a", "c")
    assert plan.effective_count == 3


def test_canonical_plan_drops_trailing_full_cut():
    plan = canonical_plan([3, 6], ["a", "b"], 6)
    assert plan.cuts == (3,)
    assert plan.placement == ("a",)


def test_canonical_plan_rejects_adjacent_same_host():
    with pytest.raises(PlanError, match="adjacent"):
        canonical_plan([2, 4], ["a", "a"], 6)


def test_canonical_plan_rejects_decreasing_cuts():
    with pytest.raises(PlanError, match="non-decreasing"):
        canonical_plan([4, 2], ["a", "b"], 6)


def test_canonical_plan_needs_two_submodels():
    with pytest.raises(PlanError, match="2 non-empty"):
        canonical_plan([6], ["a"], 6)


def test_submodel_ranges():
    plan = canonical_plan([2, 4], ["a", "b"], 7)
    assert plan.submodel_range(1, 7) == (1, 2)
    assert plan.submodel_range(2, 7) == (3, 4)
    assert plan.submodel_range(3, 7) == (5, 7)
    assert plan.host(1) is None
    assert plan.host(3) == "b"
