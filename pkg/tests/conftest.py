"""Shared builders for the test suite."""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from pipesplit.costmodel import PlanEvaluator, ScenarioCosts
from pipesplit.oracle import iter_plans
from pipesplit.scenario import Scenario, generate_scenario, scenario_from_dict


def make_layer(fp=0.0, bp=0.0, act=0.0, grad=0.0, opt=0.0, param=0.0) -> dict:
    return {
        "fp_flops": fp,
        "bp_flops": bp,
        "act_bits": act,
        "grad_bits": grad,
        "opt_state_bits": opt,
        "param_bits": param,
    }


def make_node(node_id, kind, flops=1e12, intensity=1.0, memory_bits=1e18,
              power_w=0.2, pos=(0.0, 0.0), init_fp=0.001, init_bp=0.001,
              bp_threshold=32) -> dict:
    return {
        "id": node_id,
        "kind": kind,
        "compute_flops": flops,
        "intensity": intensity,
        "memory_bits": memory_bits,
        "tx_power_w": power_w,
        "position_m": list(pos),
        "init_fp_s": init_fp,
        "init_bp_s": init_bp,
        "bp_threshold": bp_threshold,
    }


def make_link(src, dst, rate=None, bandwidth_hz=None, distance_m=None) -> dict:
    rec = {"src": src, "dst": dst}
    if rate is not None:
        rec["fixed_rate_bps"] = rate
    if bandwidth_hz is not None:
        rec["bandwidth_hz"] = bandwidth_hz
    if distance_m is not None:
        rec["distance_m"] = distance_m
    return rec


def explicit_scenario(layers, nodes, links, minibatch=64, max_submodels=2,
                      pathloss=3.5, noise=3.9810717055349565e-21) -> Scenario:
    return scenario_from_dict(
        {
            "layers": layers,
            "nodes": nodes,
            "links": links,
            "params": {
                "minibatch": minibatch,
                "max_submodels": max_submodels,
                "pathloss_exponent": pathloss,
                "topology": "explicit",
                "noise_w_per_hz": noise,
            },
        }
    )


def full_mesh_links(node_ids, rate=1e9):
    return [
        make_link(a, b, rate=rate)
        for a, b in itertools.permutations(node_ids, 2)
    ]


def random_small_scenario(rng, minibatch=64, max_layers=8, max_servers=4,
                          max_k=4, max_clients=2, scale_range=(0.5, 8.0)):
    """Random instance in the oracle-tractable regime."""
    n = int(rng.integers(1, max_servers + 1))
    i = int(rng.integers(2, max_layers + 1))
    k = int(rng.integers(2, min(i, max_k) + 1))
    m = int(rng.integers(1, max_clients + 1))
    return generate_scenario(
        int(rng.integers(0, 10 ** 6)),
        servers=n,
        clients=m,
        layer_count=i,
        max_submodels=k,
        minibatch=minibatch,
        model_scale=float(rng.uniform(*scale_range)),
    )


def random_feasible_pair(rng, scenario, costs=None, max_b=None):
    """A (plan, b) pair feasible for the scenario, or None."""
    if costs is None:
        costs = ScenarioCosts(scenario)
    plans = list(itertools.islice(iter_plans(scenario), 80))
    if not plans:
        return None
    cap = max_b if max_b is not None else scenario.minibatch
    for _ in range(12):
        plan = plans[int(rng.integers(0, len(plans)))]
        b = int(rng.integers(1, cap + 1))
        ev = PlanEvaluator(costs, plan)
        while b > 1 and ev.violations(b):
            b //= 2
        if not ev.violations(b):
            return plan, b, ev
    return None


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
