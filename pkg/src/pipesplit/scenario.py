"""Domain types, canonical units, scenario files, and the randomized generator.

All internal math runs in canonical units: seconds, bits, FLOPs, watts, Hz,
meters.  Scenario files may carry convenience units (GB, MHz, mW, dBm/Hz,
bytes); they are converted once on load and never afterwards.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

TOPOLOGIES = ("mesh", "line", "star", "tree", "explicit")

# unit factors applied on load
_TFLOPS = 1e12
_MHZ = 1e6
_GB_BITS = 8e9  # 1 GB = 1e9 bytes
_MW = 1e-3


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) * 1e-3


class ScenarioError(ValueError):
    """Raised for scenario parse or invariant failures."""


class PlanError(ValueError):
    """Raised for split-plan parse or invariant failures."""


@dataclass(frozen=True)
class LayerProfile:
    """Per-layer cost profile with cumulative prefixes over layers 1..index.

    `act_bits`/`grad_bits` are the boundary transfer sizes per sample when this
    layer is a cut; the `_cum` fields feed the memory model.
    """

    index: int
    fp_work: float
    bp_work: float
    act_bits: float
    grad_bits: float
    opt_state_bits: float
    param_bits: float
    fp_work_cum: float
    bp_work_cum: float
    act_bits_cum: float
    grad_bits_cum: float
    opt_state_bits_cum: float
    param_bits_cum: float


@dataclass(frozen=True)
class NodeProfile:
    id: str
    kind: str  # "client" | "server"
    compute: float  # FLOP/s
    intensity: float  # dimensionless work-to-time scaling
    memory_bits: float
    tx_power_w: float
    position: tuple[float, float]  # meters
    init_fp_s: float
    init_bp_s: float
    bp_threshold: int  # samples: backward pass is flat at or below this batch


@dataclass(frozen=True)
class LinkProfile:
    """Directed link. Either a Shannon-rate wireless link (bandwidth_hz) or a
    fixed-rate wired link (fixed_rate_bps). distance_m overrides the Euclidean
    distance between endpoint positions."""

    src: str
    dst: str
    bandwidth_hz: float | None = None
    fixed_rate_bps: float | None = None
    distance_m: float | None = None


@dataclass(frozen=True)
class Scenario:
    layers: tuple[LayerProfile, ...]
    nodes: tuple[NodeProfile, ...]
    links: tuple[LinkProfile, ...]
    topology: str
    minibatch: int
    max_submodels: int
    pathloss_exp: float
    noise_w_per_hz: float

    @property
    def layer_count(self) -> int:
        return len(self.layers)

    def clients(self) -> tuple[NodeProfile, ...]:
        return tuple(n for n in self.nodes if n.kind == "client")

    def servers(self) -> tuple[NodeProfile, ...]:
        return tuple(n for n in self.nodes if n.kind == "server")

    def node(self, node_id: str) -> NodeProfile:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise ScenarioError(f"unknown node id {node_id!r}")


@dataclass(frozen=True)
class SplitPlan:
    """Canonical split: cuts[j] is the last layer of submodel j+1, and
    placement[j] hosts submodel j+2.  Submodel 1 always lives on the client
    pool; the final submodel ends at the last layer implicitly."""

    cuts: tuple[int, ...]
    placement: tuple[str, ...]

    @property
    def effective_count(self) -> int:
        return len(self.cuts) + 1

    def submodel_range(self, k: int, layer_count: int) -> tuple[int, int]:
        """Inclusive (first, last) layer indices of submodel k (1-based)."""
        first = 1 if k == 1 else self.cuts[k - 2] + 1
        last = self.cuts[k - 1] if k - 1 < len(self.cuts) else layer_count
        return first, last

    def host(self, k: int) -> str | None:
        """Server id hosting submodel k (None for the client pool, k=1)."""
        return None if k == 1 else self.placement[k - 2]


def canonical_plan(
    cuts: Sequence[int], placement: Sequence[str], layer_count: int
) -> SplitPlan:
    """Canonicalize and validate raw (cuts, placement) into a SplitPlan.

    Empty submodels (repeated cuts, or cuts at the final layer) are removed
    together with their placement entries before validation.
    """
    if len(cuts) != len(placement):
        raise PlanError(
            f"placement length {len(placement)} != cuts length {len(cuts)}"
        )
    kept_cuts: list[int] = []
    kept_hosts: list[str] = []
    prev = 0
    for c, host in zip(cuts, placement):
        if not isinstance(c, int) or isinstance(c, bool):
            raise PlanError(f"cut {c!r} is not an integer layer index")
        if c < prev:
            raise PlanError(f"cuts must be non-decreasing, got {list(cuts)}")
        if c > layer_count:
            raise PlanError(f"cut {c} exceeds layer count {layer_count}")
        if c == prev or c == layer_count:
            continue  # empty submodel: drop it and its host
        kept_cuts.append(c)
        kept_hosts.append(host)
        prev = c
    if not kept_cuts:
        raise PlanError("plan has fewer than 2 non-empty submodels")
    for a, b in zip(kept_hosts, kept_hosts[1:]):
        if a == b:
            raise PlanError(
                f"consecutive submodels share node {a!r}; adjacent hosts must differ"
            )
    return SplitPlan(tuple(kept_cuts), tuple(kept_hosts))


def validate_plan(scenario: Scenario, plan: SplitPlan) -> None:
    """Check a canonical plan against a scenario (hosts exist, K cap holds)."""
    if plan.effective_count > scenario.max_submodels:
        raise PlanError(
            f"plan uses {plan.effective_count} submodels; scenario allows "
            f"{scenario.max_submodels}"
        )
    server_ids = {n.id for n in scenario.servers()}
    for host in plan.placement:
        if host not in server_ids:
            raise PlanError(f"placement references unknown server {host!r}")


# ---------------------------------------------------------------------------
# effective rates


class RateTable:
    """Seconds-per-bit between every ordered node pair.

    Adjacent pairs use the direct link rate; non-adjacent pairs take the
    cheapest store-and-forward relay route (sum of per-hop delays).  Entries
    are math.inf for unreachable pairs.
    """

    def __init__(self, node_ids: Sequence[str], delays: np.ndarray):
        self.node_ids = tuple(node_ids)
        self.index = {nid: i for i, nid in enumerate(self.node_ids)}
        self.delays = delays

    def delay_per_bit(self, src: str, dst: str) -> float:
        return float(self.delays[self.index[src], self.index[dst]])


def link_rate(
    link: LinkProfile,
    src: NodeProfile,
    dst: NodeProfile,
    pathloss_exp: float,
    noise_w_per_hz: float,
) -> float:
    """Achievable bit/s of one directed link (Shannon capacity, log base 2).

    Noise power is spectral density times the link bandwidth.
    """
    if link.fixed_rate_bps is not None:
        return link.fixed_rate_bps
    if link.distance_m is not None:
        d = link.distance_m
    else:
        dx = src.position[0] - dst.position[0]
        dy = src.position[1] - dst.position[1]
        d = math.hypot(dx, dy)
    if d <= 0.0:
        raise ScenarioError(f"link {src.id}->{dst.id} has non-positive distance")
    w = link.bandwidth_hz
    snr = src.tx_power_w * d ** (-pathloss_exp) / (noise_w_per_hz * w)
    return w * math.log2(1.0 + snr)


def effective_rate_matrix(
    scenario: Scenario,
    link_rate_factors: Mapping[tuple[str, str], float] | None = None,
) -> RateTable:
    """All-pairs seconds-per-bit table with min-delay relay forwarding.

    link_rate_factors optionally multiplies each directed link's rate before
    the relay closure (used by the perturbed simulation mode).
    """
    ids = [n.id for n in scenario.nodes]
    idx = {nid: i for i, nid in enumerate(ids)}
    n = len(ids)
    delays = np.full((n, n), math.inf)
    np.fill_diagonal(delays, 0.0)
    for link in scenario.links:
        r = link_rate(
            link,
            scenario.node(link.src),
            scenario.node(link.dst),
            scenario.pathloss_exp,
            scenario.noise_w_per_hz,
        )
        if link_rate_factors is not None:
            r *= link_rate_factors.get((link.src, link.dst), 1.0)
        if r <= 0.0:
            raise ScenarioError(f"link {link.src}->{link.dst} has non-positive rate")
        d = 1.0 / r
        i, j = idx[link.src], idx[link.dst]
        if d < delays[i, j]:
            delays[i, j] = d
    # min-plus closure over relay nodes (store-and-forward serialization)
    for k in range(n):
        via = delays[:, k, None] + delays[None, k, :]
        np.minimum(delays, via, out=delays)
    return RateTable(ids, delays)


# ---------------------------------------------------------------------------
# validation

def validate_scenario(s: Scenario) -> None:
    if s.layer_count < 2:
        raise ScenarioError(f"need at least 2 layers, got {s.layer_count}")
    clients, servers = s.clients(), s.servers()
    if not clients:
        raise ScenarioError("scenario has no clients")
    if not servers:
        raise ScenarioError("scenario has no servers")
    if not (2 <= s.max_submodels <= s.layer_count):
        raise ScenarioError(
            f"max_submodels={s.max_submodels} outside [2, {s.layer_count}]"
        )
    if s.minibatch < 1:
        raise ScenarioError(f"minibatch must be >= 1, got {s.minibatch}")
    if s.topology not in TOPOLOGIES:
        raise ScenarioError(f"unknown topology {s.topology!r}")
    if s.noise_w_per_hz <= 0.0:
        raise ScenarioError("noise density must be positive")

    seen = set()
    for node in s.nodes:
        if node.id in seen:
            raise ScenarioError(f"duplicate node id {node.id!r}")
        seen.add(node.id)
        if node.kind not in ("client", "server"):
            raise ScenarioError(f"node {node.id}: kind must be client or server")
        if node.compute <= 0.0:
            raise ScenarioError(f"node {node.id}: compute must be > 0")
        if node.memory_bits <= 0.0:
            raise ScenarioError(f"node {node.id}: memory must be > 0")
        if node.bp_threshold < 0:
            raise ScenarioError(f"node {node.id}: bp_threshold must be >= 0")
        if node.init_fp_s < 0.0 or node.init_bp_s < 0.0:
            raise ScenarioError(f"node {node.id}: init times must be >= 0")

    prev: LayerProfile | None = None
    for layer in s.layers:
        for field in ("fp_work", "bp_work", "act_bits", "grad_bits",
                      "opt_state_bits", "param_bits"):
            if getattr(layer, field) < 0.0:
                raise ScenarioError(f"layer {layer.index}: {field} must be >= 0")
        if prev is not None:
            for field in ("fp_work_cum", "bp_work_cum", "act_bits_cum",
                          "grad_bits_cum", "opt_state_bits_cum", "param_bits_cum"):
                if getattr(layer, field) < getattr(prev, field):
                    raise ScenarioError(
                        f"layer {layer.index}: cumulative {field} decreased"
                    )
        prev = layer

    ids = {n.id for n in s.nodes}
    for link in s.links:
        if link.src not in ids or link.dst not in ids:
            raise ScenarioError(f"link {link.src}->{link.dst}: unknown endpoint")
        if link.src == link.dst:
            raise ScenarioError(f"self-link on {link.src!r}")
        if link.fixed_rate_bps is None:
            if link.bandwidth_hz is None or link.bandwidth_hz <= 0.0:
                raise ScenarioError(
                    f"link {link.src}->{link.dst}: bandwidth must be > 0"
                )
        elif link.fixed_rate_bps <= 0.0:
            raise ScenarioError(f"link {link.src}->{link.dst}: fixed rate must be > 0")

    # every server reachable from the client set
    adj: dict[str, set[str]] = {n.id: set() for n in s.nodes}
    for link in s.links:
        adj[link.src].add(link.dst)
    frontier = [c.id for c in clients]
    reached = set(frontier)
    while frontier:
        nxt = []
        for u in frontier:
            for v in adj[u]:
                if v not in reached:
                    reached.add(v)
                    nxt.append(v)
        frontier = nxt
    unreachable = [sv.id for sv in servers if sv.id not in reached]
    if unreachable:
        raise ScenarioError(f"servers unreachable from clients: {unreachable}")


# ---------------------------------------------------------------------------
# file I/O
#
# Scenario files are JSON with top-level keys layers / nodes / links / params.
# Layer records carry per-layer (not cumulative) values; cumulative sums are
# computed on load.  Each numeric field accepts exactly one of a canonical
# name or a unit-suffixed alternative (see _ALT tables).  Unknown fields are
# rejected.

_NODE_ALTS = {
    "compute_flops": [("compute_flops", 1.0), ("tflops", _TFLOPS)],
    "memory_bits": [("memory_bits", 1.0), ("memory_gb", _GB_BITS)],
    "tx_power_w": [("tx_power_w", 1.0), ("tx_power_mw", _MW)],
}

_LAYER_ALTS = {
    "fp_work": [("fp_flops", 1.0), ("fp_gflops", 1e9)],
    "bp_work": [("bp_flops", 1.0), ("bp_gflops", 1e9)],
    "act_bits": [("act_bits", 1.0), ("act_bytes", 8.0)],
    "grad_bits": [("grad_bits", 1.0), ("grad_bytes", 8.0)],
    "opt_state_bits": [("opt_state_bits", 1.0), ("opt_state_bytes", 8.0)],
    "param_bits": [("param_bits", 1.0), ("param_bytes", 8.0)],
}


def _pick(record: Mapping, alts: list[tuple[str, float]], where: str) -> float:
    present = [(name, factor) for name, factor in alts if name in record]
    if len(present) != 1:
        names = [name for name, _ in alts]
        raise ScenarioError(f"{where}: exactly one of {names} required")
    name, factor = present[0]
    value = record[name]
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ScenarioError(f"{where}: field {name!r} must be a number")
    return float(value) * factor


def _check_keys(record: Mapping, allowed: set[str], where: str) -> None:
    unknown = set(record) - allowed
    if unknown:
        raise ScenarioError(f"{where}: unknown fields {sorted(unknown)}")


def _layers_from_records(records: Iterable[Mapping]) -> tuple[LayerProfile, ...]:
    allowed = {name for alts in _LAYER_ALTS.values() for name, _ in alts}
    layers = []
    cums = {k: 0.0 for k in _LAYER_ALTS}
    for i, rec in enumerate(records, start=1):
        where = f"layers[{i - 1}]"
        _check_keys(rec, allowed, where)
        vals = {k: _pick(rec, alts, where) for k, alts in _LAYER_ALTS.items()}
        for k in cums:
            cums[k] += vals[k]
        layers.append(
            LayerProfile(
                index=i,
                fp_work=vals["fp_work"],
                bp_work=vals["bp_work"],
                act_bits=vals["act_bits"],
                grad_bits=vals["grad_bits"],
                opt_state_bits=vals["opt_state_bits"],
                param_bits=vals["param_bits"],
                fp_work_cum=cums["fp_work"],
                bp_work_cum=cums["bp_work"],
                act_bits_cum=cums["act_bits"],
                grad_bits_cum=cums["grad_bits"],
                opt_state_bits_cum=cums["opt_state_bits"],
                param_bits_cum=cums["param_bits"],
            )
        )
    return tuple(layers)


def _node_from_record(rec: Mapping, where: str) -> NodeProfile:
    allowed = {"id", "kind", "intensity", "position_m", "init_fp_s", "init_bp_s",
               "bp_threshold"}
    allowed |= {name for alts in _NODE_ALTS.values() for name, _ in alts}
    _check_keys(rec, allowed, where)
    for key in ("id", "kind", "intensity", "position_m"):
        if key not in rec:
            raise ScenarioError(f"{where}: missing field {key!r}")
    pos = rec["position_m"]
    if (not isinstance(pos, (list, tuple)) or len(pos) != 2
            or not all(isinstance(v, (int, float)) for v in pos)):
        raise ScenarioError(f"{where}: position_m must be [x, y] in meters")
    return NodeProfile(
        id=str(rec["id"]),
        kind=str(rec["kind"]),
        compute=_pick(rec, _NODE_ALTS["compute_flops"], where),
        intensity=float(rec["intensity"]),
        memory_bits=_pick(rec, _NODE_ALTS["memory_bits"], where),
        tx_power_w=_pick(rec, _NODE_ALTS["tx_power_w"], where),
        position=(float(pos[0]), float(pos[1])),
        init_fp_s=float(rec.get("init_fp_s", 0.001)),
        init_bp_s=float(rec.get("init_bp_s", 0.001)),
        bp_threshold=int(rec.get("bp_threshold", 32)),
    )


def _link_from_record(rec: Mapping, where: str) -> LinkProfile:
    allowed = {"src", "dst", "bandwidth_hz", "bandwidth_mhz", "fixed_rate_bps",
               "distance_m"}
    _check_keys(rec, allowed, where)
    if "src" not in rec or "dst" not in rec:
        raise ScenarioError(f"{where}: links need src and dst")
    bandwidth = None
    if "bandwidth_hz" in rec and "bandwidth_mhz" in rec:
        raise ScenarioError(f"{where}: give bandwidth_hz or bandwidth_mhz, not both")
    if "bandwidth_hz" in rec:
        bandwidth = float(rec["bandwidth_hz"])
    elif "bandwidth_mhz" in rec:
        bandwidth = float(rec["bandwidth_mhz"]) * _MHZ
    fixed = float(rec["fixed_rate_bps"]) if "fixed_rate_bps" in rec else None
    if bandwidth is None and fixed is None:
        raise ScenarioError(f"{where}: need bandwidth or fixed_rate_bps")
    dist = float(rec["distance_m"]) if "distance_m" in rec else None
    return LinkProfile(str(rec["src"]), str(rec["dst"]), bandwidth, fixed, dist)


def scenario_from_dict(doc: Mapping) -> Scenario:
    _check_keys(doc, {"layers", "nodes", "links", "params"}, "scenario")
    for key in ("layers", "nodes", "links", "params"):
        if key not in doc:
            raise ScenarioError(f"scenario: missing top-level key {key!r}")
    params = doc["params"]
    allowed = {"minibatch", "max_submodels", "pathloss_exponent", "topology",
               "noise_w_per_hz", "noise_dbm_per_hz"}
    _check_keys(params, allowed, "params")
    if "noise_w_per_hz" in params:
        noise = float(params["noise_w_per_hz"])
    elif "noise_dbm_per_hz" in params:
        noise = dbm_to_watts(float(params["noise_dbm_per_hz"]))
    else:
        raise ScenarioError("params: need noise_w_per_hz or noise_dbm_per_hz")
    s = Scenario(
        layers=_layers_from_records(doc["layers"]),
        nodes=tuple(
            _node_from_record(rec, f"nodes[{i}]")
            for i, rec in enumerate(doc["nodes"])
        ),
        links=tuple(
            _link_from_record(rec, f"links[{i}]")
            for i, rec in enumerate(doc["links"])
        ),
        topology=str(params.get("topology", "explicit")),
        minibatch=int(params["minibatch"]),
        max_submodels=int(params["max_submodels"]),
        pathloss_exp=float(params.get("pathloss_exponent", 3.5)),
        noise_w_per_hz=noise,
    )
    validate_scenario(s)
    return s


def scenario_to_dict(s: Scenario) -> dict:
    """Inverse of scenario_from_dict using canonical-unit field names, so that
    load(save(S)) reproduces S exactly (bit-for-bit floats)."""
    return {
        "layers": [
            {
                "fp_flops": ly.fp_work,
                "bp_flops": ly.bp_work,
                "act_bits": ly.act_bits,
                "grad_bits": ly.grad_bits,
                "opt_state_bits": ly.opt_state_bits,
                "param_bits": ly.param_bits,
            }
            for ly in s.layers
        ],
        "nodes": [
            {
                "id": n.id,
                "kind": n.kind,
                "compute_flops": n.compute,
                "intensity": n.intensity,
                "memory_bits": n.memory_bits,
                "tx_power_w": n.tx_power_w,
                "position_m": [n.position[0], n.position[1]],
                "init_fp_s": n.init_fp_s,
                "init_bp_s": n.init_bp_s,
                "bp_threshold": n.bp_threshold,
            }
            for n in s.nodes
        ],
        "links": [
            {
                "src": l.src,
                "dst": l.dst,
                **({"bandwidth_hz": l.bandwidth_hz} if l.bandwidth_hz is not None else {}),
                **({"fixed_rate_bps": l.fixed_rate_bps} if l.fixed_rate_bps is not None else {}),
                **({"distance_m": l.distance_m} if l.distance_m is not None else {}),
            }
            for l in s.links
        ],
        "params": {
            "minibatch": s.minibatch,
            "max_submodels": s.max_submodels,
            "pathloss_exponent": s.pathloss_exp,
            "topology": s.topology,
            "noise_w_per_hz": s.noise_w_per_hz,
        },
    }


def load_scenario(path: str) -> Scenario:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScenarioError(
            f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(doc, dict):
        raise ScenarioError(f"{path}: top level must be a JSON object")
    return scenario_from_dict(doc)


def save_scenario(s: Scenario, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(s), fh, indent=1)
        fh.write("\n")


def load_plan(path: str, scenario: Scenario) -> tuple[SplitPlan, int]:
    """Load a plan file: {"cuts": [...], "placement": [...], "micro_batch": b}."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise PlanError(
            f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    _check_keys(doc, {"cuts", "placement", "micro_batch"}, "plan")
    for key in ("cuts", "placement", "micro_batch"):
        if key not in doc:
            raise PlanError(f"plan: missing field {key!r}")
    plan = canonical_plan(
        [int(c) for c in doc["cuts"]],
        [str(p) for p in doc["placement"]],
        scenario.layer_count,
    )
    validate_plan(scenario, plan)
    b = int(doc["micro_batch"])
    if not (1 <= b <= scenario.minibatch):
        raise PlanError(f"micro_batch {b} outside [1, {scenario.minibatch}]")
    return plan, b


def save_plan(plan: SplitPlan, micro_batch: int, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(
            {
                "cuts": list(plan.cuts),
                "placement": list(plan.placement),
                "micro_batch": micro_batch,
            },
            fh,
            indent=1,
        )
        fh.write("\n")


# ---------------------------------------------------------------------------
# randomized generator

BANDWIDTH_REGIMES = {
    "sub6": (10.0, 50.0),      # MHz per link
    "mmwave": (100.0, 200.0),
}


@dataclass(frozen=True)
class GeneratorKnobs:
    servers: int = 6
    clients: int = 1
    topology: str = "mesh"
    bandwidth: str | tuple[float, float] = "sub6"  # regime name or (lo, hi) MHz
    layer_count: int = 16
    minibatch: int = 512
    max_submodels: int = 3
    model_scale: float = 1.0       # scales all per-layer data sizes
    area_m: float = 500.0
    compute_tflops: tuple[float, float] = (1.0, 10.0)
    power_mw: tuple[float, float] = (100.0, 500.0)
    memory_gb: tuple[float, float] = (2.0, 16.0)
    pathloss_exp: float = 3.5
    noise_dbm_per_hz: float = -174.0
    init_s: float = 0.001
    bp_threshold: int = 32


def default_layer_profile(
    layer_count: int = 16, model_scale: float = 1.0
) -> tuple[LayerProfile, ...]:
    """Deterministic synthetic profile: conv-net-like activation decay, most
    parameters in the deep layers, backward work twice the forward work."""
    fp_pattern = (1.25, 0.75, 1.0)
    sq_total = sum(i * i for i in range(1, layer_count + 1))
    records = []
    for i in range(1, layer_count + 1):
        fp = 1.6e10 * fp_pattern[(i - 1) % 3]
        act = (2.2e6 * 0.78 ** (i - 1) + 1.2e5) * model_scale
        param = 6.0e7 * model_scale * (i * i) / sq_total
        records.append(
            {
                "fp_flops": fp,
                "bp_flops": 2.0 * fp,
                "act_bits": act,
                "grad_bits": 0.9 * act,
                "opt_state_bits": 2.0 * param,
                "param_bits": param,
            }
        )
    return _layers_from_records(records)


def _rng(seed: int, tag: int, index: int) -> np.random.Generator:
    return np.random.default_rng((int(seed), int(tag), int(index)))


_TAG_CLIENT, _TAG_SERVER, _TAG_LINK = 0, 1, 2


def _draw_position(
    rng: np.random.Generator, accepted: list[tuple[float, float]], area: float
) -> tuple[float, float]:
    # all pairwise distances must stay within the area side length
    while True:
        x, y = rng.uniform(0.0, area, size=2)
        if all(math.hypot(x - ax, y - ay) <= area for ax, ay in accepted):
            return float(x), float(y)


def generate_scenario(seed: int, knobs: GeneratorKnobs | None = None, **kw) -> Scenario:
    """Deterministic random scenario for a seed.

    Node attributes come from per-node substreams, so scenarios are nested:
    raising `servers` keeps every existing node and link draw unchanged.
    """
    if knobs is None:
        knobs = GeneratorKnobs(**kw)
    elif kw:
        knobs = replace(knobs, **kw)
    if knobs.servers < 1:
        raise ScenarioError(f"need at least 1 server, got {knobs.servers}")
    if knobs.clients < 1:
        raise ScenarioError(f"need at least 1 client, got {knobs.clients}")
    if knobs.topology not in ("mesh", "line", "star", "tree"):
        raise ScenarioError(f"unknown topology {knobs.topology!r}")
    if isinstance(knobs.bandwidth, str):
        if knobs.bandwidth not in BANDWIDTH_REGIMES:
            raise ScenarioError(f"unknown bandwidth regime {knobs.bandwidth!r}")
        bw_lo, bw_hi = BANDWIDTH_REGIMES[knobs.bandwidth]
    else:
        bw_lo, bw_hi = knobs.bandwidth

    positions: list[tuple[float, float]] = []

    def draw_node(tag: int, index: int, node_id: str, kind: str) -> NodeProfile:
        rng = _rng(seed, tag, index)
        pos = _draw_position(rng, positions, knobs.area_m)
        positions.append(pos)
        f = rng.uniform(*knobs.compute_tflops) * _TFLOPS
        p = rng.uniform(*knobs.power_mw) * _MW
        m = rng.uniform(*knobs.memory_gb) * _GB_BITS
        return NodeProfile(
            id=node_id,
            kind=kind,
            compute=float(f),
            intensity=1.0 / 32.0,
            memory_bits=float(m),
            tx_power_w=float(p),
            position=pos,
            init_fp_s=knobs.init_s,
            init_bp_s=knobs.init_s,
            bp_threshold=knobs.bp_threshold,
        )

    clients = [
        draw_node(_TAG_CLIENT, i, f"c{i}", "client") for i in range(knobs.clients)
    ]
    servers = [
        draw_node(_TAG_SERVER, i, f"s{i}", "server") for i in range(knobs.servers)
    ]
    nodes = clients + servers

    # undirected pairs sharing one bandwidth draw; both directions created
    def bandwidth_for(i: int, j: int) -> float:
        lo, hi = sorted((i, j))
        rng = _rng(seed, _TAG_LINK, lo * 4096 + hi)
        return float(rng.uniform(bw_lo, bw_hi)) * _MHZ

    n_ids = [n.id for n in nodes]
    pair_set: set[tuple[int, int]] = set()

    def connect(i: int, j: int) -> None:
        pair_set.add((i, j))
        pair_set.add((j, i))

    m = knobs.clients
    if knobs.topology == "mesh":
        for a in range(m, m + knobs.servers):
            for b in range(a + 1, m + knobs.servers):
                connect(a, b)
        for c in range(m):
            for a in range(m, m + knobs.servers):
                connect(c, a)
    elif knobs.topology == "line":
        for a in range(m, m + knobs.servers - 1):
            connect(a, a + 1)
        for c in range(m):
            connect(c, m)
    elif knobs.topology == "star":
        hub = m
        for a in range(m + 1, m + knobs.servers):
            connect(hub, a)
        for c in range(m):
            connect(c, hub)
    else:  # tree: binary heap order over servers, clients at the root
        for k in range(2, knobs.servers + 1):
            child = m + k - 1
            parent = m + k // 2 - 1
            connect(parent, child)
        for c in range(m):
            connect(c, m)

    links = tuple(
        LinkProfile(src=n_ids[i], dst=n_ids[j], bandwidth_hz=bandwidth_for(i, j))
        for i, j in sorted(pair_set)
    )

    s = Scenario(
        layers=default_layer_profile(knobs.layer_count, knobs.model_scale),
        nodes=tuple(nodes),
        links=links,
        topology=knobs.topology,
        minibatch=knobs.minibatch,
        max_submodels=knobs.max_submodels,
        pathloss_exp=knobs.pathloss_exp,
        noise_w_per_hz=dbm_to_watts(knobs.noise_dbm_per_hz),
    )
    validate_scenario(s)
    return s
