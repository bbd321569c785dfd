"""Pipelined split-learning planner for multi-hop edge networks.

Computes optimal model splitting, placement, and micro-batch size to minimize
end-to-end training latency, and validates every analytic result against an
independent discrete-event simulator and brute-force oracles.
"""

__version__ = "0.1.0"

from .scenario import (
    GeneratorKnobs,
    LayerProfile,
    LinkProfile,
    NodeProfile,
    PlanError,
    RateTable,
    Scenario,
    ScenarioError,
    SplitPlan,
    canonical_plan,
    default_layer_profile,
    effective_rate_matrix,
    generate_scenario,
    load_plan,
    load_scenario,
    save_plan,
    save_scenario,
    validate_plan,
    validate_scenario,
)
from .costmodel import (
    InfeasiblePlanError,
    LatencyReport,
    PlanEvaluator,
    ScenarioCosts,
    StageTimes,
    Violation,
    activation_bits,
    bp_latency,
    check_feasibility,
    comm_latency,
    evaluate,
    fp_latency,
    gradient_bits,
    memory_bits,
    pipeline_rounds,
    shard_sizes,
)
from .mspgraph import (
    AssignmentGraph,
    Edge,
    InfeasibleScenarioError,
    MspSolution,
    PathResult,
    Vertex,
    build_graph,
    constrained_shortest_path,
    min_sum_bound,
    solve_msp,
)
from .relaxation import (
    LinearProgram,
    LowerBound,
    SimplexResult,
    bound_provider,
    build_rlt_lp,
    combinatorial_bound,
    dump_lp,
    rlt_bound,
    simplex_solve,
)
from .microbatch import (
    MicrobatchInfeasibleError,
    MicrobatchSolution,
    best_microbatch,
    boundary_bv,
    optimal_microbatch,
    scan_microbatch,
    slope_of_first_batch,
)
from .bcd import SCHEMES, BcdIteration, BcdTrace, solve_baseline, solve_joint
from .oracle import (
    EnumerationLimitError,
    OracleResult,
    enumerate_joint,
    enumerate_msp,
    estimate_enumeration_count,
    iter_plans,
    plan_count,
)
from .pipesim import SimResult, export_event_log, simulate

__all__ = [name for name in dir() if not name.startswith("_")]
