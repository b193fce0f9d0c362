"""Planning and stochastic simulation of graph-state distribution over
quantum networks with heralded Bell-pair channels and limited long-term
memory."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    UNLIMITED,
    Assignment,
    DistributionTask,
    GraphState,
    GsdError,
    InvariantError,
    Metrics,
    Network,
    NoSolutionError,
    Solution,
    channel_success_prob,
    compute_metrics,
    load_task,
    path_cost,
    save_task,
)
from .p2pgsd import MemoryStrategyKind, p2pgsd_plan  # noqa: F401
from .mgst import mgst_memory, mgst_plan  # noqa: F401
from .stp2pgsd import StMetric, StMetricVariant, stp2pgsd_plan  # noqa: F401
from .protocol import PlannerKind, ProtocolConfig, RunStatus, run_adaptive, run_multitask  # noqa: F401
from .validate import brute_force_min_shots, check_upper_bound, is_valid_solution, reachable_nodes  # noqa: F401
