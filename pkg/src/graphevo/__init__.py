"""Self-evolving multi-agent workflow graphs with bandit routing."""
from .environments import Outcome, Task, TaskKind, evaluate, load_tasks
from .errors import EngineError
from .evolution import LossSignal, TextualGradient, backward_pass, compute_loss
from .execution import ExecutionTrace, ToolContext, forward_pass
from .graph import AgentGraph, AgentNode, EdgeState, apply_topology_action, check_invariants, repair_topology
from .knowledge import KnowledgeGraph
from .routing import KnowledgeModel, RoutingParams, thompson_select
from .runner import RunConfig, RunMetrics, compute_metrics, load_state, run_optimization, save_state

__version__ = "0.1.0"

__all__ = [
    "AgentGraph", "AgentNode", "EdgeState", "EngineError", "ExecutionTrace", "KnowledgeGraph",
    "KnowledgeModel", "LossSignal", "Outcome", "RoutingParams", "RunConfig", "RunMetrics", "Task",
    "TaskKind", "TextualGradient", "ToolContext", "apply_topology_action", "backward_pass",
    "check_invariants", "compute_loss", "compute_metrics", "evaluate", "forward_pass", "load_state",
    "load_tasks", "repair_topology", "run_optimization", "save_state", "thompson_select",
]
