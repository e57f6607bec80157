"""Optimization loop, run configuration, persistence and metrics."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .environments import Outcome, Task, evaluate, load_tasks
from .errors import ConfigError, EngineError, SchemaMismatch
from .evolution import DEFAULT_PARALLELIZABILITY, backward_pass, compute_loss
from .execution import ToolContext, forward_pass
from .graph import DEFAULT_SOURCE_PROMPT, AgentGraph
from .knowledge import KnowledgeGraph
from .llm import ChatBackend, LiveBackend, ScriptedBackend
from .routing import KnowledgeModel, RoutingParams
from .tools import ExecutionPolicy, Sandbox, ToolRegistry

log = logging.getLogger(__name__)

DEFAULT_SEED = 42
COST_EPSILON = 0.01
TASK_MODES = ("per-task", "round-robin")


class RunFailure(EngineError):
    """An engine error annotated with where in the run it happened."""

    def __init__(self, iteration: int, task_id: str, cause: Exception):
        self.iteration = iteration
        self.task_id = task_id
        self.cause = cause
        super().__init__(f"iteration {iteration}, task {task_id!r}: {cause}")


@dataclass
class BackendConfig:
    mode: str = "scripted"
    base_url: str = "http://localhost:8000/v1"
    model: str = "qwen2.5-72b-instruct"
    script_path: str | None = None


@dataclass
class RunConfig:
    iterations: int = 3
    seed: int = DEFAULT_SEED
    routing: RoutingParams = field(default_factory=RoutingParams)
    backend: BackendConfig = field(default_factory=BackendConfig)
    tasks_path: str = "tasks.jsonl"
    kg_path: str | None = None
    output_dir: str = "run"
    interpreter_cmd: str | None = None
    tools_path: str | None = None
    initial_state: str | None = None
    source_prompt: str = DEFAULT_SOURCE_PROMPT
    source_tool: str | None = None
    task_mode: str = "per-task"
    price_per_1k_tokens: float = 0.0012
    parallelizability: float = DEFAULT_PARALLELIZABILITY
    tool_timeout: float = 30.0
    tool_retries: int = 3

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.backend.mode not in ("live", "scripted"):
            raise ConfigError(f"backend mode must be 'live' or 'scripted', got {self.backend.mode!r}")
        if self.backend.mode == "scripted" and not self.backend.script_path:
            raise ConfigError("scripted backend requires script_path")
        if self.task_mode not in TASK_MODES:
            raise ConfigError(f"task_mode must be one of {TASK_MODES}")
        if self.price_per_1k_tokens < 0:
            raise ConfigError("price_per_1k_tokens must be non-negative")

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path | None = None) -> RunConfig:
        """Build a config; relative paths are resolved against ``base_dir``."""
        data = dict(data)
        try:
            routing = RoutingParams.from_dict(data.pop("routing", None))
            backend = BackendConfig(**data.pop("backend", {}))
            cfg = cls(routing=routing, backend=backend, **data)
        except ConfigError:
            raise
        except (TypeError, ValueError, EngineError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc
        if base_dir is not None:
            base = Path(base_dir)
            for attr in ("tasks_path", "kg_path", "output_dir", "tools_path", "initial_state"):
                val = getattr(cfg, attr)
                if val is not None and not Path(val).is_absolute():
                    setattr(cfg, attr, str(base / val))
            if cfg.backend.script_path and not Path(cfg.backend.script_path).is_absolute():
                cfg.backend.script_path = str(base / cfg.backend.script_path)
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data, path.parent)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["routing"] = self.routing.to_dict()
        return out


@dataclass
class RunMetrics:
    accuracy: float
    llm_calls: int
    estimated_cost: float
    cost_efficiency: float
    empty: bool = False

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError("accuracy must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def compute_metrics(outcomes: list[Outcome], llm_calls: int, estimated_cost: float) -> RunMetrics:
    """Accuracy and cost efficiency ``accuracy * 100 / (cost + 0.01)``."""
    if estimated_cost < 0:
        raise ValueError("estimated cost must be non-negative")
    if not outcomes:
        return RunMetrics(0.0, llm_calls, estimated_cost, 0.0, empty=True)
    accuracy = math.fsum(o.success for o in outcomes) / len(outcomes)
    return RunMetrics(accuracy, llm_calls, estimated_cost, accuracy * 100 / (estimated_cost + COST_EPSILON))


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def save_state(graph: AgentGraph, path: str | Path) -> None:
    Path(path).write_text(graph.to_json())


def load_state(path: str | Path) -> AgentGraph:
    try:
        data = json.loads(Path(path).read_text())
    except ValueError as exc:
        raise SchemaMismatch(f"state file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise SchemaMismatch(f"state file {path} does not hold a graph object")
    return AgentGraph.from_dict(data)


def make_backend(cfg: BackendConfig) -> ChatBackend:
    if cfg.mode == "scripted":
        try:
            return ScriptedBackend.load(cfg.script_path)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot load script {cfg.script_path}: {exc}") from exc
    return LiveBackend(cfg.base_url, cfg.model)


class RunStore:
    """Files written into the output directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.traces = self.root / "traces"
        self.traces.mkdir(parents=True, exist_ok=True)
        for old in self.traces.glob("*.json"):
            old.unlink()
        self.evolution = self.root / "evolution.jsonl"
        self.evolution.write_text("")

    def save_iteration(self, graph, trace_dict, log_entries, registry, name: str | None = None) -> None:
        name = name or f"iter_{trace_dict['iteration']:04d}"
        (self.traces / f"{name}.json").write_text(_dump(trace_dict))
        with self.evolution.open("a") as fh:
            for entry in log_entries:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
        save_state(graph, self.root / "state.json")
        if registry is not None:
            registry.save(self.root / "tools.json")

    def save_metrics(self, metrics: RunMetrics) -> None:
        (self.root / "metrics.json").write_text(_dump(metrics.to_dict()))


def _schedule(tasks: list[Task], iterations: int, mode: str):
    if mode == "per-task":
        for task in tasks:
            for _ in range(iterations):
                yield task
    else:
        for _ in range(iterations):
            yield from tasks


def run_optimization(config: RunConfig, llm: ChatBackend | None = None) -> tuple[AgentGraph, RunMetrics]:
    """Evolve the workflow over the configured tasks and persist every step."""
    try:
        tasks = load_tasks(config.tasks_path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load tasks: {exc}") from exc
    kg = None
    if config.kg_path:
        try:
            kg = KnowledgeGraph.load(config.kg_path)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot load knowledge graph: {exc}") from exc
    registry = None
    if config.tools_path:
        try:
            registry = ToolRegistry.load(config.tools_path)
        except (OSError, ValueError, TypeError) as exc:
            raise ConfigError(f"cannot load tools: {exc}") from exc
    llm = llm or make_backend(config.backend)

    sandbox = Sandbox(config.interpreter_cmd)
    tool_policy = ExecutionPolicy(timeout=config.tool_timeout, max_retries=config.tool_retries)
    tools = ToolContext(registry, sandbox, tool_policy) if registry is not None else None
    knowledge = KnowledgeModel(kg, config.routing.weights)
    rng = np.random.default_rng(config.seed)
    store = RunStore(config.output_dir)

    if config.initial_state:
        try:
            graph = load_state(config.initial_state)
        except OSError as exc:
            raise ConfigError(f"cannot load initial state: {exc}") from exc
    else:
        graph = AgentGraph.initial(config.source_prompt, source_tool=config.source_tool)
    last: dict[str, Outcome] = {}

    def forward(task: Task):
        profile = knowledge.profile(task.instruction, task.concept)
        final, trace = forward_pass(graph, task, llm, config.routing, rng, knowledge, profile, tools)
        return profile, final, trace

    if config.iterations == 0:
        for idx, task in enumerate(tasks):
            try:
                _, final, trace = forward(task)
                last[task.id] = evaluate(task, final, sandbox)
            except EngineError as exc:
                raise RunFailure(graph.iteration, task.id, exc) from exc
            # no evolution happens, so traces are numbered per task instead of per iteration
            store.save_iteration(graph, trace.to_dict(graph.iteration, final), [], registry, f"eval_{idx:04d}")
    for task in _schedule(tasks, config.iterations, config.task_mode):
        it = graph.iteration
        try:
            profile, final, trace = forward(task)
            loss = compute_loss(task, final, llm, graph.aggregator, sandbox)
            result = backward_pass(
                graph, trace, loss, llm, config.routing, knowledge, profile, tools, config.parallelizability
            )
        except EngineError as exc:
            raise RunFailure(it, task.id, exc) from exc
        last[task.id] = loss.outcome
        graph = result.graph
        log.info("iteration %d task %s success=%s nodes=%d", it, task.id, loss.outcome.success, len(graph.nodes))
        store.save_iteration(graph, trace.to_dict(it, final), result.log, registry)

    if not tasks:
        save_state(graph, store.root / "state.json")
    cost = llm.estimated_tokens() / 1000 * config.price_per_1k_tokens
    metrics = compute_metrics([last[t.id] for t in tasks if t.id in last], llm.call_count, cost)
    store.save_metrics(metrics)
    return graph, metrics
