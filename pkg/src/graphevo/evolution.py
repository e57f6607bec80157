"""Backward pass: textual loss, per-node gradients, prompt/tool/topology
evolution, reward extraction and the belief and synergy bookkeeping."""
from __future__ import annotations

import dataclasses
import logging
import re
from dataclasses import dataclass, field

from .environments import Outcome, Task, evaluate
from .errors import EngineError, GraphError, NoNumberFound, NodeFailure, TagNotFound, ToolError
from .execution import ExecutionTrace, ToolContext
from .graph import (
    AddParallel,
    AddSerial,
    AgentGraph,
    AgentNode,
    NoChange,
    RemoveSuccessor,
    TopologyAction,
    apply_topology_action,
    repair_topology,
)
from .knowledge import TaskProfile
from .llm import ChatBackend, ask_structured, parse_sections, parse_tagged, render_template
from .llm.templates import TemplateId
from .routing import KnowledgeModel, RewardSignal, RoutingParams, knowledge_match, update_beliefs, update_synergy
from .tools import ExecutionPolicy, Sandbox, ToolSchema, refine_tool

log = logging.getLogger(__name__)

SATISFACTORY = "SATISFACTORY"
MAX_SUCCESSORS = 5
DEFAULT_PARALLELIZABILITY = 0.5


@dataclass
class TextualGradient:
    target: str
    system_prompt_feedback: str = ""
    tool_feedback: str = ""
    overall_feedback: str = ""

    def __post_init__(self):
        if not (self.system_prompt_feedback or self.tool_feedback or self.overall_feedback):
            raise ValueError(f"gradient for {self.target!r} carries no feedback")

    def text(self) -> str:
        parts = [self.overall_feedback, self.system_prompt_feedback, self.tool_feedback]
        return " ".join(p for p in parts if p)


@dataclass(frozen=True)
class LossSignal:
    outcome: Outcome
    gradient_seed: str

    def __post_init__(self):
        if not self.outcome.success and not self.gradient_seed.strip():
            raise ValueError("a failed outcome needs a gradient seed")


def compute_loss(
    task: Task,
    final: str,
    llm: ChatBackend,
    aggregator_id: str = "aggregator",
    sandbox: Sandbox | None = None,
    policy: ExecutionPolicy | None = None,
) -> LossSignal:
    if not final or not final.strip():
        raise ValueError("final output must be non-empty")
    try:
        outcome = evaluate(task, final, sandbox, policy)
    except NoNumberFound:
        # a reply without any number is a wrong answer, not an infrastructure fault
        outcome = Outcome(False, 0.0, f"Expected the number {task.expected:g} but the output contained no number.")
    if outcome.success:
        return LossSignal(outcome, SATISFACTORY)
    request = render_template(
        TemplateId.GLOBAL_GRADIENT,
        {"aggregator_id": aggregator_id, "loss_grad": outcome.feedback, "final_result": final},
    )
    parsed, raw, _ = ask_structured(llm, request, lambda t: parse_tagged(t, "FEEDBACK"), (TagNotFound,))
    seed = parsed or raw.strip() or outcome.feedback
    return LossSignal(outcome, seed)


def local_gradient(
    llm: ChatBackend, node: AgentNode, successor_grads: list[TextualGradient], y_i: str
) -> TextualGradient:
    combined = "\n".join(f"Agent {g.target}: {g.text()}" for g in successor_grads) or "No successor feedback."
    request = render_template(
        TemplateId.AGENT_FEEDBACK,
        {"system_prompt": node.system_prompt, "agent_output": y_i, "combined_feedback": combined},
    )
    raw = llm.complete(request)
    sections = parse_sections(raw)
    if not (sections.system_prompt_feedback or sections.tool_feedback or sections.overall_feedback):
        return TextualGradient(node.id, overall_feedback=raw.strip() or combined)
    return TextualGradient(node.id, **dataclasses.asdict(sections))


@dataclass
class SemanticResult:
    node: AgentNode
    prompt_changed: bool = False
    refined_tool: ToolSchema | None = None
    used_reask: bool = False


def _semantic(
    llm: ChatBackend, node: AgentNode, gradient: TextualGradient, tools: ToolContext | None = None
) -> SemanticResult:
    if gradient.target != node.id:
        raise ValueError(f"gradient targets {gradient.target!r}, not {node.id!r}")
    result = SemanticResult(node)
    if gradient.system_prompt_feedback:
        request = render_template(
            TemplateId.PROMPT_UPDATE,
            {"system_prompt": node.system_prompt, "system_prompt_feedback": gradient.system_prompt_feedback},
        )
        parsed, _, calls = ask_structured(
            llm, request, lambda t: parse_tagged(t, "IMPROVED_VARIABLE"), (TagNotFound,)
        )
        result.used_reask = calls > 1
        if parsed:
            result.prompt_changed = parsed != node.system_prompt
            result.node = dataclasses.replace(node, system_prompt=parsed)
        else:
            log.warning("prompt update for %s unparseable; keeping the old prompt", node.id)
    # prompt feedback takes precedence: a spent re-ask budget skips tool refinement
    if gradient.tool_feedback and node.tool_ref and tools is not None and not result.used_reask:
        try:
            schema = tools.registry.get(node.tool_ref)
            result.refined_tool = refine_tool(llm, schema, gradient.tool_feedback, tools.policy)
        except ToolError as exc:
            log.warning("tool refinement for %s failed: %s", node.id, exc)
    return result


def semantic_update(
    llm: ChatBackend, node: AgentNode, gradient: TextualGradient, tools: ToolContext | None = None
) -> AgentNode:
    """f_P: rewrite the prompt (and register a refined tool) from the gradient."""
    result = _semantic(llm, node, gradient, tools)
    if result.refined_tool is not None:
        tools.registry.register(result.refined_tool)
    return result.node


_ACTION_LINE = re.compile(
    r"^[\s>*#-]*\**(ADD_PARALLEL|ADD_SERIAL|REMOVE_SUCCESSOR|NO_CHANGE)\**\s*:\s*(.*)$", re.MULTILINE
)


def parse_topology_action(text: str) -> TopologyAction:
    m = _ACTION_LINE.search(text)
    if m is None:
        raise ValueError("no topology action line")
    kind, arg = m.group(1), m.group(2).strip().strip("[]").strip()
    if kind == "NO_CHANGE":
        return NoChange(arg)
    if not arg:
        raise ValueError(f"{kind} without an argument")
    if kind == "ADD_PARALLEL":
        return AddParallel(arg)
    if kind == "ADD_SERIAL":
        return AddSerial(arg)
    return RemoveSuccessor(arg)


def _resolve_successor(name: str, successors: list[str]) -> str | None:
    if name in successors:
        return name
    hits = [s for s in successors if s.lower() in name.lower()]
    # longest id first so "agent-10" wins over "agent-1"
    return max(hits, key=len) if hits else None


def decide_topology(
    llm: ChatBackend,
    node: AgentNode,
    gradient: TextualGradient,
    successor_count: int,
    parallelizability: float = DEFAULT_PARALLELIZABILITY,
    successors: list[str] | None = None,
) -> TopologyAction:
    """f_G: ask for one local structural edit at ``node``."""
    succs = list(successors or [])
    request = render_template(
        TemplateId.TOPOLOGY_DECISION,
        {
            "system_prompt": node.system_prompt,
            "feedback": gradient.text(),
            "successor_count": successor_count,
            "parallelizability": parallelizability,
            "successors": ", ".join(succs) or "none",
        },
    )
    action, _, _ = ask_structured(llm, request, parse_topology_action, (ValueError,))
    if action is None:
        return NoChange("unparseable")
    if isinstance(action, (AddParallel, AddSerial)) and successor_count >= MAX_SUCCESSORS:
        return NoChange(f"successor cap of {MAX_SUCCESSORS} reached")
    if isinstance(action, RemoveSuccessor) and successors is not None:
        resolved = _resolve_successor(action.successor, succs)
        if resolved is None:
            return NoChange(f"unknown successor {action.successor!r}")
        action = RemoveSuccessor(resolved)
    return action


_SENTIMENT = re.compile(r"\b(POSITIVE|NEUTRAL|CRITICAL)\b")


def _parse_sentiment(text: str) -> int:
    m = _SENTIMENT.search(text.upper())
    if m is None:
        raise ValueError("no sentiment label")
    return 0 if m.group(1) == "CRITICAL" else 1


def extract_reward(llm: ChatBackend, gradient: TextualGradient) -> int:
    request = render_template(TemplateId.SENTIMENT_REWARD, {"feedback": gradient.text()})
    value, _, _ = ask_structured(llm, request, _parse_sentiment, (ValueError,))
    return 0 if value is None else value


def action_label(action: TopologyAction) -> str:
    if isinstance(action, AddParallel):
        return f"ADD_PARALLEL: {action.description}"
    if isinstance(action, AddSerial):
        return f"ADD_SERIAL: {action.description}"
    if isinstance(action, RemoveSuccessor):
        return f"REMOVE_SUCCESSOR: {action.successor}"
    return f"NO_CHANGE: {action.reason}" if action.reason else "NO_CHANGE"


@dataclass
class BackwardResult:
    graph: AgentGraph
    rewards: dict[str, int] = field(default_factory=dict)
    log: list[dict] = field(default_factory=list)
    refined_tools: list[ToolSchema] = field(default_factory=list)


def backward_pass(
    graph: AgentGraph,
    trace: ExecutionTrace,
    loss: LossSignal,
    llm: ChatBackend,
    params: RoutingParams,
    knowledge: KnowledgeModel | None = None,
    profile: TaskProfile | None = None,
    tools: ToolContext | None = None,
    parallelizability: float = DEFAULT_PARALLELIZABILITY,
) -> BackwardResult:
    """One evolution step over the nodes activated in ``trace``.

    Works on a copy: the input graph, the history and the tool registry are
    only touched after every node has been processed, so an error leaves all
    of them as they were.
    """
    knowledge = knowledge or KnowledgeModel()
    if profile is None:
        profile = knowledge.profile(trace.inputs.get(graph.source, "task"))
    g = graph.copy()
    iteration = graph.iteration
    result = BackwardResult(g)
    routed_to: dict[str, list[str]] = {}
    for src, dst in trace.routed_edges:
        routed_to.setdefault(src, []).append(dst)
    grads: dict[str, TextualGradient] = {}
    success = loss.outcome.success

    for node_id in reversed(trace.activated):
        if node_id not in g.nodes:
            raise NodeFailure(node_id, GraphError("activated node missing from graph"))
        try:
            entry = {"iteration": iteration, "node": node_id, "action": "NO_CHANGE",
                     "reward": 1, "prompt_changed": False, "tool_changed": False}
            if success:
                result.rewards[node_id] = 1
                entry["action"] = "NO_CHANGE: success"
                result.log.append(entry)
                continue
            node = g.nodes[node_id]
            if node_id == g.aggregator:
                grad = TextualGradient(node_id, overall_feedback=loss.gradient_seed)
            else:
                succ_grads = [grads[s] for s in routed_to.get(node_id, []) if s in grads]
                grad = local_gradient(llm, node, succ_grads, trace.outputs.get(node_id, ""))
                sem = _semantic(llm, node, grad, tools)
                g.nodes[node_id] = sem.node
                entry["prompt_changed"] = sem.prompt_changed
                if sem.refined_tool is not None:
                    result.refined_tools.append(sem.refined_tool)
                    entry["tool_changed"] = True
                succs = g.successors(node_id)
                action = decide_topology(llm, sem.node, grad, len(succs), parallelizability, succs)
                try:
                    g = apply_topology_action(g, node_id, action)
                except GraphError as exc:
                    log.warning("rejected %s at %s: %s", action_label(action), node_id, exc)
                    action = NoChange(f"rejected: {exc}")
                entry["action"] = action_label(action)
            grads[node_id] = grad
            reward = extract_reward(llm, grad)
            result.rewards[node_id] = reward
            entry["reward"] = reward
            result.log.append(entry)
        except NodeFailure:
            raise
        except EngineError as exc:
            raise NodeFailure(node_id, exc) from exc

    _update_beliefs(g, graph, result.rewards, params, knowledge, profile)
    _update_edges(g, trace, result.rewards, params)
    g = repair_topology(g, params.prune_threshold)
    g.iteration = iteration + 1
    result.graph = g

    # commit side effects only once the pass has fully succeeded
    for node_id, reward in result.rewards.items():
        knowledge.record(node_id, profile, bool(reward))
    if tools is not None:
        for schema in result.refined_tools:
            tools.registry.register(schema)
    return result


def _update_beliefs(g, before, rewards, params, knowledge, profile) -> None:
    for node_id in sorted(g.nodes):
        if node_id not in before.nodes:
            continue  # created this pass
        node = g.nodes[node_id]
        if node_id in rewards:
            km, kd = knowledge_match(node, profile, knowledge.overlap(node, profile))
            signal = RewardSignal(node_id, rewards[node_id], km, kd, selected=True)
        else:
            signal = RewardSignal(node_id, 0, 0.0, 1.0, selected=False)
        g.nodes[node_id] = update_beliefs(node, signal, params)


def _update_edges(g, trace, rewards, params) -> None:
    for key, count in trace.routing_counts().items():
        edge = g.edges.get(key)
        if edge is None:
            continue
        r = rewards.get(key[1], 0)
        edge = update_synergy(edge, r, params)
        g.edges[key] = dataclasses.replace(
            edge,
            edge_alpha=edge.edge_alpha + r,
            edge_beta=edge.edge_beta + (1 - r),
            usage=edge.usage + count,
            attempts=edge.attempts + 1,
            successes=edge.successes + r,
        )
