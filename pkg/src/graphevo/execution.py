"""Forward pass: route a task through a sampled subgraph and aggregate the result."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .environments import Task
from .errors import DisconnectedAggregator, EmptyAggregation, EngineError, InvalidAgent, NodeFailure
from .graph import AgentGraph, AgentNode, topological_order
from .knowledge import TaskProfile
from .llm import ChatBackend, ChatRequest, render_template
from .llm.templates import TemplateId
from .routing import KnowledgeModel, RoutingParams, thompson_select
from .tools import ExecutionPolicy, Sandbox, ToolRegistry


@dataclass
class ExecutionTrace:
    activated: list[str] = field(default_factory=list)
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    routed_edges: list[tuple[str, str]] = field(default_factory=list)
    llm_calls: int = 0
    aggregate_inputs: list[str] = field(default_factory=list)

    def routing_counts(self) -> dict[tuple[str, str], int]:
        counts: dict[tuple[str, str], int] = {}
        for e in self.routed_edges:
            counts[e] = counts.get(e, 0) + 1
        return counts

    def to_dict(self, iteration: int, final: str) -> dict:
        return {
            "iteration": iteration,
            "activated": list(self.activated),
            "routed_edges": [list(e) for e in self.routed_edges],
            "llm_calls": self.llm_calls,
            "final": final,
        }


@dataclass
class ToolContext:
    registry: ToolRegistry
    sandbox: Sandbox | None = None
    policy: ExecutionPolicy | None = None


def generate_instruction(llm: ChatBackend, pred_input: str, pred_output: str, successor: AgentNode) -> str:
    """Turn a predecessor's input/output into the successor's instruction."""
    if not getattr(successor, "system_prompt", ""):
        raise InvalidAgent(f"successor {getattr(successor, 'id', '?')!r} has no system prompt")
    request = render_template(
        TemplateId.FORWARD_INSTRUCTION,
        {
            "input_instruction": pred_input,
            "tool_result": pred_output,
            "successor.system_prompt": successor.system_prompt,
            "successor.agent_id": successor.id,
        },
    )
    return llm.complete(request).strip()


def aggregate(llm: ChatBackend, inputs: dict[str, str], task: Task) -> str:
    if not inputs:
        raise EmptyAggregation("nothing was routed to the aggregator")
    blocks = "\n\n".join(f"[{node_id}]\n{text}" for node_id, text in inputs.items())
    request = render_template(TemplateId.AGGREGATION, {"instruction": task.instruction, "agent_outputs": blocks})
    return llm.complete(request).strip()


def _combine(deliveries: list[tuple[str, str]]) -> str:
    if len(deliveries) == 1:
        return deliveries[0][1]
    return "\n\n".join(f"--- instruction from {src} ---\n{text}" for src, text in deliveries)


def run_agent(node: AgentNode, instruction: str, llm: ChatBackend, tools: ToolContext | None) -> tuple[str, bool]:
    """Compute one agent's output; returns (output, used_llm)."""
    if node.tool_ref:
        if tools is None:
            raise EngineError(f"agent {node.id!r} references tool {node.tool_ref!r} but no registry is configured")
        result = tools.registry.run(node.tool_ref, instruction, tools.policy, tools.sandbox)
        return result.output, False
    request = ChatRequest(system=node.system_prompt, user=instruction, template="AgentExecution")
    return llm.complete(request).strip(), True


def forward_pass(
    graph: AgentGraph,
    task: Task,
    llm: ChatBackend,
    params: RoutingParams,
    rng: np.random.Generator,
    knowledge: KnowledgeModel | None = None,
    profile: TaskProfile | None = None,
    tools: ToolContext | None = None,
) -> tuple[str, ExecutionTrace]:
    """Execute the graph once for ``task``.

    Nodes run in topological order; a node no predecessor routed to is
    skipped. Routing into the aggregator hands over the node's output directly,
    so no instruction is generated for that hop.
    """
    knowledge = knowledge or KnowledgeModel()
    if profile is None:
        profile = knowledge.profile(task.instruction, task.concept)
    trace = ExecutionTrace()
    delivered: dict[str, list[tuple[str, str]]] = {graph.source: [("environment", task.instruction)]}

    for node_id in topological_order(graph):
        if node_id == graph.aggregator or node_id not in delivered:
            continue
        node = graph.nodes[node_id]
        x = _combine(delivered[node_id])
        trace.activated.append(node_id)
        trace.inputs[node_id] = x
        try:
            y, used_llm = run_agent(node, x, llm, tools)
            trace.llm_calls += used_llm
            trace.outputs[node_id] = y
            chosen = thompson_select(graph, node_id, profile, trace.activated, params, rng, knowledge.distance)
            for succ in chosen:
                trace.routed_edges.append((node_id, succ))
                if succ == graph.aggregator:
                    trace.aggregate_inputs.append(node_id)
                    continue
                instruction = generate_instruction(llm, x, y, graph.nodes[succ])
                trace.llm_calls += 1
                delivered.setdefault(succ, []).append((node_id, instruction))
        except EngineError as exc:
            if isinstance(exc, NodeFailure):
                raise
            raise NodeFailure(node_id, exc) from exc

    if not trace.aggregate_inputs:
        raise DisconnectedAggregator("no activated node routed to the aggregator")
    collected = {n: trace.outputs[n] for n in trace.aggregate_inputs}
    trace.activated.append(graph.aggregator)
    trace.inputs[graph.aggregator] = "\n\n".join(collected.values())
    try:
        final = aggregate(llm, collected, task)
    except EngineError as exc:
        raise NodeFailure(graph.aggregator, exc) from exc
    trace.llm_calls += 1
    trace.outputs[graph.aggregator] = final
    return final, trace
