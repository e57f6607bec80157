import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphevo.environments import Task
from graphevo.errors import EmptyAggregation, InvalidAgent, NodeFailure
from graphevo.execution import ToolContext, aggregate, forward_pass, generate_instruction
from graphevo.graph import AgentGraph, AgentNode, repair_topology, topological_order
from graphevo.llm import ScriptedBackend
from graphevo.routing import RoutingParams
from graphevo.tools import ToolRegistry, ToolSchema

from conftest import fan_graph
from strategies import evolve_randomly

TASK = Task("t", "2+2?", "Numeric", 4)


def echo_backend():
    """Agents answer "4"; instructions and aggregation are deterministic."""
    llm = ScriptedBackend()
    llm.add("", "4", template="AgentExecution")
    llm.add("", "Compute the sum.", template="ForwardInstruction")
    llm.add("", lambda req: req.user.split("AGENT OUTPUTS:\n")[1].split("\n")[1], template="Aggregation")
    return llm


def test_generate_instruction_austin():
    llm = ScriptedBackend().add("Tesla Inc. headquarters", "Retrieve Austin, Texas population.")
    succ = AgentNode("agent-2", "You are a data retrieval agent.")
    out = generate_instruction(llm, "Population of Tesla's headquarters city?", "Tesla Inc. headquarters: Austin, Texas.", succ)
    assert out == "Retrieve Austin, Texas population."


def test_generate_instruction_requires_prompt():
    class Bare:
        id = "x"
        system_prompt = ""

    with pytest.raises(InvalidAgent):
        generate_instruction(ScriptedBackend(default="x"), "a", "b", Bare())


def test_minimal_graph():
    final, trace = forward_pass(AgentGraph.initial(), TASK, echo_backend(), RoutingParams(), np.random.default_rng(42))
    assert final == "4"
    assert trace.activated == ["source", "aggregator"]
    assert trace.llm_calls == 2
    assert trace.routed_edges == [("source", "aggregator")]


def test_diamond_both_branches():
    g = fan_graph("branch a", "branch b")
    llm = echo_backend()
    _, trace = forward_pass(g, TASK, llm, RoutingParams(top_k=2), np.random.default_rng(0))
    assert sorted(trace.aggregate_inputs) == ["agent-1", "agent-2"]
    counts = trace.routing_counts()
    assert counts[("source", "agent-1")] == 1 and counts[("source", "agent-2")] == 1
    # 3 agent runs + 2 instructions + 1 aggregation
    assert trace.llm_calls == 6 == llm.call_count


def test_unrouted_node_is_skipped():
    g = fan_graph("a", "b")
    _, trace = forward_pass(g, TASK, echo_backend(), RoutingParams(top_k=1), np.random.default_rng(3))
    skipped = {"agent-1", "agent-2"} - set(trace.activated)
    assert len(skipped) == 1
    assert not skipped & set(trace.inputs)


def test_multiple_deliveries_are_concatenated():
    g = fan_graph("a", "b")
    g.add_node(AgentNode("agent-3", "joiner"))
    g.add_edge("agent-1", "agent-3")
    g.add_edge("agent-2", "agent-3")
    g.add_edge("agent-3", "aggregator")
    _, trace = forward_pass(g, TASK, echo_backend(), RoutingParams(top_k=5), np.random.default_rng(0))
    joined = trace.inputs["agent-3"]
    assert joined.index("from agent-1") < joined.index("from agent-2")


def test_tool_node_makes_no_llm_call():
    reg = ToolRegistry()
    reg.register(ToolSchema("echo", "echo", "def tool_function(x, **kw):\n    return 'tool:' + x\n"))
    g = AgentGraph.initial(source_tool="echo")
    llm = echo_backend()
    final, trace = forward_pass(g, TASK, llm, RoutingParams(), np.random.default_rng(0), tools=ToolContext(reg))
    assert trace.outputs["source"] == "tool:2+2?"
    assert trace.llm_calls == 1


def test_errors_attributed_to_node():
    g = fan_graph("a")
    llm = ScriptedBackend().add("", "4", template="AgentExecution")  # no instruction script
    with pytest.raises(NodeFailure) as info:
        forward_pass(g, TASK, llm, RoutingParams(), np.random.default_rng(0))
    assert info.value.node_id == "source"


def test_dead_end_node_is_attributed():
    g = AgentGraph.initial()
    g.remove_edge("source", "aggregator")
    g.add_node(AgentNode("agent-1", "dead end"))
    g.add_edge("source", "agent-1")
    with pytest.raises(NodeFailure) as info:
        forward_pass(g, TASK, echo_backend(), RoutingParams(), np.random.default_rng(0))
    assert info.value.node_id == "agent-1"


def test_aggregate():
    task = Task("t", "q", "ExactMatch", "a")
    assert aggregate(ScriptedBackend().add("", "only", template="Aggregation"), {"source": "only"}, task) == "only"
    llm = ScriptedBackend().add(["[agent-1]\nyes", "[agent-2]\nno"], "merged")
    assert aggregate(llm, {"agent-1": "yes", "agent-2": "no"}, task) == "merged"
    with pytest.raises(EmptyAggregation):
        aggregate(llm, {}, task)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 3))
def test_trace_invariants_and_accounting(seed, k):
    g = repair_topology(evolve_randomly(seed, corrupt_edges=False), 0.3)
    run = lambda: forward_pass(g, TASK, echo_backend(), RoutingParams(top_k=k), np.random.default_rng(seed))
    final, trace = run()
    assert all(e in g.edges for e in trace.routed_edges)
    order = topological_order(g)
    assert trace.activated == sorted(trace.activated, key=order.index)
    assert set(trace.inputs) <= set(trace.activated) <= set(g.nodes)
    instructions = sum(1 for _, dst in trace.routed_edges if dst != g.aggregator)
    assert trace.llm_calls == (len(trace.activated) - 1) + instructions + 1
    assert sum(trace.routing_counts().values()) == len(trace.routed_edges)
    final2, trace2 = run()
    assert (final, trace) == (final2, trace2)
