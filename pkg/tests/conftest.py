import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from graphevo.graph import AgentGraph, AgentNode  # noqa: E402
from graphevo.llm import ScriptedBackend  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def scripted():
    return ScriptedBackend()


def fan_graph(*specialists: str, direct: bool = False) -> AgentGraph:
    """source -> each specialist -> aggregator."""
    g = AgentGraph.initial()
    if not direct:
        g.remove_edge("source", "aggregator")
    for i, prompt in enumerate(specialists, 1):
        nid = f"agent-{i}"
        g.add_node(AgentNode(nid, prompt))
        g.add_edge("source", nid)
        g.add_edge(nid, "aggregator")
    return g
