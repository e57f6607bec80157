"""Agent DAG: nodes, edge state, ordering, structural actions and repair."""
from __future__ import annotations

import copy
import heapq
import json
import re
from dataclasses import asdict, dataclass, field

from .errors import CycleDetected, InvalidAction, SchemaMismatch, UnknownNode, WouldCreateCycle

SCHEMA_VERSION = 1

SOURCE_ID = "source"
AGGREGATOR_ID = "aggregator"

DEFAULT_SOURCE_PROMPT = (
    "You are a general-purpose problem solving agent. Read the instruction carefully "
    "and produce a complete, correct answer."
)
DEFAULT_AGGREGATOR_PROMPT = (
    "You are an output aggregator. Combine the outputs of the agents that worked on "
    "the task into one final answer."
)


@dataclass
class AgentNode:
    id: str
    system_prompt: str
    tool_ref: str | None = None
    alpha: float = 1.0
    beta: float = 1.0
    created_at: int = 0

    def __post_init__(self):
        if not self.system_prompt:
            raise ValueError(f"agent {self.id!r} needs a non-empty system prompt")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError(f"agent {self.id!r} beliefs must be positive")

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)


@dataclass
class EdgeState:
    src: str
    dst: str
    synergy: float = 1.0
    edge_alpha: float = 1.0
    edge_beta: float = 1.0
    usage: int = 0
    successes: int = 0
    attempts: int = 0

    def __post_init__(self):
        if self.src == self.dst:
            raise ValueError(f"self-loop on {self.src!r}")

    @property
    def key(self) -> tuple[str, str]:
        return (self.src, self.dst)

    @property
    def success_rate(self) -> float | None:
        if self.attempts == 0:
            return None
        return self.successes / self.attempts

    def to_dict(self) -> dict:
        return {
            "from": self.src,
            "to": self.dst,
            "synergy": self.synergy,
            "edge_alpha": self.edge_alpha,
            "edge_beta": self.edge_beta,
            "usage": self.usage,
            "successes": self.successes,
            "attempts": self.attempts,
        }


# Topology actions produced by the topology decision step.
@dataclass(frozen=True)
class AddParallel:
    description: str


@dataclass(frozen=True)
class AddSerial:
    description: str


@dataclass(frozen=True)
class RemoveSuccessor:
    successor: str


@dataclass(frozen=True)
class NoChange:
    reason: str = ""


TopologyAction = AddParallel | AddSerial | RemoveSuccessor | NoChange


@dataclass
class AgentGraph:
    nodes: dict[str, AgentNode] = field(default_factory=dict)
    edges: dict[tuple[str, str], EdgeState] = field(default_factory=dict)
    source: str = SOURCE_ID
    aggregator: str = AGGREGATOR_ID
    iteration: int = 0

    @classmethod
    def initial(
        cls,
        source_prompt: str = DEFAULT_SOURCE_PROMPT,
        aggregator_prompt: str = DEFAULT_AGGREGATOR_PROMPT,
        source_tool: str | None = None,
    ) -> AgentGraph:
        """The singleton workflow: one agent feeding the aggregator."""
        g = cls()
        g.add_node(AgentNode(SOURCE_ID, source_prompt, tool_ref=source_tool))
        g.add_node(AgentNode(AGGREGATOR_ID, aggregator_prompt))
        g.add_edge(SOURCE_ID, AGGREGATOR_ID)
        return g

    # -- basic structure -------------------------------------------------

    def add_node(self, node: AgentNode) -> AgentNode:
        if node.id in self.nodes:
            raise ValueError(f"duplicate node id {node.id!r}")
        self.nodes[node.id] = node
        return node

    def add_edge(self, src: str, dst: str, **state) -> EdgeState:
        """Insert an edge without any acyclicity check."""
        self._require(src)
        self._require(dst)
        edge = EdgeState(src, dst, **state)
        self.edges[edge.key] = edge
        return edge

    def remove_edge(self, src: str, dst: str) -> None:
        self.edges.pop((src, dst), None)

    def remove_node(self, node_id: str) -> None:
        self.nodes.pop(node_id, None)
        for key in [k for k in self.edges if node_id in k]:
            del self.edges[key]

    def successors(self, node_id: str) -> list[str]:
        return sorted(dst for src, dst in self.edges if src == node_id)

    def predecessors(self, node_id: str) -> list[str]:
        return sorted(src for src, dst in self.edges if dst == node_id)

    def in_degree(self, node_id: str) -> int:
        return sum(1 for _, dst in self.edges if dst == node_id)

    def out_degree(self, node_id: str) -> int:
        return sum(1 for src, _ in self.edges if src == node_id)

    def edge(self, src: str, dst: str) -> EdgeState | None:
        return self.edges.get((src, dst))

    def copy(self) -> AgentGraph:
        return copy.deepcopy(self)

    def fresh_id(self) -> str:
        taken = [int(m.group(1)) for n in self.nodes if (m := re.fullmatch(r"agent-(\d+)", n))]
        return f"agent-{max(taken, default=0) + 1}"

    def _require(self, node_id: str) -> None:
        if node_id not in self.nodes:
            raise UnknownNode(node_id)

    # -- persistence -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "nodes": [asdict(self.nodes[k]) for k in sorted(self.nodes)],
            "edges": [self.edges[k].to_dict() for k in sorted(self.edges)],
            "source": self.source,
            "aggregator": self.aggregator,
            "iteration": self.iteration,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> AgentGraph:
        if not isinstance(data, dict):
            raise SchemaMismatch(f"graph state must be an object (schema version {SCHEMA_VERSION})")
        version = data.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise SchemaMismatch(f"graph state schema version {version}, expected {SCHEMA_VERSION}")
        try:
            g = cls(source=data["source"], aggregator=data["aggregator"], iteration=int(data["iteration"]))
            for raw in data["nodes"]:
                g.add_node(AgentNode(**raw))
            for raw in data["edges"]:
                raw = dict(raw)
                g.add_edge(raw.pop("from"), raw.pop("to"), **raw)
        except (KeyError, TypeError, ValueError, UnknownNode) as exc:
            raise SchemaMismatch(
                f"graph state does not match schema version {SCHEMA_VERSION}: {exc}"
            ) from exc
        if g.source not in g.nodes or g.aggregator not in g.nodes:
            raise SchemaMismatch(f"graph state (schema version {SCHEMA_VERSION}) lacks source or aggregator")
        return g


def topological_order(graph: AgentGraph) -> list[str]:
    """Kahn's algorithm; the source is emitted first and the aggregator last.

    Ties are broken by node id so the order is reproducible.
    """
    in_deg = {n: 0 for n in graph.nodes}
    for _, dst in graph.edges:
        in_deg[dst] += 1

    def rank(n: str) -> tuple[int, str]:
        if n == graph.source:
            return (0, n)
        if n == graph.aggregator:
            return (2, n)
        return (1, n)

    ready = [rank(n) for n, d in in_deg.items() if d == 0]
    heapq.heapify(ready)
    order: list[str] = []
    while ready:
        _, n = heapq.heappop(ready)
        order.append(n)
        for child in graph.successors(n):
            in_deg[child] -= 1
            if in_deg[child] == 0:
                heapq.heappush(ready, rank(child))
    if len(order) != len(graph.nodes):
        raise CycleDetected(n for n, d in in_deg.items() if d > 0)
    return order


def is_acyclic(graph: AgentGraph) -> bool:
    try:
        topological_order(graph)
    except CycleDetected:
        return False
    return True


def reachable(graph: AgentGraph, start: str) -> set[str]:
    seen = {start}
    stack = [start]
    while stack:
        for nxt in graph.successors(stack.pop()):
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen


def apply_topology_action(graph: AgentGraph, at: str, action: TopologyAction) -> AgentGraph:
    """Return a new graph with ``action`` applied locally at node ``at``.

    The input graph is never mutated; a rejected action raises and leaves it as-is.
    """
    graph._require(at)
    if isinstance(action, NoChange):
        return graph.copy()

    g = graph.copy()
    if isinstance(action, RemoveSuccessor):
        if action.successor not in g.nodes:
            raise UnknownNode(action.successor)
        if (at, action.successor) not in g.edges:
            raise InvalidAction(f"{action.successor!r} is not a successor of {at!r}")
        g.remove_edge(at, action.successor)
        return g

    if at == g.aggregator:
        raise InvalidAction("the aggregator cannot have successors")
    new_id = g.fresh_id()
    g.add_node(AgentNode(new_id, action.description.strip() or "Specialist agent", created_at=g.iteration))
    if isinstance(action, AddParallel):
        g.add_edge(at, new_id)
        g.add_edge(new_id, g.aggregator)
    elif isinstance(action, AddSerial):
        old = g.successors(at)
        for succ in old:
            g.remove_edge(at, succ)
            g.add_edge(new_id, succ)
        if not old:
            g.add_edge(new_id, g.aggregator)
        g.add_edge(at, new_id)
    else:
        raise InvalidAction(f"unsupported action {action!r}")

    if not is_acyclic(g):
        raise WouldCreateCycle(f"{action!r} at {at!r}")
    return g


def _break_cycles(g: AgentGraph) -> None:
    # Iterative DFS in id order; every back edge found is dropped.
    color = {n: 0 for n in g.nodes}
    starts = [g.source] + sorted(n for n in g.nodes if n != g.source)
    for root in starts:
        if color[root]:
            continue
        color[root] = 1
        stack = [(root, iter(g.successors(root)))]
        while stack:
            node, it = stack[-1]
            child = next(it, None)
            if child is None:
                color[node] = 2
                stack.pop()
            elif color[child] == 1:
                g.remove_edge(node, child)
            elif color[child] == 0:
                color[child] = 1
                stack.append((child, iter(g.successors(child))))


def repair_topology(graph: AgentGraph, prune_threshold: float) -> AgentGraph:
    """Restore the DAG invariants and prune dead weight, iterating to a fixed point.

    Each round: drop cycle-closing edges, edges into the source or out of the
    aggregator, then orphaned nodes, then edges whose observed success rate is
    below ``prune_threshold``. Edges with no attempts are never pruned.
    """
    g = graph.copy()
    while True:
        before = (frozenset(g.nodes), frozenset(g.edges))
        for key in [k for k in g.edges if k[1] == g.source or k[0] == g.aggregator]:
            del g.edges[key]
        _break_cycles(g)
        while True:
            orphans = [
                n for n in g.nodes
                if n not in (g.source, g.aggregator) and (g.in_degree(n) == 0 or g.out_degree(n) == 0)
            ]
            if not orphans:
                break
            for n in orphans:
                g.remove_node(n)
        for key, edge in list(g.edges.items()):
            rate = edge.success_rate
            if rate is not None and rate < prune_threshold:
                del g.edges[key]
        if (frozenset(g.nodes), frozenset(g.edges)) == before:
            break
    if g.aggregator not in reachable(g, g.source):
        # Every route was pruned; fall back to the singleton link so the next pass can run.
        g.add_edge(g.source, g.aggregator)
    return g


def check_invariants(graph: AgentGraph) -> list[str]:
    """Return a list of violated graph invariants (empty when the graph is valid)."""
    problems = []
    if graph.source not in graph.nodes:
        problems.append("source missing")
    if graph.aggregator not in graph.nodes:
        problems.append("aggregator missing")
    if problems:
        return problems
    if not is_acyclic(graph):
        problems.append("cycle present")
    if graph.in_degree(graph.source):
        problems.append("source has incoming edges")
    if graph.out_degree(graph.aggregator):
        problems.append("aggregator has outgoing edges")
    for n in graph.nodes:
        if n in (graph.source, graph.aggregator):
            continue
        if graph.in_degree(n) == 0 or graph.out_degree(n) == 0:
            problems.append(f"orphan node {n}")
    if graph.aggregator not in reachable(graph, graph.source):
        problems.append("aggregator unreachable from source")
    return problems
