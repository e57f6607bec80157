"""Knowledge graph, hashed text embeddings and the agent/task mismatch cost."""
from __future__ import annotations

import hashlib
import json
import math
import re
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BadWeights, EmptyText, KnowledgeError, Unreachable, UnknownAgent

EMBED_DIM = 256
_TOKEN = re.compile(r"[a-z0-9]+")


def tokens(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def token_bucket(token: str, dim: int = EMBED_DIM) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % dim


def embed_text(text: str, dim: int = EMBED_DIM) -> np.ndarray:
    """Deterministic unit-norm bag-of-tokens vector.

    Each lower-cased alphanumeric token adds one count to a bucket chosen by
    BLAKE2b. Text with no such tokens is hashed as a single token.
    """
    if not text or not text.strip():
        raise EmptyText("cannot embed empty text")
    toks = tokens(text) or [text.strip()]
    vec = np.zeros(dim)
    for tok in toks:
        vec[token_bucket(tok, dim)] += 1.0
    return vec / np.linalg.norm(vec)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


class NodeKind(str, Enum):
    CONCEPT = "Concept"
    AGENT = "Agent"
    TOOL = "Tool"


RELATIONS = frozenset({"is_a", "requires_skill", "has_tool"})


@dataclass
class KGNode:
    id: str
    kind: NodeKind
    label: str
    embedding: np.ndarray = field(repr=False)


class KnowledgeGraph:
    """Immutable typed graph; edges are traversed in their stored direction."""

    def __init__(self, nodes: Sequence[dict], edges: Sequence[dict], root: str, dim: int = EMBED_DIM):
        self.nodes: dict[str, KGNode] = {}
        for raw in nodes:
            kind = NodeKind(raw["kind"])
            self.nodes[raw["id"]] = KGNode(raw["id"], kind, raw["label"], embed_text(raw["label"], dim))
        self._out: dict[str, list[tuple[str, str]]] = {n: [] for n in self.nodes}
        for raw in edges:
            src, dst, rel = raw["from"], raw["to"], raw["relation"]
            if src not in self.nodes or dst not in self.nodes:
                raise KnowledgeError(f"edge {src}->{dst} references an unknown node")
            if rel not in RELATIONS:
                raise KnowledgeError(f"unknown relation {rel!r}")
            self._out[src].append((dst, rel))
        for adj in self._out.values():
            adj.sort()
        if root not in self.nodes or self.nodes[root].kind is not NodeKind.CONCEPT:
            raise KnowledgeError(f"root {root!r} must be an existing Concept node")
        self.root = root

    @classmethod
    def from_dict(cls, data: dict) -> KnowledgeGraph:
        return cls(data["nodes"], data["edges"], data["root"])

    @classmethod
    def load(cls, path: str | Path) -> KnowledgeGraph:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def out_edges(self, node_id: str) -> list[tuple[str, str]]:
        return self._out.get(node_id, [])

    def neighbors(self, node_id: str, relations=None, kind: NodeKind | None = None) -> set[str]:
        return {
            dst for dst, rel in self.out_edges(node_id)
            if (relations is None or rel in relations) and (kind is None or self.nodes[dst].kind is kind)
        }

    def shortest_path_length(self, src: str, dst: str) -> int:
        if src not in self.nodes or dst not in self.nodes:
            raise KnowledgeError(f"unknown node in path query {src}->{dst}")
        dist = {src: 0}
        queue = deque([src])
        while queue:
            cur = queue.popleft()
            if cur == dst:
                return dist[cur]
            for nxt, _ in self.out_edges(cur):
                if nxt not in dist:
                    dist[nxt] = dist[cur] + 1
                    queue.append(nxt)
        raise Unreachable(f"{dst!r} is not reachable from {src!r}")

    def most_similar_concept(self, embedding: np.ndarray) -> str:
        concepts = sorted(n for n, node in self.nodes.items() if node.kind is NodeKind.CONCEPT)
        # max() keeps the first of equal scores, so ties go to the smallest id
        return max(concepts, key=lambda n: cosine(self.nodes[n].embedding, embedding))


def task_depth(kg: KnowledgeGraph, concept: str) -> int:
    """Shortest directed path length from the KG root to ``concept``."""
    if concept not in kg.nodes:
        raise KnowledgeError(f"unknown concept {concept!r}")
    return kg.shortest_path_length(kg.root, concept)


@dataclass
class TaskProfile:
    instruction: str
    primary_concept: str | None
    embedding: np.ndarray = field(repr=False)
    depth: int = 0


def profile_task(
    instruction: str,
    kg: KnowledgeGraph | None = None,
    concept: str | None = None,
    max_depth: int = 10,
) -> TaskProfile:
    """Attach a primary concept and depth to an instruction.

    Without an explicit concept the most similar KG concept is chosen; an
    unreachable concept gets ``max_depth``.
    """
    emb = embed_text(instruction)
    if kg is None:
        return TaskProfile(instruction, concept, emb, 0)
    if concept is None:
        concept = kg.most_similar_concept(emb)
    try:
        depth = task_depth(kg, concept)
    except Unreachable:
        depth = max_depth
    return TaskProfile(instruction, concept, emb, depth)


@dataclass(frozen=True)
class MismatchVector:
    psi1: float
    psi2: float
    psi3: float
    psi4: float

    def __post_init__(self):
        for name, v in zip(("psi1", "psi2", "psi3", "psi4"), self.as_tuple()):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.psi1, self.psi2, self.psi3, self.psi4)


@dataclass(frozen=True)
class HistoryRecord:
    agent_id: str
    embedding: np.ndarray
    success: bool


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


def task_concepts(kg: KnowledgeGraph, concept: str) -> set[str]:
    return {concept} | kg.neighbors(concept, {"requires_skill"}, NodeKind.CONCEPT)


def agent_concepts(kg: KnowledgeGraph, agent_id: str) -> set[str]:
    return kg.neighbors(agent_id, kind=NodeKind.CONCEPT)


def required_tools(kg: KnowledgeGraph, concept: str) -> set[str]:
    return kg.neighbors(concept, {"has_tool", "requires_skill"}, NodeKind.TOOL)


def historical_mismatch(
    agent_id: str, task_embedding: np.ndarray, history: Sequence[HistoryRecord], threshold: float = 0.75
) -> float:
    relevant = [
        h.success for h in history
        if h.agent_id == agent_id and cosine(h.embedding, task_embedding) >= threshold
    ]
    if not relevant:
        return 1.0
    return 1.0 - sum(relevant) / len(relevant)


def mismatch_vector(
    kg: KnowledgeGraph,
    agent,
    task: TaskProfile,
    history: Sequence[HistoryRecord] = (),
    max_depth: int = 10,
    similarity_threshold: float = 0.75,
) -> MismatchVector:
    """The four normalized agent/task mismatch indicators.

    ``agent`` must be registered in the KG as an Agent node with the same id.
    """
    node = kg.nodes.get(agent.id)
    if node is None or node.kind is not NodeKind.AGENT:
        raise UnknownAgent(agent.id)
    concept = task.primary_concept
    if concept is None or concept not in kg.nodes:
        raise KnowledgeError(f"task concept {concept!r} not in knowledge graph")

    overlap = jaccard(agent_concepts(kg, agent.id), task_concepts(kg, concept))
    sim = _clamp01(cosine(node.embedding, task.embedding))
    psi1 = 1.0 - (0.5 * overlap + 0.5 * sim)

    try:
        hops = kg.shortest_path_length(agent.id, concept)
        psi2 = min(1.0, hops / max_depth)
    except Unreachable:
        psi2 = 1.0

    psi3 = historical_mismatch(agent.id, task.embedding, history, similarity_threshold)

    needed = required_tools(kg, concept)
    have = kg.neighbors(agent.id, {"has_tool"}, NodeKind.TOOL)
    if agent.tool_ref:
        have.add(agent.tool_ref)
    psi4 = 0.0 if not needed or (needed & have) else 1.0

    return MismatchVector(_clamp01(psi1), psi2, _clamp01(psi3), psi4)


def validate_weights(weights: Sequence[float]) -> None:
    if len(weights) != 4:
        raise BadWeights(f"need 4 weights, got {len(weights)}")
    if any(w < 0 for w in weights):
        raise BadWeights(f"negative weight in {tuple(weights)}")
    if abs(math.fsum(weights) - 1.0) > 1e-9:
        raise BadWeights(f"weights sum to {math.fsum(weights)}, not 1")


def knowledge_distance(depth: int, psi: MismatchVector, weights: Sequence[float]) -> float:
    """log(1 + depth) times the weighted mismatch score."""
    validate_weights(weights)
    return math.log1p(depth) * sum(w * p for w, p in zip(weights, psi.as_tuple()))
