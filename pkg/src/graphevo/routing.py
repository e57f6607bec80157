"""Knowledge-aware Bayesian bandit routing.

Successor choice is Thompson sampling over per-agent Beta beliefs, penalized by
a knowledge-graph distance and boosted by pairwise team synergy.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import KnowledgeError, NoSuccessors, UnknownAgent, UnknownNode
from .graph import AgentGraph, AgentNode, EdgeState
from .knowledge import (
    HistoryRecord,
    KnowledgeGraph,
    MismatchVector,
    TaskProfile,
    agent_concepts,
    cosine,
    embed_text,
    historical_mismatch,
    jaccard,
    knowledge_distance,
    mismatch_vector,
    profile_task,
    task_concepts,
    tokens,
    validate_weights,
)

BELIEF_FLOOR = 1e-6


@dataclass
class RoutingParams:
    lam: float = 1.0
    eta: float = 0.5
    delta: float = 0.5
    kappa: float = 0.1
    top_k: int = 2
    prune_threshold: float = 0.3
    synergy_rate: float = 0.1
    weights: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)

    def __post_init__(self):
        self.weights = tuple(float(w) for w in self.weights)
        if self.top_k < 1:
            raise ValueError("top_k must be at least 1")
        if min(self.lam, self.eta, self.delta, self.kappa) < 0:
            raise ValueError("lam, eta, delta and kappa must be non-negative")
        if not 0.0 <= self.prune_threshold <= 1.0:
            raise ValueError("prune_threshold must lie in [0, 1]")
        if self.synergy_rate <= 0:
            raise ValueError("synergy_rate must be positive")
        validate_weights(self.weights)

    @classmethod
    def decay_preset(cls, **overrides) -> RoutingParams:
        """Defaults with the decay calibrated so one idle iteration multiplies beliefs by 0.6."""
        return cls(**{"kappa": -math.log(0.6), **overrides})

    @classmethod
    def from_dict(cls, data: dict | None) -> RoutingParams:
        data = dict(data or {})
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown routing parameters: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["lambda"] = out.pop("lam")
        out["weights"] = list(self.weights)
        return out


@dataclass
class RewardSignal:
    agent: str
    value: int
    km: float
    kd: float
    selected: bool
    delta_t: float = 1.0

    def __post_init__(self):
        if self.value not in (0, 1):
            raise ValueError("reward must be 0 or 1")
        if abs(self.kd - (1.0 - self.km)) > 1e-12:
            raise ValueError("kd must equal 1 - km")


def team_synergy(graph: AgentGraph, subset: Iterable[str]) -> float:
    """Mean synergy over ordered pairs of ``subset``; 1.0 for fewer than two members."""
    members = sorted(set(subset))
    for m in members:
        if m not in graph.nodes:
            raise UnknownNode(m)
    n = len(members)
    if n <= 1:
        return 1.0
    total = 0.0
    for a in members:
        for b in members:
            if a != b and (edge := graph.edges.get((a, b))) is not None:
                total += edge.synergy
    return total / (n * (n - 1))


def selection_score(agent: AgentNode, dist: float, zeta: float, params: RoutingParams) -> float:
    return agent.alpha / (agent.alpha + agent.beta) * math.exp(-params.lam * dist) * zeta ** params.eta


def thompson_select(
    graph: AgentGraph,
    from_id: str,
    task: TaskProfile | None,
    selected_so_far: Iterable[str],
    params: RoutingParams,
    rng: np.random.Generator,
    distance: Callable[[AgentNode, TaskProfile | None], float] | None = None,
) -> list[str]:
    """Sample a score per successor and keep the ``top_k`` best.

    Beta draws happen in successor-id order, so a seeded ``rng`` makes the
    choice reproducible. Equal scores are ordered by id.
    """
    succs = graph.successors(from_id)
    if not succs:
        raise NoSuccessors(from_id)
    chosen = set(selected_so_far)
    scored = []
    for sid in succs:
        node = graph.nodes[sid]
        theta = rng.beta(node.alpha, node.beta)
        dist = distance(node, task) if distance is not None else 0.0
        zeta = team_synergy(graph, chosen | {sid})
        scored.append((theta * math.exp(-params.lam * dist) * zeta ** params.eta, sid))
    scored.sort(key=lambda pair: (-pair[0], pair[1]))
    return [sid for _, sid in scored[: params.top_k]]


def decay_factor(kappa: float, delta_t: float) -> float:
    return math.exp(-kappa * delta_t)


def update_beliefs(agent: AgentNode, signal: RewardSignal, params: RoutingParams) -> AgentNode:
    decay = decay_factor(params.kappa, signal.delta_t)
    sel = 1.0 if signal.selected else 0.0
    alpha = decay * agent.alpha + (signal.value + params.delta * signal.km) * sel
    beta = decay * agent.beta + ((1 - signal.value) + params.delta * signal.kd) * sel
    return dataclasses.replace(agent, alpha=max(alpha, BELIEF_FLOOR), beta=max(beta, BELIEF_FLOOR))


def pair_affinity(agent: AgentNode, task: TaskProfile) -> float:
    return min(1.0, max(0.0, cosine(embed_text(agent.system_prompt), task.embedding)))


def knowledge_match(agent: AgentNode, task: TaskProfile, rho_overlap: float) -> tuple[float, float]:
    if not 0.0 <= rho_overlap <= 1.0:
        raise ValueError("rho_overlap must lie in [0, 1]")
    km = min(1.0, max(0.0, rho_overlap * pair_affinity(agent, task)))
    return km, 1.0 - km


def update_synergy(edge: EdgeState, contribution: float, params: RoutingParams) -> EdgeState:
    mean = edge.edge_alpha / (edge.edge_alpha + edge.edge_beta)
    return dataclasses.replace(edge, synergy=edge.synergy + params.synergy_rate * mean * contribution)


@dataclass
class KnowledgeModel:
    """Binds the knowledge graph, cost weights and outcome history for routing.

    Agents absent from the KG (typically ones grown during evolution) get a
    neutral 0.5 for the structural indicators; their history term is still
    tracked by id.
    """

    kg: KnowledgeGraph | None = None
    weights: Sequence[float] = (0.25, 0.25, 0.25, 0.25)
    max_depth: int = 10
    similarity_threshold: float = 0.75
    history: list[HistoryRecord] = field(default_factory=list)

    def profile(self, instruction: str, concept: str | None = None) -> TaskProfile:
        return profile_task(instruction, self.kg, concept, self.max_depth)

    def mismatch(self, agent: AgentNode, task: TaskProfile) -> MismatchVector:
        if self.kg is None:
            raise UnknownAgent(agent.id)
        return mismatch_vector(self.kg, agent, task, self.history, self.max_depth, self.similarity_threshold)

    def distance(self, agent: AgentNode, task: TaskProfile | None) -> float:
        if self.kg is None or task is None:
            return 0.0
        try:
            psi = self.mismatch(agent, task)
        except KnowledgeError:
            psi3 = historical_mismatch(agent.id, task.embedding, self.history, self.similarity_threshold)
            psi = MismatchVector(0.5, 0.5, psi3, 0.5)
        return knowledge_distance(task.depth, psi, self.weights)

    def overlap(self, agent: AgentNode, task: TaskProfile) -> float:
        """Task relevance factor used inside the knowledge-match term."""
        kg = self.kg
        if kg is not None and agent.id in kg.nodes and task.primary_concept in kg.nodes:
            return jaccard(agent_concepts(kg, agent.id), task_concepts(kg, task.primary_concept))
        return jaccard(set(tokens(agent.system_prompt)), set(tokens(task.instruction)))

    def record(self, agent_id: str, task: TaskProfile, success: bool) -> None:
        self.history.append(HistoryRecord(agent_id, task.embedding, bool(success)))
