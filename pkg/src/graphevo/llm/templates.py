"""Prompt templates and their renderer.

Placeholders are ``{name}`` or ``{name[:N]}``; the slice form truncates the
field to N characters. Field names may contain dots (``successor.agent_id``).
Braces that do not form a placeholder are left untouched.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

from ..errors import MissingField
from .backend import ChatRequest

INSTRUCTION_MAX_TOKENS = 1000
TOOL_TEMPERATURE = 0.3


class TemplateId(str, Enum):
    FORWARD_INSTRUCTION = "ForwardInstruction"
    SYSTEM_FEEDBACK = "SystemFeedback"
    AGENT_FEEDBACK = "AgentFeedback"
    PROMPT_UPDATE = "PromptUpdate"
    TOPOLOGY_DECISION = "TopologyDecision"
    TOOL_SYNTHESIS = "ToolSynthesis"
    TOOL_REFINEMENT = "ToolRefinement"
    GLOBAL_GRADIENT = "GlobalGradient"
    AGGREGATION = "Aggregation"
    SENTIMENT_REWARD = "SentimentReward"


@dataclass(frozen=True)
class Template:
    system: str
    user: str
    temperature: float = 1.0
    max_tokens: int = INSTRUCTION_MAX_TOKENS


_FEEDBACK_BODY = """\
Generate feedback for:
PREDECESSOR: {predecessor}
SUCCESSOR: Aggregator {aggregator_id}
SUCCESSOR FEEDBACK: {loss_grad}
CONTEXT: Final result: {final_result[:200]}...
Output: <FEEDBACK>{{feedback}}</FEEDBACK>"""

TEMPLATES: dict[TemplateId, Template] = {
    TemplateId.FORWARD_INSTRUCTION: Template(
        system="You are an instruction generator for multi-agent systems. Create clear, specific instructions.",
        user="""\
Generate an instruction for the successor agent:
CURRENT AGENT INPUT: {input_instruction}
CURRENT AGENT TOOL RESULT: {tool_result}
SUCCESSOR AGENT SYSTEM PROMPT: {successor.system_prompt}
SUCCESSOR AGENT ID: {successor.agent_id}
Requirements: 1. Actionable instruction. 2. Align with the successor's capabilities. \
3. Transfer relevant context. 4. Be concise.""",
    ),
    # Aggregator -> one named predecessor.
    TemplateId.SYSTEM_FEEDBACK: Template(
        system="You are an output aggregator generating feedback for predecessors based on environmental outcomes.",
        user=_FEEDBACK_BODY,
    ),
    # Loss -> global textual gradient, addressed to all predecessors at once.
    TemplateId.GLOBAL_GRADIENT: Template(
        system="You are an output aggregator generating feedback for predecessors based on environmental outcomes.",
        user=_FEEDBACK_BODY.replace("{predecessor}", "predecessor agents"),
    ),
    TemplateId.AGENT_FEEDBACK: Template(
        system="Analyze successor feedback for agent improvement.",
        user="""\
Current Agent Role: {system_prompt[:300]}...
Current Agent Output: {agent_output}
Successor Feedback: {combined_feedback}
Provide:
1. SYSTEM_PROMPT_FEEDBACK: Role improvements.
2. TOOL_FEEDBACK: Tool improvements.
3. OVERALL_FEEDBACK: Strategic improvements.""",
    ),
    TemplateId.PROMPT_UPDATE: Template(
        system="Generate an improved system prompt.",
        user="""\
Current variable: {system_prompt}
Role: AI agent system prompt
Gradients: {system_prompt_feedback}
Output: <IMPROVED_VARIABLE>{{prompt}}</IMPROVED_VARIABLE>""",
    ),
    TemplateId.TOPOLOGY_DECISION: Template(
        system="You are a network topology optimizer.",
        user="""\
Current Agent Role: {system_prompt}...
Feedback: {feedback}
Successor Count: {successor_count}
Task Parallelizability: {parallelizability}
Options:
- ADD_PARALLEL: [New agent description]
- ADD_SERIAL: [New agent description]
- REMOVE_SUCCESSOR: [Successor to remove]
- NO_CHANGE: [Reason]
Current successors: {successors}""",
    ),
    TemplateId.TOOL_SYNTHESIS: Template(
        system=(
            "You are a tool generation specialist for an AI agent system. Your task is to write a single, "
            "self-contained Python function based on the provided requirements."
        ),
        user="""\
Generate a Python tool function with the following specifications:

**Tool Description:**
{description}

**Input/Output Examples:**
{examples}

**Function Signature Requirements:**
- The function must be named `tool_function`.
- It must accept at least one parameter: `input_data`.
- It must include error handling for invalid inputs.
- It must not use restricted libraries like `os` or `subprocess`.

Please return only the complete Python code inside a `python` block.""",
        temperature=TOOL_TEMPERATURE,
    ),
    TemplateId.TOOL_REFINEMENT: Template(
        system=(
            "You are a tool evolution specialist. Your task is to improve an existing Python tool function "
            "based on its source code and performance feedback."
        ),
        user="""\
Please improve the following tool function.

**Current Tool Function Source Code:**
```python
{source}
```

**Performance Feedback (Textual Gradient):**
{feedback}

**Improvement Requirements:**
- Preserve the original function signature (`tool_function(input_data, **kwargs)`).
- Directly address the issue described in the feedback.
- Enhance error handling and edge-case coverage.
- Do not introduce new external dependencies.
Return only the improved, complete Python function code inside a `python` block.""",
        temperature=TOOL_TEMPERATURE,
    ),
    TemplateId.AGGREGATION: Template(
        system="You are an output aggregator. Combine the agent outputs below into one final answer to the task.",
        user="""\
TASK: {instruction}
AGENT OUTPUTS:
{agent_outputs}
Resolve any conflicts between the outputs and reply with the final answer only.""",
    ),
    TemplateId.SENTIMENT_REWARD: Template(
        system="You classify feedback about an agent's work.",
        user="""\
Classify the sentiment of this feedback on the agent's contribution.
Feedback: {feedback}
Answer with exactly one word: POSITIVE, NEUTRAL, or CRITICAL.""",
    ),
}

_PLACEHOLDER = re.compile(r"\{([A-Za-z_][\w.]*)(?:\[:(\d+)\])?\}")
_ESCAPED = re.compile(r"\{\{(\w+)\}\}")


def placeholders(template_id: TemplateId) -> list[str]:
    t = TEMPLATES[TemplateId(template_id)]
    return sorted({m.group(1) for m in _PLACEHOLDER.finditer(_ESCAPED.sub("", t.user))})


def _fill(text: str, fields: dict[str, str]) -> str:
    def sub(m: re.Match) -> str:
        name, limit = m.group(1), m.group(2)
        if name not in fields:
            raise MissingField(name)
        value = str(fields[name])
        return value[: int(limit)] if limit else value

    # {{x}} is a literal {x} in the rendered prompt
    parts = _ESCAPED.split(text)
    out = []
    for i, part in enumerate(parts):
        out.append("{" + part + "}" if i % 2 else _PLACEHOLDER.sub(sub, part))
    return "".join(out)


def render_template(template_id: TemplateId | str, fields: dict[str, str], **overrides) -> ChatRequest:
    """Build the chat request for ``template_id`` with ``fields`` substituted."""
    tid = TemplateId(template_id)
    t = TEMPLATES[tid]
    return ChatRequest(
        system=_fill(t.system, fields),
        user=_fill(t.user, fields),
        temperature=overrides.get("temperature", t.temperature),
        max_tokens=overrides.get("max_tokens", t.max_tokens),
        template=tid.value,
    )
