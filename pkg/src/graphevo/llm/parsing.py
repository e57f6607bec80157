"""Extraction of structured pieces from free-form model replies."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Callable, TypeVar

from ..errors import NoCodeBlock, TagNotFound
from .backend import BackendPolicy, ChatBackend, ChatRequest

log = logging.getLogger(__name__)

T = TypeVar("T")

REASK_SUFFIX = "\n\nRespond only in the required format."

SECTION_NAMES = ("SYSTEM_PROMPT_FEEDBACK", "TOOL_FEEDBACK", "OVERALL_FEEDBACK")
_HEADING = re.compile(
    r"^[ \t>*#-]*(?:\d+[.)][ \t]*)?\**(SYSTEM_PROMPT_FEEDBACK|TOOL_FEEDBACK|OVERALL_FEEDBACK)\**[ \t]*:\**",
    re.MULTILINE,
)
_FENCE = re.compile(r"```[ \t]*([\w+-]*)[ \t]*\n(.*?)```", re.DOTALL)


def parse_tagged(text: str, tag: str) -> str:
    m = re.search(rf"<{re.escape(tag)}>(.*?)</{re.escape(tag)}>", text, re.DOTALL)
    if m is None:
        raise TagNotFound(tag)
    return m.group(1).strip()


@dataclass
class FeedbackSections:
    system_prompt_feedback: str = ""
    tool_feedback: str = ""
    overall_feedback: str = ""


def parse_sections(text: str) -> FeedbackSections:
    """Split a reply on the three feedback headings, in any order.

    Missing headings yield empty strings; a reply with no heading at all is
    treated as overall feedback.
    """
    matches = list(_HEADING.finditer(text))
    if not matches:
        return FeedbackSections(overall_feedback=text.strip())
    found: dict[str, str] = {}
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        body = text[m.end():end].strip()
        key = m.group(1).lower()
        # a repeated heading appends rather than overwrites
        found[key] = f"{found[key]}\n{body}".strip() if key in found else body
    return FeedbackSections(**found)


def extract_code_block(text: str) -> str:
    """First fenced block, preferring one tagged ``python``."""
    blocks = _FENCE.findall(text)
    if not blocks:
        raise NoCodeBlock("reply contains no fenced code block")
    for lang, body in blocks:
        if lang.lower() in ("python", "py"):
            return body.strip("\n") + "\n"
    return blocks[0][1].strip("\n") + "\n"


def ask_structured(
    llm: ChatBackend,
    request: ChatRequest,
    parse: Callable[[str], T],
    errors: tuple[type[Exception], ...],
    policy: BackendPolicy | None = None,
) -> tuple[T | None, str, int]:
    """Call the model and parse; on a parse failure re-ask once with a format reminder.

    Returns ``(parsed or None, last raw reply, number of calls made)``.
    """
    reply = llm.complete(request, policy)
    try:
        return parse(reply), reply, 1
    except errors:
        log.info("unparseable %s reply, re-asking once", request.template)
    retry = ChatRequest(
        system=request.system,
        user=request.user + REASK_SUFFIX,
        temperature=request.temperature,
        max_tokens=request.max_tokens,
        template=request.template,
    )
    reply = llm.complete(retry, policy)
    try:
        return parse(reply), reply, 2
    except errors:
        return None, reply, 2
