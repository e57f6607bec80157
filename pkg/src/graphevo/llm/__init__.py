from .backend import (
    API_KEY_ENV,
    BackendPolicy,
    ChatBackend,
    ChatRequest,
    LiveBackend,
    ScriptedBackend,
    ScriptRule,
)
from .parsing import (
    FeedbackSections,
    ask_structured,
    extract_code_block,
    parse_sections,
    parse_tagged,
)
from .templates import TEMPLATES, TemplateId, placeholders, render_template

__all__ = [
    "API_KEY_ENV",
    "BackendPolicy",
    "ChatBackend",
    "ChatRequest",
    "FeedbackSections",
    "LiveBackend",
    "ScriptRule",
    "ScriptedBackend",
    "TEMPLATES",
    "TemplateId",
    "ask_structured",
    "extract_code_block",
    "parse_sections",
    "parse_tagged",
    "placeholders",
    "render_template",
]
