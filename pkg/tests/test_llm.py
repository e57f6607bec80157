import json

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from graphevo.errors import Exhausted, MissingField, NoScriptMatch, TagNotFound
from graphevo.llm import (
    API_KEY_ENV,
    TEMPLATES,
    BackendPolicy,
    ChatRequest,
    LiveBackend,
    ScriptedBackend,
    TemplateId,
    ask_structured,
    extract_code_block,
    parse_sections,
    parse_tagged,
    placeholders,
    render_template,
)


def test_scripted_lookup_records_call():
    llm = ScriptedBackend().add("2+2", "4")
    assert llm.complete(ChatRequest("", "what is 2+2?")) == "4"
    assert llm.call_count == 1
    with pytest.raises(NoScriptMatch):
        llm.complete(ChatRequest("", "unrelated"))


def test_scripted_precedence_and_sequences():
    llm = ScriptedBackend(default="fallback")
    llm.add("hello", ["one", "two"])
    llm.add("hello world", "exact!", match="exact")
    assert llm.complete(ChatRequest("", "hello world")) == "exact!"
    assert [llm.complete(ChatRequest("", "say hello")) for _ in range(3)] == ["one", "two", "two"]
    assert llm.complete(ChatRequest("", "nothing")) == "fallback"


def test_scripted_from_dict_template_filter():
    llm = ScriptedBackend.from_dict({"rules": [
        {"template": "Aggregation", "pattern": "", "response": "agg"},
        {"pattern": ["alpha", "beta"], "responses": ["x", "y"]},
    ]})
    assert llm.complete(render_template(TemplateId.AGGREGATION, {"instruction": "i", "agent_outputs": "o"})) == "agg"
    assert llm.complete(ChatRequest("", "beta then alpha")) == "x"


def _live(handler, **kw):
    sleeps = []
    backend = LiveBackend("http://llm.test/v1", "m", api_key="k", transport=httpx.MockTransport(handler), sleep=sleeps.append)
    return backend, sleeps


def _ok(text):
    return httpx.Response(200, json={"choices": [{"message": {"content": text}}]})


def test_live_retries_then_succeeds():
    calls = []

    def handler(request):
        calls.append(json.loads(request.content))
        if len(calls) < 3:
            raise httpx.ConnectTimeout("slow")
        return _ok("fine")

    backend, sleeps = _live(handler)
    assert backend.complete(ChatRequest("sys", "hi"), BackendPolicy(max_retries=3, backoff=0.5)) == "fine"
    assert backend.attempts == 3
    assert sleeps == [0.5, 1.0]
    assert calls[0]["messages"] == [{"role": "system", "content": "sys"}, {"role": "user", "content": "hi"}]
    assert calls[0]["temperature"] == 1.0 and calls[0]["max_tokens"] == 1000


def test_live_exhausts():
    backend, _ = _live(lambda r: httpx.Response(503))
    with pytest.raises(Exhausted) as info:
        backend.complete(ChatRequest("", "hi"), BackendPolicy(max_retries=3))
    assert backend.attempts == 4 and info.value.attempts == 4


def test_live_reads_key_from_env(monkeypatch):
    monkeypatch.setenv(API_KEY_ENV, "secret")
    seen = {}

    def handler(request):
        seen["auth"] = request.headers.get("authorization")
        return _ok("x")

    LiveBackend("http://llm.test/v1", "m", transport=httpx.MockTransport(handler)).complete(ChatRequest("", "hi"))
    assert seen["auth"] == "Bearer secret"


def test_scripted_makes_no_network_calls(monkeypatch):
    def boom(*a, **k):
        raise AssertionError("network used")

    monkeypatch.setattr(httpx.Client, "send", boom)
    assert ScriptedBackend(default="ok").complete(ChatRequest("", "x")) == "ok"


def test_request_validation():
    with pytest.raises(ValueError):
        ChatRequest("s", "")
    with pytest.raises(ValueError):
        ChatRequest("s", "u", max_tokens=0)


def test_forward_instruction_example():
    req = render_template(TemplateId.FORWARD_INSTRUCTION, {
        "input_instruction": "Population of Tesla's headquarters city?",
        "tool_result": "Tesla Inc. headquarters: Austin, Texas.",
        "successor.system_prompt": "You are a data retrieval agent.",
        "successor.agent_id": "agent-2",
    })
    assert "CURRENT AGENT TOOL RESULT: Tesla Inc. headquarters: Austin, Texas." in req.user
    assert req.system.startswith("You are an instruction generator for multi-agent systems.")
    assert req.temperature == 1.0 and req.max_tokens == 1000


def test_truncation_rules():
    role = "r" * 350
    req = render_template(TemplateId.AGENT_FEEDBACK, {"system_prompt": role, "agent_output": "o", "combined_feedback": "f"})
    assert f"Current Agent Role: {'r' * 300}...\n" in req.user
    req = render_template(TemplateId.GLOBAL_GRADIENT, {"aggregator_id": "aggregator", "loss_grad": "l", "final_result": "x" * 250})
    assert f"Final result: {'x' * 200}..." in req.user
    assert "<FEEDBACK>{feedback}</FEEDBACK>" in req.user


def test_missing_field():
    with pytest.raises(MissingField):
        render_template(TemplateId.FORWARD_INSTRUCTION, {"input_instruction": "a", "tool_result": "b", "successor.system_prompt": "c"})


def test_every_template_renders():
    for tid in TemplateId:
        fields = {name: f"<{name}>" for name in placeholders(tid)}
        req = render_template(tid, fields)
        assert req.template == tid.value
        for name in fields:
            assert f"<{name}>" in req.user
    assert TEMPLATES[TemplateId.TOOL_SYNTHESIS].temperature == 0.3


@given(st.text(alphabet=st.characters(blacklist_characters="{}"), min_size=1, max_size=30),
       st.text(alphabet=st.characters(blacklist_characters="{}"), min_size=1, max_size=30))
def test_render_injective(a, b):
    def r(v):
        return render_template(TemplateId.PROMPT_UPDATE, {"system_prompt": v, "system_prompt_feedback": "fb"}).user
    assert (r(a) == r(b)) == (a == b)


def test_parse_tagged():
    assert parse_tagged("<FEEDBACK>Use recent sources</FEEDBACK>", "FEEDBACK") == "Use recent sources"
    assert parse_tagged("pre <IMPROVED_VARIABLE>x</IMPROVED_VARIABLE>", "IMPROVED_VARIABLE") == "x"
    with pytest.raises(TagNotFound):
        parse_tagged("nothing here", "FEEDBACK")


@given(st.text(alphabet=st.characters(blacklist_characters="<>"), max_size=60))
def test_parse_tagged_roundtrip(payload):
    assert parse_tagged(f"<T>{payload}</T>", "T") == payload.strip()


def test_parse_sections():
    s = parse_sections(
        "SYSTEM_PROMPT_FEEDBACK: Define entity types.\nTOOL_FEEDBACK: Enhance entity extraction tool.\n"
        "OVERALL_FEEDBACK: Improve context transfer."
    )
    assert (s.system_prompt_feedback, s.tool_feedback, s.overall_feedback) == (
        "Define entity types.", "Enhance entity extraction tool.", "Improve context transfer.")
    assert parse_sections("just prose").overall_feedback == "just prose"
    only = parse_sections("2. **TOOL_FEEDBACK:** fix the regex")
    assert only.tool_feedback == "fix the regex" and not only.system_prompt_feedback and not only.overall_feedback


def test_extract_code_block():
    text = "```\nplain\n```\n```python\ndef f():\n    pass\n```"
    assert extract_code_block(text) == "def f():\n    pass\n"


def test_ask_structured_reasks_once():
    llm = ScriptedBackend().add("Gradients", ["garbage", "<IMPROVED_VARIABLE>ok</IMPROVED_VARIABLE>"])
    req = render_template(TemplateId.PROMPT_UPDATE, {"system_prompt": "p", "system_prompt_feedback": "f"})
    parsed, _, calls = ask_structured(llm, req, lambda t: parse_tagged(t, "IMPROVED_VARIABLE"), (TagNotFound,))
    assert (parsed, calls) == ("ok", 2)
    assert llm.calls[1].user.endswith("Respond only in the required format.")
