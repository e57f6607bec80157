"""Evolvable tools: schema registry, import screening, sandboxed execution,
and model-driven synthesis and refinement.

Tool scripts run in a separate interpreter process through a small harness::

    <interpreter...> harness.py tool.py <entry_point>     (stdin: JSON string)

The harness loads ``tool.py``, calls ``entry_point(input_text)`` and writes the
return value as one line ``@@TOOL_RESULT@@`` followed by ``json.dumps(str(value))``.
A run without that line, or with a non-zero exit status, counts as a crash.
"""
from __future__ import annotations

import io
import json
import logging
import os
import re
import shlex
import subprocess
import sys
import tempfile
import threading
import time
import tokenize
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

from .errors import (
    CrashedExhausted,
    EntryPointChanged,
    MissingEntryPoint,
    RestrictedImport,
    TimedOutExhausted,
    UnknownTool,
)
from .llm import ChatBackend, extract_code_block, render_template
from .llm.templates import TemplateId

log = logging.getLogger(__name__)

SENTINEL = "@@TOOL_RESULT@@"
DEFAULT_ENTRY_POINT = "tool_function"
DEFAULT_DENYLIST = frozenset({"os", "subprocess"})

HARNESS = f"""\
import importlib.util, json, sys
spec = importlib.util.spec_from_file_location("tool_module", sys.argv[1])
module = importlib.util.module_from_spec(spec)
spec.loader.exec_module(module)
value = getattr(module, sys.argv[2])(json.loads(sys.stdin.read()))
sys.stdout.write("\\n{SENTINEL}" + json.dumps(str(value)) + "\\n")
"""


@dataclass
class ToolSchema:
    name: str
    description: str
    source: str
    version: int = 1
    entry_point: str = DEFAULT_ENTRY_POINT
    constraints: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.source.strip():
            raise ValueError("tool source must be non-empty")
        if self.version < 1:
            raise ValueError("tool version starts at 1")


@dataclass(frozen=True)
class ExecutionPolicy:
    timeout: float = 30.0
    max_retries: int = 3
    denylist: frozenset[str] = DEFAULT_DENYLIST

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass
class SandboxResult:
    output: str
    succeeded: bool
    attempts: int
    elapsed: float


def _statements(source: str):
    stmt = []
    for tok in tokenize.generate_tokens(io.StringIO(source).readline):
        if tok.type in (tokenize.NEWLINE, tokenize.ENDMARKER) or tok.string == ";":
            if stmt:
                yield stmt
            stmt = []
        elif tok.type in (tokenize.NAME, tokenize.OP):
            stmt.append(tok)


def imported_modules(source: str) -> list[str]:
    """Top-level module names named by ``import``/``from`` statements (token scan)."""
    names: list[str] = []
    try:
        statements = list(_statements(source))
    except (tokenize.TokenError, IndentationError, SyntaxError):
        # untokenizable source: fall back to a line regex
        for m in re.finditer(r"^[ \t]*(?:from[ \t]+(\w+)|import[ \t]+([\w., \t]+))", source, re.M):
            if m.group(1):
                names.append(m.group(1))
            else:
                names += [p.split()[0].split(".")[0] for p in m.group(2).split(",") if p.strip()]
        return names
    for stmt in statements:
        for i, tok in enumerate(stmt):
            if tok.string == "from" and i + 1 < len(stmt) and stmt[i + 1].type == tokenize.NAME:
                names.append(stmt[i + 1].string)
                break
            if tok.string == "import":
                expect = True
                for t in stmt[i + 1:]:
                    if expect and t.type == tokenize.NAME:
                        names.append(t.string)
                        expect = False
                    elif t.string == ",":
                        expect = True
                break
    return names


def defines_function(source: str, name: str) -> bool:
    return re.search(rf"^\s*(?:async\s+)?def\s+{re.escape(name)}\s*\(", source, re.M) is not None


def validate_tool_source(schema: ToolSchema, policy: ExecutionPolicy | None = None) -> ToolSchema:
    """Reject denylisted imports and sources without the entry-point function.

    This is a static best-effort screen, not a security boundary.
    """
    policy = policy or ExecutionPolicy()
    for mod in imported_modules(schema.source):
        if mod in policy.denylist:
            raise RestrictedImport(mod)
    if not defines_function(schema.source, schema.entry_point):
        raise MissingEntryPoint(f"no definition of {schema.entry_point}() in tool {schema.name!r}")
    return schema


# -- process execution ----------------------------------------------------

Runner = Callable[..., subprocess.CompletedProcess]


def run_process(argv, *, input: str, timeout: float, cwd: str, env: dict) -> subprocess.CompletedProcess:
    return subprocess.run(argv, input=input, capture_output=True, text=True, timeout=timeout, cwd=cwd, env=env)


def clean_env(home: str) -> dict[str, str]:
    # Nothing from the parent environment except PATH: no API keys or proxies leak in.
    return {
        "PATH": os.environ.get("PATH", os.defpath),
        "HOME": home,
        "LANG": "C.UTF-8",
        "PYTHONIOENCODING": "utf-8",
        "PYTHONDONTWRITEBYTECODE": "1",
    }


class Sandbox:
    """Runs scripts in an external interpreter with a per-attempt timeout."""

    def __init__(self, interpreter: str | list[str] | None = None, runner: Runner = run_process):
        if interpreter is None:
            self.interpreter = [sys.executable, "-I"]
        elif isinstance(interpreter, str):
            self.interpreter = shlex.split(interpreter)
        else:
            self.interpreter = list(interpreter)
        self.runner = runner
        self.lock = threading.Lock()

    def run_once(self, files: dict[str, str], args: list[str], stdin: str, timeout: float) -> subprocess.CompletedProcess:
        """One attempt; raises ``subprocess.TimeoutExpired`` on timeout."""
        with tempfile.TemporaryDirectory(prefix="graphevo-tool-") as tmp:
            for name, text in files.items():
                Path(tmp, name).write_text(text)
            return self.runner(self.interpreter + args, input=stdin, timeout=timeout, cwd=tmp, env=clean_env(tmp))

    def execute(self, schema: ToolSchema, input_text: str, policy: ExecutionPolicy | None = None) -> SandboxResult:
        policy = policy or ExecutionPolicy()
        files = {"harness.py": HARNESS, "tool.py": schema.source}
        start = time.monotonic()
        timeouts = 0
        last_err = ""
        for attempt in range(1, policy.max_retries + 2):
            try:
                proc = self.run_once(files, ["harness.py", "tool.py", schema.entry_point], json.dumps(input_text), policy.timeout)
            except subprocess.TimeoutExpired:
                timeouts += 1
                log.warning("tool %s attempt %d timed out after %.1fs", schema.name, attempt, policy.timeout)
                continue
            output = _parse_result(proc.stdout)
            if proc.returncode == 0 and output is not None:
                return SandboxResult(output, True, attempt, time.monotonic() - start)
            last_err = (proc.stderr or proc.stdout or f"exit status {proc.returncode}")[-2000:]
            tail = last_err.strip().splitlines()
            log.warning("tool %s attempt %d crashed: %s", schema.name, attempt, tail[-1] if tail else "")
        attempts = policy.max_retries + 1
        if timeouts == attempts:
            raise TimedOutExhausted(attempts, policy.timeout)
        raise CrashedExhausted(attempts, last_err)


def _parse_result(stdout: str) -> str | None:
    for line in reversed(stdout.splitlines()):
        if line.startswith(SENTINEL):
            try:
                return json.loads(line[len(SENTINEL):])
            except ValueError:
                return None
    return None


def execute_tool(
    schema: ToolSchema, input_text: str, policy: ExecutionPolicy | None = None, sandbox: Sandbox | None = None
) -> SandboxResult:
    return (sandbox or Sandbox()).execute(schema, input_text, policy)


# -- registry -------------------------------------------------------------

class ToolRegistry:
    """Versioned tool store; thread-safe, persisted as JSON."""

    def __init__(self):
        self._lock = threading.Lock()
        self._tools: dict[tuple[str, int], ToolSchema] = {}
        self.stats: dict[str, dict[str, int]] = {}

    def register(self, schema: ToolSchema) -> ToolSchema:
        with self._lock:
            key = (schema.name, schema.version)
            if key in self._tools:
                raise ValueError(f"tool {schema.name!r} version {schema.version} already registered")
            self._tools[key] = schema
            self.stats.setdefault(schema.name, {"attempts": 0, "successes": 0})
        return schema

    def get(self, name: str, version: int | None = None) -> ToolSchema:
        with self._lock:
            if version is not None:
                try:
                    return self._tools[(name, version)]
                except KeyError:
                    raise UnknownTool(f"{name} v{version}") from None
            versions = [v for n, v in self._tools if n == name]
            if not versions:
                raise UnknownTool(name)
            return self._tools[(name, max(versions))]

    def __contains__(self, name: str) -> bool:
        return any(n == name for n, _ in self._tools)

    def names(self) -> list[str]:
        return sorted({n for n, _ in self._tools})

    def record(self, name: str, succeeded: bool) -> None:
        with self._lock:
            s = self.stats.setdefault(name, {"attempts": 0, "successes": 0})
            s["attempts"] += 1
            s["successes"] += int(succeeded)

    def run(self, name: str, input_text: str, policy: ExecutionPolicy | None = None, sandbox: Sandbox | None = None) -> SandboxResult:
        schema = self.get(name)
        try:
            result = execute_tool(schema, input_text, policy, sandbox)
        except Exception:
            self.record(name, False)
            raise
        self.record(name, result.succeeded)
        return result

    def to_dict(self) -> dict:
        tools = []
        for key in sorted(self._tools):
            entry = asdict(self._tools[key])
            stats = self.stats.get(key[0], {"attempts": 0, "successes": 0})
            if key[1] == max(v for n, v in self._tools if n == key[0]):
                entry.update(stats)
            tools.append(entry)
        return {"tools": tools}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_dict(cls, data: dict) -> ToolRegistry:
        reg = cls()
        for raw in data.get("tools", []):
            raw = dict(raw)
            stats = {k: raw.pop(k) for k in ("attempts", "successes") if k in raw}
            schema = reg.register(ToolSchema(**raw))
            if stats:
                reg.stats[schema.name] = {"attempts": stats.get("attempts", 0), "successes": stats.get("successes", 0)}
        return reg

    @classmethod
    def load(cls, path: str | Path) -> ToolRegistry:
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- synthesis and refinement ----------------------------------------------

def _slug(text: str) -> str:
    words = re.findall(r"[a-z0-9]+", text.lower())[:4]
    return "_".join(words) or "tool"


def synthesize_tool(
    llm: ChatBackend,
    description: str,
    examples: str | None = None,
    name: str | None = None,
    policy: ExecutionPolicy | None = None,
) -> ToolSchema:
    if not description.strip():
        raise ValueError("tool description must be non-empty")
    request = render_template(
        TemplateId.TOOL_SYNTHESIS,
        {"description": description, "examples": examples or "None provided."},
    )
    source = extract_code_block(llm.complete(request))
    schema = ToolSchema(name=name or _slug(description), description=description, source=source)
    return validate_tool_source(schema, policy)


def refine_tool(llm: ChatBackend, schema: ToolSchema, feedback: str, policy: ExecutionPolicy | None = None) -> ToolSchema:
    request = render_template(TemplateId.TOOL_REFINEMENT, {"source": schema.source.rstrip("\n"), "feedback": feedback})
    source = extract_code_block(llm.complete(request))
    if not defines_function(source, schema.entry_point):
        raise EntryPointChanged(f"refined tool {schema.name!r} no longer defines {schema.entry_point}()")
    return validate_tool_source(replace(schema, source=source, version=schema.version + 1), policy)
