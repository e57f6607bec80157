"""Environment oracles: score a final system output against a task."""
from __future__ import annotations

import json
import math
import re
import subprocess
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any

from .errors import NoCodeBlock, NoNumberFound, SandboxFailure
from .llm import extract_code_block
from .tools import ExecutionPolicy, Sandbox

NUMERIC_REL_TOL = 1e-6
_NUMBER = re.compile(r"[-+]?(?:(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?|\.\d+)(?:[eE][-+]?\d+)?")


class TaskKind(str, Enum):
    EXACT_MATCH = "ExactMatch"
    NUMERIC = "Numeric"
    UNIT_TEST = "UnitTest"


@dataclass
class Task:
    id: str
    instruction: str
    kind: TaskKind
    expected: Any
    concept: str | None = None

    def __post_init__(self):
        self.kind = TaskKind(self.kind)
        if not self.instruction:
            raise ValueError(f"task {self.id!r} has an empty instruction")
        if self.kind is TaskKind.NUMERIC:
            self.expected = float(self.expected)
        elif self.kind is TaskKind.EXACT_MATCH:
            self.expected = str(self.expected)
        elif self.kind is TaskKind.UNIT_TEST:
            tests = self.expected.get("tests") if isinstance(self.expected, dict) else self.expected
            if not isinstance(tests, list) or not tests or not all(isinstance(t, str) for t in tests):
                raise ValueError(f"task {self.id!r}: UnitTest expects a non-empty list of test snippets")

    @classmethod
    def from_dict(cls, data: dict) -> Task:
        return cls(data["id"], data["instruction"], data["kind"], data["expected"], data.get("concept"))


def load_tasks(path: str | Path) -> list[Task]:
    tasks = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if line.strip():
            try:
                tasks.append(Task.from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad task line: {exc}") from exc
    return tasks


@dataclass(frozen=True)
class Outcome:
    success: bool
    score: float
    feedback: str

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("score must lie in [0, 1]")
        if not self.success and not self.feedback:
            raise ValueError("a failed outcome needs feedback")

    def to_dict(self) -> dict:
        return {"success": self.success, "score": self.score, "feedback": self.feedback}


def normalize(text: str) -> str:
    return " ".join(text.casefold().split())


def last_number(text: str) -> float:
    found = _NUMBER.findall(text)
    if not found:
        raise NoNumberFound(f"no number in output: {text[:80]!r}")
    return float(found[-1].replace(",", ""))


def _short(text: str, n: int = 80) -> str:
    text = " ".join(text.split())
    return text if len(text) <= n else text[: n - 3] + "..."


def _exact(task: Task, output: str) -> Outcome:
    if normalize(output) == normalize(task.expected):
        return Outcome(True, 1.0, "Correct.")
    return Outcome(False, 0.0, f"Expected {task.expected!r} but the output was {_short(output)!r}.")


def _numeric(task: Task, output: str) -> Outcome:
    got = last_number(output)
    if math.isclose(got, task.expected, rel_tol=NUMERIC_REL_TOL, abs_tol=1e-12):
        return Outcome(True, 1.0, "Correct.")
    return Outcome(
        False, 0.0,
        f"Expected {task.expected:g} but the final number in the output was {got:g}.",
    )


UNIT_HARNESS = """\
import json
source = open("solution.py").read()
tests = json.load(open("tests.json"))
namespace = {"__name__": "solution"}
try:
    exec(compile(source, "solution.py", "exec"), namespace)
    load_error = None
except BaseException as exc:
    load_error = "solution failed to load: %s: %s" % (type(exc).__name__, exc)
results = []
for test in tests:
    if load_error:
        results.append([False, load_error])
        continue
    try:
        exec(compile(test, "test", "exec"), dict(namespace))
        results.append([True, ""])
    except BaseException as exc:
        results.append([False, "%s: %s" % (type(exc).__name__, exc)])
print("@@UNIT_RESULTS@@" + json.dumps(results))
"""


def _unit_tests(task: Task, output: str, sandbox: Sandbox, policy: ExecutionPolicy) -> Outcome:
    tests = task.expected.get("tests") if isinstance(task.expected, dict) else task.expected
    try:
        source = extract_code_block(output)
    except NoCodeBlock:
        source = output
    files = {"harness.py": UNIT_HARNESS, "solution.py": source, "tests.json": json.dumps(tests)}
    with sandbox.lock:
        try:
            proc = sandbox.run_once(files, ["harness.py"], "", policy.timeout)
        except subprocess.TimeoutExpired:
            results = [[False, f"timed out after {policy.timeout:g}s"]] * len(tests)
        except OSError as exc:
            raise SandboxFailure(f"could not launch interpreter: {exc}") from exc
        else:
            line = next((l for l in reversed(proc.stdout.splitlines()) if l.startswith("@@UNIT_RESULTS@@")), None)
            if line is None:
                raise SandboxFailure(f"test harness produced no results: {proc.stderr[-300:]}")
            results = json.loads(line[len("@@UNIT_RESULTS@@"):])
    passed = sum(1 for ok, _ in results if ok)
    score = passed / len(tests)
    if passed == len(tests):
        return Outcome(True, 1.0, f"All {len(tests)} tests passed.")
    idx = next(i for i, (ok, _) in enumerate(results) if not ok)
    return Outcome(
        False, score,
        f"{len(tests) - passed} of {len(tests)} tests failed. "
        f"First failing case: {_short(tests[idx], 120)} ({results[idx][1] or 'failed'}).",
    )


def evaluate(
    task: Task, output: str, sandbox: Sandbox | None = None, policy: ExecutionPolicy | None = None
) -> Outcome:
    """Score ``output`` for ``task``; failures carry a one-line discrepancy note."""
    if not output or not output.strip():
        raise ValueError("output must be non-empty")
    if task.kind is TaskKind.EXACT_MATCH:
        return _exact(task, output)
    if task.kind is TaskKind.NUMERIC:
        return _numeric(task, output)
    return _unit_tests(task, output, sandbox or Sandbox(), policy or ExecutionPolicy(timeout=10.0))
