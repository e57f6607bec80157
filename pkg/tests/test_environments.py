import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from graphevo.environments import Outcome, Task, TaskKind, evaluate, last_number, load_tasks
from graphevo.errors import NoNumberFound

SOLUTION = "def add(a, b):\n    return a + b if a >= 0 else a - b\n"


def test_exact_match_normalizes():
    out = evaluate(Task("t", "capital?", "ExactMatch", "Austin"), "  austin ")
    assert out.success and out.score == 1.0
    bad = evaluate(Task("t", "capital?", "ExactMatch", "Austin"), "Dallas")
    assert not bad.success and "Austin" in bad.feedback


def test_numeric():
    assert evaluate(Task("t", "2+2", "Numeric", 4), "The answer is 4.").success
    assert evaluate(Task("t", "pop", "Numeric", 950000), "about 950,000 people").success
    assert not evaluate(Task("t", "2+2", "Numeric", 4), "it is 5").success
    with pytest.raises(NoNumberFound):
        evaluate(Task("t", "2+2", "Numeric", 4), "no idea")
    assert last_number("x=-3.5e2 then 7") == 7.0


def test_unit_tests_half_pass():
    tests = ["assert add(1, 2) == 3", "assert add(0, 0) == 0", "assert add(-1, 1) == 0", "assert add(-2, -2) == -4"]
    out = evaluate(Task("t", "write add", "UnitTest", tests), f"```python\n{SOLUTION}```")
    assert not out.success and out.score == 0.5
    assert "2 of 4 tests failed" in out.feedback and "add(-1, 1)" in out.feedback


def test_unit_tests_all_pass():
    out = evaluate(Task("t", "write add", "UnitTest", {"tests": ["assert add(1, 2) == 3"]}), SOLUTION)
    assert out.success and out.score == 1.0


def test_outcome_and_task_validation():
    with pytest.raises(ValueError):
        Outcome(False, 0.0, "")
    with pytest.raises(ValueError):
        Outcome(True, 1.5, "x")
    with pytest.raises(ValueError):
        Task("t", "x", "UnitTest", [])
    with pytest.raises(ValueError):
        evaluate(Task("t", "x", "ExactMatch", "a"), "  ")


def test_load_tasks(tmp_path):
    p = tmp_path / "tasks.jsonl"
    p.write_text(json.dumps({"id": "a", "instruction": "i", "kind": "Numeric", "expected": "3"}) + "\n\n")
    (task,) = load_tasks(p)
    assert task.kind is TaskKind.NUMERIC and task.expected == 3.0
    p.write_text("{not json}\n")
    with pytest.raises(ValueError, match="line"):
        load_tasks(p)


@given(st.text(max_size=40).filter(str.strip), st.text(max_size=10))
def test_score_consistent_with_success(output, expected):
    out = evaluate(Task("t", "q", "ExactMatch", expected or "x"), output)
    assert 0.0 <= out.score <= 1.0
    assert out.success == (out.score == 1.0)
    assert out == evaluate(Task("t", "q", "ExactMatch", expected or "x"), output)


@given(st.floats(-1e6, 1e6, allow_nan=False).map(lambda x: round(x, 3)))
def test_numeric_last_number(x):
    assert evaluate(Task("t", "q", "Numeric", x), f"first 12, finally {x}").success
