"""Instrumenter edge cases beyond the core placement rules."""

from __future__ import annotations

import io
import contextlib

import pytest

from helpers import exec_instrumented
from prefixer.instrument import InstrumentError, instrument, make_snippet, strip_probes


def _run(source: str, name: str = "edge"):
    snippet = make_snippet(name, source)
    inst = instrument(snippet)
    with contextlib.redirect_stdout(io.StringIO()) as buffer:
        fired, error = exec_instrumented(inst.source)
    return snippet, inst, sorted(set(fired)), error, buffer.getvalue()


def test_loop_else_clauses():
    source = (
        "total = 0\n"
        "for i in range(2):\n"
        "    total = total + i\n"
        "else:\n"
        "    total = total + 100\n"
        "while total > 1000:\n"
        "    total = 0\n"
        "else:\n"
        "    finished = True\n"
    )
    snippet, inst, fired, error, _ = _run(source)
    assert error is None
    # while-body probes never fire (total>100 is false) but both else suites do
    assert snippet.total_statements == 7
    assert fired == [1, 2, 3, 4, 7]


def test_try_else_finally():
    source = (
        "try:\n"
        "    value = 1\n"
        "except ValueError:\n"
        "    value = 2\n"
        "else:\n"
        "    value = value + 10\n"
        "finally:\n"
        "    done = True\n"
    )
    snippet, inst, fired, error, _ = _run(source)
    assert error is None
    # units: try header, value=1, except header, value=2, else-suite stmt, finally stmt
    assert snippet.total_statements == 6
    assert fired == [1, 2, 5, 6]


def test_inline_suite_with_semicolon_chain():
    source = "flag = True\nif flag: a = 1; b = 2\nprint(a + b)"
    snippet, inst, fired, error, out = _run(source)
    assert error is None
    assert snippet.total_statements == 5
    assert fired == [1, 2, 3, 4, 5]
    assert out == "3\n"


def test_async_function_definition():
    source = (
        "import asyncio\n"
        "async def fetch():\n"
        "    return 41 + 1\n"
        "value = asyncio.run(fetch())\n"
        "print(value)\n"
    )
    snippet, inst, fired, error, out = _run(source)
    assert error is None
    assert out == "42\n"
    assert fired == list(range(1, snippet.total_statements + 1))


def test_comprehension_and_lambda_bodies_are_not_probed():
    source = (
        "values = [n * n for n in range(3)]\n"
        "double = lambda v: v * 2\n"
        "total = sum(double(v) for v in values)\n"
        "print(total)\n"
    )
    snippet, inst, fired, error, _ = _run(source)
    assert error is None
    assert snippet.total_statements == 4  # one unit per top-level statement
    assert fired == [1, 2, 3, 4]


def test_nested_class_with_methods():
    source = (
        "class Box:\n"
        "    def __init__(self, value):\n"
        "        self.value = value\n"
        "    def doubled(self):\n"
        "        return self.value * 2\n"
        "box = Box(4)\n"
        "print(box.doubled())\n"
    )
    snippet, inst, fired, error, out = _run(source)
    assert error is None
    assert out == "8\n"
    assert fired == list(range(1, snippet.total_statements + 1))


def test_global_statement_inside_function():
    source = (
        "counter = 0\n"
        "def bump():\n"
        "    global counter\n"
        "    counter = counter + 1\n"
        "bump()\n"
        "print(counter)\n"
    )
    snippet, inst, fired, error, out = _run(source)
    assert error is None
    assert out == "1\n"


def test_delete_and_assert_statements():
    source = "x = 5\nassert x == 5\ndel x\ny = 2\n"
    snippet, inst, fired, error, _ = _run(source)
    assert error is None
    assert fired == [1, 2, 3, 4]


def test_failing_assert_probe_does_not_fire():
    source = "x = 5\nassert x == 6, 'nope'\ny = 2\n"
    snippet, inst, fired, error, _ = _run(source)
    assert isinstance(error, AssertionError)
    assert fired == [1]


def test_with_statement_multiple_items():
    source = (
        "import io\n"
        "with io.StringIO('a') as first, io.StringIO('b') as second:\n"
        "    merged = first.read() + second.read()\n"
        "print(merged)\n"
    )
    snippet, inst, fired, error, out = _run(source)
    assert error is None
    assert out == "ab\n"
    assert fired == [1, 2, 3, 4]


def test_with_header_crash_leaves_probe_unfired():
    source = "with open('/definitely/not/here') as handle:\n    data = handle.read()\n"
    snippet, inst, fired, error, _ = _run(source)
    assert isinstance(error, OSError)
    assert fired == []


def test_multiline_call_and_dict_literals():
    source = (
        "settings = {\n"
        "    'alpha': 1,\n"
        "    'beta': 2,\n"
        "}\n"
        "total = sum(\n"
        "    settings.values()\n"
        ")\n"
        "print(total)\n"
    )
    snippet, inst, fired, error, out = _run(source)
    assert error is None
    assert out == "3\n"
    assert snippet.total_statements == 3
    assert strip_probes(inst.source) == snippet.source


def test_return_inside_finally_block():
    source = (
        "def f():\n"
        "    try:\n"
        "        return 'try'\n"
        "    finally:\n"
        "        note = 'cleanup'\n"
        "print(f())\n"
    )
    snippet, inst, fired, error, out = _run(source)
    assert error is None
    assert out == "try\n"


def test_raise_from_preserves_cause():
    source = (
        "try:\n"
        "    try:\n"
        "        1 // 0\n"
        "    except ZeroDivisionError as inner:\n"
        "        raise ValueError('wrapped') from inner\n"
        "except ValueError as outer:\n"
        "    cause_kind = type(outer.__cause__).__name__\n"
        "print(cause_kind)\n"
    )
    snippet, inst, fired, error, out = _run(source)
    assert error is None
    assert out == "ZeroDivisionError\n"


def test_match_statement_case_bodies_probed():
    source = (
        "command = 'go'\n"
        "match command:\n"
        "    case 'stop':\n"
        "        action = 0\n"
        "    case 'go':\n"
        "        action = 1\n"
        "    case _:\n"
        "        action = -1\n"
        "print(action)\n"
    )
    snippet, inst, fired, error, out = _run(source)
    assert error is None
    assert out == "1\n"
    # units: command=, action=0, action=1, action=-1, print (match header unprobed)
    assert snippet.total_statements == 5
    assert fired == [1, 3, 5]


def test_crlf_sources_are_normalized():
    snippet = make_snippet("crlf", "a = 1\r\nb = a + 1\r\n")
    assert snippet.total_statements == 2
    inst = instrument(snippet)
    fired, error = exec_instrumented(inst.source)
    assert error is None and sorted(set(fired)) == [1, 2]


def test_comment_only_source_rejected():
    with pytest.raises(InstrumentError):
        make_snippet("empty", "# nothing here\n")


def test_unicode_identifiers_and_strings():
    source = "grüße = 'héllo wörld'\nprint(grüße.upper())\n"
    snippet, inst, fired, error, out = _run(source)
    assert error is None
    assert fired == [1, 2]


def test_starred_assignment_and_unpacking():
    source = "first, *rest = [1, 2, 3]\nprint(first + len(rest))\n"
    snippet, inst, fired, error, out = _run(source)
    assert error is None
    assert out == "3\n"


def test_conditional_expression_statement():
    source = "flag = False\nlabel = 'yes' if flag else 'no'\nprint(label)\n"
    snippet, inst, fired, error, out = _run(source)
    assert error is None
    assert out == "no\n"
    assert fired == [1, 2, 3]
