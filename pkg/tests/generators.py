"""Random snippet generators and independent oracles used by the tests.

Two generators live here: straight-line snippets exercising name resolution
(checked against a dynamic NameError oracle that runs the code with recording
sentinels), and fully-defined structured programs exercising instrumentation
(checked against a settrace-based statement-completion oracle). Both are
deterministic for a given seed.
"""

from __future__ import annotations

import ast
import contextlib
import io
import random
import re
import sys
from dataclasses import dataclass


# ---------------------------------------------------------------------------
# Straight-line snippets + dynamic NameError oracle
# ---------------------------------------------------------------------------

_NAME_POOL = ["alpha", "beta", "gamma", "delta", "omega", "probe_x", "val", "thing"]
_ATTR_POOL = ["size", "kind", "total", "label"]


def gen_straight_line_snippet(rng: random.Random) -> str:
    """A snippet of assignments and expressions, no control flow."""
    defined: list[str] = []
    lines: list[str] = []

    def leaf() -> str:
        roll = rng.random()
        if roll < 0.3:
            return str(rng.randint(0, 9))
        name = rng.choice(_NAME_POOL)
        form = rng.random()
        # calls and attribute reads stay on never-assigned names so the
        # oracle's sentinel (not an int) receives them
        if form < 0.5 or name in defined:
            return name
        if form < 0.75:
            return f"{name}.{rng.choice(_ATTR_POOL)}"
        args = ", ".join(leaf() for _ in range(rng.randint(0, 2)))
        return f"{name}({args})"

    def expression() -> str:
        parts = [leaf() for _ in range(rng.randint(1, 3))]
        return " + ".join(parts)

    for _ in range(rng.randint(2, 6)):
        if rng.random() < 0.75 or not defined:
            target = rng.choice(_NAME_POOL)
            lines.append(f"{target} = {expression()}")
            defined.append(target)
        else:
            lines.append(expression())
    return "\n".join(lines)


class _Sentinel:
    """Absorbs the operations the straight-line grammar can produce."""

    def __getattr__(self, name):
        return _Sentinel()

    def __call__(self, *args, **kwargs):
        return _Sentinel()

    def __add__(self, other):
        return _Sentinel()

    def __radd__(self, other):
        return _Sentinel()


_NAME_ERROR_RE = re.compile(r"name '(\w+)' is not defined")


def dynamic_undefined_names(source: str, max_rounds: int = 50) -> set[str]:
    """Run the snippet repeatedly, binding a sentinel per NameError seen.

    Returns the set of names whose absence stopped execution; the oracle for
    the analyzer on straight-line code.
    """
    discovered: set[str] = set()
    for _ in range(max_rounds):
        namespace = {name: _Sentinel() for name in discovered}
        try:
            exec(compile(source, "<oracle>", "exec"), namespace)
            return discovered
        except NameError as error:
            match = _NAME_ERROR_RE.search(str(error))
            if match is None or match.group(1) in discovered:
                raise
            discovered.add(match.group(1))
    raise AssertionError("oracle did not converge")


# ---------------------------------------------------------------------------
# Fully-defined structured programs
# ---------------------------------------------------------------------------


@dataclass
class GeneratedProgram:
    source: str
    may_raise: bool


def gen_defined_program(rng: random.Random, allow_raise: bool = True) -> GeneratedProgram:
    """A runnable program using ints, strings, branches, loops, defs, try."""
    lines: list[str] = []
    int_vars: list[str] = []
    str_vars: list[str] = []
    counter = [0]

    def fresh(prefix: str) -> str:
        counter[0] += 1
        return f"{prefix}{counter[0]}"

    def int_expr() -> str:
        choices = [str(rng.randint(0, 9))]
        choices.extend(int_vars[-3:])
        parts = [rng.choice(choices) for _ in range(rng.randint(1, 3))]
        return " + ".join(parts)

    def emit_assign(indent: str) -> None:
        name = fresh("num")
        lines.append(f"{indent}{name} = {int_expr()}")
        int_vars.append(name)

    def emit_str(indent: str) -> None:
        name = fresh("text")
        base = rng.choice(["'ab'", "'xyz'", "'@'"])
        if str_vars and rng.random() < 0.5:
            base = f"{rng.choice(str_vars)} + {base}"
        lines.append(f"{indent}{name} = {base}")
        str_vars.append(name)

    def emit_print(indent: str) -> None:
        pool = int_vars + str_vars
        if pool:
            lines.append(f"{indent}print({rng.choice(pool)})")
        else:
            lines.append(f"{indent}print('start')")

    def emit_if(indent: str) -> None:
        emit_assign(indent)
        condition_var = int_vars[-1]
        lines.append(f"{indent}if {condition_var} % 2 == 0:")
        emit_assign(indent + "    ")
        if rng.random() < 0.6:
            lines.append(f"{indent}else:")
            emit_assign(indent + "    ")

    def emit_for(indent: str) -> None:
        total = fresh("sum")
        lines.append(f"{indent}{total} = 0")
        int_vars.append(total)
        loop_var = fresh("i")
        lines.append(f"{indent}for {loop_var} in range({rng.randint(0, 4)}):")
        lines.append(f"{indent}    {total} = {total} + {loop_var}")

    def emit_while(indent: str) -> None:
        counter_var = fresh("step")
        lines.append(f"{indent}{counter_var} = 0")
        int_vars.append(counter_var)
        bound = rng.randint(1, 3)
        lines.append(f"{indent}while {counter_var} < {bound}:")
        lines.append(f"{indent}    {counter_var} = {counter_var} + 1")

    def emit_def(indent: str) -> None:
        func = fresh("helper")
        lines.append(f"{indent}def {func}(value):")
        if rng.random() < 0.5:
            lines.append(f"{indent}    if value > 1:")
            lines.append(f"{indent}        return value + 10")
            lines.append(f"{indent}    return value")
        else:
            lines.append(f"{indent}    return value * 2")
        result = fresh("num")
        lines.append(f"{indent}{result} = {func}({rng.randint(0, 5)})")
        int_vars.append(result)

    def emit_try(indent: str) -> None:
        lines.append(f"{indent}try:")
        if rng.random() < 0.5:
            lines.append(f"{indent}    risky = 1 // 0")
        else:
            emit_assign(indent + "    ")
        lines.append(f"{indent}except ZeroDivisionError:")
        emit_assign(indent + "    ")

    emitters = [
        emit_assign,
        emit_assign,
        emit_str,
        emit_print,
        emit_if,
        emit_for,
        emit_while,
        emit_def,
        emit_try,
    ]
    for _ in range(rng.randint(3, 7)):
        rng.choice(emitters)("")

    may_raise = False
    if allow_raise and rng.random() < 0.3:
        may_raise = True
        if rng.random() < 0.5:
            lines.append("boom = 1 // 0")
        else:
            lines.append("raise ValueError('generated failure')")
        emit_assign("")  # unreachable tail
    return GeneratedProgram("\n".join(lines), may_raise)


# ---------------------------------------------------------------------------
# Tracer oracle: which statements completed, from tracing the ORIGINAL code
# ---------------------------------------------------------------------------


@dataclass
class TraceResult:
    completed_units: set[int]
    stdout: str
    error: BaseException | None


def _unit_entry_lines(source: str) -> dict[int, tuple[int, bool]]:
    """probe id -> (credit line, exempt from crash-site exclusion).

    Suite headers, handlers, and definitions are credited purely by whether
    their suite was entered (or the definition executed); a crash somewhere
    inside their span does not retract the credit. Simple statements are
    credited by their own line and lose the credit when they are the crash
    site.
    """
    from prefixer.instrument import enumerate_units

    units = enumerate_units(source)
    tree = ast.parse(source)
    entry: dict[int, tuple[int, bool]] = {}
    header_like: dict[int, int] = {}  # header/handler first line -> body first line
    definition_lines: set[int] = set()

    def walk(body: list[ast.stmt]) -> None:
        for stmt in body:
            if isinstance(stmt, (ast.If, ast.While, ast.For, ast.AsyncFor, ast.With, ast.AsyncWith)):
                header_like[stmt.lineno] = stmt.body[0].lineno
                walk(stmt.body)
                walk(stmt.orelse)
            elif isinstance(stmt, ast.Try):
                header_like[stmt.lineno] = stmt.body[0].lineno
                walk(stmt.body)
                for handler in stmt.handlers:
                    header_like[handler.lineno] = handler.body[0].lineno
                    walk(handler.body)
                walk(stmt.orelse)
                walk(stmt.finalbody)
            elif isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
                definition_lines.add(stmt.lineno)
                walk(stmt.body)

    walk(tree.body)
    for probe_id, line in units:
        if line in header_like:
            entry[probe_id] = (header_like[line], True)
        elif line in definition_lines:
            entry[probe_id] = (line, True)
        else:
            entry[probe_id] = (line, False)
    return entry


def _statement_spans_by_line(source: str) -> dict[int, tuple[int, int]]:
    """Maps every unit first-line to its statement span (first, last line)."""
    spans: dict[int, tuple[int, int]] = {}
    for node in ast.walk(ast.parse(source)):
        if isinstance(node, (ast.stmt, ast.excepthandler)):
            spans[node.lineno] = (node.lineno, node.end_lineno or node.lineno)
    return spans


def trace_completed_units(source: str) -> TraceResult:
    """Execute the ORIGINAL source under settrace; derive completed statements.

    A simple statement is credited when its line was visited and it is not on
    the failure path; headers and handlers are credited when their suite was
    entered; definitions when their header line executed. ``raise`` statements
    built by the generators carry safe expressions, so a visited raise counts
    as completed even though it terminates the program.
    """
    from prefixer.instrument import enumerate_units

    filename = "<traced>"
    units = enumerate_units(source)
    entry_lines = _unit_entry_lines(source)
    spans = _statement_spans_by_line(source)
    tree = ast.parse(source)
    raise_lines = {
        node.lineno for node in ast.walk(tree) if isinstance(node, ast.Raise)
    }

    visited: set[int] = set()
    raised_at: set[int] = set()

    def tracer(frame, event, arg):
        if frame.f_code.co_filename == filename:
            if event == "line":
                visited.add(frame.f_lineno)
            elif event == "exception":
                # fires in every frame the exception passes through, so call
                # sites of failing statements are discredited as well
                raised_at.add(frame.f_lineno)
        return tracer

    compiled = compile(source, filename, "exec")
    buffer = io.StringIO()
    error: BaseException | None = None
    namespace: dict = {"__name__": "__main__"}
    sys.settrace(tracer)
    try:
        with contextlib.redirect_stdout(buffer):
            exec(compiled, namespace)
    except BaseException as caught:  # noqa: BLE001
        error = caught
    finally:
        sys.settrace(None)

    failed_lines = set(raised_at)
    if error is not None:
        tb = error.__traceback__
        while tb is not None:
            if tb.tb_frame.f_code.co_filename == filename:
                failed_lines.add(tb.tb_lineno)
            tb = tb.tb_next

    completed: set[int] = set()
    for probe_id, first_line in units:
        credit_line, crash_exempt = entry_lines[probe_id]
        if credit_line not in visited:
            continue
        if not crash_exempt:
            span = spans.get(first_line, (first_line, first_line))
            crashed_here = any(span[0] <= line <= span[1] for line in failed_lines)
            if crashed_here and first_line not in raise_lines:
                continue
        completed.add(probe_id)
    return TraceResult(completed_units=completed, stdout=buffer.getvalue(), error=error)
