"""Probe insertion and program composition.

Every executable statement gets a probe call ``_probe_(id)`` that fires only
when the statement ran to completion, so a crashing statement never counts as
covered. Placement rules:

* simple statements: a probe on the following line at the same indentation;
* ``return``/``raise`` with a value: the value is evaluated into a reserved
  temporary, the probe fires, then the temporary is returned/raised (a probe
  after the statement would never run, a probe before would ignore crashes
  in the value expression);
* bare ``return``/``raise``/``break``/``continue``: probe immediately before
  (nothing in the statement itself can fail);
* ``if``/``elif``/``while``/``for``/``with``/``try`` headers: probe as the
  first statement of their body suite, so the header is credited once the
  suite is entered;
* ``except`` clauses: probe first in the handler suite (the handler line is
  a countable statement of its own);
* ``def``/``class``: probe after the whole block at the header's indentation,
  firing when the definition itself has executed;
* ``else:`` and ``finally:`` lines carry no probe of their own; ``match``
  headers are not probed (their case bodies are).

Statements joined by semicolons are probed inline so each one remains a
separate reporting unit. Probe ids are assigned 1..N in source order and key
every statement by its first source line.
"""

from __future__ import annotations

import ast
import re
from dataclasses import dataclass, field
from typing import Optional

from .model import Prefix, PrefixStatus, Snippet

PROBE_NAME = "_probe_"
PROBE_TEMP_PREFIX = "_pv_"
PROBE_RUNTIME_MODULE = "_probe_runtime"
PROBE_IMPORT_LINE = f"from {PROBE_RUNTIME_MODULE} import {PROBE_NAME}"

_RESERVED_PATTERN = re.compile(
    rf"\b({re.escape(PROBE_NAME)}|{re.escape(PROBE_TEMP_PREFIX)}\w*|{PROBE_RUNTIME_MODULE})\b"
)


class InstrumentError(ValueError):
    """The snippet cannot be instrumented."""


_SIMPLE = "simple"
_EXIT_VALUE = "exit_value"  # return/raise carrying an expression
_EXIT_BARE = "exit_bare"  # bare return/raise/break/continue
_HEADER = "header"  # probe goes first into the body suite
_HANDLER = "handler"  # except clause
_DEFINITION = "definition"  # def/class: probe after the block


@dataclass
class _Unit:
    probe_id: int
    node: ast.AST
    kind: str
    line: int  # first source line of the statement


@dataclass(frozen=True)
class InstrumentedSnippet:
    """Probe-bearing source plus the maps needed to interpret runs of it."""

    source: str
    source_map: dict[int, int]  # probe id -> original first line
    line_origins: tuple[int, ...]  # instrumented line number (1-based) -> original line
    original_source: str

    def original_line(self, instrumented_line: int) -> Optional[int]:
        if 1 <= instrumented_line <= len(self.line_origins):
            return self.line_origins[instrumented_line - 1]
        return None

    def first_instrumented_line(self, original_line: int) -> Optional[int]:
        for index, origin in enumerate(self.line_origins):
            if origin == original_line:
                return index + 1
        return None


@dataclass(frozen=True)
class ComposedProgram:
    """A prefix and an instrumented snippet joined into one runnable module."""

    text: str
    prelude_lines: int
    instrumented: InstrumentedSnippet

    def snippet_line_of(self, program_line: int) -> Optional[int]:
        if program_line <= self.prelude_lines:
            return None
        return self.instrumented.original_line(program_line - self.prelude_lines)

    def program_line_of(self, snippet_line: int) -> Optional[int]:
        inst_line = self.instrumented.first_instrumented_line(snippet_line)
        if inst_line is None:
            return None
        return inst_line + self.prelude_lines


def _classify(node: ast.stmt | ast.excepthandler) -> Optional[str]:
    if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
        return _DEFINITION
    if isinstance(node, (ast.Return, ast.Raise)):
        has_value = (node.value if isinstance(node, ast.Return) else node.exc) is not None
        return _EXIT_VALUE if has_value else _EXIT_BARE
    if isinstance(node, (ast.Break, ast.Continue)):
        return _EXIT_BARE
    if isinstance(node, (ast.If, ast.While, ast.For, ast.AsyncFor, ast.With, ast.AsyncWith)):
        return _HEADER
    if isinstance(node, ast.Try) or (hasattr(ast, "TryStar") and isinstance(node, ast.TryStar)):
        return _HEADER
    if isinstance(node, ast.ExceptHandler):
        return _HANDLER
    if hasattr(ast, "Match") and isinstance(node, ast.Match):
        return None  # match headers carry no probe; case bodies are probed
    return _SIMPLE


def _iter_units(body: list[ast.stmt], units: list[_Unit]) -> None:
    """Enumerate probe-bearing statements in source order."""
    for stmt in body:
        kind = _classify(stmt)
        if kind is not None:
            units.append(_Unit(0, stmt, kind, stmt.lineno))
        if isinstance(
            stmt, (ast.If, ast.While, ast.For, ast.AsyncFor, ast.With, ast.AsyncWith)
        ):
            _iter_units(stmt.body, units)
            if hasattr(stmt, "orelse"):
                _iter_units(stmt.orelse, units)
        elif isinstance(stmt, ast.Try) or (
            hasattr(ast, "TryStar") and isinstance(stmt, ast.TryStar)
        ):
            _iter_units(stmt.body, units)
            for handler in stmt.handlers:
                units.append(_Unit(0, handler, _HANDLER, handler.lineno))
                _iter_units(handler.body, units)
            _iter_units(stmt.orelse, units)
            _iter_units(stmt.finalbody, units)
        elif isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
            _iter_units(stmt.body, units)
        elif hasattr(ast, "Match") and isinstance(stmt, ast.Match):
            for case in stmt.cases:
                _iter_units(case.body, units)


def enumerate_units(source: str) -> list[tuple[int, int]]:
    """``(probe_id, first_line)`` for every executable statement of ``source``."""
    try:
        tree = ast.parse(source)
    except SyntaxError as error:
        raise InstrumentError(f"source does not parse: {error}") from error
    units: list[_Unit] = []
    _iter_units(tree.body, units)
    for index, unit in enumerate(units, start=1):
        unit.probe_id = index
    return [(unit.probe_id, unit.line) for unit in units]


def make_snippet(snippet_id: str, source: str) -> Snippet:
    """Admit a source text as a snippet, building its statement index."""
    source = source.replace("\r\n", "\n").replace("\r", "\n").rstrip("\n")
    index = enumerate_units(source)
    if not index:
        raise InstrumentError(f"snippet {snippet_id!r} has no executable statements")
    snippet = Snippet(
        id=snippet_id,
        source=source,
        statement_index=tuple(index),
        total_statements=len(index),
    )
    instrument(snippet)  # reject at admission anything the emitter cannot handle
    return snippet


class _Emitter:
    """Re-emits the source line by line, weaving probe calls in."""

    def __init__(self, source: str):
        self.src_lines = source.splitlines()
        self.out: list[str] = []
        self.origins: list[int] = []
        self.cursor = 1  # next original line (1-based) not yet copied
        self.next_probe = 1

    # -- low-level helpers -------------------------------------------------

    def _copy_through(self, last_line: int) -> None:
        while self.cursor <= last_line and self.cursor <= len(self.src_lines):
            self.out.append(self.src_lines[self.cursor - 1])
            self.origins.append(self.cursor)
            self.cursor += 1

    def _emit(self, text: str, origin: int) -> None:
        for piece in text.splitlines() or [""]:
            self.out.append(piece)
            self.origins.append(origin)

    def _indent_of_line(self, line: int) -> str:
        text = self.src_lines[line - 1]
        return text[: len(text) - len(text.lstrip())]

    def _indent_of(self, node: ast.stmt | ast.excepthandler) -> str:
        return self.src_lines[node.lineno - 1][: node.col_offset]

    def _segment(self, node: ast.AST) -> str:
        text = ast.get_source_segment("\n".join(self.src_lines), node)
        if text is None:
            raise InstrumentError(f"cannot extract source for node at line {node.lineno}")
        return text

    def _take_probe(self) -> int:
        probe = self.next_probe
        self.next_probe += 1
        return probe

    @staticmethod
    def _is_inline_body(owner_line_text: str, first: ast.stmt) -> bool:
        # a block body starts on its own line iff nothing but indentation
        # precedes it on that line
        return owner_line_text[: first.col_offset].strip() != ""

    # -- statement emission --------------------------------------------------

    def emit_body(self, body: list[ast.stmt], indent: Optional[str] = None) -> None:
        groups = self._semicolon_groups(body)
        for group in groups:
            if len(group) > 1:
                self._emit_chain(group, indent)
            else:
                self._emit_stmt(group[0], indent)

    @staticmethod
    def _semicolon_groups(body: list[ast.stmt]) -> list[list[ast.stmt]]:
        groups: list[list[ast.stmt]] = []
        for stmt in body:
            if groups and groups[-1][-1].end_lineno == stmt.lineno:
                groups[-1].append(stmt)
            else:
                groups.append([stmt])
        return groups

    def _emit_stmt(self, stmt: ast.stmt, indent: Optional[str]) -> None:
        if hasattr(ast, "Match") and isinstance(stmt, ast.Match):
            self._emit_match(stmt, indent)
            return
        kind = _classify(stmt)
        if kind == _DEFINITION:
            self._emit_definition(stmt, indent)
        elif kind == _HEADER:
            self._emit_compound(stmt, indent)
        else:
            self._emit_simple(stmt, kind or _SIMPLE, indent)

    def _emit_simple(self, stmt: ast.stmt, kind: str, indent: Optional[str]) -> None:
        probe = self._take_probe()
        own_indent = indent if indent is not None else self._indent_of(stmt)
        if indent is None:
            self._copy_through(stmt.lineno - 1)
        if kind == _EXIT_BARE:
            self._emit(f"{own_indent}{PROBE_NAME}({probe})", stmt.lineno)
            if indent is None:
                self._copy_through(stmt.end_lineno)
            else:
                self._emit(f"{own_indent}{self._segment(stmt)}", stmt.lineno)
        elif kind == _EXIT_VALUE:
            for piece in self._exit_rewrite(stmt, probe, own_indent):
                self._emit(piece, stmt.lineno)
            if indent is None:
                self.cursor = stmt.end_lineno + 1
        else:
            if indent is None:
                self._copy_through(stmt.end_lineno)
            else:
                self._emit(f"{own_indent}{self._segment(stmt)}", stmt.lineno)
            self._emit(f"{own_indent}{PROBE_NAME}({probe})", stmt.lineno)

    def _exit_rewrite(self, stmt: ast.stmt, probe: int, indent: str) -> list[str]:
        temp = f"{PROBE_TEMP_PREFIX}{probe}"
        if isinstance(stmt, ast.Return):
            value = self._segment(stmt.value)
            return [
                f"{indent}{temp} = ({value})",
                f"{indent}{PROBE_NAME}({probe})",
                f"{indent}return {temp}",
            ]
        assert isinstance(stmt, ast.Raise)
        exc = self._segment(stmt.exc)
        if stmt.cause is not None:
            cause = self._segment(stmt.cause)
            return [
                f"{indent}{temp} = ({exc})",
                f"{indent}{temp}c = ({cause})",
                f"{indent}{PROBE_NAME}({probe})",
                f"{indent}raise {temp} from {temp}c",
            ]
        return [
            f"{indent}{temp} = ({exc})",
            f"{indent}{PROBE_NAME}({probe})",
            f"{indent}raise {temp}",
        ]

    def _emit_chain(self, group: list[ast.stmt], indent: Optional[str]) -> None:
        """Semicolon-joined simple statements: probes are woven inline."""
        first = group[0]
        own_indent = indent if indent is not None else self._indent_of(first)
        if indent is None:
            self._copy_through(first.lineno - 1)
        parts: list[str] = []
        for stmt in group:
            kind = _classify(stmt)
            probe = self._take_probe()
            segment = self._segment(stmt)
            if kind == _EXIT_BARE:
                parts.append(f"{PROBE_NAME}({probe}); {segment}")
            elif kind == _EXIT_VALUE:
                temp = f"{PROBE_TEMP_PREFIX}{probe}"
                if isinstance(stmt, ast.Return):
                    parts.append(
                        f"{temp} = ({self._segment(stmt.value)}); "
                        f"{PROBE_NAME}({probe}); return {temp}"
                    )
                else:
                    assert isinstance(stmt, ast.Raise) and stmt.exc is not None
                    parts.append(
                        f"{temp} = ({self._segment(stmt.exc)}); "
                        f"{PROBE_NAME}({probe}); raise {temp}"
                    )
            elif kind == _SIMPLE:
                parts.append(f"{segment}; {PROBE_NAME}({probe})")
            else:
                raise InstrumentError(
                    f"compound statement inside a semicolon chain at line {stmt.lineno}"
                )
        self._emit(own_indent + "; ".join(parts), first.lineno)
        if indent is None:
            self.cursor = max(stmt.end_lineno for stmt in group) + 1

    def _header_then_body(
        self, stmt: ast.stmt | ast.excepthandler, body: list[ast.stmt], indent: Optional[str]
    ) -> tuple[str, bool]:
        """Emit the header line(s); return (body indent, was_inline)."""
        first = body[0]
        own_line_text = self.src_lines[first.lineno - 1]
        inline = self._is_inline_body(own_line_text, first)
        own_indent = indent if indent is not None else self._indent_of(stmt)
        if not inline:
            if indent is None:
                self._copy_through(first.lineno - 1)
                body_indent = self._indent_of_line(first.lineno)
            else:
                header = self._header_text(stmt, body)
                self._emit(f"{own_indent}{header}", stmt.lineno)
                body_indent = own_indent + "    "
            return body_indent, False
        header = self._header_text(stmt, body)
        self._emit(f"{own_indent}{header}", stmt.lineno)
        return own_indent + "    ", True

    def _header_text(self, stmt: ast.stmt | ast.excepthandler, body: list[ast.stmt]) -> str:
        """Reconstruct the header (`if x:` etc.) up to and including the colon."""
        first = body[0]
        start_line, start_col = stmt.lineno, stmt.col_offset
        lines = self.src_lines[start_line - 1 : first.lineno]
        if not lines:
            raise InstrumentError(f"cannot locate header at line {stmt.lineno}")
        lines = list(lines)
        lines[-1] = lines[-1][: first.col_offset]
        lines[0] = lines[0][start_col:]
        header = "\n".join(lines).rstrip()
        if not header.endswith(":"):
            colon = header.rfind(":")
            if colon == -1:
                raise InstrumentError(f"no colon found for header at line {stmt.lineno}")
            header = header[: colon + 1]
        return header

    def _emit_compound(self, stmt: ast.stmt, indent: Optional[str]) -> None:
        probe = self._take_probe()
        body_indent, inline = self._header_then_body(stmt, stmt.body, indent)
        self._emit(f"{body_indent}{PROBE_NAME}({probe})", stmt.lineno)
        self.emit_body(stmt.body, body_indent if inline or indent is not None else None)
        if inline and indent is None:
            self.cursor = max(s.end_lineno for s in stmt.body) + 1
        is_try = isinstance(stmt, ast.Try) or (
            hasattr(ast, "TryStar") and isinstance(stmt, ast.TryStar)
        )
        if is_try:
            for handler in stmt.handlers:
                self._emit_handler(handler, indent)
        orelse = getattr(stmt, "orelse", [])
        if orelse:
            self._emit_suite_continuation(stmt, orelse, indent, "else")
        finalbody = getattr(stmt, "finalbody", [])
        if finalbody:
            self._emit_suite_continuation(stmt, finalbody, indent, "finally")

    def _emit_handler(self, handler: ast.excepthandler, indent: Optional[str]) -> None:
        probe = self._take_probe()
        body_indent, inline = self._header_then_body(handler, handler.body, indent)
        self._emit(f"{body_indent}{PROBE_NAME}({probe})", handler.lineno)
        self.emit_body(handler.body, body_indent if inline or indent is not None else None)
        if inline and indent is None:
            self.cursor = max(s.end_lineno for s in handler.body) + 1

    def _emit_suite_continuation(
        self, owner: ast.stmt, suite: list[ast.stmt], indent: Optional[str], keyword: str
    ) -> None:
        # elif arrives as a nested If whose own line starts with "elif"
        if (
            keyword == "else"
            and len(suite) == 1
            and isinstance(suite[0], ast.If)
            and self.src_lines[suite[0].lineno - 1].lstrip().startswith("elif")
        ):
            self._emit_stmt(suite[0], indent)
            return
        first = suite[0]
        own_line_text = self.src_lines[first.lineno - 1]
        inline = self._is_inline_body(own_line_text, first)
        own_indent = indent if indent is not None else self._indent_of(owner)
        if not inline:
            if indent is None:
                self._copy_through(first.lineno - 1)
                self.emit_body(suite, None)
            else:
                self._emit(f"{own_indent}{keyword}:", first.lineno)
                self.emit_body(suite, own_indent + "    ")
            return
        self._emit(f"{own_indent}{keyword}:", first.lineno)
        self.emit_body(suite, own_indent + "    ")
        if indent is None:
            self.cursor = max(s.end_lineno for s in suite) + 1

    def _emit_definition(self, stmt: ast.stmt, indent: Optional[str]) -> None:
        probe = self._take_probe()
        own_indent = indent if indent is not None else self._indent_of(stmt)
        body_indent, inline = self._header_then_body(stmt, stmt.body, indent)
        self.emit_body(stmt.body, body_indent if inline or indent is not None else None)
        if inline and indent is None:
            self.cursor = max(s.end_lineno for s in stmt.body) + 1
        self._emit(f"{own_indent}{PROBE_NAME}({probe})", stmt.lineno)

    def _emit_match(self, stmt: ast.stmt, indent: Optional[str]) -> None:
        if indent is not None:
            raise InstrumentError(
                f"match statement inside an inline suite at line {stmt.lineno}"
            )
        first_case = stmt.cases[0]
        first_pattern_line = first_case.pattern.lineno
        self._copy_through(first_pattern_line - 1)
        for case in stmt.cases:
            body_first = case.body[0]
            own_line_text = self.src_lines[body_first.lineno - 1]
            if self._is_inline_body(own_line_text, body_first):
                raise InstrumentError(
                    f"inline case body at line {body_first.lineno} is not supported"
                )
            self._copy_through(body_first.lineno - 1)
            self.emit_body(case.body, None)


def instrument(snippet: Snippet) -> InstrumentedSnippet:
    """Insert a probe after every executable statement of the snippet."""
    source = snippet.source
    if _RESERVED_PATTERN.search(source):
        raise InstrumentError(
            f"snippet {snippet.id!r} uses a reserved instrumentation name "
            f"({PROBE_NAME} / {PROBE_TEMP_PREFIX}* / {PROBE_RUNTIME_MODULE})"
        )
    try:
        tree = ast.parse(source)
    except SyntaxError as error:
        raise InstrumentError(f"source does not parse: {error}") from error

    emitter = _Emitter(source)
    emitter.emit_body(tree.body, None)
    emitter._copy_through(len(emitter.src_lines))

    instrumented = "\n".join(emitter.out)
    try:
        ast.parse(instrumented)
    except SyntaxError as error:  # defensive: emission bug, not user error
        raise InstrumentError(
            f"instrumented source does not parse ({error}); original preserved"
        ) from error

    source_map = {probe_id: line for probe_id, line in snippet.statement_index}
    produced = emitter.next_probe - 1
    if produced != snippet.total_statements:
        raise InstrumentError(
            f"probe count mismatch: emitted {produced}, expected {snippet.total_statements}"
        )
    return InstrumentedSnippet(
        source=instrumented,
        source_map=source_map,
        line_origins=tuple(emitter.origins),
        original_source=source,
    )


def compose(prefix: Prefix, instrumented: InstrumentedSnippet) -> ComposedProgram:
    """Probe-runtime import, prefix imports, initializations, then the snippet."""
    if prefix.status is not PrefixStatus.POST_PROCESSED:
        raise InstrumentError(
            f"prefix {prefix.id!r} must be post-processed before composition"
        )
    prelude = [PROBE_IMPORT_LINE]
    for statement in (*prefix.imports, *prefix.initializations):
        prelude.extend(statement.splitlines() or [""])
    text = "\n".join((*prelude, instrumented.source))
    return ComposedProgram(
        text=text,
        prelude_lines=len(prelude),
        instrumented=instrumented,
    )


def strip_probes(instrumented_source: str) -> str:
    """Best-effort inverse of instrumentation for audit and tests.

    Removes probe lines and inline probe calls and unwinds the reserved
    temporary rewrites of return/raise statements. Semicolon chains and
    inline suites come back in normalized (split/indented) form.
    """
    lines = instrumented_source.splitlines()
    out: list[str] = []
    probe_line = re.compile(rf"^\s*{re.escape(PROBE_NAME)}\(\d+\)\s*$")
    inline_probe = re.compile(rf";\s*{re.escape(PROBE_NAME)}\(\d+\)")
    assign_temp = re.compile(
        rf"^(\s*){re.escape(PROBE_TEMP_PREFIX)}(\d+)(c?) = \((.*)\)\s*$", re.DOTALL
    )
    index = 0
    while index < len(lines):
        line = lines[index]
        if line == PROBE_IMPORT_LINE:
            index += 1
            continue
        if probe_line.match(line):
            index += 1
            continue
        match = assign_temp.match(line)
        if match:
            indent, probe_id, values = match.group(1), match.group(2), [match.group(4)]
            index += 1
            cause_match = (
                assign_temp.match(lines[index]) if index < len(lines) else None
            )
            if cause_match and cause_match.group(2) == probe_id and cause_match.group(3) == "c":
                values.append(cause_match.group(4))
                index += 1
            if index < len(lines) and probe_line.match(lines[index]):
                index += 1
            if index < len(lines):
                final = lines[index].strip()
                if final.startswith("return "):
                    out.append(f"{indent}return {values[0]}")
                elif final.startswith("raise ") and len(values) == 2:
                    out.append(f"{indent}raise {values[0]} from {values[1]}")
                elif final.startswith("raise "):
                    out.append(f"{indent}raise {values[0]}")
                index += 1
            continue
        out.append(inline_probe.sub("", line))
        index += 1
    return "\n".join(out)
