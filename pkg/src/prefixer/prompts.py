"""Prompt construction, uncovered-line annotation, and response parsing.

Three prompt shapes drive the search: the initial request built from the
statically detected undefined names, the error-feedback request that extends
the conversation which produced a failing prefix, and the coverage request
built fresh around a snippet annotated with ``# uncovered`` marks.

Responses must be strict JSON with exactly the two keys ``imports`` and
``initialization`` (arrays of strings). One surrounding markdown fence and
leading/trailing whitespace are tolerated; anything else fails parsing and
the sample is skipped.
"""

from __future__ import annotations

import ast
import json
import re
from dataclasses import dataclass
from typing import Literal, Optional

from .analysis import UndefinedRefs
from .model import CoverageSet, ExceptionInfo, ExecutionOutcome, Snippet

Role = Literal["system", "user", "assistant"]

SYSTEM_MESSAGE = (
    "You are an expert Python developer. You make incomplete Python code "
    "snippets runnable by providing short code prefixes that define whatever "
    "the snippet is missing."
)

RESPONSE_SPEC = '''Respond strictly with JSON. The JSON should be compatible with the TypeScript type "Response":

```ts
interface Response {
  // Python import statements, one string per import
  imports: string[];

  // Python code to initialize undefined variables, one string per variable
  initialization: string[];
}
```'''

INSTRUCTION_STEP1 = (
    "Provide self-contained and concrete Python values to initialize the "
    "undefined variables in the code snippet."
)
PROBLEM_STEP2 = (
    "When trying to execute the code snippet with the provided imports and "
    "initialization, the following error happens:"
)
INSTRUCTION_STEP2 = (
    "Provide a fixed version of the imports and initialization to solve the "
    "error and make the code snippet executable."
)
PROBLEM_STEP3 = (
    "When trying to execute the code snippet with the provided imports and "
    'initialization, the lines commented with "uncovered" are not executed.'
)
INSTRUCTION_STEP3 = (
    "Provide a modified version of the imports and initialization to execute "
    "one of the uncovered paths in the code snippet."
)

UNCOVERED_MARK = "# uncovered"

SNIPPET_FENCE_BEGIN = "# begin code snippet"
SNIPPET_FENCE_END = "# end code snippet"
VARIABLES_FENCE_BEGIN = "# begin undefined variables"
VARIABLES_FENCE_END = "# end undefined variables"
MEMBERS_FENCE_BEGIN = "# begin undefined attributes and methods"
MEMBERS_FENCE_END = "# end undefined attributes and methods"
ERROR_FENCE_BEGIN = "# begin error message"
ERROR_FENCE_END = "# end error message"


class ResponseParseError(ValueError):
    """The generator's reply is not a valid response payload."""


@dataclass(frozen=True)
class Message:
    role: Role
    text: str


@dataclass(frozen=True)
class Conversation:
    messages: tuple[Message, ...] = ()

    def add(self, role: Role, text: str) -> "Conversation":
        return Conversation(self.messages + (Message(role, text),))

    def last_text(self) -> str:
        return self.messages[-1].text if self.messages else ""

    def __len__(self) -> int:
        return len(self.messages)


@dataclass(frozen=True)
class GeneratorResponse:
    """The parsed payload of one generator sample."""

    imports: tuple[str, ...] = ()
    initialization: tuple[str, ...] = ()

    @property
    def is_empty(self) -> bool:
        return not self.imports and not self.initialization


def _fenced(begin: str, body_lines: list[str], end: str) -> str:
    return "\n".join([begin, *body_lines, end])


def gen_prompt1(snippet: Snippet, refs: UndefinedRefs) -> Conversation:
    """Initial request: instruction, snippet, name blocks, response spec."""
    blocks = [
        INSTRUCTION_STEP1,
        _fenced(SNIPPET_FENCE_BEGIN, snippet.source.splitlines(), SNIPPET_FENCE_END),
        _fenced(VARIABLES_FENCE_BEGIN, list(refs.variables), VARIABLES_FENCE_END),
        _fenced(MEMBERS_FENCE_BEGIN, list(refs.members), MEMBERS_FENCE_END),
        RESPONSE_SPEC,
    ]
    return Conversation((Message("system", SYSTEM_MESSAGE), Message("user", "\n\n".join(blocks))))


def format_error_block(snippet: Snippet, exception: ExceptionInfo) -> str:
    """The error block: location, offending source line, and `Type: message`."""
    lines = [ERROR_FENCE_BEGIN]
    if exception.snippet_line is not None:
        source_lines = snippet.source.splitlines()
        offending = (
            source_lines[exception.snippet_line - 1]
            if 1 <= exception.snippet_line <= len(source_lines)
            else ""
        )
        lines.append(f"Execution error at line {exception.snippet_line}:")
        lines.append(offending)
    else:
        lines.append("Execution error:")
    lines.append(f"{exception.type_name}: {exception.message}")
    lines.append(ERROR_FENCE_END)
    return "\n".join(lines)


def gen_prompt2(
    conversation: Conversation, snippet: Snippet, outcome: ExecutionOutcome
) -> Conversation:
    """Error-feedback request appended to the conversation that failed."""
    if outcome.exception is None:
        raise ValueError("error guidance requires an execution outcome with an exception")
    blocks = [
        PROBLEM_STEP2,
        format_error_block(snippet, outcome.exception),
        INSTRUCTION_STEP2,
        RESPONSE_SPEC,
    ]
    return conversation.add("user", "\n\n".join(blocks))


def annotate_uncovered(snippet: Snippet, covered: CoverageSet) -> str:
    """Append the uncovered mark to every line owning an unfired probe."""
    if not covered.fired <= snippet.probe_ids:
        raise ValueError("coverage set does not belong to this snippet")
    uncovered_lines = {
        line for probe_id, line in snippet.statement_index if probe_id not in covered.fired
    }
    if not uncovered_lines:
        return snippet.source
    continuation_targets = _continuation_safe_lines(snippet, uncovered_lines)
    out = []
    for number, text in enumerate(snippet.source.splitlines(), start=1):
        if number in continuation_targets:
            out.append(f"{text} {UNCOVERED_MARK}")
        else:
            out.append(text)
    return "\n".join(out)


def _continuation_safe_lines(snippet: Snippet, lines: set[int]) -> set[int]:
    """Shift marks off backslash-continued lines onto their statements' ends."""
    source_lines = snippet.source.splitlines()
    needs_shift = [line for line in lines if source_lines[line - 1].rstrip().endswith("\\")]
    if not needs_shift:
        return lines
    ends: dict[int, int] = {}
    for node in ast.walk(ast.parse(snippet.source)):
        if isinstance(node, ast.stmt):
            ends[node.lineno] = node.end_lineno or node.lineno
    shifted = set(lines)
    for line in needs_shift:
        shifted.discard(line)
        shifted.add(ends.get(line, line))
    return shifted


def gen_prompt3(annotated_snippet: str) -> Conversation:
    """Coverage request: fresh conversation around the annotated snippet."""
    blocks = [
        PROBLEM_STEP3,
        _fenced(SNIPPET_FENCE_BEGIN, annotated_snippet.splitlines(), SNIPPET_FENCE_END),
        INSTRUCTION_STEP3,
        RESPONSE_SPEC,
    ]
    return Conversation((Message("system", SYSTEM_MESSAGE), Message("user", "\n\n".join(blocks))))


_FENCE_RE = re.compile(r"\A```[a-zA-Z0-9_-]*\n(.*)\n```\Z", re.DOTALL)


def parse_response(raw: str) -> GeneratorResponse:
    """Strict parse of a generator reply; one fence strip and trim allowed."""
    text = raw.strip()
    fence = _FENCE_RE.match(text)
    if fence:
        text = fence.group(1).strip()
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as error:
        raise ResponseParseError(f"not valid JSON: {error}") from error
    if not isinstance(payload, dict) or set(payload) != {"imports", "initialization"}:
        raise ResponseParseError(
            "payload must be an object with exactly the keys 'imports' and 'initialization'"
        )
    for key in ("imports", "initialization"):
        value = payload[key]
        if not isinstance(value, list) or not all(isinstance(item, str) for item in value):
            raise ResponseParseError(f"{key!r} must be an array of strings")
    return GeneratorResponse(
        imports=tuple(payload["imports"]),
        initialization=tuple(payload["initialization"]),
    )


def serialize_response(response: GeneratorResponse) -> str:
    return json.dumps(
        {"imports": list(response.imports), "initialization": list(response.initialization)},
        indent=2,
    )


def extract_snippet_block(conversation: Conversation) -> Optional[str]:
    """The most recent snippet block in the conversation, uncovered marks removed."""
    pattern = re.compile(
        re.escape(SNIPPET_FENCE_BEGIN) + r"\n(.*?)\n" + re.escape(SNIPPET_FENCE_END),
        re.DOTALL,
    )
    for message in reversed(conversation.messages):
        found = pattern.search(message.text)
        if found:
            body = found.group(1)
            cleaned = [
                line[: -len(UNCOVERED_MARK) - 1] if line.endswith(f" {UNCOVERED_MARK}") else line
                for line in body.splitlines()
            ]
            return "\n".join(cleaned)
    return None
