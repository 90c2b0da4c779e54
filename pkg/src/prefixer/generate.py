"""Prefix candidate generation: remote LLM client plus an offline heuristic.

Both generators implement the same surface: they take a conversation and a
sample count and return a batch of raw texts with their parsed payloads
(parse failures keep the raw text, with no parsed value). The search layer
never knows which one it is talking to.

The heuristic generator is deterministic: it re-derives the undefined names
from the snippet block embedded in the prompt and assigns each one a value
from a fixed family table, cycling families with the sample index so that a
batch carries diverse candidates. Names used as callables become
argument-absorbing lambdas; names with attribute accesses become namespace
stubs with those attributes pre-set.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

from . import analysis
from .prompts import Conversation, GeneratorResponse, ResponseParseError
from .prompts import extract_snippet_block, parse_response, serialize_response


class GeneratorUnavailable(RuntimeError):
    """The generator cannot produce samples (transport failure after retries)."""


@dataclass(frozen=True)
class GeneratorRequest:
    conversation: Conversation
    samples: int

    def __post_init__(self) -> None:
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if not self.conversation.messages:
            raise ValueError("conversation must not be empty")


@dataclass(frozen=True)
class GeneratorSample:
    raw_text: str
    parsed: Optional[GeneratorResponse] = None


@dataclass(frozen=True)
class GeneratorBatch:
    responses: tuple[GeneratorSample, ...] = ()

    def parsed_samples(self) -> tuple[tuple[str, GeneratorResponse], ...]:
        return tuple(
            (sample.raw_text, sample.parsed)
            for sample in self.responses
            if sample.parsed is not None
        )

    def __len__(self) -> int:
        return len(self.responses)


class Generator(Protocol):
    def generate(self, request: GeneratorRequest) -> GeneratorBatch: ...


def _parse_sample(raw: str) -> GeneratorSample:
    try:
        return GeneratorSample(raw_text=raw, parsed=parse_response(raw))
    except ResponseParseError:
        return GeneratorSample(raw_text=raw, parsed=None)


# ---------------------------------------------------------------------------
# Heuristic generator
# ---------------------------------------------------------------------------

# value families cycled by the variant index
_FAMILY_STUB = 0
_FAMILY_EMPTY_STRING = 1
_FAMILY_EMAIL_STRING = 2
_FAMILY_SMALL_INT = 3
_FAMILY_EMPTY_LIST = 4
_FAMILY_NONE = 5
_FAMILY_CALLABLE = 6
_FAMILY_COUNT = 7

_PRIMITIVE_LITERALS: dict[int, Callable[[random.Random], str]] = {
    _FAMILY_EMPTY_STRING: lambda rng: "''",
    _FAMILY_EMAIL_STRING: lambda rng: "'a@b.c'",
    _FAMILY_SMALL_INT: lambda rng: str(rng.choice((0, 1))),
    _FAMILY_EMPTY_LIST: lambda rng: "[]",
    _FAMILY_NONE: lambda rng: "None",
}


def _rng_for(seed: int, variant: int, name: str) -> random.Random:
    digest = hashlib.sha256(f"{seed}:{variant}:{name}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def _value_literal(family: int, rng: random.Random, needs_import: list[bool]) -> str:
    if family in _PRIMITIVE_LITERALS:
        return _PRIMITIVE_LITERALS[family](rng)
    if family == _FAMILY_CALLABLE:
        needs_import[0] = True
        return "lambda *args, **kwargs: types.SimpleNamespace()"
    needs_import[0] = True
    return "types.SimpleNamespace()"


_FAMILY_SAMPLE_VALUES: dict[int, object] = {
    _FAMILY_EMPTY_STRING: "",
    _FAMILY_EMAIL_STRING: "a@b.c",
    _FAMILY_SMALL_INT: 0,
    _FAMILY_EMPTY_LIST: [],
    _FAMILY_NONE: None,
}


def _primitive_satisfies(family: int, attrs: list[str]) -> bool:
    if family not in _FAMILY_SAMPLE_VALUES:
        return False
    sample = _FAMILY_SAMPLE_VALUES[family]
    return all(hasattr(sample, attr) for attr in attrs)


def heuristic_generate(
    refs: analysis.UndefinedRefs, seed: int, variant: int
) -> GeneratorResponse:
    """Deterministic rule-table assignment of values to undefined names.

    ``variant`` rotates the value family used for plain names; called names
    become argument-absorbing callables whose return value rotates instead.
    A name with attribute accesses takes the variant's primitive family when
    every accessed attribute already exists on it (``text.split`` fits a
    string), and otherwise becomes a namespace stub carrying the attributes.
    """
    members_by_base: dict[str, list[str]] = {}
    for dotted in refs.members:
        base, attr = dotted.split(".", 1)
        members_by_base.setdefault(base, []).append(attr)

    needs_import = [False]
    statements: list[str] = []
    for name in refs.variables:
        rng = _rng_for(seed, variant, name)
        attrs = members_by_base.get(name, [])
        if attrs:
            family = variant % _FAMILY_COUNT
            if name not in refs.called and _primitive_satisfies(family, attrs):
                value = _value_literal(family, rng, needs_import)
            else:
                needs_import[0] = True
                fields = []
                for offset, attr in enumerate(attrs):
                    attr_rng = _rng_for(seed, variant, f"{name}.{attr}")
                    if f"{name}.{attr}" in refs.called:
                        inner = _value_literal(
                            (variant + offset) % _FAMILY_CALLABLE, attr_rng, needs_import
                        )
                        fields.append(f"{attr}=lambda *args, **kwargs: {inner}")
                    else:
                        family = (variant + offset) % _FAMILY_CALLABLE  # not callable
                        fields.append(
                            f"{attr}={_value_literal(family, attr_rng, needs_import)}"
                        )
                value = f"types.SimpleNamespace({', '.join(fields)})"
        elif name in refs.called:
            inner = _value_literal(variant % _FAMILY_CALLABLE, rng, needs_import)
            value = f"lambda *args, **kwargs: {inner}"
        else:
            value = _value_literal(variant % _FAMILY_COUNT, rng, needs_import)
        statements.append(f"{name} = {value}")

    imports = ("import types",) if needs_import[0] else ()
    return GeneratorResponse(imports=imports, initialization=tuple(statements))


class HeuristicGenerator:
    """Offline stand-in for the LLM; deterministic for a fixed seed.

    Each successive query about the same snippet shifts the variant window
    so that later guidance steps try different value families.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._lock = threading.Lock()
        self._calls_per_snippet: dict[str, int] = {}

    def generate(self, request: GeneratorRequest) -> GeneratorBatch:
        snippet_source = extract_snippet_block(request.conversation)
        if snippet_source is None:
            return GeneratorBatch(())
        try:
            refs = analysis.get_undefined_refs(snippet_source)
        except analysis.AnalysisError:
            return GeneratorBatch(())
        key = hashlib.sha256(snippet_source.encode()).hexdigest()
        with self._lock:
            call_index = self._calls_per_snippet.get(key, 0)
            self._calls_per_snippet[key] = call_index + 1
        base = call_index * request.samples
        samples = []
        for offset in range(request.samples):
            response = heuristic_generate(refs, self.seed, base + offset)
            samples.append(_parse_sample(serialize_response(response)))
        return GeneratorBatch(tuple(samples))


# ---------------------------------------------------------------------------
# Remote LLM generator
# ---------------------------------------------------------------------------

Transport = Callable[[dict], dict]
"""Sends one chat-completions payload and returns the decoded JSON reply."""

API_KEY_ENV = "PREFIXER_API_KEY"
DEFAULT_BASE_URL = "https://api.openai.com/v1"


def _http_transport(base_url: str, api_key: str, timeout: float) -> Transport:
    import requests

    def send(payload: dict) -> dict:
        response = requests.post(
            f"{base_url.rstrip('/')}/chat/completions",
            json=payload,
            headers={"Authorization": f"Bearer {api_key}"},
            timeout=timeout,
        )
        response.raise_for_status()
        return response.json()

    return send


class LLMGenerator:
    """Chat-completions client with bounded exponential backoff.

    The provider's multi-sample parameter carries the sample count; fewer
    choices than requested are accepted as-is.
    """

    def __init__(
        self,
        model: str,
        base_url: str = DEFAULT_BASE_URL,
        api_key: Optional[str] = None,
        temperature: float = 1.0,
        max_tokens: int = 1024,
        request_timeout: float = 60.0,
        max_attempts: int = 3,
        transport: Optional[Transport] = None,
        sleeper: Callable[[float], None] = time.sleep,
        audit_log: Optional[Callable[[dict, dict], None]] = None,
    ):
        if transport is None:
            key = api_key or os.environ.get(API_KEY_ENV, "")
            if not key:
                raise GeneratorUnavailable(
                    f"no API key: set {API_KEY_ENV} or pass api_key explicitly"
                )
            transport = _http_transport(base_url, key, request_timeout)
        self.model = model
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.max_attempts = max_attempts
        self.transport = transport
        self.sleeper = sleeper
        self.audit_log = audit_log

    def generate(self, request: GeneratorRequest) -> GeneratorBatch:
        payload = {
            "model": self.model,
            "messages": [
                {"role": message.role, "content": message.text}
                for message in request.conversation.messages
            ],
            "n": request.samples,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        delay = 1.0
        last_error: Optional[Exception] = None
        for attempt in range(self.max_attempts):
            try:
                reply = self.transport(payload)
                break
            except Exception as error:  # transport failures only
                last_error = error
                if attempt + 1 < self.max_attempts:
                    self.sleeper(delay)
                    delay *= 2
        else:
            raise GeneratorUnavailable(f"transport failed after retries: {last_error}")
        if self.audit_log is not None:
            self.audit_log(payload, reply)
        choices = reply.get("choices", [])
        texts = []
        for choice in choices[: request.samples]:
            content = choice.get("message", {}).get("content")
            if isinstance(content, str):
                texts.append(content)
        return GeneratorBatch(tuple(_parse_sample(text) for text in texts))


class AuditingGenerator:
    """Wraps a generator and writes every outgoing prompt and raw reply to disk."""

    def __init__(self, inner: Generator, audit_dir):
        from pathlib import Path

        self.inner = inner
        self.audit_dir = Path(audit_dir)
        self.audit_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._sequence = 0

    def generate(self, request: GeneratorRequest) -> GeneratorBatch:
        with self._lock:
            self._sequence += 1
            sequence = self._sequence
        rendered = []
        for message in request.conversation.messages:
            rendered.append(f"=== {message.role} ===")
            rendered.append(message.text)
        (self.audit_dir / f"{sequence:04d}-request.txt").write_text(
            "\n".join(rendered) + "\n"
        )
        batch = self.inner.generate(request)
        replies = []
        for index, sample in enumerate(batch.responses, start=1):
            replies.append(f"=== sample {index} ===")
            replies.append(sample.raw_text)
        (self.audit_dir / f"{sequence:04d}-replies.txt").write_text(
            "\n".join(replies) + "\n"
        )
        return batch


class ScriptedGenerator:
    """Replays canned raw texts, one batch per query; for tests and replays."""

    def __init__(self, batches: list[list[str]]):
        self._batches = list(batches)
        self._cursor = 0
        self.requests: list[GeneratorRequest] = []

    def generate(self, request: GeneratorRequest) -> GeneratorBatch:
        self.requests.append(request)
        if self._cursor >= len(self._batches):
            return GeneratorBatch(())
        raw_texts = self._batches[self._cursor]
        self._cursor += 1
        return GeneratorBatch(tuple(_parse_sample(raw) for raw in raw_texts[: request.samples]))
