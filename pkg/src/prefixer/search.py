"""The three-step guided search for coverage-maximizing prefixes.

Step 1 asks the generator to initialize the statically detected undefined
names. Step 2 takes every step-1 prefix whose combined run raised, extends
its conversation with the error, and asks for fixes. Step 3 repeatedly shows
the generator the snippet annotated with the lines nothing has covered yet,
until coverage is complete or the attempt budget runs out. The search stops
early whenever cumulative coverage reaches 100%.

Kept-set maintenance is greedy: a candidate joins when it fires at least one
probe nothing in the set has fired; joining evicts members whose entire
coverage the candidate subsumes, which keeps the set small without losing
any covered statement. The best prefix is the one with the most individually
fired probes (earliest discovery wins ties) and is kept in the set even when
it adds nothing new cumulatively.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

from . import harness
from .analysis import get_undefined_refs
from .generate import Generator, GeneratorBatch, GeneratorRequest, GeneratorUnavailable
from .instrument import InstrumentedSnippet, instrument
from .model import (
    CoverageSet,
    ExecutionOutcome,
    OriginStep,
    Prefix,
    PrefixStatus,
    PrefixTree,
    RunConfig,
    SearchResult,
    Snippet,
    TreeNode,
)
from .prompts import Conversation, GeneratorResponse, annotate_uncovered
from .prompts import gen_prompt1, gen_prompt2, gen_prompt3


@dataclass(frozen=True)
class StepTrace:
    """Per-step accounting that reconciles with the tree's level sizes."""

    step: OriginStep
    prompts_sent: int = 0
    samples_received: int = 0
    parse_failures: int = 0
    prefixes_generated: int = 0
    prefixes_discarded: int = 0
    wall_time: float = 0.0


@dataclass(frozen=True)
class SearchRun:
    """Everything one snippet search produced."""

    snippet: Snippet
    config: RunConfig
    result: SearchResult
    tree: PrefixTree
    traces: tuple[StepTrace, ...]
    wall_time: float = 0.0


def update_prefixes(
    members: list[str],
    best: Optional[str],
    candidates: list[tuple[str, frozenset[int]]],
    coverage_of: dict[str, frozenset[int]],
) -> tuple[list[str], Optional[str]]:
    """Greedy kept-set and best-prefix maintenance over one candidate batch.

    Candidates are processed in order. A candidate joins when it adds at
    least one newly covered probe, evicting members whose coverage it
    subsumes. A candidate with strictly more individual coverage than the
    incumbent becomes the best prefix and is inserted even without novelty.
    ``coverage_of`` is extended with the candidates' coverage sets.
    """
    members = list(members)
    cumulative: set[int] = set()
    for member in members:
        cumulative |= coverage_of[member]
    for candidate_id, coverage in candidates:
        coverage_of[candidate_id] = coverage
        if coverage - cumulative:
            members = [m for m in members if not coverage_of[m] <= coverage]
            members.append(candidate_id)
            cumulative |= coverage
        if best is None or len(coverage) > len(coverage_of[best]):
            best = candidate_id
            if candidate_id not in members:
                members.append(candidate_id)
    return members, best


def cumulative_cov(members: list[str], coverage_of: dict[str, frozenset[int]]) -> frozenset[int]:
    """Union of the members' coverage sets."""
    combined: set[int] = set()
    for member in members:
        combined |= coverage_of[member]
    return frozenset(combined)


@dataclass
class _TraceCounter:
    prompts_sent: int = 0
    samples_received: int = 0
    parse_failures: int = 0
    prefixes_generated: int = 0
    prefixes_discarded: int = 0
    started: float = 0.0
    elapsed: float = 0.0

    def freeze(self, step: OriginStep) -> StepTrace:
        return StepTrace(
            step=step,
            prompts_sent=self.prompts_sent,
            samples_received=self.samples_received,
            parse_failures=self.parse_failures,
            prefixes_generated=self.prefixes_generated,
            prefixes_discarded=self.prefixes_discarded,
            wall_time=self.elapsed,
        )


@dataclass
class _NodeState:
    prefix: Prefix
    outcome: Optional[ExecutionOutcome]
    conversation: Conversation
    raw_response: str


class _SearchState:
    def __init__(self, snippet: Snippet, config: RunConfig):
        self.snippet = snippet
        self.config = config
        self.nodes: list[_NodeState] = []
        self.members: list[str] = []
        self.best: Optional[str] = None
        self.coverage_of: dict[str, frozenset[int]] = {}
        self.queries = 0
        self.degraded = False
        self._counter = 0

    def new_id(self, step: OriginStep) -> str:
        self._counter += 1
        return f"{self.snippet.id}-s{step.value}-{self._counter:03d}"

    def full_coverage(self) -> bool:
        return cumulative_cov(self.members, self.coverage_of) == self.snippet.probe_ids

    def cumulative_set(self) -> CoverageSet:
        return CoverageSet(cumulative_cov(self.members, self.coverage_of))


def _materialize_prefixes(
    state: _SearchState,
    batch: GeneratorBatch,
    step: OriginStep,
    parent: Optional[str],
    conversation: Conversation,
    trace: _TraceCounter,
) -> list[_NodeState]:
    trace.samples_received += len(batch)
    created: list[_NodeState] = []
    for sample in batch.responses:
        if sample.parsed is None:
            trace.parse_failures += 1
            continue
        response: GeneratorResponse = sample.parsed
        prefix = Prefix(
            id=state.new_id(step),
            imports=response.imports,
            initializations=response.initialization,
            origin_step=step,
            parent=parent,
            status=PrefixStatus.FRESH,
        )
        node = _NodeState(
            prefix=prefix,
            outcome=None,
            conversation=conversation.add("assistant", sample.raw_text),
            raw_response=sample.raw_text,
        )
        state.nodes.append(node)
        created.append(node)
        trace.prefixes_generated += 1
    return created


def _run_batch(
    state: _SearchState,
    nodes: list[_NodeState],
    backend: harness.ExecBackend,
    instrumented: InstrumentedSnippet,
    install_cache: Optional[harness.InstallCache],
    trace: _TraceCounter,
) -> None:
    """Install deps, post-process, execute, and fold a batch into the state."""
    config = state.config
    candidates: list[tuple[str, frozenset[int]]] = []
    for node in nodes:
        if config.install_deps and install_cache is not None:
            plan = harness.plan_dependencies(node.prefix, config.env_dir)
            if plan.to_install:
                harness.install(plan, config.env_dir, install_cache)
        processed = harness.post_process(node.prefix, backend, config)
        node.prefix = processed
        if processed.status is not PrefixStatus.POST_PROCESSED:
            trace.prefixes_discarded += 1
            continue
        outcome = harness.execute_with_snippet(
            processed, state.snippet, backend, config, instrumented
        )
        node.outcome = outcome
        candidates.append((processed.id, outcome.coverage.fired))
    state.members, state.best = update_prefixes(
        state.members, state.best, candidates, state.coverage_of
    )


def _error_nodes(state: _SearchState, step: OriginStep) -> list[_NodeState]:
    return [
        node
        for node in state.nodes
        if node.prefix.origin_step is step
        and node.outcome is not None
        and node.outcome.exception is not None
    ]


def _step3_anchor(state: _SearchState) -> Optional[str]:
    """Best post-processed node from the earlier levels, preferring level 2.

    When a level produced only discarded prefixes its first node still serves
    as the attachment point, so coverage guidance can run as long as any
    earlier exploration happened at all.
    """
    for step in (OriginStep.ERROR, OriginStep.UNDEFINEDNESS):
        best_id: Optional[str] = None
        best_size = -1
        for node in state.nodes:
            if node.prefix.origin_step is not step:
                continue
            if node.prefix.status is not PrefixStatus.POST_PROCESSED:
                continue
            size = len(node.outcome.coverage.fired) if node.outcome else 0
            if size > best_size:
                best_size = size
                best_id = node.prefix.id
        if best_id is not None:
            return best_id
    for step in (OriginStep.ERROR, OriginStep.UNDEFINEDNESS):
        for node in state.nodes:
            if node.prefix.origin_step is step:
                return node.prefix.id
    return None


def run(
    snippet: Snippet,
    config: RunConfig,
    generator: Generator,
    backend: harness.ExecBackend,
    install_cache: Optional[harness.InstallCache] = None,
) -> SearchRun:
    """Execute the full three-step search for one snippet."""
    started = time.monotonic()
    state = _SearchState(snippet, config)
    instrumented = instrument(snippet)
    traces: dict[OriginStep, _TraceCounter] = {
        step: _TraceCounter() for step in OriginStep
    }

    # Step 1: undefinedness guidance
    step_started = time.monotonic()
    trace = traces[OriginStep.UNDEFINEDNESS]
    refs = get_undefined_refs(snippet.source)
    conversation1 = gen_prompt1(snippet, refs)
    try:
        batch = generator.generate(GeneratorRequest(conversation1, config.samples_per_query))
        state.queries += 1
        trace.prompts_sent += 1
        nodes = _materialize_prefixes(
            state, batch, OriginStep.UNDEFINEDNESS, None, conversation1, trace
        )
        _run_batch(state, nodes, backend, instrumented, install_cache, trace)
    except GeneratorUnavailable:
        state.degraded = True
    trace.elapsed = time.monotonic() - step_started

    # Step 2: error guidance, one refinement batch per erroneous step-1 prefix
    step_started = time.monotonic()
    trace = traces[OriginStep.ERROR]
    if not state.degraded and not state.full_coverage():
        for error_node in _error_nodes(state, OriginStep.UNDEFINEDNESS):
            if state.full_coverage():
                break
            conversation2 = gen_prompt2(
                error_node.conversation, snippet, error_node.outcome
            )
            try:
                batch = generator.generate(
                    GeneratorRequest(conversation2, config.samples_per_query)
                )
            except GeneratorUnavailable:
                state.degraded = True
                break
            state.queries += 1
            trace.prompts_sent += 1
            nodes = _materialize_prefixes(
                state, batch, OriginStep.ERROR, error_node.prefix.id, conversation2, trace
            )
            _run_batch(state, nodes, backend, instrumented, install_cache, trace)
    trace.elapsed = time.monotonic() - step_started

    # Step 3: coverage guidance until full coverage or the budget runs out
    step_started = time.monotonic()
    trace = traces[OriginStep.COVERAGE]
    anchor = _step3_anchor(state)
    remaining = config.coverage_attempts
    while (
        not state.degraded
        and remaining > 0
        and not state.full_coverage()
        and anchor is not None
    ):
        annotated = annotate_uncovered(snippet, state.cumulative_set())
        conversation3 = gen_prompt3(annotated)
        try:
            batch = generator.generate(
                GeneratorRequest(conversation3, config.samples_per_query)
            )
        except GeneratorUnavailable:
            state.degraded = True
            break
        state.queries += 1
        trace.prompts_sent += 1
        nodes = _materialize_prefixes(
            state, batch, OriginStep.COVERAGE, anchor, conversation3, trace
        )
        _run_batch(state, nodes, backend, instrumented, install_cache, trace)
        remaining -= 1
    trace.elapsed = time.monotonic() - step_started

    tree = PrefixTree(
        root=snippet.id,
        nodes=tuple(TreeNode(node.prefix, node.outcome) for node in state.nodes),
    )
    result = SearchResult(
        prefix_set=tuple(state.members),
        best_prefix=state.best,
        cumulative=state.cumulative_set(),
        queries_used=state.queries,
        explored=len(state.nodes),
        degraded=state.degraded,
    )
    return SearchRun(
        snippet=snippet,
        config=config,
        result=result,
        tree=tree,
        traces=tuple(traces[step].freeze(step) for step in OriginStep),
        wall_time=time.monotonic() - started,
    )
