"""Shared data model: snippets, prefixes, coverage, the prefix tree, run config.

All types here are immutable after construction and safe to share across
threads. The search loop never mutates them in place; it builds new
``SearchResult`` / ``PrefixTree`` values as it goes.

Coverage is counted per executable *statement*, not per physical line:
every statement gets a probe keyed by its first source line, and multi-line
statements count once. Probe IDs are the canonical coverage currency; the
``statement_index`` maps them back to source lines for reporting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Optional

SCHEMA_VERSION = 1


class ContractViolation(ValueError):
    """An operation was fed arguments that break its preconditions."""


class OriginStep(Enum):
    """Which guidance step produced a prefix."""

    UNDEFINEDNESS = 1
    ERROR = 2
    COVERAGE = 3


class PrefixStatus(Enum):
    FRESH = "fresh"
    POST_PROCESSED = "post_processed"
    DISCARDED = "discarded"


@dataclass(frozen=True)
class Snippet:
    """A syntactically valid piece of code to execute.

    ``statement_index`` lists ``(probe_id, first_line)`` pairs for every
    executable statement, with probe ids consecutive from 1.
    """

    id: str
    source: str
    statement_index: tuple[tuple[int, int], ...]
    total_statements: int

    def __post_init__(self) -> None:
        if self.total_statements < 1:
            raise ContractViolation(f"snippet {self.id!r} has no executable statements")
        ids = [probe_id for probe_id, _ in self.statement_index]
        if ids != list(range(1, self.total_statements + 1)):
            raise ContractViolation(
                f"snippet {self.id!r}: probe ids must be consecutive 1..{self.total_statements}"
            )
        n_lines = len(self.source.splitlines())
        for probe_id, line in self.statement_index:
            if not 1 <= line <= n_lines:
                raise ContractViolation(
                    f"snippet {self.id!r}: probe {probe_id} maps to line {line}, "
                    f"outside 1..{n_lines}"
                )

    @property
    def probe_ids(self) -> frozenset[int]:
        return frozenset(range(1, self.total_statements + 1))

    def line_of_probe(self, probe_id: int) -> int:
        return dict(self.statement_index)[probe_id]


@dataclass(frozen=True)
class Prefix:
    """Imports plus initialization statements prepended to a snippet.

    Both statement lists may be empty. ``parent`` is absent exactly for
    step-1 (undefinedness guidance) prefixes.
    """

    id: str
    imports: tuple[str, ...]
    initializations: tuple[str, ...]
    origin_step: OriginStep
    parent: Optional[str] = None
    status: PrefixStatus = PrefixStatus.FRESH

    def __post_init__(self) -> None:
        if (self.parent is None) != (self.origin_step is OriginStep.UNDEFINEDNESS):
            raise ContractViolation(
                f"prefix {self.id!r}: parent must be absent exactly for step-1 prefixes"
            )

    def render(self) -> str:
        """Imports then initializations, newline-joined."""
        return "\n".join((*self.imports, *self.initializations))

    def with_statements(
        self, imports: tuple[str, ...], initializations: tuple[str, ...], status: PrefixStatus
    ) -> "Prefix":
        return Prefix(
            id=self.id,
            imports=imports,
            initializations=initializations,
            origin_step=self.origin_step,
            parent=self.parent,
            status=status,
        )

    def with_status(self, status: PrefixStatus) -> "Prefix":
        return self.with_statements(self.imports, self.initializations, status)


@dataclass(frozen=True)
class CoverageSet:
    """The set of probe ids that fired during one or more runs."""

    fired: frozenset[int] = frozenset()

    def union(self, other: "CoverageSet") -> "CoverageSet":
        return CoverageSet(self.fired | other.fired)

    def __len__(self) -> int:
        return len(self.fired)


def coverage_ratio(cov: CoverageSet, snippet: Snippet) -> Fraction:
    """Fraction of the snippet's statements covered by ``cov``; exact rational."""
    if not cov.fired <= snippet.probe_ids:
        stray = sorted(cov.fired - snippet.probe_ids)
        raise ContractViolation(
            f"coverage set fires unknown probes {stray} for snippet {snippet.id!r}"
        )
    return Fraction(len(cov.fired), snippet.total_statements)


@dataclass(frozen=True)
class ExceptionInfo:
    type_name: str
    message: str
    snippet_line: Optional[int] = None


@dataclass(frozen=True)
class ExecutionOutcome:
    """Result of running one composed program: coverage, optional error, timing."""

    coverage: CoverageSet
    exception: Optional[ExceptionInfo] = None
    timed_out: bool = False
    wall_time: float = 0.0

    def __post_init__(self) -> None:
        if self.timed_out and self.exception is not None:
            raise ContractViolation("a timed-out run cannot also carry an exception")


@dataclass(frozen=True)
class TreeNode:
    prefix: Prefix
    outcome: Optional[ExecutionOutcome] = None


@dataclass(frozen=True)
class PrefixTree:
    """Explored prefixes rooted at the snippet; levels mirror the guidance steps."""

    root: str  # snippet id
    nodes: tuple[TreeNode, ...] = ()

    def __post_init__(self) -> None:
        by_id = {node.prefix.id: node for node in self.nodes}
        if len(by_id) != len(self.nodes):
            raise ContractViolation("duplicate prefix ids in tree")
        for node in self.nodes:
            parent = node.prefix.parent
            if parent is None:
                continue
            if parent not in by_id:
                raise ContractViolation(f"node {node.prefix.id!r} has unknown parent {parent!r}")
            child_level = node.prefix.origin_step.value
            parent_level = by_id[parent].prefix.origin_step.value
            if parent_level >= child_level:
                raise ContractViolation(
                    f"node {node.prefix.id!r} (level {child_level}) has parent at level "
                    f"{parent_level}; parents must sit at an earlier level"
                )

    def node(self, prefix_id: str) -> TreeNode:
        for candidate in self.nodes:
            if candidate.prefix.id == prefix_id:
                return candidate
        raise KeyError(prefix_id)

    def children(self, prefix_id: Optional[str]) -> tuple[TreeNode, ...]:
        return tuple(node for node in self.nodes if node.prefix.parent == prefix_id)

    def level(self, step: OriginStep) -> tuple[TreeNode, ...]:
        return tuple(node for node in self.nodes if node.prefix.origin_step is step)

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class SearchResult:
    """The maintained prefix set, the single best prefix, and budget accounting."""

    prefix_set: tuple[str, ...]
    best_prefix: Optional[str]
    cumulative: CoverageSet
    queries_used: int
    explored: int
    degraded: bool = False

    def __post_init__(self) -> None:
        if self.prefix_set and self.best_prefix not in self.prefix_set:
            raise ContractViolation("best prefix must be a member of the kept set")
        if self.best_prefix is not None and not self.prefix_set:
            raise ContractViolation("a best prefix without any kept prefixes is inconsistent")


@dataclass(frozen=True)
class RunConfig:
    """Knobs for one search run.

    ``samples_per_query`` is the number of completions requested per prompt
    and ``coverage_attempts`` bounds the step-3 refinement loop.
    """

    samples_per_query: int = 10
    coverage_attempts: int = 10
    prefix_timeout: float = 30.0
    postprocess_attempts: int = 10
    generator: str = "heuristic"
    env_dir: Optional[str] = None
    install_deps: bool = False
    seed: int = 0
    model: Optional[str] = None
    base_url: Optional[str] = None

    def __post_init__(self) -> None:
        if self.samples_per_query < 1:
            raise ContractViolation("samples_per_query must be >= 1")
        if self.coverage_attempts < 0:
            raise ContractViolation("coverage_attempts must be >= 0")
        if self.prefix_timeout <= 0:
            raise ContractViolation("prefix_timeout must be positive")
        if self.postprocess_attempts < 1:
            raise ContractViolation("postprocess_attempts must be >= 1")

    def node_budget(self) -> int:
        n, k = self.samples_per_query, self.coverage_attempts
        return n + n * n + k * n


# ---------------------------------------------------------------------------
# Report serialization. One JSON document per snippet; every type round-trips.
# ---------------------------------------------------------------------------


def snippet_to_dict(snippet: Snippet) -> dict[str, Any]:
    return {
        "id": snippet.id,
        "source": snippet.source,
        "statement_index": [list(pair) for pair in snippet.statement_index],
        "total_statements": snippet.total_statements,
    }


def snippet_from_dict(data: dict[str, Any]) -> Snippet:
    return Snippet(
        id=data["id"],
        source=data["source"],
        statement_index=tuple((int(a), int(b)) for a, b in data["statement_index"]),
        total_statements=int(data["total_statements"]),
    )


def prefix_to_dict(prefix: Prefix) -> dict[str, Any]:
    return {
        "id": prefix.id,
        "imports": list(prefix.imports),
        "initializations": list(prefix.initializations),
        "origin_step": prefix.origin_step.value,
        "parent": prefix.parent,
        "status": prefix.status.value,
    }


def prefix_from_dict(data: dict[str, Any]) -> Prefix:
    return Prefix(
        id=data["id"],
        imports=tuple(data["imports"]),
        initializations=tuple(data["initializations"]),
        origin_step=OriginStep(data["origin_step"]),
        parent=data["parent"],
        status=PrefixStatus(data["status"]),
    )


def outcome_to_dict(outcome: ExecutionOutcome) -> dict[str, Any]:
    exc = outcome.exception
    return {
        "fired": sorted(outcome.coverage.fired),
        "exception": None
        if exc is None
        else {"type": exc.type_name, "message": exc.message, "snippet_line": exc.snippet_line},
        "timed_out": outcome.timed_out,
        "wall_time": outcome.wall_time,
    }


def outcome_from_dict(data: dict[str, Any]) -> ExecutionOutcome:
    exc = data["exception"]
    return ExecutionOutcome(
        coverage=CoverageSet(frozenset(int(v) for v in data["fired"])),
        exception=None
        if exc is None
        else ExceptionInfo(exc["type"], exc["message"], exc["snippet_line"]),
        timed_out=bool(data["timed_out"]),
        wall_time=float(data["wall_time"]),
    )


def tree_to_dict(tree: PrefixTree) -> dict[str, Any]:
    return {
        "root": tree.root,
        "nodes": [
            {
                "prefix": prefix_to_dict(node.prefix),
                "outcome": None if node.outcome is None else outcome_to_dict(node.outcome),
            }
            for node in tree.nodes
        ],
    }


def tree_from_dict(data: dict[str, Any]) -> PrefixTree:
    return PrefixTree(
        root=data["root"],
        nodes=tuple(
            TreeNode(
                prefix=prefix_from_dict(raw["prefix"]),
                outcome=None if raw["outcome"] is None else outcome_from_dict(raw["outcome"]),
            )
            for raw in data["nodes"]
        ),
    )


def result_to_dict(result: SearchResult) -> dict[str, Any]:
    return {
        "prefix_set": list(result.prefix_set),
        "best_prefix": result.best_prefix,
        "cumulative_fired": sorted(result.cumulative.fired),
        "queries_used": result.queries_used,
        "explored": result.explored,
        "degraded": result.degraded,
    }


def result_from_dict(data: dict[str, Any]) -> SearchResult:
    return SearchResult(
        prefix_set=tuple(data["prefix_set"]),
        best_prefix=data["best_prefix"],
        cumulative=CoverageSet(frozenset(int(v) for v in data["cumulative_fired"])),
        queries_used=int(data["queries_used"]),
        explored=int(data["explored"]),
        degraded=bool(data["degraded"]),
    )


def config_to_dict(config: RunConfig) -> dict[str, Any]:
    return {
        "samples_per_query": config.samples_per_query,
        "coverage_attempts": config.coverage_attempts,
        "prefix_timeout": config.prefix_timeout,
        "postprocess_attempts": config.postprocess_attempts,
        "generator": config.generator,
        "env_dir": config.env_dir,
        "install_deps": config.install_deps,
        "seed": config.seed,
        "model": config.model,
        "base_url": config.base_url,
    }


def config_from_dict(data: dict[str, Any]) -> RunConfig:
    return RunConfig(**data)
