"""Prefix synthesis for executing arbitrary Python snippets.

Given a syntactically valid but possibly non-executable snippet, the engine
searches for small code prefixes (imports plus variable initializations)
that let the snippet run, maximizing the number of statements executed
across the kept set of prefixes while tracking the single best one.
"""

from .analysis import UndefinedRefs, get_undefined_refs
from .instrument import compose, instrument, make_snippet
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
    coverage_ratio,
)
from .search import SearchRun, run, update_prefixes

__all__ = [
    "CoverageSet",
    "ExecutionOutcome",
    "OriginStep",
    "Prefix",
    "PrefixStatus",
    "PrefixTree",
    "RunConfig",
    "SearchResult",
    "SearchRun",
    "Snippet",
    "UndefinedRefs",
    "compose",
    "coverage_ratio",
    "get_undefined_refs",
    "instrument",
    "make_snippet",
    "run",
    "update_prefixes",
]

__version__ = "0.1.0"
