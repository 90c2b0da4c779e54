"""Corpus runs, per-snippet reports, aggregate metrics, and figures.

A corpus is a flat directory of ``.py`` files, one snippet per file, with the
file stem as the snippet id. Each search writes one JSON report; the summary
(JSON + CSV) and the figures are recomputed from those reports, so a corpus
directory can be resumed or re-summarized at any time and completed snippets
are never re-run.
"""

from __future__ import annotations

import csv
import json
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from . import harness, search
from .generate import Generator
from .instrument import InstrumentError, make_snippet
from .model import (
    SCHEMA_VERSION,
    OriginStep,
    RunConfig,
    config_from_dict,
    config_to_dict,
    result_from_dict,
    result_to_dict,
    snippet_from_dict,
    snippet_to_dict,
    tree_from_dict,
    tree_to_dict,
)
from .search import SearchRun, StepTrace


def trace_to_dict(trace: StepTrace) -> dict:
    return {
        "step": trace.step.value,
        "prompts_sent": trace.prompts_sent,
        "samples_received": trace.samples_received,
        "parse_failures": trace.parse_failures,
        "prefixes_generated": trace.prefixes_generated,
        "prefixes_discarded": trace.prefixes_discarded,
        "wall_time": trace.wall_time,
    }


def trace_from_dict(data: dict) -> StepTrace:
    return StepTrace(
        step=OriginStep(data["step"]),
        prompts_sent=data["prompts_sent"],
        samples_received=data["samples_received"],
        parse_failures=data["parse_failures"],
        prefixes_generated=data["prefixes_generated"],
        prefixes_discarded=data["prefixes_discarded"],
        wall_time=data["wall_time"],
    )


def run_to_report(run: SearchRun) -> dict:
    """The versioned per-snippet report document."""
    total = run.snippet.total_statements
    return {
        "schema_version": SCHEMA_VERSION,
        "snippet": snippet_to_dict(run.snippet),
        "config": config_to_dict(run.config),
        "tree": tree_to_dict(run.tree),
        "result": result_to_dict(run.result),
        "cumulative_ratio": len(run.result.cumulative.fired) / total,
        "step_traces": [trace_to_dict(trace) for trace in run.traces],
        "wall_time": run.wall_time,
    }


def report_to_run(report: dict) -> SearchRun:
    return SearchRun(
        snippet=snippet_from_dict(report["snippet"]),
        config=config_from_dict(report["config"]),
        result=result_from_dict(report["result"]),
        tree=tree_from_dict(report["tree"]),
        traces=tuple(trace_from_dict(raw) for raw in report["step_traces"]),
        wall_time=report["wall_time"],
    )


def coverage_after_step(report: dict, step: int) -> float:
    """Cumulative coverage over every prefix born in steps up to ``step``."""
    total = report["snippet"]["total_statements"]
    fired: set[int] = set()
    for node in report["tree"]["nodes"]:
        if node["prefix"]["origin_step"] <= step and node["outcome"] is not None:
            fired.update(node["outcome"]["fired"])
    return len(fired) / total


@dataclass(frozen=True)
class CorpusSummary:
    snippet_count: int
    skipped_count: int
    mean_coverage_set: float
    mean_coverage_best: float
    full_execution_rate: float
    mean_prefixes_explored: float
    mean_set_size: float
    max_set_size: int
    coverage_after_step1: float
    coverage_after_step2: float
    coverage_after_step3: float
    mean_wall_time: float
    median_wall_time: float
    total_wall_time: float

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "snippet_count": self.snippet_count,
            "skipped_count": self.skipped_count,
            "mean_coverage_set": self.mean_coverage_set,
            "mean_coverage_best": self.mean_coverage_best,
            "full_execution_rate": self.full_execution_rate,
            "mean_prefixes_explored": self.mean_prefixes_explored,
            "mean_set_size": self.mean_set_size,
            "max_set_size": self.max_set_size,
            "coverage_after_step": {
                "1": self.coverage_after_step1,
                "2": self.coverage_after_step2,
                "3": self.coverage_after_step3,
            },
            "wall_time": {
                "mean": self.mean_wall_time,
                "median": self.median_wall_time,
                "total": self.total_wall_time,
            },
        }


def summarize_reports(reports: list[dict], skipped_count: int = 0) -> CorpusSummary:
    if not reports:
        return CorpusSummary(
            snippet_count=0,
            skipped_count=skipped_count,
            mean_coverage_set=0.0,
            mean_coverage_best=0.0,
            full_execution_rate=0.0,
            mean_prefixes_explored=0.0,
            mean_set_size=0.0,
            max_set_size=0,
            coverage_after_step1=0.0,
            coverage_after_step2=0.0,
            coverage_after_step3=0.0,
            mean_wall_time=0.0,
            median_wall_time=0.0,
            total_wall_time=0.0,
        )

    set_ratios = []
    best_ratios = []
    full = 0
    explored = []
    set_sizes = []
    per_step = {1: [], 2: [], 3: []}
    wall_times = []
    for report in reports:
        total = report["snippet"]["total_statements"]
        fired = len(report["result"]["cumulative_fired"])
        set_ratios.append(fired / total)
        if fired == total:
            full += 1
        best_id = report["result"]["best_prefix"]
        best_fired = 0
        if best_id is not None:
            for node in report["tree"]["nodes"]:
                if node["prefix"]["id"] == best_id and node["outcome"] is not None:
                    best_fired = len(node["outcome"]["fired"])
                    break
        best_ratios.append(best_fired / total)
        explored.append(report["result"]["explored"])
        set_sizes.append(len(report["result"]["prefix_set"]))
        for step in (1, 2, 3):
            per_step[step].append(coverage_after_step(report, step))
        wall_times.append(report["wall_time"])

    return CorpusSummary(
        snippet_count=len(reports),
        skipped_count=skipped_count,
        mean_coverage_set=statistics.fmean(set_ratios),
        mean_coverage_best=statistics.fmean(best_ratios),
        full_execution_rate=full / len(reports),
        mean_prefixes_explored=statistics.fmean(explored),
        mean_set_size=statistics.fmean(set_sizes),
        max_set_size=max(set_sizes),
        coverage_after_step1=statistics.fmean(per_step[1]),
        coverage_after_step2=statistics.fmean(per_step[2]),
        coverage_after_step3=statistics.fmean(per_step[3]),
        mean_wall_time=statistics.fmean(wall_times),
        median_wall_time=statistics.median(wall_times),
        total_wall_time=sum(wall_times),
    )


def write_summary_csv(reports: list[dict], path: Path) -> None:
    """One delimited row per snippet, for spreadsheet-side analysis."""
    columns = [
        "snippet_id",
        "total_statements",
        "coverage_set",
        "coverage_best",
        "fully_executed",
        "explored",
        "set_size",
        "coverage_step1",
        "coverage_step2",
        "coverage_step3",
        "queries_used",
        "wall_time",
    ]
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(columns)
        for report in sorted(reports, key=lambda r: r["snippet"]["id"]):
            total = report["snippet"]["total_statements"]
            fired = len(report["result"]["cumulative_fired"])
            best_id = report["result"]["best_prefix"]
            best_fired = 0
            if best_id is not None:
                for node in report["tree"]["nodes"]:
                    if node["prefix"]["id"] == best_id and node["outcome"] is not None:
                        best_fired = len(node["outcome"]["fired"])
                        break
            writer.writerow(
                [
                    report["snippet"]["id"],
                    total,
                    f"{fired / total:.6f}",
                    f"{best_fired / total:.6f}",
                    int(fired == total),
                    report["result"]["explored"],
                    len(report["result"]["prefix_set"]),
                    f"{coverage_after_step(report, 1):.6f}",
                    f"{coverage_after_step(report, 2):.6f}",
                    f"{coverage_after_step(report, 3):.6f}",
                    report["result"]["queries_used"],
                    f"{report['wall_time']:.3f}",
                ]
            )


def render_figures(reports: list[dict], figures_dir: Path) -> list[Path]:
    """Distribution and per-step figures rendered next to the delimited output."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    figures_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if not reports:
        return written

    explored_per_step: dict[int, list[int]] = {1: [], 2: [], 3: []}
    explored_all: list[int] = []
    set_sizes: list[int] = []
    for report in reports:
        counts = {1: 0, 2: 0, 3: 0}
        for node in report["tree"]["nodes"]:
            counts[node["prefix"]["origin_step"]] += 1
        for step in (1, 2, 3):
            explored_per_step[step].append(counts[step])
        explored_all.append(sum(counts.values()))
        set_sizes.append(len(report["result"]["prefix_set"]))

    fig, axis = plt.subplots(figsize=(6, 4))
    axis.boxplot(
        [explored_all, explored_per_step[1], explored_per_step[2], explored_per_step[3], set_sizes],
        tick_labels=["all", "step 1", "step 2", "step 3", "kept set"],
    )
    axis.set_ylabel("prefixes per snippet")
    axis.set_title("Prefixes explored")
    fig.tight_layout()
    path = figures_dir / "prefixes_explored.png"
    fig.savefig(path)
    plt.close(fig)
    written.append(path)

    means = [statistics.fmean([coverage_after_step(r, s) for r in reports]) for s in (1, 2, 3)]
    fig, axis = plt.subplots(figsize=(6, 4))
    axis.bar(["step 1", "step 2", "step 3"], means, color="#4c72b0")
    axis.set_ylim(0.0, 1.0)
    axis.set_ylabel("mean cumulative coverage")
    axis.set_title("Coverage after each step")
    fig.tight_layout()
    path = figures_dir / "coverage_per_step.png"
    fig.savefig(path)
    plt.close(fig)
    written.append(path)

    fig, axis = plt.subplots(figsize=(6, 4))
    bins = range(0, max(set_sizes) + 2)
    axis.hist(set_sizes, bins=bins, align="left", rwidth=0.8, color="#55a868")
    axis.set_xlabel("kept-set size")
    axis.set_ylabel("snippets")
    axis.set_title("Kept prefix set sizes")
    fig.tight_layout()
    path = figures_dir / "prefix_set_sizes.png"
    fig.savefig(path)
    plt.close(fig)
    written.append(path)
    return written


@dataclass
class CorpusRunPaths:
    out_dir: Path

    @property
    def reports_dir(self) -> Path:
        return self.out_dir / "reports"

    @property
    def figures_dir(self) -> Path:
        return self.out_dir / "figures"

    @property
    def summary_json(self) -> Path:
        return self.out_dir / "summary.json"

    @property
    def summary_csv(self) -> Path:
        return self.out_dir / "summary.csv"

    @property
    def skipped_json(self) -> Path:
        return self.out_dir / "skipped.json"

    def report_path(self, snippet_id: str) -> Path:
        return self.reports_dir / f"{snippet_id}.json"


def discover_snippets(corpus_dir: Path) -> list[tuple[str, Path]]:
    return sorted(
        ((path.stem, path) for path in corpus_dir.glob("*.py")), key=lambda pair: pair[0]
    )


def run_corpus(
    corpus_dir: Path,
    config: RunConfig,
    out_dir: Path,
    generator: Generator,
    backend_factory: Callable[[], harness.ExecBackend],
    workers: int = 1,
    render: bool = True,
) -> CorpusSummary:
    """Run the search over every snippet file; resumable and skip-tolerant."""
    paths = CorpusRunPaths(out_dir)
    paths.reports_dir.mkdir(parents=True, exist_ok=True)
    entries = discover_snippets(corpus_dir)
    install_cache = harness.InstallCache(config.env_dir) if config.install_deps else None

    skipped: dict[str, str] = {}
    if paths.skipped_json.exists():
        try:
            skipped.update(json.loads(paths.skipped_json.read_text()))
        except (OSError, json.JSONDecodeError):
            pass

    def process(entry: tuple[str, Path]) -> Optional[dict]:
        snippet_id, path = entry
        report_path = paths.report_path(snippet_id)
        if report_path.exists():
            return json.loads(report_path.read_text())
        try:
            snippet = make_snippet(snippet_id, path.read_text())
        except (InstrumentError, SyntaxError, ValueError) as error:
            skipped[snippet_id] = str(error)
            return None
        backend = backend_factory()
        run_record = search.run(snippet, config, generator, backend, install_cache)
        report = run_to_report(run_record)
        report_path.write_text(json.dumps(report, indent=2, sort_keys=True))
        return report

    reports: list[dict] = []
    if workers <= 1:
        for entry in entries:
            report = process(entry)
            if report is not None:
                reports.append(report)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for report in pool.map(process, entries):
                if report is not None:
                    reports.append(report)

    if skipped:
        paths.skipped_json.write_text(json.dumps(skipped, indent=2, sort_keys=True))
    summary = summarize_reports(reports, skipped_count=len(skipped))
    paths.summary_json.write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
    write_summary_csv(reports, paths.summary_csv)
    if render:
        render_figures(reports, paths.figures_dir)
    return summary


def load_reports(out_dir: Path) -> list[dict]:
    paths = CorpusRunPaths(out_dir)
    reports = []
    for path in sorted(paths.reports_dir.glob("*.json")):
        reports.append(json.loads(path.read_text()))
    return reports


def resummarize(out_dir: Path, render: bool = True) -> CorpusSummary:
    """Recompute summary, CSV, and figures from the stored per-snippet reports."""
    paths = CorpusRunPaths(out_dir)
    reports = load_reports(out_dir)
    skipped_count = 0
    if paths.skipped_json.exists():
        try:
            skipped_count = len(json.loads(paths.skipped_json.read_text()))
        except (OSError, json.JSONDecodeError):
            skipped_count = 0
    summary = summarize_reports(reports, skipped_count=skipped_count)
    paths.summary_json.write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
    write_summary_csv(reports, paths.summary_csv)
    if render:
        render_figures(reports, paths.figures_dir)
    return summary
