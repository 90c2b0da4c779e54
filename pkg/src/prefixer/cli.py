"""Command-line interface.

Subcommands:
  run         search a corpus directory and write reports, summary, figures
  report      recompute summary/CSV/figures from stored per-snippet reports
  analyze     print a snippet's undefined variables and members
  instrument  print a snippet's probe-instrumented source and source map
  prompt      print the step-1 prompt that would be sent for a snippet

The LLM generator reads its API key from the PREFIXER_API_KEY environment
variable; the runtime shim is located through the installed prefixer-shim
package or the PREFIXER_SHIM environment variable.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import report as report_mod
from .analysis import AnalysisError, get_undefined_refs
from .generate import AuditingGenerator, HeuristicGenerator, LLMGenerator
from .harness import SubprocessBackend, default_shim_entry, ensure_env, env_python
from .instrument import InstrumentError, instrument, make_snippet
from .model import RunConfig
from .prompts import (
    MEMBERS_FENCE_BEGIN,
    MEMBERS_FENCE_END,
    VARIABLES_FENCE_BEGIN,
    VARIABLES_FENCE_END,
    gen_prompt1,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prefixer",
        description="Synthesize code prefixes that make Python snippets executable.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_cmd = sub.add_parser("run", help="run the search over a corpus directory")
    run_cmd.add_argument("corpus_dir", type=Path)
    run_cmd.add_argument("--n", type=int, default=10, help="completions per query")
    run_cmd.add_argument("--k", type=int, default=10, help="coverage-guidance attempts")
    run_cmd.add_argument(
        "--generator", choices=("llm", "heuristic"), default="heuristic"
    )
    run_cmd.add_argument("--model", default=None, help="model name for the llm generator")
    run_cmd.add_argument("--base-url", default=None, help="chat-completions base URL")
    run_cmd.add_argument("--env", type=Path, default=None, help="shared dependency environment")
    run_cmd.add_argument(
        "--no-install", action="store_true", help="never install missing dependencies"
    )
    run_cmd.add_argument("--workers", type=int, default=1)
    run_cmd.add_argument("--seed", type=int, default=0)
    run_cmd.add_argument("--timeout", type=float, default=30.0, help="per-run timeout (s)")
    run_cmd.add_argument("--out", type=Path, default=Path("prefixer-out"))
    run_cmd.add_argument("--shim", type=Path, default=None, help="runtime shim entry script")
    run_cmd.add_argument("--no-figures", action="store_true")
    run_cmd.add_argument(
        "--dump-prompts",
        action="store_true",
        help="write every outgoing prompt and raw reply under <out>/prompts",
    )

    report_cmd = sub.add_parser("report", help="recompute summary and figures")
    report_cmd.add_argument("out_dir", type=Path)
    report_cmd.add_argument("--no-figures", action="store_true")

    analyze_cmd = sub.add_parser("analyze", help="print undefined variables and members")
    analyze_cmd.add_argument("snippet", type=Path)

    instrument_cmd = sub.add_parser("instrument", help="print instrumented source")
    instrument_cmd.add_argument("snippet", type=Path)

    prompt_cmd = sub.add_parser("prompt", help="print the step-1 prompt for a snippet")
    prompt_cmd.add_argument("snippet", type=Path)
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    env_dir = str(args.env) if args.env else None
    config = RunConfig(
        samples_per_query=args.n,
        coverage_attempts=args.k,
        prefix_timeout=args.timeout,
        generator=args.generator,
        env_dir=env_dir,
        install_deps=not args.no_install and env_dir is not None,
        seed=args.seed,
        model=args.model,
        base_url=args.base_url,
    )
    if args.generator == "llm":
        if not args.model:
            print("error: --model is required with --generator llm", file=sys.stderr)
            return 2
        generator = LLMGenerator(
            model=args.model,
            base_url=args.base_url or "https://api.openai.com/v1",
        )
    else:
        generator = HeuristicGenerator(seed=args.seed)
    if args.dump_prompts:
        generator = AuditingGenerator(generator, args.out / "prompts")

    if env_dir is not None:
        ensure_env(env_dir)
    shim_entry = args.shim if args.shim else default_shim_entry()
    python_executable = env_python(env_dir)

    def backend_factory() -> SubprocessBackend:
        return SubprocessBackend(
            python_executable=python_executable, shim_entry=shim_entry
        )

    summary = report_mod.run_corpus(
        corpus_dir=args.corpus_dir,
        config=config,
        out_dir=args.out,
        generator=generator,
        backend_factory=backend_factory,
        workers=args.workers,
        render=not args.no_figures,
    )
    print(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    summary = report_mod.resummarize(args.out_dir, render=not args.no_figures)
    print(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_analyze(args: argparse.Namespace) -> int:
    try:
        refs = get_undefined_refs(args.snippet.read_text())
    except AnalysisError as error:
        print(f"error: {error}", file=sys.stderr)
        return 1
    print(VARIABLES_FENCE_BEGIN)
    for name in refs.variables:
        print(name)
    print(VARIABLES_FENCE_END)
    print(MEMBERS_FENCE_BEGIN)
    for dotted in refs.members:
        print(dotted)
    print(MEMBERS_FENCE_END)
    return 0


def _cmd_instrument(args: argparse.Namespace) -> int:
    try:
        snippet = make_snippet(args.snippet.stem, args.snippet.read_text())
        instrumented = instrument(snippet)
    except InstrumentError as error:
        print(f"error: {error}", file=sys.stderr)
        return 1
    print(instrumented.source)
    print()
    print("# probe -> original line")
    for probe_id, line in sorted(instrumented.source_map.items()):
        print(f"# {probe_id} -> {line}")
    return 0


def _cmd_prompt(args: argparse.Namespace) -> int:
    try:
        source = args.snippet.read_text()
        snippet = make_snippet(args.snippet.stem, source)
        refs = get_undefined_refs(source)
    except (AnalysisError, InstrumentError) as error:
        print(f"error: {error}", file=sys.stderr)
        return 1
    conversation = gen_prompt1(snippet, refs)
    for message in conversation.messages:
        print(f"--- {message.role} ---")
        print(message.text)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "report": _cmd_report,
        "analyze": _cmd_analyze,
        "instrument": _cmd_instrument,
        "prompt": _cmd_prompt,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    raise SystemExit(main())
