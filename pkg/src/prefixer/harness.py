"""Prefix post-processing, dependency installs, and sandboxed execution.

Execution goes through an ``ExecBackend``: the real one launches a child
interpreter via the runtime shim and reads the probe/exception records it
streams to a results file; the simulated one replays scripted outcomes so the
whole search is testable without any child process.

Post-processing runs a prefix on its own up to a bounded number of times,
removing the statement that raised on each round; a prefix that never runs
cleanly (or that times out) is discarded. Missing third-party dependencies
are inferred from the prefix's import statements, mapped through an alias
table (``cv2`` installs ``opencv-python``), and installed once into a shared
environment; both successes and failures are cached so no package is ever
attempted twice.
"""

from __future__ import annotations

import ast
import base64
import json
import os
import shutil
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Protocol

from .instrument import ComposedProgram, InstrumentedSnippet, compose, instrument
from .model import (
    CoverageSet,
    ExceptionInfo,
    ExecutionOutcome,
    Prefix,
    PrefixStatus,
    RunConfig,
    Snippet,
)

RESULTS_ENV_VAR = "_PROBE_RESULTS_FILE"
OUTPUT_TRUNCATE_BYTES = 64 * 1024

EXIT_CLEAN = 0
EXIT_EXCEPTION = 1
EXIT_USAGE = 2
EXIT_SINK_FAILURE = 3


class HarnessError(RuntimeError):
    """The execution backend itself failed (not the program under test)."""


@dataclass(frozen=True)
class RawException:
    type_name: str
    program_line: Optional[int]
    message: str


@dataclass(frozen=True)
class RawOutcome:
    """What one child run produced, before mapping lines back to the snippet."""

    probe_ids: tuple[int, ...] = ()
    exception: Optional[RawException] = None
    timed_out: bool = False
    wall_time: float = 0.0
    exit_status: int = EXIT_CLEAN
    stdout: str = ""
    stderr: str = ""


@dataclass(frozen=True)
class RunnableProgram:
    """A program handed to a backend, with enough context to script outcomes."""

    text: str
    kind: str  # "prefix" | "composed"
    prefix_render: str = ""
    composed: Optional[ComposedProgram] = None


class ExecBackend(Protocol):
    def execute(self, program: RunnableProgram, timeout: float) -> RawOutcome: ...


# ---------------------------------------------------------------------------
# Results-file protocol (shared with the runtime shim)
# ---------------------------------------------------------------------------


def parse_results_file(path: Path) -> tuple[tuple[int, ...], Optional[RawException]]:
    """Decode `P <id>` probe records and the optional terminal `E` record."""
    probe_ids: list[int] = []
    exception: Optional[RawException] = None
    if not path.exists():
        return (), None
    for line in path.read_text(errors="replace").splitlines():
        if line.startswith("P "):
            try:
                probe_ids.append(int(line[2:]))
            except ValueError:
                continue  # torn write at crash time
        elif line.startswith("E "):
            parts = line[2:].split("\t")
            if len(parts) != 3:
                continue
            type_name, line_text, encoded = parts
            try:
                program_line: Optional[int] = int(line_text)
            except ValueError:
                program_line = None
            if program_line is not None and program_line <= 0:
                program_line = None
            try:
                message = base64.b64decode(encoded).decode("utf-8", errors="replace")
            except Exception:
                message = ""
            exception = RawException(type_name, program_line, message)
    return tuple(probe_ids), exception


# ---------------------------------------------------------------------------
# Simulated backend
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimOutcome:
    """A scripted outcome, written in snippet-relative terms."""

    fired: frozenset[int] = frozenset()
    error: Optional[tuple[str, str, Optional[int]]] = None  # type, message, snippet line
    timed_out: bool = False
    wall_time: float = 0.0


CLEAN = SimOutcome()


class SimulatedBackend:
    """Replays scripted outcomes keyed by the prefix's rendered text.

    ``prefix_runs`` scripts stand-alone prefix executions (a list replays one
    outcome per attempt, repeating the last); ``composed_runs`` scripts
    prefix+snippet executions. Anything unscripted is a clean, empty run.
    """

    def __init__(
        self,
        prefix_runs: Optional[dict[str, object]] = None,
        composed_runs: Optional[dict[str, object]] = None,
        default_composed: SimOutcome = CLEAN,
    ):
        self._prefix_runs = dict(prefix_runs or {})
        self._composed_runs = dict(composed_runs or {})
        self._default_composed = default_composed
        self._attempt_counts: dict[str, int] = {}
        self.calls: list[RunnableProgram] = []

    def _pick(self, scripted: object, key: str) -> SimOutcome:
        if isinstance(scripted, SimOutcome):
            return scripted
        sequence = list(scripted)  # type: ignore[arg-type]
        attempt = self._attempt_counts.get(key, 0)
        self._attempt_counts[key] = attempt + 1
        return sequence[min(attempt, len(sequence) - 1)]

    def execute(self, program: RunnableProgram, timeout: float) -> RawOutcome:
        self.calls.append(program)
        if program.kind == "prefix":
            scripted = self._prefix_runs.get(program.text, CLEAN)
            sim = self._pick(scripted, "prefix:" + program.text)
            line = sim.error[2] if sim.error else None
            return RawOutcome(
                probe_ids=tuple(sorted(sim.fired)),
                exception=RawException(sim.error[0], line, sim.error[1]) if sim.error else None,
                timed_out=sim.timed_out,
                wall_time=sim.wall_time,
                exit_status=EXIT_CLEAN if sim.error is None else EXIT_EXCEPTION,
            )
        scripted = self._composed_runs.get(program.prefix_render, self._default_composed)
        sim = self._pick(scripted, "composed:" + program.prefix_render)
        exception = None
        if sim.error is not None:
            type_name, message, snippet_line = sim.error
            program_line = None
            if snippet_line is not None and program.composed is not None:
                program_line = program.composed.program_line_of(snippet_line)
            exception = RawException(type_name, program_line, message)
        return RawOutcome(
            probe_ids=tuple(sorted(sim.fired)),
            exception=exception,
            timed_out=sim.timed_out,
            wall_time=sim.wall_time,
            exit_status=EXIT_CLEAN if exception is None else EXIT_EXCEPTION,
        )


# ---------------------------------------------------------------------------
# Subprocess backend (drives the runtime shim)
# ---------------------------------------------------------------------------

_SAFE_ENV_KEYS = ("PATH", "HOME", "LANG", "LC_ALL", "TMPDIR", "TERM", "PYTHONIOENCODING")


def default_shim_entry() -> Path:
    """Locate the runtime shim's entry script (installed alongside the engine)."""
    override = os.environ.get("PREFIXER_SHIM")
    if override:
        return Path(override)
    try:
        import prefixer_shim
    except ImportError as error:
        raise HarnessError(
            "runtime shim not found: install the prefixer-shim package or set PREFIXER_SHIM"
        ) from error
    return Path(prefixer_shim.runner_path())


class SubprocessBackend:
    """Runs programs in a child interpreter under a hard timeout.

    Each run gets a fresh working directory; probe fires and the terminal
    exception arrive through the results file, so a crashed or killed child
    still yields whatever it recorded.
    """

    def __init__(
        self,
        python_executable: Optional[str] = None,
        shim_entry: Optional[Path] = None,
        work_root: Optional[Path] = None,
        keep_run_dirs: bool = False,
    ):
        self.python_executable = python_executable or sys.executable
        self.shim_entry = Path(shim_entry) if shim_entry else default_shim_entry()
        self.work_root = Path(work_root) if work_root else None
        self.keep_run_dirs = keep_run_dirs

    def _child_env(self, results_path: Path) -> dict[str, str]:
        env = {key: os.environ[key] for key in _SAFE_ENV_KEYS if key in os.environ}
        env[RESULTS_ENV_VAR] = str(results_path)
        return env

    def execute(self, program: RunnableProgram, timeout: float) -> RawOutcome:
        run_dir = Path(tempfile.mkdtemp(prefix="prefixer-run-", dir=self.work_root))
        try:
            program_path = run_dir / "program.py"
            program_path.write_text(program.text + "\n", encoding="utf-8")
            results_path = run_dir / "results.txt"
            command = [
                self.python_executable,
                str(self.shim_entry),
                str(program_path),
                str(results_path),
            ]
            started = time.monotonic()
            timed_out = False
            try:
                completed = subprocess.run(
                    command,
                    cwd=run_dir,
                    env=self._child_env(results_path),
                    capture_output=True,
                    timeout=timeout,
                    start_new_session=True,
                )
                exit_status = completed.returncode
                stdout, stderr = completed.stdout, completed.stderr
            except subprocess.TimeoutExpired as expired:
                timed_out = True
                exit_status = -1
                stdout = expired.stdout or b""
                stderr = expired.stderr or b""
            except OSError as error:
                raise HarnessError(f"failed to launch child interpreter: {error}") from error
            wall_time = time.monotonic() - started
            probe_ids, exception = parse_results_file(results_path)
            if timed_out:
                exception = None
            if exit_status == EXIT_SINK_FAILURE:
                raise HarnessError("runtime shim could not write its results file")
            return RawOutcome(
                probe_ids=probe_ids,
                exception=exception,
                timed_out=timed_out,
                wall_time=wall_time,
                exit_status=exit_status,
                stdout=stdout.decode("utf-8", errors="replace")[:OUTPUT_TRUNCATE_BYTES],
                stderr=stderr.decode("utf-8", errors="replace")[:OUTPUT_TRUNCATE_BYTES],
            )
        finally:
            if not self.keep_run_dirs:
                shutil.rmtree(run_dir, ignore_errors=True)


# ---------------------------------------------------------------------------
# Prefix post-processing
# ---------------------------------------------------------------------------


def _statement_spans(source: str) -> list[tuple[int, int]]:
    tree = ast.parse(source)
    return [(stmt.lineno, stmt.end_lineno or stmt.lineno) for stmt in tree.body]


def _rebuild_statement_lists(lines: list[str]) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Split surviving lines back into import and initialization chunks."""
    source = "\n".join(lines)
    tree = ast.parse(source)
    imports: list[str] = []
    initializations: list[str] = []
    for stmt in tree.body:
        chunk = "\n".join(lines[stmt.lineno - 1 : (stmt.end_lineno or stmt.lineno)])
        if isinstance(stmt, (ast.Import, ast.ImportFrom)):
            imports.append(chunk)
        else:
            initializations.append(chunk)
    return tuple(imports), tuple(initializations)


def post_process(prefix: Prefix, backend: ExecBackend, config: RunConfig) -> Prefix:
    """Iteratively execute the prefix alone, dropping statements that raise.

    Returns the prefix marked post-processed once a run is clean, or marked
    discarded after the attempt budget, a timeout, or an unlocatable error.
    """
    rendered = prefix.render()
    try:
        ast.parse(rendered)
    except SyntaxError:
        return prefix.with_status(PrefixStatus.DISCARDED)

    lines = rendered.splitlines()
    for _attempt in range(config.postprocess_attempts):
        text = "\n".join(lines)
        if not text.strip():
            return prefix.with_statements((), (), PrefixStatus.POST_PROCESSED)
        outcome = backend.execute(
            RunnableProgram(text=text, kind="prefix", prefix_render=text),
            config.prefix_timeout,
        )
        if outcome.timed_out:
            return prefix.with_status(PrefixStatus.DISCARDED)
        if outcome.exception is None:
            imports, initializations = _rebuild_statement_lists(lines)
            return prefix.with_statements(imports, initializations, PrefixStatus.POST_PROCESSED)
        error_line = outcome.exception.program_line
        if error_line is None or not 1 <= error_line <= len(lines):
            return prefix.with_status(PrefixStatus.DISCARDED)
        spans = _statement_spans(text)
        containing = next(
            (span for span in spans if span[0] <= error_line <= span[1]), None
        )
        if containing is None:
            return prefix.with_status(PrefixStatus.DISCARDED)
        del lines[containing[0] - 1 : containing[1]]
    return prefix.with_status(PrefixStatus.DISCARDED)


# ---------------------------------------------------------------------------
# Combined execution
# ---------------------------------------------------------------------------


def execute_with_snippet(
    prefix: Prefix,
    snippet: Snippet,
    backend: ExecBackend,
    config: RunConfig,
    instrumented: Optional[InstrumentedSnippet] = None,
) -> ExecutionOutcome:
    """Compose prefix and snippet, run them, and map results back."""
    if instrumented is None:
        instrumented = instrument(snippet)
    program = compose(prefix, instrumented)
    raw = backend.execute(
        RunnableProgram(
            text=program.text,
            kind="composed",
            prefix_render=prefix.render(),
            composed=program,
        ),
        config.prefix_timeout,
    )
    fired = frozenset(pid for pid in raw.probe_ids if pid in snippet.probe_ids)
    exception: Optional[ExceptionInfo] = None
    if raw.exception is not None and not raw.timed_out:
        snippet_line = None
        if raw.exception.program_line is not None:
            snippet_line = program.snippet_line_of(raw.exception.program_line)
        exception = ExceptionInfo(
            type_name=raw.exception.type_name,
            message=raw.exception.message,
            snippet_line=snippet_line,
        )
    return ExecutionOutcome(
        coverage=CoverageSet(fired),
        exception=exception,
        timed_out=raw.timed_out,
        wall_time=raw.wall_time,
    )


# ---------------------------------------------------------------------------
# Dependency planning and installation
# ---------------------------------------------------------------------------


def _load_alias_table() -> dict[str, str]:
    text = resources.files("prefixer.data").joinpath("import_aliases.json").read_text()
    return json.loads(text)


_ALIAS_TABLE: Optional[dict[str, str]] = None


def import_alias_table() -> dict[str, str]:
    global _ALIAS_TABLE
    if _ALIAS_TABLE is None:
        _ALIAS_TABLE = _load_alias_table()
    return _ALIAS_TABLE


@dataclass(frozen=True)
class DependencyPlan:
    import_names: frozenset[str]
    package_names: frozenset[str]
    already_installed: frozenset[str]
    to_install: frozenset[str]


def _top_level_imports(import_statements: tuple[str, ...]) -> set[str]:
    names: set[str] = set()
    for statement in import_statements:
        try:
            tree = ast.parse(statement)
        except SyntaxError:
            continue  # the line will fail during post-processing instead
        for node in ast.walk(tree):
            if isinstance(node, ast.Import):
                for alias in node.names:
                    names.add(alias.name.split(".")[0])
            elif isinstance(node, ast.ImportFrom):
                if node.level == 0 and node.module:
                    names.add(node.module.split(".")[0])
    return names


def _modules_available(python_executable: str, modules: list[str]) -> dict[str, bool]:
    if not modules:
        return {}
    if python_executable == sys.executable:
        import importlib.util

        availability = {}
        for module in modules:
            try:
                availability[module] = importlib.util.find_spec(module) is not None
            except (ImportError, ValueError):
                availability[module] = False
        return availability
    probe = (
        "import importlib.util, json, sys\n"
        "modules = json.loads(sys.argv[1])\n"
        "out = {}\n"
        "for module in modules:\n"
        "    try:\n"
        "        out[module] = importlib.util.find_spec(module) is not None\n"
        "    except Exception:\n"
        "        out[module] = False\n"
        "print(json.dumps(out))\n"
    )
    try:
        completed = subprocess.run(
            [python_executable, "-c", probe, json.dumps(modules)],
            capture_output=True,
            timeout=60,
        )
        return json.loads(completed.stdout.decode() or "{}")
    except Exception:
        return {module: False for module in modules}


def env_python(env_dir: Optional[str]) -> str:
    """The interpreter of the shared dependency environment."""
    if env_dir is None:
        return sys.executable
    candidate = Path(env_dir) / ("Scripts" if os.name == "nt" else "bin") / "python"
    return str(candidate)


def ensure_env(env_dir: str) -> str:
    """Create the shared environment if needed; returns its interpreter path."""
    python_path = env_python(env_dir)
    if not Path(python_path).exists():
        subprocess.run(
            [sys.executable, "-m", "venv", env_dir], check=True, capture_output=True
        )
    return python_path


def plan_dependencies(prefix: Prefix, env_dir: Optional[str]) -> DependencyPlan:
    """Map the prefix's imports to installable packages not yet in the env."""
    import_names = _top_level_imports(prefix.imports)
    stdlib = set(sys.stdlib_module_names)
    third_party = sorted(name for name in import_names if name not in stdlib)
    aliases = import_alias_table()
    package_of = {name: aliases.get(name, name) for name in third_party}
    availability = _modules_available(env_python(env_dir), third_party)
    already = frozenset(
        package_of[name] for name in third_party if availability.get(name, False)
    )
    packages = frozenset(package_of.values())
    return DependencyPlan(
        import_names=frozenset(import_names),
        package_names=packages,
        already_installed=already,
        to_install=packages - already,
    )


@dataclass
class InstallReport:
    attempted: list[str] = field(default_factory=list)
    succeeded: list[str] = field(default_factory=list)
    failed: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)


class InstallCache:
    """Remembers per-package install results so nothing is attempted twice.

    Installer invocations are serialized globally: the shared environment is
    a mutable resource and concurrent pip runs corrupt it.
    """

    def __init__(self, env_dir: Optional[str]):
        self.env_dir = env_dir
        self._lock = threading.Lock()
        self._results: dict[str, bool] = {}
        self._cache_path = Path(env_dir) / ".install_cache.json" if env_dir else None
        if self._cache_path and self._cache_path.exists():
            try:
                self._results.update(json.loads(self._cache_path.read_text()))
            except (OSError, json.JSONDecodeError):
                pass
        self.pip_invocations = 0

    def _persist(self) -> None:
        if self._cache_path is not None:
            try:
                self._cache_path.write_text(json.dumps(self._results, sort_keys=True))
            except OSError:
                pass

    def install(self, plan: DependencyPlan) -> InstallReport:
        report = InstallReport()
        with self._lock:
            python_path = env_python(self.env_dir)
            for package in sorted(plan.to_install):
                if package in self._results:
                    report.skipped.append(package)
                    continue
                report.attempted.append(package)
                self.pip_invocations += 1
                try:
                    completed = subprocess.run(
                        [python_path, "-m", "pip", "install", package],
                        capture_output=True,
                        timeout=600,
                    )
                    ok = completed.returncode == 0
                except (subprocess.TimeoutExpired, OSError):
                    ok = False
                self._results[package] = ok
                (report.succeeded if ok else report.failed).append(package)
            self._persist()
        return report


def install(plan: DependencyPlan, env_dir: Optional[str], cache: InstallCache) -> InstallReport:
    """Install the plan's missing packages through the shared cache."""
    if cache.env_dir != env_dir:
        raise HarnessError("install cache belongs to a different environment")
    return cache.install(plan)
