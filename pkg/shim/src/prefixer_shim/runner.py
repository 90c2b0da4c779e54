"""Execute a composed program and stream its outcome to the results file.

Invocation (by file path, under any interpreter):

    python runner.py <program.py> <results.txt>

The program runs at module scope. Its namespace receives exactly two
injected names beyond the standard module attributes: the probe function
``_probe_`` and the guard flag ``_shim_managed_``. The runner also puts its
own directory first on ``sys.path`` so the program's
``from _probe_runtime import _probe_`` line resolves without the engine
being installed in the subject environment.

Exit status: 0 on clean completion, 1 after an uncaught exception (recorded
as an ``E`` line carrying the deepest program-file line), 2 on usage errors,
3 when the results sink cannot be written.

Must stay dependency-free and 3.8-compatible.
"""

import base64
import os
import sys

RESULTS_ENV_VAR = "_PROBE_RESULTS_FILE"
EXIT_CLEAN = 0
EXIT_EXCEPTION = 1
EXIT_USAGE = 2
EXIT_SINK_FAILURE = 3


def _deepest_program_line(error, program_path):
    line = 0
    tb = error.__traceback__
    while tb is not None:
        if tb.tb_frame.f_code.co_filename == program_path:
            line = tb.tb_lineno
        tb = tb.tb_next
    return line


def _write_terminal_record(results_path, error, program_path):
    line = _deepest_program_line(error, program_path)
    message = base64.b64encode(str(error).encode("utf-8", "replace")).decode("ascii")
    try:
        with open(results_path, "a", encoding="utf-8") as sink:
            sink.write("E %s\t%d\t%s\n" % (type(error).__name__, line, message))
            sink.flush()
    except OSError:
        os._exit(EXIT_SINK_FAILURE)


def run_program(program_path, results_path):
    program_path = os.path.abspath(program_path)
    results_path = os.path.abspath(results_path)
    os.environ[RESULTS_ENV_VAR] = results_path
    sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

    from _probe_runtime import _probe_

    try:
        with open(program_path, "r", encoding="utf-8") as handle:
            source = handle.read()
    except OSError as error:
        sys.stderr.write("runner: cannot read program: %s\n" % error)
        return EXIT_USAGE

    code = compile(source, program_path, "exec")
    namespace = {
        "__name__": "__main__",
        "__file__": program_path,
        "__builtins__": __builtins__,
        "_probe_": _probe_,
        "_shim_managed_": True,
    }
    try:
        exec(code, namespace)
    except BaseException as error:  # records SystemExit and friends too
        _write_terminal_record(results_path, error, program_path)
        return EXIT_EXCEPTION
    return EXIT_CLEAN


def main(argv):
    if len(argv) != 3:
        sys.stderr.write("usage: python runner.py <program.py> <results.txt>\n")
        return EXIT_USAGE
    return run_program(argv[1], argv[2])


if __name__ == "__main__":
    sys.exit(main(sys.argv))
