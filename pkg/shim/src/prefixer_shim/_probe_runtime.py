"""The probe function injected into (and importable by) composed programs.

``_probe_(id)`` appends one ``P <id>`` record to the results file named by
the ``_PROBE_RESULTS_FILE`` environment variable and flushes immediately, so
records written before a crash or a kill survive. The probe itself never
raises into the program; if the sink cannot be written the process exits
with status 3 so the parent can tell a harness failure from a program error.

Must stay dependency-free and runnable by any CPython >= 3.8: it executes
inside whatever interpreter the shared environment provides.
"""

import os

RESULTS_ENV_VAR = "_PROBE_RESULTS_FILE"
SINK_FAILURE_EXIT = 3

_sink = None


def _open_sink():
    global _sink
    if _sink is None:
        path = os.environ.get(RESULTS_ENV_VAR)
        if not path:
            _sink = False  # no sink configured: probes are dropped
        else:
            _sink = open(path, "a", buffering=1, encoding="utf-8")
    return _sink


def _probe_(probe_id):
    try:
        sink = _open_sink()
        if sink:
            sink.write("P %d\n" % probe_id)
            sink.flush()
    except OSError:
        os._exit(SINK_FAILURE_EXIT)
