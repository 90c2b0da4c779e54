"""Runtime shim for the prefix-search engine.

The engine launches ``runner.py`` in a child interpreter; the runner executes
a composed program and streams probe fires plus the terminal exception to a
results file. Only the file protocol couples the two packages:

* ``P <id>`` per probe fire, appended and flushed immediately;
* at most one ``E <type>\\t<line>\\t<base64 message>`` record on an uncaught
  exception.
"""

import os.path

RESULTS_ENV_VAR = "_PROBE_RESULTS_FILE"


def runner_path():
    """Filesystem path of the runner entry script."""
    return os.path.join(os.path.dirname(os.path.abspath(__file__)), "runner.py")
