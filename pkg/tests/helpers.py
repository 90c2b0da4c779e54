"""Shared fixtures and helpers for the test suite."""

from __future__ import annotations

import json
import sys
import types
from pathlib import Path

from prefixer.instrument import make_snippet
from prefixer.model import Snippet

FIXTURES = Path(__file__).parent / "fixtures"
SNIPPETS = FIXTURES / "snippets"
GOLDENS = FIXTURES / "goldens"


def load_snippet(name: str) -> Snippet:
    path = SNIPPETS / f"{name}.py"
    return make_snippet(name, path.read_text().rstrip("\n"))


def response_json(imports: list[str], initialization: list[str]) -> str:
    """A raw generator reply in the wire format."""
    return json.dumps({"imports": imports, "initialization": initialization}, indent=2)


class ProbeCollector:
    """In-process stand-in for the probe runtime; records fired ids in order."""

    def __init__(self) -> None:
        self.fired: list[int] = []

    def __call__(self, probe_id: int) -> None:
        self.fired.append(probe_id)


def exec_instrumented(source: str, extra_globals: dict | None = None):
    """Execute instrumented source in-process, returning (fired, error or None).

    Installs a fake probe-runtime module so composed programs (which import
    it) run without any child interpreter.
    """
    collector = ProbeCollector()
    fake = types.ModuleType("_probe_runtime")
    fake._probe_ = collector
    previous = sys.modules.get("_probe_runtime")
    sys.modules["_probe_runtime"] = fake
    namespace: dict = {"_probe_": collector, "__name__": "__main__"}
    if extra_globals:
        namespace.update(extra_globals)
    error = None
    try:
        exec(compile(source, "<instrumented>", "exec"), namespace)
    except BaseException as caught:  # noqa: BLE001 - tests inspect any failure
        error = caught
    finally:
        if previous is None:
            sys.modules.pop("_probe_runtime", None)
        else:
            sys.modules["_probe_runtime"] = previous
    return collector.fired, error


# ---------------------------------------------------------------------------
# The running example: five prefix texts matching the narrated walk-through.
# ---------------------------------------------------------------------------

# Step 1: the register factory takes two arguments, so calling it with one
# raises "missing 1 required positional argument: 'alias'".
STEP1_PREFIX = response_json(
    ["from unittest.mock import Mock"],
    [
        "def dummy_register_func(name, alias):\n"
        "    return name + '.' + alias + '@example.com'",
        "self = Mock()",
        "self.user_type = 'admin'",
        "self.name = 'john'",
        "self.alias = 'jd'",
        "get_register_func = dummy_register_func",
    ],
)

# Step 2: only the factory changed; it now returns a two-argument function
# whose result contains "@", so the snippet runs cleanly down the "@" branch.
STEP2_PREFIX = response_json(
    ["from unittest.mock import Mock"],
    [
        "def dummy_register_func(user_type):\n"
        "    def register(name, alias):\n"
        "        return name + '.' + alias + '@example.com'\n"
        "    return register",
        "self = Mock()",
        "self.user_type = 'admin'",
        "self.name = 'john'",
        "self.alias = 'jd'",
        "get_register_func = dummy_register_func",
    ],
)

# Step 3a: an email without "@" reaches the inner else branch.
STEP3_PREFIX_NO_AT = response_json(
    ["from unittest.mock import Mock"],
    [
        "def dummy_register_func(user_type):\n"
        "    def register(name, alias):\n"
        "        return name + '_' + alias\n"
        "    return register",
        "self = Mock()",
        "self.user_type = 'admin'",
        "self.name = 'john'",
        "self.alias = 'jd'",
        "get_register_func = dummy_register_func",
    ],
)

# Step 3b: the factory returns None, reaching the outer else branch.
STEP3_PREFIX_NONE = response_json(
    ["from unittest.mock import Mock"],
    [
        "def dummy_register_func(user_type):\n    return None",
        "self = Mock()",
        "self.user_type = 'admin'",
        "self.name = 'john'",
        "self.alias = 'jd'",
        "get_register_func = dummy_register_func",
    ],
)

# Step 3c: the factory raises SystemExit, reaching the except handler.
STEP3_PREFIX_EXIT = response_json(
    ["from unittest.mock import Mock"],
    [
        "def dummy_register_func(user_type):\n    raise SystemExit(1)",
        "self = Mock()",
        "self.user_type = 'admin'",
        "self.name = 'john'",
        "self.alias = 'jd'",
        "get_register_func = dummy_register_func",
    ],
)

REGISTER_ERROR_MESSAGE = (
    "dummy_register_func() missing 1 required positional argument: 'alias'"
)


def rendered(raw_response: str) -> str:
    """The prefix render text for a raw generator reply."""
    payload = json.loads(raw_response)
    return "\n".join([*payload["imports"], *payload["initialization"]])
