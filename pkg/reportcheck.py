"""Report checker for scripted runs.

Exits 0 only when the report file can be read, is a JSON object, and every
"passed" flag in it is true. Anything unreadable counts as a failure.
"""

import json
import sys

from module.report import all_passed


def check(path: str) -> int:
    """Return a process exit code: 0 all passed, 1 otherwise."""
    try:
        with open(path, encoding="utf-8") as handle:
            payload = json.load(handle)
    except (OSError, ValueError):
        return 1

    if not isinstance(payload, dict):
        return 1
    return 0 if all_passed(payload) else 1


if __name__ == "__main__":
    if len(sys.argv) != 2:
        sys.stderr.write("usage: reportcheck.py REPORT\n")
        sys.exit(2)
    sys.exit(check(sys.argv[1]))
