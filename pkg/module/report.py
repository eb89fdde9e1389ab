"""Run reports.

A report echoes the command, its parameters and the seed, so the run can be
repeated from the report alone. Apart from "wall_time", two runs with the
same arguments and seed write the same bytes.
"""

import json
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from logger import setup_logger

logger = setup_logger(__name__)


@dataclass
class RunReport:
    command: str
    argv: List[str]
    params: Dict[str, Any]
    seed: Optional[int]
    outputs: Dict[str, Any] = field(default_factory=dict)
    passed: Optional[bool] = None
    started: float = field(default_factory=time.monotonic)
    wall_time: Optional[float] = None

    def finish(self, outputs: Dict[str, Any], passed: Optional[bool]) -> "RunReport":
        self.outputs = outputs
        self.passed = passed
        self.wall_time = round(time.monotonic() - self.started, 3)
        return self

    def to_json(self) -> dict:
        payload = {
            "format": 1,
            "command": self.command,
            "argv": self.argv,
            "params": self.params,
            "seed": self.seed,
            "outputs": self.outputs,
            "wall_time": self.wall_time,
        }
        if self.passed is not None:
            payload["passed"] = self.passed
        return payload


def render(report: RunReport) -> str:
    return json.dumps(report.to_json(), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_report(report: RunReport, path: Optional[str]) -> None:
    """Write to path atomically, or to stdout when path is None."""
    text = render(report)
    if path is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    tmp_path = f"{path}.tmp"
    with open(tmp_path, "w", encoding="utf-8") as handle:
        handle.write(text)
    os.replace(tmp_path, path)
    logger.info(f"Report written to {path}")


def all_passed(payload: Any) -> bool:
    """False iff some "passed" key anywhere in the payload is not true.

    A null "passed" marks an informational entry and is skipped.
    """
    if isinstance(payload, dict):
        for key, value in payload.items():
            if key == "passed" and value is not None and value is not True:
                return False
            if not all_passed(value):
                return False
        return True
    if isinstance(payload, list):
        return all(all_passed(item) for item in payload)
    return True
