import dataclasses as dc
import json
import logging
import math
import os
import sys
from typing import Any, TextIO

import numpy as np
from dataclasses_json import dataclass_json

from derand.error import ReportError

logger = logging.getLogger(__name__)

@dataclass_json
@dc.dataclass
class RowReport:
    deviation: float = dc.field()
    "|sum_j a_ij (p_j - q_j)|"
    delta: float = dc.field()
    prob_bad: float = dc.field()
    "Failure bound of the row, capped at 1"
    bad: bool = dc.field()

@dataclass_json
@dc.dataclass
class RunReport:
    """
    Outcome of one command, serialized as the JSON report.
    """
    mode: str = dc.field()
    k: int = dc.field()
    "Requested granularity"
    k_effective: int = dc.field()
    "Granularity the walk ran with"
    profile: str = dc.field()
    m: int = dc.field()
    n: int = dc.field()
    rows: list[RowReport] = dc.field(default_factory=list)
    bad_count: int = dc.field(default=0)
    prob_bad_sum: float = dc.field(default=0.0)
    work: int = dc.field(default=0)
    "Seed search operation proxy summed over every step"
    steps: int = dc.field(default=0)
    wall_time: float | None = dc.field(default=None)
    "Seconds, only when timing was requested"
    q: list[float] | None = dc.field(default=None)
    "Output vector when it is not written to its own file"
    details: dict[str, Any] = dc.field(default_factory=dict)
    "Mode specific report"

    @classmethod
    def from_rows (
        cls, mode: str, k: int, k_effective: int, profile: str, n: int,
        deviations: np.ndarray, delta: np.ndarray, prob_bad: np.ndarray, bad: np.ndarray,
        **fields: Any
    ) -> "RunReport":
        flags = np.zeros(len(delta), dtype=bool)
        flags[np.asarray(bad, dtype=np.int64)] = True
        prob_bad = np.minimum(np.asarray(prob_bad, dtype=np.float64), 1.0)

        rows = [
            RowReport(
                deviation=float(dev), delta=float(bound), prob_bad=float(prob), bad=bool(flag)
            )
            for dev, bound, prob, flag in zip(deviations, delta, prob_bad, flags)
        ]

        return cls(
            mode=mode, k=k, k_effective=k_effective, profile=profile, m=len(rows), n=n,
            rows=rows, bad_count=int(flags.sum()), prob_bad_sum=math.fsum(prob_bad.tolist()),
            **fields
        )

    @property
    def bad (self) -> list[int]:
        return [i for i, row in enumerate(self.rows) if row.bad]

def finite_json (value: Any) -> Any:
    """
    Replaces non-finite floats by ``None`` so that the output stays strict JSON.
    """
    if isinstance(value, float):
        return value if math.isfinite(value) else None

    if isinstance(value, dict):
        return { key: finite_json(item) for key, item in value.items() }

    if isinstance(value, (list, tuple)):
        return [finite_json(item) for item in value]

    return value

def dumps_report (report: Any) -> str:
    """
    Canonical JSON: sorted keys and shortest round-trip floats.
    """
    payload = report.to_dict(encode_json=True) if hasattr(report, "to_dict") else report
    return json.dumps(finite_json(payload), sort_keys=True, indent=2, allow_nan=False) + "\n"

def write_report (report: Any, destination: str | os.PathLike | TextIO | None = None):
    """
    Writes the report as canonical JSON.

    :param destination: Path, open stream, ``"-"`` or ``None`` for standard output
    :raises ReportError: If the destination cannot be written
    """
    text = dumps_report(report)

    if destination is None or destination == "-":
        sys.stdout.write(text)
        return

    if hasattr(destination, "write"):
        destination.write(text)
        return

    try:
        with open(destination, "w", encoding="utf-8") as handle:
            handle.write(text)

    except OSError as exc:
        raise ReportError(f"Cannot write report to {destination}: {exc}") from exc

    logger.debug(f"Report written to {destination}")

def read_report (source: str | os.PathLike) -> RunReport:
    try:
        with open(source, encoding="utf-8") as handle:
            return RunReport.from_dict(json.load(handle))

    except (OSError, ValueError, KeyError) as exc:
        raise ReportError(f"Cannot read report {source}: {exc}") from exc
