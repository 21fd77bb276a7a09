"""CSV output with a fixed, reproducible number format."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

from ..engine import StepRecord

__all__ = ["format_value", "write_csv", "StepLogWriter", "STEP_LOG_COLUMNS"]


def format_value(x) -> str:
    """Render one CSV cell.

    Floats use Python's shortest round-trip ``repr``, which switches to
    scientific notation exactly when ``|x| < 1e-4`` (or ``|x| >= 1e16``).
    Booleans become ``0``/``1`` so every column stays numeric.
    """
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, str):
        return x
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if x == 0.0:
        return "0.0"
    return repr(x)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> int:
    """Write ``rows`` under ``header``; returns the number of data rows.

    Raises:
        ValueError: if a row length differs from the header.
    """
    n = 0
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"row {n} has {len(row)} cells, header has {len(header)}")
            writer.writerow([format_value(v) for v in row])
            n += 1
    return n


STEP_LOG_COLUMNS = ("run", "step", "param", "update_norm", "lowrank_norm", "lambda_norm", "sigma", "subspace_updated")


class StepLogWriter:
    """Collects engine :class:`StepRecord` objects for one or more runs.

    Use :meth:`sink` to get a callable for an optimizer, then :meth:`save`.
    """

    def __init__(self):
        self.rows: list[tuple] = []

    def sink(self, run: str):
        def _sink(rec: StepRecord) -> None:
            self.rows.append(
                (run, rec.step, rec.name, rec.update_norm, rec.lowrank_norm, rec.lambda_norm, rec.sigma, rec.subspace_updated)
            )

        return _sink

    def save(self, path) -> int:
        return write_csv(path, STEP_LOG_COLUMNS, self.rows)
