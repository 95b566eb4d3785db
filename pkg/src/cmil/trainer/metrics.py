"""Append-only metrics CSV with a fixed header.

Wall-clock time lives in a separate ``timing.csv`` so the metrics file stays
byte-identical across runs with the same config and seed.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

METRICS_HEADER = (
    "env_steps",
    "phase",
    "success_rate",
    "oracle_return",
    "oracle_gap",
    "model_loss",
    "disc_loss",
    "gap_estimate",
    "disagreement",
    "actor_loss",
    "critic_loss",
    "bc_nll",
)
TIMING_HEADER = ("env_steps", "wall_clock_s")


@dataclass
class MetricsRow:
    env_steps: int
    phase: str
    success_rate: float
    oracle_return: float
    oracle_gap: float
    model_loss: float = math.nan
    disc_loss: float = math.nan
    gap_estimate: float = math.nan
    disagreement: float = math.nan
    actor_loss: float = math.nan
    critic_loss: float = math.nan
    bc_nll: float = math.nan


assert tuple(f.name for f in fields(MetricsRow)) == METRICS_HEADER


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


class CsvLog:
    """Writes the header once, then appends and flushes one row at a time."""

    def __init__(self, path, header):
        self.path = Path(path)
        self.header = tuple(header)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerow(self.header)

    def append(self, values) -> None:
        if len(values) != len(self.header):
            raise ValueError(f"row has {len(values)} fields, header has {len(self.header)}")
        with open(self.path, "a", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerow([_fmt(v) for v in values])


class MetricsWriter(CsvLog):
    def __init__(self, path):
        super().__init__(path, METRICS_HEADER)

    def write(self, row: MetricsRow) -> None:
        self.append(list(asdict(row).values()))


def read_metrics(path) -> dict[str, list]:
    """Column-wise view of a metrics CSV; empty cells become NaN."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty metrics file")
        cols: dict[str, list] = {h: [] for h in header}
        for lineno, row in enumerate(reader, 2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            for h, cell in zip(header, row):
                if h == "phase":
                    cols[h].append(cell)
                else:
                    cols[h].append(float(cell) if cell else math.nan)
    return cols
