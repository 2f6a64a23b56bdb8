# apps/experiments/metrics.py
from dataclasses import astuple, dataclass, field, fields
from typing import List, Sequence

import numpy as np
import pandas as pd

from apps.crowd.state import (
    CrowdState,
    DimensionError,
    energy_distribution,
    total_energy,
    variation_distance,
)

CSV_COLUMNS = [
    "method",
    "rep_count",
    "iteration",
    "total_energy",
    "variation_distance",
    "meetings",
    "balanced_count",
    "exec_time_us",
]


@dataclass(frozen=True)
class IterationRecord:
    iteration: float
    total_energy: float
    variation_distance: float
    meetings: float
    balanced_count: float
    exec_time_us: float
    # Kept for conservation checks; not part of the CSV.
    transmitted: float = 0.0


RECORD_FIELDS = [f.name for f in fields(IterationRecord)]


@dataclass
class MetricsTrace:
    method: str = ""
    rep_count: int = 1
    records: List[IterationRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([astuple(r) for r in self.records], columns=RECORD_FIELDS)
        frame.insert(0, "rep_count", self.rep_count)
        frame.insert(0, "method", self.method)
        frame["iteration"] = frame["iteration"].astype(int)
        return frame[CSV_COLUMNS]


def crowd_variation(crowd: CrowdState) -> float:
    """Distance of the energy distribution from uniform; 0 for an all-zero crowd."""
    if crowd.m == 0 or total_energy(crowd) <= 0:
        return 0.0
    return variation_distance(energy_distribution(crowd), np.full(crowd.m, 1.0 / crowd.m))


def iteration_metrics(crowd: CrowdState, meetings: int, exec_time_us: float,
                      iteration: int = 0, transmitted: float = 0.0) -> IterationRecord:
    return IterationRecord(
        iteration=iteration,
        total_energy=total_energy(crowd),
        variation_distance=crowd_variation(crowd),
        meetings=meetings,
        balanced_count=int(np.count_nonzero(crowd.complete_mask())),
        exec_time_us=float(exec_time_us),
        transmitted=float(transmitted),
    )


def aggregate(traces: Sequence[MetricsTrace]) -> MetricsTrace:
    """Element-wise mean of equally long traces."""
    if not traces:
        raise DimensionError("Nothing to aggregate.")
    lengths = {len(t) for t in traces}
    if len(lengths) != 1:
        raise DimensionError(f"Traces have different lengths: {sorted(lengths)}")
    method = traces[0].method
    if not lengths.pop():
        return MetricsTrace(method=method, rep_count=len(traces))

    stacked = np.stack([np.array([astuple(r) for r in t.records], dtype=float) for t in traces])
    means = stacked.mean(axis=0)
    return MetricsTrace(
        method=method,
        rep_count=sum(t.rep_count for t in traces),
        records=[IterationRecord(*(float(v) for v in row)) for row in means],
    )
