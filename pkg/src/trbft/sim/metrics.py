from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List

from ..messages import CONSENSUS_PHASES


def percentile(values: List[int], q: float) -> int:
    """Nearest-rank percentile; 0 for an empty list."""
    if not values:
        return 0
    ordered = sorted(values)
    rank = max(1, math.ceil(q / 100 * len(ordered)))
    return ordered[rank - 1]


@dataclass
class Metrics:
    requests: int = 0
    completed: int = 0
    phase_counts: Counter = field(default_factory=Counter)
    latencies: List[int] = field(default_factory=list)
    end_tick: int = 0
    safety: bool = True
    liveness: bool = False
    violations: List[str] = field(default_factory=list)
    notes: Counter = field(default_factory=Counter)
    reply_groups: List[tuple] = field(default_factory=list)

    @property
    def consensus_messages(self) -> int:
        return sum(self.phase_counts[p] for p in CONSENSUS_PHASES)

    @property
    def latency_p50(self) -> int:
        return percentile(self.latencies, 50)

    @property
    def latency_p99(self) -> int:
        return percentile(self.latencies, 99)

    @property
    def throughput(self) -> float:
        """Completed requests per million ticks."""
        return self.completed * 1_000_000 / self.end_tick if self.end_tick else 0.0

    def summary(self) -> Dict[str, object]:
        return {
            "requests": self.requests,
            "completed": self.completed,
            "consensus_messages": self.consensus_messages,
            "phase_counts": dict(sorted(self.phase_counts.items())),
            "latency_p50_ticks": self.latency_p50,
            "latency_p99_ticks": self.latency_p99,
            "throughput": round(self.throughput, 3),
            "end_tick": self.end_tick,
            "safety": self.safety,
            "liveness": self.liveness,
            "violations": list(self.violations),
        }
