"""Metrics computed from completion traces."""
from __future__ import annotations

from dataclasses import dataclass, field
from statistics import fmean

from ..kernel import percentile

WARMUP_FRACTION = 0.10


@dataclass
class Completion:
    """One finished message: doorbell time, completion time (ps), payload bytes."""
    start: int
    end: int
    nbytes: int


@dataclass
class RunMetrics:
    bandwidth_gbps: float = 0.0
    throughput_mops: float = 0.0
    lat_mean_ns: float = 0.0
    lat_p50_ns: float = 0.0
    lat_p99_ns: float = 0.0
    retx_bytes: int = 0
    miss_count: int = 0
    extra: dict = field(default_factory=dict)


def steady_rate(completions: list[Completion], warmup: float = WARMUP_FRACTION) -> tuple[float, float]:
    """(bytes/s, messages/s) over completions after the warm-up prefix.

    The window runs from the last warm-up completion to the final completion,
    so it counts exactly the messages that finished inside it.
    """
    ends = sorted(c.end for c in completions)
    if len(ends) < 2:
        raise ValueError("need at least two completions")
    by_end = sorted(completions, key=lambda c: c.end)
    k = min(int(len(ends) * warmup), len(ends) - 2)
    t0, t1 = ends[k], ends[-1]
    if t1 <= t0:
        raise ValueError("degenerate measurement window")
    seconds = (t1 - t0) * 1e-12
    tail = by_end[k + 1:]
    return sum(c.nbytes for c in tail) / seconds, len(tail) / seconds


def latency_stats(completions: list[Completion]) -> tuple[float, float, float]:
    lat = [(c.end - c.start) / 1000.0 for c in completions]
    if not lat:
        return 0.0, 0.0, 0.0
    return fmean(lat), percentile(lat, 50), percentile(lat, 99)


def summarize_run(completions: list[Completion], latency_run: list[Completion] | None = None,
                  retx_bytes: int = 0, miss_count: int = 0, **extra) -> RunMetrics:
    bps, mps = steady_rate(completions)
    mean, p50, p99 = latency_stats(latency_run if latency_run is not None else completions)
    return RunMetrics(bps * 8 / 1e9, mps / 1e6, mean, p50, p99, retx_bytes, miss_count, extra)
