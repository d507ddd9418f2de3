"""Scenario files: validation, sweep execution, CSV output and acceptance checks."""
from __future__ import annotations

import copy
import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from ..fabric import config_digest
from ..formats import Opcode
from .blocks import BLOCKS, block_point
from .kv_bench import kv_point
from .metrics import RunMetrics
from .rdma_bench import latency_point, throughput_point
from .retx import retx_point

CSV_COLUMNS = ["scenario", "sweep_param", "sweep_value", "bandwidth_gbps", "throughput_mops",
               "lat_mean_ns", "lat_p50_ns", "lat_p99_ns", "retx_bytes", "miss_count", "seed",
               "config_digest"]
KINDS = ("microbench", "rdma", "retx", "kv")
METRICS = CSV_COLUMNS[3:10]


class ScenarioError(ValueError):
    """Invalid scenario; the message starts with the offending key path."""


@dataclass
class Row:
    scenario: str
    series: str
    param: str
    value: float
    metrics: RunMetrics
    seed: int
    digest: str

    @property
    def sweep_param(self) -> str:
        return f"{self.series}.{self.param}" if self.series else self.param

    def as_csv(self) -> list[str]:
        m = self.metrics
        return [self.scenario, self.sweep_param, _num(self.value), f"{m.bandwidth_gbps:.4f}",
                f"{m.throughput_mops:.4f}", f"{m.lat_mean_ns:.2f}", f"{m.lat_p50_ns:.2f}",
                f"{m.lat_p99_ns:.2f}", str(m.retx_bytes), str(m.miss_count), str(self.seed), self.digest]

    def get(self, metric: str) -> float:
        return float(getattr(self.metrics, metric))


def _num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


# -- loading ------------------------------------------------------------------

def bundled_names() -> list[str]:
    files = resources.files("nicsim.bench").joinpath("scenarios")
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".json"))


def load(name_or_path: str) -> dict:
    p = Path(name_or_path)
    if p.suffix == ".json" and p.exists():
        text = p.read_text()
    elif name_or_path in bundled_names():
        text = resources.files("nicsim.bench").joinpath("scenarios", f"{name_or_path}.json").read_text()
    else:
        raise ScenarioError(f"<file>: no scenario file or bundled scenario named {name_or_path!r}")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"<file>: invalid JSON at line {e.lineno}: {e.msg}") from None
    validate(data)
    return data


def _need(d: dict, key: str, types, path: str):
    if key not in d:
        raise ScenarioError(f"{path}{key}: required")
    if not isinstance(d[key], types) or isinstance(d[key], bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ScenarioError(f"{path}{key}: expected {getattr(types, '__name__', types)}")
    return d[key]


def validate(s: dict) -> None:
    if not isinstance(s, dict):
        raise ScenarioError("<root>: expected an object")
    _need(s, "name", str, "")
    kind = _need(s, "kind", str, "")
    if kind not in KINDS:
        raise ScenarioError(f"kind: must be one of {', '.join(KINDS)}")
    if "seed" in s and (not isinstance(s["seed"], int) or s["seed"] < 0):
        raise ScenarioError("seed: must be a non-negative integer")
    sweep = _need(s, "sweep", dict, "")
    _need(sweep, "param", str, "sweep.")
    values = _need(sweep, "values", list, "sweep.")
    if not values:
        raise ScenarioError("sweep.values: must not be empty")
    for i, v in enumerate(values):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0 or v != v or v == float("inf"):
            raise ScenarioError(f"sweep.values[{i}]: must be a finite positive number")
    series = sweep.get("series", [""])
    if not isinstance(series, list) or not series:
        raise ScenarioError("sweep.series: must be a non-empty list")
    if kind == "rdma":
        for i, m in enumerate(series):
            if m not in ("all_hit", "all_miss"):
                raise ScenarioError(f"sweep.series[{i}]: cache mode must be all_hit or all_miss")
    if kind == "retx":
        for i, m in enumerate(series):
            if m not in ("gbn", "sr"):
                raise ScenarioError(f"sweep.series[{i}]: algorithm must be gbn or sr")
    if kind == "microbench":
        for i, m in enumerate(series):
            if m not in BLOCKS:
                raise ScenarioError(f"sweep.series[{i}]: unknown block {m!r}")
    w = s.get("workload", {})
    if not isinstance(w, dict):
        raise ScenarioError("workload: expected an object")
    for k, v in w.items():
        if k == "opcode":
            if v not in ("RDMA_WRITE", "RDMA_READ"):
                raise ScenarioError("workload.opcode: must be RDMA_WRITE or RDMA_READ")
        elif k == "loss_model":
            if v not in ("bernoulli", "stratified"):
                raise ScenarioError("workload.loss_model: must be bernoulli or stratified")
        elif isinstance(v, bool) or not isinstance(v, (int, float)) or v < 0:
            raise ScenarioError(f"workload.{k}: must be a non-negative number")
    checks = s.get("accept", [])
    if not isinstance(checks, list):
        raise ScenarioError("accept: expected a list")
    for i, c in enumerate(checks):
        p = f"accept[{i}]."
        if not isinstance(c, dict):
            raise ScenarioError(f"accept[{i}]: expected an object")
        _need(c, "name", str, p)
        for side in ("row", "over", "minus"):
            if side in c:
                r = c[side]
                if not isinstance(r, dict):
                    raise ScenarioError(f"{p}{side}: expected an object")
                _need(r, "param", str, f"{p}{side}.")
                _need(r, "value", (int, float), f"{p}{side}.")
                if _need(r, "metric", str, f"{p}{side}.") not in METRICS:
                    raise ScenarioError(f"{p}{side}.metric: unknown metric {r['metric']!r}")
        if "over" in c and "minus" in c:
            raise ScenarioError(f"{p}minus: cannot be combined with over")
        if "row" not in c:
            raise ScenarioError(f"{p}row: required")
        if "min" not in c and "max" not in c:
            raise ScenarioError(f"{p}min: a min or max bound is required")


# -- running -------------------------------------------------------------------

def _point(s: dict, series: str, value: float, seed: int) -> RunMetrics:
    w = s.get("workload", {})
    kind = s["kind"]
    if kind == "microbench":
        lat, rate, bw = block_point(series, int(value), int(w.get("n_items", 2000)))
        return RunMetrics(bw / 1e9, rate / 1e6, lat, lat, lat)
    if kind == "rdma":
        opcode = Opcode[w.get("opcode", "RDMA_WRITE")]
        size = int(value)
        kw = {"latency_ns": w.get("link_latency_ns", 100)}
        if "quantum" in w:
            kw["nic"] = {"quantum": int(w["quantum"])}
        m, _ = throughput_point(series, size, int(w.get("n_msgs", 2000)), int(w.get("n_qps", 8)),
                                opcode, seed, int(w.get("outstanding", 16)), **kw)
        m.lat_mean_ns, m.lat_p50_ns, m.lat_p99_ns = latency_point(
            series, size, int(w.get("latency_msgs", 30)), opcode, seed, **kw)
        return m
    if kind == "retx":
        return retx_point(series, value, int(w.get("n_packets", 60000)), int(w.get("payload", 4096)),
                          w.get("link_latency_us", 125.0), w.get("bandwidth_gbps", 102.4),
                          int(w.get("window", 4096)), seed, w.get("loss_model", "stratified"))
    if kind == "kv":
        return kv_point(int(value), int(w.get("n_requests", 20000)), int(w.get("n_keys", 512)),
                        int(w.get("n_queues", 16)), seed)
    raise ScenarioError(f"kind: unsupported {kind!r}")


def _point_job(job: tuple) -> RunMetrics:
    return _point(*job)


def run_scenario(s: dict, seed: int | None = None, jobs: int = 1) -> list[Row]:
    """One simulation per sweep point. Points may run in worker processes;
    rows always come back in sweep order."""
    s = copy.deepcopy(s)
    validate(s)
    if seed is not None:
        s["seed"] = seed
    seed = int(s.get("seed", 0))
    sweep = s["sweep"]
    points = [(series, value) for series in sweep.get("series", [""]) for value in sweep["values"]]
    if s["kind"] == "retx" and sweep.get("baseline", True):
        points.append(("lossless", 0))  # shared lossless reference
    work = [(s, "sr" if series == "lossless" else series, float(value) if series == "lossless" else value, seed)
            for series, value in points]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_point_job, work))
    else:
        results = [_point_job(w) for w in work]
    return [Row(s["name"], series, sweep["param"], value, m, seed,
                config_digest({"scenario": s, "series": series, "value": value}))
            for (series, value), m in zip(points, results)]


def to_csv(rows: list[Row]) -> str:
    if not rows:
        raise ValueError("no results to write")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow(r.as_csv())
    return buf.getvalue()


def emit_csv(rows: list[Row], path: str | os.PathLike) -> Path:
    text = to_csv(rows)
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text)
    return p


# -- acceptance ------------------------------------------------------------------

def _lookup(rows: list[Row], ref: dict) -> float:
    for r in rows:
        if r.sweep_param == ref["param"] and float(r.value) == float(ref["value"]):
            return r.get(ref["metric"])
    raise KeyError(f"no row {ref['param']}={ref['value']}")


def evaluate(s: dict, rows: list[Row]) -> list[tuple[str, bool, str]]:
    """Each bundled check as (name, passed, detail)."""
    out = []
    for c in s.get("accept", []):
        try:
            v = _lookup(rows, c["row"])
            if "over" in c:
                v = v / _lookup(rows, c["over"])
            if "minus" in c:
                v = v - _lookup(rows, c["minus"])
        except (KeyError, ZeroDivisionError) as e:
            out.append((c["name"], False, f"missing data: {e}"))
            continue
        ok = ("min" not in c or v >= c["min"]) and ("max" not in c or v <= c["max"])
        lo = c.get("min", "-inf")
        hi = c.get("max", "inf")
        out.append((c["name"], ok, f"{v:.4g} in [{lo}, {hi}]"))
    return out


def summarize(s: dict, rows: list[Row]) -> str:
    if not rows:
        raise ValueError("no results to summarize")
    lines = [f"{s['name']} ({s['kind']}, seed {rows[0].seed})",
             f"{'point':<28}{'Gbps':>10}{'Mops':>10}{'p50 ns':>10}{'p99 ns':>10}{'retx B':>12}{'misses':>9}"]
    for r in rows:
        m = r.metrics
        lines.append(f"{r.sweep_param + '=' + _num(r.value):<28}{m.bandwidth_gbps:>10.2f}{m.throughput_mops:>10.2f}"
                     f"{m.lat_p50_ns:>10.1f}{m.lat_p99_ns:>10.1f}{m.retx_bytes:>12}{m.miss_count:>9}")
    for name, ok, detail in evaluate(s, rows):
        lines.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return "\n".join(lines)
