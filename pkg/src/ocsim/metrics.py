"""Per-run report, class-separated statistics and run comparison."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .switch import footprint

MINUTE_US = 60_000_000
PERCENTILES = (50, 90, 99)
CSV_COLUMNS = ("metric", "class", "mode", "topology", "value", "ci_low", "ci_high", "trials")

_FLOW_COLUMNS = {
    "flow_id": np.int64, "coflow_id": np.int64, "elephant": np.bool_, "size": np.float64,
    "start_us": np.int64, "end_us": np.int64, "tagged": np.bool_, "tag_us": np.int64,
    "circuit_bytes": np.float64, "delivered": np.float64,
}


@dataclass
class MetricsReport:
    """Everything a finished run produces.  Flow records are columnar arrays."""
    label: dict
    config: dict
    flows: dict[str, np.ndarray]
    circuits_used: dict[int, list]           # flow_id -> [[src, dst], ...]
    coflows: dict[str, np.ndarray]           # coflow_id, arrival_us, end_us, width
    footprint_series: list[dict]
    circuit_events: list[tuple]              # (t_us, op, src, dst)
    circuit_bytes: dict[str, float]          # "src-dst" -> bytes carried
    rule_log: list[tuple] = field(default_factory=list)
    overflows: int = 0
    reconfigurations: int = 0
    n_events: int = 0
    event_log_hash: str = ""
    sim_end_us: int = 0
    wallclock_s: float = 0.0

    # -- derived ------------------------------------------------------------
    @property
    def fct(self) -> np.ndarray:
        return self.flows["end_us"] - self.flows["start_us"]

    @property
    def mean_rate(self) -> np.ndarray:
        return self.flows["size"] * 8e6 / np.maximum(self.fct, 1)

    @property
    def coflow_completion(self) -> np.ndarray:
        return self.coflows["end_us"] - self.coflows["arrival_us"]

    @property
    def total_bytes(self) -> float:
        return float(self.flows["size"].sum())

    @property
    def delivered_bytes(self) -> float:
        return float(self.flows["delivered"].sum())

    @property
    def seed(self):
        return self.label.get("seed")

    def peak_concurrent_rules(self) -> int:
        return max((b["peak_concurrent_max"] for b in self.footprint_series), default=0)

    def installs_per_minute(self) -> float:
        """Installs summed over switches in the first one-minute bucket."""
        return float(self.footprint_series[0]["installs_total"]) if self.footprint_series else 0.0

    # -- serialization --------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "config": self.config,
            "flows": {k: v.tolist() for k, v in self.flows.items()},
            "circuits_used": {str(k): v for k, v in self.circuits_used.items()},
            "coflows": {k: v.tolist() for k, v in self.coflows.items()},
            "footprint_series": self.footprint_series,
            "circuit_events": [list(e) for e in self.circuit_events],
            "circuit_bytes": self.circuit_bytes,
            "rule_log": [list(r) for r in self.rule_log],
            "overflows": self.overflows,
            "reconfigurations": self.reconfigurations,
            "n_events": self.n_events,
            "event_log_hash": self.event_log_hash,
            "sim_end_us": self.sim_end_us,
            "wallclock_s": self.wallclock_s,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        flows = {k: np.asarray(d["flows"][k], dtype=t) for k, t in _FLOW_COLUMNS.items()}
        coflows = {k: np.asarray(v, dtype=np.int64) for k, v in d["coflows"].items()}
        return cls(
            label=d["label"], config=d["config"], flows=flows,
            circuits_used={int(k): [list(x) for x in v] for k, v in d["circuits_used"].items()},
            coflows=coflows, footprint_series=d["footprint_series"],
            circuit_events=[tuple(e) for e in d["circuit_events"]],
            circuit_bytes=dict(d["circuit_bytes"]),
            rule_log=[tuple(r) for r in d.get("rule_log", [])],
            overflows=d["overflows"], reconfigurations=d["reconfigurations"],
            n_events=d["n_events"], event_log_hash=d["event_log_hash"],
            sim_end_us=d["sim_end_us"], wallclock_s=d.get("wallclock_s", 0.0))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls.from_dict(json.loads(text))

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def read(cls, path) -> "MetricsReport":
        with open(path) as fh:
            return cls.from_json(fh.read())


def footprint_series(rule_log, end_us: int, bucket_us: int = MINUTE_US) -> list[dict]:
    """One-minute buckets aligned to t=0 with installs and peak concurrent rules."""
    out = []
    n_buckets = max(1, math.ceil((end_us + 1) / bucket_us))
    for b in range(n_buckets):
        t0, t1 = b * bucket_us, (b + 1) * bucket_us
        fp = footprint(rule_log, t0, t1)
        out.append({
            "bucket": b,
            "t0_us": t0,
            "covered_us": min(t1, end_us + 1) - t0,
            "installs_total": fp.total_installs,
            "installs_max_switch": max(fp.installs.values(), default=0),
            "peak_concurrent_max": fp.max_peak,
            "rejects": sum(fp.rejects.values()),
        })
    return out


def build_report(sim, wallclock: float = 0.0) -> MetricsReport:
    trace, topo, cfg = sim.trace, sim.topo, sim.cfg
    fl = trace.flows
    flows = {
        "flow_id": sim.flow_ids.copy(),
        "coflow_id": np.array([-1 if f.coflow_id is None else f.coflow_id for f in fl], np.int64),
        "elephant": np.array([f.cls == "elephant" for f in fl], np.bool_),
        "size": sim.size.copy(),
        "start_us": sim.start.copy(),
        "end_us": sim.end.copy(),
        "tagged": sim.tagged.copy(),
        "tag_us": sim.tag_time.copy(),
        "circuit_bytes": sim.circuit_bytes.copy(),
        "delivered": sim.sent.copy(),
    }
    cids = sorted(sim.coflow_members)
    coflows = {
        "coflow_id": np.array(cids, np.int64),
        "arrival_us": np.array([sim.start[sim.coflow_members[c]].min() for c in cids], np.int64),
        "end_us": np.array([sim.end[sim.coflow_members[c]].max() for c in cids], np.int64),
        "width": np.array([len(sim.coflow_members[c]) for c in cids], np.int64),
    }
    end_us = int(sim.end.max()) if sim.n else 0
    label = {
        "topology": topo.name,
        "circuit_mode": cfg.circuit_mode,
        "rule_mode": cfg.rule_mode,
        "seed": trace.meta.get("seed", cfg.seed),
        "n_flows": sim.n,
        "trace": {k: v for k, v in trace.meta.items() if k != "params"},
    }
    return MetricsReport(
        label=label, config=cfg.to_dict(), flows=flows,
        circuits_used={int(sim.flow_ids[i]): [list(k) for k in v] for i, v in sim.circuits_used.items()},
        coflows=coflows,
        footprint_series=footprint_series(sim.sw.rule_log, end_us),
        circuit_events=list(sim.sw.circuit_log),
        circuit_bytes={f"{s}-{d}": b for (s, d), b in sorted(sim.circuit_carried.items())},
        rule_log=list(sim.sw.rule_log),
        overflows=sim.sw.overflows, reconfigurations=sim.sw.reconfigurations,
        n_events=sim.n_events, event_log_hash=sim.event_log_hash,
        sim_end_us=end_us, wallclock_s=wallclock)


# -- statistics ------------------------------------------------------------------
def throughput_stats(report: MetricsReport) -> dict:
    """Per-class mean of whole-lifetime flow rate; empty classes are absent."""
    rate = report.mean_rate
    eleph = report.flows["elephant"]
    out = {}
    for name, sel in (("mice", ~eleph), ("elephant", eleph)):
        if sel.any():
            out[name] = float(rate[sel].mean())
    return out


def _summary(x: np.ndarray) -> dict:
    x = np.asarray(x, dtype=float)
    d = {"n": int(x.size), "mean": float(x.mean())}
    for p in PERCENTILES:
        d[f"p{p}"] = float(np.percentile(x, p))
    return d


def completion_stats(report: MetricsReport) -> dict:
    """Completion times (us): mice coflows and elephant flows.

    Mice flows outside any coflow count as singleton coflows.
    """
    out = {}
    fl = report.flows
    mice = ~fl["elephant"]
    if report.coflows["coflow_id"].size or mice.any():
        solo = mice & (fl["coflow_id"] < 0)
        ct = np.concatenate([report.coflow_completion, report.fct[solo]])
        if ct.size:
            out["mice_coflow"] = _summary(ct)
    if fl["elephant"].any():
        out["elephant"] = _summary(report.fct[fl["elephant"]])
    return out


# metric name -> (class, extractor returning a scalar or None, pooled sample extractor)
def _metric_table():
    def ct(cls):
        def per_trial(r):
            s = completion_stats(r).get(cls)
            return None if s is None else s["mean"]

        def pooled(r):
            if cls == "elephant":
                return r.fct[r.flows["elephant"]]
            fl = r.flows
            solo = ~fl["elephant"] & (fl["coflow_id"] < 0)
            return np.concatenate([r.coflow_completion, r.fct[solo]])
        return per_trial, pooled

    def tp(cls):
        def pooled(r):
            sel = r.flows["elephant"] if cls == "elephant" else ~r.flows["elephant"]
            return r.mean_rate[sel]
        return (lambda r: throughput_stats(r).get(cls)), pooled

    scalar = lambda f: (f, None)
    return {
        "completion_time_mean": [("mice_coflow", *ct("mice_coflow")), ("elephant", *ct("elephant"))],
        "throughput_mean": [("mice", *tp("mice")), ("elephant", *tp("elephant"))],
        "rules_installed_per_minute": [("all", *scalar(MetricsReport.installs_per_minute))],
        "peak_concurrent_rules": [("all", *scalar(lambda r: float(r.peak_concurrent_rules())))],
        "table_overflows": [("all", *scalar(lambda r: float(r.overflows)))],
        "reconfigurations": [("all", *scalar(lambda r: float(r.reconfigurations)))],
    }


def mean_ci(x, level=0.95):
    x = np.asarray([v for v in x if v is not None and np.isfinite(v)], dtype=float)
    if x.size == 0:
        return math.nan, math.nan, math.nan
    m = float(x.mean())
    if x.size < 2:
        return m, m, m
    half = float(stats.t.ppf(0.5 + level / 2, x.size - 1) * x.std(ddof=1) / math.sqrt(x.size))
    return m, m - half, m + half


def _signature(r: MetricsReport):
    c = dict(r.config)
    for k in ("circuit_mode", "rule_mode", "seed", "record_events", "record_demand"):
        c.pop(k, None)
    return r.label.get("topology"), json.dumps(c, sort_keys=True)


def compare_runs(a, b) -> list[dict]:
    """Percent deltas ``(b - a) / a`` per metric.

    ``a`` and ``b`` are reports or equally long lists of reports paired by
    position (usually by seed).  Per-trial deltas are averaged with a t
    confidence interval; the pooled delta compares all flows of all trials.
    Mismatched configurations are flagged but still compared.
    """
    a = [a] if isinstance(a, MetricsReport) else list(a)
    b = [b] if isinstance(b, MetricsReport) else list(b)
    if not a or len(a) != len(b):
        raise ValueError("need two equally long, non-empty report lists")
    warnings = []
    if {_signature(r) for r in a + b}.__len__() > 1:
        warnings.append("config mismatch")
    if [r.seed for r in a] != [r.seed for r in b]:
        warnings.append("seed mismatch")
    rows = []
    for metric, entries in _metric_table().items():
        for cls, per_trial, pooled in entries:
            va = [per_trial(r) for r in a]
            vb = [per_trial(r) for r in b]
            deltas = []
            for x, y in zip(va, vb):
                if x is None or y is None:
                    continue
                if x == 0:
                    deltas.append(0.0 if y == 0 else math.nan)
                else:
                    deltas.append((y - x) / x * 100)
            m, lo, hi = mean_ci(deltas)
            pooled_delta = math.nan
            if pooled is not None:
                pa = np.concatenate([pooled(r) for r in a])
                pb = np.concatenate([pooled(r) for r in b])
                if pa.size and pb.size and pa.mean() != 0:
                    pooled_delta = float((pb.mean() - pa.mean()) / pa.mean() * 100)
            rows.append({
                "metric": metric, "class": cls,
                "a": mean_ci(va)[0], "b": mean_ci(vb)[0],
                "delta_pct": m, "ci_low": lo, "ci_high": hi,
                "pooled_delta_pct": pooled_delta,
                "trials": len(deltas),
                "warning": ";".join(warnings),
            })
    return rows


def improvement(a, b, metric="completion_time_mean", cls=None) -> float:
    """Mean per-trial reduction of ``b`` relative to ``a`` in percent (lower is better)."""
    rows = [r for r in compare_runs(a, b) if r["metric"] == metric and (cls is None or r["class"] == cls)]
    return -float(np.mean([r["delta_pct"] for r in rows]))


def summary_rows(reports, mode: str | None = None) -> list[dict]:
    """Per-metric means with CIs over a batch of same-cell reports (CSV schema)."""
    reports = list(reports)
    topo = reports[0].label.get("topology", "")
    if mode is None:
        mode = f"{reports[0].label.get('circuit_mode')}/{reports[0].label.get('rule_mode')}"
    rows = []
    for metric, entries in _metric_table().items():
        for cls, per_trial, _ in entries:
            vals = [per_trial(r) for r in reports]
            m, lo, hi = mean_ci(vals)
            if math.isnan(m):
                continue
            rows.append({"metric": metric, "class": cls, "mode": mode, "topology": topo,
                         "value": m, "ci_low": lo, "ci_high": hi,
                         "trials": sum(v is not None for v in vals)})
    return rows


def rows_to_csv(rows, columns=CSV_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def footprint_table(reports) -> list[dict]:
    """Rules-per-minute and peak rules for each (rule mode, circuit mode, topology).

    Columns follow a Private/Shared x topology layout; each row is a rule mode.
    """
    cells: dict[tuple, list] = {}
    for r in reports:
        key = (r.label["rule_mode"], r.label["circuit_mode"], r.label["topology"])
        cells.setdefault(key, []).append(r)
    columns = sorted({(c, t) for _, c, t in cells}, key=lambda x: (x[1], x[0] != "private", x[0]))
    out = []
    for rule_mode in sorted({k[0] for k in cells}):
        row = {"rule_mode": rule_mode}
        for c, t in columns:
            rs = cells.get((rule_mode, c, t))
            if rs:
                row[f"{c}/{t} installs_per_min"] = float(np.mean([x.installs_per_minute() for x in rs]))
                row[f"{c}/{t} peak_rules"] = float(np.mean([x.peak_concurrent_rules() for x in rs]))
        out.append(row)
    return out
