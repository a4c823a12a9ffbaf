"""Workload generation and ingestion.

A trace is a start-ordered list of host-to-host flows.  Mice flows may be
grouped into coflows (same arrival epoch, same destination switch); elephant
flows are always standalone.  The CSV layout is::

    flow_id,coflow_id,src_host,dst_host,size_bytes,start_time_us,class
"""
from __future__ import annotations

import csv
import ipaddress
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .topology import Topology

KB = 1_000
MB = 1_000_000
CSV_HEADER = ["flow_id", "coflow_id", "src_host", "dst_host", "size_bytes",
              "start_time_us", "class"]


class GenerationError(ValueError):
    pass


class TraceFormatError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class FlowSpec:
    flow_id: int
    coflow_id: int | None
    src_host: int
    dst_host: int
    size: int
    start_time: int
    cls: str  # "mice" | "elephant"


@dataclass
class TraceParams:
    n_flows: int = 2000
    elephant_count_fraction: float = 0.10
    elephant_demand_fraction: float = 0.90
    mice_size_range: tuple[int, int] = (2 * KB, 32 * KB)
    # elephants are drawn uniformly on this range, then rescaled as a whole
    elephant_shape_range: tuple[int, int] = (1 * MB, 100 * MB)
    elephant_size_max: int = 100 * MB
    # lower clip applied while rescaling; keeps elephants above the mice range
    elephant_size_floor: int = 64 * KB
    # offered mean utilization of upper-tier packet links over the trace
    load: float = 0.5
    coflow_width_range: tuple[int, int] = (4, 32)

    def check(self):
        if self.n_flows < 1:
            raise GenerationError("n_flows must be >= 1")
        for name in ("elephant_count_fraction", "elephant_demand_fraction"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise GenerationError(f"{name} must be in (0, 1), got {v}")
        lo, hi = self.mice_size_range
        if not 0 < lo <= hi:
            raise GenerationError(f"bad mice_size_range {self.mice_size_range}")
        lo, hi = self.elephant_shape_range
        if not 0 < lo <= hi:
            raise GenerationError(f"bad elephant_shape_range {self.elephant_shape_range}")
        if not 0 < self.elephant_size_floor <= self.elephant_size_max:
            raise GenerationError("elephant floor must be in (0, elephant_size_max]")
        if self.load <= 0:
            raise GenerationError("load must be positive")
        wlo, whi = self.coflow_width_range
        if not 1 <= wlo <= whi:
            raise GenerationError(f"bad coflow_width_range {self.coflow_width_range}")


@dataclass
class Trace:
    flows: list[FlowSpec]
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.flows)

    def total_bytes(self) -> int:
        return sum(f.size for f in self.flows)

    def to_csv(self, path):
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for f in self.flows:
                w.writerow([f.flow_id, "" if f.coflow_id is None else f.coflow_id,
                            f.src_host, f.dst_host, f.size, f.start_time, f.cls])

    def write(self, path):
        """Write the CSV plus a ``.meta.json`` sidecar with generation metadata."""
        path = Path(path)
        self.to_csv(path)
        sidecar = path.with_suffix(".meta.json")
        sidecar.write_text(json.dumps(self.meta, indent=2, sort_keys=True) + "\n",
                           encoding="utf-8")
        return path, sidecar


def _rows(path):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise TraceFormatError(f"row 1: expected header {CSV_HEADER}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                raise TraceFormatError(f"row {lineno}: expected {len(CSV_HEADER)} columns")
            yield lineno, row


def _parse_common(lineno, row):
    fid, cid, src, dst, size, start, cls = row
    try:
        fid = int(fid)
        cid = int(cid) if cid.strip() else None
        size = int(size)
        start = float(start)
    except ValueError as exc:
        raise TraceFormatError(f"row {lineno}: {exc}") from None
    if cls not in ("mice", "elephant"):
        raise TraceFormatError(f"row {lineno}: unknown class {cls!r}")
    if size <= 0 or start < 0:
        raise TraceFormatError(f"row {lineno}: size must be > 0 and start >= 0")
    return fid, cid, src, dst, size, start, cls


def read_trace(path) -> Trace:
    flows = []
    for lineno, row in _rows(path):
        fid, cid, src, dst, size, start, cls = _parse_common(lineno, row)
        try:
            src, dst = int(src), int(dst)
        except ValueError as exc:
            raise TraceFormatError(f"row {lineno}: {exc}") from None
        flows.append(FlowSpec(fid, cid, src, dst, size, int(start), cls))
    meta = {}
    sidecar = Path(path).with_suffix(".meta.json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
    return Trace(flows, meta)


def _rescale_elephants(shape, target, floor, cap):
    """Find s with sum(clip(s * shape, floor, cap)) == target (bisection)."""
    n = len(shape)
    if not n * floor <= target <= n * cap:
        raise GenerationError(
            f"elephant demand {target:.3g} B unreachable with {n} elephants in "
            f"[{floor}, {cap}] B")
    lo, hi = 0.0, cap / shape.min()
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.clip(mid * shape, floor, cap).sum() < target:
            lo = mid
        else:
            hi = mid
    sizes = np.rint(np.clip(hi * shape, floor, cap)).astype(np.int64)
    return sizes, hi


def generate_uniform_trace(topo: Topology, params: TraceParams, seed: int) -> Trace:
    params.check()
    if topo.n_switches < 2:
        raise GenerationError("need at least 2 switches")
    rng = np.random.default_rng(seed)
    n_sw = topo.n_switches
    hps = np.array([len(topo.hosts[s]) for s in range(n_sw)])

    n_e = int(round(params.n_flows * params.elephant_count_fraction))
    n_m = params.n_flows - n_e
    if n_e < 1 or n_m < 1:
        raise GenerationError("n_flows too small for the requested class split")

    def pick_host(sw):
        return topo.hosts[int(sw)][rng.integers(hps[sw])]

    def pick_other_switch(exclude):
        s = rng.integers(n_sw - 1)
        return s + (s >= exclude)

    # coflow widths partition the mice
    wlo, whi = params.coflow_width_range
    widths = []
    left = n_m
    while left > 0:
        w = min(int(rng.integers(wlo, whi + 1)), left)
        widths.append(w)
        left -= w

    mlo, mhi = params.mice_size_range
    mice_sizes = rng.integers(mlo, mhi + 1, size=n_m)
    f = params.elephant_demand_fraction
    target = mice_sizes.sum() * f / (1 - f)
    elo, ehi = params.elephant_shape_range
    shape = rng.uniform(elo, ehi, size=n_e)
    ele_sizes, scale = _rescale_elephants(shape, target, params.elephant_size_floor,
                                          params.elephant_size_max)

    # sessions: ("c", width) coflows and ("e", idx) elephants, in random order
    sessions = [("c", i) for i in range(len(widths))] + [("e", i) for i in range(n_e)]
    order = rng.permutation(len(sessions))

    raw = []  # (session_rank, coflow_rank|None, src, dst, size, cls)
    mi = 0
    for rank, si in enumerate(order):
        kind, idx = sessions[si]
        if kind == "e":
            s = int(rng.integers(n_sw))
            d = int(pick_other_switch(s))
            raw.append((rank, None, pick_host(s), pick_host(d), int(ele_sizes[idx]), "elephant"))
        else:
            d = int(rng.integers(n_sw))
            for _ in range(widths[idx]):
                s = int(pick_other_switch(d))
                raw.append((rank, rank, pick_host(s), pick_host(d), int(mice_sizes[mi]), "mice"))
                mi += 1

    # arrival epochs: Poisson process sized so the offered link load matches
    total_cap = sum(l.capacity for l in topo.packet_links)
    bit_hops = sum(size * 8 * topo.hop_count(int(topo.host_switch[s]), int(topo.host_switch[d]))
                   for _, _, s, d, size, _ in raw)
    duration_s = bit_hops / (params.load * total_cap)
    gaps = rng.exponential(duration_s / len(sessions), size=len(sessions))
    epochs = np.floor(np.cumsum(gaps) * 1e6).astype(np.int64)

    flows = []
    coflow_ids = {}
    for fid, (rank, crank, s, d, size, cls) in enumerate(raw):
        cid = None
        if crank is not None:
            cid = coflow_ids.setdefault(crank, len(coflow_ids))
        flows.append(FlowSpec(fid, cid, int(s), int(d), size, int(epochs[rank]), cls))

    meta = {
        "generator": "uniform",
        "seed": int(seed),
        "topology": topo.name,
        "params": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(params).items()},
        "elephant_scale": float(scale),
        "duration_us": int(epochs[-1]),
        "n_coflows": len(coflow_ids),
    }
    return Trace(flows, meta)


def ingest_flow_records(path, topo: Topology, subnet_prefix_bits: int = 24,
                        time_compression: float = 1.0) -> Trace:
    """Load a flow-record CSV whose host columns are IPv4 addresses.

    Addresses are consolidated into subnets of ``subnet_prefix_bits``; subnet
    ``i`` (in address order) becomes simulated host ``i // n_switches`` on
    switch ``i % n_switches``.  Start times are divided by
    ``time_compression``.  Flows internal to one subnet are dropped since
    they never reach the upper tier.
    """
    if time_compression <= 0:
        raise ValueError("time_compression must be positive")
    if not 0 <= subnet_prefix_bits <= 32:
        raise ValueError("subnet_prefix_bits must be in [0, 32]")
    records = []
    for lineno, row in _rows(path):
        fid, cid, src, dst, size, start, cls = _parse_common(lineno, row)
        try:
            src_net = ipaddress.ip_network(f"{src.strip()}/{subnet_prefix_bits}", strict=False)
            dst_net = ipaddress.ip_network(f"{dst.strip()}/{subnet_prefix_bits}", strict=False)
        except ValueError as exc:
            raise TraceFormatError(f"row {lineno}: {exc}") from None
        records.append((fid, cid, src_net, dst_net, size, start, cls))

    groups = sorted({r[2] for r in records} | {r[3] for r in records})
    n_sw = topo.n_switches
    min_hosts = min(len(h) for h in topo.hosts.values())
    if groups and (len(groups) - 1) // n_sw >= min_hosts:
        raise GenerationError(
            f"{len(groups)} subnets do not fit {n_sw} switches x {min_hosts} hosts")
    host_of = {g: topo.hosts[i % n_sw][i // n_sw] for i, g in enumerate(groups)}

    flows = []
    dropped = 0
    for fid, cid, sn, dn, size, start, cls in records:
        s, d = host_of[sn], host_of[dn]
        if s == d:
            dropped += 1
            continue
        flows.append(FlowSpec(fid, cid, s, d, size, int(round(start / time_compression)), cls))
    flows.sort(key=lambda f: (f.start_time, f.flow_id))
    meta = {
        "generator": "ingest",
        "source": str(path),
        "subnet_prefix_bits": subnet_prefix_bits,
        "time_compression": time_compression,
        "n_groups": len(groups),
        "dropped_intra_subnet": dropped,
        "topology": topo.name,
    }
    return Trace(flows, meta)


@dataclass
class ValidationReport:
    n_flows: int = 0
    n_mice: int = 0
    n_elephants: int = 0
    n_coflows: int = 0
    total_bytes: int = 0
    elephant_bytes: int = 0
    elephant_demand_fraction: float = 0.0
    sorted: bool = True
    violations: list[str] = field(default_factory=list)
    pair_demand: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        lines = [
            f"flows={self.n_flows} mice={self.n_mice} elephants={self.n_elephants} "
            f"coflows={self.n_coflows}",
            f"total_bytes={self.total_bytes} elephant_demand_fraction="
            f"{self.elephant_demand_fraction:.4f}",
            f"sorted={self.sorted} violations={len(self.violations)}",
        ]
        if self.pair_demand:
            lines.append("pair_demand " + " ".join(f"{k}={v}" for k, v in self.pair_demand.items()))
        lines.extend(self.violations[:20])
        return "\n".join(lines)


def validate_trace(trace: Trace, topo: Topology | None = None,
                   mice_max: int = 32 * KB, elephant_max: int = 100 * MB) -> ValidationReport:
    rep = ValidationReport()
    prev = None
    coflows = {}
    for i, f in enumerate(trace.flows):
        rep.n_flows += 1
        rep.total_bytes += f.size
        if f.cls == "elephant":
            rep.n_elephants += 1
            rep.elephant_bytes += f.size
            if f.size > elephant_max:
                rep.violations.append(f"flow {f.flow_id}: elephant size {f.size} > {elephant_max}")
        else:
            rep.n_mice += 1
            if f.size > mice_max:
                rep.violations.append(f"flow {f.flow_id}: mice size {f.size} > {mice_max}")
        if f.size <= 0:
            rep.violations.append(f"flow {f.flow_id}: non-positive size")
        if f.src_host == f.dst_host:
            rep.violations.append(f"flow {f.flow_id}: src == dst")
        if f.start_time < 0:
            rep.violations.append(f"flow {f.flow_id}: negative start time")
        if prev is not None and f.start_time < prev:
            rep.sorted = False
            rep.violations.append(f"row {i}: start_time {f.start_time} < previous {prev}")
        prev = f.start_time
        if f.coflow_id is not None:
            coflows.setdefault(f.coflow_id, []).append(f)
            if f.cls != "mice":
                rep.violations.append(f"flow {f.flow_id}: coflow member is not mice")
    rep.n_coflows = len(coflows)
    if rep.total_bytes:
        rep.elephant_demand_fraction = rep.elephant_bytes / rep.total_bytes
    if topo is not None and trace.flows:
        n = topo.n_switches
        mat = np.zeros((n, n))
        for f in trace.flows:
            if f.src_host >= topo.n_hosts or f.dst_host >= topo.n_hosts:
                rep.violations.append(f"flow {f.flow_id}: host not in topology")
                continue
            mat[topo.host_switch[f.src_host], topo.host_switch[f.dst_host]] += f.size
        off = mat[~np.eye(n, dtype=bool)]
        rep.pair_demand = {
            "pairs_nonzero": int((off > 0).sum()),
            "max_bytes": float(off.max()),
            "mean_bytes": float(off.mean()),
            "cv": float(off.std() / off.mean()) if off.mean() > 0 else 0.0,
        }
    return rep
