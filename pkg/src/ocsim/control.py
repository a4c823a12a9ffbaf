"""Elephant detection/tagging, tagged-flow observation and circuit scheduling."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable


@dataclass
class DetectorConfig:
    byte_threshold: int | None = 128 * 1024   # bytes
    duration_threshold: int | None = None      # us
    detection_latency: int = 1_000             # us

    def __post_init__(self):
        if self.byte_threshold is None and self.duration_threshold is None:
            raise ValueError("at least one detection threshold must be enabled")
        if self.byte_threshold is not None and self.byte_threshold <= 0:
            raise ValueError("byte_threshold must be positive")
        if self.detection_latency < 0:
            raise ValueError("detection_latency must be >= 0")


@dataclass
class SchedulerConfig:
    th_configure: float = 3e9   # bits/s
    th_remove: float = 1e9      # bits/s
    decision_period: int = 10_000  # us
    mode: str = "shared"
    # order candidates by demand x hops bypassed instead of raw demand
    hop_weighted: bool = True

    def __post_init__(self):
        if not 0 <= self.th_remove < self.th_configure:
            raise ValueError("need 0 <= th_remove < th_configure")
        if self.decision_period <= 0:
            raise ValueError("decision_period must be positive")


def detect_elephant(flow, cfg: DetectorConfig, now: int, schedule=None) -> int | None:
    """Time at which ``flow`` is detected as an elephant, or None.

    ``schedule`` is a list of ``(t_us, rate_bps)`` breakpoints describing the
    flow's rate from ``now`` on (piecewise constant, last segment open-ended);
    by default the flow keeps ``flow.current_rate``.  The result includes the
    detection latency.  None means the flow completes before crossing.
    """
    size = flow.spec.size
    sent = float(flow.bytes_sent)
    if schedule is None:
        schedule = [(now, flow.current_rate)]
    segments = list(schedule) + [(math.inf, 0.0)]

    t_bytes = None
    thr = cfg.byte_threshold
    if thr is not None and size > thr:
        if sent >= thr:
            t_bytes = now
        else:
            acc = sent
            for (t_a, rate), (t_b, _) in zip(segments, segments[1:]):
                t_a = max(t_a, now)
                if rate <= 0 or t_b <= t_a:
                    continue
                gain = rate * (t_b - t_a) / 8e6
                if acc + gain >= thr:
                    t_bytes = t_a + math.ceil((thr - acc) * 8e6 / rate - 1e-6)
                    break
                acc += gain

    # completion under the same schedule
    t_done = None
    acc = sent
    for (t_a, rate), (t_b, _) in zip(segments, segments[1:]):
        t_a = max(t_a, now)
        if rate <= 0 or t_b <= t_a:
            continue
        gain = rate * (t_b - t_a) / 8e6
        if acc + gain >= size:
            t_done = t_a + math.ceil((size - acc) * 8e6 / rate - 1e-6)
            break
        acc += gain

    candidates = [t for t in (t_bytes,) if t is not None]
    if cfg.duration_threshold is not None:
        candidates.append(max(now, flow.spec.start_time + cfg.duration_threshold))
    if not candidates:
        return None
    t_cross = min(candidates)
    if t_done is not None and t_cross >= t_done:
        return None
    return t_cross + cfg.detection_latency


def tag_flow(state, flow_id: int, at_time: int) -> bool:
    """Set the DSCP_e tag on a flow; the first tag wins.

    The tag rides in the packets, so the flow becomes matchable by elephant
    rules at every switch from ``at_time`` on.  Returns False on a repeat.
    """
    i = state.index_of(flow_id)
    if state.tagged[i]:
        return False
    state.tagged[i] = True
    state.tag_time[i] = at_time
    state.mark[i] = state.sent[i]
    return True


@dataclass
class ObservedFlow:
    route: tuple[int, ...]   # default switch sequence, src switch first
    rate: float              # mean rate over the observation window, bits/s
    tagged: bool = True


@dataclass
class DemandMatrix:
    window: tuple[int, int]
    # (transit_switch, dst_switch) -> [rate_bps, flow_count]
    transit: dict[tuple[int, int], list] = field(default_factory=dict)
    # same, restricted to flows whose source switch is the transit switch
    origin: dict[tuple[int, int], list] = field(default_factory=dict)

    def rate(self, key, mode="shared") -> float:
        table = self.transit if mode == "shared" else self.origin
        entry = table.get(key)
        return entry[0] if entry else 0.0

    def rows(self):
        for (s, d), (rate, n) in sorted(self.transit.items()):
            yield (self.window[1], s, d, rate, n)


def observe_demand(flows: Iterable[ObservedFlow], window: tuple[int, int]) -> DemandMatrix:
    """Aggregate tagged-flow rates per (transit switch, destination switch).

    Every upper-tier switch on a flow's default route other than the
    destination gets the flow's rate; untagged flows are invisible.
    """
    t0, t1 = window
    if t1 <= t0:
        raise ValueError("observation window must have positive length")
    dm = DemandMatrix(window)
    for f in flows:
        if not f.tagged or len(f.route) < 2:
            continue
        d = f.route[-1]
        for s in f.route[:-1]:
            e = dm.transit.setdefault((s, d), [0.0, 0])
            e[0] += f.rate
            e[1] += 1
        e = dm.origin.setdefault((f.route[0], d), [0.0, 0])
        e[0] += f.rate
        e[1] += 1
    return dm


@dataclass
class CircuitPlan:
    circuits_to_add: list[tuple[int, int]]
    circuits_to_remove: list[tuple[int, int]]
    mode: str

    def is_empty(self) -> bool:
        return not (self.circuits_to_add or self.circuits_to_remove)


def schedule_circuits(demand: DemandMatrix, current, cfg: SchedulerConfig,
                      ocs_ports, hops=None) -> CircuitPlan:
    """Greedy weighted matching with hysteresis.

    Circuits whose servable demand fell under ``th_remove`` are torn down;
    then pairs at or above ``th_configure`` are added heaviest first while
    both OCS ports are free.  Private circuits only count demand from flows
    sourced at the circuit's transmit switch.

    ``ocs_ports`` is a ``{switch: ports}`` dict or a Topology.  With
    ``cfg.hop_weighted`` and a ``hops(src, dst)`` callable, a candidate's
    weight is its demand times the packet hops it bypasses, i.e. the load
    it takes off the packet tier; thresholds always apply to raw demand.
    """
    if hasattr(ocs_ports, "ocs_ports"):
        if hops is None:
            hops = ocs_ports.hop_count
        ocs_ports = ocs_ports.ocs_ports
    weight = circuit_weight(cfg, hops)
    table = demand.transit if cfg.mode == "shared" else demand.origin
    current = sorted(current)
    remove = [k for k in current if table.get(k, (0.0,))[0] < cfg.th_remove]
    kept = [k for k in current if k not in remove]
    tx: dict[int, int] = {}
    rx: dict[int, int] = {}
    for s, d in kept:
        tx[s] = tx.get(s, 0) + 1
        rx[d] = rx.get(d, 0) + 1
    kept_set = set(kept)
    candidates = sorted(((-weight(k, v[0]), k) for k, v in table.items()
                         if v[0] >= cfg.th_configure and k[0] != k[1] and k not in kept_set))
    add = []
    for _, (s, d) in candidates:
        if tx.get(s, 0) < ocs_ports[s] and rx.get(d, 0) < ocs_ports[d]:
            add.append((s, d))
            tx[s] = tx.get(s, 0) + 1
            rx[d] = rx.get(d, 0) + 1
    return CircuitPlan(add, remove, cfg.mode)


def circuit_weight(cfg: SchedulerConfig, hops=None):
    if cfg.hop_weighted and hops is not None:
        return lambda key, rate: rate * hops(*key)
    return lambda key, rate: rate
