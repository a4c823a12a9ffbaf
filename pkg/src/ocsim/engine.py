"""Deterministic fluid (flow-level) discrete-event simulation.

Rates are max-min fair over each flow's current path and only change at
events, so progress between events is linear and completion instants are
computed exactly (rounded up to the next microsecond).  All events that
share a timestamp are processed before rates are reallocated once.
"""
from __future__ import annotations

import hashlib
import heapq
import json
import time as _time
from dataclasses import asdict, dataclass, field
from itertools import count

import numpy as np

from ._kernels import maxmin_rates
from .control import (DetectorConfig, ObservedFlow, SchedulerConfig, observe_demand,
                      schedule_circuits, tag_flow)
from .switch import Packet, SwitchState, compile_rules
from .topology import Topology
from .traffic import FlowSpec, Trace

PRIORITY = {
    "CircuitDown": 0,
    "CircuitUp": 1,
    "RuleInstalled": 2,
    "FlowArrival": 3,
    "FlowCompletion": 4,
    "ThresholdCrossed": 5,   # internal: schedules DetectionFires
    "DetectionFires": 6,
    "ObserverTick": 7,
    "SchedulerDecision": 8,
}
LOGGED = frozenset(PRIORITY) - {"ThresholdCrossed"}


class SimulationComplete(Exception):
    pass


class SimulationStalled(RuntimeError):
    pass


class ContractViolation(RuntimeError):
    pass


class PathUnavailable(ContractViolation):
    pass


@dataclass
class SimConfig:
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    observer_period: int = 100_000        # us
    scheduler: SchedulerConfig = field(default_factory=lambda: SchedulerConfig(decision_period=100_000))
    circuit_mode: str = "shared"          # none | private | shared
    rule_mode: str = "cshare"             # cshare | per_flow
    reconfig_delay: int = 20_000          # us
    outbound_latency: int = 10_000        # us
    setup_rate: float | None = 40.0       # rules/s per switch, None = unlimited
    table_capacity: int = 1700
    dscp_e: int = 10
    seed: int = 0
    time_cap: int = 3_600_000_000         # us of simulated time
    record_events: bool = False
    record_demand: bool = False
    check_invariants: bool = False

    def __post_init__(self):
        if self.circuit_mode not in ("none", "private", "shared"):
            raise ValueError(f"bad circuit_mode {self.circuit_mode!r}")
        if self.rule_mode not in ("cshare", "per_flow"):
            raise ValueError(f"bad rule_mode {self.rule_mode!r}")
        for name in ("observer_period", "reconfig_delay", "outbound_latency", "time_cap"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.observer_period == 0:
            raise ValueError("observer_period must be positive")
        if self.setup_rate is not None and self.setup_rate <= 0:
            raise ValueError("setup_rate must be positive (or None)")
        if self.table_capacity < 1:
            raise ValueError("table_capacity must be >= 1")
        if not 0 <= self.dscp_e < 64:
            raise ValueError("dscp_e must be a 6-bit code point")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FlowState:
    """Snapshot view of one flow (the engine itself keeps columnar arrays)."""
    spec: FlowSpec
    bytes_sent: float = 0.0
    current_rate: float = 0.0
    path: tuple[int, ...] = ()
    tagged: bool = False
    tag_time: int | None = None
    completion_time: int | None = None


@dataclass(order=True)
class Event:
    time: int
    priority: int
    seq: int
    kind: str = field(compare=False)
    payload: object = field(compare=False, default=None)


class EventQueue:
    def __init__(self):
        self._heap = []
        self._seq = count()

    def push(self, time: int, kind: str, payload=None) -> Event:
        ev = Event(int(time), PRIORITY[kind], next(self._seq), kind, payload)
        heapq.heappush(self._heap, ev)
        return ev

    def pop(self) -> Event:
        if not self._heap:
            raise SimulationComplete()
        return heapq.heappop(self._heap)

    def peek_time(self):
        return self._heap[0].time if self._heap else None

    def __len__(self):
        return len(self._heap)


def next_event(state) -> Event:
    """Pop the minimum event under (time, kind priority, sequence)."""
    return state.queue.pop()


def allocate_rates(flows, links) -> dict:
    """Max-min fair rates for ``{flow_id: [link ids]}`` over ``{link_id: capacity}``.

    Convenience wrapper around the compiled kernel used by the engine.
    """
    ids = list(flows)
    link_ids = sorted(links)
    pos = {l: i for i, l in enumerate(link_ids)}
    width = max((len(p) for p in flows.values()), default=1) or 1
    paths = np.full((len(ids), width), -1, np.int32)
    plen = np.zeros(len(ids), np.int32)
    for r, fid in enumerate(ids):
        p = flows[fid]
        for j, l in enumerate(p):
            if l not in pos:
                raise ContractViolation(f"flow {fid} uses unknown or down link {l}")
            paths[r, j] = pos[l]
        plen[r] = len(p)
    cap = np.array([links[l] for l in link_ids], dtype=np.float64)
    up = np.ones(len(link_ids), np.bool_)
    out = np.zeros(len(ids))
    maxmin_rates(np.arange(len(ids)), paths, plen, cap, up, out)
    return {fid: float(out[r]) for r, fid in enumerate(ids)}


class Simulation:
    def __init__(self, topo: Topology, trace: Trace, config: SimConfig):
        self.topo = topo
        self.trace = trace
        self.cfg = config
        sched = config.scheduler
        self.sched_cfg = SchedulerConfig(
            th_configure=sched.th_configure, th_remove=sched.th_remove,
            decision_period=sched.decision_period, hop_weighted=sched.hop_weighted,
            mode=config.circuit_mode if config.circuit_mode != "none" else "shared")
        flows = trace.flows
        n = len(flows)
        self.n = n
        self.flow_ids = np.array([f.flow_id for f in flows], dtype=np.int64)
        self._index = {int(fid): i for i, fid in enumerate(self.flow_ids)}
        if len(self._index) != n:
            raise ValueError("duplicate flow ids in trace")
        self.size = np.array([f.size for f in flows], dtype=np.float64)
        self.start = np.array([f.start_time for f in flows], dtype=np.int64)
        src = np.array([f.src_host for f in flows], dtype=np.int64)
        dst = np.array([f.dst_host for f in flows], dtype=np.int64)
        if n and (src.max() >= topo.n_hosts or dst.max() >= topo.n_hosts or src.min() < 0 or dst.min() < 0):
            raise ValueError("trace references hosts missing from the topology")
        if n and (src == dst).any():
            raise ValueError("trace contains a flow with src == dst")
        self.src_host, self.dst_host = src, dst
        self.src_sw = topo.host_switch[src] if n else src
        self.dst_sw = topo.host_switch[dst] if n else dst

        self.routes = [topo.switch_route(int(a), int(b)) for a, b in zip(self.src_sw, self.dst_sw)]
        self.default_paths = [(topo.host_up(int(s)), *topo.packet_path_links(r), topo.host_down(int(d)))
                              for s, d, r in zip(src, dst, self.routes)]
        width = topo.max_hops() + 2
        self.paths = np.full((max(n, 1), width), -1, np.int32)
        self.plen = np.zeros(max(n, 1), np.int32)
        self.cur_path = list(self.default_paths)
        for i, p in enumerate(self.default_paths):
            self.paths[i, :len(p)] = p
            self.plen[i] = len(p)

        self.sent = np.zeros(n)
        self.rate = np.zeros(n)
        self.comp = np.full(n, np.inf)
        self.cross = np.full(n, np.inf)
        self.active = np.zeros(n, np.bool_)
        self.done = np.zeros(n, np.bool_)
        self.crossed = np.zeros(n, np.bool_)
        self.tagged = np.zeros(n, np.bool_)
        self.tag_time = np.full(n, -1, np.int64)
        self.end = np.full(n, -1, np.int64)
        self.mark = np.zeros(n)
        self.on_circuit = np.full(n, -1, np.int64)
        self.circ_mark = np.zeros(n)
        self.circuit_bytes = np.zeros(n)
        self.circuits_used: dict[int, list] = {}
        self.circuit_carried: dict[tuple[int, int], float] = {}
        self._circuit_flows: dict[int, set] = {}
        self._tagged_active: set[int] = set()
        self._completed_window: list[int] = []

        self.cap = topo.base_capacity.copy()
        self.cap[topo.circuit_base:] = topo.circuit_rate
        self.up = np.ones(topo.n_links, np.bool_)
        self.up[topo.circuit_base:] = False

        self.sw = SwitchState(
            ocs_ports=dict(topo.ocs_ports), circuit_mode=self.sched_cfg.mode,
            rule_mode=config.rule_mode, dscp_e=config.dscp_e,
            reconfig_delay=config.reconfig_delay, outbound_latency=config.outbound_latency,
            setup_rate=config.setup_rate, table_capacity=config.table_capacity)

        self.clock = 0
        self.queue = EventQueue()
        self._gen = 0
        self._dirty = False
        self._act = np.zeros(0, np.int64)
        self._act_dirty = False
        self.n_done = 0
        self.n_events = 0
        self.last_demand = None
        self.demand_log: list[tuple] = []
        self.event_log: list[str] = []
        self._hash = hashlib.sha256()
        self.coflow_members: dict[int, list[int]] = {}
        for i, f in enumerate(flows):
            if f.coflow_id is not None:
                self.coflow_members.setdefault(f.coflow_id, []).append(i)

        order = np.argsort(self.start, kind="stable")
        if n:
            starts = self.start[order]
            cuts = np.flatnonzero(np.diff(starts)) + 1
            for grp in np.split(order, cuts):
                self.queue.push(int(self.start[grp[0]]), "FlowArrival", grp)
        if config.circuit_mode != "none":
            self.queue.push(config.observer_period, "ObserverTick")
            self.queue.push(self.sched_cfg.decision_period, "SchedulerDecision")

    # -- helpers -----------------------------------------------------------
    def index_of(self, flow_id: int) -> int:
        return self._index[int(flow_id)]

    def flow_state(self, flow_id: int) -> FlowState:
        i = self.index_of(flow_id)
        return FlowState(self.trace.flows[i], float(self.sent[i]), float(self.rate[i]),
                         self.cur_path[i], bool(self.tagged[i]),
                         int(self.tag_time[i]) if self.tagged[i] else None,
                         int(self.end[i]) if self.done[i] else None)

    @property
    def active_index(self) -> np.ndarray:
        if self._act_dirty:
            self._act = np.flatnonzero(self.active)
            self._act_dirty = False
        return self._act

    def _log(self, ev: Event, payload):
        line = f"{ev.time},{ev.kind},{json.dumps(payload, separators=(',', ':'))}"
        self._hash.update(line.encode())
        self._hash.update(b"\n")
        if self.cfg.record_events:
            self.event_log.append(line)

    def _finished(self) -> bool:
        return self.n_done == self.n

    # -- fluid core ----------------------------------------------------------
    def _advance(self, t: int):
        if t > self.clock:
            act = self.active_index
            if act.size:
                dt = (t - self.clock) / 8e6
                self.sent[act] = np.minimum(self.sent[act] + self.rate[act] * dt, self.size[act])
            self.clock = t

    def _reallocate(self):
        act = self.active_index
        self._gen += 1
        if act.size == 0:
            return
        out = np.zeros(act.size)
        bad = maxmin_rates(act, self.paths, self.plen, self.cap, self.up, out)
        if bad >= 0:
            raise ContractViolation(f"flow routed over down link {bad} at t={self.clock}")
        self.rate[act] = out
        now = self.clock
        rem = (self.size[act] - self.sent[act]) * 8e6
        with np.errstate(divide="ignore", invalid="ignore"):
            dt = np.where(out > 0, np.ceil(np.maximum(rem / out - 1e-6, 0.0)), np.inf)
        comp = now + dt
        self.comp[act] = comp
        self.queue.push(int(comp.min()) if np.isfinite(comp.min()) else self.cfg.time_cap + 1,
                        "FlowCompletion", self._gen)

        det = self.cfg.detector
        cand = act[~self.crossed[act]]
        if cand.size:
            c = np.full(cand.size, np.inf)
            if det.byte_threshold is not None:
                thr = float(det.byte_threshold)
                need = (thr - self.sent[cand]) * 8e6
                r = self.rate[cand]
                ok = (self.size[cand] > thr) & (r > 0)
                with np.errstate(divide="ignore", invalid="ignore"):
                    tb = now + np.ceil(np.maximum(need / r - 1e-6, 0.0))
                c = np.where(ok, tb, c)
            if det.duration_threshold is not None:
                c = np.minimum(c, np.maximum(now, self.start[cand] + det.duration_threshold))
            c = np.where(c < self.comp[cand], c, np.inf)
            self.cross[cand] = c
            m = c.min()
            if np.isfinite(m):
                self.queue.push(int(m), "ThresholdCrossed", self._gen)
        if self.cfg.check_invariants:
            self.check_capacity()

    def check_capacity(self):
        act = self.active_index
        load = np.zeros(self.topo.n_links)
        for i in act:
            load[self.paths[i, :self.plen[i]]] += self.rate[i]
        over = load > self.cap * (1 + 1e-9) + 1e-6
        if over.any():
            raise ContractViolation(f"links over capacity: {np.flatnonzero(over)[:5]}")
        if (load[~self.up] > 0).any():
            raise ContractViolation("traffic on a down circuit")

    # -- routing -------------------------------------------------------------
    def resolve_path(self, i: int):
        """Path of flow ``i`` given the rules currently installed."""
        if not self.tagged[i] or self.cfg.circuit_mode == "none":
            return self.default_paths[i]
        route = self.routes[i]
        d = route[-1]
        fid = int(self.flow_ids[i])
        tables = self.sw.tables
        for pos in range(len(route) - 1):
            x = route[pos]
            if not tables.get(x):
                continue
            pkt = Packet(self.cfg.dscp_e, d, "lower" if pos == 0 else "upper", fid)
            action = self.sw.lookup(x, pkt)
            if action is not None:
                dp = self.default_paths[i]
                return (*dp[:pos + 1], self.topo.circuit_link(x, action), dp[-1])
        return self.default_paths[i]

    def apply_path_update(self, i: int, new_path, at_time: int) -> bool:
        """Move flow ``i`` onto ``new_path``; progress carries over unchanged."""
        if not self.active[i] or self.comp[i] <= at_time:
            return False
        if tuple(new_path) == self.cur_path[i]:
            return False
        for l in new_path:
            if not self.up[l]:
                raise PathUnavailable(f"link {l} is not up at t={at_time}")
        old = int(self.on_circuit[i])
        if old >= 0:
            self._leave_circuit(i, old)
        new_path = tuple(new_path)
        self.cur_path[i] = new_path
        self.paths[i, :] = -1
        self.paths[i, :len(new_path)] = new_path
        self.plen[i] = len(new_path)
        for l in new_path:
            ends = self.topo.circuit_endpoints(l)
            if ends is not None:
                self.on_circuit[i] = l
                self.circ_mark[i] = self.sent[i]
                self._circuit_flows.setdefault(l, set()).add(i)
                self.circuits_used.setdefault(i, []).append(ends)
        self._dirty = True
        return True

    def _leave_circuit(self, i, link):
        carried = self.sent[i] - self.circ_mark[i]
        self.circuit_bytes[i] += carried
        key = self.topo.circuit_endpoints(link)
        self.circuit_carried[key] = self.circuit_carried.get(key, 0.0) + carried
        self._circuit_flows[link].discard(i)
        self.on_circuit[i] = -1

    def _per_flow_target(self, i: int):
        """First up circuit on the flow's route whose rule class admits it."""
        route = self.routes[i]
        d = route[-1]
        private = self.sw.circuit_mode == "private"
        for pos in range(len(route) - 1):
            if private and pos > 0:
                break
            c = self.sw.up_circuit(route[pos], d)
            if c is not None:
                return c
        return None

    def _request_rules(self, circuit, flow_idx):
        fids = [int(self.flow_ids[i]) for i in flow_idx]
        for rule in compile_rules(circuit, self.cfg.rule_mode, self.cfg.dscp_e, fids):
            t = self.sw.request_install(rule, self.clock)
            self.queue.push(t, "RuleInstalled", rule)

    # -- handlers ------------------------------------------------------------
    def _on_arrival(self, ev):
        idx = ev.payload
        self.active[idx] = True
        # flows tagged before they start (pre-marked traffic) count as detected
        for i in np.atleast_1d(idx):
            if self.tagged[i]:
                self._start_elephant(int(i), ev.time)
        self._act_dirty = True
        self._dirty = True
        return {"flows": self.flow_ids[idx].tolist()}

    def _finish(self, i, now):
        if self.on_circuit[i] >= 0:
            self.sent[i] = self.size[i]
            self._leave_circuit(i, int(self.on_circuit[i]))
        self.sent[i] = self.size[i]
        self.rate[i] = 0.0
        self.active[i] = False
        self.done[i] = True
        self.end[i] = now
        self.n_done += 1
        if self.tagged[i]:
            self._tagged_active.discard(i)
            self._completed_window.append(i)
            if self.cfg.rule_mode == "per_flow" and self.cfg.circuit_mode != "none":
                self.sw.delete_flow_rules(int(self.flow_ids[i]), now)

    def _on_completion(self, ev):
        if ev.payload != self._gen:
            return None
        act = self.active_index
        fin = act[self.comp[act] <= ev.time]
        for i in fin:
            self._finish(int(i), ev.time)
        if fin.size:
            self._act_dirty = True
            self._dirty = True
        return {"flows": self.flow_ids[fin].tolist()}

    def _on_crossing(self, ev):
        if ev.payload != self._gen:
            return None
        act = self.active_index
        hit = act[self.cross[act] <= ev.time]
        lat = self.cfg.detector.detection_latency
        for i in hit:
            self.crossed[i] = True
            self.cross[i] = np.inf
            self.queue.push(ev.time + lat, "DetectionFires", int(i))
        return None

    def _on_detection(self, ev):
        i = ev.payload
        if not self.active[i] or not tag_flow(self, int(self.flow_ids[i]), ev.time):
            return None
        self._start_elephant(i, ev.time)
        return {"flow": int(self.flow_ids[i])}

    def _start_elephant(self, i, now):
        self._tagged_active.add(i)
        if self.cfg.circuit_mode != "none":
            if self.cfg.rule_mode == "cshare":
                self.apply_path_update(i, self.resolve_path(i), now)
            else:
                c = self._per_flow_target(i)
                if c is not None:
                    self._request_rules(c, [i])

    def _on_circuit_up(self, ev):
        key = ev.payload
        c = self.sw.circuits.get(key)
        if c is None or c.state != "configuring" or c.requested_at + self.cfg.reconfig_delay != ev.time:
            return None     # torn down (or re-requested) before it came up
        c = self.sw.circuit_up(key, ev.time)
        link = self.topo.circuit_link(*key)
        self.up[link] = True
        if self.cfg.rule_mode == "cshare":
            self._request_rules(c, [])
        else:
            matched = sorted(i for i in self._tagged_active if self._per_flow_target(i) is c)
            self._request_rules(c, matched)
        return {"src": key[0], "dst": key[1]}

    def _on_circuit_down(self, ev):
        key = ev.payload
        self.sw.circuit_down(key, ev.time)
        link = self.topo.circuit_link(*key)
        self.up[link] = False
        for i in sorted(self._circuit_flows.get(link, ())):
            self.apply_path_update(i, self.resolve_path(i), ev.time)
        return {"src": key[0], "dst": key[1]}

    def _on_rule_installed(self, ev):
        rule = ev.payload
        ok = self.sw.install(rule, ev.time)
        if ok:
            if rule.flow_id is None:
                hit = sorted(i for i in self._tagged_active
                             if self.dst_sw[i] == rule.dst_switch and rule.switch in self.routes[i][:-1])
            else:
                j = self._index[rule.flow_id]
                hit = [j] if self.active[j] else []
            for i in hit:
                self.apply_path_update(i, self.resolve_path(i), ev.time)
        return {"switch": rule.switch, "dst": rule.dst_switch, "origin": rule.origin,
                "flow": rule.flow_id, "ok": ok}

    def _on_observer(self, ev):
        now = ev.time
        t0 = max(0, now - self.cfg.observer_period)
        win_s = (now - t0) / 1e6
        contrib = sorted(self._tagged_active | set(self._completed_window))
        obs = [ObservedFlow(self.routes[i], (self.sent[i] - self.mark[i]) * 8 / win_s)
               for i in contrib]
        dm = observe_demand(obs, (t0, now))
        self.last_demand = dm
        if self.cfg.record_demand:
            self.demand_log.extend(dm.rows())
        for i in self._tagged_active:
            self.mark[i] = self.sent[i]
        self._completed_window.clear()
        if not self._finished():
            self.queue.push(now + self.cfg.observer_period, "ObserverTick")
        return {"entries": len(dm.transit), "flows": len(obs)}

    def _on_scheduler(self, ev):
        now = ev.time
        payload = {"add": [], "remove": []}
        if self.last_demand is not None:
            current = [c.key for c in self.sw.live_circuits()]
            plan = schedule_circuits(self.last_demand, current, self.sched_cfg, self.sw.ocs_ports,
                                     self.topo.hop_count)
            for t, kind, p in self.sw.apply_plan(plan, now):
                self.queue.push(t, kind, p)
            payload = {"add": [list(k) for k in plan.circuits_to_add],
                       "remove": [list(k) for k in plan.circuits_to_remove]}
        if not self._finished():
            self.queue.push(now + self.sched_cfg.decision_period, "SchedulerDecision")
        return payload

    # -- main loop -------------------------------------------------------------
    def run(self):
        handlers = {
            "FlowArrival": self._on_arrival,
            "FlowCompletion": self._on_completion,
            "ThresholdCrossed": self._on_crossing,
            "DetectionFires": self._on_detection,
            "CircuitUp": self._on_circuit_up,
            "CircuitDown": self._on_circuit_down,
            "RuleInstalled": self._on_rule_installed,
            "ObserverTick": self._on_observer,
            "SchedulerDecision": self._on_scheduler,
        }
        q = self.queue
        cap = self.cfg.time_cap
        while True:
            if self._dirty and (not len(q) or q.peek_time() > self.clock):
                self._reallocate()
                self._dirty = False
            try:
                ev = next_event(self)
            except SimulationComplete:
                break
            if ev.time > cap:
                raise SimulationStalled(
                    f"simulated time cap {cap} us exceeded with {self.n - self.n_done} flows "
                    f"unfinished")
            self._advance(ev.time)
            payload = handlers[ev.kind](ev)
            if payload is not None and ev.kind in LOGGED:
                self.n_events += 1
                self._log(ev, payload)
        if self.n_done != self.n:
            raise SimulationStalled(f"{self.n - self.n_done} flows never completed")
        return self

    @property
    def event_log_hash(self) -> str:
        return self._hash.hexdigest()


def run_simulation(topo: Topology, trace: Trace, config: SimConfig):
    """Replay ``trace`` on ``topo`` and return a :class:`MetricsReport`."""
    from .metrics import build_report
    t0 = _time.perf_counter()
    sim = Simulation(topo, trace, config).run()
    return build_report(sim, wallclock=_time.perf_counter() - t0)
