"""Switch configuration: circuits, OpenFlow-style rerouting rules, OCS timing.

Ingress packets carry a 2-bit metadata value assigned by port class at
switch initialization (upper-tier ports 0b01, lower-tier ports 0b11).  A
rerouting rule matches the elephant DSCP code point, the destination subnet
and ``metadata & mask == value``:

* private circuit: value 0b10 / mask 0b10 -> lower-tier ingress only
* shared circuit:  value 0b01 / mask 0b01 -> any ingress
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

UPPER_TIER_META = 0b01
LOWER_TIER_META = 0b11
METADATA = {"upper": UPPER_TIER_META, "lower": LOWER_TIER_META}
CIRCUIT_MATCH = {"private": (0b10, 0b10), "shared": (0b01, 0b01)}


class PlanRejected(ValueError):
    pass


@dataclass
class Circuit:
    src_switch: int
    dst_switch: int
    mode: str                 # "private" | "shared"
    state: str = "configuring"  # configuring | up | tearing_down
    requested_at: int = 0
    up_since: int | None = None

    @property
    def key(self) -> tuple[int, int]:
        return (self.src_switch, self.dst_switch)


@dataclass(eq=False)
class OFRule:
    switch: int
    dscp: int | None          # None is a wildcard
    dst_switch: int           # destination subnet owner
    metadata_value: int
    metadata_mask: int
    action: int               # output to circuit towards this switch
    origin: str               # "cshare" | "per_flow"
    flow_id: int | None = None
    installed_at: int | None = None
    cancelled: bool = False

    def __post_init__(self):
        if self.metadata_value & ~self.metadata_mask & 0b11:
            raise ValueError("metadata value has bits outside the mask")


class Packet(NamedTuple):
    dscp: int
    dst_switch: int
    ingress: str              # "upper" | "lower"
    flow_id: int | None = None


def compile_rules(circuit: Circuit, rule_mode: str, dscp_e: int,
                  matched_flows=()) -> list[OFRule]:
    """Rules to install at ``circuit.src_switch`` for rerouting elephants.

    ``cshare`` yields exactly one aggregate rule; ``per_flow`` yields one
    exact-match rule per flow id in ``matched_flows``.
    """
    value, mask = CIRCUIT_MATCH[circuit.mode]
    common = dict(switch=circuit.src_switch, dscp=dscp_e, dst_switch=circuit.dst_switch,
                  metadata_value=value, metadata_mask=mask, action=circuit.dst_switch)
    if rule_mode == "cshare":
        return [OFRule(origin="cshare", **common)]
    if rule_mode == "per_flow":
        return [OFRule(origin="per_flow", flow_id=f, **common) for f in matched_flows]
    raise ValueError(f"unknown rule mode {rule_mode!r}")


def rule_matches(rule: OFRule, pkt: Packet) -> bool:
    meta = METADATA[pkt.ingress]
    return ((meta & rule.metadata_mask) == rule.metadata_value
            and (rule.dscp is None or rule.dscp == pkt.dscp)
            and rule.dst_switch == pkt.dst_switch
            and (rule.flow_id is None or rule.flow_id == pkt.flow_id))


def match_packet(rules, pkt: Packet) -> int | None:
    """First-match lookup; returns the circuit destination or None (fallthrough)."""
    for rule in rules:
        if rule_matches(rule, pkt):
            return rule.action
    return None


@dataclass
class Footprint:
    peak_concurrent: dict[int, int]
    installs: dict[int, int]
    rejects: dict[int, int]

    @property
    def total_installs(self) -> int:
        return sum(self.installs.values())

    @property
    def max_peak(self) -> int:
        return max(self.peak_concurrent.values(), default=0)


def footprint(rule_log, t0: int, t1: int) -> Footprint:
    """Per-switch peak concurrent rules and installs within ``[t0, t1)``.

    ``rule_log`` rows are ``(t_us, switch, op, origin, ...)`` in time order.
    Rules already live at ``t0`` count towards the peak.
    """
    if t1 <= t0:
        raise ValueError("empty interval")
    live: dict[int, int] = {}
    peak: dict[int, int] | None = None
    installs: dict[int, int] = {}
    rejects: dict[int, int] = {}
    for row in rule_log:
        t, sw, op = row[0], row[1], row[2]
        if t >= t1:
            break
        if t >= t0 and peak is None:
            peak = dict(live)
        if op == "install":
            live[sw] = live.get(sw, 0) + 1
        elif op == "delete":
            live[sw] -= 1
        if t >= t0:
            peak[sw] = max(peak.get(sw, 0), live.get(sw, 0))
            if op == "install":
                installs[sw] = installs.get(sw, 0) + 1
            elif op == "reject":
                rejects[sw] = rejects.get(sw, 0) + 1
    if peak is None:
        peak = dict(live)
    return Footprint(peak, installs, rejects)


@dataclass
class SwitchState:
    """Mutable OCS + flow-table state, driven by the engine's event loop."""
    ocs_ports: dict[int, int]
    circuit_mode: str
    rule_mode: str
    dscp_e: int
    reconfig_delay: int
    outbound_latency: int
    setup_rate: float | None          # rules/s per switch; None = unlimited
    table_capacity: int
    circuits: dict[tuple[int, int], Circuit] = field(default_factory=dict)
    tables: dict[int, list[OFRule]] = field(default_factory=dict)
    per_flow: dict[int, dict[int, OFRule]] = field(default_factory=dict)
    pending: dict[tuple[int, int], list[OFRule]] = field(default_factory=dict)
    rule_log: list[tuple] = field(default_factory=list)
    circuit_log: list[tuple] = field(default_factory=list)
    overflows: int = 0
    reconfigurations: int = 0
    _next_slot: dict[int, float] = field(default_factory=dict)

    # -- circuits ----------------------------------------------------------
    def live_circuits(self):
        return [c for c in self.circuits.values() if c.state != "tearing_down"]

    def up_circuit(self, src: int, dst: int) -> Circuit | None:
        c = self.circuits.get((src, dst))
        return c if c is not None and c.state == "up" else None

    def check_matching(self, keys) -> bool:
        tx: dict[int, int] = {}
        rx: dict[int, int] = {}
        for s, d in keys:
            if s == d:
                return False
            tx[s] = tx.get(s, 0) + 1
            rx[d] = rx.get(d, 0) + 1
        return (all(n <= self.ocs_ports[s] for s, n in tx.items())
                and all(n <= self.ocs_ports[d] for d, n in rx.items()))

    def apply_plan(self, plan, now: int) -> list[tuple[int, str, tuple]]:
        """Validate a plan and return the events it schedules.

        Removed circuits go down immediately; added circuits come up after
        the reconfiguration delay.  Rule installs follow ``CircuitUp``.
        """
        remove = set(plan.circuits_to_remove)
        add = list(plan.circuits_to_add)
        if remove & set(add):
            raise PlanRejected("add and remove sets overlap")
        live = {c.key for c in self.live_circuits()}
        if not remove <= live:
            raise PlanRejected(f"removing unknown circuits {sorted(remove - live)}")
        if set(add) & live:
            raise PlanRejected("adding a circuit that already exists")
        if not self.check_matching((live - remove) | set(add)):
            raise PlanRejected("resulting circuit set violates the crossbar matching")
        events = []
        for key in sorted(remove):
            self.circuits[key].state = "tearing_down"
            events.append((now, "CircuitDown", key))
        for key in add:
            self.circuits[key] = Circuit(key[0], key[1], self.circuit_mode, "configuring", now)
            self.circuit_log.append((now, "configure", key[0], key[1]))
            events.append((now + self.reconfig_delay, "CircuitUp", key))
        if add or remove:
            self.reconfigurations += 1
        return events

    def circuit_up(self, key, now: int) -> Circuit:
        c = self.circuits[key]
        c.state = "up"
        c.up_since = now
        self.circuit_log.append((now, "up", key[0], key[1]))
        return c

    def circuit_down(self, key, now: int) -> list[OFRule]:
        """Drop a circuit with its installed and pending rules."""
        c = self.circuits.pop(key)
        self.circuit_log.append((now, "down", key[0], key[1]))
        for rule in self.pending.pop(key, []):
            rule.cancelled = True
        removed = [r for r in self.tables.get(c.src_switch, []) if r.action == c.dst_switch]
        for rule in removed:
            self._delete(rule, now)
        return removed

    # -- rules -------------------------------------------------------------
    def request_install(self, rule: OFRule, now: int) -> int:
        """Queue a rule behind the per-switch setup-rate limiter.

        Returns the time the rule takes effect in the data plane.
        """
        issue = float(now)
        if self.setup_rate:
            issue = max(issue, self._next_slot.get(rule.switch, -math.inf))
            self._next_slot[rule.switch] = issue + 1e6 / self.setup_rate
        self.pending.setdefault((rule.switch, rule.action), []).append(rule)
        return int(math.ceil(issue - 1e-6)) + self.outbound_latency

    def install(self, rule: OFRule, now: int) -> bool:
        """Make a pending rule effective; False if cancelled or rejected."""
        queue = self.pending.get((rule.switch, rule.action))
        if queue is not None and rule in queue:
            queue.remove(rule)
        if rule.cancelled:
            return False
        table = self.tables.setdefault(rule.switch, [])
        if len(table) >= self.table_capacity:
            self.overflows += 1
            self._log(now, "reject", rule)
            return False
        rule.installed_at = now
        table.append(rule)
        if rule.flow_id is not None:
            self.per_flow.setdefault(rule.switch, {})[rule.flow_id] = rule
        self._log(now, "install", rule)
        return True

    def delete_flow_rules(self, flow_id: int, now: int):
        for sw, index in self.per_flow.items():
            rule = index.get(flow_id)
            if rule is not None:
                self._delete(rule, now)
        for queue in self.pending.values():
            for rule in queue:
                if rule.flow_id == flow_id:
                    rule.cancelled = True

    def _delete(self, rule: OFRule, now: int):
        self.tables[rule.switch].remove(rule)
        if rule.flow_id is not None:
            self.per_flow[rule.switch].pop(rule.flow_id, None)
        self._log(now, "delete", rule)

    def _log(self, now, op, rule):
        self.rule_log.append((now, rule.switch, op, rule.origin, rule.dscp, rule.dst_switch,
                              rule.metadata_value, rule.metadata_mask))

    def rules_at(self, switch: int) -> list[OFRule]:
        return self.tables.get(switch, [])

    def lookup(self, switch: int, pkt: Packet) -> int | None:
        """Resolve a packet at one switch, honoring only up circuits."""
        rules = self.tables.get(switch)
        if not rules:
            return None
        if pkt.flow_id is not None and self.rule_mode == "per_flow":
            rule = self.per_flow.get(switch, {}).get(pkt.flow_id)
            candidates = [rule] if rule is not None else []
        else:
            candidates = rules
        action = match_packet(candidates, pkt)
        if action is not None and self.up_circuit(switch, action) is None:
            return None
        return action

    def concurrent_rules(self, switch: int) -> int:
        return len(self.tables.get(switch, []))
