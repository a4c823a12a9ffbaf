"""Experiment configuration: INI-style sections, typed keys, named presets.

Every key has a default (see ``SCHEMA`` and ``configs/example.ini``).  Values
are parsed into Python types on load and written back verbatim, so a config
survives parse -> serialize -> parse unchanged.
"""
from __future__ import annotations

import configparser
import copy
import io
from itertools import product
from pathlib import Path

from .control import DetectorConfig, SchedulerConfig
from .engine import SimConfig
from .topology import build_fbfly, build_ring
from .traffic import TraceParams, generate_uniform_trace, ingest_flow_records, read_trace


class ConfigError(ValueError):
    pass


def _opt(kind):
    def parse(s):
        s = s.strip()
        return None if s in ("", "none", "None") else kind(s)
    parse.__name__ = f"optional_{kind.__name__}"
    return parse


def _list(kind):
    def parse(s):
        out = []
        for part in s.replace(" ", "").split(","):
            if not part:
                continue
            if kind is int and "-" in part[1:]:
                lo, hi = part.split("-", 1)
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(kind(part))
        return out
    parse.__name__ = f"list_{kind.__name__}"
    return parse


def _num(s):
    return float(s)


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(s)


def _int(s):
    return int(float(s)) if "e" in s.lower() else int(s)


# section -> key -> (parser, default)
SCHEMA = {
    "topology": {
        "type": (str, "ring"),                 # ring | fbfly
        "switches": (_int, 10),                # ring size
        "radix": (_int, 3),                    # fbfly k
        "dimension": (_int, 3),                # fbfly n (k^(n-1) switches)
        "hosts_per_switch": (_int, 40),
        "packet_rate": (_num, 10e9),           # bits/s
        "circuit_rate": (_num, 100e9),
        "host_rate": (_opt(_num), None),       # empty = packet_rate
        "ocs_ports": (_int, 1),
    },
    "traffic": {
        "source": (str, "generate"),           # generate | file | records
        "path": (str, ""),                     # trace CSV or flow-record CSV
        "n_flows": (_int, 8000),
        "load": (_num, 0.8),
        "elephant_count_fraction": (_num, 0.10),
        "elephant_demand_fraction": (_num, 0.90),
        "mice_min": (_int, 2_000),
        "mice_max": (_int, 32_000),
        "elephant_shape_min": (_int, 1_000_000),
        "elephant_shape_max": (_int, 100_000_000),
        "elephant_size_max": (_int, 100_000_000),
        "elephant_size_floor": (_int, 64_000),
        "coflow_width_min": (_int, 4),
        "coflow_width_max": (_int, 32),
        "subnet_prefix_bits": (_int, 24),
        "time_compression": (_num, 1.0),
    },
    "control": {
        "byte_threshold": (_opt(_int), 131_072),
        "duration_threshold": (_opt(_int), None),   # us
        "detection_latency": (_int, 1_000),
        "observer_period": (_int, 10_000),
        "decision_period": (_int, 10_000),
        # fractions of the packet link rate
        "th_configure": (_num, 0.1),
        "th_remove": (_num, 0.03),
        "dscp_e": (_int, 10),
        "hop_weighted": (_bool, True),
    },
    "switch": {
        "reconfig_delay": (_int, 20_000),
        "outbound_latency": (_int, 10_000),
        "setup_rate": (_opt(_num), 40.0),
        "table_capacity": (_int, 1700),
    },
    "modes": {
        "circuit": (_list(str), ["private", "shared"]),
        "rules": (_list(str), ["cshare"]),
    },
    "run": {
        "seeds": (_list(int), [1]),
        "out": (str, "results"),
        "time_cap": (_int, 3_600_000_000),
    },
}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, list):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _sim_scale(**kw):
    return {"topology": kw.pop("topology", {}), "traffic": kw.pop("traffic", {}), **kw}


PRESETS = {
    # intensive load, mice coflows, 10/100 Gb/s, 40 hosts per switch
    **{f"ring{n}-sim": _sim_scale(topology={"type": "ring", "switches": n},
                                  traffic={"n_flows": 800 * n}) for n in (10, 12, 14, 16)},
    # 1/10 Gb/s: at 10 Gb/s the whole trace fits inside one circuit setup
    **{f"fbfly{k}{k}3-sim": _sim_scale(topology={"type": "fbfly", "radix": k, "dimension": 3,
                                                 "packet_rate": 1e9, "circuit_rate": 10e9},
                                       traffic={"n_flows": 800 * k * k},
                                       control={"th_configure": 0.3, "th_remove": 0.1})
       for k in (3, 4, 5, 6)},
    # moderate load, plain uniform sessions, 10/100 Mb/s links
    "ring10-emu-scale": {
        "topology": {"type": "ring", "switches": 10, "packet_rate": 10e6, "circuit_rate": 100e6},
        "traffic": {"load": 0.5, "n_flows": 2000, "coflow_width_min": 1, "coflow_width_max": 1},
        "control": {"observer_period": 1_000_000, "decision_period": 1_000_000},
        "modes": {"rules": ["cshare", "per_flow"]},
    },
    "fbfly333-emu-scale": {
        "topology": {"type": "fbfly", "radix": 3, "dimension": 3, "packet_rate": 10e6,
                     "circuit_rate": 100e6},
        "traffic": {"load": 0.5, "n_flows": 2000, "coflow_width_min": 1, "coflow_width_max": 1},
        "control": {"observer_period": 1_000_000, "decision_period": 1_000_000},
        "modes": {"rules": ["cshare", "per_flow"]},
    },
    # trace-family presets (ring10 sim topology)
    "uniform-intensive": {"traffic": {"coflow_width_min": 1, "coflow_width_max": 1}},
    "uniform-coflow": {},
    "uniform-moderate": {"traffic": {"load": 0.5, "coflow_width_min": 1, "coflow_width_max": 1}},
}
# packet tier offered twice its capacity: elephants pile up behind circuits
PRESETS["ring-intensive"] = copy.deepcopy(PRESETS["ring10-emu-scale"])
PRESETS["ring-intensive"]["traffic"].update(load=2.0, n_flows=8000)


class ExperimentConfig:
    def __init__(self, values: dict | None = None, base_dir: Path | None = None):
        self.values = {sec: {k: copy.deepcopy(d) for k, (_, d) in keys.items()}
                       for sec, keys in SCHEMA.items()}
        self.base_dir = Path(base_dir) if base_dir else Path.cwd()
        for sec, kv in (values or {}).items():
            for k, v in kv.items():
                self.set(sec, k, v)

    # -- access ---------------------------------------------------------------
    def __getitem__(self, section):
        return self.values[section]

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.values == other.values

    def set(self, section, key, value):
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        if isinstance(value, str):
            try:
                value = SCHEMA[section][key][0](value)
            except ValueError as e:
                raise ConfigError(f"{section}.{key}: cannot parse {value!r}") from e
        self.values[section][key] = copy.deepcopy(value)

    def override(self, assignments):
        """Apply ``section.key=value`` strings."""
        for a in assignments or ():
            if "=" not in a or "." not in a.split("=", 1)[0]:
                raise ConfigError(f"override must look like section.key=value, got {a!r}")
            lhs, rhs = a.split("=", 1)
            sec, key = lhs.strip().split(".", 1)
            self.set(sec, key, rhs)
        return self

    # -- io ------------------------------------------------------------------
    @classmethod
    def from_string(cls, text: str, base_dir=None) -> "ExperimentConfig":
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        try:
            cp.read_string(text)
        except configparser.Error as e:
            raise ConfigError(str(e)) from e
        cfg = cls(base_dir=base_dir)
        for sec in cp.sections():
            if sec not in SCHEMA:
                raise ConfigError(f"unknown section [{sec}]")
            for key, raw in cp[sec].items():
                cfg.set(sec, key, raw)
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        return cls.from_string(text, base_dir=path.parent)

    @classmethod
    def preset(cls, name: str) -> "ExperimentConfig":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}")
        return cls(PRESETS[name])

    def to_string(self) -> str:
        cp = configparser.ConfigParser()
        for sec, kv in self.values.items():
            cp[sec] = {k: _fmt(v) for k, v in kv.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def write(self, path):
        Path(path).write_text(self.to_string())

    # -- validation ----------------------------------------------------------
    def validate(self) -> "ExperimentConfig":
        t, tr, c, s, m, r = (self.values[k] for k in
                             ("topology", "traffic", "control", "switch", "modes", "run"))
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)
        need(t["type"] in ("ring", "fbfly"), f"topology.type must be ring or fbfly, got {t['type']!r}")
        for k in ("packet_rate", "circuit_rate"):
            need(t[k] > 0, f"topology.{k} must be positive")
        need(t["host_rate"] is None or t["host_rate"] > 0, "topology.host_rate must be positive")
        need(t["hosts_per_switch"] >= 1 and t["ocs_ports"] >= 1, "hosts_per_switch and ocs_ports must be >= 1")
        need(tr["source"] in ("generate", "file", "records"), "traffic.source must be generate, file or records")
        if tr["source"] != "generate":
            need(bool(tr["path"]), "traffic.path is required unless source = generate")
            need(self.trace_path().exists(), f"trace file {self.trace_path()} does not exist")
        need(tr["n_flows"] >= 1 and tr["load"] > 0, "traffic.n_flows and traffic.load must be positive")
        need(tr["time_compression"] > 0, "traffic.time_compression must be positive")
        for k in ("observer_period", "decision_period"):
            need(c[k] > 0, f"control.{k} must be positive")
        need(c["detection_latency"] >= 0, "control.detection_latency must be >= 0")
        need(0 <= c["th_remove"] < c["th_configure"], "need 0 <= control.th_remove < control.th_configure")
        need(c["byte_threshold"] is not None or c["duration_threshold"] is not None,
             "enable at least one of control.byte_threshold / control.duration_threshold")
        need(s["reconfig_delay"] >= 0 and s["outbound_latency"] >= 0, "switch delays must be >= 0")
        need(s["setup_rate"] is None or s["setup_rate"] > 0, "switch.setup_rate must be positive")
        need(s["table_capacity"] >= 1, "switch.table_capacity must be >= 1")
        need(bool(m["circuit"]) and set(m["circuit"]) <= {"none", "private", "shared"},
             f"modes.circuit must be a subset of none,private,shared; got {m['circuit']}")
        need(bool(m["rules"]) and set(m["rules"]) <= {"cshare", "per_flow"},
             f"modes.rules must be a subset of cshare,per_flow; got {m['rules']}")
        need(bool(r["seeds"]), "run.seeds must not be empty")
        need(r["time_cap"] > 0, "run.time_cap must be positive")
        try:
            self.trace_params().check()
        except ValueError as e:
            raise ConfigError(f"traffic: {e}") from e
        return self

    # -- builders ------------------------------------------------------------
    def trace_path(self) -> Path:
        p = Path(self.values["traffic"]["path"])
        return p if p.is_absolute() else self.base_dir / p

    def build_topology(self):
        t = self.values["topology"]
        common = dict(hosts_per_switch=t["hosts_per_switch"], packet_rate=t["packet_rate"],
                      host_rate=t["host_rate"], circuit_rate=t["circuit_rate"], ocs_ports=t["ocs_ports"])
        if t["type"] == "ring":
            return build_ring(t["switches"], **common)
        return build_fbfly(t["radix"], t["dimension"], **common)

    def trace_params(self) -> TraceParams:
        tr = self.values["traffic"]
        return TraceParams(
            n_flows=tr["n_flows"], load=tr["load"],
            elephant_count_fraction=tr["elephant_count_fraction"],
            elephant_demand_fraction=tr["elephant_demand_fraction"],
            mice_size_range=(tr["mice_min"], tr["mice_max"]),
            elephant_shape_range=(tr["elephant_shape_min"], tr["elephant_shape_max"]),
            elephant_size_max=tr["elephant_size_max"],
            elephant_size_floor=tr["elephant_size_floor"],
            coflow_width_range=(tr["coflow_width_min"], tr["coflow_width_max"]))

    def build_trace(self, seed: int, topo=None):
        topo = topo or self.build_topology()
        tr = self.values["traffic"]
        if tr["source"] == "generate":
            return generate_uniform_trace(topo, self.trace_params(), seed)
        if tr["source"] == "file":
            return read_trace(self.trace_path())
        return ingest_flow_records(self.trace_path(), topo, tr["subnet_prefix_bits"], tr["time_compression"])

    def sim_config(self, circuit_mode: str, rule_mode: str, seed: int = 0, **extra) -> SimConfig:
        c, s = self.values["control"], self.values["switch"]
        rate = self.values["topology"]["packet_rate"]
        return SimConfig(
            detector=DetectorConfig(c["byte_threshold"], c["duration_threshold"], c["detection_latency"]),
            observer_period=c["observer_period"],
            scheduler=SchedulerConfig(th_configure=c["th_configure"] * rate,
                                      th_remove=c["th_remove"] * rate,
                                      decision_period=c["decision_period"],
                                      hop_weighted=c["hop_weighted"]),
            circuit_mode=circuit_mode, rule_mode=rule_mode,
            reconfig_delay=s["reconfig_delay"], outbound_latency=s["outbound_latency"],
            setup_rate=s["setup_rate"], table_capacity=s["table_capacity"],
            dscp_e=c["dscp_e"], seed=seed, time_cap=self.values["run"]["time_cap"], **extra)

    def cells(self):
        """(circuit_mode, rule_mode) pairs; rules are irrelevant without circuits."""
        out = []
        for c, r in product(self.values["modes"]["circuit"], self.values["modes"]["rules"]):
            cell = (c, "cshare") if c == "none" else (c, r)
            if cell not in out:
                out.append(cell)
        return out
