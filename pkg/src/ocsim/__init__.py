"""Flow-level simulator for hybrid packet/optical-circuit data center networks."""
from .topology import Topology, build_ring, build_fbfly, InvalidTopology
from .traffic import (FlowSpec, Trace, TraceParams, generate_uniform_trace, ingest_flow_records,
                      read_trace, validate_trace)
from .control import (DetectorConfig, SchedulerConfig, CircuitPlan, DemandMatrix, detect_elephant,
                      observe_demand, schedule_circuits, tag_flow)
from .switch import Circuit, OFRule, Packet, SwitchState, compile_rules, match_packet
from .engine import SimConfig, Simulation, allocate_rates, run_simulation
from .metrics import MetricsReport, compare_runs, completion_stats, throughput_stats

__version__ = "0.1.0"
