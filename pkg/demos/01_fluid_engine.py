"""
A six-switch ring, three flows, one circuit
===========================================

Walks through the fluid engine on a case small enough to check by hand:
max-min rates on the packet tier, an elephant being detected, and the
shared circuit pulling it off the ring.
"""
from ocsim import FlowSpec, SimConfig, Simulation, Trace, allocate_rates, build_ring
from ocsim.control import DetectorConfig, SchedulerConfig

# max-min on a toy network: flows a and b share link 0, b also crosses link 1
print(allocate_rates({"a": [0], "b": [0, 1], "c": [1]}, {0: 10.0, 1: 4.0}))
# -> b and c split link 1 (2 each), a takes the rest of link 0 (8)

# a 6-switch ring, one host per switch, 1 Gb/s packet links, 10 Gb/s circuits
topo = build_ring(6, hosts_per_switch=1, packet_rate=1e9)
print(topo.name, "routes:", topo.switch_route(0, 2), topo.switch_route(5, 2))

flows = [
    FlowSpec(0, None, 0, 2, 50e6, 0, "elephant"),     # 50 MB, two ring hops
    FlowSpec(1, None, 5, 2, 50e6, 0, "elephant"),     # transits switch 0 toward 2
    FlowSpec(2, None, 3, 4, 20e3, 5_000, "mice"),
]
cfg = SimConfig(
    circuit_mode="shared", rule_mode="cshare",
    detector=DetectorConfig(byte_threshold=128 * 1024, detection_latency=1_000),
    observer_period=10_000,
    scheduler=SchedulerConfig(th_configure=1e8, th_remove=3e7, decision_period=10_000),
    record_events=True,
)
sim = Simulation(topo, Trace(flows), cfg).run()

# the event log is the ground truth of what happened, one line per event
for line in sim.event_log[:14]:
    print(line)

for i in range(sim.n):
    print(f"flow {sim.flow_ids[i]}: done at {sim.end[i] / 1e3:.1f} ms, "
          f"{sim.circuit_bytes[i] / 1e6:.1f} MB over circuits")
# one circuit 0->2 carries both elephants: flow 1 joins it at switch 0
print("circuits:", sim.sw.circuit_log)
print("event log hash:", sim.event_log_hash[:16])
