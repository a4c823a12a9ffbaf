"""
How many flow-table rules does rerouting cost?
==============================================

Under the intensive ring preset the packet tier is offered twice its
capacity, so many elephants want circuits at once.  With per-flow setup
every rerouted elephant needs its own rule at the circuit's source switch;
with one shared rule per circuit the count tracks circuit churn instead.
"""
from ocsim import run_simulation
from ocsim.config import ExperimentConfig
from ocsim.metrics import footprint_table

cfg = ExperimentConfig.preset("ring-intensive")
topo = cfg.build_topology()
trace = cfg.build_trace(1, topo)
print(f"{len(trace.flows)} flows over {trace.meta['duration_us'] / 1e6:.0f} s")

reports = []
for circuit in ("private", "shared"):
    for rules in ("cshare", "per_flow"):
        r = run_simulation(topo, trace, cfg.sim_config(circuit, rules, 1))
        reports.append(r)
        per_min = [b["installs_total"] for b in r.footprint_series]
        print(f"{circuit:>7}/{rules:<8} installs per minute {per_min}, peak rules/switch "
              f"{r.peak_concurrent_rules()}, overflows {r.overflows}, wall {r.wallclock_s:.1f}s")

# rows are rule modes, columns circuit mode x topology
for row in footprint_table(reports):
    print(row)
