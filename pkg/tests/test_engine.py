import numpy as np
import pytest

from ocsim._kernels import maxmin_rates
from ocsim.control import DetectorConfig, SchedulerConfig
from ocsim.engine import (ContractViolation, EventQueue, PathUnavailable, SimConfig, Simulation,
                          SimulationComplete, SimulationStalled, allocate_rates, next_event,
                          run_simulation)
from ocsim.topology import GBPS, build_ring
from ocsim.traffic import MB, FlowSpec, Trace, TraceParams, generate_uniform_trace

from oracles import waterfill


def one_flow_trace(topo, size, start=0, src_sw=0, dst_sw=1):
    return Trace([FlowSpec(0, None, topo.hosts[src_sw][0], topo.hosts[dst_sw][0], size, start,
                           "elephant")])


def test_single_flow_fct():
    topo = build_ring(3, 1, packet_rate=10 * GBPS)
    r = run_simulation(topo, one_flow_trace(topo, 100 * MB, start=1234), SimConfig(circuit_mode="none"))
    assert r.flows["end_us"][0] == 1234 + 80_000
    assert r.fct[0] == 80_000
    assert r.mean_rate[0] == pytest.approx(10e9)


def test_two_equal_flows_share_equally():
    topo = build_ring(3, 2)
    h = topo.hosts
    tr = Trace([FlowSpec(0, None, h[0][0], h[1][0], 10 * MB, 0, "elephant"),
                FlowSpec(1, None, h[0][1], h[1][1], 10 * MB, 0, "elephant")])
    r = run_simulation(topo, tr, SimConfig(circuit_mode="none"))
    assert r.fct[0] == r.fct[1] == 16_000


def test_completion_order_after_reallocation():
    # three flows on one link: hand-computed finish times 2.4, 4.0, 4.8 ms
    topo = build_ring(3, 3)
    h = topo.hosts
    tr = Trace([FlowSpec(i, None, h[0][i], h[1][i], (i + 1) * MB, 0, "elephant") for i in range(3)])
    r = run_simulation(topo, tr, SimConfig(circuit_mode="none"))
    assert r.flows["end_us"].tolist() == [2400, 4000, 4800]


def test_allocate_rates_examples():
    assert allocate_rates({"a": [0], "b": [0]}, {0: 10e9}) == {"a": 5e9, "b": 5e9}
    r = allocate_rates({"A": ["L1"], "B": ["L1", "L2"]}, {"L1": 10e9, "L2": 2e9})
    assert r["B"] == pytest.approx(2e9) and r["A"] == pytest.approx(8e9)
    r = allocate_rates({1: ["L", "h1"], 2: ["L"], 3: ["L"]}, {"L": 10e9, "h1": 1e9})
    assert [r[1], r[2], r[3]] == pytest.approx([1e9, 4.5e9, 4.5e9])


def test_allocate_rates_matches_oracle_small():
    rng = np.random.default_rng(1)
    for _ in range(50):
        links = {l: int(rng.integers(1, 50)) for l in range(4)}
        flows = {f: sorted(set(rng.choice(4, size=rng.integers(1, 4)).tolist())) for f in range(6)}
        got = allocate_rates(flows, links)
        want = waterfill(flows, links)
        for f in flows:
            assert got[f] == pytest.approx(float(want[f]), rel=1e-9)


def test_down_link_is_contract_violation():
    paths = np.array([[0, 1]], np.int32)
    up = np.array([True, False])
    out = np.zeros(1)
    assert maxmin_rates(np.array([0]), paths, np.array([2], np.int32), np.array([1.0, 1.0]), up, out) == 1
    with pytest.raises(ContractViolation):
        allocate_rates({0: [0, 9]}, {0: 1.0})


def test_event_queue_order():
    q = EventQueue()
    q.push(10, "FlowArrival", "a")
    q.push(10, "CircuitUp", "b")
    q.push(5, "SchedulerDecision", "c")

    class S:
        queue = q
    assert [next_event(S).payload for _ in range(3)] == ["c", "b", "a"]
    with pytest.raises(SimulationComplete):
        next_event(S)
    q.push(1, "ObserverTick")
    assert next_event(S).kind == "ObserverTick" and len(q) == 0


def test_priority_total_order():
    q = EventQueue()
    kinds = ["SchedulerDecision", "ObserverTick", "DetectionFires", "FlowCompletion",
             "FlowArrival", "RuleInstalled", "CircuitUp", "CircuitDown"]
    for k in kinds:
        q.push(0, k)
    assert [q.pop().kind for _ in kinds] == kinds[::-1]


def circuit_config(**kw):
    base = dict(circuit_mode="shared", rule_mode="cshare", observer_period=10_000,
                scheduler=SchedulerConfig(th_configure=3e9, th_remove=1e9, decision_period=10_000))
    base.update(kw)
    return SimConfig(**base)


def test_reroute_onto_circuit_keeps_bytes():
    # host links at 100G so the circuit actually speeds the flow up
    topo = build_ring(3, 1, packet_rate=10 * GBPS, host_rate=100 * GBPS)
    tr = one_flow_trace(topo, 100 * MB)
    r = run_simulation(topo, tr, circuit_config())
    # decision at 10 ms, circuit up at 30 ms, rule effective at 40 ms:
    # 50 MB at 10 Gb/s, then 50 MB at 100 Gb/s
    assert r.flows["end_us"][0] == 44_000
    assert r.flows["circuit_bytes"][0] == pytest.approx(50 * MB, rel=1e-9)
    assert r.circuits_used == {0: [[0, 1]]}
    assert r.delivered_bytes == r.total_bytes


def test_path_update_noop_and_completion_wins():
    topo = build_ring(3, 1)
    tr = one_flow_trace(topo, 10 * MB)
    sim = Simulation(topo, tr, SimConfig(circuit_mode="shared"))
    sim.active[0] = True
    sim.comp[0] = 500.0
    assert not sim.apply_path_update(0, sim.default_paths[0], 100)      # same path
    other = (topo.host_up(0), topo.circuit_link(0, 1), topo.host_down(1))
    assert not sim.apply_path_update(0, other, 500)                     # completes now
    with pytest.raises(PathUnavailable):
        sim.apply_path_update(0, other, 100)                            # circuit is down
    sim.up[topo.circuit_link(0, 1)] = True
    assert sim.apply_path_update(0, other, 100)
    assert sim.cur_path[0] == other


def test_untagged_elephant_stays_on_packet_path():
    topo = build_ring(3, 1, host_rate=100 * GBPS)
    tr = one_flow_trace(topo, 100 * MB)
    # threshold above the flow size: never detected, never tagged
    cfg = circuit_config(detector=DetectorConfig(byte_threshold=200 * MB))
    r = run_simulation(topo, tr, cfg)
    assert not r.flows["tagged"][0]
    assert r.flows["circuit_bytes"][0] == 0
    assert r.fct[0] == 80_000


def test_determinism_and_conservation():
    topo = build_ring(6, 4)
    tr = generate_uniform_trace(topo, TraceParams(n_flows=600, load=0.8), seed=3)
    cfg = circuit_config(check_invariants=True, record_events=True)
    a = run_simulation(topo, tr, cfg)
    b = run_simulation(topo, tr, cfg)
    assert a.event_log_hash == b.event_log_hash
    da, db = a.to_dict(), b.to_dict()
    da.pop("wallclock_s"), db.pop("wallclock_s")
    assert da == db
    assert a.delivered_bytes == a.total_bytes
    assert np.array_equal(a.flows["delivered"], a.flows["size"])


def test_event_log_lines_hash_to_digest():
    import hashlib
    topo = build_ring(4, 2)
    tr = generate_uniform_trace(topo, TraceParams(n_flows=200), seed=1)
    sim = Simulation(topo, tr, circuit_config(record_events=True)).run()
    h = hashlib.sha256("".join(line + "\n" for line in sim.event_log).encode()).hexdigest()
    assert h == sim.event_log_hash
    t, kind, payload = sim.event_log[0].split(",", 2)
    assert kind == "FlowArrival" and payload.startswith("{")
    times = [int(line.split(",", 1)[0]) for line in sim.event_log]
    assert times == sorted(times)


@pytest.mark.parametrize("mode,rules", [("private", "cshare"), ("shared", "per_flow"), ("none", "cshare")])
def test_invariants_hold_across_modes(mode, rules):
    topo = build_ring(8, 4)
    tr = generate_uniform_trace(topo, TraceParams(n_flows=800, load=0.9), seed=5)
    cfg = circuit_config(circuit_mode=mode, rule_mode=rules, check_invariants=True,
                         scheduler=SchedulerConfig(th_configure=1e9, th_remove=3e8, decision_period=5_000),
                         observer_period=5_000)
    r = run_simulation(topo, tr, cfg)
    assert r.delivered_bytes == r.total_bytes


def test_time_cap_aborts():
    topo = build_ring(3, 1)
    tr = one_flow_trace(topo, 100 * MB)
    with pytest.raises(SimulationStalled):
        run_simulation(topo, tr, SimConfig(circuit_mode="none", time_cap=1_000))


def test_unknown_host_rejected():
    topo = build_ring(3, 1)
    tr = Trace([FlowSpec(0, None, 0, 57, 100, 0, "mice")])
    with pytest.raises(ValueError):
        run_simulation(topo, tr, SimConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(circuit_mode="both")
    with pytest.raises(ValueError):
        SimConfig(rule_mode="wildcard")
    with pytest.raises(ValueError):
        SimConfig(reconfig_delay=-1)
    with pytest.raises(ValueError):
        SimConfig(setup_rate=0)
