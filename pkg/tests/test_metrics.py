import math

import numpy as np
import pytest

from ocsim import SimConfig, build_ring, run_simulation
from ocsim.metrics import (MetricsReport, compare_runs, completion_stats, footprint_series,
                           footprint_table, improvement, mean_ci, rows_to_csv, summary_rows,
                           throughput_stats)
from ocsim.traffic import MB, FlowSpec, Trace


def handmade(rows, coflows=None, seed=1, mode="shared"):
    """rows: (flow_id, coflow_id, elephant, size, start_us, end_us)."""
    cols = list(zip(*rows))
    n = len(rows)
    flows = {
        "flow_id": np.array(cols[0], np.int64), "coflow_id": np.array(cols[1], np.int64),
        "elephant": np.array(cols[2], np.bool_), "size": np.array(cols[3], float),
        "start_us": np.array(cols[4], np.int64), "end_us": np.array(cols[5], np.int64),
        "tagged": np.zeros(n, np.bool_), "tag_us": np.full(n, -1, np.int64),
        "circuit_bytes": np.zeros(n), "delivered": np.array(cols[3], float),
    }
    cids = sorted({c for c in cols[1] if c >= 0})
    co = {"coflow_id": np.array(cids, np.int64),
          "arrival_us": np.array([min(r[4] for r in rows if r[1] == c) for c in cids], np.int64),
          "end_us": np.array([max(r[5] for r in rows if r[1] == c) for c in cids], np.int64),
          "width": np.array([sum(r[1] == c for r in rows) for c in cids], np.int64)}
    return MetricsReport(label={"topology": "t", "circuit_mode": mode, "rule_mode": "cshare",
                                "seed": seed},
                         config={"x": 1}, flows=flows, circuits_used={}, coflows=co,
                         footprint_series=footprint_series([], max(cols[5])),
                         circuit_events=[], circuit_bytes={})


def test_throughput_of_one_flow():
    r = handmade([(0, -1, True, 100 * MB, 0, 800_000)])
    assert throughput_stats(r) == {"elephant": pytest.approx(1e9)}


def test_absent_class_is_absent():
    r = handmade([(0, -1, True, 100 * MB, 0, 800_000)])
    assert "mice" not in throughput_stats(r)
    assert "mice_coflow" not in completion_stats(r)


def test_coflow_completion_is_last_member():
    r = handmade([(0, 5, False, 1e3, 100, 300), (1, 5, False, 1e3, 150, 900),
                  (2, -1, False, 1e3, 0, 50)])
    cs = completion_stats(r)["mice_coflow"]
    # coflow 5: 900 - 100; singleton mouse: 50
    assert cs["n"] == 2 and cs["mean"] == pytest.approx((800 + 50) / 2)


def test_compare_identical_is_zero():
    r = handmade([(0, -1, True, 1e6, 0, 1000), (1, 3, False, 1e3, 0, 10)])
    rows = compare_runs(r, r)
    for row in rows:
        if not math.isnan(row["delta_pct"]):
            assert row["delta_pct"] == 0.0
    assert all(row["warning"] == "" for row in rows)


def test_compare_sign_and_improvement():
    a = handmade([(0, -1, True, 1e6, 0, 1000)])
    b = handmade([(0, -1, True, 1e6, 0, 800)])
    row = next(r for r in compare_runs(a, b)
               if r["metric"] == "completion_time_mean" and r["class"] == "elephant")
    assert row["delta_pct"] == pytest.approx(-20.0)
    assert improvement(a, b, cls="elephant") == pytest.approx(20.0)


def test_compare_flags_mismatch():
    a = handmade([(0, -1, True, 1e6, 0, 1000)], seed=1)
    b = handmade([(0, -1, True, 1e6, 0, 1000)], seed=2)
    assert "seed mismatch" in compare_runs(a, b)[0]["warning"]
    with pytest.raises(ValueError):
        compare_runs([a], [a, b])


def test_mean_ci_matches_textbook():
    m, lo, hi = mean_ci([1.0, 2.0, 3.0, 4.0])
    # t(0.975, 3) = 3.182446
    half = 3.182446305284263 * np.std([1, 2, 3, 4], ddof=1) / 2
    assert m == 2.5 and lo == pytest.approx(2.5 - half) and hi == pytest.approx(2.5 + half)
    assert mean_ci([7.0]) == (7.0, 7.0, 7.0)
    assert all(math.isnan(x) for x in mean_ci([]))


def test_footprint_series_recount():
    log = [(10, 0, "install", "per_flow"), (20, 1, "install", "per_flow"),
           (61_000_000, 0, "install", "per_flow"), (62_000_000, 0, "delete", "per_flow")]
    fs = footprint_series(log, 70_000_000)
    assert [b["installs_total"] for b in fs] == [2, 1]
    assert [b["peak_concurrent_max"] for b in fs] == [1, 2]
    assert fs[1]["covered_us"] == 10_000_001


def _small_run(mode="shared", rules="cshare", seed=0):
    topo = build_ring(4, 2)
    flows = [FlowSpec(i, None, i % 8, (i + 5) % 8, 2 * MB if i < 3 else 20e3, 100 * i, 
                      "elephant" if i < 3 else "mice") for i in range(8)]
    cfg = SimConfig(circuit_mode=mode, rule_mode=rules, seed=seed, reconfig_delay=1000,
                    outbound_latency=500)
    return run_simulation(topo, Trace(flows, {"seed": seed}), cfg)


def test_json_round_trip(tmp_path):
    r = _small_run()
    p = tmp_path / "r.json"
    r.write(p)
    back = MetricsReport.read(p)
    assert back.to_dict() == r.to_dict()
    for k, v in r.flows.items():
        assert back.flows[k].dtype == v.dtype
        np.testing.assert_array_equal(back.flows[k], v)


def test_report_conserves_bytes():
    r = _small_run()
    assert r.delivered_bytes == pytest.approx(r.total_bytes, rel=1e-12)


def test_summary_and_tables():
    reps = [_small_run(seed=s) for s in (1, 2)]
    rows = summary_rows(reps)
    assert {r["metric"] for r in rows} >= {"completion_time_mean", "throughput_mean"}
    text = rows_to_csv(rows)
    assert text.splitlines()[0] == "metric,class,mode,topology,value,ci_low,ci_high,trials"
    tab = footprint_table(reps + [_small_run(rules="per_flow", seed=s) for s in (1, 2)])
    assert [row["rule_mode"] for row in tab] == ["cshare", "per_flow"]
