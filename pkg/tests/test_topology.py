import itertools

import pytest

from ocsim.topology import GBPS, InvalidTopology, build_fbfly, build_ring

from oracles import bfs_hops, lexicographic_shortest


def test_ring10_hosts_and_degree():
    t = build_ring(10, 40, 10 * GBPS)
    assert t.n_switches == 10
    assert all(len(t.hosts[s]) == 40 for s in range(10))
    assert all(t.degree(s) == 2 for s in range(10))
    assert t.n_hosts == 400


def test_ring3_has_six_directed_links():
    t = build_ring(3, 1)
    assert len(t.packet_links) == 6
    assert len({(l.src, l.dst) for l in t.packet_links}) == 6


def test_ring_too_small():
    with pytest.raises(InvalidTopology):
        build_ring(2)


def test_fbfly333_has_nine_switches_of_degree_four():
    t = build_fbfly(3, 3)
    assert t.n_switches == 9
    # brute force: neighbors differ in exactly one of the two coordinates
    coords = list(itertools.product(range(3), repeat=2))
    for i, a in enumerate(coords):
        expect = sum(1 for b in coords if sum(x != y for x, y in zip(a, b)) == 1)
        assert t.degree(i) == expect == 4


def test_smallest_fbfly():
    t = build_fbfly(2, 2)
    assert t.n_switches == 2
    assert len(t.packet_links) == 2


@pytest.mark.parametrize("k,n", [(1, 3), (3, 1)])
def test_fbfly_invalid(k, n):
    with pytest.raises(InvalidTopology):
        build_fbfly(k, n)


def test_ring_routes():
    t = build_ring(10, 2)
    assert t.hop_count(0, 5) == 5
    assert t.switch_route(0, 3) == (0, 1, 2, 3)
    assert t.switch_route(0, 8) == (0, 9, 8)


def test_default_path_links_chain():
    t = build_ring(10, 2)
    src, dst = t.hosts[0][0], t.hosts[3][1]
    path = t.default_path(src, dst)
    assert path[0] == t.host_up(src) and path[-1] == t.host_down(dst)
    links = {l.id: l for l in t.packet_links}
    inner = [links[i] for i in path[1:-1]]
    assert inner[0].src == ("switch", 0) and inner[-1].dst == ("switch", 3)
    for a, b in zip(inner, inner[1:]):
        assert a.dst == b.src


def test_default_path_errors():
    t = build_ring(4, 2)
    with pytest.raises(ValueError):
        t.default_path(1, 1)
    with pytest.raises(ValueError):
        t.default_path(0, 999)


@pytest.mark.parametrize("builder", [lambda: build_ring(9, 1), lambda: build_ring(12, 1),
                                     lambda: build_fbfly(3, 3, 1), lambda: build_fbfly(4, 3, 1),
                                     lambda: build_fbfly(3, 4, 1)])
def test_routes_match_bfs_oracle(builder):
    t = builder()
    dist = bfs_hops(t)
    for s in range(t.n_switches):
        for d in range(t.n_switches):
            assert t.hop_count(s, d) == dist[(s, d)]
            assert t.switch_route(s, d) == lexicographic_shortest(t, s, d)


def test_max_hops_formulas():
    for n in range(3, 17):
        assert build_ring(n, 1).max_hops() == n // 2
    for k, n in [(2, 2), (3, 3), (4, 3), (3, 4), (2, 5)]:
        assert build_fbfly(k, n, 1).max_hops() == n - 1


def test_fbfly_pairs_within_two_hops():
    t = build_fbfly(3, 3, 1)
    assert max(bfs_hops(t).values()) <= 2


def test_adjacency_csv():
    t = build_ring(3, 1, packet_rate=10 * GBPS)
    lines = t.adjacency_csv().strip().splitlines()
    assert lines[0] == "src_switch,dst_switch,capacity_bps"
    assert len(lines) == 7
    assert "0,1,10000000000" in lines


def test_link_id_blocks():
    t = build_ring(4, 3)
    assert t.link_kind(0) == "packet"
    assert t.link_kind(t.host_up(0)) == "host"
    assert t.link_kind(t.host_down(11)) == "host"
    c = t.circuit_link(2, 3)
    assert t.link_kind(c) == "circuit" and t.circuit_endpoints(c) == (2, 3)
    assert t.base_capacity[c] == 0
    assert t.ocs_ports == {s: 1 for s in range(4)}
    assert t.circuit_rate == 10 * t.packet_rate
