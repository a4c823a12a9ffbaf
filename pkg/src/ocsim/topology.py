"""Flat upper-tier topologies (Ring, Flattened Butterfly) and default routing.

Switches are numbered ``0..n-1`` and hosts ``0..H-1`` (globally).  Every
physical link is modeled as two directed links.  Link ids are laid out in
fixed blocks so that flow paths can be stored as small integer arrays::

    [packet links][host uplinks][host downlinks][circuit slots n*n]

Circuit slots exist for every ordered switch pair but only carry capacity
while the corresponding circuit is up (the engine owns that state).
"""
from __future__ import annotations

import csv
import io
import itertools
from collections import deque
from dataclasses import dataclass, field

import numpy as np

GBPS = 1e9
MBPS = 1e6


class InvalidTopology(ValueError):
    pass


@dataclass(frozen=True)
class Link:
    id: int
    src: tuple[str, int]   # ("switch", i) or ("host", j)
    dst: tuple[str, int]
    capacity: float        # bits/s
    kind: str              # "packet" | "circuit" | "host"


@dataclass
class Topology:
    name: str
    n_switches: int
    packet_links: list[Link]
    hosts: dict[int, list[int]]
    ocs_ports: dict[int, int]
    packet_rate: float
    host_rate: float
    circuit_rate: float
    _adj: dict[int, list[int]] = field(default_factory=dict, repr=False)
    _routes: dict[tuple[int, int], tuple[int, ...]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.switches = list(range(self.n_switches))
        self.n_hosts = sum(len(h) for h in self.hosts.values())
        self.host_switch = np.empty(self.n_hosts, dtype=np.int64)
        for sw, hs in self.hosts.items():
            self.host_switch[hs] = sw

        self.link_index: dict[tuple[int, int], int] = {}
        self._adj = {s: [] for s in self.switches}
        for link in self.packet_links:
            a, b = link.src[1], link.dst[1]
            if a == b:
                raise InvalidTopology(f"self-loop on switch {a}")
            if (a, b) in self.link_index:
                raise InvalidTopology(f"duplicate link {a}->{b}")
            self.link_index[(a, b)] = link.id
            self._adj[a].append(b)
        for s in self._adj:
            self._adj[s].sort()

        n = self.n_switches
        self.n_packet_links = len(self.packet_links)
        self.host_up_base = self.n_packet_links
        self.host_down_base = self.host_up_base + self.n_hosts
        self.circuit_base = self.host_down_base + self.n_hosts
        self.n_links = self.circuit_base + n * n

        cap = np.zeros(self.n_links)
        for link in self.packet_links:
            cap[link.id] = link.capacity
        cap[self.host_up_base:self.circuit_base] = self.host_rate
        self.base_capacity = cap

        self._routes = self._compute_routes()

    # -- ids ---------------------------------------------------------------
    def host_up(self, host: int) -> int:
        return self.host_up_base + host

    def host_down(self, host: int) -> int:
        return self.host_down_base + host

    def circuit_link(self, src: int, dst: int) -> int:
        return self.circuit_base + src * self.n_switches + dst

    def circuit_endpoints(self, link_id: int) -> tuple[int, int] | None:
        if link_id < self.circuit_base:
            return None
        return divmod(link_id - self.circuit_base, self.n_switches)

    def link_kind(self, link_id: int) -> str:
        if link_id < self.n_packet_links:
            return "packet"
        if link_id < self.circuit_base:
            return "host"
        return "circuit"

    def neighbors(self, switch: int) -> list[int]:
        return self._adj[switch]

    def degree(self, switch: int) -> int:
        return len(self._adj[switch])

    # -- routing -----------------------------------------------------------
    def _bfs_dist(self, dst: int) -> np.ndarray:
        # directed links: distance *to* dst follows reverse edges
        rev = {s: [] for s in self.switches}
        for (a, b) in self.link_index:
            rev[b].append(a)
        dist = np.full(self.n_switches, -1, dtype=np.int64)
        dist[dst] = 0
        q = deque([dst])
        while q:
            x = q.popleft()
            for y in rev[x]:
                if dist[y] < 0:
                    dist[y] = dist[x] + 1
                    q.append(y)
        return dist

    def _compute_routes(self):
        routes = {}
        for d in self.switches:
            dist = self._bfs_dist(d)
            if (dist < 0).any():
                raise InvalidTopology("packet-link graph is not connected")
            for s in self.switches:
                # smallest-id neighbor one step closer gives the
                # lexicographically smallest shortest switch sequence
                seq = [s]
                x = s
                while x != d:
                    x = next(y for y in self._adj[x] if dist[y] == dist[x] - 1)
                    seq.append(x)
                routes[(s, d)] = tuple(seq)
        return routes

    def switch_route(self, src_switch: int, dst_switch: int) -> tuple[int, ...]:
        """Switch sequence of the default route, endpoints included."""
        return self._routes[(src_switch, dst_switch)]

    def hop_count(self, src_switch: int, dst_switch: int) -> int:
        return len(self._routes[(src_switch, dst_switch)]) - 1

    def max_hops(self) -> int:
        return max(len(r) - 1 for r in self._routes.values())

    def packet_path_links(self, seq) -> list[int]:
        return [self.link_index[(a, b)] for a, b in zip(seq, seq[1:])]

    def default_path(self, src: int, dst: int) -> tuple[int, ...]:
        """Shortest packet path between two hosts as a tuple of link ids.

        Ties between equal-length routes are broken by the lexicographically
        smallest switch sequence, so the result is fully deterministic.
        """
        if src == dst:
            raise ValueError("source and destination host are identical")
        if not (0 <= src < self.n_hosts and 0 <= dst < self.n_hosts):
            raise ValueError(f"unknown host in ({src}, {dst})")
        seq = self._routes[(int(self.host_switch[src]), int(self.host_switch[dst]))]
        return (self.host_up(src), *self.packet_path_links(seq), self.host_down(dst))

    def adjacency_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["src_switch", "dst_switch", "capacity_bps"])
        for link in self.packet_links:
            w.writerow([link.src[1], link.dst[1], f"{link.capacity:.0f}"])
        return buf.getvalue()


def _assemble(name, n, pairs, hosts_per_switch, packet_rate, host_rate,
              circuit_rate, ocs_ports):
    if hosts_per_switch < 1:
        raise InvalidTopology("hosts_per_switch must be >= 1")
    if packet_rate <= 0:
        raise InvalidTopology("packet_rate must be positive")
    host_rate = packet_rate if host_rate is None else host_rate
    circuit_rate = 10 * packet_rate if circuit_rate is None else circuit_rate
    if host_rate <= 0 or circuit_rate <= 0 or ocs_ports < 1:
        raise InvalidTopology("rates and ocs_ports must be positive")
    links = [Link(i, ("switch", a), ("switch", b), packet_rate, "packet")
             for i, (a, b) in enumerate(sorted(pairs))]
    hosts = {s: list(range(s * hosts_per_switch, (s + 1) * hosts_per_switch))
             for s in range(n)}
    return Topology(name, n, links, hosts, {s: ocs_ports for s in range(n)},
                    packet_rate, host_rate, circuit_rate)


def build_ring(n: int, hosts_per_switch: int = 40, packet_rate: float = 10 * GBPS,
               host_rate: float | None = None, circuit_rate: float | None = None,
               ocs_ports: int = 1) -> Topology:
    if n < 3:
        raise InvalidTopology(f"ring needs at least 3 switches, got {n}")
    pairs = set()
    for i in range(n):
        j = (i + 1) % n
        pairs.add((i, j))
        pairs.add((j, i))
    return _assemble(f"ring{n}", n, pairs, hosts_per_switch, packet_rate,
                     host_rate, circuit_rate, ocs_ports)


def build_fbfly(k: int, n: int, hosts_per_switch: int = 40, packet_rate: float = 10 * GBPS,
                host_rate: float | None = None, circuit_rate: float | None = None,
                ocs_ports: int = 1) -> Topology:
    """k-ary n-flat flattened butterfly: k**(n-1) switches on an (n-1)-dim grid.

    Each switch connects to every switch that differs in exactly one
    coordinate, giving degree (n-1)*(k-1).
    """
    if k < 2 or n < 2:
        raise InvalidTopology(f"fbfly needs k >= 2 and n >= 2, got k={k}, n={n}")
    dims = n - 1
    coords = list(itertools.product(range(k), repeat=dims))
    index = {c: i for i, c in enumerate(coords)}
    pairs = set()
    for c in coords:
        for d in range(dims):
            for v in range(k):
                if v != c[d]:
                    other = c[:d] + (v,) + c[d + 1:]
                    pairs.add((index[c], index[other]))
    return _assemble(f"fbfly{k}x{n}", len(coords), pairs, hosts_per_switch,
                     packet_rate, host_rate, circuit_rate, ocs_ports)
