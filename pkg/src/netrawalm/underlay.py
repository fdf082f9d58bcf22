"""Physical network model: routers, LANs behind gateways, weighted links.

Also carries the DiffServ machinery the protocol marks its streaming
packets with: the 3-bit precedence encoding and the router's TOS-aware
route selection (exact match, TOS-0 fallback, ICMP drop).

Endpoints in the link graph are either router ids (strings) or host node
ids (ints). Shortest paths are computed once per topology with a
deterministic Dijkstra and cached; path tie-breaks follow the vertex
declaration order so replaying a trace always maps an overlay hop to the
same underlay link sequence.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from .resources import NodeId

Endpoint = str | int  # router token or host node id


class TopologyError(ValueError):
    """Malformed or disconnected topology."""


class UnknownNodeError(KeyError):
    """Host not present in the topology."""


# --- DiffServ TOS ----------------------------------------------------------

PRECEDENCE_NAMES = {
    7: "Network Control",
    6: "Internetwork Control",
    5: "CRITIC/ECP",
    4: "Flash Override",
    3: "Flash",
    2: "Immediate",
    1: "Priority",
    0: "Routine",
}


@dataclass(frozen=True)
class TosValue:
    precedence_bits: int

    def __post_init__(self) -> None:
        if not 0 <= self.precedence_bits <= 7:
            raise ValueError(
                f"precedence bits must be in 0..7, got {self.precedence_bits}"
            )

    @property
    def decimal_encoding(self) -> int:
        return self.precedence_bits * 32

    @property
    def description(self) -> str:
        return PRECEDENCE_NAMES[self.precedence_bits]


TOS_ROUTINE = TosValue(0)
TOS_PRIORITY = TosValue(1)  # decimal 32, the class streaming packets carry


def encode_tos(precedence_bits: int) -> TosValue:
    """Map 3 precedence bits to the 8-bit TOS byte (bits x 32)."""
    return TosValue(precedence_bits)


class IcmpCode(Enum):
    NET_UNREACHABLE_TOS = 11
    HOST_UNREACHABLE_TOS = 12


@dataclass(frozen=True)
class Route:
    destination: Endpoint
    next_hop: str
    tos: TosValue
    metric: int

    def __post_init__(self) -> None:
        if self.metric < 1:
            raise ValueError(f"route metric must be positive, got {self.metric}")


@dataclass(frozen=True)
class RouteDecision:
    forwarded: bool
    next_hop: str | None = None
    icmp_code: IcmpCode | None = None

    @classmethod
    def forward(cls, next_hop: str) -> RouteDecision:
        return cls(forwarded=True, next_hop=next_hop)

    @classmethod
    def drop(cls, code: IcmpCode) -> RouteDecision:
        return cls(forwarded=False, icmp_code=code)


def select_route(
    table: Iterable[Route], destination: Endpoint, packet_tos: TosValue
) -> RouteDecision:
    """Pick a route the way a TOS-aware router does.

    Exact-TOS matches first, best metric wins (ties by lowest next-hop
    id). With no exact match the TOS-0 routes are tried the same way.
    Failing both, the packet is dropped: code 11 if the destination is
    known under some other TOS, host-unreachable otherwise.
    """
    to_dest = [r for r in table if r.destination == destination]
    for wanted in (packet_tos.precedence_bits, 0):
        candidates = [r for r in to_dest if r.tos.precedence_bits == wanted]
        if candidates:
            best = min(candidates, key=lambda r: (r.metric, r.next_hop))
            return RouteDecision.forward(best.next_hop)
    if to_dest:
        return RouteDecision.drop(IcmpCode.NET_UNREACHABLE_TOS)
    return RouteDecision.drop(IcmpCode.HOST_UNREACHABLE_TOS)


# --- Topology ---------------------------------------------------------------


@dataclass(frozen=True)
class Link:
    a: Endpoint
    b: Endpoint
    delay_ms: int
    capacity_bps: int

    def __post_init__(self) -> None:
        if self.delay_ms < 0:
            raise ValueError(f"link delay must be >= 0, got {self.delay_ms}")
        if self.capacity_bps <= 0:
            raise ValueError(f"link capacity must be > 0, got {self.capacity_bps}")
        if self.a == self.b:
            raise ValueError(f"self-link on {self.a}")

    def key(self) -> tuple:
        return link_key(self.a, self.b)


def link_key(a: Endpoint, b: Endpoint) -> tuple:
    """Canonical undirected identity of a link endpoint pair."""
    ka = (0, a) if isinstance(a, int) else (1, a)
    kb = (0, b) if isinstance(b, int) else (1, b)
    return (ka, kb) if ka <= kb else (kb, ka)


def format_link(key: tuple) -> str:
    (_, a), (_, b) = key
    return f"{a}-{b}"


class UnderlayTopology:
    """Immutable router/host graph with LANs keyed by gateway token.

    Hosts attach to routers; every host belongs to exactly one LAN, the
    set of hosts sharing its gateway token. The whole graph must be
    connected over hosts.
    """

    def __init__(
        self,
        routers: Iterable[str],
        hosts: Mapping[NodeId, str],        # node -> attachment router
        gateways: Mapping[NodeId, str],     # node -> gateway token
        links: Iterable[Link],
    ):
        self.routers = frozenset(routers)
        self.hosts = dict(hosts)
        self.gateways = dict(gateways)
        self.links = tuple(links)
        self._validate()

        # Dense vertex indexing: hosts in id order, then routers in name
        # order. Dijkstra tie-breaks on these indices.
        self._vertices: list = sorted(self.hosts) + sorted(self.routers)
        self._index = {v: i for i, v in enumerate(self._vertices)}
        self._adj: list[list[tuple[int, int]]] = [[] for _ in self._vertices]
        for ln in self.links:
            ia, ib = self._index[ln.a], self._index[ln.b]
            self._adj[ia].append((ib, ln.delay_ms))
            self._adj[ib].append((ia, ln.delay_ms))
        for nbrs in self._adj:
            nbrs.sort()
        self._dist_cache: dict[int, list[int | None]] = {}
        self._prev_cache: dict[int, list[int]] = {}

    def _validate(self) -> None:
        if not self.hosts:
            raise TopologyError("topology has no hosts")
        for node, router in self.hosts.items():
            if router not in self.routers:
                raise TopologyError(f"host {node} attaches to unknown router {router}")
            if node not in self.gateways:
                raise TopologyError(f"host {node} has no gateway token")
        known = set(self.hosts) | self.routers
        for ln in self.links:
            for end in (ln.a, ln.b):
                if end not in known:
                    raise TopologyError(f"link endpoint {end!r} is not declared")
        # connectivity over hosts
        if len(self.hosts) > 1:
            seen = set()
            stack = [next(iter(sorted(self.hosts)))]
            adj: dict = {}
            for ln in self.links:
                adj.setdefault(ln.a, []).append(ln.b)
                adj.setdefault(ln.b, []).append(ln.a)
            while stack:
                v = stack.pop()
                if v in seen:
                    continue
                seen.add(v)
                stack.extend(adj.get(v, []))
            missing = sorted(set(self.hosts) - seen)
            if missing:
                raise TopologyError(f"hosts not connected: {missing}")

    # -- LANs ---------------------------------------------------------------

    def lan_of(self, node: NodeId) -> str:
        """Gateway token naming the node's LAN."""
        try:
            return self.gateways[node]
        except KeyError:
            raise UnknownNodeError(node) from None

    def lans(self) -> dict[str, list[NodeId]]:
        """Partition of hosts by gateway token; member lists sorted."""
        out: dict[str, list[NodeId]] = {}
        for node in sorted(self.hosts):
            out.setdefault(self.gateways[node], []).append(node)
        return out

    # -- shortest paths -------------------------------------------------------

    def _dijkstra(self, src_idx: int) -> None:
        n = len(self._vertices)
        dist: list[int | None] = [None] * n
        prev = [-1] * n
        dist[src_idx] = 0
        heap = [(0, src_idx)]
        while heap:
            d, u = heapq.heappop(heap)
            if dist[u] is not None and d > dist[u]:
                continue
            for v, w in self._adj[u]:
                nd = d + w
                if dist[v] is None or nd < dist[v] or (nd == dist[v] and u < prev[v]):
                    dist[v] = nd
                    prev[v] = u
                    heapq.heappush(heap, (nd, v))
        self._dist_cache[src_idx] = dist
        self._prev_cache[src_idx] = prev

    def shortest_path_delay(self, a: NodeId, b: NodeId) -> int:
        """Exact shortest-path delay (ms) between two hosts."""
        for end in (a, b):
            if end not in self.hosts:
                raise UnknownNodeError(end)
        if a == b:
            return 0
        ia, ib = self._index[a], self._index[b]
        if ia not in self._dist_cache:
            self._dijkstra(ia)
        d = self._dist_cache[ia][ib]
        if d is None:
            raise TopologyError(f"hosts {a} and {b} are disconnected")
        return d

    def shortest_path_links(self, a: NodeId, b: NodeId) -> list[tuple]:
        """Canonical link keys along one deterministic shortest a-b path."""
        for end in (a, b):
            if end not in self.hosts:
                raise UnknownNodeError(end)
        if a == b:
            return []
        ia, ib = self._index[a], self._index[b]
        if ia not in self._dist_cache:
            self._dijkstra(ia)
        prev = self._prev_cache[ia]
        if self._dist_cache[ia][ib] is None:
            raise TopologyError(f"hosts {a} and {b} are disconnected")
        hops = []
        cur = ib
        while cur != ia:
            p = prev[cur]
            hops.append(link_key(self._vertices[p], self._vertices[cur]))
            cur = p
        hops.reverse()
        return hops

    def delay_between(self, a: NodeId, b: NodeId) -> int:
        return self.shortest_path_delay(a, b)

    def rtt(self, a: NodeId, b: NodeId) -> int:
        """Round-trip estimate: simulated one-way delay x 2."""
        return 2 * self.shortest_path_delay(a, b)
