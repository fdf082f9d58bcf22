"""Layered cluster membership: join descent, leave, failure detection,
leader selection and reconciliation, and split/merge refinement.

The hierarchy keeps every member in layer 0; a node sits in layer j+1
exactly when it leads a cluster in layer j. Cluster sizes stay within
[k, 3k-1] once refinement quiesces, except a cluster that is alone in
its layer. The top layer always holds a single cluster whose leader is
the Tree Head, the entry point for join queries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable

from .resources import NodeId

DistanceFn = Callable[[NodeId, NodeId], int]


class MembershipError(RuntimeError):
    pass


class MessageKind(Enum):
    JOIN_QUERY = "JoinQuery"
    JOIN_RESPONSE = "JoinResponse"
    REMOVE = "Remove"
    HEARTBEAT = "HeartBeat"
    LEADER_TRANSFER = "LeaderTransfer"


@dataclass(frozen=True)
class MembershipMessage:
    kind: MessageKind
    sender: NodeId
    receiver: NodeId
    detail: str = ""

    def trace_line(self) -> str:
        base = f"{self.kind.value} {self.sender} {self.receiver}"
        return f"{base} {self.detail}" if self.detail else base


@dataclass(eq=False)
class ClusterState:
    layer: int
    members: set[NodeId]
    leader: NodeId
    k: int

    def __post_init__(self) -> None:
        if self.k < 2:
            raise ValueError(f"cluster parameter k must be >= 2, got {self.k}")
        if self.leader not in self.members:
            raise ValueError(f"leader {self.leader} not in members")

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def oversized(self) -> bool:
        return self.size > 3 * self.k - 1

    @property
    def undersized(self) -> bool:
        return self.size < self.k

    def sorted_members(self) -> list[NodeId]:
        return sorted(self.members)

    def label(self) -> str:
        return f"L{self.layer}:{'.'.join(map(str, self.sorted_members()))}"


@dataclass
class FailureDetectorState:
    heartbeat_interval: int            # milliseconds
    timeout_multiplier: int
    last_seen: dict[NodeId, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.heartbeat_interval <= 0:
            raise ValueError("heartbeat interval must be positive")
        if self.timeout_multiplier < 1:
            raise ValueError("timeout multiplier must be >= 1")

    @property
    def timeout(self) -> int:
        return self.heartbeat_interval * self.timeout_multiplier

    def observe(self, peer: NodeId, now: int) -> None:
        self.last_seen[peer] = now

    def forget(self, peer: NodeId) -> None:
        self.last_seen.pop(peer, None)


def detect_failure(state: FailureDetectorState, now: int) -> set[NodeId]:
    """Peers silent strictly longer than interval x multiplier."""
    return {
        peer
        for peer, seen in state.last_seen.items()
        if now - seen > state.timeout
    }


def select_leader(members: Iterable[NodeId], dist: DistanceFn) -> NodeId:
    """The member minimizing its maximum delay to the others; ties by id."""
    pool = sorted(set(members))
    if not pool:
        raise MembershipError("cannot select a leader of an empty cluster")
    if len(pool) == 1:
        return pool[0]

    def eccentricity(node: NodeId) -> int:
        return max(dist(node, other) for other in pool if other != node)

    return min(pool, key=lambda n: (eccentricity(n), n))


def reconcile_leaders(
    candidate_a: NodeId,
    candidate_b: NodeId,
    view_a: Iterable[NodeId],
    view_b: Iterable[NodeId],
    dist: DistanceFn,
) -> tuple[NodeId, set[NodeId], list[MembershipMessage]]:
    """Collapse two self-declared leaders of one cluster into a single one.

    The winner is whoever select_leader picks on the union of the two
    views; the loser adopts that view. Exactly one LeaderTransfer
    exchange (one message each way) is emitted.
    """
    view_a, view_b = set(view_a), set(view_b)
    if candidate_a not in view_a:
        raise MembershipError(f"candidate {candidate_a} not in its own view")
    if candidate_b not in view_b:
        raise MembershipError(f"candidate {candidate_b} not in its own view")
    union = view_a | view_b
    winner = select_leader(union, dist)
    detail = "members=" + ".".join(map(str, sorted(union)))
    messages = [
        MembershipMessage(MessageKind.LEADER_TRANSFER, candidate_a, candidate_b, detail),
        MembershipMessage(MessageKind.LEADER_TRANSFER, candidate_b, candidate_a, detail),
    ]
    return winner, union, messages


def _proximity_groups(nodes: list[NodeId], dist: DistanceFn, k: int) -> list[list[NodeId]]:
    """Greedy closeness grouping: seed with the lowest id, pull in the k-1
    nearest unassigned nodes, absorb a short tail into the last group."""
    unassigned = sorted(set(nodes))
    groups: list[list[NodeId]] = []
    while unassigned:
        seed = unassigned.pop(0)
        near = sorted(unassigned, key=lambda n: (dist(seed, n), n))[: k - 1]
        for n in near:
            unassigned.remove(n)
        group = sorted([seed] + near)
        if 0 < len(unassigned) < k:
            group = sorted(group + unassigned)
            unassigned = []
        groups.append(group)
    return groups


class Hierarchy:
    """Mutable layered-cluster state with deterministic refinement.

    Operations append protocol messages to self.messages; callers drain
    them (the simulator turns them into timed deliveries).
    """

    def __init__(self, k: int, dist: DistanceFn):
        if k < 2:
            raise ValueError(f"cluster parameter k must be >= 2, got {k}")
        self.k = k
        self.dist = dist
        self.layers: list[list[ClusterState]] = [[]]
        self.messages: list[MembershipMessage] = []

    # -- construction ---------------------------------------------------------

    @classmethod
    def bootstrap_lan_seeded(
        cls,
        lans: dict[str, list[NodeId]],
        headers: dict[str, NodeId],
        dist: DistanceFn,
        k: int,
    ) -> Hierarchy:
        """Layer-0 clusters seeded from LANs with their headers as leaders,
        then refined to the size bounds."""
        h = cls(k, dist)
        clusters = []
        for gw in sorted(lans):
            members = set(lans[gw])
            if not members:
                continue
            clusters.append(ClusterState(0, members, headers[gw], k))
        h.layers = [clusters]
        h._normalize()
        return h

    @classmethod
    def bootstrap_proximity(
        cls, members: Iterable[NodeId], dist: DistanceFn, k: int
    ) -> Hierarchy:
        """Resource-blind bootstrap: closeness grouping, center leaders."""
        h = cls(k, dist)
        pool = sorted(set(members))
        clusters = [
            ClusterState(0, set(g), select_leader(g, dist), k)
            for g in _proximity_groups(pool, dist, k)
        ]
        h.layers = [clusters]
        h._normalize()
        return h

    # -- queries --------------------------------------------------------------

    def all_members(self) -> list[NodeId]:
        return sorted({n for c in self.layers[0] for n in c.members})

    def __contains__(self, node: NodeId) -> bool:
        return any(node in c.members for c in self.layers[0])

    def find(self, node: NodeId, layer: int) -> ClusterState | None:
        if layer >= len(self.layers):
            return None
        for c in self.layers[layer]:
            if node in c.members:
                return c
        return None

    def clusters_of(self, node: NodeId) -> list[ClusterState]:
        out = []
        for layer in self.layers:
            for c in layer:
                if node in c.members:
                    out.append(c)
        return out

    def tree_head(self) -> NodeId:
        if not self.layers[0]:
            raise MembershipError("empty hierarchy has no tree head")
        return self.layers[-1][0].leader

    def top_layer(self) -> int:
        return len(self.layers) - 1

    # -- protocol operations ----------------------------------------------------

    def join(self, joiner: NodeId) -> ClusterState:
        """Layered join descent from the Tree Head down to a layer-0 cluster.

        Emits the full query/response traffic: the Tree Head hands out the
        top cluster, the joiner pings every member of the current cluster,
        descends into the closest member's cluster one layer down, and
        finally asks the closest layer-0 leader to admit it.
        """
        if joiner in self:
            raise MembershipError(f"node {joiner} is already a member")
        if not self.layers[0]:
            self.layers = [[ClusterState(0, {joiner}, joiner, self.k)]]
            return self.layers[0][0]

        def rtt(a: NodeId, b: NodeId) -> int:
            return 2 * self.dist(a, b)

        th = self.tree_head()
        self._emit(MessageKind.JOIN_QUERY, joiner, th, "join")
        current = self.layers[-1][0]
        self._emit(MessageKind.JOIN_RESPONSE, th, joiner,
                   "members=" + ".".join(map(str, current.sorted_members())))
        while current.layer > 0:
            for m in current.sorted_members():
                self._emit(MessageKind.JOIN_QUERY, joiner, m, "ping")
                self._emit(MessageKind.JOIN_RESPONSE, m, joiner, "pong")
            closest = min(current.sorted_members(), key=lambda m: (rtt(joiner, m), m))
            current = self.find(closest, current.layer - 1)
        self._emit(MessageKind.JOIN_QUERY, joiner, current.leader, "admit")
        self._emit(MessageKind.JOIN_RESPONSE, current.leader, joiner,
                   "cluster=" + current.label())
        current.members.add(joiner)
        placed = current
        self._normalize()
        return self.find(joiner, 0) or placed

    def graceful_leave(self, leaver: NodeId) -> None:
        """Remove message to every cluster the leaver belongs to, then the
        same cleanup the failure detector would trigger."""
        clusters = self.clusters_of(leaver)
        if not clusters:
            raise MembershipError(f"node {leaver} is not a member")
        layer_list = ",".join(str(c.layer) for c in clusters)
        for c in clusters:
            others = [n for n in c.sorted_members() if n != leaver]
            receiver = c.leader if c.leader != leaver else (others[0] if others else leaver)
            self._emit(MessageKind.REMOVE, leaver, receiver, f"layers={layer_list}")
        self._remove(leaver)

    def remove_dead(self, node: NodeId) -> None:
        """Detector-triggered cleanup: no Remove is synthesized for the dead
        node; survivors just repair the hierarchy."""
        if node not in self:
            return
        self._remove(node)

    def refine(self, cluster: ClusterState) -> list[ClusterState]:
        """Apply the size bounds to one cluster.

        Oversized clusters split into two near-halves with fresh leaders;
        undersized ones merge into the closest sibling (possibly splitting
        again); in-bounds clusters are returned unchanged. Returns the
        clusters now holding the original members.
        """
        layer_idx = cluster.layer
        if cluster not in self.layers[layer_idx]:
            raise MembershipError("cluster is not part of this hierarchy")
        original = set(cluster.members)
        if cluster.oversized:
            self._split(cluster)
        elif cluster.undersized and len(self.layers[layer_idx]) > 1:
            self._merge(cluster)
        else:
            return [cluster]
        self._normalize()
        if layer_idx >= len(self.layers):
            return []
        return [c for c in self.layers[layer_idx] if c.members & original]

    # -- internals ----------------------------------------------------------------

    def _emit(self, kind: MessageKind, sender: NodeId, receiver: NodeId,
              detail: str = "") -> None:
        self.messages.append(MembershipMessage(kind, sender, receiver, detail))

    def drain_messages(self) -> list[MembershipMessage]:
        out, self.messages = self.messages, []
        return out

    def _remove(self, node: NodeId) -> None:
        for layer in self.layers:
            for c in layer:
                if node in c.members:
                    c.members.discard(node)
        self._normalize()

    def _announce_leader(self, cluster: ClusterState, new_leader: NodeId) -> None:
        for m in cluster.sorted_members():
            if m != new_leader:
                self._emit(MessageKind.LEADER_TRANSFER, new_leader, m,
                           "cluster=" + cluster.label())

    def _split(self, cluster: ClusterState) -> tuple[ClusterState, ClusterState]:
        members = sorted(cluster.members,
                         key=lambda m: (self.dist(m, cluster.leader), m))
        half = (len(members) + 1) // 2
        near, far = set(members[:half]), set(members[half:])
        layer = self.layers[cluster.layer]
        idx = layer.index(cluster)
        a = ClusterState(cluster.layer, near, select_leader(near, self.dist), self.k)
        b = ClusterState(cluster.layer, far, select_leader(far, self.dist), self.k)
        layer[idx:idx + 1] = [a, b]
        for piece in (a, b):
            if piece.leader != cluster.leader:
                self._announce_leader(piece, piece.leader)
        return a, b

    def _merge(self, cluster: ClusterState) -> ClusterState:
        layer = self.layers[cluster.layer]
        siblings = [c for c in layer if c is not cluster]
        target = min(siblings,
                     key=lambda c: (self.dist(cluster.leader, c.leader), c.leader))
        union = cluster.members | target.members
        merged = ClusterState(cluster.layer, union,
                              select_leader(union, self.dist), self.k)
        idx = min(layer.index(cluster), layer.index(target))
        layer.remove(cluster)
        layer.remove(target)
        layer.insert(idx, merged)
        self._announce_leader(merged, merged.leader)
        return merged

    def _normalize(self) -> None:
        """Restore the canonical structure after any mutation.

        Layer by layer: drop empty clusters, re-elect missing leaders,
        enforce the size bounds, then sync the layer above to hold exactly
        the leaders of this layer. A layer with a single cluster is the
        top; anything above it is dropped.
        """
        j = 0
        while j < len(self.layers):
            layer = self.layers[j]
            layer[:] = [c for c in layer if c.members]
            if not layer:
                del self.layers[j:]
                break
            for c in layer:
                if c.leader not in c.members:
                    c.leader = select_leader(c.members, self.dist)
                    self._announce_leader(c, c.leader)
            guard = 0
            while True:
                guard += 1
                if guard > 10_000:
                    raise MembershipError("refinement did not quiesce")
                over = [c for c in layer if c.oversized]
                if over:
                    self._split(over[0])
                    continue
                under = [c for c in layer if c.undersized and len(layer) > 1]
                if under:
                    self._merge(under[0])
                    continue
                break
            layer.sort(key=lambda c: c.sorted_members()[0])
            if len(layer) == 1:
                del self.layers[j + 1:]
                break
            leaders = {c.leader for c in layer}
            if j + 1 == len(self.layers):
                self.layers.append([])
            upper = self.layers[j + 1]
            for c in upper:
                c.members &= leaders
            present = {n for c in upper for n in c.members}
            for node in sorted(leaders - present):
                live = [c for c in upper if c.members]
                if not live:
                    upper.append(ClusterState(j + 1, {node}, node, self.k))
                else:
                    def anchor(c: ClusterState) -> NodeId:
                        return c.leader if c.leader in c.members else c.sorted_members()[0]

                    target = min(
                        live,
                        key=lambda c: (self.dist(node, anchor(c)), anchor(c)),
                    )
                    target.members.add(node)
            j += 1
        if not self.layers:
            self.layers = [[]]

    # -- validation -----------------------------------------------------------

    def check_invariants(self) -> list[str]:
        problems: list[str] = []
        if not self.layers[0]:
            return problems
        for j, layer in enumerate(self.layers):
            seen: set[NodeId] = set()
            for c in layer:
                if c.layer != j:
                    problems.append(f"cluster {c.label()} carries wrong layer index")
                if c.leader not in c.members:
                    problems.append(f"leader {c.leader} outside {c.label()}")
                overlap = seen & c.members
                if overlap:
                    problems.append(f"layer {j} overlap on {sorted(overlap)}")
                seen |= c.members
                if c.oversized:
                    problems.append(f"cluster {c.label()} oversized")
                if c.undersized and len(layer) > 1:
                    problems.append(f"cluster {c.label()} undersized with siblings")
            if j > 0:
                expected = {c.leader for c in self.layers[j - 1]}
                if seen != expected:
                    problems.append(
                        f"layer {j} members {sorted(seen)} != leaders below "
                        f"{sorted(expected)}"
                    )
        if len(self.layers[-1]) != 1:
            problems.append("top layer does not hold a single cluster")
        return problems
