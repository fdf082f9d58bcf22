"""Resource-aware multicast tree construction and single-failure repair.

The tree is shaped by two bounds: each node may hold at most p children
(p = floor(free network bandwidth / application bandwidth)), and the
level at depth d may hold at most 2^(d-1) nodes (root depth is 1). One
header per LAN is elected by capacity; headers attach to other headers,
everyone else attaches inside its own LAN. Attachment order is the
capacity priority queue; each node goes to the shallowest parent with
spare capacity, ties broken by the parent's attachment order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .resources import (
    NodeId,
    NodeProfile,
    ProfileTable,
    best_node,
    build_priority_queue,
)
from .underlay import UnderlayTopology


class InsufficientBandwidthError(ValueError):
    """Free bandwidth below one application stream: no distribution possible."""


class PlacementError(RuntimeError):
    """A member could not be attached under the capacity/height bounds."""

    def __init__(self, node: NodeId):
        self.node = node
        super().__init__(f"no parent with spare capacity for node {node}")


class UnknownMemberError(KeyError):
    pass


@dataclass(frozen=True)
class FanoutThreshold:
    p: int
    free_network_bandwidth: int   # bits/second
    application_bandwidth: int    # bits/second


def compute_fanout_threshold(free_bw: int, app_bw: int) -> FanoutThreshold:
    """p = floor(free bandwidth / application bandwidth)."""
    if app_bw <= 0:
        raise ValueError(f"application bandwidth must be positive, got {app_bw}")
    if free_bw < 0:
        raise ValueError(f"free bandwidth must be >= 0, got {free_bw}")
    p = free_bw // app_bw
    if p == 0:
        raise InsufficientBandwidthError(
            f"free bandwidth {free_bw} cannot carry one stream of {app_bw}"
        )
    return FanoutThreshold(p, free_bw, app_bw)


def needs_tree(n: int, p: FanoutThreshold | int) -> bool:
    """Tree formation is required only when participants outnumber p."""
    if n < 0:
        raise ValueError(f"participant count must be >= 0, got {n}")
    return n > _p_value(p)


def _p_value(p: FanoutThreshold | int) -> int:
    return p.p if isinstance(p, FanoutThreshold) else int(p)


def elect_headers(
    profiles: Iterable[NodeProfile], topology: UnderlayTopology
) -> dict[str, NodeId]:
    """Capacity-maximal member of every populated LAN."""
    by_lan: dict[str, list[NodeProfile]] = {}
    for prof in profiles:
        by_lan.setdefault(topology.lan_of(prof.node), []).append(prof)
    return {lan: best_node(group) for lan, group in sorted(by_lan.items())}


@dataclass(frozen=True)
class OverlayTree:
    """Immutable snapshot of the distribution tree.

    Repairs produce a new snapshot; the dict fields are never mutated in
    place after construction.
    """

    root: NodeId
    parent_of: dict[NodeId, NodeId]
    children_of: dict[NodeId, list[NodeId]]
    depth_of: dict[NodeId, int]
    headers: dict[str, NodeId]            # gateway -> header node
    lan_by_node: dict[NodeId, str]
    attach_seq: dict[NodeId, int]
    p: int

    @property
    def height(self) -> int:
        return max(self.depth_of.values())

    def members(self) -> list[NodeId]:
        return sorted(self.depth_of)

    def __contains__(self, node: NodeId) -> bool:
        return node in self.depth_of

    def subtree(self, node: NodeId) -> list[NodeId]:
        """node plus all its descendants, preorder."""
        if node not in self.depth_of:
            raise UnknownMemberError(node)
        out = []
        stack = [node]
        while stack:
            cur = stack.pop()
            out.append(cur)
            stack.extend(reversed(self.children_of.get(cur, [])))
        return out

    def path_from_root(self, node: NodeId) -> list[NodeId]:
        if node not in self.depth_of:
            raise UnknownMemberError(node)
        path = [node]
        while path[-1] != self.root:
            path.append(self.parent_of[path[-1]])
        path.reverse()
        return path

    def is_header(self, node: NodeId) -> bool:
        return node in self.headers.values()

    def dump(self) -> str:
        """One line per node: id, depth, parent, LAN, header flag."""
        lines = []
        for node in self.members():
            parent = self.parent_of.get(node)
            lines.append(
                "{} {} {} {} {}".format(
                    node,
                    self.depth_of[node],
                    "-" if parent is None else parent,
                    self.lan_by_node[node],
                    "header" if self.is_header(node) else "-",
                )
            )
        return "\n".join(lines) + "\n"


class _Builder:
    """Mutable attachment state shared by build and repair."""

    def __init__(self, p: int, max_height: int | None = None):
        if p < 1:
            raise InsufficientBandwidthError(f"fan-out threshold must be >= 1, got {p}")
        self.p = p
        self.max_height = max_height
        self.parent_of: dict[NodeId, NodeId] = {}
        self.children_of: dict[NodeId, list[NodeId]] = {}
        self.depth_of: dict[NodeId, int] = {}
        self.attach_seq: dict[NodeId, int] = {}
        self.level_count: dict[int, int] = {}
        self.next_seq = 0

    def place(self, node: NodeId, parent: NodeId | None, depth: int, seq: int,
              slot: int | None = None) -> None:
        """Put node into an exact slot, bypassing the attachment search."""
        self.children_of[node] = []
        self.depth_of[node] = depth
        self.level_count[depth] = self.level_count.get(depth, 0) + 1
        self.attach_seq[node] = seq
        self.next_seq = max(self.next_seq, seq + 1)
        if parent is not None:
            siblings = self.children_of[parent]
            siblings.insert(len(siblings) if slot is None else slot, node)
            self.parent_of[node] = parent

    def can_accept(self, parent: NodeId) -> bool:
        d = self.depth_of[parent]
        if self.max_height is not None and d + 1 > self.max_height:
            return False
        if len(self.children_of[parent]) >= self.p:
            return False
        return self.level_count.get(d + 1, 0) < 2 ** d

    def attach(self, node: NodeId, candidates: Iterable[NodeId]) -> None:
        open_slots = [c for c in candidates if self.can_accept(c)]
        if not open_slots:
            raise PlacementError(node)
        parent = min(open_slots, key=lambda c: (self.depth_of[c], self.attach_seq[c]))
        self.place(node, parent, self.depth_of[parent] + 1, self.next_seq)


def _finish(builder: _Builder, root: NodeId, headers: dict[str, NodeId],
            lan_by_node: dict[NodeId, str]) -> OverlayTree:
    return OverlayTree(
        root=root,
        parent_of=builder.parent_of,
        children_of=builder.children_of,
        depth_of=builder.depth_of,
        headers=headers,
        lan_by_node={n: lan_by_node[n] for n in builder.depth_of},
        attach_seq=builder.attach_seq,
        p=builder.p,
    )


def build_tree(
    profiles: Iterable[NodeProfile],
    topology: UnderlayTopology,
    p: FanoutThreshold | int,
    max_height: int | None = None,
) -> OverlayTree:
    """Build the resource-aware distribution tree.

    Headers come first, in priority-queue order, each under the
    shallowest already-attached header with spare capacity; the global
    capacity maximum among headers is the root. Every other member then
    attaches the same way, but only under nodes of its own LAN, which
    keeps it inside its header's subtree.
    """
    table = ProfileTable(profiles)
    if len(table) == 0:
        raise ValueError("cannot build a tree with no profiles")
    headers = elect_headers(table.profiles(), topology)
    header_set = set(headers.values())
    pq = build_priority_queue(table.profiles())

    builder = _Builder(_p_value(p), max_height)
    root = best_node(table.subset(header_set))
    builder.place(root, None, 1, 0)

    attached_headers = [root]
    for node in pq:
        if node in header_set and node != root:
            builder.attach(node, attached_headers)
            attached_headers.append(node)

    lan_nodes: dict[str, list[NodeId]] = {}
    for h in header_set:
        lan_nodes.setdefault(topology.lan_of(h), []).append(h)
    for node in pq:
        if node not in header_set:
            lan = topology.lan_of(node)
            builder.attach(node, lan_nodes[lan])
            lan_nodes[lan].append(node)

    return _finish(builder, root, headers,
                   {n: topology.lan_of(n) for n in table})


def replace_failed_interior(
    tree: OverlayTree,
    failed: NodeId,
    profiles: Iterable[NodeProfile],
    max_height: int | None = None,
) -> OverlayTree:
    """Remove a non-root member and heal the tree.

    The capacity-maximal node of the failed member's subtree is promoted
    into its exact slot; everyone else from that subtree re-runs the
    attachment procedure in priority-queue order. The failed node's LAN
    re-elects its header first, so the replacement header is placed
    ahead of its LAN-mates.
    """
    if failed not in tree:
        raise UnknownMemberError(failed)
    if failed == tree.root:
        raise ValueError("root failure is handled by leader selection, not repair")

    table = ProfileTable(profiles)
    orphan_pool = set(tree.subtree(failed)) - {failed}
    keep = [n for n in tree.members() if n != failed and n not in orphan_pool]

    headers = dict(tree.headers)
    failed_lan = tree.lan_by_node[failed]
    if headers.get(failed_lan) == failed:
        lan_survivors = [
            n for n in tree.members()
            if n != failed and tree.lan_by_node[n] == failed_lan
        ]
        if lan_survivors:
            headers[failed_lan] = best_node(table.subset(lan_survivors))
        else:
            del headers[failed_lan]
    header_set = set(headers.values())

    # Copy the untouched part of the tree verbatim, minus the failed node.
    builder = _Builder(tree.p, max_height)
    for node in sorted(keep, key=lambda n: (tree.depth_of[n], tree.attach_seq[n])):
        builder.place(node, tree.parent_of.get(node), tree.depth_of[node],
                      tree.attach_seq[node])

    # Sibling lists stay sorted by attach_seq, so the kept copy reproduces
    # the original child order and the failed node's slot index carries over.
    old_parent = tree.parent_of[failed]
    slot = tree.children_of[old_parent].index(failed)

    attached_headers = [n for n in keep if n in header_set]
    lan_nodes: dict[str, list[NodeId]] = {}
    for node in keep:
        lan_nodes.setdefault(tree.lan_by_node[node], []).append(node)

    promoted = None
    if orphan_pool:
        promoted = best_node(table.subset(orphan_pool))
        builder.place(promoted, old_parent, tree.depth_of[failed],
                      tree.attach_seq[failed], slot=slot)
        if promoted in header_set:
            attached_headers.append(promoted)
        lan_nodes.setdefault(tree.lan_by_node[promoted], []).append(promoted)

        orphans = [n for n in build_priority_queue(table.subset(orphan_pool))
                   if n != promoted]
        for node in orphans:
            if node in header_set:
                builder.attach(node, attached_headers)
                attached_headers.append(node)
            else:
                lan = tree.lan_by_node[node]
                builder.attach(node, lan_nodes.get(lan, []))
                lan_nodes.setdefault(lan, []).append(node)

    return _finish(builder, tree.root, headers, tree.lan_by_node)


def check_tree_invariants(
    tree: OverlayTree,
    profiles: Iterable[NodeProfile],
    topology: UnderlayTopology | None = None,
) -> list[str]:
    """All structural invariant violations, empty when the tree is sound."""
    problems: list[str] = []
    members = tree.members()
    table = ProfileTable(profiles)

    if tree.root not in tree.depth_of:
        return [f"root {tree.root} is not a member"]
    if tree.root in tree.parent_of:
        problems.append("root has a parent")
    if tree.depth_of[tree.root] != 1:
        problems.append("root depth is not 1")

    for node in members:
        if node == tree.root:
            continue
        parent = tree.parent_of.get(node)
        if parent is None:
            problems.append(f"node {node} has no parent")
            continue
        if node not in tree.children_of.get(parent, []):
            problems.append(f"node {node} missing from parent {parent} child list")
        if tree.depth_of[node] != tree.depth_of[parent] + 1:
            problems.append(f"node {node} depth inconsistent with parent")

    for node, kids in tree.children_of.items():
        if len(kids) != len(set(kids)):
            problems.append(f"duplicate children under {node}")
        if len(kids) > tree.p:
            problems.append(f"node {node} has {len(kids)} children, p={tree.p}")
        for kid in kids:
            if tree.parent_of.get(kid) != node:
                problems.append(f"child {kid} of {node} disagrees about its parent")

    reachable = set(tree.subtree(tree.root))
    if reachable != set(members):
        problems.append(f"unreachable members: {sorted(set(members) - reachable)}")

    counts: dict[int, int] = {}
    for node in members:
        d = tree.depth_of[node]
        counts[d] = counts.get(d, 0) + 1
    for d, c in sorted(counts.items()):
        if c > 2 ** (d - 1):
            problems.append(f"level {d} holds {c} nodes, cap {2 ** (d - 1)}")

    by_lan: dict[str, list[NodeId]] = {}
    for node in members:
        by_lan.setdefault(tree.lan_by_node[node], []).append(node)
    for lan, group in sorted(by_lan.items()):
        header = tree.headers.get(lan)
        if header is None:
            problems.append(f"LAN {lan} has members but no header")
            continue
        if header not in group:
            problems.append(f"header {header} of LAN {lan} is not a member")
            continue
        if best_node(table.subset(group)) != header:
            problems.append(f"header {header} of LAN {lan} is not capacity-maximal")
        in_subtree = set(tree.subtree(header))
        outside = [n for n in group if n not in in_subtree]
        if outside:
            problems.append(f"LAN {lan} members outside header subtree: {outside}")

    return problems
