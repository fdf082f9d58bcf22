"""Minimal NICE-style comparator overlay.

Deliberately a sketch, not a faithful NICE implementation: layered
clusters grouped by closeness only (resource fields are never read),
leaders are cluster centers, and data is relayed as a single copy along
a chain (send capacity 1), so every node forwards each packet to at most
one next hop. The chain is a proximity-first depth-first walk of the
cluster hierarchy starting at the stream source.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .membership import DistanceFn, Hierarchy
from .resources import NodeId, NodeProfile
from .tree import OverlayTree
from .underlay import UnderlayTopology


@dataclass(frozen=True)
class BaselineConfig:
    k: int = 3
    send_capacity: int = 1

    def __post_init__(self) -> None:
        if self.send_capacity != 1:
            raise ValueError("the baseline always sends a single copy at a time")


@dataclass(frozen=True)
class BaselineOverlay:
    hierarchy: Hierarchy
    chain: list[NodeId]
    tree: OverlayTree

    @property
    def root(self) -> NodeId:
        return self.chain[0]


def relay_chain(hierarchy: Hierarchy, dist: DistanceFn, start: NodeId) -> list[NodeId]:
    """Single-copy relay order covering every member exactly once.

    Depth-first over the cluster graph: from each node, its clusters are
    drained top layer first, members nearest first. Starting anywhere
    reaches everyone because leaders bridge adjacent layers.
    """
    if start not in hierarchy:
        raise ValueError(f"chain start {start} is not a member")
    seen: set[NodeId] = set()
    chain: list[NodeId] = []

    def visit(node: NodeId) -> None:
        seen.add(node)
        chain.append(node)
        for cluster in sorted(hierarchy.clusters_of(node),
                              key=lambda c: -c.layer):
            mates = sorted(cluster.members - seen,
                           key=lambda m: (dist(node, m), m))
            for mate in mates:
                if mate not in seen:
                    visit(mate)

    visit(start)
    return chain


def chain_as_tree(chain: list[NodeId], topology: UnderlayTopology) -> OverlayTree:
    """The chain viewed as a degenerate distribution tree (out-degree 1)."""
    parent_of = {b: a for a, b in zip(chain, chain[1:])}
    children_of = {a: [b] for a, b in zip(chain, chain[1:])}
    children_of[chain[-1]] = []
    return OverlayTree(
        root=chain[0],
        parent_of=parent_of,
        children_of=children_of,
        depth_of={n: i + 1 for i, n in enumerate(chain)},
        headers={},
        lan_by_node={n: topology.lan_of(n) for n in chain},
        attach_seq={n: i for i, n in enumerate(chain)},
        p=1,
    )


def build_baseline_overlay(
    profiles: Iterable[NodeProfile],
    topology: UnderlayTopology,
    config: BaselineConfig,
    source: NodeId | None = None,
) -> BaselineOverlay:
    """Proximity-clustered hierarchy plus the relay chain from the source.

    The profiles argument exists for interface parity with the
    resource-aware build; only the node ids are taken from it.
    """
    members = sorted(p.node for p in profiles)
    if not members:
        raise ValueError("cannot build an overlay with no members")
    hierarchy = Hierarchy.bootstrap_proximity(
        members, topology.shortest_path_delay, config.k
    )
    hierarchy.drain_messages()
    start = hierarchy.tree_head() if source is None else source
    chain = relay_chain(hierarchy, topology.shortest_path_delay, start)
    return BaselineOverlay(hierarchy, chain, chain_as_tree(chain, topology))
