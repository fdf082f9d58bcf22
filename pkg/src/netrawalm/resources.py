"""Per-node capability profiles and the effective-capacity ordering.

The capacity order decides who sits higher in the distribution tree:
faster CPU wins, then more free RAM, then more processors, then fewer
hops to the gateway, then the lower node id. The order is strict and
total, so header election and queue construction are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

NodeId = int


class EmptyGroupError(ValueError):
    """Raised when an operation needs at least one node profile."""


@dataclass(frozen=True)
class NodeProfile:
    """Resources and network position of one peer."""

    node: NodeId
    free_ram: int          # bytes
    cpu_speed: int         # hertz
    processor_count: int = 1
    gateway: str = "g0"
    local_address: str = ""
    hop_distance: int = 1

    def __post_init__(self) -> None:
        if self.node < 0:
            raise ValueError(f"node id must be non-negative, got {self.node}")
        if self.free_ram < 0:
            raise ValueError(f"free_ram must be >= 0, got {self.free_ram}")
        if self.cpu_speed < 0:
            raise ValueError(f"cpu_speed must be >= 0, got {self.cpu_speed}")
        if self.processor_count < 1:
            raise ValueError(
                f"processor_count must be >= 1, got {self.processor_count}"
            )
        if self.hop_distance < 0:
            raise ValueError(f"hop_distance must be >= 0, got {self.hop_distance}")
        if not self.gateway:
            raise ValueError("gateway token must be non-empty")
        if not self.local_address:
            object.__setattr__(self, "local_address", f"n{self.node}")

    @property
    def capacity_key(self) -> CapacityKey:
        return CapacityKey(
            cpu_speed=self.cpu_speed,
            free_ram=self.free_ram,
            processor_count=self.processor_count,
            hop_distance=self.hop_distance,
            node=self.node,
        )


@dataclass(frozen=True)
class CapacityKey:
    """Sort key realising the capacity order.

    Smaller key = higher capacity, so sorting ascending yields the queue
    order. hop_distance and node compare in their natural sense (smaller
    is better); the resource fields count the other way.
    """

    cpu_speed: int
    free_ram: int
    processor_count: int
    hop_distance: int
    node: NodeId

    def as_tuple(self) -> tuple[int, int, int, int, int]:
        return (
            -self.cpu_speed,
            -self.free_ram,
            -self.processor_count,
            self.hop_distance,
            self.node,
        )

    def __lt__(self, other: CapacityKey) -> bool:
        return self.as_tuple() < other.as_tuple()

    def __le__(self, other: CapacityKey) -> bool:
        return self.as_tuple() <= other.as_tuple()


def capacity_order(a: NodeProfile, b: NodeProfile) -> NodeProfile:
    """Return whichever profile sits higher in the tree."""
    return a if a.capacity_key < b.capacity_key else b


def build_priority_queue(profiles: Iterable[NodeProfile]) -> list[NodeId]:
    """Node ids sorted by descending effective capacity.

    The result is a pure function of the profile *set*: input order never
    matters. Raises EmptyGroupError on an empty input.
    """
    pool = list(profiles)
    if not pool:
        raise EmptyGroupError("cannot build a priority queue from zero profiles")
    seen: set[NodeId] = set()
    for p in pool:
        if p.node in seen:
            raise ValueError(f"duplicate node id {p.node}")
        seen.add(p.node)
    return [p.node for p in sorted(pool, key=lambda p: p.capacity_key)]


def best_node(profiles: Iterable[NodeProfile]) -> NodeId:
    """Capacity-maximal node of a non-empty group."""
    pool = list(profiles)
    if not pool:
        raise EmptyGroupError("cannot pick the best node of an empty group")
    return min(pool, key=lambda p: p.capacity_key).node


def sort_by_capacity(profiles: Iterable[NodeProfile]) -> list[NodeProfile]:
    return sorted(profiles, key=lambda p: p.capacity_key)


class ProfileTable:
    """Lookup helper mapping node ids to their profiles."""

    def __init__(self, profiles: Iterable[NodeProfile]):
        self._by_id: dict[NodeId, NodeProfile] = {}
        for p in profiles:
            if p.node in self._by_id:
                raise ValueError(f"duplicate node id {p.node}")
            self._by_id[p.node] = p

    def __getitem__(self, node: NodeId) -> NodeProfile:
        return self._by_id[node]

    def __contains__(self, node: NodeId) -> bool:
        return node in self._by_id

    def __iter__(self):
        return iter(sorted(self._by_id))

    def __len__(self) -> int:
        return len(self._by_id)

    def profiles(self) -> list[NodeProfile]:
        return [self._by_id[n] for n in sorted(self._by_id)]

    def subset(self, nodes: Iterable[NodeId]) -> list[NodeProfile]:
        return [self._by_id[n] for n in sorted(set(nodes))]

    def queue_order(self, nodes: Sequence[NodeId] | None = None) -> list[NodeId]:
        pool = self.profiles() if nodes is None else self.subset(nodes)
        return build_priority_queue(pool)
