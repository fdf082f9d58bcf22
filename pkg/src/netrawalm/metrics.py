"""Stress and stretch evaluation over simulation traces.

Stress counts copies of one source packet crossing each underlay link;
stretch compares a member's overlay delivery path against the shortest
underlay path from the source. Both are pure post-processing over
immutable inputs: recomputation never changes a report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

from .resources import NodeId
from .tree import OverlayTree
from .underlay import UnderlayTopology, format_link


@dataclass(frozen=True)
class PacketHop:
    """One overlay hop of one source packet, as it appeared on the wire."""

    packet_id: str
    sender: NodeId
    receiver: NodeId
    tos: int = 32


@dataclass
class MetricsReport:
    scenario: str
    protocol: str
    node_count: int
    stress_per_link: dict[tuple, int] = field(default_factory=dict)
    max_stress: int = 0
    stretch_per_member: dict[NodeId, float] = field(default_factory=dict)
    average_stretch: float | None = None
    delivered_fraction: float = 1.0

    def csv_row(self) -> str:
        avg = "degenerate" if self.average_stretch is None else f"{self.average_stretch:.6f}"
        return (
            f"{self.scenario},{self.node_count},{self.protocol},"
            f"{avg},{self.max_stress},{self.delivered_fraction:.6f}"
        )

    def to_json(self) -> str:
        payload = {
            "scenario": self.scenario,
            "protocol": self.protocol,
            "node_count": self.node_count,
            "max_stress": self.max_stress,
            "average_stretch": self.average_stretch,
            "delivered_fraction": round(self.delivered_fraction, 6),
            "stress_per_link": {
                format_link(k): v for k, v in sorted(self.stress_per_link.items())
            },
            "stretch_per_member": {
                str(n): round(v, 6) for n, v in sorted(self.stretch_per_member.items())
            },
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


CSV_HEADER = "scenario,node_count,protocol,avg_stretch,max_stress,delivered_fraction"


def compute_stress(
    packet_trace: Iterable[PacketHop], topology: UnderlayTopology
) -> tuple[dict[tuple, int], int]:
    """Per-link maximum copy count of a single source packet.

    Every overlay hop expands to the deterministic shortest underlay path
    between its endpoints; copies of the same packet id are counted per
    link and the per-packet maximum is kept.
    """
    copies: dict[tuple, dict[str, int]] = {}
    for hop in packet_trace:
        for link in topology.shortest_path_links(hop.sender, hop.receiver):
            per_packet = copies.setdefault(link, {})
            per_packet[hop.packet_id] = per_packet.get(hop.packet_id, 0) + 1
    stress = {link: max(per.values()) for link, per in copies.items()}
    return stress, max(stress.values(), default=0)


def compute_stretch(
    tree: OverlayTree, topology: UnderlayTopology, source: NodeId
) -> tuple[dict[NodeId, float], float | None]:
    """Delivery-path-to-shortest-path ratio for every member but the source.

    The delivery path follows the overlay from the root down; when the
    source is not the root, the injection hop source->root is part of
    every member's delivery path.
    """
    if source not in tree and source != tree.root:
        raise ValueError(f"stream source {source} is not in the overlay")
    entry = 0
    if source != tree.root:
        entry = topology.shortest_path_delay(source, tree.root)
    stretches: dict[NodeId, float] = {}
    for member in tree.members():
        if member == source:
            continue
        path = tree.path_from_root(member)
        delivery = entry + sum(
            topology.shortest_path_delay(a, b) for a, b in zip(path, path[1:])
        )
        shortest = topology.shortest_path_delay(source, member)
        if delivery == shortest:
            stretches[member] = 1.0
        elif shortest == 0:
            raise ValueError(
                f"member {member} is at zero delay from the source but the "
                f"overlay path costs {delivery}"
            )
        else:
            stretches[member] = delivery / shortest
    average = sum(stretches.values()) / len(stretches) if stretches else None
    return stretches, average


def comparison_rows(reports: Iterable[MetricsReport]) -> str:
    """Figure-7-style CSV: one row per (scenario, node count, protocol)."""
    rows = sorted(
        (r.csv_row() for r in reports),
        key=lambda line: (line.split(",")[0], int(line.split(",")[1]), line.split(",")[2]),
    )
    return "\n".join([CSV_HEADER, *rows]) + "\n"
