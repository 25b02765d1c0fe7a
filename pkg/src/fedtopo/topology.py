"""Topology declarations and wiring plans.

Four layouts are supported:

- centralized: every client reports straight to the collector.
- clustered:   same wiring, but the collector keeps k cluster models and
               clients pick which one to train each round.
- hierarchical: mid-aggregators sit between the collector and disjoint
               client groups and run their own sub-rounds.
- star_ring:   the collector broadcasts to everyone, but within each
               group the model also circulates along a ring, one training
               pass per hop.

A TopologySpec is the user-facing declaration; build_plan resolves it
against concrete client ids into an immutable TopologyPlan the engine and
the nodes both read.
"""
from __future__ import annotations

from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping

from .errors import RingCollapsedError, TopologyError

TOPOLOGY_KINDS = ("centralized", "clustered", "hierarchical", "star_ring")

ROLE_LEAF = "leaf_client"
ROLE_MID = "mid_aggregator"

COLLECTOR_ID = "collector"


@dataclass(frozen=True)
class TopologySpec:
    """Declarative description of one experiment's communication layout."""

    kind: str
    num_clients: int
    num_clusters: int | None = None
    num_mid_aggregators: int | None = None
    local_rounds: int | None = None
    ring_groups: str | tuple[tuple[str, ...], ...] | None = None

    def __post_init__(self) -> None:
        if isinstance(self.ring_groups, list):
            object.__setattr__(
                self, "ring_groups", tuple(tuple(g) for g in self.ring_groups)
            )


def validate_spec(spec: TopologySpec) -> list[str]:
    """All violations found, empty when the spec is well formed."""
    errors: list[str] = []
    if spec.kind not in TOPOLOGY_KINDS:
        errors.append(f"unknown topology kind {spec.kind!r}")
        return errors
    if spec.num_clients < 1:
        errors.append("num_clients must be >= 1")
    wants = {
        "centralized": (),
        "clustered": ("num_clusters",),
        "hierarchical": ("num_mid_aggregators", "local_rounds"),
        "star_ring": ("ring_groups", "local_rounds"),
    }[spec.kind]
    for name in ("num_clusters", "num_mid_aggregators", "local_rounds", "ring_groups"):
        value = getattr(spec, name)
        if name in wants and value is None:
            errors.append(f"{spec.kind} topology requires {name}")
        if name not in wants and value is not None:
            errors.append(f"{spec.kind} topology does not accept {name}")
    if spec.kind == "clustered" and spec.num_clusters is not None and spec.num_clusters < 1:
        errors.append("num_clusters must be >= 1")
    if spec.kind == "hierarchical" and spec.num_mid_aggregators is not None:
        if spec.num_mid_aggregators < 1:
            errors.append("num_mid_aggregators must be >= 1")
        elif spec.num_clients >= 1 and spec.num_mid_aggregators > spec.num_clients:
            errors.append("more mid-aggregators than clients")
    if spec.local_rounds is not None and spec.local_rounds < 1:
        errors.append("local_rounds must be >= 1")
    if spec.kind == "star_ring" and spec.ring_groups is not None:
        errors.extend(_validate_ring_groups(spec.ring_groups))
    return errors


def _validate_ring_groups(groups: str | tuple[tuple[str, ...], ...]) -> list[str]:
    if isinstance(groups, str):
        prefix, _, size = groups.partition(":")
        if prefix != "auto" or not size.isdigit() or int(size) < 1:
            return [f"ring_groups string must look like 'auto:<size>', got {groups!r}"]
        return []
    errors: list[str] = []
    seen: set[str] = set()
    for i, group in enumerate(groups):
        if not group:
            errors.append(f"ring group {i} is empty")
        for member in group:
            if member in seen:
                errors.append(f"client {member!r} appears in more than one ring group")
            seen.add(member)
    return errors


@dataclass(frozen=True)
class TopologyPlan:
    """Resolved wiring: who talks to whom.  Immutable after construction.

    roles maps every non-collector node id to its role; parent maps every
    node to the node it reports to; ring_order lists each ring group in
    circulation order.
    """

    kind: str
    collector_id: str
    roles: Mapping[str, str]
    parent: Mapping[str, str]
    ring_order: tuple[tuple[str, ...], ...] = ()
    cluster_count: int = 1
    local_rounds: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "roles", MappingProxyType(dict(self.roles)))
        object.__setattr__(self, "parent", MappingProxyType(dict(self.parent)))
        object.__setattr__(self, "ring_order", tuple(tuple(g) for g in self.ring_order))

    @property
    def client_ids(self) -> list[str]:
        return sorted(n for n, role in self.roles.items() if role == ROLE_LEAF)

    @property
    def mid_ids(self) -> list[str]:
        return sorted(n for n, role in self.roles.items() if role == ROLE_MID)

    def children_of(self, node_id: str) -> list[str]:
        return sorted(n for n, p in self.parent.items() if p == node_id)


def mid_id(index: int) -> str:
    return f"mid{index:02d}"


def build_plan(spec: TopologySpec, client_ids: list[str], seed: int = 0) -> TopologyPlan:
    """Resolve a spec against concrete client ids.

    Grouping is deterministic: hierarchical groups deal sorted clients
    round-robin across mid-aggregators; auto ring groups chunk the sorted
    ids into consecutive runs (the last group may be smaller).  Explicit
    ring groups are honored verbatim, including their circulation order.
    """
    problems = validate_spec(spec)
    if problems:
        raise TopologyError("; ".join(problems))
    if len(set(client_ids)) != len(client_ids):
        raise TopologyError("duplicate client ids")
    if len(client_ids) != spec.num_clients:
        raise TopologyError(
            f"spec declares {spec.num_clients} clients but {len(client_ids)} ids given"
        )
    ordered = sorted(client_ids)
    roles = {cid: ROLE_LEAF for cid in ordered}
    parent: dict[str, str] = {}
    ring_order: tuple[tuple[str, ...], ...] = ()
    if spec.kind in ("centralized", "clustered"):
        parent = {cid: COLLECTOR_ID for cid in ordered}
    elif spec.kind == "hierarchical":
        assert spec.num_mid_aggregators is not None
        mids = [mid_id(m) for m in range(spec.num_mid_aggregators)]
        overlap = set(mids) & set(ordered)
        if overlap:
            raise TopologyError(f"client ids collide with mid-aggregator ids: {sorted(overlap)}")
        for m in mids:
            roles[m] = ROLE_MID
            parent[m] = COLLECTOR_ID
        for j, cid in enumerate(ordered):
            parent[cid] = mids[j % len(mids)]
    else:  # star_ring
        assert spec.ring_groups is not None
        parent = {cid: COLLECTOR_ID for cid in ordered}
        if isinstance(spec.ring_groups, str):
            size = int(spec.ring_groups.partition(":")[2])
            ring_order = tuple(
                tuple(ordered[i : i + size]) for i in range(0, len(ordered), size)
            )
        else:
            members = [m for group in spec.ring_groups for m in group]
            if sorted(members) != ordered:
                raise TopologyError("explicit ring groups must cover every client exactly once")
            ring_order = spec.ring_groups
    return TopologyPlan(
        kind=spec.kind,
        collector_id=COLLECTOR_ID,
        roles=roles,
        parent=parent,
        ring_order=ring_order,
        cluster_count=spec.num_clusters or 1,
        local_rounds=spec.local_rounds or 1,
    )


def ring_group_of(plan: TopologyPlan, client_id: str) -> tuple[str, ...]:
    for group in plan.ring_order:
        if client_id in group:
            return group
    raise TopologyError(f"{client_id!r} is not on any ring")


def ring_successor(
    plan: TopologyPlan, client_id: str, live: set[str] | None = None
) -> str:
    """Next ring member after client_id, skipping nodes not in `live`.

    With live=None every member counts as alive.  When every other member
    is dead the caller itself is returned (the ring degenerates to local
    work); when not even the caller qualifies the ring has collapsed.
    """
    group = ring_group_of(plan, client_id)
    at = group.index(client_id)
    for step in range(1, len(group) + 1):
        candidate = group[(at + step) % len(group)]
        if live is None or candidate in live:
            return candidate
    raise RingCollapsedError(f"no live successor on the ring of {client_id!r}")
