"""Physical fiber plant: a two-level star of hubs and terminal labs.

All sources and detectors live at the central hub; each terminal lab is
reached through its building hub over single-mode fiber. Topologies are
immutable after load, so they can be shared freely across threads.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from math import isfinite

from .errors import NoPath, ParseError, UnknownNode, ValidationError
from .fabric import USER_MAX, FabricSpec


class NodeKind(str, Enum):
    CENTRAL_HUB = "central_hub"
    BUILDING_HUB = "building_hub"
    TERMINAL = "terminal"


@dataclass(frozen=True)
class Node:
    id: str
    kind: NodeKind
    building: str
    display_position: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class FiberLink:
    a: str
    b: str
    length_km: float
    loss_db_per_km: float = 0.2
    dispersion_ps_nm_km: float = 17.0
    delay_ps_per_km: float = 4900.0

    def other(self, node_id: str) -> str:
        if node_id == self.a:
            return self.b
        if node_id == self.b:
            return self.a
        raise UnknownNode(f"{node_id} is not an endpoint of link {self.a}--{self.b}")


@dataclass(frozen=True)
class OpticalPath:
    """Hub-to-node fiber route with its summed optical properties."""

    nodes: tuple[str, ...]          # central hub first, target last
    links: tuple[FiberLink, ...]
    total_loss_db: float
    total_dispersion_ps_nm: float
    total_delay_ps: float

    @classmethod
    def from_links(cls, nodes: tuple[str, ...], links: tuple[FiberLink, ...]) -> "OpticalPath":
        return cls(
            nodes=nodes,
            links=links,
            total_loss_db=sum(l.loss_db_per_km * l.length_km for l in links),
            total_dispersion_ps_nm=sum(l.dispersion_ps_nm_km * l.length_km for l in links),
            total_delay_ps=sum(l.delay_ps_per_km * l.length_km for l in links),
        )


def synthetic_path(
    length_km: float,
    loss_db_per_km: float = 0.2,
    dispersion_ps_nm_km: float = 17.0,
    delay_ps_per_km: float = 4900.0,
) -> OpticalPath:
    """Single-link stand-in path for bench scenarios that have no topology."""
    link = FiberLink("hub", "arm", length_km, loss_db_per_km, dispersion_ps_nm_km, delay_ps_per_km)
    return OpticalPath.from_links(("hub", "arm"), (link,))


@dataclass
class Topology:
    nodes: tuple[Node, ...]
    links: tuple[FiberLink, ...]
    _by_id: dict[str, Node] = field(default_factory=dict, compare=False, repr=False)
    _adjacency: dict[str, list[FiberLink]] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        self._by_id = {n.id: n for n in self.nodes}
        self._adjacency = {n.id: [] for n in self.nodes}
        for link in self.links:
            # unknown endpoints are caught by validation with a real error
            self._adjacency.setdefault(link.a, []).append(link)
            self._adjacency.setdefault(link.b, []).append(link)

    def node(self, node_id: str) -> Node:
        try:
            return self._by_id[node_id]
        except KeyError:
            raise UnknownNode(f"no node {node_id!r}") from None

    @property
    def central_hub(self) -> Node:
        for n in self.nodes:
            if n.kind is NodeKind.CENTRAL_HUB:
                return n
        raise ValidationError("topology has no central hub")

    @property
    def terminals(self) -> tuple[Node, ...]:
        return tuple(n for n in self.nodes if n.kind is NodeKind.TERMINAL)

    def terminal_users(self) -> dict[int, str]:
        """User port assignment: terminals take ports 1..N in declaration order."""
        return {i + 1: n.id for i, n in enumerate(self.terminals)}

    def user_of(self, node_id: str) -> int | None:
        for user, nid in self.terminal_users().items():
            if nid == node_id:
                return user
        return None


def topology_from_dict(doc: dict) -> Topology:
    try:
        raw_nodes = doc["nodes"]
        raw_links = doc["links"]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"config missing top-level key: {exc}") from None

    nodes = []
    for item in raw_nodes:
        try:
            pos = item.get("position", [0.0, 0.0])
            nodes.append(
                Node(
                    id=str(item["id"]),
                    kind=NodeKind(item["kind"]),
                    building=str(item.get("building", "")),
                    display_position=(float(pos[0]), float(pos[1])),
                )
            )
        except (KeyError, ValueError, TypeError, IndexError) as exc:
            raise ParseError(f"bad node entry {item!r}: {exc}") from None

    links = []
    for item in raw_links:
        try:
            links.append(
                FiberLink(
                    a=str(item["a"]),
                    b=str(item["b"]),
                    length_km=float(item["length_km"]),
                    loss_db_per_km=float(item.get("loss_db_per_km", 0.2)),
                    dispersion_ps_nm_km=float(item.get("dispersion_ps_nm_km", 17.0)),
                    delay_ps_per_km=float(item.get("delay_ps_per_km", 4900.0)),
                )
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ParseError(f"bad link entry {item!r}: {exc}") from None

    topo = Topology(nodes=tuple(nodes), links=tuple(links))
    _validate(topo)
    return topo


def load_topology(config_text: str | dict) -> Topology:
    """Parse and validate a topology config (JSON text or already-parsed dict)."""
    if isinstance(config_text, str):
        try:
            doc = json.loads(config_text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"config is not valid JSON: {exc}") from None
    else:
        doc = config_text
    return topology_from_dict(doc)


def topology_to_dict(topo: Topology) -> dict:
    """Round-trippable form: load_topology(topology_to_dict(t)) == t."""
    return {
        "nodes": [
            {
                "id": n.id,
                "kind": n.kind.value,
                "building": n.building,
                "position": list(n.display_position),
            }
            for n in topo.nodes
        ],
        "links": [
            {
                "a": l.a,
                "b": l.b,
                "length_km": l.length_km,
                "loss_db_per_km": l.loss_db_per_km,
                "dispersion_ps_nm_km": l.dispersion_ps_nm_km,
                "delay_ps_per_km": l.delay_ps_per_km,
            }
            for l in topo.links
        ],
    }


def _validate(topo: Topology) -> None:
    seen: set[str] = set()
    for n in topo.nodes:
        if not n.id:
            raise ValidationError("empty node id")
        if n.id in seen:
            raise ValidationError(f"duplicate node id {n.id!r}")
        seen.add(n.id)

    hubs = [n for n in topo.nodes if n.kind is NodeKind.CENTRAL_HUB]
    if len(hubs) != 1:
        raise ValidationError(f"topology must have exactly one central hub, found {len(hubs)}")

    for link in topo.links:
        if link.a == link.b:
            raise ValidationError(f"link endpoints must differ: {link.a!r}")
        for end in (link.a, link.b):
            if end not in seen:
                raise ValidationError(f"link references undeclared node {end!r}")
        if link.length_km <= 0:
            raise ValidationError(f"link {link.a}--{link.b} length must be > 0")
        if link.loss_db_per_km < 0 or not isfinite(link.loss_db_per_km):
            raise ValidationError(f"link {link.a}--{link.b} loss must be finite and >= 0")
        if link.delay_ps_per_km <= 0:
            raise ValidationError(f"link {link.a}--{link.b} delay must be > 0")

    reachable = _bfs_parents(topo, hubs[0].id)
    for n in topo.terminals:
        if n.id not in reachable:
            raise ValidationError(f"terminal {n.id!r} unreachable from central hub")

    if len(topo.terminals) > USER_MAX:
        raise ValidationError(
            f"at most {USER_MAX} terminals supported by the switch fabric, got {len(topo.terminals)}"
        )


def _bfs_parents(topo: Topology, start: str) -> dict[str, tuple[str | None, FiberLink | None]]:
    parents: dict[str, tuple[str | None, FiberLink | None]] = {start: (None, None)}
    queue = deque([start])
    while queue:
        current = queue.popleft()
        for link in topo._adjacency[current]:
            nxt = link.other(current)
            if nxt not in parents:
                parents[nxt] = (current, link)
                queue.append(nxt)
    return parents


def path_to(topo: Topology, node_id: str) -> OpticalPath:
    """The unique central-hub-to-node fiber path (star topology).

    Deterministic: ties in graph traversal break by declaration order.
    """
    target = topo.node(node_id)  # raises UnknownNode
    hub = topo.central_hub
    if target.id == hub.id:
        raise NoPath("the central hub has no path to itself")
    parents = _bfs_parents(topo, hub.id)
    if target.id not in parents:
        raise NoPath(f"node {node_id!r} is disconnected from the central hub")
    rev_nodes = [target.id]
    rev_links = []
    current = target.id
    while current != hub.id:
        parent, link = parents[current]
        rev_links.append(link)
        rev_nodes.append(parent)
        current = parent
    return OpticalPath.from_links(tuple(reversed(rev_nodes)), tuple(reversed(rev_links)))


def logical_graph(topo: Topology, fabric_spec: FabricSpec) -> set[frozenset[str]]:
    """Terminal pairs that can hold a live entangled connection at once.

    Exhaustive enumeration: a pair {u, v} qualifies if some correlated
    channel pair can route one wavelength to u and the other to v. The
    two channels must sit on distinct 1x16 switches (one switch selects a
    single output), so a self-partnered channel can never serve two users.
    """
    terminals = [n.id for n in topo.terminals]
    pairs = fabric_spec.correlated_pairs()
    result: set[frozenset[str]] = set()
    for i, u in enumerate(terminals):
        for v in terminals[i + 1:]:
            for c1, c2 in pairs:
                if c1 != c2:
                    result.add(frozenset((u, v)))
                    break
    return result
