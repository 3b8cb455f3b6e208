"""Knowledge-guided augmentation of molecular graphs into typed heterogeneous graphs.

Element-KG augmentation adds one property node per distinct KG property and
a directed ``prop_of`` edge (property -> atom) per matching triple.
FG-KG augmentation adds one node per moiety, ``part_of`` edges to its atoms
and one labelled edge per moiety relation. Atom nodes keep the indices of
the source molecule, so the atom/bond part is always index-identical to it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

from .chemgraph import Atom, Bond, MolecularGraph
from .kgstore import KnowledgeGraph, one_hop_properties
from .moiety import Moiety, MoietyPattern, MoietyRelation, detect_moieties

NODE_KINDS = ("atom", "property", "moiety")
EDGE_KINDS = ("bond", "prop_of", "part_of", "fused", "connected", "saturated", "unsaturated")
MOIETY_EDGE_KINDS = ("fused", "connected", "saturated", "unsaturated")
MODES = ("element_kg", "fg_kg", "both")


@dataclass
class HNode:
    id: int
    kind: str
    label: str
    attrs: dict = field(default_factory=dict)


@dataclass
class HEdge:
    src: int
    dst: int
    kind: str
    directed: bool
    label: str


@dataclass
class HeteroGraph:
    id: str
    nodes: list[HNode]
    edges: list[HEdge]

    def nodes_of(self, kind: str) -> list[HNode]:
        return [n for n in self.nodes if n.kind == kind]

    def edges_of(self, kind: str) -> list[HEdge]:
        return [e for e in self.edges if e.kind == kind]

    def check(self) -> None:
        """Raise ``ValueError`` if a structural invariant is violated."""
        kinds = {}
        for i, n in enumerate(self.nodes):
            if n.id != i:
                raise ValueError(f"node ids must be dense, got {n.id} at position {i}")
            if n.kind not in NODE_KINDS:
                raise ValueError(f"unknown node kind {n.kind!r}")
            kinds[n.id] = n.kind
        n_atoms = len(self.nodes_of("atom"))
        if any(n.kind == "atom" for n in self.nodes[n_atoms:]):
            raise ValueError("atom nodes must precede all other nodes")
        for e in self.edges:
            if e.src not in kinds or e.dst not in kinds:
                raise ValueError(f"edge {e.src}->{e.dst} references a missing node")
            pair = (kinds[e.src], kinds[e.dst])
            expected = {
                "bond": (("atom", "atom"), False),
                "prop_of": (("property", "atom"), True),
                "part_of": (("moiety", "atom"), False),
            }.get(e.kind, (("moiety", "moiety"), False))
            if e.kind not in EDGE_KINDS:
                raise ValueError(f"unknown edge kind {e.kind!r}")
            if pair != expected[0] or e.directed != expected[1]:
                raise ValueError(f"{e.kind} edge {e.src}->{e.dst} has endpoints {pair}, directed={e.directed}")

    def to_molecular_graph(self) -> MolecularGraph:
        """Restriction to atom nodes and bond edges."""
        atoms = tuple(
            Atom(
                n.id,
                n.label,
                bool(n.attrs.get("aromatic", False)),
                int(n.attrs.get("formal_charge", 0)),
                int(n.attrs.get("implicit_h", 0)),
            )
            for n in self.nodes_of("atom")
        )
        bonds = tuple(Bond(e.src, e.dst, e.label) for e in self.edges_of("bond"))
        return MolecularGraph(self.id, atoms, bonds)

    def to_dict(self) -> dict:
        nodes = []
        for n in self.nodes:
            d = {"id": n.id, "kind": n.kind, "label": n.label}
            if n.attrs:
                d["attrs"] = dict(n.attrs)
            nodes.append(d)
        edges = [
            {"src": e.src, "dst": e.dst, "kind": e.kind, "directed": e.directed, "label": e.label}
            for e in self.edges
        ]
        return {"id": self.id, "nodes": nodes, "edges": edges}

    @classmethod
    def from_dict(cls, d: dict) -> "HeteroGraph":
        hg = cls(
            str(d["id"]),
            [HNode(int(n["id"]), n["kind"], n["label"], dict(n.get("attrs", {}))) for n in d["nodes"]],
            [HEdge(int(e["src"]), int(e["dst"]), e["kind"], bool(e["directed"]), e["label"]) for e in d["edges"]],
        )
        hg.check()
        return hg


def from_molecular_graph(g: MolecularGraph) -> HeteroGraph:
    """The un-augmented view: atom nodes and bond edges only."""
    nodes = [
        HNode(a.index, "atom", a.element, {"aromatic": a.aromatic, "formal_charge": a.formal_charge, "implicit_h": a.implicit_h})
        for a in g.atoms
    ]
    edges = [HEdge(b.a, b.b, "bond", False, b.order) for b in g.bonds]
    return HeteroGraph(g.id, nodes, edges)


def augment_with_element_kg(g: MolecularGraph, kg: KnowledgeGraph, dup_properties: bool = False) -> HeteroGraph:
    hg = from_molecular_graph(g)
    _add_properties(hg, g, kg, dup_properties)
    return hg


def _add_properties(hg: HeteroGraph, g: MolecularGraph, kg: KnowledgeGraph, dup: bool) -> None:
    per_atom = [(a.index, one_hop_properties(kg, a.element)) for a in g.atoms]
    if dup:
        for atom, triples in per_atom:
            for t in triples:
                nid = len(hg.nodes)
                hg.nodes.append(HNode(nid, "property", t.head))
                hg.edges.append(HEdge(nid, atom, "prop_of", True, t.relation))
        return
    heads = sorted({t.head for _, triples in per_atom for t in triples})
    node_of = {}
    for h in heads:
        node_of[h] = len(hg.nodes)
        hg.nodes.append(HNode(node_of[h], "property", h))
    for atom, triples in per_atom:
        for t in triples:
            hg.edges.append(HEdge(node_of[t.head], atom, "prop_of", True, t.relation))


def augment_with_fg_kg(
    g: MolecularGraph, moieties: Sequence[Moiety], relations: Sequence[MoietyRelation]
) -> HeteroGraph:
    hg = from_molecular_graph(g)
    _add_moieties(hg, g, moieties, relations)
    return hg


def _add_moieties(hg, g, moieties, relations) -> None:
    n = len(g.atoms)
    for m in moieties:
        if not m.atoms or any(not 0 <= a < n for a in m.atoms):
            raise ValueError(f"moiety {m.name or m.type_label} references invalid atoms {m.atoms}")
    base = len(hg.nodes)
    for i, m in enumerate(moieties):
        attrs = {"name": m.name, "moiety_kind": m.kind}
        if m.saturated is not None:
            attrs["saturated"] = m.saturated
        hg.nodes.append(HNode(base + i, "moiety", m.type_label, attrs))
    for i, m in enumerate(moieties):
        for a in m.atoms:
            hg.edges.append(HEdge(base + i, a, "part_of", False, "part_of"))
    for r in relations:
        if r.label not in MOIETY_EDGE_KINDS or r.a == r.b:
            raise ValueError(f"bad moiety relation {r}")
        hg.edges.append(HEdge(base + r.a, base + r.b, r.label, False, r.label))


def augment(
    g: MolecularGraph,
    mode: str,
    kg: KnowledgeGraph | None = None,
    lib: Sequence[MoietyPattern] | None = None,
    dup_properties: bool = False,
) -> HeteroGraph:
    """Augment ``g`` with the element KG, the FG KG, or both (``mode='both'``)."""
    mode = mode.replace("-", "_")
    if mode not in MODES:
        raise ValueError(f"unknown augmentation mode {mode!r}")
    hg = from_molecular_graph(g)
    if mode in ("element_kg", "both"):
        if kg is None:
            raise ValueError("element-KG augmentation needs a knowledge graph")
        _add_properties(hg, g, kg, dup_properties)
    if mode in ("fg_kg", "both"):
        if lib is None:
            raise ValueError("FG-KG augmentation needs a pattern library")
        moieties, relations = detect_moieties(g, lib)
        _add_moieties(hg, g, moieties, relations)
    return hg


def to_json(hg: HeteroGraph) -> bytes:
    return json.dumps(hg.to_dict(), sort_keys=True, separators=(",", ":")).encode()


def from_json(data: bytes | str) -> HeteroGraph:
    return HeteroGraph.from_dict(json.loads(data))


_NODE_STYLE = {"atom": "shape=circle", "property": "shape=box, style=rounded", "moiety": "shape=hexagon"}
_EDGE_STYLE = {
    "bond": "style=solid",
    "prop_of": "style=dashed, color=blue",
    "part_of": "style=dotted, color=gray",
    "fused": "style=bold, color=red",
    "connected": "style=solid, color=darkgreen",
    "saturated": "style=solid, color=orange",
    "unsaturated": "style=dashed, color=orange",
}


def _q(s: str) -> str:
    return '"' + str(s).replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(hg: HeteroGraph) -> str:
    lines = [f"digraph {_q(hg.id)} {{"]
    for n in hg.nodes:
        lines.append(f"  n{n.id} [label={_q(n.label)}, {_NODE_STYLE[n.kind]}];")
    for e in hg.edges:
        arrow = "" if e.directed else ", dir=none"
        lines.append(f"  n{e.src} -> n{e.dst} [kind={_q(e.kind)}, label={_q(e.label)}, {_EDGE_STYLE[e.kind]}{arrow}];")
    lines.append("}")
    return "\n".join(lines) + "\n"
