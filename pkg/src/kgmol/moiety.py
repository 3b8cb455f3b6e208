"""Rings, functional groups and aliphatic chains (moieties) and the relations between them.

Functional groups come from a JSON pattern library matched by backtracking
subgraph search. Only the most specific group types are kept: a match is
dropped when its core atom (first pattern node) lies inside a match of a
pattern that lists it under ``parents`` (e.g. the OH of a carboxyl is not
also reported as a hydroxyl).
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Sequence

from .chemgraph import BOND_ORDERS, SUPPORTED_ELEMENTS, MolecularGraph

RELATION_LABELS = ("fused", "connected", "saturated", "unsaturated")
RING_LABELS = ("aromatic", "aliphatic")
CHAIN_LABEL = "aliphatic_chain"


class PatternError(ValueError):
    pass


@dataclass(frozen=True)
class PatternNode:
    elements: frozenset[str] | None = None  # None = any element
    aromatic: bool | None = None
    min_degree: int = 0
    max_degree: int = 99
    scope: bool = True

    def accepts(self, g: MolecularGraph, atom: int) -> bool:
        a = g.atoms[atom]
        if self.elements is not None and a.element not in self.elements:
            return False
        if self.aromatic is not None and a.aromatic != self.aromatic:
            return False
        return self.min_degree <= g.degree(atom) <= self.max_degree


@dataclass(frozen=True)
class MoietyPattern:
    name: str
    nodes: tuple[PatternNode, ...]
    edges: tuple[tuple[int, int, str], ...]
    parents: tuple[str, ...] = ()
    notes: str = ""

    def __post_init__(self):
        if not self.name:
            raise PatternError("pattern without a name")
        n = len(self.nodes)
        if n == 0:
            raise PatternError(f"{self.name}: pattern has no nodes")
        for node in self.nodes:
            if node.elements is not None:
                if not node.elements or not node.elements <= set(SUPPORTED_ELEMENTS):
                    raise PatternError(f"{self.name}: bad element constraint {sorted(node.elements or ())}")
            if node.min_degree > node.max_degree or node.min_degree < 0:
                raise PatternError(f"{self.name}: unsatisfiable degree range")
        if not any(node.scope for node in self.nodes):
            raise PatternError(f"{self.name}: no node is in scope")
        adj = [[] for _ in range(n)]
        for i, j, order in self.edges:
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise PatternError(f"{self.name}: bad edge ({i}, {j})")
            if order != "any" and order not in BOND_ORDERS:
                raise PatternError(f"{self.name}: bad bond order {order!r}")
            adj[i].append(j)
            adj[j].append(i)
        seen, todo = {0}, [0]
        while todo:
            for j in adj[todo.pop()]:
                if j not in seen:
                    seen.add(j)
                    todo.append(j)
        if len(seen) != n:
            raise PatternError(f"{self.name}: pattern graph is not connected")
        for idx, node in enumerate(self.nodes):
            if len(adj[idx]) > node.max_degree:
                raise PatternError(f"{self.name}: node {idx} has more pattern edges than max_degree")

    @classmethod
    def from_dict(cls, d: dict) -> "MoietyPattern":
        try:
            nodes = []
            for nd in d["nodes"]:
                el = nd.get("element", "*")
                if el == "*":
                    elements = None
                else:
                    elements = frozenset([el] if isinstance(el, str) else el)
                nodes.append(
                    PatternNode(
                        elements=elements,
                        aromatic=nd.get("aromatic"),
                        min_degree=int(nd.get("min_degree", 0)),
                        max_degree=int(nd.get("max_degree", 99)),
                        scope=bool(nd.get("scope", True)),
                    )
                )
            edges = tuple((int(i), int(j), str(o)) for i, j, o in d.get("edges", []))
            return cls(d["name"], tuple(nodes), edges, tuple(d.get("parents", ())), d.get("notes", ""))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, PatternError):
                raise
            raise PatternError(f"malformed pattern {d.get('name', '?') if isinstance(d, dict) else d!r}: {exc}") from exc


def load_pattern_library(source: str | bytes | None = None) -> list[MoietyPattern]:
    """Parse a pattern library JSON document; ``None`` loads the bundled library."""
    if source is None:
        source = resources.files("kgmol.data").joinpath("patterns.json").read_text()
    doc = json.loads(source)
    if not isinstance(doc, dict) or "patterns" not in doc:
        raise PatternError("pattern library must be an object with a 'patterns' list")
    lib = [MoietyPattern.from_dict(p) for p in doc["patterns"]]
    names = [p.name for p in lib]
    if len(set(names)) != len(names):
        raise PatternError("duplicate pattern names")
    for p in lib:
        for parent in p.parents:
            if parent not in names:
                raise PatternError(f"{p.name}: unknown parent {parent!r}")
    return lib


def moiety_vocabulary(lib: Sequence[MoietyPattern]) -> tuple[str, ...]:
    """Every moiety type label that detection can emit for ``lib``."""
    return tuple(p.name for p in lib) + RING_LABELS + (CHAIN_LABEL,)


@dataclass(frozen=True)
class Moiety:
    kind: str  # functional_group | ring | aliphatic_chain
    type_label: str
    atoms: tuple[int, ...]
    name: str = ""
    graph_id: str = ""
    saturated: bool | None = None
    mapping: tuple[int, ...] = field(default=(), compare=False)

    @property
    def length(self) -> int:
        return len(self.atoms)

    @property
    def atom_set(self) -> frozenset[int]:
        return frozenset(self.atoms)


@dataclass(frozen=True)
class MoietyRelation:
    a: int
    b: int
    label: str


# -- rings ------------------------------------------------------------------


def _bfs_tree(g: MolecularGraph, root: int) -> tuple[list[int], list[int]]:
    parent = [-1] * len(g.atoms)
    dist = [-1] * len(g.atoms)
    dist[root] = 0
    q = deque([root])
    while q:
        u = q.popleft()
        for v in sorted(g.neighbors(u)):
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                parent[v] = u
                q.append(v)
    return parent, dist


def _path(parent: list[int], root: int, node: int) -> list[int]:
    out = [node]
    while node != root:
        node = parent[node]
        out.append(node)
    return out[::-1]


def _canonical_cycle(cycle: list[int]) -> tuple[int, ...]:
    k = cycle.index(min(cycle))
    rot = cycle[k:] + cycle[:k]
    if len(rot) > 2 and rot[-1] < rot[1]:
        rot = [rot[0]] + rot[1:][::-1]
    return tuple(rot)


def cycle_rank(g: MolecularGraph) -> int:
    return len(g.bonds) - len(g.atoms) + len(g.components())


def perceive_rings(g: MolecularGraph) -> list[Moiety]:
    """Minimum cycle basis (size E - V + C) as ring moieties.

    Candidate cycles are Horton's ``P(w,u) + (u,v) + P(v,w)`` over BFS shortest
    paths; they are taken shortest-first and kept when independent over GF(2).
    """
    rank = cycle_rank(g)
    if rank == 0:
        return []
    edge_bit = {frozenset((b.a, b.b)): 1 << i for i, b in enumerate(g.bonds)}

    candidates: dict[int, tuple[int, ...]] = {}
    for w in range(len(g.atoms)):
        parent, dist = _bfs_tree(g, w)
        for b in g.bonds:
            u, v = b.a, b.b
            if dist[u] < 0 or dist[v] < 0:
                continue
            pu, pv = _path(parent, w, u), _path(parent, w, v)
            if set(pu) & set(pv) != {w}:
                continue
            cycle = pu + pv[::-1][:-1]
            if len(cycle) < 3:
                continue
            mask = 0
            for x, y in zip(cycle, cycle[1:] + cycle[:1]):
                mask |= edge_bit[frozenset((x, y))]
            canon = _canonical_cycle(cycle)
            if mask not in candidates or canon < candidates[mask]:
                candidates[mask] = canon

    basis: list[tuple[int, tuple[int, ...]]] = []
    pivots: dict[int, int] = {}  # leading bit -> reduced vector
    for mask, cyc in sorted(candidates.items(), key=lambda kv: (len(kv[1]), kv[1])):
        vec = mask
        while vec:
            top = vec.bit_length() - 1
            if top not in pivots:
                pivots[top] = vec
                basis.append((mask, cyc))
                break
            vec ^= pivots[top]
        if len(basis) == rank:
            break

    rings = []
    for mask, cyc in sorted(basis, key=lambda mc: (len(mc[1]), mc[1])):
        bonds = [g.bond_between(x, y) for x, y in zip(cyc, cyc[1:] + cyc[:1])]
        label = "aromatic" if all(b.order == "aromatic" for b in bonds) else "aliphatic"
        rings.append(Moiety("ring", label, cyc, graph_id=g.id))
    return [Moiety(m.kind, m.type_label, m.atoms, f"r{i}", g.id) for i, m in enumerate(rings)]


# -- functional groups ------------------------------------------------------


def _order_ok(required: str, actual: str) -> bool:
    return required == "any" or required == actual


def iter_pattern_matches(g: MolecularGraph, pattern: MoietyPattern):
    """Yield every injective mapping pattern-node -> atom satisfying all constraints."""
    n = len(pattern.nodes)
    adj: list[list[tuple[int, str]]] = [[] for _ in range(n)]
    for i, j, o in pattern.edges:
        adj[i].append((j, o))
        adj[j].append((i, o))
    # BFS order so every node after the first has an already-placed neighbour
    order, parent_of, seen = [0], {0: None}, {0}
    k = 0
    while k < len(order):
        u = order[k]
        k += 1
        for v, _ in sorted(adj[u]):
            if v not in seen:
                seen.add(v)
                parent_of[v] = u
                order.append(v)

    mapping = [-1] * n
    used: set[int] = set()

    def consistent(p: int, atom: int) -> bool:
        if atom in used or not pattern.nodes[p].accepts(g, atom):
            return False
        for q, o in adj[p]:
            if mapping[q] >= 0:
                bond = g.bond_between(atom, mapping[q])
                if bond is None or not _order_ok(o, bond.order):
                    return False
        return True

    def extend(depth: int):
        if depth == n:
            yield tuple(mapping)
            return
        p = order[depth]
        par = parent_of[p]
        pool = range(len(g.atoms)) if par is None else sorted(g.neighbors(mapping[par]))
        for atom in pool:
            if consistent(p, atom):
                mapping[p] = atom
                used.add(atom)
                yield from extend(depth + 1)
                used.discard(atom)
                mapping[p] = -1

    yield from extend(0)


def match_functional_groups(g: MolecularGraph, lib: Sequence[MoietyPattern]) -> list[Moiety]:
    """All most-specific functional-group matches, deduplicated by (type, atom set)."""
    raw: list[Moiety] = []
    for pattern in lib:
        seen: set[frozenset[int]] = set()
        for mapping in iter_pattern_matches(g, pattern):
            atoms = tuple(a for a, node in zip(mapping, pattern.nodes) if node.scope)
            key = frozenset(atoms)
            if key in seen:
                continue
            seen.add(key)
            raw.append(Moiety("functional_group", pattern.name, atoms, graph_id=g.id, mapping=mapping))

    by_name = {p.name: p for p in lib}
    kept = []
    for m in raw:
        core = m.mapping[0]
        dominated = any(
            other is not m
            and m.type_label in by_name[other.type_label].parents
            and core in other.mapping
            for other in raw
        )
        if not dominated:
            kept.append(m)
    kept.sort(key=lambda m: (min(m.atoms), m.type_label, m.atoms))
    return [
        Moiety(m.kind, m.type_label, m.atoms, f"f{i}", g.id, None, m.mapping) for i, m in enumerate(kept)
    ]


# -- chains -----------------------------------------------------------------


def detect_aliphatic_chains(g: MolecularGraph, moieties: Iterable[Moiety]) -> list[Moiety]:
    """Connected non-ring carbon sets not contained in a single functional-group match."""
    moieties = list(moieties)
    ring_atoms = set().union(*(m.atom_set for m in moieties if m.kind == "ring"))
    groups = [m.atom_set for m in moieties if m.kind == "functional_group"]
    carbons = {a.index for a in g.atoms if a.element == "C" and a.index not in ring_atoms}

    chains = []
    seen: set[int] = set()
    for start in sorted(carbons):
        if start in seen:
            continue
        comp, stack = set(), [start]
        seen.add(start)
        while stack:
            u = stack.pop()
            comp.add(u)
            for v in g.neighbors(u):
                if v in carbons and v not in seen:
                    seen.add(v)
                    stack.append(v)
        if any(comp <= grp for grp in groups):
            continue
        saturated = all(
            b.order == "single" for b in g.bonds if b.a in comp and b.b in comp
        )
        chains.append((tuple(sorted(comp)), saturated))
    return [
        Moiety("aliphatic_chain", CHAIN_LABEL, atoms, f"c{i}", g.id, sat) for i, (atoms, sat) in enumerate(chains)
    ]


# -- relations --------------------------------------------------------------


def infer_moiety_relations(g: MolecularGraph, moieties: Sequence[Moiety]) -> list[MoietyRelation]:
    """Pairwise fused / connected / saturated / unsaturated labels (indices into ``moieties``)."""
    for m in moieties:
        if m.graph_id and m.graph_id != g.id:
            raise ValueError(f"moiety {m.name or m.type_label} belongs to graph {m.graph_id!r}, not {g.id!r}")
        if any(not 0 <= a < len(g.atoms) for a in m.atoms):
            raise ValueError(f"moiety {m.name or m.type_label} references atoms outside the graph")
    out = []
    for i in range(len(moieties)):
        for j in range(i + 1, len(moieties)):
            a, b = moieties[i], moieties[j]
            if a.atom_set & b.atom_set:
                label = "fused"
            elif any(v in b.atom_set for u in a.atoms for v in g.neighbors(u)):
                chains = [m for m in (a, b) if m.kind == "aliphatic_chain"]
                if chains:
                    label = "saturated" if all(c.saturated for c in chains) else "unsaturated"
                else:
                    label = "connected"
            else:
                continue
            out.append(MoietyRelation(i, j, label))
    return out


def detect_moieties(g: MolecularGraph, lib: Sequence[MoietyPattern]) -> tuple[list[Moiety], list[MoietyRelation]]:
    """Rings, then functional groups, then chains, plus their pairwise relations."""
    rings = perceive_rings(g)
    groups = match_functional_groups(g, lib)
    chains = detect_aliphatic_chains(g, rings + groups)
    moieties = rings + groups + chains
    return moieties, infer_moiety_relations(g, moieties)


# -- records ----------------------------------------------------------------


@dataclass(frozen=True)
class FgRecord:
    predicate: str
    args: tuple

    def __str__(self) -> str:
        def fmt(x):
            if isinstance(x, (tuple, list)):
                return "[" + ",".join(str(v) for v in x) + "]"
            return str(x)

        return f"{self.predicate}(" + ", ".join(fmt(a) for a in self.args) + ")"


def emit_fg_records(
    compound_id: str, moieties: Sequence[Moiety], relations: Sequence[MoietyRelation]
) -> list[FgRecord]:
    records = []
    for m in moieties:
        if m.kind == "ring":
            records.append(FgRecord("ring", (compound_id, m.name, m.atoms, m.length, m.type_label)))
        elif m.kind == "functional_group":
            records.append(FgRecord("functional_group", (compound_id, m.atoms, m.length, m.type_label)))
    for m in moieties:
        records.append(FgRecord("has_struc", (compound_id, m.atoms, m.length, m.type_label)))
    for rel in relations:
        a, b = moieties[rel.a], moieties[rel.b]
        records.append(FgRecord(rel.label, (compound_id, a.name, a.atoms, b.name, b.atoms)))
    return records
