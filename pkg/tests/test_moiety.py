import json
from collections import Counter

import numpy as np
import pytest

from kgmol.chemgraph import parse_smiles
from kgmol.moiety import (
    Moiety,
    PatternError,
    cycle_rank,
    detect_aliphatic_chains,
    detect_moieties,
    emit_fg_records,
    infer_moiety_relations,
    load_pattern_library,
    match_functional_groups,
    moiety_vocabulary,
    perceive_rings,
)

LIB = load_pattern_library()


# -- independent oracles --------------------------------------------------------


def all_simple_cycles(g):
    """Every simple cycle as a frozenset of bond keys (DFS from the smallest vertex)."""
    adj = {i: g.neighbors(i) for i in range(len(g.atoms))}
    found = set()

    def dfs(start, node, path):
        for v in adj[node]:
            if v == start and len(path) >= 3:
                found.add(frozenset(frozenset(e) for e in zip(path, path[1:] + [start])))
            elif v > start and v not in path:
                dfs(start, v, path + [v])

    for s in adj:
        dfs(s, s, [s])
    return found


def ring_edges(atoms):
    return frozenset(frozenset(e) for e in zip(atoms, atoms[1:] + atoms[:1]))


def gf2_rank(sets, universe):
    idx = {e: i for i, e in enumerate(sorted(universe, key=sorted))}
    rows = [sum(1 << idx[e] for e in s) for s in sets]
    rank = 0
    basis = []
    for r in rows:
        for b in basis:
            r = min(r, r ^ b)
        if r:
            basis.append(r)
            rank += 1
    return rank


def min_basis_weight(cycles, universe):
    """Greedy over all cycles by length: minimum-weight basis of the cycle matroid."""
    chosen, weight = [], 0
    for c in sorted(cycles, key=len):
        if gf2_rank(chosen + [c], universe) > len(chosen):
            chosen.append(c)
            weight += len(c)
    return len(chosen), weight


def brute_relations(g, moieties):
    out = []
    for i in range(len(moieties)):
        for j in range(i + 1, len(moieties)):
            a, b = moieties[i], moieties[j]
            if set(a.atoms) & set(b.atoms):
                out.append((i, j, "fused"))
                continue
            joined = any(
                (bd.a in a.atoms and bd.b in b.atoms) or (bd.b in a.atoms and bd.a in b.atoms) for bd in g.bonds
            )
            if not joined:
                continue
            chain = [m for m in (a, b) if m.kind == "aliphatic_chain"]
            if not chain:
                out.append((i, j, "connected"))
            else:
                out.append((i, j, "saturated" if all(c.saturated for c in chain) else "unsaturated"))
    return out


# -- rings ------------------------------------------------------------------------


def test_ring_examples():
    (r,) = perceive_rings(parse_smiles("c1ccccc1"))
    assert r.length == 6 and r.type_label == "aromatic"
    (r,) = perceive_rings(parse_smiles("C1CC1"))
    assert r.length == 3 and r.type_label == "aliphatic"
    a, b = perceive_rings(parse_smiles("c1ccc2ccccc2c1"))
    assert a.length == b.length == 6 and len(a.atom_set & b.atom_set) == 2
    assert perceive_rings(parse_smiles("CCO")) == []


def test_naphthalene_rings_are_brute_force_smallest_cycles():
    g = parse_smiles("c1ccc2ccccc2c1")
    cycles = all_simple_cycles(g)
    assert sorted(len(c) for c in cycles) == [6, 6, 10]
    rings = perceive_rings(g)
    assert {ring_edges(list(r.atoms)) for r in rings} == {c for c in cycles if len(c) == 6}


@pytest.mark.parametrize(
    "smiles",
    [
        "c1ccccc1",
        "c1ccc2ccccc2c1",
        "c1ccc2cc3ccccc3cc2c1",
        "C1CC2CCC1CC2",
        "C12C3C4C1C5C2C3C45",
        "C1CC2CC1C1CCCCC21",
        "c1ccccc1-c2ccccc2",
        "C1CCC(CC1)C1CCCC1",
        "C1CCCCCCCCCCC1",
        "CC(=O)Oc1ccccc1C(=O)O",
        "C1CC1.C1CC1",
    ],
)
def test_ring_basis_is_minimum_cycle_basis(smiles):
    g = parse_smiles(smiles)
    rings = perceive_rings(g)
    universe = {frozenset((b.a, b.b)) for b in g.bonds}
    assert len(rings) == cycle_rank(g) == len(g.bonds) - len(g.atoms) + len(g.components())
    cycles = all_simple_cycles(g)
    edge_sets = [ring_edges(list(r.atoms)) for r in rings]
    for r, es in zip(rings, edge_sets):
        assert es in cycles, f"{r.atoms} is not a simple cycle"
        assert len(set(r.atoms)) == r.length <= 12
        arom = all(g.bond_between(*tuple(e)).order == "aromatic" for e in es)
        assert r.type_label == ("aromatic" if arom else "aliphatic")
    assert gf2_rank(edge_sets, universe) == len(rings)
    n, weight = min_basis_weight(cycles, universe)
    assert n == len(rings) and weight == sum(r.length for r in rings)


def test_ring_count_matches_cycle_space_dimension_on_corpus(corpus_graphs):
    for g in corpus_graphs:
        assert len(perceive_rings(g)) == len(g.bonds) - len(g.atoms) + len(g.components())


# -- functional groups ---------------------------------------------------------------


def test_ethanol_hydroxyl():
    (m,) = match_functional_groups(parse_smiles("CCO", "ethanol"), LIB)
    assert m.type_label == "hydroxyl" and m.atoms == (2, 1)


def test_benzene_has_no_carbonyl():
    carbonyl = [p for p in LIB if p.name == "carbonyl"]
    assert match_functional_groups(parse_smiles("c1ccccc1"), carbonyl) == []


def test_aspirin_groups_match_hand_enumeration():
    g = parse_smiles("CC(=O)Oc1ccccc1C(=O)O", "aspirin")
    got = {(m.type_label, m.atom_set) for m in match_functional_groups(g, LIB)}
    # ester: carbonyl C1, O2, bridging O3 and the aromatic carbon C4 it binds
    # carboxyl: C10, =O11, -O12 (the ring carbon is outside the group)
    assert got == {("ester", frozenset({1, 2, 3, 4})), ("carboxyl", frozenset({10, 11, 12}))}


@pytest.mark.parametrize(
    "smiles,expected",
    [
        ("CC(=O)O", {"carboxyl": 1}),
        ("CC(=O)C", {"carbonyl": 1}),
        ("CC=O", {"carbonyl": 1}),
        ("CCOCC", {"ether": 1}),
        ("CC(=O)OC", {"ester": 1}),
        ("CN", {"primary_amine": 1}),
        ("CNC", {"secondary_amine": 1}),
        ("CCN(CC)CC", {"tertiary_amine": 1}),
        ("O=C(N)C", {"amide": 1}),
        ("C[N+](=O)[O-]", {"nitro": 1}),
        ("C#N", {"nitrile": 1}),
        ("CS", {"thiol": 1}),
        ("ClC(Cl)Cl", {"halo": 3}),
        ("CS(=O)(=O)C", {"sulfonyl": 1}),
        ("CC=CC", {"alkene": 1}),
        ("CC#CC", {"alkyne": 1}),
        ("OCC(O)CO", {"hydroxyl": 3}),
        ("c1ccccc1", {}),
        ("Oc1ccccc1", {"hydroxyl": 1}),
    ],
)
def test_library_most_specific_types(smiles, expected):
    got = Counter(m.type_label for m in match_functional_groups(parse_smiles(smiles), LIB))
    assert dict(got) == expected


def recheck_match(g, pattern, mapping):
    if len(set(mapping)) != len(mapping):
        return False
    for node, atom in zip(pattern.nodes, mapping):
        a = g.atoms[atom]
        if node.elements is not None and a.element not in node.elements:
            return False
        if node.aromatic is not None and a.aromatic != node.aromatic:
            return False
        if not node.min_degree <= len(g.neighbors(atom)) <= node.max_degree:
            return False
    for i, j, order in pattern.edges:
        bond = next((b for b in g.bonds if {b.a, b.b} == {mapping[i], mapping[j]}), None)
        if bond is None or (order != "any" and bond.order != order):
            return False
    return True


def test_every_match_satisfies_its_pattern(corpus_graphs):
    by_name = {p.name: p for p in LIB}
    n = 0
    for g in corpus_graphs:
        for m in match_functional_groups(g, LIB):
            p = by_name[m.type_label]
            assert recheck_match(g, p, m.mapping), (g.id, m)
            assert m.atoms == tuple(a for a, node in zip(m.mapping, p.nodes) if node.scope)
            n += 1
    assert n >= 15


def test_matches_are_deduplicated_by_type_and_atoms(corpus_graphs):
    for g in corpus_graphs:
        keys = [(m.type_label, m.atom_set) for m in match_functional_groups(g, LIB)]
        assert len(keys) == len(set(keys))


def test_detection_invariant_under_relabeling(corpus_graphs):
    rng = np.random.default_rng(0)
    for g in corpus_graphs:
        perm = rng.permutation(len(g.atoms)).tolist()
        h = g.permuted(perm)
        ma, _ = detect_moieties(g, LIB)
        mb, rb = detect_moieties(h, LIB)
        mapped = Counter((m.kind, m.type_label, frozenset(perm[a] for a in m.atoms)) for m in ma)
        assert mapped == Counter((m.kind, m.type_label, m.atom_set) for m in mb)


# -- chains --------------------------------------------------------------------------


def chains_of(smiles):
    g = parse_smiles(smiles)
    return detect_aliphatic_chains(g, perceive_rings(g) + match_functional_groups(g, LIB))


def test_chain_examples():
    (c,) = chains_of("CCCC")
    assert c.length == 4 and c.saturated
    (c,) = chains_of("CC=CC")
    assert c.length == 4 and not c.saturated
    (c,) = chains_of("Cc1ccccc1")
    assert c.atoms == (0,) and c.saturated
    assert chains_of("c1ccccc1") == []
    # a carbon wholly inside a functional group is not a separate chain
    assert chains_of("C#N") == []


# -- relations ------------------------------------------------------------------------


def labels_for(smiles):
    g = parse_smiles(smiles)
    ms, rels = detect_moieties(g, LIB)
    return ms, rels


def test_relation_examples():
    ms, rels = labels_for("c1ccc2ccccc2c1")
    assert [r.label for r in rels] == ["fused"]
    ms, rels = labels_for("c1ccccc1-c2ccccc2")
    assert [r.label for r in rels] == ["connected"]
    ms, rels = labels_for("Cc1ccccc1")
    assert [r.label for r in rels] == ["saturated"]
    ms, rels = labels_for("CC=Cc1ccccc1")
    assert Counter(r.label for r in rels) == {"unsaturated": 1, "connected": 1, "fused": 1}


def test_relations_match_brute_force_on_corpus(corpus_graphs):
    extra = [parse_smiles(s) for s in ("CCc1ccc(O)cc1", "OC(=O)c1ccccc1C=C", "CC(C)(C)c1ccc2ccccc2c1")]
    for g in list(corpus_graphs) + extra:
        ms, rels = detect_moieties(g, LIB)
        assert [(r.a, r.b, r.label) for r in rels] == brute_relations(g, ms)
        pairs = Counter((r.a, r.b) for r in rels)
        assert all(v == 1 for v in pairs.values())  # fused and connected never both


def test_relations_reject_foreign_moieties():
    g = parse_smiles("CCO", "ethanol")
    with pytest.raises(ValueError):
        infer_moiety_relations(g, [Moiety("ring", "aromatic", (0, 1, 2), "r0", "benzene")])
    with pytest.raises(ValueError):
        infer_moiety_relations(g, [Moiety("ring", "aromatic", (0, 1, 7), "r0", "ethanol")])


# -- records ----------------------------------------------------------------------------


def records(smiles, ident):
    g = parse_smiles(smiles, ident)
    ms, rels = detect_moieties(g, LIB)
    return [str(r) for r in emit_fg_records(ident, ms, rels)]


def test_benzene_records():
    assert records("c1ccccc1", "benzene") == [
        "ring(benzene, r0, [0,1,2,3,4,5], 6, aromatic)",
        "has_struc(benzene, [0,1,2,3,4,5], 6, aromatic)",
    ]


def test_ethanol_records():
    recs = records("CCO", "ethanol")
    assert "functional_group(ethanol, [2,1], 2, hydroxyl)" in recs
    assert "has_struc(ethanol, [2,1], 2, hydroxyl)" in recs


def test_naphthalene_fused_record():
    recs = records("c1ccc2ccccc2c1", "naphthalene")
    fused = [r for r in recs if r.startswith("fused(")]
    assert fused == ["fused(naphthalene, r0, [0,1,2,3,8,9], r1, [3,4,5,6,7,8])"]
    assert sum(r.startswith("has_struc(") for r in recs) == 2


def test_records_are_deterministic(corpus_graphs):
    for g in corpus_graphs:
        a = emit_fg_records(g.id, *detect_moieties(g, LIB))
        b = emit_fg_records(g.id, *detect_moieties(g, LIB))
        assert a == b


# -- pattern library ----------------------------------------------------------------------


def test_shipped_library():
    names = [p.name for p in LIB]
    assert len(names) == 16
    vocab = moiety_vocabulary(LIB)
    assert vocab[:16] == tuple(names) and "aromatic" in vocab and "aliphatic_chain" in vocab


@pytest.mark.parametrize(
    "doc",
    [
        {"patterns": [{"name": "x", "nodes": []}]},
        {"patterns": [{"name": "x", "nodes": [{"element": "C"}, {"element": "O"}], "edges": []}]},
        {"patterns": [{"name": "x", "nodes": [{"element": "Na"}]}]},
        {"patterns": [{"name": "x", "nodes": [{"element": "C", "min_degree": 3, "max_degree": 1}]}]},
        {"patterns": [{"name": "x", "nodes": [{"element": "C"}, {"element": "O"}], "edges": [[0, 1, "quadruple"]]}]},
        {"patterns": [{"name": "x", "nodes": [{"element": "C"}], "parents": ["y"]}]},
        {"patterns": [{"name": "x", "nodes": [{"element": "C"}]}, {"name": "x", "nodes": [{"element": "O"}]}]},
        {"patterns": [{"nodes": [{"element": "C"}]}]},
        {"nothing": []},
    ],
)
def test_malformed_patterns_rejected(doc):
    with pytest.raises(PatternError):
        load_pattern_library(json.dumps(doc))
