import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgmol.kgstore import (
    ELEMENTS,
    RELATIONS,
    KgFormatError,
    KnowledgeGraph,
    KnowledgeTriple,
    load_sample_kg,
    load_triples,
    one_hop_properties,
    validate_element_kg,
)


def test_load_single_triple():
    kg = load_triples(b"Gas\tisStateOf\tCl\n")
    assert len(kg.triples) == 1
    assert kg.entities == ("Cl", "Gas")
    assert kg.relations == ("isStateOf",)


def test_duplicate_lines_are_deduplicated():
    kg = load_triples(b"Gas\tisStateOf\tCl\nGas\tisStateOf\tCl\n")
    assert len(kg.triples) == 1


def test_malformed_line_reports_line_number():
    with pytest.raises(KgFormatError) as info:
        load_triples(b"# header\nGas\tisStateOf\n")
    assert info.value.line == 2
    with pytest.raises(KgFormatError):
        load_triples(b"Gas\t \tCl\n")
    with pytest.raises(ValueError):
        KnowledgeTriple("Gas", "isStateOf", "")


def test_stream_and_text_sources_agree():
    data = b"Gas\tisStateOf\tCl\nSolid\tisStateOf\tC\n"
    assert load_triples(io.BytesIO(data)).triples == load_triples(data.decode()).triples == load_triples(data).triples


def test_concatenation_with_itself_is_idempotent():
    data = _sample_bytes()
    assert load_triples(data + data).triples == load_triples(data).triples


def _sample_bytes() -> bytes:
    from importlib import resources

    return resources.files("kgmol.data").joinpath("sample_element_kg.tsv").read_bytes()


def test_relation_vocabulary():
    assert len(RELATIONS) == 17 and len(set(RELATIONS)) == 17
    assert RELATIONS[0] == "isFamilyOf" and RELATIONS[-1] == "isAbundanceOf"
    assert len(ELEMENTS) == 118 and ELEMENTS[0] == "H" and ELEMENTS[-1] == "Og"


def test_validator_examples():
    ok = validate_element_kg(KnowledgeGraph.from_triples([("Gas", "isStateOf", "Cl")]))
    assert ok.valid and ok.findings == []
    bad_rel = validate_element_kg(KnowledgeGraph.from_triples([("Gas", "stateOf", "Cl")]))
    assert not bad_rel.valid and bad_rel.findings == ["unknown relation 'stateOf' in (Gas, stateOf, Cl)"]
    bad_el = validate_element_kg(KnowledgeGraph.from_triples([("Gas", "isStateOf", "Xx")]))
    assert bad_el.findings == ["unknown element 'Xx' in (Gas, isStateOf, Xx)"]
    assert bad_el.to_dict()["triples"] == 1


def test_sample_kg_is_valid_and_covers_test_elements():
    kg = load_sample_kg()
    report = validate_element_kg(kg)
    assert report.valid
    assert 35 <= report.n_triples <= 45
    assert {t.tail for t in kg.triples} == {"H", "C", "N", "O", "Cl"}
    assert KnowledgeTriple("Gas", "isStateOf", "Cl") in kg.triples


def test_one_hop_examples():
    kg = KnowledgeGraph.from_triples([("Gas", "isStateOf", "Cl")])
    assert one_hop_properties(kg, "Cl") == [KnowledgeTriple("Gas", "isStateOf", "Cl")]
    assert one_hop_properties(kg, "He") == []
    kg5 = KnowledgeGraph.from_triples(
        [
            ("Halogen", "isFamilyOf", "Cl"),
            ("Gas", "isStateOf", "Cl"),
            ("Period3", "isPeriodOf", "Cl"),
            ("Gas", "isStateOf", "H"),
            ("Solid", "isStateOf", "C"),
        ]
    )
    got = one_hop_properties(kg5, "Cl")
    assert got == sorted(t for t in kg5.triples if t.tail == "Cl") and len(got) == 3


def test_indices_cover_exactly_the_strings():
    kg = load_sample_kg()
    assert set(kg.entities) == {t.head for t in kg.triples} | {t.tail for t in kg.triples}
    assert set(kg.relations) == {t.relation for t in kg.triples}
    assert kg.entity_index() == {e: i for i, e in enumerate(kg.entities)}


names = st.sampled_from(["Gas", "Solid", "Liquid", "Metal", "Low", "High"])
rels = st.sampled_from(list(RELATIONS) + ["stateOf", "isColourOf", "foo"])
tails = st.sampled_from(["H", "C", "N", "O", "Cl", "Xx", "Qq", "He"])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(names, rels, tails), min_size=1, max_size=25))
def test_validator_flags_iff_outside_vocabulary(rows):
    kg = KnowledgeGraph.from_triples(rows)
    report = validate_element_kg(kg)
    assert set(report.unknown_relations) == {t for t in kg.triples if t.relation not in RELATIONS}
    assert set(report.unknown_elements) == {t for t in kg.triples if t.tail not in ELEMENTS}
    for e in ["H", "C", "N", "O", "Cl", "Xx", "Qq", "He"]:
        assert one_hop_properties(kg, e) == sorted(t for t in kg.triples if t.tail == e)
