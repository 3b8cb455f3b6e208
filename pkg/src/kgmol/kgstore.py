"""Chemical Element KG: ``(property, relation, element)`` triples loaded from TSV."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from importlib import resources
from typing import BinaryIO, Iterable

RELATIONS = (
    "isFamilyOf",
    "isMetallicityOf",
    "isPeriodOf",
    "isStateOf",
    "isWeightOf",
    "isElectronegativityOf",
    "isElectronAffinityOf",
    "isMeltingPointOf",
    "isBoilingPointOf",
    "isIonizationOf",
    "isRadiusOf",
    "isHardnessOf",
    "isModulusOf",
    "isDensityOf",
    "isConductivityOf",
    "isHeatOf",
    "isAbundanceOf",
)

# IUPAC symbols, Z = 1..118
ELEMENTS = tuple(
    """
    H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu
    Zn Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba
    La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl Pb Bi
    Po At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr Rf Db Sg Bh Hs Mt Ds
    Rg Cn Nh Fl Mc Lv Ts Og
    """.split()
)


class KgFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True, order=True)
class KnowledgeTriple:
    head: str
    relation: str
    tail: str

    def __post_init__(self):
        for name in ("head", "relation", "tail"):
            value = getattr(self, name)
            if not isinstance(value, str) or not value.strip():
                raise KgFormatError(f"empty {name} field")


@dataclass(frozen=True)
class KnowledgeGraph:
    triples: frozenset[KnowledgeTriple]
    entities: tuple[str, ...] = field(init=False)
    relations: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "triples", frozenset(self.triples))
        ents = {t.head for t in self.triples} | {t.tail for t in self.triples}
        object.__setattr__(self, "entities", tuple(sorted(ents)))
        object.__setattr__(self, "relations", tuple(sorted({t.relation for t in self.triples})))
        object.__setattr__(self, "_by_tail", _group_by_tail(self.triples))

    @classmethod
    def from_triples(cls, triples: Iterable[KnowledgeTriple | tuple[str, str, str]]) -> "KnowledgeGraph":
        return cls(frozenset(t if isinstance(t, KnowledgeTriple) else KnowledgeTriple(*t) for t in triples))

    def __len__(self) -> int:
        return len(self.triples)

    def sorted_triples(self) -> list[KnowledgeTriple]:
        return sorted(self.triples)

    def entity_index(self) -> dict[str, int]:
        return {e: i for i, e in enumerate(self.entities)}

    def relation_index(self) -> dict[str, int]:
        return {r: i for i, r in enumerate(self.relations)}


def _group_by_tail(triples) -> dict[str, tuple[KnowledgeTriple, ...]]:
    out: dict[str, list[KnowledgeTriple]] = {}
    for t in triples:
        out.setdefault(t.tail, []).append(t)
    return {k: tuple(sorted(v)) for k, v in out.items()}


def load_triples(source: BinaryIO | bytes | str) -> KnowledgeGraph:
    """Load ``head<TAB>relation<TAB>tail`` lines into a deduplicated KG.

    ``source`` may be a binary stream, raw bytes, or decoded text. Blank
    lines and ``#`` comments are ignored.
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        text = source.read().decode("utf-8")
    triples = set()
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise KgFormatError(f"expected 3 tab-separated fields, got {len(parts)}", lineno)
        if any(not p.strip() for p in parts):
            raise KgFormatError("empty field", lineno)
        triples.add(KnowledgeTriple(*(p.strip() for p in parts)))
    return KnowledgeGraph(frozenset(triples))


def load_sample_kg() -> KnowledgeGraph:
    """The small hand-written element KG bundled with the package."""
    data = resources.files("kgmol.data").joinpath("sample_element_kg.tsv").read_bytes()
    return load_triples(data)


@dataclass
class ValidationReport:
    unknown_relations: list[KnowledgeTriple]
    unknown_elements: list[KnowledgeTriple]
    n_entities: int
    n_relations: int
    n_triples: int

    @property
    def valid(self) -> bool:
        return not self.unknown_relations and not self.unknown_elements

    @property
    def findings(self) -> list[str]:
        out = [f"unknown relation {t.relation!r} in {_fmt(t)}" for t in self.unknown_relations]
        out += [f"unknown element {t.tail!r} in {_fmt(t)}" for t in self.unknown_elements]
        return out

    def to_dict(self) -> dict:
        return {
            "valid": self.valid,
            "findings": self.findings,
            "entities": self.n_entities,
            "relations": self.n_relations,
            "triples": self.n_triples,
        }


def _fmt(t: KnowledgeTriple) -> str:
    return f"({t.head}, {t.relation}, {t.tail})"


def validate_element_kg(kg: KnowledgeGraph) -> ValidationReport:
    """Check relation names against the 17-name vocabulary and tails against the element table."""
    rels, elems = set(RELATIONS), set(ELEMENTS)
    ordered = kg.sorted_triples()
    return ValidationReport(
        unknown_relations=[t for t in ordered if t.relation not in rels],
        unknown_elements=[t for t in ordered if t.tail not in elems],
        n_entities=len(kg.entities),
        n_relations=len(kg.relations),
        n_triples=len(kg.triples),
    )


def one_hop_properties(kg: KnowledgeGraph, element: str) -> list[KnowledgeTriple]:
    """All triples whose tail is ``element``, sorted."""
    return list(kg._by_tail.get(element, ()))
