"""Molecular graphs parsed from a SMILES subset.

Only heavy atoms become graph nodes; hydrogens are kept as per-atom counts.
Supported: organic-subset atoms (B C N O P S F Cl Br I, aromatic b c n o p s),
bracket atoms with H count and charge, branches, ring closures (``1``-``9``,
``%nn``), bond symbols ``- = # :`` and ``.`` fragment separators.
"""

from __future__ import annotations

import hashlib
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator

SUPPORTED_ELEMENTS = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")
AROMATIC_SYMBOLS = {"b": "B", "c": "C", "n": "N", "o": "O", "p": "P", "s": "S"}

# Standard valences; the smallest one that accommodates the bond sum is used.
VALENCES = {
    "B": (3,),
    "C": (4,),
    "N": (3, 5),
    "O": (2,),
    "P": (3, 5),
    "S": (2, 4, 6),
    "F": (1,),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
}

BOND_ORDERS = {"single": 1.0, "double": 2.0, "triple": 3.0, "aromatic": 1.5}
BOND_SYMBOLS = {"-": "single", "=": "double", "#": "triple", ":": "aromatic"}


class SmilesError(ValueError):
    """Raised for input outside the supported SMILES subset."""

    def __init__(self, message: str, position: int | None = None):
        self.position = position
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)


@dataclass(frozen=True)
class Atom:
    index: int
    element: str
    aromatic: bool = False
    formal_charge: int = 0
    implicit_h: int = 0


@dataclass(frozen=True)
class Bond:
    a: int
    b: int
    order: str = "single"

    @property
    def value(self) -> float:
        return BOND_ORDERS[self.order]

    def other(self, atom: int) -> int:
        return self.b if atom == self.a else self.a


@dataclass(frozen=True)
class MolecularGraph:
    id: str
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    _adj: tuple = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        object.__setattr__(self, "bonds", tuple(self.bonds))
        n = len(self.atoms)
        for i, atom in enumerate(self.atoms):
            if atom.index != i:
                raise ValueError(f"atom indices must be dense 0..n-1, got {atom.index} at {i}")
            if atom.element not in SUPPORTED_ELEMENTS:
                raise ValueError(f"unsupported element {atom.element!r}")
            if atom.implicit_h < 0:
                raise ValueError(f"negative hydrogen count on atom {i}")
        seen = set()
        adj: list[list[tuple[int, Bond]]] = [[] for _ in range(n)]
        for bond in self.bonds:
            if bond.a == bond.b:
                raise ValueError(f"self-loop bond on atom {bond.a}")
            if not (0 <= bond.a < n and 0 <= bond.b < n):
                raise ValueError(f"bond {bond.a}-{bond.b} references a missing atom")
            if bond.order not in BOND_ORDERS:
                raise ValueError(f"unknown bond order {bond.order!r}")
            key = frozenset((bond.a, bond.b))
            if key in seen:
                raise ValueError(f"duplicate bond {bond.a}-{bond.b}")
            seen.add(key)
            adj[bond.a].append((bond.b, bond))
            adj[bond.b].append((bond.a, bond))
        object.__setattr__(self, "_adj", tuple(tuple(x) for x in adj))

    def __len__(self) -> int:
        return len(self.atoms)

    def neighbors(self, atom: int) -> list[int]:
        return [j for j, _ in self._adj[atom]]

    def incident(self, atom: int) -> list[tuple[int, Bond]]:
        return list(self._adj[atom])

    def degree(self, atom: int) -> int:
        return len(self._adj[atom])

    def bond_between(self, a: int, b: int) -> Bond | None:
        for j, bond in self._adj[a]:
            if j == b:
                return bond
        return None

    def components(self) -> list[list[int]]:
        """Connected components as sorted atom index lists."""
        seen = [False] * len(self.atoms)
        out = []
        for start in range(len(self.atoms)):
            if seen[start]:
                continue
            stack, comp = [start], []
            seen[start] = True
            while stack:
                u = stack.pop()
                comp.append(u)
                for v in self.neighbors(u):
                    if not seen[v]:
                        seen[v] = True
                        stack.append(v)
            out.append(sorted(comp))
        return out

    @property
    def multi_fragment(self) -> bool:
        return len(self.components()) > 1

    def permuted(self, perm: list[int]) -> "MolecularGraph":
        """Relabel atoms: old index ``i`` becomes ``perm[i]``."""
        inv = [0] * len(perm)
        for old, new in enumerate(perm):
            inv[new] = old
        atoms = [
            Atom(new, a.element, a.aromatic, a.formal_charge, a.implicit_h)
            for new, a in ((new, self.atoms[inv[new]]) for new in range(len(perm)))
        ]
        bonds = [Bond(perm[b.a], perm[b.b], b.order) for b in self.bonds]
        return MolecularGraph(self.id, tuple(atoms), tuple(bonds))


def bond_order_sum(g: MolecularGraph, atom: int) -> float:
    """Sum of incident bond orders, aromatic bonds counting 1.5."""
    if not 0 <= atom < len(g.atoms):
        raise IndexError(f"atom index {atom} out of range for {len(g.atoms)} atoms")
    return sum(bond.value for _, bond in g.incident(atom))


def implicit_hydrogens(element: str, aromatic: bool, orders: Iterable[str]) -> int:
    orders = list(orders)
    n_arom = sum(1 for o in orders if o == "aromatic")
    total = sum(BOND_ORDERS[o] for o in orders if o != "aromatic") + n_arom
    # one extra valence unit for the delocalised double bond; o/s donate a lone pair instead
    if aromatic and n_arom and element not in ("O", "S"):
        total += 1
    for v in VALENCES[element]:
        if v >= total:
            return int(math.floor(v - total))
    return 0


# -- tokenizer / parser -----------------------------------------------------


def _tokenize(text: str) -> Iterator[tuple[str, str, int]]:
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "[":
            j = text.find("]", i)
            if j < 0:
                raise SmilesError("unterminated bracket atom", i)
            yield "bracket", text[i + 1 : j], i
            i = j + 1
        elif text.startswith(("Cl", "Br"), i):
            yield "atom", text[i : i + 2], i
            i += 2
        elif ch in "BCNOPSFI" or ch in AROMATIC_SYMBOLS:
            yield "atom", ch, i
            i += 1
        elif ch in BOND_SYMBOLS:
            yield "bond", ch, i
            i += 1
        elif ch in "()":
            yield ch, ch, i
            i += 1
        elif ch == ".":
            yield "dot", ch, i
            i += 1
        elif ch.isdigit():
            yield "ring", ch, i
            i += 1
        elif ch == "%":
            digits = text[i + 1 : i + 3]
            if len(digits) != 2 or not digits.isdigit():
                raise SmilesError("'%' must be followed by two digits", i)
            yield "ring", digits, i
            i += 3
        elif ch in "/\\@":
            raise SmilesError(f"stereochemistry {ch!r} is not supported", i)
        elif ch == "*":
            raise SmilesError("wildcard atoms are not supported", i)
        else:
            raise SmilesError(f"unexpected character {ch!r}", i)


_BRACKET_SYMBOL = re.compile(r"[A-Z][a-z]?|[bcnops]")


def _parse_bracket(body: str, pos: int) -> tuple[str, bool, int, int]:
    """Return (element, aromatic, explicit H count, charge) for a bracket body."""
    i = 0
    if body[:1].isdigit():
        raise SmilesError("isotopes are not supported", pos)
    m = _BRACKET_SYMBOL.match(body)
    if m is None:
        raise SmilesError(f"missing element symbol in [{body}]", pos)
    symbol, i = m.group(0), m.end()
    if symbol not in SUPPORTED_ELEMENTS and symbol not in AROMATIC_SYMBOLS:
        raise SmilesError(f"unsupported element {symbol!r}", pos)
    aromatic = symbol in AROMATIC_SYMBOLS
    element = AROMATIC_SYMBOLS.get(symbol, symbol)
    if "@" in body:
        raise SmilesError("chirality is not supported", pos)
    hcount = 0
    if body[i : i + 1] == "H":
        i += 1
        digits = ""
        while i < len(body) and body[i].isdigit():
            digits += body[i]
            i += 1
        hcount = int(digits) if digits else 1
    charge = 0
    if i < len(body) and body[i] in "+-":
        symbol = body[i]
        run = 0
        while i < len(body) and body[i] == symbol:
            run += 1
            i += 1
        digits = ""
        while i < len(body) and body[i].isdigit():
            digits += body[i]
            i += 1
        if digits and run > 1:
            raise SmilesError(f"malformed charge in [{body}]", pos)
        charge = (1 if symbol == "+" else -1) * (int(digits) if digits else run)
    if i != len(body):
        raise SmilesError(f"unsupported bracket atom [{body}]", pos)
    return element, aromatic, hcount, charge


def parse_smiles(text: str, id: str = "") -> MolecularGraph:
    """Parse ``text`` into a :class:`MolecularGraph` with implicit hydrogens.

    Raises :class:`SmilesError` on syntax errors, unsupported elements,
    unmatched ring-closure digits, or unbalanced parentheses.
    """
    if not text or not text.strip():
        raise SmilesError("empty SMILES", 0)
    text = text.strip()

    atoms: list[dict] = []
    bonds: dict[frozenset, Bond] = {}
    stack: list[int | None] = []
    prev: int | None = None
    pending: str | None = None
    pending_pos = 0
    rings: dict[str, tuple[int, str | None, int]] = {}

    def add_bond(a: int, b: int, symbol: str | None, pos: int) -> None:
        if a == b:
            raise SmilesError("atom bonded to itself", pos)
        key = frozenset((a, b))
        if key in bonds:
            raise SmilesError("duplicate bond between the same atoms", pos)
        if symbol is not None:
            order = BOND_SYMBOLS[symbol]
        elif atoms[a]["aromatic"] and atoms[b]["aromatic"]:
            order = "aromatic"
        else:
            order = "single"
        bonds[key] = Bond(min(a, b), max(a, b), order)

    for kind, value, pos in _tokenize(text):
        if kind in ("atom", "bracket"):
            if kind == "atom":
                aromatic = value in AROMATIC_SYMBOLS
                element = AROMATIC_SYMBOLS.get(value, value)
                hcount, charge, bracket = None, 0, False
            else:
                element, aromatic, hcount, charge = _parse_bracket(value, pos)
                bracket = True
            idx = len(atoms)
            atoms.append(
                dict(element=element, aromatic=aromatic, h=hcount, charge=charge, bracket=bracket)
            )
            if prev is not None:
                add_bond(prev, idx, pending, pending_pos)
            elif pending is not None:
                raise SmilesError("bond symbol without a preceding atom", pending_pos)
            prev, pending = idx, None
        elif kind == "bond":
            if pending is not None or prev is None:
                raise SmilesError(f"misplaced bond symbol {value!r}", pos)
            pending, pending_pos = value, pos
        elif kind == "(":
            if prev is None:
                raise SmilesError("branch without a preceding atom", pos)
            stack.append(prev)
        elif kind == ")":
            if not stack:
                raise SmilesError("unbalanced parenthesis ')'", pos)
            if pending is not None:
                raise SmilesError("bond symbol at end of branch", pending_pos)
            prev = stack.pop()
        elif kind == "ring":
            if prev is None:
                raise SmilesError("ring-closure digit without a preceding atom", pos)
            if value in rings:
                other, symbol, opos = rings.pop(value)
                if symbol and pending and symbol != pending:
                    raise SmilesError(f"conflicting bond symbols for ring closure {value}", pos)
                add_bond(other, prev, symbol or pending, pos)
            else:
                rings[value] = (prev, pending, pos)
            pending = None
        elif kind == "dot":
            if pending is not None or prev is None:
                raise SmilesError("misplaced '.'", pos)
            if stack:
                raise SmilesError("'.' inside a branch", pos)
            prev = None
    if pending is not None:
        raise SmilesError("dangling bond symbol", pending_pos)
    if stack:
        raise SmilesError("unbalanced parenthesis '('", len(text))
    if rings:
        digit, (_, _, opos) = next(iter(rings.items()))
        raise SmilesError(f"unmatched ring-closure digit {digit}", opos)
    if prev is None:
        raise SmilesError("SMILES ends with '.'", len(text))

    bond_list = sorted(bonds.values(), key=lambda b: (b.a, b.b))
    incident: list[list[str]] = [[] for _ in atoms]
    for b in bond_list:
        incident[b.a].append(b.order)
        incident[b.b].append(b.order)
    out = []
    for i, a in enumerate(atoms):
        h = a["h"] if a["bracket"] else implicit_hydrogens(a["element"], a["aromatic"], incident[i])
        out.append(Atom(i, a["element"], a["aromatic"], a["charge"], h))
    return MolecularGraph(id or text, tuple(out), tuple(bond_list))


def graph_signature(g: MolecularGraph) -> str:
    """Relabeling-invariant hash from iterative neighbourhood refinement.

    Isomorphic graphs always share a signature; the converse holds for all
    practical molecules but is not guaranteed (WL refinement is incomplete).
    """

    def h(s: str) -> str:
        return hashlib.sha256(s.encode()).hexdigest()[:16]

    labels = [
        h(f"{a.element}|{int(a.aromatic)}|{a.formal_charge}|{a.implicit_h}|{g.degree(a.index)}")
        for a in g.atoms
    ]
    for _ in range(max(1, len(g.atoms))):
        new = []
        for i in range(len(g.atoms)):
            nbr = sorted(f"{bond.order}:{labels[j]}" for j, bond in g.incident(i))
            new.append(h(labels[i] + "(" + ",".join(nbr) + ")"))
        if len(set(new)) == len(set(labels)):
            labels = new
            break
        labels = new
    counts = sorted(Counter(labels).items())
    return h(f"{len(g.atoms)}/{len(g.bonds)}/" + ";".join(f"{k}x{v}" for k, v in counts))


@dataclass(frozen=True)
class MoleculeRecord:
    smiles: str
    id: str
    label: str | None = None


def read_molecule_file(lines: Iterable[str]) -> list[MoleculeRecord]:
    """Read ``SMILES[<TAB>id[<TAB>label]]`` records; ``#`` lines and blanks are skipped.

    A line holding only a SMILES string gets the id ``mol<line number>``.
    """
    out = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n\r")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = [p.strip() for p in line.split("\t")]
        if len(parts) > 3 or not all(parts):
            raise ValueError(f"line {lineno}: expected SMILES[<TAB>id[<TAB>label]]")
        ident = parts[1] if len(parts) > 1 else f"mol{lineno}"
        out.append(MoleculeRecord(parts[0], ident, parts[2] if len(parts) == 3 else None))
    return out
