import re

import pytest

from kgmol.chemgraph import parse_smiles

# (smiles, id, heavy-atom elements in input order, #bonds, implicit H per atom)
# counted by hand from the strings, independent of the parser
CORPUS = [
    ("CCO", "ethanol", "C C O", 2, (3, 2, 1)),
    ("c1ccccc1", "benzene", "C C C C C C", 6, (1, 1, 1, 1, 1, 1)),
    ("CC(=O)O", "acetic_acid", "C C O O", 3, (3, 0, 0, 1)),
    ("CC(=O)Oc1ccccc1C(=O)O", "aspirin", "C C O O C C C C C C C O O", 13, (3, 0, 0, 0, 0, 1, 1, 1, 1, 0, 0, 0, 1)),
    ("c1ccc2ccccc2c1", "naphthalene", "C C C C C C C C C C", 11, (1, 1, 1, 0, 1, 1, 1, 1, 0, 1)),
    ("c1ccccc1-c2ccccc2", "biphenyl", "C C C C C C C C C C C C", 13, (1, 1, 1, 1, 1, 0, 0, 1, 1, 1, 1, 1)),
    ("Cc1ccccc1", "toluene", "C C C C C C C", 7, (3, 0, 1, 1, 1, 1, 1)),
    ("CC=Cc1ccccc1", "propenylbenzene", "C C C C C C C C C", 9, (3, 1, 1, 0, 1, 1, 1, 1, 1)),
    ("C1CC1", "cyclopropane", "C C C", 3, (2, 2, 2)),
    ("CCCC", "butane", "C C C C", 3, (3, 2, 2, 3)),
    ("CC=CC", "butene", "C C C C", 3, (3, 1, 1, 3)),
    ("C#N", "hydrogen_cyanide", "C N", 1, (1, 0)),
    ("ClC(Cl)Cl", "chloroform", "Cl C Cl Cl", 3, (0, 1, 0, 0)),
    ("CCN(CC)CC", "triethylamine", "C C N C C C C", 6, (3, 2, 0, 2, 3, 2, 3)),
    ("O=C(N)C", "acetamide", "O C N C", 3, (0, 0, 2, 3)),
    ("C[N+](=O)[O-]", "nitromethane", "C N O O", 3, (3, 0, 0, 0)),
    ("c1ccncc1", "pyridine", "C C C N C C", 6, (1, 1, 1, 0, 1, 1)),
    ("c1ccoc1", "furan", "C C C O C", 5, (1, 1, 1, 0, 1)),
    ("CS(=O)(=O)C", "dimethyl_sulfone", "C S O O C", 4, (3, 0, 0, 0, 3)),
    ("OCC(O)CO", "glycerol", "O C C O C O", 5, (1, 2, 1, 1, 2, 1)),
]


@pytest.fixture(scope="session")
def corpus_graphs():
    return [parse_smiles(s, i) for s, i, *_ in CORPUS]


ACCEPTANCE = pytest.StashKey[dict]()
SELECTED = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Returns ``record(n, ok, detail)``; recorded lines are printed after the run."""
    lines = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(n: int, ok: bool, detail: str) -> bool:
        lines[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return record


def pytest_collection_finish(session):
    found = (re.match(r"test_criterion_(\d+)", item.name) for item in session.items)
    session.config.stash[SELECTED] = sorted({int(m.group(1)) for m in found if m})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    selected = config.stash.get(SELECTED, [])
    if not selected:
        return
    lines = config.stash.get(ACCEPTANCE, {})
    terminalreporter.section("acceptance criteria")
    for n in selected:
        terminalreporter.write_line(lines.get(n, f"criterion {n:2d}: FAIL  (errored before recording a result)"))
