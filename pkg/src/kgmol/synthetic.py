"""Small synthetic datasets for sanity checks and demos."""

from __future__ import annotations

import numpy as np

from .kgstore import KnowledgeGraph, KnowledgeTriple


def translation_kg(
    seed: int = 0,
    n_heads: int = 25,
    n_tails: int = 25,
    n_relations: int = 4,
    fan_out: int = 2,
    latent_dim: int = 3,
    relation_norm: float = 0.5,
    n_test: int = 20,
) -> tuple[KnowledgeGraph, list[KnowledgeTriple]]:
    """Bipartite KG generated by a latent unit-sphere translation model.

    Each head links, under each relation, to the ``fan_out`` tails nearest to
    ``head + relation`` in the latent space. Draws are repeated until every
    tail is used so the entity count is exactly ``n_heads + n_tails``.
    Returns the KG and ``n_test`` held-out triples.
    """
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        A = rng.normal(size=(n_heads, latent_dim))
        B = rng.normal(size=(n_tails, latent_dim))
        A /= np.linalg.norm(A, axis=1, keepdims=True)
        B /= np.linalg.norm(B, axis=1, keepdims=True)
        R = rng.normal(size=(n_relations, latent_dim))
        R *= relation_norm / np.linalg.norm(R, axis=1, keepdims=True)
        triples = []
        for h in range(n_heads):
            for r in range(n_relations):
                d = np.linalg.norm(A[h] + R[r] - B, axis=1)
                for t in np.argsort(d, kind="stable")[:fan_out]:
                    triples.append(KnowledgeTriple(f"h{h:02d}", f"r{r}", f"t{int(t):02d}"))
        kg = KnowledgeGraph.from_triples(triples)
        if len(kg.entities) == n_heads + n_tails:
            ordered = kg.sorted_triples()
            test = [ordered[i] for i in sorted(rng.choice(len(ordered), size=n_test, replace=False))]
            return kg, test
    raise RuntimeError("could not draw a KG that uses every tail entity")


def _chain_variants(n: int, sub: str) -> list[str]:
    """SMILES of straight-chain C_n carrying ``sub`` at each distinct position."""
    out = []
    for pos in range(1, n // 2 + 2):
        if pos > n or (pos - 1) > n - pos:
            break
        left = "C" * (pos - 1)
        right = "C" * (n - pos)
        if pos == 1:
            out.append(sub + "C" * n)
        else:
            out.append(f"{left}C({sub}){right}" if right else f"{left}C{sub}")
    return out


def two_family_dataset(per_family: int = 20) -> list[tuple[str, str]]:
    """``(smiles, family)`` pairs: alcohols vs chloroalkanes with matched carbon skeletons."""
    fams = {"alcohol": "O", "chloroalkane": "Cl"}
    out = []
    for fam, sub in fams.items():
        smiles = []
        n = 1
        while len(smiles) < per_family:
            for s in _chain_variants(n, sub):
                if len(smiles) < per_family:
                    smiles.append(s)
            n += 1
        out += [(s, fam) for s in smiles]
    return out
