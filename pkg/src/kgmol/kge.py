"""Knowledge-graph embeddings: TransE, RotatE and DistMult trained with margin ranking + SGD.

Entity/relation vectors are used as initial features of property nodes and
``prop_of`` edges in element-augmented graphs. Scores follow the
"higher is more plausible" convention:

* TransE   ``-||h + r - t||_2``
* RotatE   ``-sum_k |h_k * exp(i theta_k) - t_k|`` (entities complex, relations phases)
* DistMult ``sum_k h_k r_k t_k``
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .kgstore import KnowledgeGraph, KnowledgeTriple

MODELS = ("TransE", "RotatE", "DistMult")
_ALIASES = {m.lower(): m for m in MODELS} | {"rotate": "RotatE", "rotate_e": "RotatE"}


def canonical_model(name: str) -> str:
    try:
        return _ALIASES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown KGE model {name!r}; expected one of {MODELS}") from None


@dataclass
class KgeConfig:
    model: str = "RotatE"
    dim: int = 32
    margin: float = 1.0
    learning_rate: float = 0.01
    negatives_per_positive: int = 1
    steps: int = 5000
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        self.model = canonical_model(self.model)

    def validate(self) -> None:
        if self.dim <= 0:
            raise ValueError("dim must be positive")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class EmbeddingTable:
    model: str
    dim: int
    entities: tuple[str, ...]
    relations: tuple[str, ...]
    entity_matrix: np.ndarray
    relation_matrix: np.ndarray
    losses: list[float] = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self):
        self.model = canonical_model(self.model)
        self._ent = {e: i for i, e in enumerate(self.entities)}
        self._rel = {r: i for i, r in enumerate(self.relations)}

    @property
    def entity_dim(self) -> int:
        return self.entity_matrix.shape[1]

    @property
    def relation_dim(self) -> int:
        return self.relation_matrix.shape[1]

    @property
    def entity_vectors(self) -> dict[str, np.ndarray]:
        return {e: self.entity_matrix[i] for e, i in self._ent.items()}

    @property
    def relation_vectors(self) -> dict[str, np.ndarray]:
        return {r: self.relation_matrix[i] for r, i in self._rel.items()}

    def entity(self, name: str) -> np.ndarray:
        try:
            return self.entity_matrix[self._ent[name]]
        except KeyError:
            raise KeyError(f"entity {name!r} not in embedding table") from None

    def relation(self, name: str) -> np.ndarray:
        try:
            return self.relation_matrix[self._rel[name]]
        except KeyError:
            raise KeyError(f"relation {name!r} not in embedding table") from None

    def relation_units(self) -> np.ndarray:
        """RotatE relations as unit complex numbers."""
        if self.model != "RotatE":
            raise ValueError("relation_units is only defined for RotatE")
        return np.exp(1j * self.relation_matrix)

    def to_json(self) -> str:
        doc = {
            "version": 1,
            "model": self.model,
            "dim": self.dim,
            "entities": {e: self.entity_matrix[i].tolist() for e, i in self._ent.items()},
            "relations": {r: self.relation_matrix[i].tolist() for r, i in self._rel.items()},
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str | bytes) -> "EmbeddingTable":
        doc = json.loads(text)
        if doc.get("version") != 1:
            raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
        ents = tuple(sorted(doc["entities"]))
        rels = tuple(sorted(doc["relations"]))
        em = np.array([doc["entities"][e] for e in ents], dtype=np.float64)
        rm = np.array([doc["relations"][r] for r in rels], dtype=np.float64)
        table = cls(doc["model"], int(doc["dim"]), ents, rels, em.reshape(len(ents), -1), rm.reshape(len(rels), -1))
        if not (np.all(np.isfinite(table.entity_matrix)) and np.all(np.isfinite(table.relation_matrix))):
            raise ValueError("checkpoint contains non-finite values")
        return table


# -- scorers ----------------------------------------------------------------


def _split(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = x.shape[-1] // 2
    return x[..., :d], x[..., d:]


def score_vectors(model: str, h: np.ndarray, r: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Vectorised scores over the trailing axis."""
    model = canonical_model(model)
    if model == "TransE":
        return -np.linalg.norm(h + r - t, axis=-1)
    if model == "RotatE":
        hr, hi = _split(h)
        tr, ti = _split(t)
        c, s = np.cos(r), np.sin(r)
        dr = hr * c - hi * s - tr
        di = hr * s + hi * c - ti
        return -np.sqrt(dr * dr + di * di).sum(axis=-1)
    return np.sum(h * r * t, axis=-1)


def score_gradients(
    model: str, h: np.ndarray, r: np.ndarray, t: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Analytic gradients (d score/dh, d score/dr, d score/dt)."""
    model = canonical_model(model)
    if model == "TransE":
        d = h + r - t
        n = np.linalg.norm(d, axis=-1, keepdims=True)
        g = np.divide(d, n, out=np.zeros_like(d), where=n > 0)
        return -g, -g, g
    if model == "RotatE":
        hr, hi = _split(h)
        tr, ti = _split(t)
        c, s = np.cos(r), np.sin(r)
        dr = hr * c - hi * s - tr
        di = hr * s + hi * c - ti
        m = np.sqrt(dr * dr + di * di)
        gr = -np.divide(dr, m, out=np.zeros_like(dr), where=m > 0)
        gi = -np.divide(di, m, out=np.zeros_like(di), where=m > 0)
        dh = np.concatenate([gr * c + gi * s, -gr * s + gi * c], axis=-1)
        dt = np.concatenate([-gr, -gi], axis=-1)
        dtheta = gr * (-hr * s - hi * c) + gi * (hr * c - hi * s)
        return dh, dtheta, dt
    return r * t, h * t, h * r


def score_triple(model: str, emb: EmbeddingTable, t: KnowledgeTriple) -> float:
    return float(score_vectors(model, emb.entity(t.head), emb.relation(t.relation), emb.entity(t.tail)))


def margin_loss(pos_score, neg_score, margin: float):
    return np.maximum(0.0, margin - (np.asarray(pos_score) - np.asarray(neg_score)))


# -- negative sampling ------------------------------------------------------


def _corrupt(h: int, r: int, t: int, n_ent: int, known: set, rng: np.random.Generator, max_tries: int):
    cand = (h, r, t)
    for _ in range(max_tries):
        e = int(rng.integers(n_ent))
        cand = (e, r, t) if rng.random() < 0.5 else (h, r, e)
        if cand not in known:
            return cand, True
    return cand, False


def sample_negative(
    kg: KnowledgeGraph, t: KnowledgeTriple, rng: np.random.Generator, max_tries: int = 100
) -> tuple[KnowledgeTriple, bool]:
    """Corrupt head or tail (fair coin) with a uniformly drawn entity.

    Returns the corrupted triple and whether it is a true negative; after
    ``max_tries`` rejections the last candidate is returned with ``False``.
    """
    if len(kg.entities) < 2:
        raise ValueError("negative sampling needs at least 2 entities")
    ents = kg.entities
    for _ in range(max_tries):
        e = ents[int(rng.integers(len(ents)))]
        cand = KnowledgeTriple(e, t.relation, t.tail) if rng.random() < 0.5 else KnowledgeTriple(t.head, t.relation, e)
        if cand not in kg.triples:
            return cand, True
    return cand, False


# -- training ---------------------------------------------------------------


def init_table(entities: Sequence[str], relations: Sequence[str], model: str, dim: int, rng: np.random.Generator) -> EmbeddingTable:
    model = canonical_model(model)
    bound = 6.0 / math.sqrt(dim)
    ent_width = 2 * dim if model == "RotatE" else dim
    em = rng.uniform(-bound, bound, size=(len(entities), ent_width))
    if model == "RotatE":
        rm = rng.uniform(0.0, 2 * math.pi, size=(len(relations), dim))
    else:
        rm = rng.uniform(-bound, bound, size=(len(relations), dim))
    return EmbeddingTable(model, dim, tuple(entities), tuple(relations), em, rm)


def _index_triples(triples: Iterable[KnowledgeTriple], ent: dict, rel: dict) -> np.ndarray:
    rows = [(ent[t.head], rel[t.relation], ent[t.tail]) for t in sorted(triples)]
    return np.array(rows, dtype=np.int64).reshape(-1, 3)


def train_embeddings(
    kg: KnowledgeGraph,
    cfg: KgeConfig,
    holdout: Iterable[KnowledgeTriple] = (),
    callback: Callable[[int, float, EmbeddingTable], None] | None = None,
) -> EmbeddingTable:
    """Train an embedding table on ``kg`` minus ``holdout``.

    Every entity and relation of ``kg`` gets a vector, including those that
    only appear in held-out triples. One step is one minibatch of positives;
    an epoch is one pass over the shuffled training triples. ``callback`` is
    invoked after every step with ``(step, batch_loss, table)``.
    """
    cfg.validate()
    if not kg.triples:
        raise ValueError("cannot train on an empty KG")
    rng = np.random.default_rng(cfg.seed)
    table = init_table(kg.entities, kg.relations, cfg.model, cfg.dim, rng)
    ent, rel = table._ent, table._rel
    holdout = set(holdout)
    train = _index_triples(kg.triples - holdout, ent, rel)
    if len(train) == 0:
        raise ValueError("no training triples left after holdout")
    known = {tuple(x) for x in train.tolist()}
    E, R = table.entity_matrix, table.relation_matrix
    n_ent, k = len(kg.entities), cfg.negatives_per_positive

    order = np.empty(0, dtype=np.int64)
    pos = 0
    for step in range(cfg.steps):
        if pos >= len(order):
            if cfg.model == "TransE":
                E /= np.maximum(np.linalg.norm(E, axis=1, keepdims=True), 1e-12)
            order = rng.permutation(len(train))
            pos = 0
        batch = train[order[pos : pos + cfg.batch_size]]
        pos += cfg.batch_size

        pos_idx = np.repeat(batch, k, axis=0)
        neg_idx = np.array(
            [_corrupt(h, r, t, n_ent, known, rng, 100)[0] for h, r, t in pos_idx.tolist()], dtype=np.int64
        )
        ph, pr, pt = E[pos_idx[:, 0]], R[pos_idx[:, 1]], E[pos_idx[:, 2]]
        nh, nr, nt = E[neg_idx[:, 0]], R[neg_idx[:, 1]], E[neg_idx[:, 2]]
        sp = score_vectors(cfg.model, ph, pr, pt)
        sn = score_vectors(cfg.model, nh, nr, nt)
        losses = margin_loss(sp, sn, cfg.margin)
        active = (losses > 0).astype(np.float64)[:, None] / len(pos_idx)

        gE, gR = np.zeros_like(E), np.zeros_like(R)
        dh, dr, dt = score_gradients(cfg.model, ph, pr, pt)
        np.add.at(gE, pos_idx[:, 0], -dh * active)
        np.add.at(gR, pos_idx[:, 1], -dr * active)
        np.add.at(gE, pos_idx[:, 2], -dt * active)
        dh, dr, dt = score_gradients(cfg.model, nh, nr, nt)
        np.add.at(gE, neg_idx[:, 0], dh * active)
        np.add.at(gR, neg_idx[:, 1], dr * active)
        np.add.at(gE, neg_idx[:, 2], dt * active)
        E -= cfg.learning_rate * gE
        R -= cfg.learning_rate * gR
        if cfg.model == "RotatE":
            np.mod(R, 2 * math.pi, out=R)

        loss = float(losses.mean())
        if not math.isfinite(loss) or not np.all(np.isfinite(E)) or not np.all(np.isfinite(R)):
            raise FloatingPointError(f"non-finite embedding after step {step}")
        table.losses.append(loss)
        if callback is not None:
            callback(step, loss, table)
    return table


# -- evaluation -------------------------------------------------------------


@dataclass(frozen=True)
class LinkMetrics:
    mrr: float
    hits1: float
    hits3: float
    hits10: float
    n_ranks: int

    def to_dict(self) -> dict:
        return {"MRR": self.mrr, "Hits@1": self.hits1, "Hits@3": self.hits3, "Hits@10": self.hits10, "n": self.n_ranks}


def _filtered_rank(scores: np.ndarray, true_idx: int, exclude: Iterable[int]) -> float:
    mask = np.ones(len(scores), dtype=bool)
    for j in exclude:
        mask[j] = False
    mask[true_idx] = False
    s = scores[true_idx]
    others = scores[mask]
    # ties share the mean rank so a constant scorer cannot look perfect
    return 1.0 + float(np.sum(others > s)) + 0.5 * float(np.sum(others == s))


def evaluate_link_prediction(
    kg: KnowledgeGraph,
    emb: EmbeddingTable | None,
    model: str | Callable[[str, str, str], float] | None = None,
    test_triples: Iterable[KnowledgeTriple] | None = None,
) -> LinkMetrics:
    """Filtered head and tail ranking of ``test_triples`` (default: all of ``kg``).

    ``model`` is a model name (default ``emb.model``) or a callable
    ``(head, relation, tail) -> score`` used in place of the table.
    """
    test = sorted(kg.triples if test_triples is None else test_triples)
    ents = kg.entities
    if callable(model):
        def tails(h, r):
            return np.array([model(h, r, e) for e in ents])

        def heads(r, t):
            return np.array([model(e, r, t) for e in ents])
    else:
        name = canonical_model(model or emb.model)
        missing = [e for e in ents if e not in emb._ent]
        if missing:
            raise KeyError(f"entities missing from embedding table: {missing[:5]}")
        E = np.stack([emb.entity(e) for e in ents])

        def tails(h, r):
            return score_vectors(name, emb.entity(h)[None, :], emb.relation(r)[None, :], E)

        def heads(r, t):
            return score_vectors(name, E, emb.relation(r)[None, :], emb.entity(t)[None, :])

    idx = {e: i for i, e in enumerate(ents)}
    true_tails: dict[tuple[str, str], set[int]] = {}
    true_heads: dict[tuple[str, str], set[int]] = {}
    for t in kg.triples:
        true_tails.setdefault((t.head, t.relation), set()).add(idx[t.tail])
        true_heads.setdefault((t.relation, t.tail), set()).add(idx[t.head])

    ranks = []
    for t in test:
        if t.head not in idx or t.tail not in idx:
            raise KeyError(f"unknown entity in test triple {t}")
        ranks.append(_filtered_rank(tails(t.head, t.relation), idx[t.tail], true_tails.get((t.head, t.relation), ())))
        ranks.append(_filtered_rank(heads(t.relation, t.tail), idx[t.head], true_heads.get((t.relation, t.tail), ())))
    r = np.array(ranks)
    return LinkMetrics(
        mrr=float(np.mean(1.0 / r)),
        hits1=float(np.mean(r <= 1)),
        hits3=float(np.mean(r <= 3)),
        hits10=float(np.mean(r <= 10)),
        n_ranks=len(ranks),
    )
