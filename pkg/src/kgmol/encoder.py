"""Knowledge-aware heterogeneous message passing (KMPNN) and the plain molecular encoder.

Edge kinds and their message blocks:

* ``a``  atom <-> atom (bonds, both directions)
* ``p``  property -> atom (``prop_of``)
* ``m``  moiety <-> moiety (fused / connected / saturated / unsaturated)
* ``am`` atom <- moiety and ``ma`` moiety <- atom (``part_of``, expanded)

Each round, node ``v`` receives ``m_e = [h_u ; x_e] W_k`` over its in-edges,
weighted by a softmax of ``leaky_relu([h_v ; m_e] . a_k)`` taken jointly over
all in-edges, and is updated by a GRU cell. Atom nodes always update (with a
zero aggregate when isolated); other nodes update only if they have in-edges,
so property nodes keep their KG-derived features.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .augment import MOIETY_EDGE_KINDS, HeteroGraph, from_molecular_graph
from .chemgraph import BOND_ORDERS, SUPPORTED_ELEMENTS, MolecularGraph
from .kge import EmbeddingTable
from .nncore import DTYPE, LEAKY_SLOPE, ParamStore, check_finite, dense_forward

EDGE_KINDS = ("a", "p", "m", "am", "ma")
ELEMENT_KINDS = ("a", "p")
FG_KINDS = ("a", "m", "am", "ma")
PLAIN_KINDS = ("a",)

BOND_VOCAB = tuple(BOND_ORDERS)
MAX_DEGREE = 5
ATOM_FEATURE_DIM = len(SUPPORTED_ELEMENTS) + MAX_DEGREE + 1 + 2


class MissingBlockError(KeyError):
    pass


def kinds_for_mode(mode: str) -> tuple[str, ...]:
    mode = mode.replace("-", "_")
    return {"element_kg": ELEMENT_KINDS, "fg_kg": FG_KINDS, "both": EDGE_KINDS, "plain": PLAIN_KINDS}[mode]


# -- features ---------------------------------------------------------------


@dataclass
class FeatureConfig:
    """How raw node/edge features are built; dims must match the encoder's."""

    random_dim: int = 16
    seed: int = 0
    moiety_vocab: tuple[str, ...] = ()

    def property_dim(self, emb: EmbeddingTable | None) -> int:
        return emb.entity_dim if emb is not None else self.random_dim

    def relation_dim(self, emb: EmbeddingTable | None) -> int:
        return emb.relation_dim if emb is not None else self.random_dim


@dataclass
class FeatureAssignment:
    n_nodes: int
    node_kinds: list[str]
    atom_idx: torch.Tensor
    atom_x: torch.Tensor
    prop_idx: torch.Tensor
    prop_x: torch.Tensor
    moiety_idx: torch.Tensor
    moiety_x: torch.Tensor
    edges: dict[str, tuple[torch.Tensor, torch.Tensor, torch.Tensor]]
    graph_index: torch.Tensor
    n_graphs: int = 1

    @property
    def node_dim(self) -> dict[str, int]:
        return {"atom": self.atom_x.shape[1], "property": self.prop_x.shape[1], "moiety": self.moiety_x.shape[1]}

    @property
    def edge_dim(self) -> dict[str, int]:
        return {k: x.shape[1] for k, (_, _, x) in self.edges.items()}


def _seeded_vector(label: str, salt: str, dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, zlib.crc32(f"{salt}:{label}".encode())])
    return rng.uniform(-1.0, 1.0, size=dim)


def atom_feature(element: str, degree: int, aromatic: bool, charge: int) -> np.ndarray:
    x = np.zeros(ATOM_FEATURE_DIM)
    x[SUPPORTED_ELEMENTS.index(element)] = 1.0
    x[len(SUPPORTED_ELEMENTS) + min(degree, MAX_DEGREE)] = 1.0
    x[-2] = float(aromatic)
    x[-1] = float(charge)
    return x


def _one_hot(value: str, vocab: Sequence[str]) -> np.ndarray:
    x = np.zeros(len(vocab))
    if value not in vocab:
        raise KeyError(f"label {value!r} not in vocabulary {tuple(vocab)}")
    x[list(vocab).index(value)] = 1.0
    return x


def _tensor(rows: list[np.ndarray], dim: int) -> torch.Tensor:
    if not rows:
        return torch.zeros(0, dim, dtype=DTYPE)
    return torch.tensor(np.stack(rows), dtype=DTYPE)


def _long(xs) -> torch.Tensor:
    return torch.tensor(list(xs), dtype=torch.long)


def init_node_features(hg: HeteroGraph, emb: EmbeddingTable | None = None, cfg: FeatureConfig | None = None) -> FeatureAssignment:
    """Raw per-node and per-edge features of ``hg``.

    Property nodes and ``prop_of`` edges take KGE vectors from ``emb``; when
    ``emb`` is None they get reproducible pseudo-random vectors keyed by label.
    """
    cfg = cfg or FeatureConfig()
    kinds = [n.kind for n in hg.nodes]
    degree = [0] * len(hg.nodes)
    for e in hg.edges_of("bond"):
        degree[e.src] += 1
        degree[e.dst] += 1

    atom_idx, atom_rows, prop_idx, prop_rows, moi_idx, moi_rows = [], [], [], [], [], []
    pdim, rdim = cfg.property_dim(emb), cfg.relation_dim(emb)
    for n in hg.nodes:
        if n.kind == "atom":
            atom_idx.append(n.id)
            atom_rows.append(
                atom_feature(n.label, degree[n.id], bool(n.attrs.get("aromatic")), int(n.attrs.get("formal_charge", 0)))
            )
        elif n.kind == "property":
            prop_idx.append(n.id)
            if emb is not None:
                try:
                    prop_rows.append(np.asarray(emb.entity(n.label)))
                except KeyError:
                    raise KeyError(f"property {n.label!r} missing from the embedding table") from None
            else:
                prop_rows.append(_seeded_vector(n.label, "entity", pdim, cfg.seed))
        else:
            moi_idx.append(n.id)
            moi_rows.append(_one_hot(n.label, cfg.moiety_vocab))

    buckets: dict[str, tuple[list, list, list]] = {k: ([], [], []) for k in EDGE_KINDS}

    def put(k, s, d, x):
        buckets[k][0].append(s)
        buckets[k][1].append(d)
        buckets[k][2].append(x)

    for e in hg.edges:
        if e.kind == "bond":
            x = _one_hot(e.label, BOND_VOCAB)
            put("a", e.src, e.dst, x)
            put("a", e.dst, e.src, x)
        elif e.kind == "prop_of":
            if emb is not None:
                try:
                    x = np.asarray(emb.relation(e.label))
                except KeyError:
                    raise KeyError(f"relation {e.label!r} missing from the embedding table") from None
            else:
                x = _seeded_vector(e.label, "relation", rdim, cfg.seed)
            put("p", e.src, e.dst, x)
        elif e.kind == "part_of":
            one = np.ones(1)
            put("am", e.src, e.dst, one)
            put("ma", e.dst, e.src, one)
        elif e.kind in MOIETY_EDGE_KINDS:
            x = _one_hot(e.kind, MOIETY_EDGE_KINDS)
            put("m", e.src, e.dst, x)
            put("m", e.dst, e.src, x)
        else:
            raise ValueError(f"unknown edge kind {e.kind!r}")

    dims = {"a": len(BOND_VOCAB), "p": rdim, "m": len(MOIETY_EDGE_KINDS), "am": 1, "ma": 1}
    edges = {}
    for k, (src, dst, xs) in buckets.items():
        if src:
            edges[k] = (_long(src), _long(dst), _tensor(xs, dims[k]))
    return FeatureAssignment(
        n_nodes=len(hg.nodes),
        node_kinds=kinds,
        atom_idx=_long(atom_idx),
        atom_x=_tensor(atom_rows, ATOM_FEATURE_DIM),
        prop_idx=_long(prop_idx),
        prop_x=_tensor(prop_rows, pdim),
        moiety_idx=_long(moi_idx),
        moiety_x=_tensor(moi_rows, len(cfg.moiety_vocab)),
        edges=edges,
        graph_index=torch.zeros(len(hg.nodes), dtype=torch.long),
        n_graphs=1,
    )


def batch_features(items: Sequence[FeatureAssignment]) -> FeatureAssignment:
    """Disjoint union of several graphs' features."""
    if not items:
        raise ValueError("empty batch")
    offsets = np.cumsum([0] + [f.n_nodes for f in items[:-1]]).tolist()
    goff = np.cumsum([0] + [f.n_graphs for f in items[:-1]]).tolist()

    def cat_idx(attr):
        return torch.cat([getattr(f, attr) + o for f, o in zip(items, offsets)])

    def cat_x(attr):
        return torch.cat([getattr(f, attr) for f in items])

    edges = {}
    for k in EDGE_KINDS:
        parts = [(f.edges[k], o) for f, o in zip(items, offsets) if k in f.edges]
        if parts:
            edges[k] = (
                torch.cat([e[0] + o for e, o in parts]),
                torch.cat([e[1] + o for e, o in parts]),
                torch.cat([e[2] for e, _ in parts]),
            )
    return FeatureAssignment(
        n_nodes=sum(f.n_nodes for f in items),
        node_kinds=[k for f in items for k in f.node_kinds],
        atom_idx=cat_idx("atom_idx"),
        atom_x=cat_x("atom_x"),
        prop_idx=cat_idx("prop_idx"),
        prop_x=cat_x("prop_x"),
        moiety_idx=cat_idx("moiety_idx"),
        moiety_x=cat_x("moiety_x"),
        edges=edges,
        graph_index=torch.cat([f.graph_index + g for f, g in zip(items, goff)]),
        n_graphs=sum(f.n_graphs for f in items),
    )


# -- encoder ----------------------------------------------------------------


@dataclass
class EncoderConfig:
    kinds: tuple[str, ...] = ELEMENT_KINDS
    hidden: int = 64
    layers: int = 3
    prop_dim: int = 16
    rel_dim: int = 16
    moiety_vocab: tuple[str, ...] = ()

    def edge_dim(self, kind: str) -> int:
        return {"a": len(BOND_VOCAB), "p": self.rel_dim, "m": len(MOIETY_EDGE_KINDS), "am": 1, "ma": 1}[kind]

    def to_dict(self) -> dict:
        return {
            "kinds": list(self.kinds),
            "hidden": self.hidden,
            "layers": self.layers,
            "prop_dim": self.prop_dim,
            "rel_dim": self.rel_dim,
            "moiety_vocab": list(self.moiety_vocab),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(
            tuple(d["kinds"]), int(d["hidden"]), int(d["layers"]), int(d["prop_dim"]), int(d["rel_dim"]),
            tuple(d["moiety_vocab"]),
        )


def init_encoder_params(cfg: EncoderConfig, gen: torch.Generator, prefix: str = "") -> ParamStore:
    """Xavier-uniform weights, zero biases; names namespaced per block."""
    for k in cfg.kinds:
        if k not in EDGE_KINDS:
            raise ValueError(f"unknown edge kind {k!r}")
    d = cfg.hidden
    s = ParamStore()
    s.xavier(f"{prefix}in.atom.W", ATOM_FEATURE_DIM, d, gen)
    s.zeros(f"{prefix}in.atom.b", 1, d)
    if "p" in cfg.kinds:
        s.xavier(f"{prefix}in.property.W", cfg.prop_dim, d, gen)
        s.zeros(f"{prefix}in.property.b", 1, d)
    if {"m", "am", "ma"} & set(cfg.kinds):
        s.xavier(f"{prefix}in.moiety.W", max(1, len(cfg.moiety_vocab)), d, gen)
        s.zeros(f"{prefix}in.moiety.b", 1, d)
    for k in cfg.kinds:
        s.xavier(f"{prefix}msg.{k}.W", d + cfg.edge_dim(k), d, gen)
        s.xavier(f"{prefix}msg.{k}.att", 2 * d, 1, gen)
    s.xavier(f"{prefix}gru.W_i", d, 3 * d, gen)
    s.xavier(f"{prefix}gru.W_h", d, 3 * d, gen)
    s.zeros(f"{prefix}gru.b_i", 1, 3 * d)
    s.zeros(f"{prefix}gru.b_h", 1, 3 * d)
    s.xavier(f"{prefix}readout.W", d, d, gen)
    s.zeros(f"{prefix}readout.b", 1, d)
    return s


@dataclass
class EncoderParams:
    cfg: EncoderConfig
    store: ParamStore
    prefix: str = ""

    @classmethod
    def create(cls, cfg: EncoderConfig, gen: torch.Generator | int = 0, prefix: str = "") -> "EncoderParams":
        if isinstance(gen, int):
            gen = torch.Generator().manual_seed(gen)
        return cls(cfg, init_encoder_params(cfg, gen, prefix), prefix)

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.store[self.prefix + name]


def gru_update(x: torch.Tensor, h: torch.Tensor, p: EncoderParams) -> torch.Tensor:
    d = h.shape[1]
    gi = x @ p["gru.W_i"] + p["gru.b_i"]
    gh = h @ p["gru.W_h"] + p["gru.b_h"]
    r = torch.sigmoid(gi[:, :d] + gh[:, :d])
    z = torch.sigmoid(gi[:, d : 2 * d] + gh[:, d : 2 * d])
    n = torch.tanh(gi[:, 2 * d :] + r * gh[:, 2 * d :])
    return (1 - z) * n + z * h


@dataclass
class ForwardResult:
    graph_vectors: torch.Tensor
    node_states: torch.Tensor
    attention: torch.Tensor = field(repr=False)
    attention_dst: torch.Tensor = field(repr=False)


def readout(
    node_states: torch.Tensor,
    node_kinds: Sequence[str],
    W: torch.Tensor,
    b: torch.Tensor | None = None,
    graph_index: torch.Tensor | None = None,
    n_graphs: int = 1,
) -> torch.Tensor:
    """Mean of atom-node states per graph, then a linear projection."""
    atom_mask = torch.tensor([k == "atom" for k in node_kinds], dtype=torch.bool)
    if graph_index is None:
        graph_index = torch.zeros(len(node_kinds), dtype=torch.long)
    gi = graph_index[atom_mask]
    counts = torch.bincount(gi, minlength=n_graphs)
    if (counts == 0).any():
        raise ValueError("readout over a graph with no atom nodes")
    sums = torch.zeros(n_graphs, node_states.shape[1], dtype=DTYPE).index_add(0, gi, node_states[atom_mask])
    mean = sums / counts.to(DTYPE).unsqueeze(1)
    return dense_forward(mean, W, b)


def kmpnn_forward(feats: FeatureAssignment, params: EncoderParams) -> ForwardResult:
    """L rounds of typed attention message passing, then atom-mean readout."""
    cfg = params.cfg
    missing = [k for k in feats.edges if k not in cfg.kinds]
    if missing:
        raise MissingBlockError(f"no message block for edge kind(s) {missing}")
    d, N = cfg.hidden, feats.n_nodes

    h = torch.zeros(N, d, dtype=DTYPE)
    if len(feats.atom_idx):
        h = h.index_copy(0, feats.atom_idx, dense_forward(feats.atom_x, params["in.atom.W"], params["in.atom.b"]))
    if len(feats.prop_idx):
        if "p" not in cfg.kinds:
            raise MissingBlockError("property nodes present but encoder has no property block")
        if feats.prop_x.shape[1] != cfg.prop_dim:
            raise ValueError(f"property features have dim {feats.prop_x.shape[1]}, encoder expects {cfg.prop_dim}")
        h = h.index_copy(0, feats.prop_idx, dense_forward(feats.prop_x, params["in.property.W"], params["in.property.b"]))
    if len(feats.moiety_idx):
        if params.prefix + "in.moiety.W" not in params.store:
            raise MissingBlockError("moiety nodes present but encoder has no moiety block")
        h = h.index_copy(0, feats.moiety_idx, dense_forward(feats.moiety_x, params["in.moiety.W"], params["in.moiety.b"]))

    kinds = [k for k in EDGE_KINDS if k in feats.edges]
    dst_all = torch.cat([feats.edges[k][1] for k in kinds]) if kinds else torch.zeros(0, dtype=torch.long)
    indeg = torch.bincount(dst_all, minlength=N)
    is_atom = torch.tensor([k == "atom" for k in feats.node_kinds], dtype=torch.bool)
    update = (is_atom | (indeg > 0)).unsqueeze(1)

    alpha = torch.zeros(0, dtype=DTYPE)
    for _ in range(cfg.layers):
        if kinds:
            msgs, scores = [], []
            for k in kinds:
                src, dst, x = feats.edges[k]
                m = torch.cat([h[src], x], dim=1) @ params[f"msg.{k}.W"]
                s = F.leaky_relu(torch.cat([h[dst], m], dim=1) @ params[f"msg.{k}.att"], LEAKY_SLOPE).squeeze(1)
                msgs.append(m)
                scores.append(s)
            M, S = torch.cat(msgs), torch.cat(scores)
            smax = torch.full((N,), -torch.inf, dtype=DTYPE).scatter_reduce(0, dst_all, S.detach(), "amax")
            w = torch.exp(S - smax[dst_all])
            denom = torch.zeros(N, dtype=DTYPE).index_add(0, dst_all, w)
            alpha = w / denom[dst_all]
            agg = torch.zeros(N, d, dtype=DTYPE).index_add(0, dst_all, alpha.unsqueeze(1) * M)
        else:
            agg = torch.zeros(N, d, dtype=DTYPE)
        h = torch.where(update, gru_update(agg, h, params), h)
        check_finite(h, "kmpnn_forward[update]")

    gv = readout(h, feats.node_kinds, params["readout.W"], params["readout.b"], feats.graph_index, feats.n_graphs)
    return ForwardResult(gv, h, alpha, dst_all)


def plain_config(cfg: EncoderConfig) -> EncoderConfig:
    return replace(cfg, kinds=PLAIN_KINDS, moiety_vocab=())


def original_features(g: MolecularGraph) -> FeatureAssignment:
    return init_node_features(from_molecular_graph(g))


def encode_original(g: MolecularGraph, params: EncoderParams) -> torch.Tensor:
    """Graph vector of the un-augmented molecule from the bond-only encoder."""
    if tuple(params.cfg.kinds) != PLAIN_KINDS:
        raise ValueError("the original-graph encoder must use bond messages only")
    return kmpnn_forward(original_features(g), params).graph_vectors[0]
