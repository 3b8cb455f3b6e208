"""Exemplar-based contrastive pretraining on (original, augmented) pairs and frozen linear probing."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .augment import augment
from .chemgraph import MolecularGraph
from .encoder import (
    EncoderConfig,
    EncoderParams,
    FeatureConfig,
    batch_features,
    init_node_features,
    kinds_for_mode,
    kmpnn_forward,
    original_features,
    plain_config,
)
from .kge import EmbeddingTable
from .kgstore import KnowledgeGraph
from .moiety import MoietyPattern, moiety_vocabulary
from .nncore import DTYPE, ParamStore, adam_step, check_finite, dense_forward, save_checkpoint


@dataclass
class SslConfig:
    temperature: float = 0.5
    batch_size: int = 8
    projection_dim: int = 64
    epochs: int = 30
    learning_rate: float = 1e-3
    seed: int = 0
    mode: str = "element_kg"
    hidden: int = 64
    layers: int = 3
    dup_properties: bool = False

    def __post_init__(self):
        self.mode = self.mode.replace("-", "_")

    def validate(self) -> None:
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.projection_dim < 1 or self.hidden < 1 or self.layers < 0:
            raise ValueError("dimensions must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.mode not in ("element_kg", "fg_kg", "both"):
            raise ValueError(f"unknown augmentation mode {self.mode!r}")


@dataclass
class AugmentationContext:
    kg: KnowledgeGraph | None = None
    lib: Sequence[MoietyPattern] | None = None
    emb: EmbeddingTable | None = None
    feature_seed: int = 0
    random_dim: int = 16


# -- projection and loss ------------------------------------------------------


def init_head(in_dim: int, out_dim: int, gen: torch.Generator | None = None, identity: bool = False) -> ParamStore:
    """Two-layer projection head (linear, relu, linear)."""
    s = ParamStore()
    if identity:
        if in_dim != out_dim:
            raise ValueError("identity head needs in_dim == out_dim")
        s.add("head.W1", torch.eye(in_dim, dtype=DTYPE))
        s.add("head.W2", torch.eye(in_dim, dtype=DTYPE))
    else:
        gen = gen or torch.Generator().manual_seed(0)
        s.xavier("head.W1", in_dim, in_dim, gen)
        s.xavier("head.W2", in_dim, out_dim, gen)
    s.zeros("head.b1", 1, in_dim)
    s.zeros("head.b2", 1, out_dim)
    return s


def project(graph_vectors: torch.Tensor, head: ParamStore) -> torch.Tensor:
    """Projection onto the unit sphere; rows of norm zero are an error."""
    x = graph_vectors.reshape(-1, graph_vectors.shape[-1])
    hidden = dense_forward(x, head["head.W1"], head["head.b1"], "relu")
    z = dense_forward(hidden, head["head.W2"], head["head.b2"])
    norms = z.norm(dim=1, keepdim=True)
    if (norms == 0).any():
        raise ValueError("projection produced a zero vector; cannot normalise")
    return z / norms


@dataclass
class ContrastiveBatch:
    z: torch.Tensor
    pair: torch.Tensor

    def __post_init__(self):
        n = self.z.shape[0]
        pair = torch.as_tensor(self.pair, dtype=torch.long)
        if n < 4 or n % 2:
            raise ValueError("a contrastive batch needs 2N >= 4 views")
        if pair.shape != (n,) or not torch.equal(pair[pair], torch.arange(n)) or (pair == torch.arange(n)).any():
            raise ValueError("pairing must be a perfect matching without fixed points")
        self.pair = pair
        check_finite(self.z.detach(), "ContrastiveBatch")

    @classmethod
    def from_views(cls, originals: torch.Tensor, augmented: torch.Tensor) -> "ContrastiveBatch":
        n = originals.shape[0]
        pair = torch.cat([torch.arange(n, 2 * n), torch.arange(n)])
        return cls(torch.cat([originals, augmented]), pair)


def ntxent(z: torch.Tensor, pair: torch.Tensor, temperature: float) -> torch.Tensor:
    """Differentiable NT-Xent with cosine similarity, mean over all 2N anchors."""
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    zn = F.normalize(z, dim=1)
    logits = zn @ zn.T / temperature
    n = z.shape[0]
    logits = logits.masked_fill(torch.eye(n, dtype=torch.bool), -math.inf)
    logp = logits - torch.logsumexp(logits, dim=1, keepdim=True)
    return -logp[torch.arange(n), pair].mean()


def ntxent_loss(batch: ContrastiveBatch, temperature: float) -> tuple[float, torch.Tensor]:
    """Loss value and its gradient with respect to ``batch.z``."""
    z = batch.z.detach().clone().requires_grad_(True)
    loss = ntxent(z, batch.pair, temperature)
    loss.backward()
    return loss.item(), z.grad.detach()


# -- pretraining ----------------------------------------------------------------


@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    wall_ms: float


class PretrainResult(NamedTuple):
    plain: EncoderParams
    kmpnn: EncoderParams
    head: ParamStore
    log: list[EpochLog]


def build_encoders(cfg: SslConfig, ctx: AugmentationContext) -> tuple[EncoderParams, EncoderParams, ParamStore, FeatureConfig]:
    vocab = moiety_vocabulary(ctx.lib) if ctx.lib is not None else ()
    fcfg = FeatureConfig(random_dim=ctx.random_dim, seed=ctx.feature_seed, moiety_vocab=vocab)
    ecfg = EncoderConfig(
        kinds=kinds_for_mode(cfg.mode),
        hidden=cfg.hidden,
        layers=cfg.layers,
        prop_dim=fcfg.property_dim(ctx.emb),
        rel_dim=fcfg.relation_dim(ctx.emb),
        moiety_vocab=vocab,
    )
    gen = torch.Generator().manual_seed(cfg.seed)
    plain = EncoderParams.create(plain_config(ecfg), gen, prefix="plain.")
    kmpnn = EncoderParams.create(ecfg, gen, prefix="kmpnn.")
    head = init_head(cfg.hidden, cfg.projection_dim, gen)
    return plain, kmpnn, head, fcfg


def augmented_features(g: MolecularGraph, cfg: SslConfig, ctx: AugmentationContext, fcfg: FeatureConfig):
    hg = augment(g, cfg.mode, kg=ctx.kg, lib=ctx.lib, dup_properties=cfg.dup_properties)
    return init_node_features(hg, ctx.emb, fcfg)


def _batches(order: np.ndarray, size: int) -> list[np.ndarray]:
    chunks = [order[i : i + size] for i in range(0, len(order), size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def pretrain(dataset: Sequence[MolecularGraph], ctx: AugmentationContext, cfg: SslConfig) -> PretrainResult:
    """Train both encoders and the shared head to agree on each molecule's two views."""
    cfg.validate()
    if len(dataset) < 2:
        raise ValueError("pretraining needs at least 2 molecules")
    if cfg.batch_size > len(dataset):
        raise ValueError(f"batch_size {cfg.batch_size} exceeds dataset size {len(dataset)}")
    if cfg.mode in ("element_kg", "both") and ctx.kg is None:
        raise ValueError("element-KG mode needs a knowledge graph")
    if cfg.mode in ("fg_kg", "both") and ctx.lib is None:
        raise ValueError("FG-KG mode needs a pattern library")

    plain, kmpnn, head, fcfg = build_encoders(cfg, ctx)
    orig = [original_features(g) for g in dataset]
    aug = [augmented_features(g, cfg, ctx, fcfg) for g in dataset]
    rng = np.random.default_rng(cfg.seed)
    stores = (plain.store, kmpnn.store, head)

    log = []
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        losses = []
        for idx in _batches(rng.permutation(len(dataset)), cfg.batch_size):
            gv_o = kmpnn_forward(batch_features([orig[i] for i in idx]), plain).graph_vectors
            gv_a = kmpnn_forward(batch_features([aug[i] for i in idx]), kmpnn).graph_vectors
            batch = ContrastiveBatch.from_views(project(gv_o, head), project(gv_a, head))
            loss = ntxent(batch.z, batch.pair, cfg.temperature)
            for s in stores:
                s.zero_grad()
            loss.backward()
            for s in stores:
                adam_step(s, lr=cfg.learning_rate)
            losses.append(loss.item())
        log.append(EpochLog(epoch, float(np.mean(losses)), (time.perf_counter() - t0) * 1000.0))
    return PretrainResult(plain, kmpnn, head, log)


def log_to_csv(log: Sequence[EpochLog]) -> str:
    rows = ["epoch,mean_loss,wall_ms"]
    rows += [f"{e.epoch},{e.mean_loss!r},{e.wall_ms:.1f}" for e in log]
    return "\n".join(rows) + "\n"


def pretrain_checkpoint(result: PretrainResult, cfg: SslConfig) -> str:
    """Serialise all pretrained parameters plus the configs needed to rebuild the encoders."""
    store = ParamStore()
    for part in (result.plain.store, result.kmpnn.store, result.head):
        for name, p in part.items():
            store.add(name, p.detach())
    return save_checkpoint(
        store,
        ssl=asdict(cfg),
        plain_encoder=result.plain.cfg.to_dict(),
        kmpnn_encoder=result.kmpnn.cfg.to_dict(),
        checksum=result.plain.store.checksum(),
    )


# -- linear probe -------------------------------------------------------------------


@dataclass
class ProbeMetrics:
    accuracy: float
    per_class: dict[str, float]
    n_train: int
    n_test: int
    checksum_before: str = ""
    checksum_after: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def stratified_split(labels: Sequence[str], test_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in sorted(set(labels)):
        idx = [i for i, y in enumerate(labels) if y == c]
        idx = [idx[k] for k in rng.permutation(len(idx))]
        n_test = min(len(idx) - 1, max(1, round(test_fraction * len(idx))))
        test += idx[:n_test]
        train += idx[n_test:]
    return sorted(train), sorted(test)


def fit_linear_probe(
    X: np.ndarray | torch.Tensor,
    labels: Sequence[str],
    seed: int = 0,
    test_fraction: float = 0.2,
    steps: int = 500,
    lr: float = 0.05,
    weight_decay: float = 1e-4,
) -> ProbeMetrics:
    """Softmax-regression head on fixed features; accuracy on a seeded stratified split."""
    labels = [str(y) for y in labels]
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ValueError("linear probe needs at least two classes")
    X = torch.as_tensor(np.asarray(X, dtype=np.float64))
    y = torch.tensor([classes.index(c) for c in labels])
    tr, te = stratified_split(labels, test_fraction, seed)
    mu = X[tr].mean(0, keepdim=True)
    sd = X[tr].std(0, keepdim=True).clamp_min(1e-8)
    Xs = (X - mu) / sd

    store = ParamStore()
    W = store.zeros("probe.W", X.shape[1], len(classes))
    b = store.zeros("probe.b", 1, len(classes))
    for _ in range(steps):
        store.zero_grad()
        logits = Xs[tr] @ W + b
        loss = F.cross_entropy(logits, y[tr]) + weight_decay * (W * W).sum()
        loss.backward()
        adam_step(store, lr=lr)
    with torch.no_grad():
        pred = (Xs[te] @ W + b).argmax(1)
    correct = (pred == y[te]).numpy()
    per_class = {}
    for k, c in enumerate(classes):
        mask = (y[te] == k).numpy()
        per_class[c] = float(correct[mask].mean()) if mask.any() else float("nan")
    return ProbeMetrics(float(correct.mean()), per_class, len(tr), len(te))


def encode_dataset(graphs: Sequence[MolecularGraph], plain: EncoderParams) -> np.ndarray:
    with torch.no_grad():
        feats = batch_features([original_features(g) for g in graphs])
        return kmpnn_forward(feats, plain).graph_vectors.numpy().copy()


def linear_probe(
    plain: EncoderParams, graphs: Sequence[MolecularGraph], labels: Sequence[str], seed: int = 0, **kwargs
) -> ProbeMetrics:
    """Fit a fresh linear head on frozen plain-encoder vectors of ``graphs``."""
    if len(set(labels)) < 2:
        raise ValueError("linear probe needs at least two classes")
    before = plain.store.checksum()
    X = encode_dataset(graphs, plain)
    metrics = fit_linear_probe(X, labels, seed=seed, **kwargs)
    after = plain.store.checksum()
    if before != after:
        raise RuntimeError("encoder parameters changed during probing")
    metrics.checksum_before, metrics.checksum_after = before, after
    return metrics
