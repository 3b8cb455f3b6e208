"""Knowledge-guided molecular graph augmentation and contrastive pretraining."""

__version__ = "0.1.0"

from .augment import HeteroGraph, augment
from .chemgraph import MolecularGraph, SmilesError, graph_signature, parse_smiles
from .encoder import EncoderConfig, EncoderParams, kmpnn_forward
from .kge import EmbeddingTable, KgeConfig, evaluate_link_prediction, train_embeddings
from .kgstore import KnowledgeGraph, KnowledgeTriple, load_sample_kg, load_triples, validate_element_kg
from .moiety import detect_moieties, load_pattern_library
from .ssl import SslConfig, linear_probe, ntxent_loss, pretrain

__all__ = [
    "EmbeddingTable",
    "EncoderConfig",
    "EncoderParams",
    "HeteroGraph",
    "KgeConfig",
    "KnowledgeGraph",
    "KnowledgeTriple",
    "MolecularGraph",
    "SmilesError",
    "SslConfig",
    "augment",
    "detect_moieties",
    "evaluate_link_prediction",
    "graph_signature",
    "kmpnn_forward",
    "linear_probe",
    "load_pattern_library",
    "load_sample_kg",
    "load_triples",
    "ntxent_loss",
    "parse_smiles",
    "pretrain",
    "train_embeddings",
    "validate_element_kg",
]
