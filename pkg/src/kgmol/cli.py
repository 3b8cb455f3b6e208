"""Batch command-line interface.

Exit status is 0 on success, 1 on bad input (including usage errors) and 2
when an internal invariant is violated. Diagnostics go to stderr; data goes
to the ``--out`` file or stdout.

Every option may also come from a ``--config`` file of ``key = value`` lines;
explicit flags win over the file, which wins over built-in defaults. The seed
falls back to the ``KGMOL_SEED`` environment variable, then to 0.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path
from typing import Callable, Sequence

import torch

from . import __version__
from .augment import augment, from_json, to_dot, to_json
from .chemgraph import MolecularGraph, graph_signature, parse_smiles, read_molecule_file
from .encoder import EncoderConfig, EncoderParams, plain_config
from .kge import EmbeddingTable, KgeConfig, evaluate_link_prediction, train_embeddings
from .kgstore import KnowledgeGraph, load_sample_kg, load_triples, validate_element_kg
from .moiety import detect_moieties, emit_fg_records, load_pattern_library
from .nncore import ParamStore, load_checkpoint
from .ssl import AugmentationContext, SslConfig, linear_probe, log_to_csv, pretrain, pretrain_checkpoint

DEFAULT_SEED = 0
SEED_ENV = "KGMOL_SEED"


class InputError(Exception):
    """Bad user input; maps to exit status 1."""


class InvariantError(Exception):
    """An internal consistency check failed; maps to exit status 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise InputError(f"{self.prog}: {message}")


# -- option tables ----------------------------------------------------------

# dest -> (flag help, type, default); defaults are resolved after config merge
_COMMON = {
    "config": ("key = value file merged under explicit flags", str, None),
    "seed": (f"random seed (fallback: ${SEED_ENV}, then {DEFAULT_SEED})", int, None),
    "jobs": ("worker processes for per-molecule work", int, 1),
    "out": ("output file (default: stdout)", str, None),
}

_SUBCOMMANDS: dict[str, dict] = {
    "parse": {
        "help": "parse molecules and print one graph JSON per line",
        "opts": {"molecules": ("molecule file: SMILES[<TAB>id[<TAB>label]]", str, None)},
    },
    "validate-kg": {
        "help": "check an element KG against the relation and element vocabularies",
        "opts": {"triples": ("head<TAB>relation<TAB>tail file (default: bundled sample)", str, None)},
    },
    "kge-train": {
        "help": "train KG embeddings and write a checkpoint",
        "opts": {
            "triples": ("triples file (default: bundled sample)", str, None),
            "model": ("TransE, RotatE or DistMult", str, "RotatE"),
            "dim": ("embedding dimension", int, 32),
            "steps": ("minibatch steps", int, 5000),
            "margin": ("ranking margin", float, 1.0),
            "learning_rate": ("SGD step size", float, 0.01),
            "batch_size": ("positives per step", int, 32),
            "negatives": ("negatives per positive", int, 1),
            "metrics": ("also write link-prediction metrics JSON here", str, None),
        },
    },
    "detect-moieties": {
        "help": "print functional group, ring and relation records",
        "opts": {
            "molecules": ("molecule file", str, None),
            "patterns": ("pattern library JSON (default: bundled)", str, None),
        },
    },
    "augment": {
        "help": "write one augmented graph JSON per molecule",
        "opts": {
            "molecules": ("molecule file", str, None),
            "mode": ("element-kg, fg-kg or both", str, "element-kg"),
            "triples": ("element KG file (default: bundled sample)", str, None),
            "patterns": ("pattern library JSON (default: bundled)", str, None),
            "dup_properties": ("one property node per atom instead of shared nodes", bool, False),
            "compose_augmentations": ("apply both element-KG and FG-KG augmentation", bool, False),
        },
    },
    "pretrain": {
        "help": "contrastive pretraining; writes a checkpoint and a CSV log",
        "opts": {
            "molecules": ("molecule file", str, None),
            "mode": ("element-kg, fg-kg or both", str, "element-kg"),
            "triples": ("element KG file (default: bundled sample)", str, None),
            "patterns": ("pattern library JSON (default: bundled)", str, None),
            "embeddings": ("KGE checkpoint for property/relation features", str, None),
            "epochs": ("training epochs", int, 30),
            "batch_size": ("molecules per batch", int, 8),
            "temperature": ("NT-Xent temperature", float, 0.5),
            "learning_rate": ("Adam step size", float, 1e-3),
            "projection_dim": ("projection head output size", int, 64),
            "hidden": ("encoder hidden size", int, 64),
            "layers": ("message-passing layers", int, 3),
            "log": ("CSV training log path", str, None),
            "dup_properties": ("one property node per atom instead of shared nodes", bool, False),
            "compose_augmentations": ("apply both element-KG and FG-KG augmentation", bool, False),
        },
    },
    "probe": {
        "help": "fit a linear probe on frozen encoder features; writes JSON metrics",
        "opts": {
            "checkpoint": ("checkpoint written by pretrain", str, None),
            "molecules": ("labelled molecule file: SMILES<TAB>id<TAB>label", str, None),
            "test_fraction": ("held-out fraction per class", float, 0.2),
        },
    },
    "export": {
        "help": "convert augmented graph JSON lines to Graphviz DOT",
        "opts": {"graphs": ("JSON-lines file written by augment", str, None)},
    },
}

_REQUIRED = {
    "parse": ("molecules",),
    "detect-moieties": ("molecules",),
    "augment": ("molecules",),
    "pretrain": ("molecules", "out"),
    "probe": ("checkpoint", "molecules"),
    "export": ("graphs",),
}


def _flag(dest: str) -> str:
    return "--" + dest.replace("_", "-")


def build_parser() -> _Parser:
    parser = _Parser(prog="kgmol", description="Knowledge-guided molecular graph toolkit.")
    parser.add_argument("--version", action="version", version=f"kgmol {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name, spec in _SUBCOMMANDS.items():
        p = sub.add_parser(name, help=spec["help"], description=spec["help"])
        for dest, (help_, typ, _) in {**spec["opts"], **_COMMON}.items():
            if typ is bool:
                p.add_argument(_flag(dest), dest=dest, action="store_true", default=None, help=help_)
            else:
                p.add_argument(_flag(dest), dest=dest, type=typ, default=None, help=help_)
    return parser


def read_config(path: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, values may be quoted."""
    out = {}
    text = _read_text(path)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
            value = value[1:-1]
        out[key.replace("-", "_")] = value
    return out


def _to_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def resolve_options(command: str, args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset options from the config file, the environment and defaults."""
    table = {**_SUBCOMMANDS[command]["opts"], **_COMMON}
    config = read_config(args.config) if args.config else {}
    unknown = sorted(set(config) - set(table) - {"config"})
    if unknown:
        raise InputError(f"unknown config keys for {command}: {', '.join(unknown)}")
    opts = vars(args)
    for dest, (_, typ, default) in table.items():
        if opts.get(dest) is not None:
            continue
        if dest in config:
            conv = _to_bool if typ is bool else typ
            try:
                opts[dest] = conv(config[dest])
            except ValueError as exc:
                raise InputError(f"config key {dest}: {exc}") from None
        elif dest == "seed" and os.environ.get(SEED_ENV, "").strip():
            try:
                opts[dest] = int(os.environ[SEED_ENV])
            except ValueError:
                raise InputError(f"{SEED_ENV} must be an integer") from None
        else:
            opts[dest] = default
    if opts["seed"] is None:
        opts["seed"] = DEFAULT_SEED
    if opts["jobs"] < 1:
        raise InputError("--jobs must be >= 1")
    for dest in _REQUIRED.get(command, ()):
        if opts.get(dest) is None:
            raise InputError(f"{command}: {_flag(dest)} is required")
    return args


# -- I/O helpers ---------------------------------------------------------------


def _read_bytes(path: str) -> bytes:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"no such file: {path}")
    return p.read_bytes()


def _read_text(path: str) -> str:
    return _read_bytes(path).decode("utf-8")


def _write(path: str | None, data: str | bytes) -> None:
    if isinstance(data, str):
        data = data.encode()
    if path is None or path == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        Path(path).write_bytes(data)


def _info(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_kg(path: str | None) -> KnowledgeGraph:
    return load_sample_kg() if path is None else load_triples(_read_bytes(path))


def _load_lib(path: str | None):
    return load_pattern_library(None if path is None else _read_text(path))


def _load_molecules(path: str):
    records = read_molecule_file(_read_text(path).splitlines())
    if not records:
        raise InputError(f"{path}: no molecules")
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise InputError(f"{path}: duplicate molecule ids")
    return records


def _parse_record(rec) -> MolecularGraph:
    return parse_smiles(rec.smiles, rec.id)


def _map(fn: Callable, items: Sequence, jobs: int) -> list:
    """Order-preserving map, in worker processes when ``jobs > 1``."""
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def _mode(args) -> str:
    mode = args.mode.replace("-", "_")
    if args.compose_augmentations:
        mode = "both"
    if mode not in ("element_kg", "fg_kg", "both"):
        raise InputError(f"unknown mode {args.mode!r}; expected element-kg, fg-kg or both")
    return mode


# -- subcommands -----------------------------------------------------------------


def _graph_record(rec, g: MolecularGraph) -> dict:
    return {
        "id": g.id,
        "smiles": rec.smiles,
        "label": rec.label,
        "atoms": [
            {"element": a.element, "aromatic": a.aromatic, "formal_charge": a.formal_charge, "implicit_h": a.implicit_h}
            for a in g.atoms
        ],
        "bonds": [[b.a, b.b, b.order] for b in g.bonds],
        "fragments": len(g.components()),
        "signature": graph_signature(g),
    }


def cmd_parse(args) -> int:
    records = _load_molecules(args.molecules)
    graphs = _map(_parse_record, records, args.jobs)
    lines = [json.dumps(_graph_record(r, g), sort_keys=True) for r, g in zip(records, graphs)]
    _write(args.out, "".join(l + "\n" for l in lines))
    return 0


def cmd_validate_kg(args) -> int:
    kg = _load_kg(args.triples)
    report = validate_element_kg(kg)
    _write(args.out, json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    for f in report.findings:
        _info(f)
    return 0 if report.valid else 1


def cmd_kge_train(args) -> int:
    kg = _load_kg(args.triples)
    cfg = KgeConfig(
        model=args.model,
        dim=args.dim,
        margin=args.margin,
        learning_rate=args.learning_rate,
        negatives_per_positive=args.negatives,
        steps=args.steps,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    emb = train_embeddings(kg, cfg)
    _write(args.out or "kge_checkpoint.json", emb.to_json())
    if args.metrics:
        metrics = evaluate_link_prediction(kg, emb)
        _write(args.metrics, json.dumps(metrics.to_dict(), sort_keys=True, indent=2) + "\n")
    _info(f"trained {cfg.model} dim={cfg.dim} on {len(kg)} triples; final loss {emb.losses[-1] if emb.losses else float('nan'):.4f}")
    return 0


def _detect_records(g: MolecularGraph, lib) -> list[str]:
    moieties, relations = detect_moieties(g, lib)
    return [str(r) for r in emit_fg_records(g.id, moieties, relations)]


def cmd_detect_moieties(args) -> int:
    lib = _load_lib(args.patterns)
    graphs = _map(_parse_record, _load_molecules(args.molecules), args.jobs)
    per_mol = _map(partial(_detect_records, lib=lib), graphs, args.jobs)
    _write(args.out, "".join(line + "\n" for lines in per_mol for line in lines))
    return 0


def _augment_one(g: MolecularGraph, mode: str, kg, lib, dup: bool) -> bytes:
    hg = augment(g, mode, kg=kg, lib=lib, dup_properties=dup)
    try:
        hg.check()
    except ValueError as exc:
        raise InvariantError(f"{g.id}: {exc}") from exc
    if hg.to_molecular_graph() != g:
        raise InvariantError(f"{g.id}: augmentation altered the molecular graph")
    return to_json(hg)


def cmd_augment(args) -> int:
    mode = _mode(args)
    kg = _load_kg(args.triples) if mode != "fg_kg" else None
    lib = _load_lib(args.patterns) if mode != "element_kg" else None
    graphs = _map(_parse_record, _load_molecules(args.molecules), args.jobs)
    work = partial(_augment_one, mode=mode, kg=kg, lib=lib, dup=bool(args.dup_properties))
    _write(args.out, b"".join(line + b"\n" for line in _map(work, graphs, args.jobs)))
    return 0


def cmd_pretrain(args) -> int:
    mode = _mode(args)
    graphs = _map(_parse_record, _load_molecules(args.molecules), args.jobs)
    ctx = AugmentationContext(
        kg=_load_kg(args.triples) if mode != "fg_kg" else None,
        lib=_load_lib(args.patterns),
        emb=EmbeddingTable.from_json(_read_bytes(args.embeddings)) if args.embeddings else None,
        feature_seed=args.seed,
    )
    cfg = SslConfig(
        temperature=args.temperature,
        batch_size=args.batch_size,
        projection_dim=args.projection_dim,
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        seed=args.seed,
        mode=mode,
        hidden=args.hidden,
        layers=args.layers,
        dup_properties=bool(args.dup_properties),
    )
    torch.manual_seed(args.seed)
    result = pretrain(graphs, ctx, cfg)
    _write(args.out, pretrain_checkpoint(result, cfg) + "\n")
    if args.log:
        _write(args.log, log_to_csv(result.log))
    last = result.log[-1].mean_loss if result.log else float("nan")
    _info(f"pretrained {cfg.epochs} epochs on {len(graphs)} molecules ({mode}); final loss {last:.4f}")
    return 0


def _load_plain_encoder(path: str) -> EncoderParams:
    try:
        store, extra = load_checkpoint(_read_bytes(path))
        cfg = EncoderConfig.from_dict(extra["plain_encoder"])
    except (KeyError, TypeError) as exc:
        raise InputError(f"{path}: not a pretrain checkpoint ({exc})") from None
    if cfg.kinds != plain_config(cfg).kinds:
        raise InputError(f"{path}: plain encoder config has message kinds {cfg.kinds}")
    sub = ParamStore()
    for name, p in store.items():
        if name.startswith("plain."):
            sub.add(name, p.detach())
    if not len(sub):
        raise InputError(f"{path}: checkpoint has no plain encoder parameters")
    params = EncoderParams(cfg, sub, "plain.")
    expected = extra.get("checksum")
    if expected and sub.checksum() != expected:
        raise InputError(f"{path}: parameter checksum mismatch")
    return params


def cmd_probe(args) -> int:
    plain = _load_plain_encoder(args.checkpoint)
    records = _load_molecules(args.molecules)
    if any(r.label is None for r in records):
        raise InputError(f"{args.molecules}: every molecule needs a label for probing")
    graphs = _map(_parse_record, records, args.jobs)
    metrics = linear_probe(plain, graphs, [r.label for r in records], seed=args.seed, test_fraction=args.test_fraction)
    _write(args.out, json.dumps(metrics.to_dict(), sort_keys=True, indent=2) + "\n")
    _info(f"probe accuracy {metrics.accuracy:.3f} on {metrics.n_test} held-out molecules")
    return 0


def cmd_export(args) -> int:
    lines = [l for l in _read_text(args.graphs).splitlines() if l.strip()]
    graphs = [from_json(l) for l in lines]
    _write(args.out, "".join(to_dot(hg) for hg in graphs))
    return 0


COMMANDS = {
    "parse": cmd_parse,
    "validate-kg": cmd_validate_kg,
    "kge-train": cmd_kge_train,
    "detect-moieties": cmd_detect_moieties,
    "augment": cmd_augment,
    "pretrain": cmd_pretrain,
    "probe": cmd_probe,
    "export": cmd_export,
}


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise InputError("a subcommand is required")
        resolve_options(args.command, args)
        return COMMANDS[args.command](args)
    except InputError as exc:
        _info(f"error: {exc}")
        return 1
    except (InvariantError, FloatingPointError, AssertionError, RuntimeError) as exc:
        _info(f"internal error: {type(exc).__name__}: {exc}")
        return 2
    except (ValueError, KeyError, OSError) as exc:
        _info(f"error: {exc}")
        return 1


def main(argv: Sequence[str] | None = None) -> int:
    try:
        return dispatch(argv)
    except SystemExit as exc:  # --help / --version
        return exc.code if isinstance(exc.code, int) else 0


if __name__ == "__main__":
    sys.exit(main())
