"""Dense layers, named parameter storage, Adam and finite-difference gradient checks.

Tensors are 2-D ``torch.float64`` tensors; autograd provides analytic
gradients, which :func:`finite_diff_gradcheck` verifies independently.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np
import torch
import torch.nn.functional as F

DTYPE = torch.float64
LEAKY_SLOPE = 0.2


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared; ``op`` names the producing operation."""

    def __init__(self, op: str, detail: str = ""):
        self.op = op
        super().__init__(f"non-finite value produced by {op}" + (f": {detail}" if detail else ""))


def check_finite(t: torch.Tensor, op: str) -> torch.Tensor:
    if not torch.isfinite(t).all():
        raise NonFiniteError(op)
    return t


ACTIVATIONS: dict[str, Callable[[torch.Tensor], torch.Tensor]] = {
    "identity": lambda x: x,
    "relu": torch.relu,
    "leaky_relu": lambda x: F.leaky_relu(x, LEAKY_SLOPE),
    "tanh": torch.tanh,
}


def dense_forward(x: torch.Tensor, W: torch.Tensor, b: torch.Tensor | None = None, act: str = "identity") -> torch.Tensor:
    """``act(x @ W + b)`` with shape checking."""
    if x.dim() != 2 or W.dim() != 2 or x.shape[1] != W.shape[0]:
        raise ValueError(f"shape mismatch: x {tuple(x.shape)} @ W {tuple(W.shape)}")
    out = x @ W
    if b is not None:
        if b.numel() != W.shape[1]:
            raise ValueError(f"shape mismatch: bias {tuple(b.shape)} for {W.shape[1]} outputs")
        out = out + b.reshape(1, -1)
    try:
        fn = ACTIVATIONS[act]
    except KeyError:
        raise ValueError(f"unknown activation {act!r}") from None
    return check_finite(fn(out), f"dense_forward[{act}]")


class ParamStore:
    """Named 2-D parameters with gradient buffers and Adam moment state."""

    def __init__(self):
        self.params: dict[str, torch.Tensor] = {}
        self.m: dict[str, torch.Tensor] = {}
        self.v: dict[str, torch.Tensor] = {}
        self.step = 0

    def add(self, name: str, value) -> torch.Tensor:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already exists")
        t = torch.as_tensor(value, dtype=DTYPE).clone()
        if t.dim() != 2:
            raise ValueError(f"parameter {name!r} must be 2-D, got shape {tuple(t.shape)}")
        t.requires_grad_(True)
        self.params[name] = t
        self.m[name] = torch.zeros_like(t, requires_grad=False)
        self.v[name] = torch.zeros_like(t, requires_grad=False)
        return t

    def xavier(self, name: str, rows: int, cols: int, gen: torch.Generator) -> torch.Tensor:
        bound = math.sqrt(6.0 / (rows + cols))
        return self.add(name, (torch.rand(rows, cols, generator=gen, dtype=DTYPE) * 2 - 1) * bound)

    def zeros(self, name: str, rows: int, cols: int) -> torch.Tensor:
        return self.add(name, torch.zeros(rows, cols, dtype=DTYPE))

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def n_values(self) -> int:
        return sum(p.numel() for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grad(self, name: str) -> torch.Tensor:
        g = self.params[name].grad
        return torch.zeros_like(self.params[name]) if g is None else g

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            p = self.params[name].detach().contiguous()
            h.update(name.encode())
            h.update(str(tuple(p.shape)).encode())
            h.update(p.numpy().tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            name: {"shape": list(p.shape), "data": p.detach().reshape(-1).tolist()}
            for name, p in sorted(self.params.items())
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParamStore":
        store = cls()
        for name in sorted(d):
            shape = d[name]["shape"]
            data = d[name]["data"]
            if len(shape) != 2 or len(data) != shape[0] * shape[1]:
                raise ValueError(f"parameter {name!r}: data length does not match shape {shape}")
            t = torch.tensor(data, dtype=DTYPE).reshape(shape)
            check_finite(t, f"checkpoint load [{name}]")
            store.add(name, t)
        return store

    def subset(self, prefix: str) -> dict:
        return {k: v for k, v in self.to_dict().items() if k.startswith(prefix)}


def save_checkpoint(store: ParamStore, **extra) -> str:
    doc = {"version": 1, "params": store.to_dict()}
    doc.update(extra)
    return json.dumps(doc, sort_keys=True)


def load_checkpoint(text: str | bytes) -> tuple[ParamStore, dict]:
    doc = json.loads(text)
    if doc.get("version") != 1:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    extra = {k: v for k, v in doc.items() if k not in ("version", "params")}
    return ParamStore.from_dict(doc["params"]), extra


def adam_step(
    store: ParamStore, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
) -> ParamStore:
    """One bias-corrected Adam update of every parameter, in place."""
    for name, p in store.params.items():
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise NonFiniteError("adam_step", f"gradient of {name!r}")
    store.step += 1
    c1 = 1.0 - beta1**store.step
    c2 = 1.0 - beta2**store.step
    with torch.no_grad():
        for name, p in store.params.items():
            g = store.grad(name)
            m, v = store.m[name], store.v[name]
            m.mul_(beta1).add_(g, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
            p.sub_(lr * (m / c1) / ((v / c2).sqrt() + eps))
            check_finite(p, f"adam_step[{name}]")
    return store


@dataclass
class CheckReport:
    max_rel_error: float
    n_checked: int
    passed: bool
    worst: tuple[str, int] | None
    tol: float

    def __str__(self) -> str:
        state = "PASS" if self.passed else "FAIL"
        return f"gradcheck {state}: max rel err {self.max_rel_error:.3e} over {self.n_checked} coords (tol {self.tol:g})"


def finite_diff_gradcheck(
    f: Callable[[ParamStore], float],
    store: ParamStore,
    eps: float = 1e-6,
    tol: float = 1e-4,
    n_coords: int = 100,
    seed: int = 0,
    abs_floor: float = 1e-5,
) -> CheckReport:
    """Compare populated ``.grad`` buffers against central differences of ``f``.

    Checks ``n_coords`` randomly chosen coordinates (all of them if fewer
    exist). Relative error is ``|a - n| / max(|a|, |n|, abs_floor)`` so that
    vanishing gradients are compared on an absolute scale.
    """
    coords = [(name, i) for name, p in sorted(store.items()) for i in range(p.numel())]
    rng = np.random.default_rng(seed)
    if len(coords) > n_coords:
        pick = np.sort(rng.choice(len(coords), size=n_coords, replace=False))
        coords = [coords[k] for k in pick]
    worst, max_err = None, 0.0
    with torch.no_grad():
        for name, i in coords:
            flat = store[name].view(-1)
            orig = flat[i].item()
            flat[i] = orig + eps
            fp = float(f(store))
            flat[i] = orig - eps
            fm = float(f(store))
            flat[i] = orig
            numeric = (fp - fm) / (2 * eps)
            analytic = store.grad(name).reshape(-1)[i].item()
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), abs_floor)
            if worst is None or err > max_err:
                max_err, worst = err, (name, i)
    return CheckReport(max_err, len(coords), max_err < tol, worst, tol)
