import json
import math

import numpy as np
import pytest
import torch

from kgmol.nncore import (
    DTYPE,
    NonFiniteError,
    ParamStore,
    adam_step,
    dense_forward,
    finite_diff_gradcheck,
    load_checkpoint,
    save_checkpoint,
)


def t(x):
    return torch.tensor(x, dtype=DTYPE)


def test_identity_and_zero_layers():
    x = t(np.random.default_rng(0).normal(size=(3, 4)))
    assert torch.equal(dense_forward(x, torch.eye(4, dtype=DTYPE), torch.zeros(4, dtype=DTYPE)), x)
    assert torch.equal(dense_forward(x, torch.zeros(4, 2, dtype=DTYPE), torch.zeros(2, dtype=DTYPE)), torch.zeros(3, 2, dtype=DTYPE))


@pytest.mark.parametrize("act", ["identity", "relu", "leaky_relu", "tanh"])
def test_dense_matches_triple_loop(act):
    rng = np.random.default_rng(1)
    x, W, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 5)), rng.normal(size=5)
    ref = np.zeros((3, 5))
    for i in range(3):
        for j in range(5):
            s = b[j]
            for k in range(4):
                s += x[i, k] * W[k, j]
            ref[i, j] = {
                "identity": s,
                "relu": max(s, 0.0),
                "leaky_relu": s if s > 0 else 0.2 * s,
                "tanh": math.tanh(s),
            }[act]
    out = dense_forward(t(x), t(W), t(b), act).numpy()
    assert np.allclose(out, ref, atol=1e-12)


def test_dense_errors():
    x = torch.zeros(2, 3, dtype=DTYPE)
    with pytest.raises(ValueError):
        dense_forward(x, torch.zeros(4, 2, dtype=DTYPE))
    with pytest.raises(ValueError):
        dense_forward(x, torch.zeros(3, 2, dtype=DTYPE), torch.zeros(3, dtype=DTYPE))
    with pytest.raises(ValueError):
        dense_forward(x, torch.zeros(3, 2, dtype=DTYPE), act="swish")
    with pytest.raises(NonFiniteError) as info:
        dense_forward(t([[math.inf, 0, 0]]), torch.ones(3, 2, dtype=DTYPE))
    assert "dense_forward" in str(info.value)


def quad_store(value=1.0, n=4):
    s = ParamStore()
    s.add("w", torch.full((1, n), value, dtype=DTYPE))
    return s


def test_adam_zero_gradient_leaves_params():
    s = quad_store()
    s["w"].grad = torch.zeros_like(s["w"])
    before = s["w"].detach().clone()
    adam_step(s)
    assert torch.equal(s["w"].detach(), before)


def test_adam_first_step_is_signed_lr():
    s = ParamStore()
    s.add("w", t([[0.5, -2.0, 3.0]]))
    g = t([[0.3, -7.0, 1e-3]])
    s["w"].grad = g.clone()
    before = s["w"].detach().clone()
    adam_step(s, lr=0.01)
    step = (s["w"].detach() - before).numpy()
    assert np.allclose(step, -0.01 * np.sign(g.numpy()), rtol=1e-4)


def test_adam_matches_reference_update():
    rng = np.random.default_rng(3)
    w = rng.normal(size=(2, 3))
    s = ParamStore()
    s.add("w", w)
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    for k in range(1, 6):
        g = rng.normal(size=w.shape)
        s["w"].grad = t(g)
        adam_step(s, lr=0.1)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 0.1 * (m / (1 - 0.9**k)) / (np.sqrt(v / (1 - 0.999**k)) + 1e-8)
    assert np.allclose(s["w"].detach().numpy(), w, atol=1e-12)


def test_adam_minimises_quadratic():
    s = quad_store(1.0)
    for _ in range(500):
        s.zero_grad()
        loss = (s["w"] ** 2).sum()
        loss.backward()
        adam_step(s, lr=0.01)
    assert s["w"].detach().norm() < 1e-2


def test_adam_rejects_non_finite_gradient():
    s = quad_store()
    s.add("b", torch.zeros(1, 2, dtype=DTYPE))
    s["b"].grad = t([[math.nan, 0.0]])
    with pytest.raises(NonFiniteError) as info:
        adam_step(s)
    assert "'b'" in str(info.value)


def test_gradcheck_examples():
    s = quad_store(0.0, 150)
    with torch.no_grad():
        s["w"].copy_(torch.linspace(-1, 1, 150, dtype=DTYPE).reshape(1, -1))
    f = lambda store: 0.5 * float((store["w"] ** 2).sum())
    s["w"].grad = s["w"].detach().clone()
    report = finite_diff_gradcheck(f, s, tol=1e-6)
    assert report.passed and report.n_checked == 100
    s["w"].grad = 2 * s["w"].detach().clone()
    bad = finite_diff_gradcheck(f, s, tol=1e-6)
    assert not bad.passed and bad.max_rel_error > 0.4 and bad.worst[0] == "w"


def test_store_bookkeeping_and_checksum():
    gen = torch.Generator().manual_seed(0)
    s = ParamStore()
    W = s.xavier("W", 4, 6, gen)
    s.zeros("b", 1, 6)
    assert len(s) == 2 and "W" in s and s.n_values() == 30
    assert float(W.detach().abs().max()) <= math.sqrt(6 / 10)
    with pytest.raises(KeyError):
        s.add("W", torch.zeros(1, 1))
    with pytest.raises(ValueError):
        s.add("v", torch.zeros(3))
    c = s.checksum()
    with torch.no_grad():
        s["b"][0, 0] = 1e-300
    assert s.checksum() != c
    assert s.m["W"].shape == s.v["W"].shape == W.shape


def test_checkpoint_round_trip():
    gen = torch.Generator().manual_seed(1)
    s = ParamStore()
    s.xavier("enc.W", 3, 2, gen)
    s.zeros("enc.b", 1, 2)
    text = save_checkpoint(s, note="x")
    doc = json.loads(text)
    assert doc["version"] == 1 and doc["params"]["enc.W"]["shape"] == [3, 2]
    back, extra = load_checkpoint(text)
    assert extra == {"note": "x"} and back.checksum() == s.checksum()
    doc["params"]["enc.W"]["data"] = doc["params"]["enc.W"]["data"][:-1]
    with pytest.raises(ValueError):
        load_checkpoint(json.dumps(doc))
    with pytest.raises(ValueError):
        load_checkpoint(json.dumps({"version": 2, "params": {}}))


def test_same_seed_same_values():
    a, b = ParamStore(), ParamStore()
    a.xavier("W", 5, 5, torch.Generator().manual_seed(9))
    b.xavier("W", 5, 5, torch.Generator().manual_seed(9))
    assert a.checksum() == b.checksum()
