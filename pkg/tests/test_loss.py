import itertools

import numpy as np
import pytest

from gradcheck import max_relative_error, random_instance
from depthflow.surrogate import hybrid_loss, token_weight_vector
from depthflow.trajectory import TokenRole


@pytest.mark.parametrize("family,scaled,lam",
                         list(itertools.product(["affine", "gated-mlp"], [False, True], [0.0, 0.5, 1.0])))
def test_gradients_match_finite_differences(family, scaled, lam):
    model, a, w = random_instance(family, scaled, seed=17)
    assert max_relative_error(model, a, lam, w) <= 1e-5


def test_lambda_one_is_teacher_forcing_only():
    model, a, w = random_instance("gated-mlp", True, seed=2)
    full = hybrid_loss(model, a, 1.0, w)
    # perturbing the model changes AR predictions but TF targets come from a; the
    # gradient must equal the sum of independent one-step TF gradients
    ref = [b.zero_grads() for b in model.blocks]
    n = a.shape[0]
    for layer in range(1, model.depth + 1):
        blk, step = model.layer_map(layer)
        j = model.blocks.index(blk)
        out, cache = blk.forward_cache(a[:, layer - 1], step)
        g = blk.backward(cache, (2.0 / n) * w[:, None] * (out - a[:, layer]))[1]
        for k, v in g.items():
            ref[j][k] += v
    for got, exp in zip(full.grads, ref):
        for k in exp:
            assert np.allclose(got[k], exp[k], rtol=1e-12, atol=1e-14)
    assert full.loss == full.tf


def test_lambda_zero_is_autoregressive():
    model, a, w = random_instance("affine", False, seed=3)
    res = hybrid_loss(model, a, 0.0, w)
    pred = model.rollout(a[:, 0])
    ar = sum(float((w[:, None] * (pred[:, l] - a[:, l + 1]) ** 2).sum()) for l in range(model.depth)) / a.shape[0]
    assert abs(res.loss - ar) < 1e-12 and abs(res.ar - ar) < 1e-12
    assert np.allclose(res.ar_layer.sum(), ar)


def test_token_weight_degeneracy():
    model, a, _ = random_instance("gated-mlp", False, seed=5, tokens=4)
    roles = [TokenRole.CLS, TokenRole.REGISTER, TokenRole.PATCH, TokenRole.PATCH]
    w = token_weight_vector(roles, (1.0, 0.0, 0.0))
    base = hybrid_loss(model, a, 0.5, w)
    b = a.copy()
    b[:, 1:, 1:] += np.random.default_rng(0).standard_normal(b[:, 1:, 1:].shape)
    moved = hybrid_loss(model, b, 0.5, w)
    assert moved.loss == base.loss
    for g0, g1 in zip(base.grads, moved.grads):
        for k in g0:
            assert np.array_equal(g0[k], g1[k])


def test_weight_decay_on_matrices_only():
    model, a, w = random_instance("affine", True, seed=6)
    plain = hybrid_loss(model, a, 0.5, w)
    reg = hybrid_loss(model, a, 0.5, w, weight_decay=0.1)
    expected = sum(0.05 * float((b.params["weight"] ** 2).sum()) for b in model.blocks)
    assert abs(reg.reg - expected) < 1e-12
    for j, b in enumerate(model.blocks):
        assert np.allclose(reg.grads[j]["weight"] - plain.grads[j]["weight"], 0.1 * b.params["weight"])
        assert np.array_equal(reg.grads[j]["bias"], plain.grads[j]["bias"])
        assert np.array_equal(reg.grads[j]["depth_scale"], plain.grads[j]["depth_scale"])


def test_segment_range_only_touches_active_block():
    model, a, w = random_instance("affine", False, seed=8)
    res = hybrid_loss(model, a, 0.5, w, start=0, end=2, weight_decay=0.1)
    assert all(np.all(g == 0) for g in res.grads[1].values())
    assert len(res.ar_layer) == 2


def test_contract_errors():
    model, a, w = random_instance("affine", False, seed=1)
    with pytest.raises(ValueError):
        hybrid_loss(model, a, 1.5, w)
    with pytest.raises(ValueError):
        hybrid_loss(model, a[..., :2], 0.5, w)
    with pytest.raises(ValueError):
        hybrid_loss(model, a, 0.5, w[:2])
