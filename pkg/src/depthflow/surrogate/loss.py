"""Hybrid teacher-forcing / autoregressive objective with analytic gradients.

For every layer l in (start, end]:

    tf_l = dist(B(a_{l-1}),  a_l)       ground-truth input
    ar_l = dist(B(ah_{l-1}), a_l)       own previous prediction, ah_start = a_start
    loss = sum_l lam * tf_l + (1 - lam) * ar_l + 0.5 * wd * sum |W|^2

dist is the token-weighted squared Frobenius norm averaged over samples. The
AR gradient is backpropagated through the whole chain of predictions.
"""
from dataclasses import dataclass, field

import numpy as np

from ..trajectory import TokenRole


def token_weight_vector(roles, weights):
    """Per-token weights from (cls, register, patch) role weights."""
    lookup = {TokenRole.CLS: weights[0], TokenRole.REGISTER: weights[1], TokenRole.PATCH: weights[2]}
    return np.array([lookup[TokenRole.parse(r)] for r in roles], dtype=np.float64)


@dataclass
class LossResult:
    loss: float
    tf: float
    ar: float
    reg: float
    grads: list                       # per block: {name: array}
    ar_layer: np.ndarray = field(default=None)  # unweighted-by-lambda AR term per layer


def hybrid_loss(model, a_gt, lam, token_w, start=0, end=None, weight_decay=0.0):
    """Loss and gradients for layers start+1..end of ``a_gt`` (samples, L+1, tokens, dim)."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    a_gt = np.asarray(a_gt, dtype=np.float64)
    end = model.depth if end is None else end
    if a_gt.ndim != 4 or a_gt.shape[1] < end + 1 or a_gt.shape[-1] != model.dim:
        raise ValueError(f"teacher shape {a_gt.shape} does not fit model (dim {model.dim}, depth {end})")
    w = np.asarray(token_w, dtype=np.float64)[:, None]
    if w.shape[0] != a_gt.shape[2]:
        raise ValueError("token weight vector length must equal the token count")
    n = a_gt.shape[0]
    grads = [b.zero_grads() for b in model.blocks]
    active = set()

    def add(j, g):
        for k, v in g.items():
            grads[j][k] += v

    tf_total = ar_total = 0.0
    ar_layer = []
    ar_cache = []
    x_ar = a_gt[:, start]
    for layer in range(start + 1, end + 1):
        j, step = model.partition.segment_of(layer)
        blk = model.blocks[j]
        active.add(j)
        target = a_gt[:, layer]
        out_ar, c_ar = blk.forward_cache(x_ar, step)
        r_ar = out_ar - target
        l_ar = float((w * r_ar * r_ar).sum()) / n
        ar_total += l_ar
        ar_layer.append(l_ar)
        ar_cache.append((j, c_ar, r_ar))
        if lam > 0.0:
            out_tf, c_tf = blk.forward_cache(a_gt[:, layer - 1], step)
            r_tf = out_tf - target
            tf_total += float((w * r_tf * r_tf).sum()) / n
            add(j, blk.backward(c_tf, (2.0 * lam / n) * w * r_tf)[1])
        else:
            out_tf = blk.forward(a_gt[:, layer - 1], step)
            r_tf = out_tf - target
            tf_total += float((w * r_tf * r_tf).sum()) / n
        x_ar = out_ar

    if lam < 1.0:
        g_state = np.zeros_like(x_ar)
        for j, cache, r in reversed(ar_cache):
            g_out = g_state + (2.0 * (1.0 - lam) / n) * w * r
            g_state, g = model.blocks[j].backward(cache, g_out)
            add(j, g)

    reg = 0.0
    if weight_decay:
        for j in sorted(active):
            blk = model.blocks[j]
            for name in blk.weight_names():
                p = blk.params[name]
                reg += 0.5 * weight_decay * float((p * p).sum())
                grads[j][name] += weight_decay * p
    loss = lam * tf_total + (1.0 - lam) * ar_total + reg
    return LossResult(loss, tf_total, ar_total, reg, grads, np.array(ar_layer))
