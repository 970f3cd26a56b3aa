"""Differentiable token-wise blocks with hand-written backward passes.

Two families:

* ``affine``:    x -> W x + b
* ``gated-mlp``: x -> x + W2 tanh(W1 x + b1) + b2

Both are written as ``x + update(x)``. An optional depth-scale table holds one
vector per target step; row ``step`` multiplies the update elementwise, which
makes the block depend on the layer it is producing.
"""
import numpy as np

FAMILIES = ("affine", "gated-mlp")
PARAM_NAMES = {"affine": ("weight", "bias"), "gated-mlp": ("w1", "b1", "w2", "b2")}


class Block:
    def __init__(self, family, params, depth_scale=None):
        if family not in FAMILIES:
            raise ValueError(f"unknown block family {family!r}")
        missing = set(PARAM_NAMES[family]) - set(params)
        if missing:
            raise ValueError(f"{family} block missing parameters {sorted(missing)}")
        self.family = family
        self.params = {k: np.array(params[k], dtype=np.float64) for k in PARAM_NAMES[family]}
        self.depth_scale = None if depth_scale is None else np.array(depth_scale, dtype=np.float64)
        for name, arr in self.arrays().items():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in {name}")

    @property
    def dim(self):
        return self.params["bias" if self.family == "affine" else "b2"].shape[0]

    @property
    def hidden(self):
        return self.params["b1"].shape[0] if self.family == "gated-mlp" else 0

    def names(self):
        names = list(PARAM_NAMES[self.family])
        if self.depth_scale is not None:
            names.append("depth_scale")
        return names

    def arrays(self):
        out = dict(self.params)
        if self.depth_scale is not None:
            out["depth_scale"] = self.depth_scale
        return out

    def set_array(self, name, value):
        if name == "depth_scale":
            self.depth_scale = value
        else:
            self.params[name] = value

    def weight_names(self):
        """Parameters subject to weight decay (matrices only)."""
        return ("weight",) if self.family == "affine" else ("w1", "w2")

    def copy(self):
        return Block(self.family, {k: v.copy() for k, v in self.params.items()},
                     None if self.depth_scale is None else self.depth_scale.copy())

    def _scale(self, step):
        if self.depth_scale is None:
            return None
        return self.depth_scale[min(step, self.depth_scale.shape[0] - 1)]

    def forward(self, x, step=0):
        return self.forward_cache(x, step)[0]

    def forward_cache(self, x, step=0):
        p = self.params
        if self.family == "affine":
            pre = x @ p["weight"].T + p["bias"]
            update = pre - x
            hidden = None
        else:
            hidden = np.tanh(x @ p["w1"].T + p["b1"])
            update = hidden @ p["w2"].T + p["b2"]
        s = self._scale(step)
        out = x + update if s is None else x + s * update
        return out, (x, hidden, update, step)

    def backward(self, cache, g):
        """Return (dL/dx, {name: dL/dparam}) for upstream gradient ``g``."""
        x, hidden, update, step = cache
        s = self._scale(step)
        gu = g if s is None else s * g
        d = x.shape[-1]
        x2 = x.reshape(-1, d)
        gu2 = gu.reshape(-1, d)
        p = self.params
        grads = {}
        if self.family == "affine":
            grads["weight"] = gu2.T @ x2
            grads["bias"] = gu2.sum(axis=0)
            gx = g - gu + gu @ p["weight"]
        else:
            h2 = hidden.reshape(-1, hidden.shape[-1])
            grads["w2"] = gu2.T @ h2
            grads["b2"] = gu2.sum(axis=0)
            ga = (gu @ p["w2"]) * (1.0 - hidden * hidden)
            ga2 = ga.reshape(-1, ga.shape[-1])
            grads["w1"] = ga2.T @ x2
            grads["b1"] = ga2.sum(axis=0)
            gx = g + ga @ p["w1"]
        if self.depth_scale is not None:
            gs = np.zeros_like(self.depth_scale)
            gs[min(step, gs.shape[0] - 1)] = (g * update).reshape(-1, d).sum(axis=0)
            grads["depth_scale"] = gs
        return gx, grads

    def zero_grads(self):
        return {k: np.zeros_like(v) for k, v in self.arrays().items()}


def identity_block(family, dim, hidden=16, n_steps=None):
    if family == "affine":
        params = {"weight": np.eye(dim), "bias": np.zeros(dim)}
    else:
        params = {"w1": np.zeros((hidden, dim)), "b1": np.zeros(hidden),
                  "w2": np.zeros((dim, hidden)), "b2": np.zeros(dim)}
    scale = None if n_steps is None else np.ones((n_steps, dim))
    return Block(family, params, scale)


def _orthogonal(rng, dim):
    q, r = np.linalg.qr(rng.normal((dim, dim)))
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def random_block(family, dim, rng, radius=0.8, bias_scale=1.0, hidden=16, gain=1.0):
    """Random teacher block.

    ``affine``: W = radius * Q with Q a random orthogonal matrix, so every
    eigenvalue has modulus ``radius``; b ~ bias_scale * N(0, I).
    ``gated-mlp``: W1 ~ gain * N(0, 1/dim), W2 ~ radius * N(0, 1/hidden).
    """
    if family == "affine":
        return Block(family, {"weight": radius * _orthogonal(rng, dim),
                              "bias": bias_scale * rng.normal((dim,))})
    return Block(family, {
        "w1": gain * rng.normal((hidden, dim)) / np.sqrt(dim),
        "b1": 0.1 * rng.normal((hidden,)),
        "w2": radius * rng.normal((dim, hidden)) / np.sqrt(hidden),
        "b2": bias_scale * rng.normal((dim,)),
    })


def init_block(family, dim, rng, hidden=16, n_steps=None, init_scale=0.01):
    """Student initialization: the identity map plus a small seeded perturbation."""
    blk = identity_block(family, dim, hidden, n_steps)
    if family == "affine":
        blk.params["weight"] = blk.params["weight"] + init_scale * rng.normal((dim, dim))
    else:
        blk.params["w1"] = rng.normal((hidden, dim)) / np.sqrt(dim)
        blk.params["w2"] = init_scale * rng.normal((dim, hidden))
    return blk


def block_to_dict(b):
    out = {"family": b.family}
    for k, v in b.arrays().items():
        out[k] = v.tolist()
    return out


def block_from_dict(d, dim=None, hidden=16):
    family = d.get("family", "affine")
    if family == "identity":
        if dim is None:
            raise ValueError("identity block needs a dim")
        return identity_block("affine", dim)
    params = {k: d[k] for k in PARAM_NAMES[family]}
    return Block(family, params, d.get("depth_scale"))
