"""Interventions on layer stacks: perturbation sensitivity and layer swaps.

A layer stack is a list of (block, step) pairs, entry l-1 producing layer l.
:func:`layer_stack` builds one from a surrogate model; untied per-layer maps
are plain blocks with step 0.
"""
from dataclasses import dataclass

import numpy as np

from ..rng import SplitMix64
from ..trajectory import ALL_ROLES, TokenRole
from .blocks import Block
from .model import SurrogateModel


def layer_stack(obj):
    if isinstance(obj, SurrogateModel):
        return [obj.layer_map(layer) for layer in range(1, obj.depth + 1)]
    return [(b, 0) if isinstance(b, Block) else tuple(b) for b in obj]


def run_stack(stack, x, start=0):
    """States for layers start..L, stacked on axis -3."""
    out = [x]
    for blk, step in stack[start:]:
        x = blk.forward(x, step)
        out.append(x)
    return np.stack(out, axis=-3)


def _dcos(a, b):
    return 1.0 - (a * b).sum(-1) / np.sqrt((a * a).sum(-1) * (b * b).sum(-1))


@dataclass
class PerturbationResult:
    baseline: np.ndarray     # (..., L+1, tokens, dim)
    perturbed: np.ndarray    # same shape; equal to baseline before the injection layer
    d_cos: np.ndarray        # (..., tokens) terminal cosine distance
    sensitivity: dict        # role label -> mean |eps|^-1 d_cos


def perturb_rollout(stack, a0, layer, epsilon, seed, roles=None):
    """Inject eps * u, u ~ N(0, I), at ``layer`` and follow the rollout to the end."""
    stack = layer_stack(stack)
    L = len(stack)
    if not 0 <= layer <= L:
        raise IndexError(f"injection layer must be in 0..{L}")
    a0 = np.asarray(a0, dtype=np.float64)
    base = run_stack(stack, a0)
    x = base[..., layer, :, :]
    u = SplitMix64(seed).normal(x.shape)
    tail = run_stack(stack, x + epsilon * u, start=layer)
    pert = np.concatenate([base[..., :layer, :, :], tail], axis=-3)
    d = _dcos(pert[..., -1, :, :], base[..., -1, :, :])
    scaled = d / abs(epsilon) if epsilon != 0 else np.zeros_like(d)
    groups = {"all": np.ones(d.shape[-1], dtype=bool)}
    if roles is not None:
        roles = [TokenRole.parse(r) for r in roles]
        for r in ALL_ROLES:
            mask = np.array([x == r for x in roles])
            if mask.any():
                groups[r.label] = mask
    sens = {name: float(scaled[..., m].mean()) for name, m in groups.items()}
    return PerturbationResult(base, pert, d, sens)


def sensitivity_profile(stack, a0, epsilon, seed, roles=None, layers=None):
    """Scaled terminal sensitivity for each injection layer; the same u is reused
    at every layer so the profile isolates the effect of depth."""
    stack = layer_stack(stack)
    layers = range(len(stack) + 1) if layers is None else layers
    return {layer: perturb_rollout(stack, a0, layer, epsilon, seed, roles).sensitivity for layer in layers}


def apply_swaps(stack, swaps):
    """Copy of ``stack`` where layer l (1-based) uses the map of layer swaps[l]."""
    out = list(stack)
    for target, donor in swaps.items():
        out[target - 1] = stack[donor - 1]
    return out


def final_relative_error(stack, reference, a0):
    a0 = np.asarray(a0, dtype=np.float64)
    x = run_stack(stack, a0)[..., -1, :, :]
    y = run_stack(reference, a0)[..., -1, :, :]
    err = np.linalg.norm(x - y, axis=(-2, -1)) / np.linalg.norm(y, axis=(-2, -1))
    return float(np.mean(err))


def draw_swaps(partition, swaps, mode, rng):
    """Pick ``swaps`` distinct target layers and a donor for each.

    intra: donor from the same segment (targets come from segments of length >= 2);
    inter: donor from a different segment.
    """
    if mode not in ("intra", "inter"):
        raise ValueError("mode must be 'intra' or 'inter'")
    members = partition.members()
    owner = {layer: j for j, m in enumerate(members) for layer in m}
    if mode == "intra":
        eligible = [layer for m in members if len(m) > 1 for layer in m]
    else:
        eligible = list(owner) if partition.k > 1 else []
    eligible.sort()
    if swaps > len(eligible):
        raise ValueError(f"only {len(eligible)} layers are eligible for {mode} swaps")
    targets = [eligible[i] for i in rng.permutation(len(eligible))[:swaps]]
    out = {}
    for t in sorted(targets):
        if mode == "intra":
            pool = [x for x in members[owner[t]] if x != t]
        else:
            pool = [x for x in owner if owner[x] != owner[t]]
        pool.sort()
        out[t] = pool[int(rng.integers(0, len(pool), 1)[0])]
    return out


def layer_swap_eval(stack, partition, swaps, mode, a0, seed=0):
    """Mean final-layer relative error after replacing ``swaps`` layers per ``mode``."""
    stack = layer_stack(stack)
    if len(stack) != partition.n:
        raise ValueError(f"stack has {len(stack)} layers, partition covers {partition.n}")
    chosen = draw_swaps(partition, swaps, mode, SplitMix64(seed))
    return final_relative_error(apply_swaps(stack, chosen), stack, a0)


def noisy_tied_stack(model, rel_noise, seed):
    """Untied per-layer maps: each layer's phase block with every parameter
    perturbed by rel_noise * |param| * N(0, 1)."""
    rng = SplitMix64(seed)
    out = []
    for layer in range(1, model.depth + 1):
        blk, _ = model.layer_map(layer)
        params = {k: v + rel_noise * np.abs(v) * rng.normal(v.shape) for k, v in blk.params.items()}
        out.append((Block(blk.family, params), 0))
    return out
