"""Synthetic block-recurrent teachers with known phase structure."""
import json
from dataclasses import dataclass, field

import numpy as np

from .partition import Partition
from .rng import SplitMix64, derive_seed
from .surrogate.blocks import block_from_dict, block_to_dict, random_block
from .surrogate.model import SurrogateModel
from .trajectory import TokenRole, Trajectory, make_roles

# stream salt for drawing random teacher blocks, kept apart from sample streams
_BLOCK_SALT = 0x5EED_B10C


@dataclass
class SyntheticTeacherSpec:
    dim: int
    roles: tuple
    blocks: list
    schedule: tuple
    noise_sigma: float = 0.0
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.roles = tuple(TokenRole.parse(r) for r in self.roles)
        self.schedule = tuple(int(n) for n in self.schedule)
        if len(self.blocks) != len(self.schedule):
            raise ValueError(f"{len(self.blocks)} blocks for schedule {self.schedule}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if any(b.dim != self.dim for b in self.blocks):
            raise ValueError("block dims must equal spec dim")

    @property
    def n_tokens(self):
        return len(self.roles)

    @property
    def depth(self):
        return sum(self.schedule)

    def partition(self):
        return Partition.from_schedule(self.schedule)

    def model(self):
        return SurrogateModel([b.copy() for b in self.blocks], self.partition(), self.seed)


def random_teacher(dim, schedule, family="affine", n_registers=0, n_patches=4,
                   radius=0.8, bias_scale=1.0, hidden=16, noise_sigma=0.0, seed=0):
    rng = SplitMix64(derive_seed(seed, _BLOCK_SALT))
    blocks = [random_block(family, dim, rng, radius=radius, bias_scale=bias_scale, hidden=hidden)
              for _ in schedule]
    return SyntheticTeacherSpec(dim, make_roles(n_registers, n_patches), blocks, tuple(schedule),
                                noise_sigma, seed)


def generate_teacher(spec, n_samples):
    """Roll the spec's blocks forward from standard-normal layer-0 states.

    Sample i uses its own stream keyed ``seed XOR i``: layer 0 first, then the
    noise for layers 1..L in order (noise is only drawn when noise_sigma > 0).
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    model = spec.model()
    L, T, d = spec.depth, spec.n_tokens, spec.dim
    data = np.empty((n_samples, L + 1, T, d))
    for i in range(n_samples):
        rng = SplitMix64(derive_seed(spec.seed, i))
        x = rng.normal((T, d))
        data[i, 0] = x
        for layer in range(1, L + 1):
            x = model.step(x, layer)
            if spec.noise_sigma > 0:
                x = x + spec.noise_sigma * rng.normal((T, d))
            data[i, layer] = x
    return Trajectory(data, spec.roles), spec.partition()


def spec_from_dict(d):
    """Build a spec from its JSON form.

    Either ``blocks`` lists explicit parameter sets (``{"family": "identity"}``
    is a shorthand), or ``block_init`` describes random blocks drawn from the
    seed: ``{"family", "radius", "bias_scale", "hidden"}``.
    """
    dim = int(d["dim"])
    if "roles" in d:
        roles = tuple(TokenRole.parse(r) for r in d["roles"])
    else:
        roles = make_roles(int(d.get("n_registers", 0)), int(d.get("n_patches", 0)))
    schedule = tuple(int(n) for n in d["schedule"])
    seed = int(d.get("seed", 0))
    noise = float(d.get("noise_sigma", 0.0))
    if "blocks" in d:
        blocks = [block_from_dict(b, dim=dim) for b in d["blocks"]]
        return SyntheticTeacherSpec(dim, roles, blocks, schedule, noise, seed)
    init = d.get("block_init", {})
    spec = random_teacher(dim, schedule, family=init.get("family", "affine"),
                          radius=float(init.get("radius", 0.8)),
                          bias_scale=float(init.get("bias_scale", 1.0)),
                          hidden=int(init.get("hidden", 16)), noise_sigma=noise, seed=seed)
    spec.roles = roles
    return spec


def spec_to_dict(spec):
    return {"dim": spec.dim, "roles": [r.label for r in spec.roles],
            "schedule": list(spec.schedule), "noise_sigma": spec.noise_sigma,
            "seed": spec.seed, "blocks": [block_to_dict(b) for b in spec.blocks]}


def load_spec(path):
    with open(path) as fh:
        return spec_from_dict(json.load(fh))


def norm_growing_teacher(dim, schedule, leading=1.4, trailing=(1.15, 1.02), n_registers=0,
                         n_patches=4, seed=0):
    """Affine teacher whose blocks are symmetric with eigenvalues > 1: norms grow with
    depth while directions contract toward the leading eigenvector of each block.

    Block j has W = Q diag(leading, linspace(*trailing)) Q^T for a random orthogonal Q.
    """
    from .surrogate.blocks import Block, _orthogonal

    rng = SplitMix64(derive_seed(seed, _BLOCK_SALT))
    mus = np.concatenate([[leading], np.linspace(trailing[0], trailing[1], dim - 1)])
    blocks = []
    for _ in schedule:
        q = _orthogonal(rng, dim)
        blocks.append(Block("affine", {"weight": (q * mus) @ q.T, "bias": np.zeros(dim)}))
    return SyntheticTeacherSpec(dim, make_roles(n_registers, n_patches), blocks, tuple(schedule), 0.0, seed)
