"""Two-stage training of recurrent surrogates.

Stage 1 fits each block on its own segment, starting from the ground-truth
state at the segment's input layer, with the hybrid loss and lambda annealed
linearly to zero. Stage 2 chains all blocks and trains end to end on the pure
autoregressive loss. Optimization is full-batch gradient descent with
momentum, so a run is a deterministic function of (data, config).
"""
import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from ..errors import NumericalError
from ..rng import SplitMix64
from .blocks import init_block
from .loss import hybrid_loss, token_weight_vector
from .model import SurrogateModel

STAGE_WEIGHTS = {"stage1": (0.34, 0.33, 0.33), "stage2": (0.45, 0.10, 0.45)}


@dataclass
class TrainConfig:
    steps: int = 5000
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lambda_init: float = None       # stage default: 0.5 for stage1, 0 for stage2
    anneal_fraction: float = 0.25   # None holds lambda constant
    token_weights: tuple = None     # (cls, register, patch); stage default
    seed: int = 0
    stage: str = "stage1"
    family: str = "affine"
    hidden: int = 16
    depth_scale: bool = False
    init_scale: float = 0.01
    grad_clip: float = None
    log_every: int = 50

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.stage not in STAGE_WEIGHTS:
            raise ValueError(f"stage must be stage1 or stage2, got {self.stage!r}")
        if self.stage == "stage2" and self.lambda_init not in (None, 0, 0.0):
            raise ValueError("stage2 trains on the autoregressive loss only; lambda must be 0")
        lam = self.initial_lambda
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"lambda_init must lie in [0, 1], got {lam}")
        if self.anneal_fraction is not None and not 0.0 < self.anneal_fraction <= 1.0:
            raise ValueError("anneal_fraction must lie in (0, 1] or be None")
        w = self.weights
        if len(w) != 3 or min(w) < 0 or abs(sum(w) - 1.0) > 1e-9:
            raise ValueError(f"token weights must be 3 nonnegative numbers summing to 1, got {w}")
        if self.steps < 0 or self.learning_rate <= 0:
            raise ValueError("steps must be >= 0 and learning_rate > 0")

    @property
    def initial_lambda(self):
        if self.lambda_init is None:
            return 0.5 if self.stage == "stage1" else 0.0
        return float(self.lambda_init)

    @property
    def weights(self):
        return tuple(self.token_weights) if self.token_weights is not None else STAGE_WEIGHTS[self.stage]

    def lam(self, step):
        lam0 = self.initial_lambda
        if self.anneal_fraction is None:
            return lam0
        horizon = self.anneal_fraction * self.steps
        if horizon <= 0:
            return 0.0
        return lam0 * max(0.0, 1.0 - step / horizon)

    def replace(self, **kw):
        d = asdict(self)
        d.update(kw)
        return TrainConfig(**d)

    def to_dict(self):
        d = asdict(self)
        d["token_weights"] = list(self.weights)
        d["lambda_init"] = self.initial_lambda
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        d = dict(d)
        if d.get("token_weights") is not None:
            d["token_weights"] = tuple(d["token_weights"])
        return cls(**d)


def load_configs(path):
    """A config file holds either one TrainConfig or {"stage1": {...}, "stage2": {...}}."""
    with open(path) as fh:
        raw = json.load(fh)
    if "stage1" in raw or "stage2" in raw:
        out = {}
        for stage in ("stage1", "stage2"):
            if raw.get(stage) is not None:
                out[stage] = TrainConfig.from_dict({**raw[stage], "stage": stage})
        return out
    cfg = TrainConfig.from_dict(raw)
    return {cfg.stage: cfg}


def init_model(partition, dim, cfg):
    rng = SplitMix64(cfg.seed)
    blocks = [init_block(cfg.family, dim, rng, hidden=cfg.hidden,
                         n_steps=(e - b + 1) if cfg.depth_scale else None,
                         init_scale=cfg.init_scale)
              for b, e in partition.segments]
    return SurrogateModel(blocks, partition, cfg.seed)


def _descend(model, block_ids, grads, velocity, cfg, loss):
    if not math.isfinite(loss):
        raise NumericalError("training diverged (non-finite loss); lower learning_rate or set grad_clip")
    if cfg.grad_clip is not None:
        norm = math.sqrt(sum(float((g * g).sum()) for j in block_ids for g in grads[j].values()))
        if norm > cfg.grad_clip:
            scale = cfg.grad_clip / norm
            grads = [{k: v * scale for k, v in g.items()} for g in grads]
    for j in block_ids:
        blk = model.blocks[j]
        for name, g in grads[j].items():
            v = velocity.setdefault((j, name), np.zeros_like(g))
            v *= cfg.momentum
            v -= cfg.learning_rate * g
            blk.set_array(name, blk.arrays()[name] + v)


def _teacher_array(teacher):
    return teacher.data if hasattr(teacher, "data") else np.asarray(teacher)


def train_stage1(teacher, partition, cfg, model=None, log=None):
    """Fit each block on its segment; returns the assembled model."""
    if cfg.stage != "stage1":
        cfg = cfg.replace(stage="stage1")
    a = _teacher_array(teacher)
    if a.shape[1] - 1 != partition.n:
        raise ValueError(f"teacher has depth {a.shape[1] - 1}, partition covers {partition.n}")
    model = init_model(partition, a.shape[-1], cfg) if model is None else model.copy()
    w = token_weight_vector(teacher.roles, cfg.weights)
    for j, (b, e) in enumerate(partition.segments):
        velocity = {}
        for step in range(cfg.steps):
            lam = cfg.lam(step)
            res = hybrid_loss(model, a, lam, w, start=b - 1, end=e, weight_decay=cfg.weight_decay)
            _descend(model, [j], res.grads, velocity, cfg, res.loss)
            if log is not None and (step % cfg.log_every == 0 or step == cfg.steps - 1):
                log.append(_log_row("stage1", j, step, lam, res, b))
    return model


def train_stage2(model, teacher, cfg, log=None):
    """End-to-end autoregressive fine-tuning of all blocks (lambda fixed at 0)."""
    if cfg.stage != "stage2":
        cfg = cfg.replace(stage="stage2", lambda_init=None)
    a = _teacher_array(teacher)
    model = model.copy()
    w = token_weight_vector(teacher.roles, cfg.weights)
    velocity = {}
    ids = list(range(len(model.blocks)))
    for step in range(cfg.steps):
        res = hybrid_loss(model, a, 0.0, w, weight_decay=cfg.weight_decay)
        _descend(model, ids, res.grads, velocity, cfg, res.loss)
        if log is not None and (step % cfg.log_every == 0 or step == cfg.steps - 1):
            log.append(_log_row("stage2", -1, step, 0.0, res, 1))
    return model


def _log_row(stage, block, step, lam, res, first_layer):
    row = {"stage": stage, "block": block, "step": step, "lambda": lam,
           "loss": res.loss, "tf_loss": res.tf, "ar_loss": res.ar}
    for i, v in enumerate(res.ar_layer):
        row[f"ar_layer_{first_layer + i}"] = float(v)
    return row


def rollout_errors(model, teacher):
    """Per-layer (1..L) mean relative Frobenius error and mean token cosine of the
    autoregressive rollout against the teacher."""
    a = _teacher_array(teacher)
    pred = model.rollout(a[:, 0])
    gt = a[:, 1:]
    rel = np.linalg.norm(pred - gt, axis=(-2, -1)) / np.linalg.norm(gt, axis=(-2, -1))
    cos = (pred * gt).sum(-1) / np.sqrt((pred * pred).sum(-1) * (gt * gt).sum(-1))
    return rel.mean(axis=0), cos.mean(axis=(0, 2))
