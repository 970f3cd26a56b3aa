"""Weight-tied recurrent surrogate: k blocks unrolled along a phase schedule."""
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import BadMagicError, DataError, TruncatedError
from ..partition import Partition
from .blocks import Block

CKPT_MAGIC = b"DFCK"


class SurrogateModel:
    """Block j is applied ``schedule[j]`` times; layer l (1-based) is produced by
    the block whose segment contains l, at step ``l - b_j`` within that segment."""

    def __init__(self, blocks, partition, seed=0):
        if len(blocks) != partition.k:
            raise ValueError(f"{len(blocks)} blocks for a {partition.k}-segment partition")
        dims = {b.dim for b in blocks}
        if len(dims) != 1:
            raise ValueError(f"blocks disagree on dim: {sorted(dims)}")
        self.blocks = list(blocks)
        self.partition = partition
        self.seed = int(seed)

    @property
    def dim(self):
        return self.blocks[0].dim

    @property
    def depth(self):
        return self.partition.n

    def layer_map(self, layer):
        j, step = self.partition.segment_of(layer)
        return self.blocks[j], step

    def step(self, x, layer):
        """Apply the map producing 1-based ``layer`` to the states of layer-1."""
        blk, step = self.layer_map(layer)
        return blk.forward(x, step)

    def rollout(self, a0, start_layer=0, end_layer=None):
        """Autoregressive states for layers start+1..end from states at ``start``.

        ``a0`` has shape (..., tokens, dim); the result stacks layers on axis -3.
        """
        end_layer = self.depth if end_layer is None else end_layer
        x = np.asarray(a0, dtype=np.float64)
        out = []
        for layer in range(start_layer + 1, end_layer + 1):
            x = self.step(x, layer)
            out.append(x)
        return np.stack(out, axis=-3)

    def full_trajectory(self, a0):
        """Layers 0..L including the given embedding states."""
        a0 = np.asarray(a0, dtype=np.float64)
        return np.concatenate([a0[..., None, :, :], self.rollout(a0)], axis=-3)

    def copy(self):
        return SurrogateModel([b.copy() for b in self.blocks], self.partition, self.seed)

    # flat parameter view, used by optimizers and finite-difference checks
    def param_keys(self):
        return [(j, name) for j, b in enumerate(self.blocks) for name in b.names()]

    def get_flat(self):
        return np.concatenate([self.blocks[j].arrays()[n].ravel() for j, n in self.param_keys()])

    def set_flat(self, flat):
        pos = 0
        for j, name in self.param_keys():
            arr = self.blocks[j].arrays()[name]
            size = arr.size
            self.blocks[j].set_array(name, np.array(flat[pos:pos + size], dtype=np.float64).reshape(arr.shape))
            pos += size
        if pos != len(flat):
            raise ValueError(f"flat vector has {len(flat)} entries, model has {pos}")

    def flatten_grads(self, grads):
        return np.concatenate([grads[j][n].ravel() for j, n in self.param_keys()])


def save_checkpoint(model, path, extra=None):
    """Write ``DFCK`` + u32 header length + JSON header + little-endian f64 payload."""
    layout = [[j, name, list(model.blocks[j].arrays()[name].shape)] for j, name in model.param_keys()]
    header = {
        "format": "depthflow-checkpoint",
        "version": 1,
        "families": [b.family for b in model.blocks],
        "dim": model.dim,
        "hidden": [b.hidden for b in model.blocks],
        "schedule": list(model.partition.schedule),
        "segments": [list(s) for s in model.partition.segments],
        "seed": model.seed,
        "depth_scale": [b.depth_scale is not None for b in model.blocks],
        "layout": layout,
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = model.get_flat().astype("<f8").tobytes()
    try:
        Path(path).write_bytes(CKPT_MAGIC + struct.pack("<I", len(blob)) + blob + payload)
    except OSError as exc:
        raise DataError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:4] != CKPT_MAGIC:
        raise BadMagicError(f"{path}: not a depthflow checkpoint")
    if len(raw) < 8:
        raise TruncatedError(f"{path}: header truncated")
    (hlen,) = struct.unpack_from("<I", raw, 4)
    if len(raw) < 8 + hlen:
        raise TruncatedError(f"{path}: header truncated")
    header = json.loads(raw[8:8 + hlen].decode("utf-8"))
    flat = np.frombuffer(raw, dtype="<f8", offset=8 + hlen).astype(np.float64)
    partition = Partition.from_schedule(header["schedule"])
    blocks, pos = [], 0
    per_block = {}
    for j, name, shape in header["layout"]:
        size = int(np.prod(shape))
        if pos + size > flat.size:
            raise TruncatedError(f"{path}: parameter payload truncated")
        per_block.setdefault(j, {})[name] = flat[pos:pos + size].reshape(shape)
        pos += size
    if pos != flat.size:
        raise DataError(f"{path}: payload size does not match layout")
    for j, family in enumerate(header["families"]):
        arrays = per_block[j]
        scale = arrays.pop("depth_scale", None)
        blocks.append(Block(family, arrays, scale))
    model = SurrogateModel(blocks, partition, header.get("seed", 0))
    return model, header
