"""Activation trajectories and the ATRJ v1 file format.

Layout (little-endian)::

    b"ATRJ"                         magic
    u32 version                     1
    u32 n_samples, n_layers, n_tokens, dim
    u8  dtype                       0 = f32, 1 = f64
    u8  role[n_tokens]              0 cls, 1 register, 2 patch
    payload                         data[sample][layer][token][dim]

Stored layer 0 is the embedding state before the first block. Data are always
held as float64 in memory; f32 files are promoted on load.
"""
import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagicError, DataError, NonFiniteError, TruncatedError

MAGIC = b"ATRJ"
VERSION = 1
_HEAD = struct.Struct("<4sIIIIIB")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class TokenRole(enum.IntEnum):
    CLS = 0
    REGISTER = 1
    PATCH = 2

    @classmethod
    def parse(cls, name):
        if isinstance(name, TokenRole):
            return name
        key = str(name).strip().lower()
        aliases = {"cls": cls.CLS, "register": cls.REGISTER, "reg": cls.REGISTER,
                   "registers": cls.REGISTER, "patch": cls.PATCH, "patches": cls.PATCH}
        if key not in aliases:
            raise ValueError(f"unknown token role {name!r}")
        return aliases[key]

    @property
    def label(self):
        return ("cls", "register", "patch")[self]


ALL_ROLES = (TokenRole.CLS, TokenRole.REGISTER, TokenRole.PATCH)


def parse_roles(spec):
    """Accept None (all roles), a role, a comma-separated string or an iterable."""
    if spec is None:
        return frozenset(ALL_ROLES)
    if isinstance(spec, (str, TokenRole)):
        if isinstance(spec, str) and spec.strip().lower() == "all":
            return frozenset(ALL_ROLES)
        spec = [s for s in str(spec).split(",") if s] if isinstance(spec, str) else [spec]
    return frozenset(TokenRole.parse(s) for s in spec)


def make_roles(n_registers=0, n_patches=0):
    return (TokenRole.CLS,) + (TokenRole.REGISTER,) * n_registers + (TokenRole.PATCH,) * n_patches


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Per-sample token states for layers 0..L, shape (samples, L+1, tokens, dim)."""

    data: np.ndarray
    roles: tuple

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 4:
            raise DataError(f"trajectory data must be 4-D, got shape {data.shape}")
        roles = tuple(TokenRole.parse(r) for r in self.roles)
        n, layers, tokens, _ = data.shape
        if n < 1:
            raise DataError("trajectory needs at least one sample")
        if layers < 2:
            raise DataError("trajectory needs at least two layers")
        if len(roles) != tokens:
            raise DataError(f"{len(roles)} roles for {tokens} tokens")
        if sum(r == TokenRole.CLS for r in roles) != 1:
            raise DataError("exactly one cls token is required")
        if not np.all(np.isfinite(data)):
            raise NonFiniteError("trajectory contains non-finite values")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "roles", roles)

    @property
    def n_samples(self):
        return self.data.shape[0]

    @property
    def n_layers(self):
        return self.data.shape[1]

    @property
    def depth(self):
        """Number of block applications L (stored layers minus one)."""
        return self.data.shape[1] - 1

    @property
    def n_tokens(self):
        return self.data.shape[2]

    @property
    def dim(self):
        return self.data.shape[3]

    def role_mask(self, roles=None):
        wanted = parse_roles(roles)
        return np.array([r in wanted for r in self.roles], dtype=bool)

    def has_role(self, role):
        return TokenRole.parse(role) in self.roles

    def with_data(self, data):
        return Trajectory(data, self.roles)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return self.roles == other.roles and self.data.shape == other.data.shape \
            and np.array_equal(self.data, other.data)


def write_trajectory(t, path, dtype="f64"):
    code = {"f32": 0, "f64": 1}[dtype]
    header = _HEAD.pack(MAGIC, VERSION, t.n_samples, t.n_layers, t.n_tokens, t.dim, code)
    roles = bytes(int(r) for r in t.roles)
    payload = np.ascontiguousarray(t.data, dtype=_DTYPES[code]).tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(header + roles + payload)
    except OSError as exc:
        raise DataError(f"cannot write trajectory to {path}: {exc}") from exc


def read_trajectory(path):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read trajectory {path}: {exc}") from exc
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: not an ATRJ file")
    if len(raw) < _HEAD.size:
        raise TruncatedError(f"{path}: header truncated")
    _, version, n, layers, tokens, dim, code = _HEAD.unpack_from(raw)
    if version != VERSION:
        raise DataError(f"{path}: unsupported ATRJ version {version}")
    if code not in _DTYPES:
        raise DataError(f"{path}: unknown dtype code {code}")
    off = _HEAD.size
    if len(raw) < off + tokens:
        raise TruncatedError(f"{path}: role table truncated")
    role_codes = raw[off:off + tokens]
    if any(c > 2 for c in role_codes):
        raise DataError(f"{path}: invalid role code in role table")
    off += tokens
    dt = _DTYPES[code]
    count = n * layers * tokens * dim
    need = off + count * dt.itemsize
    if len(raw) < need:
        raise TruncatedError(f"{path}: payload truncated ({len(raw) - off} of {need - off} bytes)")
    if len(raw) > need:
        raise DataError(f"{path}: {len(raw) - need} trailing bytes after payload")
    data = np.frombuffer(raw, dtype=dt, count=count, offset=off).astype(np.float64)
    data = data.reshape(n, layers, tokens, dim)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{path}: payload contains non-finite values")
    return Trajectory(data, tuple(TokenRole(c) for c in role_codes))
