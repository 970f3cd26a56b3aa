"""Depth-as-time metrics on token trajectories.

Per-token quantities are computed per sample, averaged over the tokens of a
role within each sample, then averaged over samples. Cosines are evaluated as
<a, b> / sqrt(|a|^2 |b|^2), which equals the inner product of the normalized
states and is exactly 1 for identical inputs.
"""
import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ZeroNormError
from .linalg import svd
from .trajectory import ALL_ROLES, TokenRole

ACOS_TOL = 1e-9


def _check_nonzero(data):
    nsq = (data * data).sum(axis=-1)
    bad = np.argwhere(nsq == 0.0)
    if bad.size:
        idx = ", ".join(f"{name} {int(v)}" for name, v in zip(("sample", "layer", "token"), bad[0]))
        raise ZeroNormError(f"zero-norm state at {idx}")
    return nsq


def _cos(a, b):
    return (a * b).sum(axis=-1) / np.sqrt((a * a).sum(axis=-1) * (b * b).sum(axis=-1))


def _role_average(values, traj, role):
    """values: (samples, ..., tokens) -> mean over role tokens, then over samples."""
    mask = traj.role_mask([role])
    return values[..., mask].mean(axis=-1).mean(axis=0)


def normalize_states(traj):
    nsq = _check_nonzero(traj.data)
    return traj.with_data(traj.data / np.sqrt(nsq)[..., None])


def mean_norms(traj):
    norms = np.linalg.norm(traj.data, axis=-1)
    return {r: _role_average(norms, traj, r) for r in _roles(traj)}


def _roles(traj):
    return [r for r in ALL_ROLES if traj.has_role(r)]


def directional_convergence(traj):
    """gamma[l] = <x_l / |x_l|, x_L / |x_L|> per role, l = 0..L."""
    _check_nonzero(traj.data)
    final = traj.data[:, -1:, :, :]
    c = _cos(traj.data, final)
    return {r: _role_average(c, traj, r) for r in _roles(traj)}


def _consecutive_cos(traj):
    _check_nonzero(traj.data)
    c = _cos(traj.data[:, 1:], traj.data[:, :-1])
    worst = np.max(np.abs(c)) if c.size else 0.0
    if worst > 1.0 + ACOS_TOL:
        raise NumericalError(f"cosine {worst!r} outside [-1, 1] beyond tolerance")
    return np.clip(c, -1.0, 1.0)


def angular_speed(traj):
    """s[l] = arccos <x_{l+1}/|x_{l+1}|, x_l/|x_l|> per role, l = 0..L-1 (radians)."""
    s = np.arccos(_consecutive_cos(traj))
    return {r: _role_average(s, traj, r) for r in _roles(traj)}


def angular_updates(traj, layer, roles=None):
    """Rows Delta = x_{l+1}/|x_{l+1}| - x_l/|x_l| for the selected tokens, stacked over samples."""
    if not 0 <= layer < traj.depth:
        raise IndexError(f"layer must be in 0..{traj.depth - 1}")
    mask = traj.role_mask(roles)
    if not mask.any():
        raise ValueError("no tokens selected")
    pair = traj.data[:, layer:layer + 2][:, :, mask]
    nsq = _check_nonzero(pair)
    unit = pair / np.sqrt(nsq)[..., None]
    return unit[:, 1] - unit[:, 0]


def rank_measures(u):
    """(stable rank, entropy effective rank) of a matrix."""
    u = np.asarray(u, dtype=np.float64)
    sigma = svd(u)[1]
    if sigma.size == 0 or sigma[0] == 0.0:
        raise NumericalError("update matrix is zero; rank is undefined")
    stable = float((u * u).sum() / sigma[0] ** 2)
    p = sigma[sigma > 0] / sigma.sum()
    effective = float(np.exp(-(p * np.log(p)).sum()))
    return stable, effective


def update_rank(traj, layer, roles=None):
    d = angular_updates(traj, layer, roles)
    return rank_measures(d.reshape(-1, d.shape[-1]))


def coherence(traj, layer, role=TokenRole.PATCH):
    """Mean cosine between each token's update and the mean update, per sample,
    averaged over samples."""
    d = angular_updates(traj, layer, [role])
    nsq = (d * d).sum(axis=-1)
    if np.any(nsq == 0.0):
        raise NumericalError(f"zero angular update at layer {layer}")
    mean = d.mean(axis=1, keepdims=True)
    msq = (mean * mean).sum(axis=-1)
    if np.any(msq == 0.0):
        raise NumericalError(f"mean update vanishes at layer {layer}; coherence undefined")
    cos = (d * mean).sum(axis=-1) / np.sqrt(nsq * msq)
    return float(cos.mean(axis=1).mean())


def _r2_rows(x, y):
    """R^2 of the 1-D OLS fit y ~ a x + c for each row pair, clipped to [0, 1]."""
    xm = x - x.mean(axis=-1, keepdims=True)
    ym = y - y.mean(axis=-1, keepdims=True)
    sxx = (xm * xm).sum(axis=-1)
    syy = (ym * ym).sum(axis=-1)
    sxy = (xm * ym).sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = np.where(sxx > 0, sxy / sxx, 0.0)
        res = ym - slope[..., None] * xm
        ss_res = (res * res).sum(axis=-1)
        r2 = np.where(syy > 0, 1.0 - ss_res / syy, np.where(ss_res == 0, 1.0, 0.0))
    return np.clip(r2, 0.0, 1.0)


def alignment_r2(student, teacher, roles=None, layer=-1):
    """Mean R^2 of per-token affine (scale + shift) fits from student to teacher vectors."""
    if student.data.shape != teacher.data.shape:
        raise ValueError(f"shape mismatch {student.data.shape} vs {teacher.data.shape}")
    mask = teacher.role_mask(roles)
    x = student.data[:, layer][:, mask]
    y = teacher.data[:, layer][:, mask]
    return float(_r2_rows(x, y).mean(axis=-1).mean())


def layer_cosine(student, teacher, roles=None, layer=-1):
    mask = teacher.role_mask(roles)
    a = student.data[:, layer][:, mask]
    b = teacher.data[:, layer][:, mask]
    _check_nonzero(a)
    _check_nonzero(b)
    return float(_cos(a, b).mean(axis=-1).mean())


FIELDS = ("mean_norm", "gamma", "angular_speed", "stable_rank", "effective_rank", "coherence")


@dataclass
class DynamicsReport:
    """Per-layer, per-role metric table; entries undefined at a layer are NaN."""

    n_layers: int
    tables: dict = field(default_factory=dict)  # role -> {field: array(n_layers)}

    def rows(self):
        for role, cols in self.tables.items():
            for layer in range(self.n_layers):
                yield {"layer": layer, "role": role.label,
                       **{f: float(cols[f][layer]) for f in FIELDS}}

    def to_csv(self):
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["layer", "role", *FIELDS], lineterminator="\n")
        w.writeheader()
        for row in self.rows():
            w.writerow({k: (_fmt(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def to_json(self):
        out = {"n_layers": self.n_layers, "roles": {}}
        for role, cols in self.tables.items():
            out["roles"][role.label] = {f: [None if math.isnan(v) else float(v) for v in cols[f]]
                                        for f in FIELDS}
        return json.dumps(out, indent=2)


def _fmt(v):
    return "nan" if math.isnan(v) else repr(v)


def dynamics_report(traj):
    layers = traj.n_layers
    norms = mean_norms(traj)
    gamma = directional_convergence(traj)
    speed = angular_speed(traj)
    report = DynamicsReport(layers)
    for role in _roles(traj):
        cols = {f: np.full(layers, np.nan) for f in FIELDS}
        cols["mean_norm"][:] = norms[role]
        cols["gamma"][:] = gamma[role]
        cols["angular_speed"][:-1] = speed[role]
        for layer in range(traj.depth):
            try:
                cols["stable_rank"][layer], cols["effective_rank"][layer] = update_rank(traj, layer, [role])
            except NumericalError:
                pass
            try:
                cols["coherence"][layer] = coherence(traj, layer, role)
            except NumericalError:
                pass
        report.tables[role] = cols
    return report
