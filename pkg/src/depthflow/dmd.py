"""Exact dynamic mode decomposition of depth trajectories.

With snapshot matrices X1 = [x_0 .. x_{L-1}] and X2 = [x_1 .. x_L] (columns):

    X1 = U S V^T,  A_r = U_r^T X2 V_r S_r^{-1},  A_r W = W diag(lambda)
    Phi = X2 V_r S_r^{-1} W,  b = pinv(Phi) x_0,  x_t ~ Phi diag(lambda)^t b

No affine offset is fitted.
"""
import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError, RankError, ZeroNormError
from .linalg import eig_general, numerical_rank, pinv, svd
from .trajectory import TokenRole

DEFAULT_RANK = 10


@dataclass
class DmdModel:
    rank: int
    eigenvalues: np.ndarray      # (r,) complex, descending modulus
    modes: np.ndarray            # (d, r) complex, Phi
    amplitudes: np.ndarray       # (r,) complex, b
    reduced_op: np.ndarray       # (r, r) real
    singular_values: np.ndarray  # full spectrum of X1
    eigvecs: np.ndarray          # (r, r) complex, W
    basis: np.ndarray            # (d, r) U_r

    def predict(self, t):
        if t < 0:
            raise ValueError("t must be >= 0")
        return self.modes @ (self.eigenvalues ** t * self.amplitudes)

    def operator(self):
        """Induced full-space linear predictor A = X2 V_r S_r^{-1} U_r^T, real part."""
        return np.real(self.modes @ np.linalg.solve(self.eigvecs, self.basis.T.astype(complex)))

    @property
    def spectral_radius(self):
        return float(np.max(np.abs(self.eigenvalues)))

    def to_dict(self):
        def pairs(z):
            return [[float(v.real), float(v.imag)] for v in np.ravel(z)]
        return {
            "rank": self.rank,
            "eigenvalues": pairs(self.eigenvalues),
            "amplitudes": pairs(self.amplitudes),
            "singular_values": [float(s) for s in self.singular_values],
            "reduced_op": self.reduced_op.tolist(),
            "modes": [pairs(col) for col in self.modes.T],
            "spectral_radius": self.spectral_radius,
            "median_modulus": float(np.median(np.abs(self.eigenvalues))),
        }


def _sort_eigs(vals, vecs):
    # descending modulus; within a conjugate pair the +imag member first
    order = np.lexsort((-vals.imag, -np.round(np.abs(vals), 12)))
    return vals[order], vecs[:, order]


def group_average(traj, role):
    """(samples, L+1, dim) unit vectors: the role's tokens averaged per layer, then normalized."""
    role = TokenRole.parse(role)
    mask = traj.role_mask([role])
    if not mask.any():
        raise DataError(f"trajectory has no {role.label} tokens")
    z = traj.data[:, :, mask, :].mean(axis=2)
    norms = np.linalg.norm(z, axis=-1)
    bad = np.argwhere(norms == 0.0)
    if bad.size:
        raise ZeroNormError(f"zero group average for {role.label} at sample {bad[0][0]}, layer {bad[0][1]}")
    return z / norms[..., None]


def _fit(x1, x2, x0, rank, rtol):
    if rank < 1:
        raise ValueError("rank must be >= 1")
    u, s, v = svd(x1)
    nr = numerical_rank(s, rtol)
    if rank > nr:
        raise RankError(f"rank {rank} exceeds the numerical rank {nr} of the snapshot matrix")
    ur, sr, vr = u[:, :rank], s[:rank], v[:, :rank]
    proj = x2 @ vr / sr
    a_tilde = ur.T @ proj
    vals, w = eig_general(a_tilde)
    vals, w = _sort_eigs(vals, w)
    phi = proj @ w
    b = pinv(phi) @ x0
    return DmdModel(rank, vals, phi, b, a_tilde, s, w, ur)


def fit_dmd(states, rank=DEFAULT_RANK, rtol=1e-10):
    """Exact DMD of one sequence ``states`` with shape (L+1, dim)."""
    x = np.asarray(states, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError(f"states must be (L+1, dim) with L >= 1, got {x.shape}")
    if rank > x.shape[0] - 1:
        raise RankError(f"rank {rank} exceeds the number of depth steps {x.shape[0] - 1}")
    return _fit(x[:-1].T, x[1:].T, x[0], rank, rtol)


def fit_dmd_pooled(sequences, rank=DEFAULT_RANK, rtol=1e-10):
    """One operator for many sequences: snapshot pairs concatenated column-wise.
    Amplitudes refer to the first sequence's initial state."""
    seqs = [np.asarray(s, dtype=np.float64) for s in sequences]
    x1 = np.concatenate([s[:-1].T for s in seqs], axis=1)
    x2 = np.concatenate([s[1:].T for s in seqs], axis=1)
    return _fit(x1, x2, seqs[0][0], rank, rtol)


def clip_rank(states, rank, rtol=1e-10):
    x = np.asarray(states)
    s = svd(x[:-1].T)[1] if x.ndim == 2 else svd(np.concatenate([q[:-1].T for q in x], axis=1))[1]
    return max(1, min(rank, numerical_rank(s, rtol)))


def fit_trajectory(traj, roles=None, rank=DEFAULT_RANK, pooled=False, clip=False):
    """Per-role DMD fits: a list of per-sample models, or one pooled model per role."""
    out = {}
    wanted = [r for r in (TokenRole.CLS, TokenRole.REGISTER, TokenRole.PATCH)
              if traj.has_role(r) and (roles is None or r in roles)]
    for role in wanted:
        x = group_average(traj, role)
        if pooled:
            r = clip_rank(x, rank) if clip else rank
            out[role] = [fit_dmd_pooled(list(x), r)]
        else:
            out[role] = [fit_dmd(seq, clip_rank(seq, rank) if clip else rank) for seq in x]
    return out


def eigenvalue_cloud(fits):
    """Pool eigenvalues per role from :func:`fit_trajectory` output."""
    return {role: np.concatenate([m.eigenvalues for m in models]) for role, models in fits.items()}


def fits_to_json(fits):
    return json.dumps({role.label: [m.to_dict() for m in models] for role, models in fits.items()},
                      indent=1)
