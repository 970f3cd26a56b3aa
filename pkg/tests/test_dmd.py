import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import known_map
from depthflow.dmd import (DmdModel, eigenvalue_cloud, fit_dmd, fit_dmd_pooled, fit_trajectory, fits_to_json,
                           group_average)
from depthflow.errors import RankError, ZeroNormError
from depthflow.synthetic import generate_teacher, random_teacher
from depthflow.trajectory import TokenRole, Trajectory, make_roles


def rotation_states(d, theta, steps, seed=0):
    g = np.random.default_rng(seed)
    q, _ = np.linalg.qr(g.standard_normal((d, d)))
    e1, e2 = q[:, 0], q[:, 1]
    return np.array([math.cos(theta * t) * e1 + math.sin(theta * t) * e2 for t in range(steps + 1)])


def _sorted(vals):
    return np.array(sorted(vals, key=lambda z: (-round(abs(z), 9), -z.imag)))


def test_group_average_examples():
    x = np.zeros((1, 2, 1, 2))
    x[0, :, 0] = [[3.0, 4.0], [0.0, 2.0]]
    z = group_average(Trajectory(x, [TokenRole.CLS]), "cls")
    assert np.allclose(z[0], [[0.6, 0.8], [0.0, 1.0]])
    y = np.zeros((1, 2, 3, 2))
    y[0, :, 1] = [1.0, 0.0]
    y[0, :, 2] = [0.0, 1.0]
    y[0, :, 0] = [5.0, 5.0]
    z = group_average(Trajectory(y, make_roles(0, 2)), TokenRole.PATCH)
    assert np.allclose(z[0, 0], [1 / math.sqrt(2), 1 / math.sqrt(2)], atol=1e-15)


def test_group_average_unit_norm_and_zero_error():
    g = np.random.default_rng(1)
    t = Trajectory(g.standard_normal((4, 5, 4, 3)), make_roles(1, 2))
    for role in TokenRole:
        assert np.allclose(np.linalg.norm(group_average(t, role), axis=-1), 1.0, atol=1e-12)
    bad = np.ones((1, 2, 3, 2))
    bad[0, 1, 1], bad[0, 1, 2] = [1.0, 1.0], [-1.0, -1.0]
    with pytest.raises(ZeroNormError):
        group_average(Trajectory(bad, make_roles(0, 2)), "patch")


def test_rotation_on_sphere():
    th = 2 * math.pi / 8
    x = rotation_states(6, th, 24)
    m = fit_dmd(x, rank=2)
    assert np.allclose(np.abs(m.eigenvalues), 1.0, atol=1e-8)
    assert abs(m.eigenvalues[0] - complex(math.cos(th), math.sin(th))) < 1e-6
    assert m.eigenvalues[1] == np.conj(m.eigenvalues[0]) or abs(m.eigenvalues[1] - np.conj(m.eigenvalues[0])) < 1e-12
    back = m.predict(8)
    assert np.max(np.abs(back - x[0])) < 1e-6
    assert np.max(np.abs(back.imag)) <= 1e-8 * np.linalg.norm(back)


def test_fixed_point():
    x0 = np.array([0.6, 0.0, 0.8])
    m = fit_dmd(np.tile(x0, (10, 1)), rank=1)
    assert abs(m.eigenvalues[0] - 1.0) < 1e-10
    for t in (0, 1, 5, 50):
        assert np.allclose(m.predict(t).real, x0, atol=1e-10)


def test_prediction_on_linear_data():
    a, x0, _ = known_map(4, 8, seed=3)
    xs = [x0]
    for _ in range(20):
        xs.append(a @ xs[-1])
    m = fit_dmd(np.array(xs), rank=4)
    assert np.max(np.abs(m.predict(0) - x0)) < 1e-8
    assert np.max(np.abs(m.predict(1) - xs[1])) < 1e-8
    with pytest.raises(ValueError):
        m.predict(-1)


@pytest.mark.parametrize("r", [1, 2, 3, 5, 8, 10])
def test_exact_recovery(r):
    a, x0, spectrum = known_map(r, 16, seed=r)
    xs = [x0]
    for _ in range(32):
        xs.append(a @ xs[-1])
    m = fit_dmd(np.array(xs), rank=r)
    assert np.max(np.abs(_sorted(m.eigenvalues) - _sorted(spectrum))) < 1e-6


@given(st.integers(1, 10), st.integers(0, 2 ** 32 - 1))
def test_eigen_residual_and_spectrum(r, seed):
    g = np.random.default_rng(seed)
    x = g.standard_normal((r + 8, 12))
    m = fit_dmd(x, rank=r)
    for i in range(r):
        w = m.eigvecs[:, i]
        assert np.linalg.norm(m.reduced_op @ w - m.eigenvalues[i] * w) <= 1e-8
    assert np.all(np.diff(m.singular_values) <= 0)
    mods = np.abs(m.eigenvalues)
    assert np.all(np.diff(mods) <= 1e-9)


def test_residual_nonincreasing_in_rank():
    x = np.random.default_rng(5).standard_normal((15, 9))
    x1, x2 = x[:-1].T, x[1:].T
    res = [np.linalg.norm(x2 - fit_dmd(x, rank=r).operator() @ x1) for r in range(1, 10)]
    assert all(b <= a + 1e-10 for a, b in zip(res, res[1:]))


def test_conjugate_pairs_adjacent():
    x = rotation_states(4, 0.7, 12)
    vals = fit_dmd(x, rank=2).eigenvalues
    assert vals[0].imag > 0 and abs(vals[1] - vals[0].conjugate()) < 1e-12


def test_rank_error_lists_numerical_rank():
    x = rotation_states(6, 0.3, 12)
    with pytest.raises(RankError, match="numerical rank 2"):
        fit_dmd(x, rank=3)
    with pytest.raises(RankError):
        fit_dmd(x[:3], rank=3)


@pytest.mark.parametrize("seed", range(5))
def test_contractive_teacher_eigenvalues_near_unit_circle(seed):
    spec = random_teacher(16, (24,), n_registers=1, n_patches=4, radius=0.8, bias_scale=1.0, seed=seed)
    traj, _ = generate_teacher(spec, 4)
    fits = fit_trajectory(traj, rank=10, clip=True)
    for vals in eigenvalue_cloud(fits).values():
        assert np.all(np.abs(vals) <= 1.05)


def test_pooled_recovers_shared_map():
    a, _, spectrum = known_map(3, 8, seed=11)
    g = np.random.default_rng(0)
    u = np.linalg.svd(a)[0][:, :3]
    seqs = []
    for _ in range(3):
        xs = [u @ g.standard_normal(3)]
        for _ in range(4):
            xs.append(a @ xs[-1])
        seqs.append(np.array(xs))
    m = fit_dmd_pooled(seqs, rank=3)
    assert np.max(np.abs(_sorted(m.eigenvalues) - _sorted(spectrum))) < 1e-6
    assert np.allclose(m.predict(0), seqs[0][0], atol=1e-8)


def test_json_serialization():
    g = np.random.default_rng(2)
    t = Trajectory(g.standard_normal((2, 8, 3, 5)), make_roles(0, 2))
    fits = fit_trajectory(t, rank=3)
    doc = json.loads(fits_to_json(fits))
    assert set(doc) == {"cls", "patch"} and len(doc["cls"]) == 2
    first = doc["cls"][0]
    assert len(first["eigenvalues"]) == 3 and all(len(p) == 2 for p in first["eigenvalues"])
    ev = fits[TokenRole.CLS][0].eigenvalues
    assert first["eigenvalues"][0] == [ev[0].real, ev[0].imag]
    pooled = fit_trajectory(t, rank=3, pooled=True)
    assert len(pooled[TokenRole.PATCH]) == 1
    assert isinstance(pooled[TokenRole.PATCH][0], DmdModel)
