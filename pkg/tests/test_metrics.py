import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from depthflow.errors import NumericalError, ZeroNormError
from depthflow.metrics import (FIELDS, alignment_r2, angular_speed, coherence, directional_convergence,
                               dynamics_report, layer_cosine, mean_norms, normalize_states, rank_measures,
                               update_rank)
from depthflow.synthetic import generate_teacher
from depthflow.trajectory import TokenRole, Trajectory, make_roles

ROLES = make_roles(2, 4)


def _random(seed, n=3, layers=6, dim=5, roles=ROLES):
    g = np.random.default_rng(seed)
    return Trajectory(g.standard_normal((n, layers, len(roles), dim)), roles)


def _single(states):
    """One sample, one cls token; states indexed by layer."""
    return Trajectory(np.asarray(states, float)[None, :, None, :], [TokenRole.CLS])


def test_normalize_examples():
    t = normalize_states(_single([[3.0, 4.0], [1.0, 0.0]]))
    assert np.allclose(t.data[0, 0, 0], [0.6, 0.8], atol=1e-15)
    u = _random(0)
    once = normalize_states(u)
    twice = normalize_states(once)
    assert np.max(np.abs(twice.data - once.data)) <= 1e-15
    assert np.allclose(np.linalg.norm(once.data, axis=-1), 1.0, atol=1e-12)


def test_normalize_zero_norm_error():
    x = np.ones((1, 2, 2, 3))
    x[0, 1, 1] = 0
    with pytest.raises(ZeroNormError, match="layer 1"):
        normalize_states(Trajectory(x, make_roles(0, 1)))


def test_gamma_cases():
    const = _single([[1.0, 2.0], [2.0, 4.0], [0.5, 1.0]])
    assert np.all(directional_convergence(const)[TokenRole.CLS] == 1.0)
    rot = _single([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    g = directional_convergence(rot)[TokenRole.CLS]
    assert g[0] == 0.0 and g[-1] == 1.0


def test_speed_cases():
    same = _single([[1.0, 2.0], [1.0, 2.0]])
    assert angular_speed(same)[TokenRole.CLS][0] == 0.0
    orth = _single([[1.0, 0.0], [0.0, 3.0]])
    assert angular_speed(orth)[TokenRole.CLS][0] == math.pi / 2


def test_gamma_final_exact_on_random():
    t = _random(1)
    for vals in directional_convergence(t).values():
        assert vals[-1] == 1.0


def test_contractive_teacher_gamma_nondecreasing_late():
    # x -> 0.6 x + b moves each state along a straight line to the fixed point
    from depthflow.surrogate.blocks import Block
    from depthflow.synthetic import SyntheticTeacherSpec
    b = np.random.default_rng(3).standard_normal(6)
    blk = Block("affine", {"weight": 0.6 * np.eye(6), "bias": b})
    traj, _ = generate_teacher(SyntheticTeacherSpec(6, make_roles(0, 3), [blk], (10,), seed=3), 16)
    for vals in directional_convergence(traj).values():
        assert np.all(np.diff(vals[4:]) >= -1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_oracle_equivalence(seed):
    t = _random(seed)
    g = directional_convergence(t)
    s = angular_speed(t)
    ref_g = oracles.gamma(t.data, t.roles)
    ref_s = oracles.angular_speed(t.data, t.roles)
    for r in g:
        assert np.max(np.abs(g[r] - np.array(ref_g[int(r)]))) < 1e-12
        assert np.max(np.abs(s[r] - np.array(ref_s[int(r)]))) < 1e-12
    patches = [i for i, r in enumerate(t.roles) if r == TokenRole.PATCH]
    for layer in range(t.depth):
        assert abs(coherence(t, layer) - oracles.coherence(t.data, layer, patches)) < 1e-12
        stable, _ = update_rank(t, layer, [TokenRole.PATCH])
        assert abs(stable - oracles.stable_rank(oracles.update_rows(t.data, layer, patches))) < 1e-12


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.01, 100))
def test_scale_invariance(seed, scale):
    t = _random(seed)
    big = t.with_data(t.data * scale)
    for a, b in ((directional_convergence(t), directional_convergence(big)),
                 (angular_speed(t), angular_speed(big))):
        for r in a:
            assert np.max(np.abs(a[r] - b[r])) < 1e-12


def test_scale_invariance_fixed_factor():
    t = _random(2)
    big = t.with_data(t.data * 7.3)
    for r, v in directional_convergence(t).items():
        assert np.max(np.abs(v - directional_convergence(big)[r])) < 1e-12


@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 8), st.integers(2, 6))
def test_total_rotation_bound(seed, layers, dim):
    t = _random(seed, n=1, layers=layers, dim=dim, roles=[TokenRole.CLS])
    s = angular_speed(t)[TokenRole.CLS]
    g0 = directional_convergence(t)[TokenRole.CLS][0]
    assert s.sum() >= math.acos(max(-1.0, min(1.0, g0))) - 1e-12
    assert np.all((s >= 0) & (s <= math.pi))


def test_cos_beyond_tolerance_is_error(monkeypatch):
    import depthflow.metrics as m
    monkeypatch.setattr(m, "_cos", lambda a, b: np.full(a.shape[:-1], 1.0 + 1e-6))
    with pytest.raises(NumericalError):
        m.angular_speed(_random(0))


def test_rank_examples():
    g = np.random.default_rng(0)
    u = np.outer(g.standard_normal(7), g.standard_normal(4))
    assert abs(rank_measures(u)[0] - 1.0) < 1e-12
    flat = np.zeros((6, 5))
    flat[0, 0] = flat[1, 1] = flat[2, 2] = 2.0
    stable, eff = rank_measures(flat)
    assert abs(stable - 3) < 1e-9 and abs(eff - 3) < 1e-9
    with pytest.raises(NumericalError):
        rank_measures(np.zeros((3, 3)))


@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2 ** 32 - 1))
def test_rank_bounds(rows, cols, seed):
    u = np.random.default_rng(seed).standard_normal((rows, cols))
    stable, eff = rank_measures(u)
    top = min(rows, cols)
    assert 1 - 1e-12 <= stable <= top + 1e-9
    assert 1 - 1e-12 <= eff <= top + 1e-9
    sigma = np.linalg.svd(u, compute_uv=False)
    assert abs(stable - (u * u).sum() / sigma[0] ** 2) < 1e-10


def test_zero_update_rank_error():
    t = _single([[1.0, 0.0], [2.0, 0.0]])
    with pytest.raises(NumericalError):
        update_rank(t, 0)


def test_coherence_cases():
    # identical patch updates
    x = np.zeros((1, 2, 3, 2))
    x[0, 0, :] = [1.0, 0.0]
    x[0, 1, :] = [0.0, 1.0]
    assert coherence(Trajectory(x, make_roles(0, 2)), 0) == 1.0
    # opposite updates cancel
    y = np.zeros((1, 2, 3, 2))
    y[0, :, 0] = [[1.0, 1.0], [1.0, 1.0]]
    y[0, 0, 1], y[0, 1, 1] = [1.0, 0.0], [0.0, 1.0]
    y[0, 0, 2], y[0, 1, 2] = [-1.0, 0.0], [0.0, -1.0]
    with pytest.raises(NumericalError):
        coherence(Trajectory(y, make_roles(0, 2)), 0)
    # single patch token
    z = _random(4, roles=make_roles(0, 1))
    for layer in range(z.depth):
        assert coherence(z, layer) == 1.0


def test_r2_examples():
    t = _random(5)
    assert alignment_r2(t, t) == 1.0
    shifted = t.with_data(2 * t.data + 3)
    assert abs(alignment_r2(shifted, t) - 1.0) < 1e-12
    g = np.random.default_rng(9)
    teacher = Trajectory(g.standard_normal((4, 2, len(ROLES), 512)), ROLES)
    noise = Trajectory(g.standard_normal((4, 2, len(ROLES), 512)), ROLES)
    assert 0.0 <= alignment_r2(noise, teacher) < 0.05
    with pytest.raises(ValueError):
        alignment_r2(_random(0, n=2), teacher)


def test_layer_cosine_identity():
    t = _random(6)
    assert abs(layer_cosine(t, t, layer=3) - 1.0) < 1e-15


def test_mean_norms():
    t = _single([[3.0, 4.0], [0.0, 2.0]])
    assert mean_norms(t)[TokenRole.CLS].tolist() == [5.0, 2.0]


def test_report_shape_and_serialization():
    t = _random(7)
    rep = dynamics_report(t)
    rows = list(rep.rows())
    assert len(rows) == t.n_layers * 3
    assert set(rows[0]) == {"layer", "role", *FIELDS}
    for role, cols in rep.tables.items():
        assert cols["gamma"][-1] == 1.0
        assert math.isnan(cols["angular_speed"][-1]) and math.isnan(cols["stable_rank"][-1])
        assert np.all(cols["stable_rank"][:-1] <= min(t.n_samples * t.role_mask([role]).sum(), t.dim) + 1e-9)
    csv_text = rep.to_csv()
    assert csv_text.splitlines()[0] == "layer,role," + ",".join(FIELDS)
    import json
    doc = json.loads(rep.to_json())
    assert doc["roles"]["cls"]["angular_speed"][-1] is None
