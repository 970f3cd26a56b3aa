import numpy as np
import pytest

import oracles
from depthflow.partition import Partition
from depthflow.rng import SplitMix64
from depthflow.surrogate import (Block, SurrogateModel, layer_stack, layer_swap_eval, noisy_tied_stack,
                                 perturb_rollout, run_stack, sensitivity_profile)
from depthflow.surrogate.probes import apply_swaps, draw_swaps
from depthflow.synthetic import random_teacher
from depthflow.trajectory import make_roles


def _contractive(seed=0, dim=6, depth=10, rho=0.8):
    rng = SplitMix64(seed)
    q = np.linalg.qr(rng.normal((dim, dim)))[0]
    blk = Block("affine", {"weight": rho * q, "bias": 0.3 * rng.normal((dim,))})
    return SurrogateModel([blk], Partition.from_schedule((depth,)))


def test_zero_epsilon():
    m = _contractive()
    a0 = SplitMix64(1).normal((4, 3, 6))
    res = perturb_rollout(m, a0, 3, 0.0, seed=2)
    assert np.all(res.d_cos == 0) and res.sensitivity["all"] == 0.0
    assert np.array_equal(res.perturbed, res.baseline)


def test_injection_at_final_layer():
    m = _contractive()
    a0 = SplitMix64(1).normal((2, 3, 6))
    eps = 1e-2
    res = perturb_rollout(m, a0, m.depth, eps, seed=5)
    u = SplitMix64(5).normal(a0.shape)
    xl = res.baseline[:, -1]
    pert = xl + eps * u
    for i in range(2):
        for t in range(3):
            direct = 1 - oracles.cos(list(pert[i, t]), list(xl[i, t]))
            assert abs(res.d_cos[i, t] - direct) < 1e-15


def test_perturbation_prefix_untouched_and_roles():
    m = _contractive()
    a0 = SplitMix64(0).normal((2, 4, 6))
    roles = make_roles(1, 2)
    res = perturb_rollout(m, a0, 4, 1e-3, seed=1, roles=roles)
    assert np.array_equal(res.perturbed[:, :4], res.baseline[:, :4])
    assert set(res.sensitivity) == {"all", "cls", "register", "patch"}
    with pytest.raises(IndexError):
        perturb_rollout(m, a0, 11, 1e-3, seed=1)


def test_contractive_sensitivity_decreases_with_remaining_depth():
    m = _contractive(depth=12, rho=0.7)
    a0 = SplitMix64(3).normal((8, 4, 6))
    prof = sensitivity_profile(m, a0, 1e-4, seed=9)
    remaining = [m.depth - layer for layer in prof]
    sens = [prof[layer]["all"] for layer in prof]
    assert oracles.spearman(remaining, sens) < -0.9
    # roughly log-linear: successive ratios stay near a constant
    logs = np.log(sens[:-1])
    slope = np.polyfit(np.array(remaining[:-1], float), logs, 1)[0]
    assert slope < 0


def test_swap_with_itself_is_zero():
    spec = random_teacher(4, (3, 3), n_patches=2, seed=1)
    stack = noisy_tied_stack(spec.model(), 0.05, seed=0)
    a0 = SplitMix64(0).normal((5, 3, 4))
    from depthflow.surrogate.probes import final_relative_error
    assert final_relative_error(apply_swaps(stack, {2: 2, 5: 5}), stack, a0) == 0.0


def test_exactly_tied_teacher():
    spec = random_teacher(4, (4, 3), n_patches=2, bias_scale=0.5, seed=2)
    part = spec.partition()
    a0 = SplitMix64(0).normal((6, 3, 4))
    for seed in range(5):
        assert layer_swap_eval(spec.model(), part, 2, "intra", a0, seed) == 0.0
        assert layer_swap_eval(spec.model(), part, 2, "inter", a0, seed) > 0.0


def test_draw_swaps_modes():
    part = Partition.from_schedule((3, 1, 4))
    owner = {l: j for j, mem in enumerate(part.members()) for l in mem}
    rng = SplitMix64(0)
    for _ in range(50):
        intra = draw_swaps(part, 3, "intra", rng)
        assert all(owner[t] == owner[d] and t != d for t, d in intra.items())
        assert 4 not in intra  # singleton segment has no intra donor
        inter = draw_swaps(part, 3, "inter", rng)
        assert all(owner[t] != owner[d] for t, d in inter.items())
    with pytest.raises(ValueError):
        draw_swaps(Partition.from_schedule((5,)), 1, "inter", rng)
    with pytest.raises(ValueError):
        draw_swaps(part, 1, "sideways", rng)


def test_noisy_tied_intra_below_inter():
    wins = 0
    for trial in range(10):
        spec = random_teacher(6, (5, 4), n_patches=3, radius=0.85, bias_scale=0.25, seed=50 + trial)
        stack = noisy_tied_stack(spec.model(), 0.05, seed=trial)
        a0 = SplitMix64(trial).normal((16, 4, 6))
        intra = layer_swap_eval(stack, spec.partition(), 1, "intra", a0, trial)
        inter = layer_swap_eval(stack, spec.partition(), 1, "inter", a0, trial)
        wins += intra < inter
    assert wins == 10


def test_layer_stack_and_run():
    m = _contractive(depth=4)
    stack = layer_stack(m)
    a0 = SplitMix64(0).normal((3, 6))
    assert np.array_equal(run_stack(stack, a0)[1:], m.rollout(a0))
