"""Phase discovery: layer-layer cosine similarity and contiguous max-cut segmentation.

The objective for a partition into segments [b_t, e_t] is sum_t g(b_t, e_t)
with g the mean similarity inside the segment block, sum(i, j) / n**2. The
optimum is found by the O(k n^2) prefix-sum dynamic program in
:func:`depthflow.kernels.dp_table`. Layers are 1-based and inclusive here.
"""
import math
from itertools import combinations

import numpy as np

from . import kernels
from .errors import DataError, ZeroNormError
from .partition import Partition
from .rng import SplitMix64

SCORES = {"mean": kernels.SCORE_MEAN, "offdiag": kernels.SCORE_OFFDIAG}


def _unit_states(data):
    norms = np.linalg.norm(data, axis=-1)
    bad = np.argwhere(norms == 0.0)
    if bad.size:
        s, layer, tok = (int(v) for v in bad[0])
        raise ZeroNormError(f"zero-norm state at sample {s}, layer {layer}, token {tok}")
    return data / norms[..., None]


def similarity_matrix(traj, roles=None):
    """Mean cosine between each token's states at layers l and m, over samples and
    the selected tokens, symmetrized. Covers every stored layer, 0..L."""
    mask = traj.role_mask(roles)
    if not mask.any():
        raise DataError("no tokens match the requested roles")
    x = _unit_states(traj.data[:, :, mask, :])
    s = kernels.cosine_gram(x)
    return 0.5 * (s + s.T)


def similarity_matrix_naive(traj, roles=None):
    """Direct quadruple loop over samples, layer pairs and tokens; reference only."""
    mask = traj.role_mask(roles)
    idx = np.flatnonzero(mask)
    n, layers = traj.n_samples, traj.n_layers
    s = np.zeros((layers, layers))
    for a in range(layers):
        for b in range(layers):
            acc = 0.0
            for i in range(n):
                for t in idx:
                    u, v = traj.data[i, a, t], traj.data[i, b, t]
                    acc += float(u @ v) / (np.linalg.norm(u) * np.linalg.norm(v))
            s[a, b] = acc / (n * len(idx))
    return 0.5 * (s + s.T)


class PrefixTable:
    """Summed-area table over a similarity matrix with O(1) block-sum queries."""

    def __init__(self, s):
        s = np.asarray(s, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise DataError(f"similarity matrix must be square, got {s.shape}")
        self.n = s.shape[0]
        self.table, self.diag_prefix = kernels.prefix_tables(s)

    def sum(self, i, j):
        """Sum of S over rows and columns i..j (1-based, inclusive)."""
        p, a = self.table, i - 1
        return p[j, j] - p[a, j] - p[j, a] + p[a, a]

    def offdiag(self, i, j):
        return self.sum(i, j) - (self.diag_prefix[j] - self.diag_prefix[i - 1])


def build_prefix(s):
    return PrefixTable(s)


def segment_score(prefix, i, j, score="mean"):
    """g(i, j) = sum(i, j) / (j - i + 1)**2, or the off-diagonal sum over the same
    denominator when ``score == "offdiag"``."""
    if not 1 <= i <= j <= prefix.n:
        raise ValueError(f"need 1 <= i <= j <= {prefix.n}, got ({i}, {j})")
    tot = prefix.sum(i, j) if score == "mean" else prefix.offdiag(i, j)
    return tot / ((j - i + 1) * (j - i + 1))


def maxcut_segment(s, k, min_len=1, score="mean"):
    """Best contiguous k-partition of layers 1..n with segments of length >= min_len.

    Ties in the objective resolve to the lexicographically smallest vector of
    segment ends.
    """
    s = np.asarray(s, dtype=np.float64)
    n = s.shape[0]
    if k < 1 or min_len < 1:
        raise DataError("k and min_len must be >= 1")
    if k * min_len > n:
        raise DataError(f"cannot split {n} layers into {k} segments of length >= {min_len}")
    mode = SCORES[score]
    prefix = PrefixTable(s)
    p, diag = prefix.table, prefix.diag_prefix
    dp = kernels.dp_table(p, diag, k, min_len, mode)

    def g(i, j):  # prefix end i, segment i+1..j; same arithmetic as the kernels
        tot = p[j, j] - p[i, j] - p[j, i] + p[i, i]
        if mode == kernels.SCORE_OFFDIAG:
            tot = tot - (diag[j] - diag[i])
        return tot / ((j - i) * (j - i))

    # nodes (t, j) lying on at least one optimal path to (k, n)
    on_path = np.zeros((k + 1, n + 1), dtype=bool)
    on_path[k, n] = True
    for t in range(k, 1, -1):
        for j in np.flatnonzero(on_path[t]):
            for i in range((t - 1) * min_len, j - min_len + 1):
                if dp[t - 1, i] + g(i, j) == dp[t, j]:
                    on_path[t - 1, i] = True

    ends, prev = [], 0
    for t in range(1, k + 1):
        for j in range(prev + min_len, n + 1):
            if on_path[t, j] and (t == 1 or dp[t - 1, prev] + g(prev, j) == dp[t, j]):
                ends.append(j)
                prev = j
                break
    segs, start = [], 1
    for e in ends:
        segs.append((start, e))
        start = e + 1
    return Partition(tuple(segs), float(dp[k, n]))


def segment_trajectory(traj, k, min_len=1, roles=None, score="mean"):
    """Similarity over stored layers, then segmentation of block layers 1..L (layer 0 dropped)."""
    s = similarity_matrix(traj, roles)
    return maxcut_segment(s[1:, 1:], k, min_len, score), s


def partition_score(s, partition, score="mean"):
    """Objective value of any partition, contiguous or a shuffled grouping."""
    if partition.contiguous:
        prefix = PrefixTable(s)
        total = 0.0
        for b, e in partition.segments:
            total = total + segment_score(prefix, b, e, score)
        return total
    s = np.asarray(s, dtype=np.float64)
    total = 0.0
    for members in partition.members():
        idx = np.asarray(members) - 1
        block = s[np.ix_(idx, idx)]
        tot = block.sum() - (np.trace(block) if score == "offdiag" else 0.0)
        total += tot / (len(idx) * len(idx))
    return total


def _same_grouping(a, b):
    return [set(m) for m in a.members()] == [set(m) for m in b.members()]


def random_partitions(n, k, contiguous=True, count=10, seed=0, exclude=None):
    """Seeded random k-partitions of layers 1..n.

    Contiguous draws are uniform over the C(n-1, k-1) cut sets. Shuffled draws
    pick group sizes the same way, then deal a random permutation of the layers
    into those groups; ``segments`` then reports the sizes as a schedule.
    """
    if not 1 <= k <= n:
        raise DataError(f"need 1 <= k <= n, got k={k}, n={n}")
    if contiguous and exclude is not None and math.comb(n - 1, k - 1) <= 1:
        raise DataError("excluding the only contiguous partition leaves nothing to sample")
    rng = SplitMix64(seed)
    out, attempts = [], 0
    while len(out) < count:
        attempts += 1
        if attempts > 1000 * max(count, 1):
            raise DataError("could not draw enough distinct random partitions")
        cuts = np.sort(rng.permutation(n - 1)[:k - 1] + 1)
        bounds = np.concatenate([[0], cuts, [n]])
        sizes = np.diff(bounds)
        part = Partition.from_schedule(sizes)
        if not contiguous:
            perm = rng.permutation(n) + 1
            groups = tuple(tuple(perm[bounds[j]:bounds[j + 1]]) for j in range(k))
            part = Partition(part.segments, math.nan, groups)
        if exclude is not None and _same_grouping(part, exclude):
            continue
        out.append(part)
    return out


def baseline_comparison(s, k, min_len=1, count=10, seed=0, score="mean"):
    """Max-cut score against contiguous and shuffled random partitions (max-cut excluded)."""
    best = maxcut_segment(s, k, min_len, score)
    n = np.asarray(s).shape[0]
    out = {"maxcut": best.to_dict()}
    for name, contiguous in (("contiguous", True), ("shuffled", False)):
        try:
            parts = random_partitions(n, k, contiguous, count, seed, exclude=best)
        except DataError:
            parts = []
        scores = [float(partition_score(s, p, score)) for p in parts]
        out[name] = {
            "scores": scores,
            "schedules": [list(p.schedule) for p in parts],
            "mean": float(np.mean(scores)) if scores else None,
            "std": float(np.std(scores)) if scores else None,
        }
    return out


def exhaustive_segment(s, k, min_len=1, score="mean"):
    """Enumerate all contiguous k-partitions (small n only).

    Scores sum g left to right through the same prefix table as the DP, so the
    optimal values are comparable exactly; lexicographic order of the cut sets
    gives the same tie-breaking.
    """
    s = np.asarray(s, dtype=np.float64)
    n = s.shape[0]
    prefix = PrefixTable(s)
    best, best_segs = -math.inf, None
    for cuts in combinations(range(1, n), k - 1):
        bounds = (0,) + cuts + (n,)
        if any(bounds[t + 1] - bounds[t] < min_len for t in range(k)):
            continue
        total = 0.0
        for t in range(k):
            total = total + segment_score(prefix, bounds[t] + 1, bounds[t + 1], score)
        if total > best:
            best = total
            best_segs = tuple((bounds[t] + 1, bounds[t + 1]) for t in range(k))
    if best_segs is None:
        raise DataError("no feasible partition")
    return Partition(best_segs, best)
