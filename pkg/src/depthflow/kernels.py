"""Inner loops for segmentation, with a numba path and a NumPy path.

``dp_table`` and ``cosine_gram`` dispatch to the numba versions unless numba is
missing or ``DEPTHFLOW_NO_NUMBA`` is set. Both DP paths perform the same
floating-point operations in the same order, so their tables agree bit for bit.
"""
import numpy as np

from ._accel import HAVE_NUMBA, njit

SCORE_MEAN = 0
SCORE_OFFDIAG = 1


def prefix_tables(s):
    """2-D summed-area table P[r, c] = sum_{u<r, v<c} S[u, v] and 1-D diagonal prefix."""
    s = np.asarray(s, dtype=np.float64)
    n = s.shape[0]
    p = np.zeros((n + 1, n + 1))
    p[1:, 1:] = s.cumsum(axis=0).cumsum(axis=1)
    diag = np.zeros(n + 1)
    diag[1:] = np.cumsum(np.diag(s))
    return p, diag


def _dp_loop(p, diag, k, min_len, mode):
    n = p.shape[0] - 1
    dp = np.full((k + 1, n + 1), -np.inf)
    for j in range(min_len, n + 1):
        tot = p[j, j] - p[0, j] - p[j, 0] + p[0, 0]
        if mode == 1:
            tot = tot - (diag[j] - diag[0])
        dp[1, j] = tot / (j * j)
    for t in range(2, k + 1):
        for j in range(t * min_len, n + 1):
            best = -np.inf
            for i in range((t - 1) * min_len, j - min_len + 1):
                tot = p[j, j] - p[i, j] - p[j, i] + p[i, i]
                if mode == 1:
                    tot = tot - (diag[j] - diag[i])
                v = dp[t - 1, i] + tot / ((j - i) * (j - i))
                if v > best:
                    best = v
            dp[t, j] = best
    return dp


def dp_table_numpy(p, diag, k, min_len, mode=SCORE_MEAN):
    """dp[t, j] = best score for splitting layers 1..j into t segments (-inf if infeasible)."""
    n = p.shape[0] - 1
    dp = np.full((k + 1, n + 1), -np.inf)
    j = np.arange(min_len, n + 1)
    tot = p[j, j] - p[0, j] - p[j, 0] + p[0, 0]
    if mode == SCORE_OFFDIAG:
        tot = tot - (diag[j] - diag[0])
    dp[1, j] = tot / (j * j)
    for t in range(2, k + 1):
        for jj in range(t * min_len, n + 1):
            i = np.arange((t - 1) * min_len, jj - min_len + 1)
            tot = p[jj, jj] - p[i, jj] - p[jj, i] + p[i, i]
            if mode == SCORE_OFFDIAG:
                tot = tot - (diag[jj] - diag[i])
            dp[t, jj] = np.max(dp[t - 1, i] + tot / ((jj - i) * (jj - i)))
    return dp


def _gram_loop(x):
    n, layers, tokens, dim = x.shape
    g = np.zeros((layers, layers))
    for s in range(n):
        for a in range(layers):
            for b in range(a, layers):
                acc = 0.0
                for t in range(tokens):
                    for d in range(dim):
                        acc += x[s, a, t, d] * x[s, b, t, d]
                g[a, b] += acc
    for a in range(layers):
        for b in range(a + 1, layers):
            g[b, a] = g[a, b]
    return g / (n * tokens)


def cosine_gram_numpy(x):
    """Mean over samples and tokens of <x[s, a, t], x[s, b, t]> for unit-norm states."""
    n, _, tokens, _ = x.shape
    return np.einsum("satd,sbtd->ab", x, x, optimize=True) / (n * tokens)


dp_table_jit = njit(_dp_loop)
cosine_gram_jit = njit(_gram_loop)


def dp_table(p, diag, k, min_len, mode=SCORE_MEAN):
    if HAVE_NUMBA:
        return dp_table_jit(np.ascontiguousarray(p), np.ascontiguousarray(diag), int(k), int(min_len), int(mode))
    return dp_table_numpy(p, diag, k, min_len, mode)


def cosine_gram(x):
    if HAVE_NUMBA:
        return cosine_gram_jit(np.ascontiguousarray(x, dtype=np.float64))
    return cosine_gram_numpy(x)
