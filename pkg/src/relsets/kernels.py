"""Hot numeric kernels with an optional numba path.

Task generation and the ranking evaluations spend most of their time
computing cosine distances from one reference vector to large candidate
pools. Those loops are jitted with numba unless RELSETS_DISABLE_NUMBA is
set, in which case the pure-numpy implementations below are used.
benchmarks/bench_kernels.py compares the two paths.
"""

from __future__ import annotations

import os

import numpy as np

NUMBA_DISABLED = os.environ.get("RELSETS_DISABLE_NUMBA", "").lower() in (
    "1",
    "true",
    "yes",
)


def _cosine_distances_numpy(ref: np.ndarray, mat: np.ndarray) -> np.ndarray:
    ref_norm = np.linalg.norm(ref)
    norms = np.linalg.norm(mat, axis=1)
    return 1.0 - (mat @ ref) / (norms * ref_norm)


def _pairwise_cosine_distances_numpy(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1)
    sims = (mat @ mat.T) / np.outer(norms, norms)
    return 1.0 - sims


if not NUMBA_DISABLED:
    from numba import njit, prange

    @njit(cache=True, parallel=True)
    def _cosine_distances_numba(ref, mat):  # pragma: no cover - jitted
        m, d = mat.shape
        ref_norm = 0.0
        for j in range(d):
            ref_norm += ref[j] * ref[j]
        ref_norm = np.sqrt(ref_norm)
        out = np.empty(m)
        for i in prange(m):
            dot = 0.0
            sq = 0.0
            for j in range(d):
                dot += mat[i, j] * ref[j]
                sq += mat[i, j] * mat[i, j]
            out[i] = 1.0 - dot / (np.sqrt(sq) * ref_norm)
        return out

    @njit(cache=True, parallel=True)
    def _pairwise_cosine_distances_numba(mat):  # pragma: no cover - jitted
        m, d = mat.shape
        norms = np.empty(m)
        for i in range(m):
            sq = 0.0
            for j in range(d):
                sq += mat[i, j] * mat[i, j]
            norms[i] = np.sqrt(sq)
        out = np.empty((m, m))
        for i in prange(m):
            for k in range(m):
                dot = 0.0
                for j in range(d):
                    dot += mat[i, j] * mat[k, j]
                out[i, k] = 1.0 - dot / (norms[i] * norms[k])
        return out


def cosine_distances(ref: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """Cosine distance from ``ref`` to every row of ``mat``.

    Callers must guarantee nonzero norms; see embed.cosine_distance for the
    checked scalar version.
    """
    ref = np.ascontiguousarray(ref, dtype=np.float64)
    mat = np.ascontiguousarray(mat, dtype=np.float64)
    if NUMBA_DISABLED:
        return _cosine_distances_numpy(ref, mat)
    return _cosine_distances_numba(ref, mat)


def pairwise_cosine_distances(mat: np.ndarray) -> np.ndarray:
    """All-pairs cosine distances between the rows of ``mat``.

    Always uses the numpy path: the benchmark shows BLAS beats the jitted
    loop on the all-pairs matmul, so numba is reserved for the
    one-reference-to-pool case above.
    """
    mat = np.ascontiguousarray(mat, dtype=np.float64)
    return _pairwise_cosine_distances_numpy(mat)
