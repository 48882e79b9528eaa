"""Dense matrix factorization primitives: SVD, truncation, shrinkage, SVT."""

from dataclasses import dataclass

import numpy as np

# singular values below this fraction of sigma_max count as zero when reporting rank
RANK_RTOL = 1e-12


class NumericalError(RuntimeError):
    """Raised when a factorization fails to converge."""


@dataclass(frozen=True)
class SvdFactors:
    left_vectors: np.ndarray  # m x r, orthonormal columns
    singular_values: np.ndarray  # length r, nonincreasing
    right_vectors_t: np.ndarray  # r x n, orthonormal rows

    def reconstruct(self):
        return (self.left_vectors * self.singular_values) @ self.right_vectors_t


def as_matrix(y, name="y"):
    """Return ``y`` as a 2-D float64 array, rejecting NaN/Inf."""
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def svd(y):
    """Thin SVD with a deterministic sign convention.

    The first nonzero entry of every left singular vector is made
    nonnegative (the matching right vector is flipped with it), so factors
    of the same input compare equal.
    """
    y = as_matrix(y)
    m, n = y.shape
    r = min(m, n)
    if r == 0:
        return SvdFactors(np.zeros((m, 0)), np.zeros(0), np.zeros((0, n)))
    try:
        u, s, vt = np.linalg.svd(y, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(s)) and np.all(np.isfinite(vt))):
        raise NumericalError("SVD produced non-finite factors")
    u = u.copy()
    vt = vt.copy()
    for j in range(r):
        col = u[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-14)
        if nz.size and col[nz[0]] < 0:
            u[:, j] = -col
            vt[j, :] = -vt[j, :]
    return SvdFactors(u, s, vt)


def numerical_rank(singular_values, rel_cutoff=RANK_RTOL):
    s = np.asarray(singular_values, dtype=np.float64)
    if s.size == 0 or s.max() <= 0:
        return 0
    return int(np.count_nonzero(s > rel_cutoff * s.max()))


def pca_truncate(y, k):
    """Best rank-``k`` approximation of ``y`` and its subspace coordinates.

    Returns ``(l, x)`` where ``l = U_k @ x`` and ``x = diag(s_k) @ Vt_k`` has
    exactly ``k`` rows.
    """
    y = as_matrix(y)
    r = min(y.shape)
    if not 0 <= k <= r:
        raise ValueError(f"k must lie in [0, {r}], got {k}")
    f = svd(y)
    x = f.singular_values[:k, None] * f.right_vectors_t[:k]
    l = f.left_vectors[:, :k] @ x
    return l, x


def shrink(x, tau):
    """Soft-thresholding: ``sign(x) * max(|x| - tau, 0)``."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def shrink_matrix(x, tau):
    return shrink(np.asarray(x, dtype=np.float64), tau)


def svt(m, tau, max_rank=None):
    """Singular value thresholding with a rank cap.

    Keeps at most ``max_rank`` of the largest singular values, shrinks them
    by ``tau`` and rebuilds the matrix. Returns ``(result, shrunk_values)``;
    ``shrunk_values`` has length ``min(m.shape)`` with zeros past the cap.
    """
    m = as_matrix(m, "m")
    r = min(m.shape)
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if max_rank is None:
        max_rank = r
    if not 0 <= max_rank <= r:
        raise ValueError(f"max_rank must lie in [0, {r}], got {max_rank}")
    f = svd(m)
    shrunk = np.maximum(f.singular_values - tau, 0.0)
    shrunk[max_rank:] = 0.0
    keep = int(np.count_nonzero(shrunk))
    result = (f.left_vectors[:, :keep] * shrunk[:keep]) @ f.right_vectors_t[:keep]
    return result, shrunk
