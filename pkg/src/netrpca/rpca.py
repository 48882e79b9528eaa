"""Stable principal component pursuit by inexact augmented Lagrangian.

Solves::

    min ||L||_* + lam * ||S||_1   s.t.  |Y - (L + S)| <= eps  (elementwise)

with the box constraint carried by an explicit slack ``E``. Every sweep
performs the exact proximal step for each block::

    L <- svt(Y - S - E + Lam/mu, 1/mu, max_rank)
    S <- shrink(Y - L - E + Lam/mu, lam/mu)
    E <- clip(Y - L - S + Lam/mu, -eps, eps)
    Lam <- Lam + mu * (Y - L - S - E)
    mu <- min(rho * mu, mu_max)
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .matfactor import RANK_RTOL, as_matrix, numerical_rank, shrink_matrix, svt

logger = logging.getLogger(__name__)

# mu stops growing at this multiple of its initial value
MU_GROWTH_CAP = 1e7


def nominal_lambda(m, n):
    """The recovery-theory coupling constant ``1 / sqrt(max(m, n))``."""
    if m < 1 or n < 1:
        raise ValueError(f"dimensions must be positive, got ({m}, {n})")
    return 1.0 / np.sqrt(max(m, n))


@dataclass
class RpcaConfig:
    lam: float
    epsilon: object = 0.0  # scalar or per-entry array
    tol: float = 1e-7
    max_iter: int = 1000
    max_rank: int = 40
    mu_init: object = "auto"
    rho: float = 1.5

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if int(self.max_iter) < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if int(self.max_rank) < 0:
            raise ValueError(f"max_rank must be >= 0, got {self.max_rank}")
        if not self.rho > 1:
            raise ValueError(f"rho must exceed 1, got {self.rho}")
        if self.mu_init != "auto" and not float(self.mu_init) > 0:
            raise ValueError(f"mu_init must be positive or 'auto', got {self.mu_init}")
        eps = np.asarray(self.epsilon, dtype=np.float64)
        if not np.all(np.isfinite(eps)) or np.any(eps < 0):
            raise ValueError("epsilon entries must be finite and nonnegative")

    def to_dict(self):
        eps = self.epsilon
        if np.ndim(eps) != 0:
            eps = "per-entry"
        else:
            eps = float(eps)
        return {
            "lam": float(self.lam),
            "epsilon": eps,
            "tol": float(self.tol),
            "max_iter": int(self.max_iter),
            "max_rank": int(self.max_rank),
            "mu_init": self.mu_init if self.mu_init == "auto" else float(self.mu_init),
            "rho": float(self.rho),
        }


@dataclass
class RpcaResult:
    l: np.ndarray
    s: np.ndarray
    e: np.ndarray
    singular_values: np.ndarray
    iterations: int
    converged: bool
    final_residual: float
    history: list = field(default_factory=list, repr=False)

    @property
    def rank(self):
        return rank_of(self)

    def summary(self):
        return {
            "rank": self.rank,
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "final_residual": float(self.final_residual),
        }


def rank_of(result, rel_cutoff=RANK_RTOL):
    """Number of singular values of ``result.l`` above ``rel_cutoff * max``."""
    if not 0 < rel_cutoff < 1:
        raise ValueError("rel_cutoff must lie in (0, 1)")
    return numerical_rank(result.singular_values, rel_cutoff)


def augmented_lagrangian(y, l, s, e, multiplier, mu, lam, sv=None):
    """Value of the augmented Lagrangian at one iterate."""
    if sv is None:
        sv = np.linalg.svd(l, compute_uv=False)
    r = y - l - s - e
    return (
        float(np.sum(sv))
        + lam * float(np.abs(s).sum())
        + float(np.sum(multiplier * r))
        + 0.5 * mu * float(np.sum(r * r))
    )


def rpca_decompose(y, config, record_history=False):
    """Split ``y`` into low-rank ``l``, sparse ``s`` and bounded slack ``e``.

    Non-convergence within ``config.max_iter`` is not an error; the result
    carries ``converged=False``. With ``record_history`` each iteration
    appends the augmented Lagrangian before and after its block updates,
    both evaluated at that iteration's multiplier and penalty.
    """
    y = as_matrix(y)
    m, n = y.shape
    eps = np.broadcast_to(np.asarray(config.epsilon, dtype=np.float64), y.shape)
    max_rank = min(int(config.max_rank), m, n)
    lam = float(config.lam)

    zeros = np.zeros_like(y)
    y_fro = np.linalg.norm(y)
    if y_fro == 0.0:
        return RpcaResult(zeros, zeros.copy(), zeros.copy(), np.zeros(min(m, n)), 0, True, 0.0)

    norm_two = np.linalg.norm(y, 2)
    multiplier = y / max(norm_two, np.abs(y).max() / lam)
    mu = 1.25 / norm_two if config.mu_init == "auto" else float(config.mu_init)
    mu_max = mu * MU_GROWTH_CAP

    l = zeros.copy()
    s = zeros.copy()
    e = zeros.copy()
    sv = np.zeros(min(m, n))
    history = []
    residual = np.inf
    converged = False
    it = 0
    while it < config.max_iter:
        it += 1
        scaled = multiplier / mu
        if record_history:
            before = augmented_lagrangian(y, l, s, e, multiplier, mu, lam, sv)
        l, sv = svt(y - s - e + scaled, 1.0 / mu, max_rank)
        s = shrink_matrix(y - l - e + scaled, lam / mu)
        e = np.clip(y - l - s + scaled, -eps, eps)
        if record_history:
            history.append((before, augmented_lagrangian(y, l, s, e, multiplier, mu, lam, sv)))
        r = y - l - s - e
        multiplier = multiplier + mu * r
        mu = min(config.rho * mu, mu_max)
        residual = np.linalg.norm(r) / y_fro
        if residual < config.tol:
            converged = True
            break

    if not converged:
        logger.warning(
            "RPCA stopped at max_iter=%d with relative residual %.3g", config.max_iter, residual
        )
    return RpcaResult(l, s, e, sv, it, converged, float(residual), history)


class RobustPCA(TransformerMixin, BaseEstimator):
    """Robust PCA as a scikit-learn transformer.

    ``X`` follows the scikit-learn orientation (one row per sample). The
    decomposition runs on ``X.T``; ``low_rank_`` and ``sparse_`` are
    transposed back to the layout of ``X``, and ``components_`` holds the
    retained directions of the low-rank part, one per row.

    Parameters
    ----------
    lam : float or None
        Coupling constant. ``None`` uses ``nominal_lambda`` of the data.
    gamma : float
        Relative singular-value cutoff for the retained components.
    """

    def __init__(self, lam=None, epsilon=0.0, tol=1e-7, max_iter=1000, max_rank=40,
                 mu_init="auto", rho=1.5, gamma=1e-6):
        self.lam = lam
        self.epsilon = epsilon
        self.tol = tol
        self.max_iter = max_iter
        self.max_rank = max_rank
        self.mu_init = mu_init
        self.rho = rho
        self.gamma = gamma

    def _config(self, lam):
        return RpcaConfig(lam=lam, epsilon=self.epsilon, tol=self.tol, max_iter=self.max_iter,
                          max_rank=self.max_rank, mu_init=self.mu_init, rho=self.rho)

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        n_samples, n_features = X.shape
        lam = nominal_lambda(n_features, n_samples) if self.lam is None else self.lam
        result = rpca_decompose(X.T, self._config(lam))
        u, s, _ = np.linalg.svd(result.l, full_matrices=False)
        keep = s > self.gamma * s.max() if s.size and s.max() > 0 else np.zeros(s.size, bool)
        self.lam_ = lam
        self.low_rank_ = result.l.T
        self.sparse_ = result.s.T
        self.singular_values_ = result.singular_values
        self.components_ = u[:, keep].T
        self.n_components_ = int(keep.sum())
        self.n_iter_ = result.iterations
        self.converged_ = result.converged
        self.n_features_in_ = n_features
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X, dtype=np.float64)
        return X @ self.components_.T

    def inverse_transform(self, X):
        check_is_fitted(self, "components_")
        return np.asarray(X) @ self.components_
