"""Nominal-subspace anomaly detector.

A packet (column ``y``) is projected onto the span of the nominal low-rank
part ``L0``; the residual ``y - P y`` is its anomaly vector and the packet
is flagged when the residual's largest absolute entry exceeds ``alpha``.
"""

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .features import EncoderSpec, FeatureMatrix
from .io import atomic_write_text
from .matfactor import as_matrix, numerical_rank, svd
from .rpca import RpcaConfig, nominal_lambda, rpca_decompose

logger = logging.getLogger(__name__)

MODEL_FORMAT = "netrpca-model"
MODEL_VERSION = 1
DEFAULT_GAMMA = 1e-6
DEFAULT_ALPHA = 1.0


class DegenerateModelError(ValueError):
    """The nominal fit kept no singular directions."""


class DimensionMismatchError(ValueError):
    pass


@dataclass
class NominalModel:
    basis: np.ndarray  # m x k, orthonormal columns
    gamma: float
    lam: float
    alpha: float = DEFAULT_ALPHA
    encoder: EncoderSpec | None = None
    fit_metadata: dict = field(default_factory=dict)
    encoder_fingerprint: str = ""

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.encoder is not None and not self.encoder_fingerprint:
            self.encoder_fingerprint = self.encoder.fingerprint()

    @property
    def n_components(self):
        return self.basis.shape[1]

    def with_alpha(self, alpha):
        return NominalModel(self.basis, self.gamma, self.lam, alpha, self.encoder,
                            dict(self.fit_metadata), self.encoder_fingerprint)

    def to_dict(self):
        m, k = self.basis.shape
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "lambda": None if np.isinf(self.lam) else float(self.lam),
            "gamma": float(self.gamma),
            "alpha": float(self.alpha),
            "encoder": None if self.encoder is None else self.encoder.to_dict(),
            "encoder_fingerprint": self.encoder_fingerprint,
            # row-major m x k
            "basis": {"rows": m, "cols": k, "data": [float(v) for v in self.basis.ravel()]},
            "fit_metadata": self.fit_metadata,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model format {d.get('format')!r} v{d.get('version')!r}")
        b = d["basis"]
        basis = np.asarray(b["data"], dtype=np.float64).reshape(b["rows"], b["cols"])
        enc = None if d["encoder"] is None else EncoderSpec.from_dict(d["encoder"])
        lam = float("inf") if d["lambda"] is None else d["lambda"]
        return cls(basis, d["gamma"], lam, d["alpha"], enc, d.get("fit_metadata", {}),
                   d.get("encoder_fingerprint", ""))

    def save(self, path):
        atomic_write_text(path, json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class DetectionReport:
    scores: np.ndarray
    flags: np.ndarray
    residual: np.ndarray
    packet_index: np.ndarray


def _basis_from(l, gamma):
    f = svd(l)
    s = f.singular_values
    if s.size == 0 or s[0] <= 0:
        return f.left_vectors[:, :0]
    keep = int(np.count_nonzero(s > gamma * s[0]))
    return f.left_vectors[:, :keep]


def fit_nominal(y0, lam, gamma=DEFAULT_GAMMA, rpca_config=None, encoder=None):
    """Fit the nominal subspace on attack-free training data ``y0``.

    Runs RPCA with coupling ``lam`` and keeps the left singular vectors of
    ``L0`` whose singular values exceed ``gamma * sigma_max``. The returned
    model has ``alpha`` at its default until trained.
    """
    fm = y0 if isinstance(y0, FeatureMatrix) else None
    y = as_matrix(fm.matrix if fm is not None else y0, "y0")
    if y.shape[1] == 0:
        raise ValueError("y0 has no columns")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    if rpca_config is None:
        rpca_config = RpcaConfig(lam=lam)
    elif rpca_config.lam != lam:
        rpca_config = RpcaConfig(**{**rpca_config.__dict__, "lam": lam})
    result = rpca_decompose(y, rpca_config)
    if not result.converged:
        logger.warning("nominal fit at lambda=%g did not converge", lam)
    basis = _basis_from(result.l, gamma)
    if basis.shape[1] == 0:
        raise DegenerateModelError(f"no singular values of L0 above gamma={gamma} at lambda={lam}")
    meta = result.summary()
    meta["method"] = "rpca"
    meta["sparse_fraction"] = float(np.count_nonzero(result.s)) / result.s.size
    fp = fm.fingerprint if fm is not None else ""
    return NominalModel(basis, float(gamma), float(lam), DEFAULT_ALPHA, encoder, meta,
                        fp if encoder is None else "")


def fit_pca(y0, k=None, gamma=DEFAULT_GAMMA, max_rank=None, encoder=None):
    """PCA analogue of ``fit_nominal``: basis from the truncated SVD of ``y0``.

    ``k`` fixes the dimension directly; otherwise singular values above
    ``gamma * sigma_max`` are kept, up to ``max_rank``. ``k = 0`` is allowed
    and yields an empty basis.
    """
    fm = y0 if isinstance(y0, FeatureMatrix) else None
    y = as_matrix(fm.matrix if fm is not None else y0, "y0")
    f = svd(y)
    if k is None:
        k = numerical_rank(f.singular_values, gamma) if gamma > 0 else int(np.count_nonzero(f.singular_values))
        if max_rank is not None:
            k = min(k, max_rank)
    if not 0 <= k <= f.singular_values.size:
        raise ValueError(f"k must lie in [0, {f.singular_values.size}], got {k}")
    meta = {"method": "pca", "rank": int(k)}
    fp = fm.fingerprint if fm is not None else ""
    return NominalModel(f.left_vectors[:, :k].copy(), float(gamma), float("inf"), DEFAULT_ALPHA,
                        encoder, meta, fp if encoder is None else "")


def score(ya, model):
    """Project ``ya`` onto the nominal subspace and score each column."""
    fm = ya if isinstance(ya, FeatureMatrix) else None
    y = as_matrix(fm.matrix if fm is not None else ya, "ya")
    m = model.basis.shape[0]
    if y.shape[0] != m:
        raise DimensionMismatchError(
            f"ya has {y.shape[0]} rows but model (encoder {model.encoder_fingerprint or 'unknown'}) "
            f"expects {m}")
    if fm is not None and fm.fingerprint and model.encoder_fingerprint \
            and fm.fingerprint != model.encoder_fingerprint:
        raise DimensionMismatchError(
            f"ya encoded with {fm.fingerprint}, model expects encoder {model.encoder_fingerprint}")
    b = model.basis
    residual = y - b @ (b.T @ y)
    scores = np.abs(residual).max(axis=0) if y.shape[1] else np.zeros(0)
    idx = fm.packet_index if fm is not None else np.arange(y.shape[1])
    return DetectionReport(scores, scores > model.alpha, residual, idx)


class RpcaAnomalyDetector(BaseEstimator):
    """Packet anomaly detector with a scikit-learn interface.

    ``fit`` takes attack-free traffic ``X`` of shape ``(n_packets, n_features)``.
    ``score_samples`` returns the residual infinity norm per packet and
    ``predict`` returns 1 for flagged packets, 0 otherwise.

    Parameters
    ----------
    lam : float or None
        RPCA coupling constant; ``None`` picks ``1/sqrt(max(m, n))``.
    method : {"rpca", "pca"}
        ``"pca"`` builds the basis from a plain truncated SVD.
    n_components : int or None
        Basis size for ``method="pca"``; ``None`` uses ``gamma``.
    """

    def __init__(self, lam=None, gamma=DEFAULT_GAMMA, alpha=DEFAULT_ALPHA, method="rpca",
                 n_components=None, epsilon=0.0, tol=1e-7, max_iter=1000, max_rank=40,
                 mu_init="auto", rho=1.5):
        self.lam = lam
        self.gamma = gamma
        self.alpha = alpha
        self.method = method
        self.n_components = n_components
        self.epsilon = epsilon
        self.tol = tol
        self.max_iter = max_iter
        self.max_rank = max_rank
        self.mu_init = mu_init
        self.rho = rho

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        n, m = X.shape
        if self.method == "pca":
            model = fit_pca(X.T, self.n_components, self.gamma, self.max_rank)
        elif self.method == "rpca":
            lam = nominal_lambda(m, n) if self.lam is None else self.lam
            cfg = RpcaConfig(lam=lam, epsilon=self.epsilon, tol=self.tol, max_iter=self.max_iter,
                             max_rank=self.max_rank, mu_init=self.mu_init, rho=self.rho)
            model = fit_nominal(X.T, lam, self.gamma, cfg)
        else:
            raise ValueError(f"method must be 'rpca' or 'pca', got {self.method!r}")
        self.model_ = model.with_alpha(self.alpha)
        self.components_ = self.model_.basis.T
        self.n_features_in_ = m
        return self

    def score_samples(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return score(X.T, self.model_).scores

    def decision_function(self, X):
        return self.score_samples(X) - self.alpha

    def predict(self, X):
        return (self.score_samples(X) > self.alpha).astype(int)
