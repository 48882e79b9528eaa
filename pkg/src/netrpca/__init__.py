"""Robust-PCA anomaly detection for packet traces."""

__version__ = "0.1.0"

from .detector import NominalModel, RpcaAnomalyDetector, fit_nominal, fit_pca, score
from .features import EncoderSpec, FeatureMatrix, PacketEncoder, PacketRecord, build_encoder, encode
from .matfactor import pca_truncate, shrink, svd, svt
from .rpca import RobustPCA, RpcaConfig, nominal_lambda, rank_of, rpca_decompose
from .synth import ScenarioConfig, generate
from .trainer import LabeledWindow, choose_alpha, evaluate_holdout, pca_baseline, roc_curve, sweep_lambda

__all__ = [
    "EncoderSpec",
    "FeatureMatrix",
    "LabeledWindow",
    "NominalModel",
    "PacketEncoder",
    "PacketRecord",
    "RobustPCA",
    "RpcaAnomalyDetector",
    "RpcaConfig",
    "ScenarioConfig",
    "build_encoder",
    "choose_alpha",
    "encode",
    "evaluate_holdout",
    "fit_nominal",
    "fit_pca",
    "generate",
    "nominal_lambda",
    "pca_baseline",
    "pca_truncate",
    "rank_of",
    "roc_curve",
    "rpca_decompose",
    "score",
    "shrink",
    "svd",
    "svt",
    "sweep_lambda",
]
