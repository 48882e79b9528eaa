"""Two-stage parameter selection and ROC evaluation.

The coupling constant is chosen first by re-fitting the nominal model for
every candidate and scoring the labeled training windows; the detection
threshold is then chosen with the winning model held fixed. A named
holdout window is never allowed into either stage.
"""

import csv
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .detector import DegenerateModelError, fit_nominal, fit_pca, score
from .features import FeatureMatrix
from .io import atomic_write_text
from .rpca import RpcaConfig, nominal_lambda

logger = logging.getLogger(__name__)

METRICS = ("auc", "youden", "tpr_at_fpr")
HOLDOUT_NAME = "stage3"


class DegenerateLabelsError(ValueError):
    """Labels are all attack or all normal."""


class LeakageError(ValueError):
    """A holdout window was passed to a training routine."""


class TrainingError(RuntimeError):
    pass


def default_alpha_grid():
    return np.linspace(0.0, 1.0, 101)


def default_lambda_grid(m, n, num=15):
    nom = nominal_lambda(m, n)
    return np.geomspace(nom / 2, 30 * nom, num)


@dataclass
class LabeledWindow:
    features: FeatureMatrix
    name: str

    def __post_init__(self):
        labels = self.features.labels
        if labels is None or len(labels) != self.features.n_packets:
            raise ValueError(f"window {self.name!r} needs a label for every column")


@dataclass
class RocCurve:
    """ROC points in order of decreasing ``alpha``.

    ``auc`` is the trapezoidal area under the points with the (0, 0) and
    (1, 1) corners appended at either end, so a grid that never reaches
    the extreme thresholds still integrates the full curve.
    """

    alphas: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    @property
    def points(self):
        return list(zip(self.alphas.tolist(), self.fpr.tolist(), self.tpr.tolist()))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["alpha", "fpr", "tpr"])
        for a, f, t in self.points:
            w.writerow([repr(a), repr(f), repr(t)])
        return buf.getvalue()


def _trapezoid(x, y):
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def _check_labels(labels):
    labels = np.asarray(labels, dtype=bool)
    if labels.all() or not labels.any():
        raise DegenerateLabelsError("need at least one attack and one normal label")
    return labels


def _rates(scores, labels, alphas):
    # flags[i, j] = scores[j] > alphas[i]
    flags = scores[None, :] > alphas[:, None]
    tpr = flags[:, labels].sum(axis=1) / labels.sum()
    fpr = flags[:, ~labels].sum(axis=1) / (~labels).sum()
    return fpr, tpr


def roc_curve(scores, labels, alphas=None):
    scores = np.asarray(scores, dtype=np.float64)
    labels = _check_labels(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    alphas = default_alpha_grid() if alphas is None else np.asarray(alphas, dtype=np.float64)
    if alphas.size == 0:
        raise ValueError("alpha grid is empty")
    alphas = np.unique(alphas)[::-1]
    fpr, tpr = _rates(scores, labels, alphas)
    x = np.concatenate([[0.0], fpr, [1.0]])
    y = np.concatenate([[0.0], tpr, [1.0]])
    return RocCurve(alphas, fpr, tpr, _trapezoid(x, y))


def pairwise_auc(scores, labels):
    """Fraction of (attack, normal) pairs ranked correctly, ties counted half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _check_labels(labels)
    pos = scores[labels][:, None]
    neg = scores[~labels][None, :]
    return float(((pos > neg).sum() + 0.5 * (pos == neg).sum()) / (pos.size * neg.size))


def _metric_per_alpha(fpr, tpr, metric, max_fpr):
    if metric == "youden":
        return tpr - fpr
    if metric == "tpr_at_fpr":
        return np.where(fpr <= max_fpr, tpr, -np.inf)
    raise ValueError(f"per-threshold metric must be 'youden' or 'tpr_at_fpr', got {metric!r}")


def curve_metric(roc, metric="auc", max_fpr=0.05):
    if metric == "auc":
        return roc.auc
    return float(np.max(_metric_per_alpha(roc.fpr, roc.tpr, metric, max_fpr)))


def _pool(model, windows):
    scores, labels = [], []
    for w in windows:
        scores.append(score(w.features, model).scores)
        labels.append(w.features.labels)
    return np.concatenate(scores), np.concatenate(labels)


def _guard(windows, holdout_name):
    for w in windows:
        if holdout_name is not None and w.name == holdout_name:
            raise LeakageError(f"window {w.name!r} is the declared holdout and cannot be used for training")


def choose_alpha(model, train_windows, alpha_grid=None, metric="youden", max_fpr=0.05,
                 holdout_name=HOLDOUT_NAME):
    """Pick the threshold that maximizes ``metric`` on the pooled windows.

    Only positive grid values are candidates; ties go to the largest alpha.
    Returns ``(alpha, metric_value)``.
    """
    _guard(train_windows, holdout_name)
    alphas = default_alpha_grid() if alpha_grid is None else np.asarray(alpha_grid, dtype=np.float64)
    alphas = alphas[alphas > 0]
    if alphas.size == 0:
        raise ValueError("alpha grid has no positive values")
    s, y = _pool(model, train_windows)
    y = _check_labels(y)
    fpr, tpr = _rates(s, y, alphas)
    values = _metric_per_alpha(fpr, tpr, metric, max_fpr)
    best = values.max()
    alpha = float(alphas[values == best].max())
    return alpha, float(best)


def _cell(value):
    return "" if value is None else repr(value)


@dataclass
class TrainOutcome:
    lambda_star: float
    alpha_star: float
    per_lambda_report: list
    selection_metric: str
    alpha_metric: str
    model: object = field(default=None, repr=False)

    def to_dict(self):
        return {
            "lambda_star": self.lambda_star,
            "alpha_star": self.alpha_star,
            "selection_metric": self.selection_metric,
            "alpha_metric": self.alpha_metric,
            "per_lambda": self.per_lambda_report,
        }

    def report_csv(self):
        names = sorted({k for row in self.per_lambda_report for k in row.get("window_auc", {})})
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda", "status", "rank", "iterations", "converged", "metric", "pooled_auc"]
                   + [f"auc_{n}" for n in names])
        for row in self.per_lambda_report:
            w.writerow([repr(row["lambda"]), row["status"], row.get("rank", ""),
                        row.get("iterations", ""), row.get("converged", ""),
                        _cell(row.get("metric")), _cell(row.get("pooled_auc"))]
                       + [_cell(row.get("window_auc", {}).get(n)) for n in names])
        return buf.getvalue()

    def save(self, path):
        atomic_write_text(path, json.dumps(self.to_dict(), indent=1) + "\n")


def _evaluate_lambda(y0, windows, lam, gamma, config, alphas, metric, max_fpr):
    row = {"lambda": float(lam)}
    try:
        model = fit_nominal(y0, lam, gamma, config)
    except DegenerateModelError as exc:
        row.update(status="failed", reason=str(exc), metric=None, pooled_auc=None)
        return row, None
    row.update(status="ok", rank=model.n_components,
               iterations=model.fit_metadata["iterations"],
               converged=model.fit_metadata["converged"])
    row["window_auc"] = {}
    for w in windows:
        try:
            row["window_auc"][w.name] = roc_curve(score(w.features, model).scores,
                                                  w.features.labels, alphas).auc
        except DegenerateLabelsError:
            pass
    s, y = _pool(model, windows)
    roc = roc_curve(s, y, alphas)
    row["pooled_auc"] = roc.auc
    row["metric"] = curve_metric(roc, metric, max_fpr)
    return row, model


def sweep_lambda(y0, train_windows, lambda_grid=None, gamma=1e-6, rpca_config=None,
                 alpha_grid=None, metric="auc", alpha_metric="youden", max_fpr=0.05,
                 holdout_name=HOLDOUT_NAME, n_jobs=1):
    """Select lambda, then alpha, from the labeled training windows.

    Each candidate lambda re-fits the nominal model on ``y0``; candidates
    whose fit keeps no directions are recorded as failed. Ties on the
    selection metric go to the smallest lambda.
    """
    _guard(train_windows, holdout_name)
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}")
    m, n = y0.matrix.shape
    grid = default_lambda_grid(m, n) if lambda_grid is None else np.asarray(lambda_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("lambda grid is empty")
    alphas = default_alpha_grid() if alpha_grid is None else np.asarray(alpha_grid, dtype=float)
    config = rpca_config if rpca_config is not None else RpcaConfig(lam=float(grid[0]))

    jobs = (delayed(_evaluate_lambda)(y0, train_windows, lam, gamma, config, alphas, metric, max_fpr)
            for lam in grid)
    results = Parallel(n_jobs=n_jobs)(jobs) if n_jobs != 1 else [
        _evaluate_lambda(y0, train_windows, lam, gamma, config, alphas, metric, max_fpr)
        for lam in grid]
    report = [r for r, _ in results]
    ok = [(r["metric"], r["lambda"], model) for r, model in results if model is not None]
    if not ok:
        raise TrainingError("every lambda in the grid produced a degenerate model")
    best = max(v for v, _, _ in ok)
    lam_star, model = min(((lam, mdl) for v, lam, mdl in ok if v == best), key=lambda t: t[0])
    alpha_star, _ = choose_alpha(model, train_windows, alphas, alpha_metric, max_fpr, holdout_name)
    logger.info("selected lambda=%g alpha=%g", lam_star, alpha_star)
    return TrainOutcome(lam_star, alpha_star, report, metric, alpha_metric,
                        model.with_alpha(alpha_star))


@dataclass
class HoldoutReport:
    roc: RocCurve
    alpha: float
    fpr: float
    tpr: float
    name: str = ""


def evaluate_holdout(model, holdout, alpha_grid=None):
    """ROC on ``holdout`` plus the operating point at ``model.alpha``."""
    rep = score(holdout.features, model)
    labels = _check_labels(holdout.features.labels)
    roc = roc_curve(rep.scores, labels, alpha_grid)
    fpr, tpr = _rates(rep.scores, labels, np.array([model.alpha]))
    return HoldoutReport(roc, model.alpha, float(fpr[0]), float(tpr[0]), holdout.name)


def pca_baseline(y0, windows, alpha_grid=None, k=None, gamma=1e-6, max_rank=None,
                 train_windows=None, holdout_name=HOLDOUT_NAME):
    """Same decision rule with the basis taken from a truncated SVD of ``y0``.

    When ``train_windows`` is given the PCA threshold is trained on them the
    same way as for RPCA; otherwise the default alpha is used. Returns
    ``(model, {window name: HoldoutReport})``.
    """
    model = fit_pca(y0, k, gamma, max_rank)
    if train_windows:
        alpha, _ = choose_alpha(model, train_windows, alpha_grid, holdout_name=holdout_name)
        model = model.with_alpha(alpha)
    return model, {w.name: evaluate_holdout(model, w, alpha_grid) for w in windows}
