import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netrpca.detector import NominalModel, fit_pca
from netrpca.features import FeatureMatrix
from netrpca.trainer import (
    DegenerateLabelsError,
    LabeledWindow,
    LeakageError,
    TrainingError,
    choose_alpha,
    default_alpha_grid,
    default_lambda_grid,
    evaluate_holdout,
    pairwise_auc,
    pca_baseline,
    roc_curve,
    sweep_lambda,
)


def fm(y, labels=None):
    m = y.shape[0]
    return FeatureMatrix(y, np.arange(y.shape[1]), labels, [f"r{i}" for i in range(m)], "")


def score_window(scores, labels, name="w"):
    """A 1-row window whose scores under the empty basis equal ``|scores|``."""
    y = np.asarray(scores, dtype=float)[None, :]
    return LabeledWindow(fm(y, np.asarray(labels, dtype=bool)), name)


EMPTY_1D = NominalModel(np.zeros((1, 0)), 1e-6, float("inf"))


def test_roc_perfect_separation_example():
    roc = roc_curve([0.9, 0.1], [True, False], [0, 0.5, 1])
    assert roc.points == [(1.0, 0.0, 0.0), (0.5, 0.0, 1.0), (0.0, 1.0, 1.0)]
    assert roc.auc == 1.0


def test_roc_uninformative_scores():
    rng = np.random.default_rng(0)
    labels = rng.random(200) < 0.3
    roc = roc_curve(np.full(200, 0.4), labels)
    assert roc.auc == pytest.approx(0.5, abs=0.01)


def test_roc_degenerate_labels():
    with pytest.raises(DegenerateLabelsError):
        roc_curve([0.1, 0.2], [False, False])
    with pytest.raises(DegenerateLabelsError):
        roc_curve([0.1, 0.2], [True, True])


def test_roc_csv_has_header():
    text = roc_curve([0.9, 0.1], [True, False], [0, 1]).to_csv()
    assert text.splitlines()[0] == "alpha,fpr,tpr"
    assert len(text.splitlines()) == 3


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_roc_invariants_and_pairwise_oracle(seed):
    rng = np.random.default_rng(seed)
    n = 100
    labels = rng.random(n) < 0.3
    labels[0], labels[1] = True, False
    scores = rng.random(n) + 0.3 * labels
    alphas = np.linspace(0, 1.3, 1001)
    roc = roc_curve(scores, labels, alphas)
    assert np.all(np.diff(roc.alphas) < 0)
    assert np.all(np.diff(roc.fpr) >= 0) and np.all(np.diff(roc.tpr) >= 0)
    assert 0 <= roc.auc <= 1
    x = np.r_[0, roc.fpr, 1]
    y = np.r_[0, roc.tpr, 1]
    oracle = float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2))
    assert roc.auc == pytest.approx(oracle, abs=1e-12)
    assert abs(roc.auc - pairwise_auc(scores, labels)) <= 0.02


def test_default_grids():
    a = default_alpha_grid()
    assert a.size == 101 and a[0] == 0 and a[-1] == 1.0
    g = default_lambda_grid(94, 8322)
    assert g.size == 15
    assert g[0] == pytest.approx(0.010962 / 2, rel=1e-4)
    assert g[-1] == pytest.approx(30 * 0.010962, rel=1e-4)


def test_choose_alpha_prefers_largest_perfect_threshold():
    w = score_window([2.0, 2.0, 0.0, 0.0], [1, 1, 0, 0], "stage1")
    alpha, value = choose_alpha(EMPTY_1D, [w], [0.5, 1.0, 1.5])
    assert alpha == 1.5 and value == 1.0


def test_choose_alpha_when_nothing_is_flagged():
    w = score_window([0.1, 0.2, 0.05], [1, 0, 0], "stage1")
    alpha, value = choose_alpha(EMPTY_1D, [w], [0.5, 0.7, 0.9])
    assert alpha == 0.9 and value == 0.0


def test_choose_alpha_matches_exhaustive_oracle():
    rng = np.random.default_rng(4)
    labels = rng.random(300) < 0.25
    scores = np.abs(rng.normal(0.3 + 0.25 * labels, 0.2))
    w1 = score_window(scores[:150], labels[:150], "stage1")
    w2 = score_window(scores[150:], labels[150:], "stage2")
    grid = np.linspace(0, 1, 101)
    alpha, value = choose_alpha(EMPTY_1D, [w1, w2], grid)

    best, best_a = -np.inf, None
    for a in grid[grid > 0]:
        flags = scores > a
        j = flags[labels].mean() - flags[~labels].mean()
        if j >= best:
            best, best_a = j, a
    assert alpha == best_a and value == pytest.approx(best)


def test_choose_alpha_tpr_at_fpr():
    w = score_window([0.9, 0.6, 0.5, 0.1, 0.7], [1, 1, 0, 0, 0], "stage1")
    alpha, value = choose_alpha(EMPTY_1D, [w], [0.2, 0.55, 0.65, 0.8], metric="tpr_at_fpr", max_fpr=0.0)
    assert (alpha, value) == (0.8, 0.5)


def test_holdout_cannot_leak():
    w = score_window([1.0, 0.0], [1, 0], "stage3")
    with pytest.raises(LeakageError):
        choose_alpha(EMPTY_1D, [w])
    with pytest.raises(LeakageError):
        sweep_lambda(fm(np.ones((1, 4))), [w], [0.5])


def _orthogonal_scenario(seed=0):
    rng = np.random.default_rng(seed)
    m = 30
    q = np.linalg.qr(rng.standard_normal((m, m)))[0]
    nominal, attack = q[:, :5], q[:, 5:]
    y0 = nominal @ rng.standard_normal((5, 400))
    mask = rng.random(y0.shape) < 0.05
    y0 = y0 + np.where(mask, rng.choice([-3.0, 3.0], y0.shape), 0.0)

    def window(name):
        labels = rng.random(200) < 0.2
        y = nominal @ rng.standard_normal((5, 200))
        y[:, labels] += 0.6 * attack @ rng.standard_normal((25, labels.sum()))
        return LabeledWindow(fm(y, labels), name)

    return fm(y0), [window("stage1"), window("stage2")], window("stage3")


def test_low_rank_lambda_beats_bloated_basis():
    y0, train, _ = _orthogonal_scenario()
    out = sweep_lambda(y0, train, np.geomspace(0.05, 3, 8))
    rows = [r for r in out.per_lambda_report if r["status"] == "ok"]
    small = [r["pooled_auc"] for r in rows if r["rank"] == 5]
    big = [r["pooled_auc"] for r in rows if r["rank"] >= 20]
    assert small and big
    assert min(small) >= max(big)
    assert out.model.n_components == 5
    assert out.lambda_star == pytest.approx(0.05)  # tie on auc goes to smallest lambda
    assert out.alpha_star > 0 and out.alpha_star in default_alpha_grid()


def test_single_lambda_grid_and_determinism():
    y0, train, _ = _orthogonal_scenario(1)
    a = sweep_lambda(y0, train, [0.07])
    b = sweep_lambda(y0, train, [0.07])
    assert a.lambda_star == 0.07
    assert a.to_dict() == b.to_dict()
    assert a.model.basis.tobytes() == b.model.basis.tobytes()


def test_parallel_sweep_matches_serial():
    y0, train, _ = _orthogonal_scenario(2)
    grid = [0.05, 0.1, 0.5]
    a = sweep_lambda(y0, train, grid)
    b = sweep_lambda(y0, train, grid, n_jobs=2)
    assert a.to_dict() == b.to_dict()


def test_failed_lambdas_are_recorded():
    y0 = fm(np.zeros((3, 10)))
    w = LabeledWindow(fm(np.eye(3)[:, [0, 1, 2, 0]], np.array([1, 0, 0, 1], bool)), "stage1")
    with pytest.raises(TrainingError):
        sweep_lambda(y0, [w], [0.1, 1.0])


def test_report_csv_columns():
    y0, train, _ = _orthogonal_scenario(3)
    out = sweep_lambda(y0, train, [0.05, 1.0])
    lines = out.report_csv().splitlines()
    assert lines[0].split(",")[:3] == ["lambda", "status", "rank"]
    assert "auc_stage1" in lines[0] and len(lines) == 3


def test_evaluate_holdout():
    y0, train, holdout = _orthogonal_scenario(5)
    out = sweep_lambda(y0, train, [0.05])
    rep = evaluate_holdout(out.model, holdout)
    assert rep.roc.auc > 0.95
    # holdout equal to a training window reproduces training metrics
    again = evaluate_holdout(out.model, train[0])
    b = out.model.basis
    y = train[0].features.matrix
    direct = roc_curve(np.abs(y - b @ (b.T @ y)).max(axis=0), train[0].features.labels)
    assert again.roc.auc == pytest.approx(direct.auc)

    y = holdout.features.matrix
    flags = np.abs(y - b @ (b.T @ y)).max(axis=0) > out.model.alpha
    labels = holdout.features.labels
    assert rep.tpr == pytest.approx(flags[labels].mean())
    assert rep.fpr == pytest.approx(flags[~labels].mean())

    no_attacks = LabeledWindow(fm(np.ones((30, 3)), np.zeros(3, bool)), "stage3")
    with pytest.raises(DegenerateLabelsError):
        evaluate_holdout(out.model, no_attacks)


def test_pca_baseline_extremes():
    rng = np.random.default_rng(6)
    y0 = fm(rng.standard_normal((4, 50)))
    w = LabeledWindow(fm(rng.standard_normal((4, 20)), np.arange(20) % 4 == 0), "stage3")
    model, reports = pca_baseline(y0, [w], k=4)
    assert model.n_components == 4
    r = reports["stage3"].roc
    positive = r.alphas > 0
    assert np.all(r.fpr[positive] == 0) and np.all(r.tpr[positive] == 0)
    model0, reports0 = pca_baseline(y0, [w], k=0)
    assert model0.n_components == 0


def test_pca_baseline_trains_alpha_without_holdout():
    y0, train, holdout = _orthogonal_scenario(7)
    model, reports = pca_baseline(y0, [holdout], k=5, train_windows=train)
    assert model.alpha == choose_alpha(fit_pca(y0, k=5), train)[0]
    with pytest.raises(LeakageError):
        pca_baseline(y0, [holdout], k=5, train_windows=[holdout])
