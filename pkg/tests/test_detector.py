import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netrpca.detector import (
    DegenerateModelError,
    DimensionMismatchError,
    NominalModel,
    RpcaAnomalyDetector,
    fit_nominal,
    fit_pca,
    score,
)
from netrpca.features import PacketRecord, build_encoder, encode
from netrpca.matfactor import svd
from netrpca.rpca import RpcaConfig, nominal_lambda, rank_of, rpca_decompose


def low_rank(m, n, r, seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((m, r)) @ rng.standard_normal((r, n))


def model_with_basis(basis, alpha=1.0):
    return NominalModel(basis, 1e-6, 0.1, alpha)


def test_clean_low_rank_fit():
    y = low_rank(15, 80, 3, 0)
    model = fit_nominal(y, lam=100.0)
    assert model.n_components == 3
    b = model.basis
    np.testing.assert_allclose(b.T @ b, np.eye(3), atol=1e-10)
    np.testing.assert_allclose(b @ (b.T @ y), y, atol=1e-6)
    assert model.alpha == 1.0
    assert model.fit_metadata["converged"]


def test_planted_spikes_stay_out_of_basis():
    rng = np.random.default_rng(3)
    y = low_rank(60, 60, 5, 3)
    mask = rng.random(y.shape) < 0.05
    y[mask] += rng.choice([-10.0, 10.0], mask.sum())
    model = fit_nominal(y, nominal_lambda(60, 60))
    assert model.n_components == 5


def test_gamma_zero_matches_rank_of():
    y = low_rank(20, 50, 4, 1) + 0.01 * np.random.default_rng(1).standard_normal((20, 50))
    lam = 0.3
    model = fit_nominal(y, lam, gamma=0.0)
    ref = rpca_decompose(y, RpcaConfig(lam=lam))
    # gamma=0 keeps every strictly positive singular value
    assert model.n_components == int(np.count_nonzero(ref.singular_values > 0))
    assert model.n_components >= rank_of(ref)


def test_degenerate_fit_raises():
    with pytest.raises(DegenerateModelError):
        fit_nominal(np.zeros((4, 6)), lam=0.5)


def test_nonconverged_fit_still_returns():
    y = low_rank(10, 30, 2, 4)
    model = fit_nominal(y, 0.2, rpca_config=RpcaConfig(lam=0.2, max_iter=2))
    assert model.fit_metadata["converged"] is False


def test_in_span_column_scores_zero():
    b = np.linalg.qr(np.random.default_rng(0).standard_normal((6, 2)))[0]
    y = b @ np.array([[1.0, -2.0], [0.5, 3.0]])
    rep = score(y, model_with_basis(b))
    np.testing.assert_allclose(rep.scores, 0, atol=1e-12)
    assert not rep.flags.any()


def test_orthogonal_offset_scores_exactly():
    b = np.zeros((5, 2))
    b[0, 0] = b[1, 1] = 1.0
    y = np.zeros((5, 1))
    y[:2, 0] = [0.3, -0.7]
    y[3, 0] = 2.0
    rep = score(y, model_with_basis(b, alpha=1.0))
    assert rep.scores[0] == pytest.approx(2.0)
    assert rep.flags[0]


def test_score_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        score(np.ones((4, 3)), model_with_basis(np.eye(5)[:, :2]))


def test_score_fingerprint_mismatch():
    rec = PacketRecord(0.0, "a", "b", 1, 80, "TCP", 10)
    spec1 = build_encoder([rec])
    spec2 = build_encoder([PacketRecord(0.0, "c", "d", 1, 80, "TCP", 10)])
    fm1, fm2 = encode([rec], spec1), encode([rec], spec2)
    model = fit_pca(fm1, k=1, encoder=spec1)
    assert model.encoder_fingerprint == spec1.fingerprint()
    score(fm1, model)
    with pytest.raises(DimensionMismatchError, match=spec1.fingerprint()):
        score(fm2, model)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 4))
def test_projection_properties(seed, k):
    rng = np.random.default_rng(seed)
    m = 8
    b = np.linalg.qr(rng.standard_normal((m, k)))[0]
    ya = rng.standard_normal((m, 12))
    model = model_with_basis(b)
    rep = score(ya, model)
    la = ya - rep.residual

    # idempotent projection
    assert np.all(score(la, model).scores < 1e-10)
    # Pythagoras
    lhs = (ya ** 2).sum(axis=0)
    rhs = (la ** 2).sum(axis=0) + (rep.residual ** 2).sum(axis=0)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-8)
    # report invariants
    np.testing.assert_array_equal(rep.scores, np.abs(rep.residual).max(axis=0))
    np.testing.assert_array_equal(rep.flags, rep.scores > model.alpha)
    # nested flags across alpha
    prev = None
    for alpha in np.linspace(0.05, 3, 20):
        flags = score(ya, model.with_alpha(alpha)).flags
        if prev is not None:
            assert not np.any(flags & ~prev)
        prev = flags
    # zero padding leaves scores unchanged
    padded = model_with_basis(np.vstack([b, np.zeros((3, k))]))
    np.testing.assert_allclose(score(np.vstack([ya, np.zeros((3, 12))]), padded).scores, rep.scores,
                               atol=1e-12)


def test_pca_extremes():
    y0 = np.random.default_rng(2).standard_normal((5, 40))
    ya = np.random.default_rng(3).standard_normal((5, 7))
    full = fit_pca(y0, k=5)
    np.testing.assert_allclose(score(ya, full).scores, 0, atol=1e-12)
    empty = fit_pca(y0, k=0)
    np.testing.assert_allclose(score(ya, empty).scores, np.abs(ya).max(axis=0))
    with pytest.raises(ValueError):
        fit_pca(y0, k=6)
    assert fit_pca(y0, gamma=0.5).n_components == int(np.sum(svd(y0).singular_values > 0.5 * svd(y0).singular_values[0]))


def test_model_round_trip(tmp_path):
    rec = PacketRecord(0.0, "a", "b", 1, 80, "TCP", 10)
    spec = build_encoder([rec, PacketRecord(1.0, "b", "a", 80, 1, "TCP", 300)])
    y = low_rank(spec.total_dim, 40, 3, 5)
    model = fit_nominal(y, 10.0, encoder=spec).with_alpha(0.37)
    path = tmp_path / "model.json"
    model.save(path)
    back = NominalModel.load(path)
    assert back.basis.tobytes() == model.basis.tobytes()
    assert back.alpha == 0.37 and back.lam == 10.0 and back.encoder == spec
    ya = np.random.default_rng(0).standard_normal((spec.total_dim, 9))
    np.testing.assert_allclose(score(ya, back).scores, score(ya, model).scores, atol=1e-12)

    pca = fit_pca(y, k=2)
    pca.save(path)
    assert np.isinf(NominalModel.load(path).lam)


def test_model_validation():
    with pytest.raises(ValueError):
        NominalModel(np.eye(3)[:, :1], 1e-6, 0.1, alpha=0.0)
    with pytest.raises(ValueError):
        NominalModel.from_dict({"format": "other", "version": 1})


def test_sklearn_detector():
    X0 = low_rank(12, 200, 3, 9).T
    det = RpcaAnomalyDetector(lam=10.0, alpha=0.5).fit(X0)
    assert det.components_.shape == (3, 12)
    Xa = X0[:10].copy()
    Xa[:3, 0] += 3.0
    pred = det.predict(Xa)
    assert pred.dtype.kind == "i"
    assert set(np.flatnonzero(pred)) <= {0, 1, 2}
    np.testing.assert_allclose(det.decision_function(Xa), det.score_samples(Xa) - 0.5)
    assert det.get_params()["method"] == "rpca"
    pca = RpcaAnomalyDetector(method="pca", n_components=3).fit(X0)
    np.testing.assert_allclose(pca.score_samples(X0), 0, atol=1e-9)
    with pytest.raises(ValueError):
        RpcaAnomalyDetector(method="ica").fit(X0)
