import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtbi_dmri.svm import (
    NonFiniteFeature,
    SingleClass,
    SvmConfig,
    SvmModel,
    decision_value,
    dual_objective,
    kernel_matrix,
    predict,
    standardize_apply,
    standardize_fit,
    train_svm,
)

from oracles import qp_dual, rbf_gram

RAW_LINEAR = SvmConfig(C=1.0, kernel="linear", standardize=False)


def gaussian_pair(seed, n=20, d=2, sep=1.0):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(-sep, 1, (n // 2, d)), rng.normal(sep, 1, (n - n // 2, d))])
    y = np.r_[np.ones(n // 2), -np.ones(n - n // 2)]
    return X, y


def assert_kkt(model, X, y, tol):
    f = decision_value(model, X)
    a, C = model.alpha, model.config.C
    yf = y * f
    assert np.all(yf[a == 0] >= 1 - tol)
    free = (a > 0) & (a < C)
    assert np.all(np.abs(yf[free] - 1) <= tol)
    assert np.all(yf[a == C] <= 1 + tol)
    assert np.all((a >= 0) & (a <= C))
    assert abs(np.sum(a * y)) <= tol


# -- standardization ---------------------------------------------------------


def test_standardize_two_values():
    p = standardize_fit([[1.0], [3.0]])
    assert p.mean[0] == 2.0 and p.scale[0] == pytest.approx(np.sqrt(2))
    np.testing.assert_allclose(standardize_apply(p, [[1.0], [3.0]])[:, 0], [-1 / np.sqrt(2), 1 / np.sqrt(2)])


def test_standardize_constant_column():
    p = standardize_fit([[5.0], [5.0], [5.0]])
    assert p.scale[0] == 1.0
    assert np.all(standardize_apply(p, [[5.0], [5.0], [5.0]]) == 0)


def test_standardize_held_out_rows():
    train = np.array([[1.0, 10.0], [2.0, 30.0], [6.0, 20.0]])
    test = np.array([[0.0, 0.0], [4.0, 25.0]])
    mu = [3.0, 20.0]
    sd = [np.sqrt(((1 - 3) ** 2 + (2 - 3) ** 2 + (6 - 3) ** 2) / 2), np.sqrt((100 + 100 + 0) / 2)]
    expected = [[(0 - mu[0]) / sd[0], (0 - mu[1]) / sd[1]], [(4 - mu[0]) / sd[0], (25 - mu[1]) / sd[1]]]
    np.testing.assert_allclose(standardize_apply(standardize_fit(train), test), expected, rtol=1e-14)


def test_standardize_imputes_training_mean():
    p = standardize_fit([[1.0], [np.nan], [3.0]])
    assert p.mean[0] == 2.0
    assert standardize_apply(p, [[np.nan]])[0, 0] == 0.0


def test_standardize_needs_two_rows():
    with pytest.raises(ValueError):
        standardize_fit([[1.0]])


# -- training ----------------------------------------------------------------


def test_two_point_symmetric_problem():
    X, y = np.array([[-1.0], [1.0]]), np.array([-1.0, 1.0])
    m = train_svm(X, y, SvmConfig(C=1e3, kernel="linear", standardize=False))
    assert m.alpha[0] == pytest.approx(m.alpha[1]) and m.alpha[0] > 0
    assert decision_value(m, [0.0]) == pytest.approx(0.0, abs=1e-12)
    assert predict(m, [0.0]) == 1  # sign(0) -> +1
    assert decision_value(m, [1.0]) == pytest.approx(1.0, abs=1e-4)


def test_xor_rbf_against_dense_qp():
    X = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    y = np.array([1.0, 1.0, -1.0, -1.0])
    cfg = SvmConfig(C=10.0, kernel="rbf", gamma=1.0, standardize=False)
    m = train_svm(X, y, cfg)
    assert np.all(predict(m, X) == y)
    K = rbf_gram(X, X, 1.0)
    a, b, obj = qp_dual(K, y, 10.0)
    assert dual_objective(m.alpha, y, K) == pytest.approx(obj, rel=1e-6)
    assert np.all(np.sign(K @ (a * y) + b) == y)


@pytest.mark.parametrize("seed", range(5))
def test_linear_dual_matches_qp_oracle(seed):
    X, y = gaussian_pair(seed)
    m = train_svm(X, y, RAW_LINEAR)
    K = X @ X.T
    a, b, obj = qp_dual(K, y, 1.0)
    assert dual_objective(m.alpha, y, K) == pytest.approx(obj, rel=1e-6)
    T = np.random.default_rng(100 + seed).normal(0, 1.5, (40, 2))
    oracle = np.where(T @ X.T @ (a * y) + b >= 0, 1, -1)
    assert np.array_equal(predict(m, T), oracle)


def test_margin_support_vector_has_unit_decision():
    X, y = gaussian_pair(3, sep=2.5)
    m = train_svm(X, y, SvmConfig(C=100.0, kernel="linear", standardize=False))
    free = np.flatnonzero((m.alpha > 0) & (m.alpha < 100.0))
    assert len(free)
    for i in free:
        assert abs(decision_value(m, X[i])) == pytest.approx(1.0, abs=1e-4)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["linear", "rbf"]), st.sampled_from([0.1, 1.0, 10.0]))
def test_kkt_conditions(seed, kernel, C):
    X, y = gaussian_pair(seed, n=30, d=3, sep=0.7)
    cfg = SvmConfig(C=C, kernel=kernel)
    m = train_svm(X, y, cfg)
    assert_kkt(m, X, y, cfg.tol)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_label_flip_antisymmetry(seed):
    X, y = gaussian_pair(seed, n=24, d=2, sep=0.8)
    T = np.random.default_rng(seed).normal(size=(10, 2))
    cfg = SvmConfig(C=1.0, kernel="rbf", gamma=0.5)
    f = decision_value(train_svm(X, y, cfg), T)
    g = decision_value(train_svm(X, -y, cfg), T)
    np.testing.assert_allclose(f, -g, atol=1e-3)


def test_duplicated_point_leaves_decision_unchanged():
    X, y = gaussian_pair(7, sep=0.8)
    m = train_svm(X, y, RAW_LINEAR)
    i = int(np.flatnonzero(m.alpha > 0)[0])
    share = np.array([0.3, 0.7]) * m.alpha[i]
    coef = np.r_[np.delete(m.alpha * y, i), share * y[i]]
    Xd = np.vstack([np.delete(X, i, axis=0), X[i], X[i]])
    split = SvmModel(Xd, coef, m.bias, m.config, m.gamma)
    T = np.random.default_rng(1).normal(size=(20, 2))
    np.testing.assert_allclose(decision_value(split, T), decision_value(m, T), atol=1e-12)


def test_kernel_matrix_properties(rng):
    X = rng.normal(size=(15, 4))
    K = kernel_matrix(X, X, "rbf", 0.3)
    assert np.array_equal(K, K.T)
    assert np.all(np.diag(K) == 1.0)
    L = kernel_matrix(X, X, "linear")
    np.testing.assert_allclose(L, L.T, rtol=1e-15)


def test_default_gamma_is_inverse_feature_count():
    X, y = gaussian_pair(0, d=4)
    assert train_svm(X, y).gamma == 0.25


def test_errors():
    with pytest.raises(SingleClass):
        train_svm(np.zeros((3, 1)), [1, 1, 1])
    with pytest.raises(NonFiniteFeature):
        train_svm(np.array([[np.inf], [0.0]]), [1, -1], RAW_LINEAR)
    m = train_svm(np.array([[0.0], [1.0]]), [1, -1])
    with pytest.raises(Exception):
        decision_value(m, [1.0, 2.0])
    with pytest.raises(ValueError):
        SvmConfig(C=0)
    with pytest.raises(ValueError):
        SvmConfig(gamma=-1.0)


def test_model_round_trip_bit_exact(tmp_path):
    X, y = gaussian_pair(2, d=3)
    m = train_svm(X, y)
    m.save(tmp_path / "m.svm")
    back = SvmModel.load(tmp_path / "m.svm")
    assert back.bias == m.bias and back.gamma == m.gamma
    assert back.support_vectors.tobytes() == m.support_vectors.tobytes()
    assert back.dual_coef.tobytes() == m.dual_coef.tobytes()
    T = np.random.default_rng(0).normal(size=(10, 3))
    assert decision_value(back, T).tobytes() == decision_value(m, T).tobytes()
    back.save(tmp_path / "n.svm")
    assert (tmp_path / "m.svm").read_bytes() == (tmp_path / "n.svm").read_bytes()
