import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.interpolate import RBFInterpolator
from sklearn.linear_model import Lasso, Ridge

from romfsi import regress


@pytest.fixture
def data(rng):
    X = rng.uniform(-1, 1, (60, 3)) * [1.0, 5.0, 0.2]
    Y = np.column_stack([np.sin(X[:, 0]) + X[:, 1] ** 2, X[:, 2] * X[:, 0]])
    return X, Y


def test_rbf_interpolates_training_points(data):
    X, Y = data
    m = regress.fit_rbf(X, Y)
    assert np.max(np.abs(regress.eval_rbf(m, X) - Y)) < 1e-8


def test_rbf_matches_scipy_on_scaled_inputs(data, rng):
    X, Y = data
    m = regress.fit_rbf(X, Y)
    Z = m.scaler(X)
    ref = RBFInterpolator(Z, Y, kernel="thin_plate_spline", degree=1)
    Xq = rng.uniform(-1, 1, (20, 3)) * [1.0, 5.0, 0.2]
    assert np.allclose(regress.eval_rbf(m, Xq), ref(m.scaler(Xq)), rtol=1e-7, atol=1e-9)


def test_rbf_cubic_matches_scipy(data, rng):
    X, Y = data
    m = regress.fit_rbf(X, Y, kernel="cubic")
    ref = RBFInterpolator(m.scaler(X), Y, kernel="cubic", degree=1)
    Xq = rng.uniform(-1, 1, (10, 3))
    assert np.allclose(regress.eval_rbf(m, Xq), ref(m.scaler(Xq)), rtol=1e-7, atol=1e-9)


def test_rbf_smoothing_matches_scipy(data, rng):
    X, Y = data
    m = regress.fit_rbf(X, Y, smoothing=1e-2)
    ref = RBFInterpolator(m.scaler(X), Y, kernel="thin_plate_spline", degree=1, smoothing=1e-2)
    Xq = rng.uniform(-1, 1, (10, 3))
    assert np.allclose(regress.eval_rbf(m, Xq), ref(m.scaler(Xq)), rtol=1e-7, atol=1e-9)


def test_rbf_reproduces_affine_functions(rng):
    X = rng.standard_normal((30, 2))
    Y = 3.0 + X @ [1.5, -2.0]
    m = regress.fit_rbf(X, Y)
    Xq = rng.standard_normal((10, 2))
    assert np.allclose(regress.eval_rbf(m, Xq)[:, 0], 3.0 + Xq @ [1.5, -2.0], atol=1e-8)


def test_rbf_single_input_shape(data):
    X, Y = data
    m = regress.fit_rbf(X, Y)
    assert regress.eval_rbf(m, X[0]).shape == (2,)
    assert regress.predict(m, X[:3]).shape == (3, 2)


def test_rbf_duplicate_centers(rng):
    X = rng.standard_normal((10, 2))
    X[5] = X[2]
    with pytest.raises(regress.FitError, match="duplicate"):
        regress.fit_rbf(X, rng.standard_normal(10))


def test_rbf_too_few_centers(rng):
    with pytest.raises(regress.FitError):
        regress.fit_rbf(rng.standard_normal((3, 2)), np.zeros(3))


def test_rbf_unknown_kernel(data):
    with pytest.raises(ValueError):
        regress.fit_rbf(*data, kernel="gauss")


@given(seed=st.integers(0, 2**31), m=st.integers(8, 40), d=st.integers(1, 4))
def test_rbf_interpolation_property(seed, m, d):
    g = np.random.default_rng(seed)
    X = g.uniform(-1, 1, (m, d))
    Y = g.standard_normal((m, 2))
    model = regress.fit_rbf(X, Y)
    assert np.allclose(regress.eval_rbf(model, X), Y, atol=1e-6 * max(1.0, np.abs(Y).max()))


def test_scaler_groups():
    X = np.column_stack([np.arange(5.0), 2 * np.arange(5.0), 10 * np.arange(5.0)])
    s = regress.Scaler.fit(X, groups=[2, 1])
    std = X.std(axis=0)
    assert np.allclose(s.scale, [std[1], std[1], std[2]])
    assert np.allclose(s(X).mean(axis=0), 0.0)
    with pytest.raises(ValueError):
        regress.Scaler.fit(X, groups=[1, 1])


def test_scaler_constant_column():
    X = np.column_stack([np.ones(4), np.arange(4.0)])
    s = regress.Scaler.fit(X)
    assert s.scale[0] == 1.0
    assert np.all(np.isfinite(s(X)))


# ---------------------------------------------------------------- Lasso


def _lasso_problem(rng, m=80, n=10):
    X = rng.standard_normal((m, n))
    w = np.zeros(n)
    w[[1, 4, 7]] = [2.0, -1.0, 0.5]
    y = 1.5 + X @ w + 0.05 * rng.standard_normal(m)
    return X, y


def test_lasso_matches_sklearn(rng):
    X, y = _lasso_problem(rng)
    b, w, gap = regress.lasso_cd(X, y, 0.05, tol=1e-12)
    ref = Lasso(alpha=0.05, tol=1e-12, max_iter=100_000).fit(X, y)
    assert np.allclose(w, ref.coef_, atol=1e-6)
    assert abs(b - ref.intercept_) < 1e-6
    assert gap >= -1e-12


def test_lasso_kkt(rng):
    X, y = _lasso_problem(rng)
    lam = 0.1
    b, w, _ = regress.lasso_cd(X, y, lam, tol=1e-14)
    m = X.shape[0]
    grad = X.T @ (y - b - X @ w) / m
    active = w != 0
    assert np.allclose(grad[active], lam * np.sign(w[active]), atol=1e-6)
    assert np.all(np.abs(grad[~active]) <= lam + 1e-6)
    # intercept is unpenalized: residual has zero mean
    assert abs(np.mean(y - b - X @ w)) < 1e-10


def test_lasso_lambda_limits(rng):
    X, y = _lasso_problem(rng)
    Xc = X - X.mean(axis=0)
    lam_max = np.max(np.abs(Xc.T @ (y - y.mean()))) / X.shape[0]
    b, w, _ = regress.lasso_cd(X, y, lam_max * 1.0001)
    assert np.all(w == 0.0)
    assert np.isclose(b, y.mean())
    b0, w0, _ = regress.lasso_cd(X, y, 0.0, tol=1e-14)
    A = np.column_stack([np.ones(len(y)), X])
    ols = np.linalg.lstsq(A, y, rcond=None)[0]
    assert np.allclose(np.r_[b0, w0], ols, atol=1e-6)


def test_poly2_features():
    Z = np.array([[2.0, 3.0]])
    assert np.allclose(regress.poly2_features(Z), [[1, 2, 3, 4, 6, 9]])


def test_poly2_lasso_recovers_quadratic(rng):
    X = rng.uniform(-1, 1, (100, 2))
    Y = 1.0 + 2.0 * X[:, 0] - X[:, 0] * X[:, 1]
    m = regress.fit_poly2_lasso(X, Y, lam=0.0)
    Xq = rng.uniform(-1, 1, (10, 2))
    assert np.allclose(regress.eval_poly2(m, Xq)[:, 0], 1.0 + 2.0 * Xq[:, 0] - Xq[:, 0] * Xq[:, 1])
    sparse = regress.fit_poly2_lasso(X, Y, lam=1e-3)
    assert sparse.n_zero >= 2
    assert np.max(np.abs(regress.eval_poly2(sparse, Xq)[:, 0]
                         - (1.0 + 2.0 * Xq[:, 0] - Xq[:, 0] * Xq[:, 1]))) < 0.05
    with pytest.raises(ValueError):
        regress.fit_poly2_lasso(X, Y, lam=-1.0)


# ---------------------------------------------------------------- ridge


def test_ridge_matches_sklearn(data):
    X, Y = data
    m = regress.fit_ridge(X, Y, lam=0.3)
    Z = m.scaler(X)
    ref = Ridge(alpha=0.3).fit(Z, Y)
    assert np.allclose(m.weights[:, 1:], ref.coef_)
    assert np.allclose(m.weights[:, 0], ref.intercept_)
    assert np.allclose(regress.eval_ridge(m, X[:4]), ref.predict(Z[:4]))


def test_dispatch(data):
    X, Y = data
    for kind in ("rbf", "poly2", "ridge"):
        model = regress.fit_regressor(kind, X, Y, groups=[1, 2])
        assert model.kind == kind
        assert regress.predict(model, X[0]).shape == (2,)
    with pytest.raises(ValueError):
        regress.fit_regressor("svm", X, Y)
    with pytest.raises(TypeError):
        regress.predict(object(), X[0])


def test_non_finite_training_data(data):
    X, Y = data
    X = X.copy()
    X[0, 0] = np.inf
    with pytest.raises(ValueError):
        regress.fit_rbf(X, Y)
