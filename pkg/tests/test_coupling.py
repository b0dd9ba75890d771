import numpy as np
import pytest
from hypothesis import given, strategies as st

from romfsi import coupling


def _affine_problem(rng, n, rho=0.95):
    """Solid and fluid operators whose composition is an affine map with a known fixed point."""
    A = rng.standard_normal((n, n))
    A *= rho / np.max(np.abs(np.linalg.eigvals(A)))
    A = 5.0 * A  # a strongly coupled, non-contractive map
    b = rng.standard_normal(n) + 3.0
    f_star = np.linalg.solve(np.eye(n) - A, b)
    return (lambda f: A @ f + b), (lambda u: u), f_star


def test_relative_residual():
    r, e = coupling.relative_residual([3.0, 4.0], [0.0, 4.0])
    assert np.allclose(r, [3.0, 0.0])
    assert e == pytest.approx(3.0 / 5.0)
    with pytest.raises(coupling.DegenerateResidualError):
        coupling.relative_residual([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        coupling.relative_residual([1.0], [1.0, 2.0])


@pytest.mark.parametrize("seed", range(8))
def test_iqn_ils_exact_on_affine_maps(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 21))
    solid, fluid, f_star = _affine_problem(rng, n)
    # an (essentially) disabled filter keeps the Krylov-like exactness argument intact
    acc = coupling.IQNILSAccelerator(q=0, w0=0.1, eps_filter=1e-12)
    f, _, rep = coupling.run_time_step(solid, fluid, np.zeros(n), acc, delta=1e-11, max_iters=n + 2)
    assert rep.iterations <= n + 2
    assert np.linalg.norm(f - f_star) <= 1e-9 * np.linalg.norm(f_star)


@given(a=st.floats(-0.9, 0.4), b=st.floats(0.5, 10.0), f0=st.floats(-5.0, 5.0))
def test_aitken_two_updates_exact_on_scalar_affine(a, b, f0):
    f_star = b / (1.0 - a)
    h = lambda f: a * f + b  # noqa: E731
    acc = coupling.AitkenAccelerator(w0=0.1, w_max=2.0)
    acc.start_step()
    f = np.array([f0])
    for _ in range(2):
        ft = np.array([h(f[0])])
        f = f + acc.update(f, ft, ft - f)
    assert f[0] == pytest.approx(f_star, rel=1e-9, abs=1e-9)


def test_aitken_factor_formula_and_clamp():
    r0 = np.array([1.0, 0.0])
    r1 = np.array([0.5, 0.0])
    # -w * r0.(r1 - r0) / |r1 - r0|^2 = -0.1 * (-0.5) / 0.25
    assert coupling.aitken_factor(0.1, r0, r1) == pytest.approx(0.2)
    assert coupling.aitken_factor(1.0, r0, np.array([0.9, 0.0]), w_max=2.0) == 2.0
    with pytest.raises(coupling.StagnationError):
        coupling.aitken_factor(0.1, r0, r0)


@given(w=st.floats(-10, 10), seed=st.integers(0, 1000), w_max=st.floats(0.1, 5))
def test_aitken_factor_bounded(w, seed, w_max):
    rng = np.random.default_rng(seed)
    r0, r1 = rng.standard_normal(4), rng.standard_normal(4)
    assert abs(coupling.aitken_factor(w, r0, r1, w_max)) <= w_max


def test_qr_filter_drops_duplicates(rng):
    v = rng.standard_normal(6)
    V = np.column_stack([v, rng.standard_normal(6), v])
    W = np.arange(18.0).reshape(6, 3)
    Q, R, Vk, Wk, dropped = coupling.qr_filter(V, W, eps=1e-8)
    assert dropped == 1
    assert Vk.shape == (6, 2)
    assert np.allclose(Wk, W[:, :2])
    assert np.allclose(Q @ R, Vk)
    assert np.linalg.matrix_rank(R) == 2


@given(seed=st.integers(0, 10_000), n=st.integers(2, 12), m=st.integers(1, 8),
       eps=st.sampled_from([1e-8, 1e-2, 0.1]))
def test_qr_filter_properties(seed, n, m, eps):
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((n, m))
    Q, R, Vk, Wk, dropped = coupling.qr_filter(V, V.copy(), eps)
    k = Vk.shape[1]
    assert dropped == m - k
    assert np.allclose(Q.T @ Q, np.eye(k), atol=1e-10)
    assert np.allclose(Q @ R, Vk, atol=1e-10)
    assert np.allclose(np.triu(R), R)
    assert np.all(np.abs(np.diag(R)) >= eps * np.linalg.norm(Vk, axis=0) - 1e-12)


def test_plain_gauss_seidel_fails_on_strong_coupling(rng):
    solid, fluid, _ = _affine_problem(rng, 10)
    acc = coupling.make_accelerator("gauss-seidel")
    _, _, rep = coupling.run_time_step(solid, fluid, np.zeros(10), acc, delta=1e-6, max_iters=100)
    assert not rep.converged


def test_constant_relaxation_converges_on_contraction():
    A = np.diag([0.5, -0.3])
    b = np.array([1.0, 2.0])
    acc = coupling.make_accelerator("constant", w0=1.0)
    f, _, rep = coupling.run_time_step(lambda f: A @ f + b, lambda u: u, np.zeros(2), acc,
                                       delta=1e-12, max_iters=200)
    assert rep.converged
    assert np.allclose(f, np.linalg.solve(np.eye(2) - A, b))


def test_iqn_reuse_keeps_past_columns(rng):
    solid, fluid, _ = _affine_problem(rng, 8)
    acc = coupling.IQNILSAccelerator(q=2, eps_filter=1e-12)
    iters = []
    for _ in range(4):
        _, _, rep = coupling.run_time_step(solid, fluid, np.zeros(8), acc, delta=1e-9, max_iters=50)
        iters.append(rep.iterations)
    assert 1 <= len(acc.state.past) <= 2
    # the same affine problem again: the reused columns span the whole space, so
    # the first quasi-Newton update is exact
    assert iters[0] > 2
    assert iters[1:] == [2, 2, 2]


def test_on_iteration_callback_and_report(rng):
    solid, fluid, _ = _affine_problem(rng, 4)
    seen = []
    acc = coupling.make_accelerator("iqn-ils", q=0, eps_filter=1e-12)
    _, _, rep = coupling.run_time_step(solid, fluid, np.zeros(4), acc, 1e-9, 20,
                                       on_iteration=lambda k, f, u, ft: seen.append(k))
    assert seen == list(range(1, rep.iterations + 1))
    assert len(rep.trace) == rep.iterations
    assert rep.residual == rep.trace[-1]


def test_invalid_arguments():
    with pytest.raises(ValueError):
        coupling.make_accelerator("newton")
    with pytest.raises(NotImplementedError):
        coupling.make_accelerator("block")
    with pytest.raises(ValueError):
        coupling.IQNILSAccelerator(q=-1)
    with pytest.raises(ValueError):
        coupling.run_time_step(lambda f: f, lambda u: u, np.ones(2), coupling.ConstantRelaxation(), delta=0)


@pytest.mark.filterwarnings("ignore:overflow")
def test_non_finite_iterate_is_reported():
    acc = coupling.ConstantRelaxation(w0=1e308)
    _, _, rep = coupling.run_time_step(lambda f: 10 * f + 1, lambda u: u, np.ones(2), acc, 1e-8, 10)
    assert not rep.converged
    assert rep.error is not None
