import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from romfsi import predict


@given(c=arrays(float, (3, 4), elements=st.floats(-100, 100)), t=st.floats(-3, 3))
def test_extrapolation_is_exact_for_polynomials(c, t):
    # f(s) = c0 + c1 s + c2 s^2 sampled at s = -2, -1, 0; predict s = 1
    def f(s, order):
        return sum(c[k] * s**k for k in range(order + 1))

    for order in (0, 1, 2):
        h = predict.ForceHistory([f(-2.0, order), f(-1.0, order), f(0.0, order)])
        assert np.allclose(predict.extrapolate(h, order), f(1.0, order), atol=1e-9 * (1 + np.abs(c).max()))


def test_history_keeps_last_three_newest_first():
    h = predict.ForceHistory()
    for k in range(5):
        h.push([float(k)])
    assert len(h) == 3
    assert [x[0] for x in (h[0], h[1], h[2])] == [4.0, 3.0, 2.0]
    assert h.last[0] == 4.0


def test_extrapolate_degrades_with_short_history(caplog):
    h = predict.ForceHistory([np.array([1.0]), np.array([3.0])])
    assert predict.extrapolate(h, 2)[0] == 5.0
    h1 = predict.ForceHistory([np.array([2.0])])
    assert predict.extrapolate(h1, 2)[0] == 2.0
    z = predict.extrapolate(predict.ForceHistory(), 1, size=3)
    assert np.all(z == 0.0) and z.size == 3
    assert "empty force history" in caplog.text
    with pytest.raises(ValueError):
        predict.extrapolate(predict.ForceHistory(), 1)
    with pytest.raises(ValueError):
        predict.extrapolate(h, 3)


def test_predictor_config_validation():
    with pytest.raises(ValueError):
        predict.PredictorConfig(delta_r=0.0)
    with pytest.raises(ValueError):
        predict.PredictorConfig(M=0)
    with pytest.raises(ValueError):
        predict.PredictorConfig(seed_mode="constant")


@pytest.fixture
def affine_roms(monkeypatch):
    """Replace the ROM evaluations by an affine reduced fixed-point problem.

    solid: u = 0.5 f, fluid: f~ = A u + b + 0.1 f_prev, so the fixed point is
    f* = (I - 0.5 A)^-1 (b + 0.1 f_prev).
    """
    A = np.array([[-1.2, 0.3], [0.2, -0.8]])
    b = np.array([4.0, -2.0])
    calls = {"solid": 0, "fluid": 0}

    def solid(rom, f):
        calls["solid"] += 1
        return 0.5 * f

    def fluid(rom, u, f_prev):
        calls["fluid"] += 1
        return A @ u + b + 0.1 * f_prev

    monkeypatch.setattr(predict, "solid_rom_predict_interface", solid)
    monkeypatch.setattr(predict, "fluid_rom_predict", fluid)
    return A, b, calls


def test_data_driven_converges_to_reduced_fixed_point(affine_roms):
    A, b, calls = affine_roms
    f_prev = np.array([1.0, 1.0])
    hist = predict.ForceHistory([np.array([0.5, 0.8]), f_prev])
    cfg = predict.PredictorConfig(delta_r=1e-10, M=50)
    f, rep = predict.predict_data_driven(None, None, hist, cfg)
    f_star = np.linalg.solve(np.eye(2) - 0.5 * A, b + 0.1 * f_prev)
    assert rep.converged and not rep.fallback
    assert np.allclose(f, f_star, rtol=1e-8)
    assert calls["solid"] == calls["fluid"] == rep.iterations
    assert len(rep.trace) == rep.iterations


def test_first_local_update_uses_w0_local(affine_roms, monkeypatch):
    A, b, _ = affine_roms
    seen = []
    orig = predict.solid_rom_predict_interface
    monkeypatch.setattr(predict, "solid_rom_predict_interface", lambda rom, f: (seen.append(f.copy()), orig(rom, f))[1])
    f_prev = np.array([1.0, 1.0])
    hist = predict.ForceHistory([np.array([0.0, 0.0]), f_prev])
    cfg = predict.PredictorConfig(delta_r=1e-12, M=3, w0_local=0.25)
    predict.predict_data_driven(None, None, hist, cfg)
    seed = 2 * f_prev - np.array([0.0, 0.0])
    assert np.allclose(seen[0], seed)
    r0 = A @ (0.5 * seed) + b + 0.1 * f_prev - seed
    assert np.allclose(seen[1], seed + 0.25 * r0)


def test_quadratic_seed(affine_roms, monkeypatch):
    seen = []
    monkeypatch.setattr(predict, "solid_rom_predict_interface", lambda rom, f: (seen.append(f.copy()), 0.5 * f)[1])
    hist = predict.ForceHistory([np.array([1.0]), np.array([2.0]), np.array([4.0])])
    monkeypatch.setattr(predict, "fluid_rom_predict", lambda rom, u, fp: 2 * u)
    predict.predict_data_driven(None, None, hist, predict.PredictorConfig(seed_mode="quadratic"))
    assert seen[0][0] == pytest.approx(3 * 4.0 - 3 * 2.0 + 1.0)


def test_non_convergence_falls_back(affine_roms, monkeypatch):
    monkeypatch.setattr(predict, "fluid_rom_predict", lambda rom, u, fp: -10.0 * u + 1.0)
    f_prev = np.array([2.0, 3.0])
    hist = predict.ForceHistory([f_prev])
    f, rep = predict.predict_data_driven(None, None, hist, predict.PredictorConfig(M=3, w_max=0.01))
    assert rep.fallback and not rep.converged
    assert rep.iterations == 3
    assert np.array_equal(f, f_prev)
    assert f is not hist.last


def test_numerical_failure_falls_back(affine_roms, monkeypatch):
    monkeypatch.setattr(predict, "fluid_rom_predict", lambda rom, u, fp: u * np.inf)
    f_prev = np.array([2.0, 3.0])
    f, rep = predict.predict_data_driven(None, None, predict.ForceHistory([f_prev]))
    assert rep.fallback
    assert rep.error is not None
    assert np.array_equal(f, f_prev)


def test_regressor_exception_falls_back(affine_roms, monkeypatch):
    def boom(rom, u, fp):
        raise np.linalg.LinAlgError("singular")

    monkeypatch.setattr(predict, "fluid_rom_predict", boom)
    f, rep = predict.predict_data_driven(None, None, predict.ForceHistory([np.ones(2)]))
    assert rep.fallback and "LinAlgError" in rep.error


def test_with_trained_roms(tiny_snapshots, tiny_roms):
    F, Ft, *_ = tiny_snapshots
    solid, fluid = tiny_roms
    hist = predict.ForceHistory([Ft[:, 40], Ft[:, 50], Ft[:, 60]])
    f, rep = predict.predict_data_driven(solid, fluid, hist, predict.PredictorConfig(delta_r=0.02))
    assert f.shape == (F.shape[0],)
    assert np.all(np.isfinite(f))
    assert rep.iterations >= 1
