import numpy as np
import pytest

from varnn.baselines import (
    ArxLinear,
    MlpModel,
    MlpParams,
    RankDeficiencyWarning,
    RnnModel,
    RnnParams,
    RnnSpec,
    StaticLinear,
    TrainMean,
    build_lagged_design,
    fit_linear_least_squares,
    lagged_width,
    mlp_forward,
    rnn_rollout,
)
from varnn.data import WindowSet, windows_for_segment
from varnn.model import WindowInstance
from varnn.numkit import Rng

from oracles import qr_least_squares


def test_exact_line():
    x = np.arange(10.0)
    fit = fit_linear_least_squares(x, 2 * x)
    assert abs(fit.weights[0] - 2.0) <= 1e-10 and abs(fit.intercept) <= 1e-10


def test_constant_target():
    fit = fit_linear_least_squares(Rng(0).normal((30, 2)), np.full(30, 4.5))
    np.testing.assert_allclose(fit.weights, 0.0, atol=1e-10)
    assert fit.intercept == pytest.approx(4.5, abs=1e-10)


def test_matches_qr_oracle():
    r = Rng(3)
    X = r.normal((50, 3))
    y = r.normal(50)
    w, b = qr_least_squares(X, y)
    fit = fit_linear_least_squares(X, y)
    assert np.max(np.abs(fit.weights - w)) <= 1e-8 and abs(fit.intercept - b) <= 1e-8


def test_rank_deficiency_warns_and_returns():
    X = np.ones((20, 2))
    with pytest.warns(RankDeficiencyWarning):
        fit = fit_linear_least_squares(X, np.arange(20.0))
    assert fit.rank_deficient and np.all(np.isfinite(fit.weights))


def test_lagged_design_layout():
    X = np.array([[1.0], [2.0], [3.0]])
    y = np.array([10.0, 20.0, 30.0])
    ws = windows_for_segment(X, y, 0, 3, 2)
    F, t = build_lagged_design(ws)
    np.testing.assert_array_equal(F, [[1, 10, 2], [2, 20, 3]])
    np.testing.assert_array_equal(t, [20, 30])
    assert lagged_width(5, 27) == 139
    with pytest.raises(ValueError):
        build_lagged_design(WindowSet(np.zeros((1, 1, 1)), np.zeros((1, 1)), np.zeros(1)))


def test_lagged_rows_match_window_count():
    r = Rng(1)
    ws = windows_for_segment(r.uniform((40, 3)), r.uniform(40), 0, 40, 5)
    assert build_lagged_design(ws)[0].shape == (ws.n, lagged_width(5, 3))


def test_arx_recovers_lagged_system():
    r = Rng(2)
    T = 300
    X = r.uniform((T, 2))
    y = np.zeros(T)
    for t in range(1, T):
        y[t] = 0.5 * y[t - 1] + X[t] @ [1.0, -1.0] + 0.3 * X[t - 1, 0]
    ws = windows_for_segment(X, y, 0, T, 2)
    model = ArxLinear(2, 2)
    fit = model.fit(ws)
    assert not fit.rank_deficient
    assert np.max(np.abs(model.predict(None, ws) - ws.y_target)) <= 1e-8
    np.testing.assert_allclose(fit.weights, [0.3, 0.0, 0.5, 1.0, -1.0], atol=1e-8)
    assert model.count_parameters() == lagged_width(2, 2) + 1


def test_train_mean_and_static_counts():
    ws = windows_for_segment(np.zeros((10, 2)), np.arange(10.0), 0, 10, 3)
    m = TrainMean()
    m.fit(ws)
    np.testing.assert_array_equal(m.predict(None, ws), np.full(ws.n, ws.y_target.mean()))
    assert StaticLinear(27).count_parameters() == 28


def test_mlp_zero_and_unit():
    z = MlpParams(np.zeros((3, 2)), np.zeros(3), np.zeros((1, 3)), np.zeros(1))
    assert mlp_forward(z, np.ones((1, 2)))[0] == 0.0
    unit = MlpParams(np.array([[1.0, 1.0]]), np.zeros(1), np.array([[1.0]]), np.zeros(1))
    assert mlp_forward(unit, np.array([[0.5, 0.25]]))[0] == 0.75


@pytest.mark.parametrize("features", ["static", "narx"])
def test_mlp_gradients(features):
    r = Rng(5)
    ws = windows_for_segment(r.normal((12, 2)), r.normal(12), 0, 12, 3)
    model = MlpModel(2, 3, k=4, act="tanh", features=features)
    params = model.init_params(r)
    _, g = model.loss_and_grads(params, ws)
    check_numeric(model, params, g, ws)


def check_numeric(model, params, grads, ws, h=1e-6):
    for name, t in params.tensors().items():
        for idx in np.ndindex(t.shape):
            old = t[idx]
            t[idx] = old + h
            lp = model.loss_and_grads(params, ws)[0]
            t[idx] = old - h
            lm = model.loss_and_grads(params, ws)[0]
            t[idx] = old
            assert grads.tensors()[name][idx] == pytest.approx((lp - lm) / (2 * h), abs=1e-7)


def test_rnn_examples():
    spec = RnnSpec(d=1, k=1, act="tanh")
    zero = RnnParams(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros(1), np.zeros((1, 1)), np.zeros(1))
    window = WindowInstance([[0.3], [9.0]], [0.0])
    assert rnn_rollout(spec, zero, window) == 0.0
    unit = RnnParams(np.ones((1, 1)), np.full((1, 1), 0.5), np.zeros(1), np.ones((1, 1)), np.zeros(1))
    assert rnn_rollout(spec, unit, window) == pytest.approx(0.291312612451591, abs=1e-12)


def test_rnn_bptt_gradients():
    r = Rng(6)
    ws = windows_for_segment(r.normal((10, 2)), r.normal(10), 0, 10, 4)
    model = RnnModel(RnnSpec(d=2, k=3, act="tanh"))
    params = model.init_params(r)
    _, g = model.loss_and_grads(params, ws)
    check_numeric(model, params, g, ws)


def test_rnn_counts():
    model = RnnModel(RnnSpec(d=27, k=128))
    assert model.count_parameters() == 128 * 27 + 128 * 128 + 2 * 128 + 1
    assert model.count_macs(5) == 4 * (128 * 27 + 128 * 128) + 128
