import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from phasepredict.errors import SingularityError, ValidationError
from phasepredict.predictor import (PredictorModel, build_training_matrix, default_ridge,
                                    mean_predict, predict, residual_rms, stack_training_matrices,
                                    traditional_model, traditional_predict,
                                    traditional_residual_rms, train)
from phasepredict.protocols import free_running_series
from phasepredict.measure import MeasurementModel

from conftest import ar1


def brute_force_normal_equations(x, y, lam):
    """Independent oracle: solve the full augmented normal system [1 X]^T [1 X] b = [1 X]^T y
    with an unpenalised intercept, via explicit matrix inverse in extended precision."""
    rows, n = x.shape
    a = np.hstack([np.ones((rows, 1)), x]).astype(np.longdouble)
    pen = np.diag([0.0] + [lam] * n).astype(np.longdouble)
    lhs = a.T @ a + pen
    out = []
    for k in range(y.shape[1]):
        rhs = a.T @ y[:, k].astype(np.longdouble)
        # Gauss-Jordan elimination, no library solver involved
        m = np.hstack([lhs, rhs[:, None]])
        size = m.shape[0]
        for c in range(size):
            piv = c + int(np.argmax(np.abs(m[c:, c])))
            m[[c, piv]] = m[[piv, c]]
            m[c] /= m[c, c]
            for r in range(size):
                if r != c:
                    m[r] -= m[r, c] * m[c]
        out.append(m[:, -1].astype(float))
    b = np.array(out).T
    return b[0], b[1:]


class TestTrainingMatrix:
    def test_hand_enumerated(self):
        x, y = build_training_matrix([1, 2, 3, 4, 5], 2, 1)
        assert x.tolist() == [[1, 2], [2, 3], [3, 4]]
        assert y.tolist() == [[3], [4], [5]]

    def test_minimal_length_gives_one_row(self):
        x, y = build_training_matrix(np.arange(7.0), 4, 3)
        assert x.shape == (1, 4) and y.shape == (1, 3)

    @given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 30))
    def test_row_count(self, n, K, extra):
        L = n + K + extra
        x, y = build_training_matrix(np.arange(float(L)), n, K)
        assert x.shape == (L - n - K + 1, n) and y.shape == (L - n - K + 1, K)
        # oldest first, labels follow the features immediately
        assert np.all(y[:, 0] == x[:, -1] + 1)

    def test_too_short(self):
        with pytest.raises(ValidationError):
            build_training_matrix(np.arange(4.0), 3, 2)

    def test_stack_never_spans_series(self):
        x, y = stack_training_matrices([np.arange(5.0), 100 + np.arange(5.0)], 2, 1)
        assert x.shape[0] == 6
        assert not np.any((x[:, 0] < 50) & (y[:, 0] > 50))


class TestTrain:
    def test_exact_linear_relation(self):
        g = np.random.default_rng(0)
        s = g.standard_normal(200)
        x, _ = build_training_matrix(s, 4, 3)
        y = np.repeat(x[:, -1:], 3, axis=1)
        m = train(x, y, ridge=0.0)
        expected = np.zeros((4, 3))
        expected[-1] = 1
        assert np.allclose(m.weights, expected, atol=1e-12)
        assert np.allclose(m.intercepts, 0, atol=1e-12)

    @pytest.mark.parametrize("n,K,lam", [(1, 1, 0.0), (2, 3, 0.0), (5, 2, 0.0), (3, 2, 0.5),
                                         (5, 1, 3.0)])
    def test_matches_brute_force_oracle(self, n, K, lam):
        g = np.random.default_rng(n * 10 + K)
        x = g.standard_normal((60, n)) + 0.3
        y = x @ g.standard_normal((n, K)) + 0.1 * g.standard_normal((60, K)) + 2.0
        m = train(x, y, ridge=lam)
        b0, w = brute_force_normal_equations(x, y, lam)
        assert np.allclose(m.intercepts, b0, rtol=1e-8, atol=0)
        assert np.allclose(m.weights, w, rtol=1e-8, atol=0)

    @given(st.integers(1, 5), st.integers(1, 3), st.integers(0, 2 ** 32 - 1),
           st.sampled_from([0.0, 1e-3, 1.0]))
    def test_oracle_property(self, n, K, seed, lam):
        g = np.random.default_rng(seed)
        x = g.standard_normal((n + 8, n))
        y = g.standard_normal((n + 8, K))
        m = train(x, y, ridge=lam)
        b0, w = brute_force_normal_equations(x, y, lam)
        scale = max(1.0, np.abs(w).max(), np.abs(b0).max())
        assert np.allclose(m.weights, w, rtol=1e-8, atol=1e-8 * scale)
        assert np.allclose(m.intercepts, b0, rtol=1e-8, atol=1e-8 * scale)

    def test_ar1_weight(self):
        rho = 0.6
        x, y = build_training_matrix(ar1(rho, 10_001, seed=1), 1, 1)
        assert x.shape[0] == 10_000
        m = train(x, y, ridge=0.0)
        assert m.weights[0, 0] == pytest.approx(rho, rel=0.05)

    @given(st.integers(1, 6), st.integers(1, 4), st.integers(0, 2 ** 32 - 1))
    def test_feasible_point_dominance(self, n, K, seed):
        g = np.random.default_rng(seed)
        s = np.cumsum(g.standard_normal(n + K + 40)) * 0.1 + g.standard_normal(n + K + 40)
        x, y = build_training_matrix(s, n, K)
        m = train(x, y, ridge=0.0)
        assert np.all(residual_rms(m, x, y) <= traditional_residual_rms(x, y) * (1 + 1e-12))

    def test_dominance_on_simulated_measurements(self, flat_top):
        mm = MeasurementModel(1e-3, readout_sigma=0.05)
        series = [free_running_series(flat_top, mm, 1500, s)[1] for s in (1, 2)]
        x, y = stack_training_matrices(series, 20, 30)
        m = train(x, y, ridge=0.0)
        assert np.all(residual_rms(m, x, y) <= traditional_residual_rms(x, y))

    def test_ridge_monotone(self):
        g = np.random.default_rng(5)
        x = g.standard_normal((80, 4))
        y = x @ [[1.0], [-2.0], [0.5], [3.0]] + g.standard_normal((80, 1))
        norms = [np.linalg.norm(train(x, y, ridge=lam).weights) for lam in
                 (0.0, 0.1, 1.0, 10.0, 100.0, 1e4)]
        assert all(a >= b for a, b in zip(norms, norms[1:]))

    def test_large_ridge_tends_to_mean(self):
        g = np.random.default_rng(6)
        x = g.standard_normal((50, 3))
        y = g.standard_normal((50, 2)) + [1.0, -1.0]
        m = train(x, y, ridge=1e12)
        assert np.allclose(m.weights, 0, atol=1e-9)
        assert np.allclose(m.intercepts, y.mean(axis=0), atol=1e-9)
        mp = mean_predict(y, n=3)
        assert np.allclose(predict(m, x[0]).values, predict(mp, x[0]).values, atol=1e-9)

    def test_constant_features_singular(self):
        x = np.ones((20, 2))
        with pytest.raises(SingularityError, match="ridge"):
            train(x, np.arange(20.0)[:, None], ridge=0.0)
        m = train(x, np.arange(20.0)[:, None], ridge=1.0)
        assert np.all(np.isfinite(m.weights))

    def test_collinear_features_singular(self):
        g = np.random.default_rng(0)
        a = g.standard_normal(30)
        x = np.column_stack([a, 2 * a])
        with pytest.raises(SingularityError):
            train(x, a[:, None], ridge=0.0)

    def test_needs_n_plus_one_rows(self):
        with pytest.raises(ValidationError):
            train(np.zeros((3, 3)), np.zeros((3, 1)))

    def test_negative_ridge(self):
        with pytest.raises(ValidationError):
            train(np.eye(4)[:, :2], np.zeros((4, 1)), ridge=-1.0)

    def test_default_ridge_value(self):
        x = np.array([[1.0, 2.0], [3.0, 5.0], [5.0, 11.0]])
        xc = x - x.mean(axis=0)
        assert default_ridge(x) == pytest.approx(1e-6 * np.trace(xc.T @ xc) / 2)

    def test_ill_conditioned_uses_fallback(self):
        g = np.random.default_rng(1)
        a = g.standard_normal(200)
        x = np.column_stack([a, a + 1e-9 * g.standard_normal(200)])
        m = train(x, a[:, None], ridge=1e-20)
        assert m.solver == "lstsq"
        assert np.allclose(m.predict_rows(x)[:, 0], a, atol=1e-6)

    def test_default_solver_is_cholesky(self):
        g = np.random.default_rng(2)
        m = train(g.standard_normal((30, 3)), g.standard_normal((30, 2)))
        assert m.solver == "cholesky" and m.ridge > 0


class TestPredict:
    def test_hand_set_model(self):
        m = PredictorModel(intercepts=np.array([0.01, -0.02]),
                           weights=np.array([[0.5, 1.0], [2.0, -1.0]]), ridge=0.0,
                           solver="fixed")
        p = predict(m, [0.1, -0.2])
        # k=1: 0.01 + 0.5*0.1 + 2.0*(-0.2) = -0.34 ; k=2: -0.02 + 0.1 + 0.2 = 0.28
        assert p.values == pytest.approx([-0.34, 0.28])
        assert len(p) == 2

    def test_embedding_of_traditional(self):
        m = traditional_model(5, 4)
        recent = [0.1, 0.2, -0.3, 0.05, 0.4]
        assert np.array_equal(predict(m, recent).values, traditional_predict(recent, 4).values)

    def test_traditional_values(self):
        assert traditional_predict([0.1, 0.4], 5).values.tolist() == [0.4] * 5

    def test_zero_weights_constant(self):
        m = PredictorModel(intercepts=np.array([0.3, 0.7]), weights=np.zeros((3, 2)),
                           ridge=0.0, solver="fixed")
        assert predict(m, [5.0, -2.0, 9.0]).values.tolist() == [0.3, 0.7]

    def test_mean_predict_zero_mean(self):
        y = np.array([[1.0, -2.0], [-1.0, 2.0]])
        assert np.all(predict(mean_predict(y, 2), [3.0, 4.0]).values == 0)

    def test_wrong_feature_count(self):
        with pytest.raises(ValidationError):
            predict(traditional_model(3, 1), [0.1, 0.2])
        with pytest.raises(ValidationError):
            predict(traditional_model(2, 1), [0.1, float("nan")])

    @given(arrays(float, 4, elements=st.floats(-1, 1)), st.floats(-10, 10))
    def test_translation_covariance(self, x, c):
        m = PredictorModel(intercepts=np.array([0.2, -0.1, 0.0]),
                           weights=np.arange(12.0).reshape(4, 3) / 7 - 0.5, ridge=0.0,
                           solver="fixed")
        shift = predict(m, x + c).values - predict(m, x).values
        assert np.allclose(shift, c * m.weights.sum(axis=0), atol=1e-9)

    def test_traditional_white_noise_twice_variance(self):
        g = np.random.default_rng(8)
        s = g.standard_normal(200_000)
        x, y = build_training_matrix(s, 1, 1)
        trad = np.mean((y - x) ** 2)
        mean = np.mean((y - y.mean()) ** 2)
        assert trad == pytest.approx(2.0, rel=0.02)
        assert trad > mean

    def test_weights_vanish_far_beyond_correlation_time(self, flat_top):
        # correlation time of the flat-top band is ~ 1/w_c = 6.4 ms = 6.4 cycles
        mm = MeasurementModel(1e-3, readout_sigma=0.02)
        series = [free_running_series(flat_top, mm, 4096, s)[1] for s in range(4)]
        x, y = stack_training_matrices(series, 5, 200)
        m = train(x, y)
        near = np.linalg.norm(m.weights[:, 0])
        far = np.linalg.norm(m.weights[:, 150:], axis=0).max()
        assert far < 0.25 * near
        assert np.abs(m.intercepts[150:]).max() < 0.05


class TestSerialisation:
    def test_json_round_trip(self):
        g = np.random.default_rng(3)
        m = train(g.standard_normal((40, 3)), g.standard_normal((40, 4)),
                  training_meta={"seeds": [1, 2]})
        back = PredictorModel.from_json(m.to_json())
        assert np.array_equal(back.weights, m.weights)
        assert np.array_equal(back.intercepts, m.intercepts)
        assert back.ridge == m.ridge and back.solver == m.solver
        assert back.training_meta["seeds"] == [1, 2]

    def test_layout_i_fastest(self):
        w = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])  # n=3, K=2
        m = PredictorModel(intercepts=np.zeros(2), weights=w, ridge=0.0, solver="fixed")
        doc = json.loads(m.to_json())
        assert doc["weights"] == [1.0, 3.0, 5.0, 2.0, 4.0, 6.0]
        assert doc["n"] == 3 and doc["K"] == 2 and doc["format_version"] == 1
        assert doc["feature_order"] == "oldest-first"

    def test_mean_model_round_trip(self):
        m = mean_predict(np.array([[1.0], [3.0]]), 2)
        back = PredictorModel.from_json(m.to_json())
        assert math.isinf(back.ridge)

    def test_save_load(self, tmp_path):
        m = traditional_model(2, 3)
        back = PredictorModel.load(m.save(tmp_path / "m.json"))
        assert np.array_equal(back.weights, m.weights)

    def test_rejects_bad_shape(self):
        with pytest.raises(ValidationError):
            PredictorModel(intercepts=np.zeros(3), weights=np.zeros((2, 2)), ridge=0.0,
                           solver="fixed")
        with pytest.raises(ValidationError):
            PredictorModel(intercepts=np.zeros(2), weights=np.full((2, 2), np.inf), ridge=0.0,
                           solver="fixed")
