import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from hypothesis.extra.numpy import arrays

from phasepredict.errors import UndefinedCorrelationError, ValidationError
from phasepredict.metrics import (RmsMap, allan_variance, bootstrap_means, ellipse_summary,
                                  normalize_rms_grid, pearson_r, rms_error_map, sample_variance,
                                  sample_variance_curve)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def naive_pearson(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def naive_variance(x):
    m = sum(x) / len(x)
    return sum((v - m) ** 2 for v in x) / (len(x) - 1)


def spread(x):
    return np.ptp(x) > 1e-3 * (1 + np.abs(x).max())


class TestPearson:
    def test_identity_and_negation(self):
        x = np.array([0.1, 0.5, -0.3, 2.0])
        assert pearson_r(x, x) == pytest.approx(1.0)
        assert pearson_r(x, -x) == pytest.approx(-1.0)

    def test_hand_value(self):
        assert pearson_r([1, 2, 3], [2, 2, 4]) == pytest.approx(math.sqrt(3) / 2)

    def test_zero_variance(self):
        with pytest.raises(UndefinedCorrelationError):
            pearson_r([1, 1, 1], [1, 2, 3])

    def test_preconditions(self):
        with pytest.raises(ValidationError):
            pearson_r([1.0], [2.0])
        with pytest.raises(ValidationError):
            pearson_r([1.0, 2.0], [2.0, 3.0, 4.0])

    @given(arrays(float, 12, elements=finite), arrays(float, 12, elements=finite))
    def test_matches_naive(self, x, y):
        assume(spread(x) and spread(y))
        assert pearson_r(x, y) == pytest.approx(naive_pearson(x, y), abs=1e-9)

    @given(arrays(float, 10, elements=finite), arrays(float, 10, elements=finite),
           st.floats(0.01, 100), st.floats(-100, 100))
    def test_affine_invariance(self, x, y, a, b):
        assume(spread(x) and spread(y))
        r = pearson_r(x, y)
        assert pearson_r(a * x + b, y) == pytest.approx(r, abs=1e-9)
        assert pearson_r(-x, y) == pytest.approx(-r, abs=1e-12)


class TestSampleVariance:
    def test_constant(self):
        assert sample_variance(np.full(10, 3.3)) == pytest.approx(0.0, abs=1e-28)

    def test_hand(self):
        assert sample_variance([0.0, 2.0]) == 2.0

    def test_first_n(self):
        assert sample_variance([0.0, 2.0, 100.0], 2) == 2.0

    @pytest.mark.parametrize("N", [0, 1])
    def test_too_small(self, N):
        with pytest.raises(ValidationError):
            sample_variance([1.0, 2.0, 3.0], N)

    def test_too_long(self):
        with pytest.raises(ValidationError):
            sample_variance([1.0, 2.0], 3)

    def test_naive_oracle_10k(self):
        x = np.random.default_rng(0).standard_normal(10_000) * 0.2 + 0.05
        for N in (2, 17, 1000, 10_000):
            assert sample_variance(x, N) == pytest.approx(naive_variance(list(x[:N])), rel=1e-12)

    @given(arrays(float, st.integers(2, 50), elements=finite))
    def test_curve_matches_pointwise(self, x):
        N, v = sample_variance_curve(x)
        assert N[0] == 2 and N[-1] == x.size
        for n_, vv in zip(N, v):
            assert vv == pytest.approx(sample_variance(x, n_), rel=1e-9, abs=1e-9)

    def test_allan_white(self):
        x = np.random.default_rng(1).standard_normal(100_000)
        assert allan_variance(x, 1) == pytest.approx(1.0, rel=0.03)
        with pytest.raises(ValidationError):
            allan_variance(x[:3], 2)


class TestEllipse:
    def test_isotropic(self):
        g = np.random.default_rng(3)
        e = ellipse_summary(g.standard_normal(10_000), g.standard_normal(10_000))
        assert abs(e.r) < 0.1
        assert e.major_length / e.minor_length == pytest.approx(1.0, abs=0.1)

    def test_collinear(self):
        x = np.linspace(-1, 1, 50)
        e = ellipse_summary(x, x)
        assert e.degenerate
        assert e.minor_length == 0.0
        assert np.allclose(e.major_axis, [1 / math.sqrt(2), 1 / math.sqrt(2)])
        assert e.r == pytest.approx(1.0)
        assert e.tilt == pytest.approx(math.pi / 4)

    def test_negative_tilt(self):
        g = np.random.default_rng(4)
        x = g.standard_normal(500)
        e = ellipse_summary(x, -x + 0.1 * g.standard_normal(500))
        assert e.r < 0 and e.tilt < 0

    @given(arrays(float, 20, elements=st.floats(-10, 10)),
           arrays(float, 20, elements=st.floats(-10, 10)))
    def test_reconstruction(self, x, y):
        assume(spread(x) and spread(y))
        e = ellipse_summary(x, y)
        if e.degenerate:
            return
        v = np.column_stack([e.major_axis, e.minor_axis])
        assert np.allclose(v.T @ v, np.eye(2), atol=1e-12)
        rec = v @ np.diag([e.major_length ** 2, e.minor_length ** 2]) @ v.T
        naive = np.cov(np.vstack([x, y]))
        assert np.allclose(rec, naive, rtol=1e-10, atol=1e-10 * np.abs(naive).max())
        assert e.r == pytest.approx(naive[0, 1] / math.sqrt(naive[0, 0] * naive[1, 1]),
                                    abs=1e-10)

    def test_too_short(self):
        with pytest.raises(ValidationError):
            ellipse_summary([1.0, 2.0], [1.0, 3.0])

    def test_to_dict(self):
        d = ellipse_summary([0.0, 1.0, 2.0, 3.5], [0.0, 1.5, 1.0, 3.0]).to_dict()
        assert set(d) >= {"pearson_r", "covariance_rad2", "major_axis", "tilt_rad"}


class TestRmsMap:
    def test_perfect_predictions(self):
        truths = np.random.default_rng(0).standard_normal((30, 4))
        m = rms_error_map({1: truths, 5: truths}, truths, normalization="none")
        assert np.all(m.values == 0)

    def test_first_row_is_traditional(self):
        g = np.random.default_rng(1)
        truths = g.standard_normal((40, 3))
        trad = truths + 0.5
        m = rms_error_map({2: truths + 0.1}, truths, normalization="none", traditional=trad)
        assert m.rows[0] == "1*"
        assert np.allclose(m.row("1*"), 0.5)
        assert np.allclose(m.row(2), 0.1)

    @given(arrays(float, (3, 5), elements=st.floats(0.01, 10)))
    def test_field_min_exactly_one(self, raw):
        m = normalize_rms_grid(["1*", "1", "5"], raw, "field-min")
        assert m.values.min() == 1.0
        assert np.all(m.values >= 1.0)

    def test_uncorrected_rms_mode(self):
        truths = np.array([[3.0, 4.0], [-3.0, -4.0]])
        m = rms_error_map({1: np.zeros((2, 2))}, truths, normalization="uncorrected-rms")
        assert m.normalization == pytest.approx(math.sqrt(12.5))
        assert np.allclose(m.values, np.array([[3.0, 4.0]]) / math.sqrt(12.5))

    def test_invalid(self):
        with pytest.raises(ValidationError):
            normalize_rms_grid(["1"], np.zeros((1, 0)), "none")
        with pytest.raises(ValidationError):
            normalize_rms_grid(["1"], np.array([[np.nan]]), "none")
        with pytest.raises(ValidationError):
            normalize_rms_grid(["1"], np.ones((1, 2)), "percentile")
        with pytest.raises(ValidationError):
            normalize_rms_grid(["1"], np.ones((1, 2)), "noise-rms")
        with pytest.raises(ValidationError):
            rms_error_map({1: np.zeros((3, 2))}, np.zeros((4, 2)))

    def test_csv_round_trip(self):
        m = normalize_rms_grid(["1*", "1", "20"], np.arange(1.0, 10.0).reshape(3, 3), "field-min")
        text = m.to_csv()
        assert text.splitlines()[0] == "normalization_mode,field-min"
        back = RmsMap.from_csv("# config={}\n" + text)
        assert back.rows == m.rows and np.array_equal(back.values, m.values)
        assert np.array_equal(back.horizons, [1, 2, 3])
        assert back.normalization == m.normalization


def test_bootstrap_means_shape_and_centre():
    x = np.random.default_rng(0).standard_normal((50, 2, 3))
    b = bootstrap_means(x, n_boot=500, seed=1)
    assert b.shape == (500, 2, 3)
    assert np.allclose(b.mean(axis=0), x.mean(axis=0), atol=0.05)
    assert np.array_equal(b, bootstrap_means(x, n_boot=500, seed=1))
