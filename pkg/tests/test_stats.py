import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special
from scipy import stats as sps

from spdelab import StreamKey, derive_stream, empirical_moments, ks_test, loglog_slope


class TestKsTest:
    def test_single_point_at_median(self):
        res = ks_test([0.0])
        assert res.statistic == pytest.approx(0.5, rel=1e-12)
        assert res.sample_size == 1

    def test_quantile_grid(self):
        sample = sps.norm.ppf((np.arange(1, 11) - 0.5) / 10)
        res = ks_test(sample)
        assert res.statistic == pytest.approx(0.05, rel=1e-9)

    def test_stream_normals_pass(self):
        draws = derive_stream(StreamKey(314, 0, 0)).standard_normal(1_000_000)
        assert ks_test(draws).p_value > 0.01

    def test_statistic_matches_scipy(self):
        rng = np.random.default_rng(0)
        for n in (5, 50, 500):
            sample = rng.standard_normal(n) * 1.2 + 0.1
            ours = ks_test(sample)
            ref = sps.kstest(sample, "norm")
            assert ours.statistic == pytest.approx(ref.statistic, rel=1e-12)

    def test_pvalue_matches_scipy_asymptotic(self):
        rng = np.random.default_rng(1)
        sample = rng.standard_normal(500)
        ours = ks_test(sample)
        ref = sps.kstest(sample, "norm", mode="asymp")
        assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-9)

    def test_survival_series_matches_scipy_kolmogorov(self):
        from spdelab.stats import _kolmogorov_sf

        for t in (0.3, 0.5, 0.8, 1.0, 1.5, 2.0, 3.0):
            assert _kolmogorov_sf(t) == pytest.approx(special.kolmogorov(t), rel=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(2)
        sample = rng.standard_normal(200)
        shuffled = rng.permutation(sample)
        a, b = ks_test(sample), ks_test(shuffled)
        assert a.statistic == b.statistic and a.p_value == b.p_value

    def test_empty_sample_rejected(self):
        with pytest.raises(ValueError):
            ks_test([])

    def test_bounds(self):
        rng = np.random.default_rng(3)
        for sample in (rng.standard_normal(20), rng.uniform(5, 6, 40)):
            res = ks_test(sample)
            assert 0.0 <= res.statistic <= 1.0
            assert 0.0 <= res.p_value <= 1.0


class TestEmpiricalMoments:
    def test_constant_sample(self):
        mean, var, _, _ = empirical_moments([1.0, 1.0, 1.0, 1.0])
        assert mean == 1.0 and var == 0.0

    def test_two_points_unbiased_variance(self):
        mean, var, _, _ = empirical_moments([-1.0, 1.0])
        assert mean == 0.0 and var == pytest.approx(2.0, rel=1e-12)

    def test_large_normal_sample(self):
        draws = derive_stream(StreamKey(271828, 0, 0)).standard_normal(1_000_000)
        mean, var, skew, kurt = empirical_moments(draws)
        assert abs(mean) < 0.005
        assert abs(var - 1.0) < 0.01
        assert abs(skew) < 0.01
        assert abs(kurt - 3.0) < 0.05

    def test_undersized(self):
        with pytest.raises(ValueError):
            empirical_moments([1.0])
        # kurtosis undefined below 4 points but mean/variance still usable
        mean, var, skew, kurt = empirical_moments([0.0, 1.0, 2.0])
        assert mean == 1.0 and math.isnan(kurt)

    @given(
        shift=st.floats(-100.0, 100.0),
        scale=st.floats(0.01, 100.0),
    )
    def test_translation_scale_equivariance(self, shift, scale):
        base = np.array([0.3, -1.2, 4.5, 2.2, -0.7])
        m0, v0, _, _ = empirical_moments(base)
        m1, v1, _, _ = empirical_moments(base * scale + shift)
        assert m1 == pytest.approx(m0 * scale + shift, rel=1e-9, abs=1e-9)
        assert v1 == pytest.approx(v0 * scale**2, rel=1e-9)


class TestLogLogSlope:
    def test_exact_power_law(self):
        xs = [1.0, 2.0, 4.0, 8.0]
        fit = loglog_slope([(x, 4.0 * x**-2) for x in xs])
        assert fit.slope == pytest.approx(-2.0, rel=1e-12)
        assert fit.r_squared > 1.0 - 1e-12

    def test_constant_y(self):
        fit = loglog_slope([(1.0, 3.5), (7.0, 3.5), (20.0, 3.5)])
        assert fit.slope == 0.0
        assert fit.r_squared == 1.0

    def test_two_points(self):
        fit = loglog_slope([(1.0, 2.0), (2.0, 1.0)])
        assert fit.slope == pytest.approx(-1.0, rel=1e-12)

    def test_y_scaling_moves_intercept_only(self):
        points = [(1.0, 2.0), (2.0, 1.1), (4.0, 0.3), (8.0, 0.2)]
        base = loglog_slope(points)
        scaled = loglog_slope([(x, 100.0 * y) for x, y in points])
        assert scaled.slope == pytest.approx(base.slope, rel=1e-12)
        assert scaled.intercept == pytest.approx(base.intercept + math.log(100.0), rel=1e-12)
        assert scaled.r_squared == pytest.approx(base.r_squared, rel=1e-9)

    def test_validation(self):
        with pytest.raises(ValueError):
            loglog_slope([(1.0, 1.0)])
        with pytest.raises(ValueError):
            loglog_slope([(1.0, 1.0), (2.0, -1.0)])
        with pytest.raises(ValueError):
            loglog_slope([(1.0, 1.0), (1.0, 2.0)])
