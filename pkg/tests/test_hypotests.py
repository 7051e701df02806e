import math

import numpy as np
import pytest

from sagtwin import hypotests as ht


class TestSpecialFunctions:
    def test_normal_cdf(self):
        assert ht.normal_cdf(0.0) == pytest.approx(0.5)
        assert ht.normal_cdf(1.959964) == pytest.approx(0.975, abs=1e-6)

    def test_betai_symmetry_and_known_values(self):
        assert ht.betai(2.0, 2.0, 0.5) == pytest.approx(0.5)
        # I_x(1, b) = 1 - (1-x)^b
        assert ht.betai(1.0, 3.0, 0.3) == pytest.approx(1 - 0.7**3)
        for a, b, x in [(2.5, 3.5, 0.4), (10, 4, 0.7)]:
            assert ht.betai(a, b, x) + ht.betai(b, a, 1 - x) == pytest.approx(1.0)

    def test_t_critical_value(self):
        # two-sided p at the 0.05 critical point of t(29)
        assert ht.t_two_sided_p(2.045, 29) == pytest.approx(0.05, abs=5e-4)

    def test_f_cdf_median(self):
        assert ht.f_cdf(1.0, 10, 10) == pytest.approx(0.5, abs=1e-9)

    def test_kolmogorov_limits(self):
        assert ht.kolmogorov_q(0.0) == 1.0
        assert ht.kolmogorov_q(5.0) < 1e-10
        # Q(0.83) ~ 0.4963 (tabulated)
        assert ht.kolmogorov_q(0.83) == pytest.approx(0.4963, abs=2e-3)


class TestDetectorTests:
    @pytest.fixture(scope="class")
    def reference(self):
        rng = np.random.default_rng(42)
        return rng.standard_normal(8000)

    def test_mean_shift_rejects(self, reference):
        ref_mean, ref_var = reference.mean(), reference.var(ddof=1)
        window = reference[:30] + 5.0 * math.sqrt(ref_var)
        t, p = ht.welch_t_test(window, ref_mean, ref_var, len(reference))
        # shift of 5 sigma over a 30-sample window: t ~ 5 * sqrt(30) ~ 27
        assert abs(t) > 15
        assert p < 1e-10

    def test_variance_scale_rejects(self, reference):
        ref_var = reference.var(ddof=1)
        window = reference[:30] * 3.0
        f, p = ht.variance_f_test(window, ref_var, len(reference))
        # variance scales by 9; the window's own sample variance wobbles
        assert 4.0 < f < 20.0
        assert p < 1e-6

    def test_autocorr_shift_rejects(self, reference):
        r1_ref = ht.lag1_autocorr(reference)
        # strongly correlated window: cumulative sum of noise
        window = np.cumsum(np.random.default_rng(1).standard_normal(30))
        z, p = ht.autocorr_test(window, r1_ref, len(reference))
        assert p < 0.01

    def test_ks_distribution_change_rejects(self, reference):
        ref_sorted = np.sort(reference)
        window = np.abs(reference[:30]) * 2.0 + 1.0
        d, p = ht.ks_2samp(window, ref_sorted)
        assert p < 1e-6

    def test_identical_slice_mostly_accepts(self, reference):
        ref_sorted = np.sort(reference)
        ref_mean, ref_var = reference.mean(), reference.var(ddof=1)
        r1_ref = ht.lag1_autocorr(reference)
        rejections = 0
        rng = np.random.default_rng(7)
        for _ in range(60):
            w = rng.standard_normal(30)
            ps = [
                ht.autocorr_test(w, r1_ref, len(reference))[1],
                ht.ks_2samp(w, ref_sorted)[1],
                ht.variance_f_test(w, ref_var, len(reference))[1],
                ht.welch_t_test(w, ref_mean, ref_var, len(reference))[1],
            ]
            rejections += sum(p < 0.05 for p in ps)
        # 240 test decisions at alpha 0.05: expect about 12 rejections
        assert rejections < 40


class TestNullCalibration:
    """Monte-Carlo null rejection rates: each test must sit at alpha within
    2 * sqrt(alpha (1 - alpha) / trials)."""

    def test_rates_within_band(self):
        rng = np.random.default_rng(0)
        reference = rng.standard_normal(8000)
        ref_sorted = np.sort(reference)
        ref_mean, ref_var = reference.mean(), reference.var(ddof=1)
        r1_ref = ht.lag1_autocorr(reference)
        trials = 1000
        rejects = np.zeros(4)
        for _ in range(trials):
            w = rng.standard_normal(30)
            ps = np.array([
                ht.autocorr_test(w, r1_ref, len(reference))[1],
                ht.ks_2samp(w, ref_sorted)[1],
                ht.variance_f_test(w, ref_var, len(reference))[1],
                ht.welch_t_test(w, ref_mean, ref_var, len(reference))[1],
            ])
            rejects += ps < 0.05
        rates = rejects / trials
        band = 2.0 * math.sqrt(0.05 * 0.95 / trials)
        for name, rate in zip(("corr", "ks", "var", "mean"), rates):
            assert abs(rate - 0.05) <= band, f"{name} rejects at {rate:.4f}"
