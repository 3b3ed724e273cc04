"""Tests for the Gaussian prior arithmetic on the ternary grid."""

import math

import numpy as np
import pytest

from tritcodec.errors import ParameterError
from tritcodec.prior import (
    GaussianField,
    bin_pmf,
    choose_depth,
    grid_half,
    interval_stats,
    quantize_center,
    round_half_away,
)


def phi(x):
    """Standard normal CDF via the stdlib erf (independent oracle)."""
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def oracle_pmf(k, sigma, depth):
    """Truncated discrete Gaussian bin mass computed directly from erf."""
    half = (3 ** depth - 1) // 2
    norm = phi((half + 0.5) / sigma) - phi(-(half + 0.5) / sigma)
    return (phi((k + 0.5) / sigma) - phi((k - 0.5) / sigma)) / norm


class TestQuantizeCenter:
    def test_zero_maps_to_zero(self):
        field = GaussianField(np.zeros(1), np.ones(1))
        res = quantize_center(np.zeros((1, 1, 1)), field)
        assert res.values[0, 0, 0] == 0

    def test_ties_round_away_from_zero(self):
        field = GaussianField(np.zeros(1), np.ones(1))
        y = np.array([[[2.49, 2.5, -2.5, -2.49]]])
        res = quantize_center(y, field)
        np.testing.assert_array_equal(res.values[0, 0], [2, 3, -3, -2])

    def test_clamp_is_counted(self):
        field = GaussianField(np.zeros(1), np.ones(1))
        y = np.array([[[50.0, 0.0]]])
        res = quantize_center(y, field, depth=2)
        assert res.values[0, 0, 0] == grid_half(2)
        assert res.clamped == 1

    def test_monte_carlo_pmf_matches(self):
        """Empirical histogram of quantized N(0,1) draws matches bin_pmf.

        Total-variation oracle over one million samples.
        """
        rng = np.random.default_rng(7)
        y = rng.standard_normal((1, 1000, 1000))
        field = GaussianField(np.zeros(1), np.ones(1))
        res = quantize_center(y, field)
        half = grid_half(res.depth)
        counts = np.bincount(
            (res.values + half).ravel(), minlength=2 * half + 1
        )
        emp = counts / counts.sum()
        ks = np.arange(-half, half + 1)
        model = bin_pmf(ks, 1.0, res.depth)
        tv = 0.5 * np.abs(emp - model).sum()
        assert tv < 0.01


class TestBinPmf:
    def test_uniform_limit(self):
        """sigma -> infinity makes every bin mass approach 1/3**L."""
        ks = np.arange(-4, 5)
        p = bin_pmf(ks, 1e6, 2)
        np.testing.assert_allclose(p, 1.0 / 9.0, atol=1e-6)

    def test_center_bin_sigma_one(self):
        expected = phi(0.5) - phi(-0.5)  # 0.3829249...
        assert bin_pmf(0, 1.0, 3) == pytest.approx(expected, abs=1e-12)

    def test_grid_sums_to_one(self):
        ks = np.arange(-13, 14)
        for sigma in (0.05, 0.7, 1.0, 4.0, 100.0):
            total = bin_pmf(ks, sigma, 3).sum()
            assert total == pytest.approx(1.0, abs=1e-12)

    def test_grid_sums_to_one_random(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            depth = int(rng.integers(1, 9))
            sigma = float(np.exp(rng.uniform(-3.0, 6.0)))
            half = grid_half(depth)
            ks = np.arange(-half, half + 1)
            assert bin_pmf(ks, sigma, depth).sum() == pytest.approx(1.0, abs=1e-12)

    def test_matches_high_precision_oracle(self):
        """Random bins against a 60-digit mpmath evaluation."""
        import mpmath

        mpmath.mp.dps = 60

        def tail(x):  # P(Z > x), stable for large positive x
            return mpmath.ncdf(-mpmath.mpf(x))

        rng = np.random.default_rng(3)
        for _ in range(100):
            depth = int(rng.integers(1, 7))
            half = grid_half(depth)
            k = int(rng.integers(-half, half + 1))
            sigma = float(np.exp(rng.uniform(-2.0, 4.0)))
            norm = 1 - 2 * tail((half + 0.5) / sigma)
            ref = (tail((abs(k) - 0.5) / sigma) - tail((abs(k) + 0.5) / sigma)) / norm
            assert bin_pmf(k, sigma, depth) == pytest.approx(
                float(ref), rel=1e-10, abs=1e-300
            )

    def test_rejects_bad_sigma(self):
        with pytest.raises(ParameterError):
            bin_pmf(0, 0.0, 2)
        with pytest.raises(ParameterError):
            bin_pmf(0, -1.0, 2)

    def test_rejects_out_of_grid(self):
        with pytest.raises(ParameterError):
            bin_pmf(5, 1.0, 2)


class TestIntervalStats:
    def test_symmetric_interval_mean_zero(self):
        for sigma in (0.5, 1.0, 3.0):
            st = interval_stats(-4, 4, sigma, 2)
            assert st.mean == pytest.approx(0.0, abs=1e-12)

    def test_singleton(self):
        st = interval_stats(2, 2, 1.7, 2)
        assert st.mean == pytest.approx(2.0)
        assert st.second_moment == pytest.approx(4.0)

    def test_four_term_erf_oracle(self):
        """[1, 4] at sigma=2, L=2: brute-force sum over the four bins."""
        sigma, depth = 2.0, 2
        ps = [oracle_pmf(k, sigma, depth) for k in range(1, 5)]
        mass = sum(ps)
        mean = sum(k * p for k, p in zip(range(1, 5), ps)) / mass
        second = sum(k * k * p for k, p in zip(range(1, 5), ps)) / mass
        st = interval_stats(1, 4, sigma, depth)
        assert st.mass == pytest.approx(mass, rel=1e-12)
        assert st.mean == pytest.approx(mean, rel=1e-12)
        assert st.second_moment == pytest.approx(second, rel=1e-12)

    def test_degenerate_reports_midpoint(self):
        """An interval far in the tail underflows to zero mass."""
        st = interval_stats(310, 313, 0.05, 6)
        assert bool(st.degenerate)
        assert st.mass == 0.0
        assert st.mean == pytest.approx(311.5)

    def test_mass_splits_into_thirds(self):
        """Parent interval mass equals the sum of its three third masses."""
        rng = np.random.default_rng(5)
        for _ in range(50):
            depth = int(rng.integers(2, 7))
            half = grid_half(depth)
            level = int(rng.integers(1, depth))
            width = 3 ** (depth - level + 1)
            lo = int(rng.integers(-half, half - width + 2))
            sigma = float(np.exp(rng.uniform(-1.0, 4.0)))
            parent = interval_stats(lo, lo + width - 1, sigma, depth)
            third = width // 3
            parts = [
                interval_stats(lo + i * third, lo + (i + 1) * third - 1, sigma, depth)
                for i in range(3)
            ]
            assert parent.mass == pytest.approx(
                sum(p.mass for p in parts), rel=1e-10, abs=1e-300
            )

    def test_conditional_mean_is_optimal(self):
        """The conditional mean minimizes expected squared error.

        Compared against the interval midpoint and a 101-point scan of
        candidate reconstruction values.
        """
        rng = np.random.default_rng(17)
        for _ in range(100):
            depth = int(rng.integers(2, 6))
            half = grid_half(depth)
            width = int(rng.integers(2, 2 * half + 1))
            lo = int(rng.integers(-half, half - width + 2))
            hi = lo + width - 1
            sigma = float(np.exp(rng.uniform(-1.5, 3.0)))
            st = interval_stats(lo, hi, sigma, depth)
            if bool(st.degenerate):
                continue
            ks = np.arange(lo, hi + 1)
            pk = bin_pmf(ks, sigma, depth)
            pk = pk / pk.sum()

            def ese(c):
                return float(np.sum(pk * (ks - c) ** 2))

            best = ese(float(st.mean))
            assert best <= ese((lo + hi) / 2.0) + 1e-10
            for c in np.linspace(lo, hi, 101):
                assert best <= ese(float(c)) + 1e-10

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(23)
        depth = 4
        half = grid_half(depth)
        width = 9
        los = rng.integers(-half, half - width + 2, size=20)
        sigmas = np.exp(rng.uniform(-1, 3, size=20))
        vec = interval_stats(los, los + width - 1, sigmas, depth)
        for i in range(20):
            st = interval_stats(int(los[i]), int(los[i]) + width - 1, float(sigmas[i]), depth)
            assert vec.mass[i] == pytest.approx(float(st.mass))
            assert vec.mean[i] == pytest.approx(float(st.mean))


class TestChooseDepth:
    def test_floor_at_one(self):
        assert choose_depth(np.zeros((1, 2, 2))) == 1

    def test_exact_power(self):
        y = np.zeros((1, 1, 2))
        y[0, 0, 0] = 4.0
        assert choose_depth(y) == 2

    def test_large_value(self):
        y = np.array([[[1093.0]]])
        # 2*1093 + 1 = 2187 = 3**7
        assert choose_depth(y) == 7

    def test_cap(self):
        y = np.array([[[1e12]]])
        assert choose_depth(y) == 11


class TestGaussianField:
    def test_rejects_nonpositive_scale(self):
        with pytest.raises(ParameterError):
            GaussianField(np.zeros(2), np.array([1.0, 0.0]))

    def test_broadcast_per_channel(self):
        f = GaussianField(np.array([1.0, 2.0]), np.array([3.0, 4.0]))
        m = f.mean_map((2, 2, 2))
        assert m.shape == (2, 2, 2)
        assert np.all(m[1] == 2.0)

    def test_rounded_f32_is_idempotent(self):
        f = GaussianField(np.array([0.1]), np.array([1.7]))
        r1 = f.rounded_f32()
        r2 = r1.rounded_f32()
        np.testing.assert_array_equal(r1.mean, r2.mean)
        np.testing.assert_array_equal(r1.scale, r2.scale)


class TestRounding:
    def test_half_away_from_zero(self):
        x = np.array([0.5, 1.5, -0.5, -1.5, 0.49, -0.49])
        np.testing.assert_array_equal(round_half_away(x), [1, 2, -1, -2, 0, -0])
