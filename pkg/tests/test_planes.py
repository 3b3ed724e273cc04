"""Tests for trit-plane slicing, probabilities, and RD ordering."""

import math

import numpy as np
import pytest

from tritcodec.errors import DataError, ParameterError
from tritcodec.planes import (
    DecodePosition,
    PrefixState,
    conditional_mean,
    entropy_bits,
    expected_values,
    plane_stats,
    rd_order,
    reconstruct_exact,
    reconstruct_partial,
    slice_planes,
    trit_probabilities,
)
from tritcodec.prior import bin_pmf, grid_half, interval_stats


def phi(x):
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


class TestSlicing:
    def test_value_two_depth_two(self):
        """2 shifted by 4 is 20 in base 3: MST selects the upper third."""
        planes = slice_planes(np.array([[[2]]]), 2)
        assert planes[0, 0, 0, 0] == 2
        assert planes[1, 0, 0, 0] == 0

    def test_zero_is_all_middle(self):
        for depth in (1, 3, 5):
            planes = slice_planes(np.zeros((1, 2, 2), dtype=np.int64), depth)
            assert np.all(planes == 1)

    def test_round_trip_random(self):
        rng = np.random.default_rng(4)
        depth = 5
        half = grid_half(depth)
        yhat = rng.integers(-half, half + 1, size=(2, 6, 7))
        planes = slice_planes(yhat, depth)
        np.testing.assert_array_equal(reconstruct_exact(planes, depth), yhat)

    def test_out_of_range_rejected(self):
        with pytest.raises(DataError):
            slice_planes(np.array([[[5]]]), 2)


class TestTritProbabilities:
    def test_uniform_limit(self):
        lo = np.full(4, -4, dtype=np.int64)
        width = np.full(4, 9, dtype=np.int64)
        probs, degenerate = trit_probabilities(lo, width, 1e6, 2)
        np.testing.assert_allclose(probs, 1.0 / 3.0, atol=1e-6)
        assert not degenerate.any()

    def test_concentrated_prior(self):
        lo = np.array([-4], dtype=np.int64)
        width = np.array([9], dtype=np.int64)
        probs, _ = trit_probabilities(lo, width, 0.05, 2)
        assert probs[1, 0] > 0.999

    def test_brute_force_nine_bins(self):
        """Full depth-2 grid at sigma=2 against a direct 9-bin erf sum."""
        sigma, depth = 2.0, 2
        masses = [
            sum(float(bin_pmf(k, sigma, depth)) for k in range(lo, lo + 3))
            for lo in (-4, -1, 2)
        ]
        expected = np.array(masses) / sum(masses)
        probs, _ = trit_probabilities(
            np.array([-4], dtype=np.int64), np.array([9], dtype=np.int64), sigma, depth
        )
        np.testing.assert_allclose(probs[:, 0], expected, rtol=1e-12)

    def test_triples_sum_to_one(self):
        rng = np.random.default_rng(9)
        for _ in range(30):
            depth = int(rng.integers(2, 7))
            half = grid_half(depth)
            level = int(rng.integers(1, depth))
            width = 3 ** (depth - level + 1)
            lo = rng.integers(-half, half - width + 2, size=16)
            sigma = float(np.exp(rng.uniform(-2, 3)))
            probs, _ = trit_probabilities(lo, np.full(16, width), sigma, depth)
            np.testing.assert_allclose(probs.sum(axis=0), 1.0, atol=1e-9)
            assert np.all(probs >= 0)

    def test_singleton_is_contract_violation(self):
        with pytest.raises(ParameterError):
            trit_probabilities(np.array([0]), np.array([1]), 1.0, 2)


class TestExpectedValues:
    def test_symmetric_middle_mean_zero(self):
        ev = expected_values(
            np.array([-4], dtype=np.int64), np.array([9], dtype=np.int64), 1.3, 2
        )
        assert ev[1, 0] == pytest.approx(0.0, abs=1e-12)

    def test_singleton_thirds_equal_bin_indices(self):
        """Width-3 prefixes: the three hypothetical means are the bins."""
        lo = np.array([2], dtype=np.int64)
        ev = expected_values(lo, np.array([3], dtype=np.int64), 0.9, 2)
        np.testing.assert_allclose(ev[:, 0], [2.0, 3.0, 4.0])

    def test_upper_third_erf_oracle(self):
        """Depth 3, prefix = upper third, sigma = 2."""
        sigma, depth = 2.0, 3
        lo = 5  # upper third of [-13, 13] is [5, 13]
        ev = expected_values(
            np.array([lo], dtype=np.int64), np.array([9], dtype=np.int64), sigma, depth
        )
        for i in range(3):
            a, b = lo + 3 * i, lo + 3 * i + 2
            ps = [phi((k + 0.5) / sigma) - phi((k - 0.5) / sigma) for k in range(a, b + 1)]
            mean = sum(k * p for k, p in zip(range(a, b + 1), ps)) / sum(ps)
            assert ev[i, 0] == pytest.approx(mean, rel=1e-9)

    def test_means_lie_inside_thirds(self):
        rng = np.random.default_rng(21)
        depth = 4
        half = grid_half(depth)
        width = 27
        lo = rng.integers(-half, half - width + 2, size=32)
        ev = expected_values(lo, np.full(32, width), 1.5, depth)
        for i in range(3):
            assert np.all(ev[i] >= lo + 9 * i - 1e-9)
            assert np.all(ev[i] <= lo + 9 * i + 8 + 1e-9)


class TestReconstructPartial:
    def test_full_position_recovers_exactly(self):
        rng = np.random.default_rng(2)
        depth = 4
        half = grid_half(depth)
        yhat = rng.integers(-half, half + 1, size=(1, 4, 4))
        planes = slice_planes(yhat, depth)
        rec = reconstruct_partial(planes, DecodePosition(depth), 2.0, depth)
        np.testing.assert_allclose(rec, yhat.astype(float), atol=1e-12)

    def test_zero_position_is_zero(self):
        planes = slice_planes(np.ones((1, 3, 3), dtype=np.int64), 3)
        rec = reconstruct_partial(planes, DecodePosition(0), 1.0, 3)
        np.testing.assert_allclose(rec, 0.0, atol=1e-12)

    def test_halfway_matches_elementwise_oracle(self):
        """Half of plane 2 decoded on a 4x4 tensor, against Eq-style
        per-element conditional means computed directly."""
        rng = np.random.default_rng(13)
        depth, sigma = 3, 3.0
        half = grid_half(depth)
        yhat = rng.integers(-half, half + 1, size=(1, 4, 4))
        planes = slice_planes(yhat, depth)
        n = 16
        k = 8
        pos = DecodePosition(1, k)
        rec = reconstruct_partial(planes, pos, sigma, depth).reshape(n)

        # oracle: replay prefix intervals by hand
        state = PrefixState(n, depth)
        state.descend(planes[0].reshape(n))
        stats = plane_stats(state.lo, state.width, np.full(n, sigma), depth)
        perm = rd_order(stats)
        taken = set(perm[:k].tolist())
        for e in range(n):
            lo = int(state.lo[e])
            w = int(state.width[e])
            if e in taken:
                w //= 3
                lo += int(planes[1].reshape(n)[e]) * w
            st = interval_stats(lo, lo + w - 1, sigma, depth)
            assert rec[e] == pytest.approx(float(st.mean), rel=1e-12)

    def test_monotone_fidelity(self):
        """MSE against the quantized tensor is non-increasing in position."""
        rng = np.random.default_rng(31)
        depth = 4
        y = rng.normal(0.0, 8.0, size=(1, 8, 8))
        yhat = np.clip(np.round(y), -grid_half(depth), grid_half(depth))
        planes = slice_planes(yhat.astype(np.int64), depth)
        n = 64
        positions = []
        for lvl in range(depth):
            for k in range(0, n, 5):
                positions.append(DecodePosition(lvl, k))
        positions.append(DecodePosition(depth))
        errors = []
        for pos in positions[:50]:
            rec = reconstruct_partial(planes, pos, 8.0, depth)
            errors.append(float(np.mean((rec - y) ** 2)))
        # positions are ordered by information content within each level
        for lvl in range(depth):
            seg = errors[lvl * 13 : (lvl + 1) * 13]
            assert all(a >= b - 1e-9 for a, b in zip(seg, seg[1:]))


class TestRdOrder:
    def _stats_for(self, lo, width, sigma, depth):
        n = len(lo)
        return plane_stats(
            np.asarray(lo, dtype=np.int64),
            np.full(n, width, dtype=np.int64),
            np.asarray(sigma, dtype=np.float64),
            depth,
        )

    def test_equal_distortion_lower_rate_first(self):
        """With equal dD the smaller-entropy triple goes first."""
        stats = self._stats_for([-13, -13], 27, [4.0, 4.0], 3)
        p = np.array([[0.98, 0.6], [0.01, 0.2], [0.01, 0.2]])
        # force identical distortion terms so only rate differs
        stats.thirds.second_moment[:] = stats.thirds.mean ** 2
        order = rd_order(stats, p)
        assert entropy_bits(p[:, 0]) < entropy_bits(p[:, 1])
        assert list(order) == [0, 1]

    def test_zero_rate_is_first(self):
        stats = self._stats_for([-13, -13], 27, [4.0, 4.0], 3)
        p = np.array([[1.0, 0.4], [0.0, 0.3], [0.0, 0.3]])
        order = rd_order(stats, p)
        assert order[0] == 0

    def test_matches_greedy_oracle(self):
        """A 3x3 plane ordered by repeatedly taking the best dD/R trit."""
        rng = np.random.default_rng(41)
        depth = 3
        half = grid_half(depth)
        lo = rng.integers(-half, half - 8, size=9)
        sigma = np.exp(rng.uniform(-0.5, 2.0, size=9))
        stats = self._stats_for(lo, 9, sigma, depth)
        order = rd_order(stats)

        var_parent = stats.parent.second_moment - stats.parent.mean ** 2
        var_thirds = stats.thirds.second_moment - stats.thirds.mean ** 2
        dd = var_parent - (stats.probs * var_thirds).sum(axis=0)
        rate = entropy_bits(stats.probs, axis=0)
        prio = [float(d / r) if r > 0 else float("inf") for d, r in zip(dd, rate)]
        remaining = list(range(9))
        greedy = []
        while remaining:
            best = max(remaining, key=lambda e: (prio[e], -e))
            greedy.append(best)
            remaining.remove(best)
        assert list(order) == greedy

    def test_ties_break_on_raster_index(self):
        stats = self._stats_for([-13, -13, -13], 27, [2.0, 2.0, 2.0], 3)
        order = rd_order(stats)
        assert list(order) == [0, 1, 2]


class TestPrefixNesting:
    def test_thirds_partition_parent(self):
        """Descending always lands inside the previous interval."""
        rng = np.random.default_rng(8)
        depth = 5
        half = grid_half(depth)
        yhat = rng.integers(-half, half + 1, size=(1, 5, 5))
        planes = slice_planes(yhat, depth)
        n = 25
        state = PrefixState(n, depth)
        prev_lo = state.lo.copy()
        prev_hi = state.lo + state.width - 1
        for l in range(depth):
            state.descend(planes[l].reshape(n))
            hi = state.lo + state.width - 1
            assert np.all(state.lo >= prev_lo) and np.all(hi <= prev_hi)
            prev_lo, prev_hi = state.lo.copy(), hi
        assert np.all(state.width == 1)
        np.testing.assert_array_equal(state.lo, yhat.reshape(n))

    def test_decoder_replay_reproduces_order(self):
        """Recomputing the order from decoded planes matches the encoder."""
        rng = np.random.default_rng(19)
        depth = 4
        half = grid_half(depth)
        yhat = rng.integers(-half, half + 1, size=(1, 6, 6))
        planes = slice_planes(yhat, depth)
        n = 36
        sigma = np.full(n, 5.0)
        enc = PrefixState(n, depth)
        dec = PrefixState(n, depth)
        for l in range(depth):
            enc_order = rd_order(plane_stats(enc.lo, enc.width, sigma, depth))
            dec_order = rd_order(plane_stats(dec.lo, dec.width, sigma, depth))
            np.testing.assert_array_equal(enc_order, dec_order)
            enc.descend(planes[l].reshape(n))
            dec.descend(planes[l].reshape(n))


class TestEntropyBits:
    def test_uniform_triple(self):
        assert entropy_bits(np.array([1, 1, 1]) / 3.0) == pytest.approx(math.log2(3))

    def test_one_hot_is_zero(self):
        assert entropy_bits(np.array([1.0, 0.0, 0.0])) == 0.0


class TestConditionalMean:
    def test_mixed_widths(self):
        lo = np.array([-4, 2], dtype=np.int64)
        width = np.array([9, 3], dtype=np.int64)
        out = conditional_mean(lo, width, 2.0, 2)
        assert out[0] == pytest.approx(0.0, abs=1e-12)
        st = interval_stats(2, 4, 2.0, 2)
        assert out[1] == pytest.approx(float(st.mean))
