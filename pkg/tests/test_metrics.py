"""Tests for PSNR, BD-rate, sweeps, and CSV stability."""

import math

import numpy as np
import pytest

from tritcodec.errors import DataError, ParameterError
from tritcodec.metrics import (
    RdCurve,
    RdPoint,
    bd_rate,
    log_budgets,
    mse,
    psnr,
    sweep,
    write_sweep_csv,
)
from tritcodec.pipeline import CodecConfig, SyntheticSpec, encode_source, generate_latents


def curve_from(rates, qualities):
    return RdCurve([RdPoint(r, q) for r, q in zip(rates, qualities)])


class TestPsnr:
    def test_identical_is_inf(self):
        a = np.full((1, 8, 8), 7.0)
        assert psnr(a, a) == float("inf")

    def test_unit_mse_closed_form(self):
        a = np.zeros((1, 16, 16))
        b = a + 1.0
        assert psnr(a, b) == pytest.approx(20 * math.log10(255), rel=1e-12)
        assert psnr(a, b) == pytest.approx(48.1308, abs=1e-4)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(1)
        a = rng.uniform(0, 255, (1, 6, 7))
        b = rng.uniform(0, 255, (1, 6, 7))
        total = 0.0
        for c in range(1):
            for i in range(6):
                for j in range(7):
                    total += (a[c, i, j] - b[c, i, j]) ** 2
        expected = 10 * math.log10(255 ** 2 / (total / 42))
        assert psnr(a, b) == pytest.approx(expected, abs=1e-9)

    def test_dim_mismatch(self):
        with pytest.raises(ParameterError):
            psnr(np.zeros((1, 2, 2)), np.zeros((1, 2, 3)))


class TestBdRate:
    def _reference(self):
        q = np.linspace(28.0, 44.0, 8)
        r = 0.02 * np.exp(q / 7.5)
        return curve_from(r, q)

    def test_identical_curves_zero(self):
        ref = self._reference()
        assert bd_rate(ref, ref) == pytest.approx(0.0, abs=1e-9)

    def test_uniform_rate_scale(self):
        ref = self._reference()
        test = curve_from(ref.rates() * 0.9, ref.qualities())
        assert bd_rate(ref, test) == pytest.approx(-10.0, abs=1e-6)

    def test_antisymmetry(self):
        ref = self._reference()
        q = ref.qualities()
        test = curve_from(0.018 * np.exp(q / 7.0), q + 0.7)
        ab = bd_rate(ref, test)
        ba = bd_rate(test, ref)
        assert ab == pytest.approx(-ba / (1.0 + ba / 100.0), abs=0.1)

    def test_quartic_curves_match_trapezoid_oracle(self):
        """Analytic polynomial integral vs a dense trapezoid evaluation."""
        rng = np.random.default_rng(2)
        for _ in range(10):
            q = np.sort(rng.uniform(25, 45, 8))
            coeffs = rng.normal(0, 1e-5, 5) * [1, 10, 100, 1000, 1e4]
            log_r = np.polyval(coeffs, q - 35.0) + q / 9.0 - 4.0
            ref = curve_from(10.0 ** log_r, q)
            test = curve_from(10.0 ** (log_r - 0.05), q)
            analytic = bd_rate(ref, test)
            numeric = bd_rate(ref, test, integrator="trapezoid")
            assert analytic == pytest.approx(numeric, abs=0.05)

    def test_needs_four_points(self):
        short = curve_from([0.1, 0.2, 0.3], [30, 33, 36])
        with pytest.raises(DataError):
            bd_rate(short, short)

    def test_disjoint_quality_ranges(self):
        a = curve_from([0.1, 0.2, 0.3, 0.4], [20, 22, 24, 26])
        b = curve_from([0.1, 0.2, 0.3, 0.4], [30, 32, 34, 36])
        with pytest.raises(DataError):
            bd_rate(a, b)

    def test_curve_requires_increasing_rates(self):
        with pytest.raises(ParameterError):
            curve_from([0.3, 0.2, 0.4, 0.5], [30, 31, 32, 33])


class TestSweep:
    def _asset(self, seed=4):
        spec = SyntheticSpec(2, 12, 12, (0.9, 0.9), np.array([3.0, 10.0]), seed=seed)
        config = CodecConfig(chunk_size=64, synthetic=spec)
        result = encode_source(config, seed=seed)
        reference, _ = generate_latents(spec)
        return result, reference, config

    def test_full_budget_single_point(self):
        result, reference, config = self._asset()
        res = sweep(result, reference, ["full"], config=config)
        assert len(res.rows) == 1
        row = res.rows[0]
        assert row.bytes_used == result.total_bytes
        assert row.level == result.depth

    def test_monotone_curve_over_budget_ladder(self):
        result, reference, config = self._asset(5)
        budgets = log_budgets(result.container, 30)
        res = sweep(result, reference, budgets, config=config)
        qs = res.curve.qualities()
        assert np.all(np.diff(qs) >= -1e-9)
        assert np.all(np.diff(res.curve.rates()) > 0)

    def test_csv_byte_stable(self, tmp_path):
        result, reference, config = self._asset(6)
        budgets = log_budgets(result.container, 10)
        res = sweep(result, reference, budgets, config=config)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_sweep_csv(p1, res.rows)
        res2 = sweep(result, reference, budgets, config=config)
        write_sweep_csv(p2, res2.rows)
        assert p1.read_bytes() == p2.read_bytes()
        header = p1.read_text().splitlines()[0]
        assert header == "budget,bytes,bpp,psnr,level"

    def test_bpp_accounting_exact(self):
        """Reported bits are exactly 8x the serialized byte length."""
        result, reference, config = self._asset(7)
        res = sweep(result, reference, ["full"], config=config)
        pixels = 2 * 12 * 12
        assert res.rows[0].bpp == pytest.approx(
            8.0 * result.total_bytes / pixels, rel=1e-12
        )
