"""Built-in invariant battery behind the ``selftest`` subcommand."""

import numpy as np

from . import coder
from .latent_refine import frobenius_error
from .metrics import RdCurve, RdPoint, bd_rate
from .pipeline import CodecConfig, SyntheticSpec, decode_at, encode_source, generate_latents
from .planes import entropy_bits, slice_planes, reconstruct_exact
from .prior import bin_pmf, grid_half
from .rate_refine import Modulation, TemperatureBounds, modulate


def run_selftest():
    checks = []

    def check(name, fn):
        try:
            ok = bool(fn())
            checks.append((name, ok, None))
        except Exception as exc:  # report, never crash the battery
            checks.append((name, False, f"{type(exc).__name__}: {exc}"))

    rng = np.random.default_rng(2024)

    def pmf_normalization():
        for _ in range(20):
            depth = int(rng.integers(1, 8))
            sigma = float(np.exp(rng.uniform(-2, 5)))
            half = grid_half(depth)
            total = bin_pmf(np.arange(-half, half + 1), sigma, depth).sum()
            if abs(total - 1.0) > 1e-12:
                return False
        return True

    def slicing_round_trip():
        depth = 5
        half = grid_half(depth)
        yhat = rng.integers(-half, half + 1, size=(2, 8, 8))
        return np.array_equal(reconstruct_exact(slice_planes(yhat, depth), depth), yhat)

    def coder_round_trip():
        for _ in range(25):
            n = int(rng.integers(1, 400))
            p = rng.dirichlet((1, 1, 1), size=n).T
            freqs = coder.quantize_probs(p).T
            u = rng.random(n)
            cum = np.cumsum(freqs, axis=1) / coder.PROB_SCALE
            syms = (u[:, None] > cum).sum(axis=1).astype(np.int8)
            chunks = coder.encode_symbols(syms, freqs, 128)
            out = [
                coder.decode_chunk(data, freqs[a:b])
                for (a, b), data in zip(coder.chunk_spans(n, 128), chunks)
            ]
            if not np.array_equal(np.concatenate(out), syms):
                return False
        return True

    def modulate_validity():
        p = rng.dirichlet((1, 1, 1), size=256).T
        mod = Modulation(rng.normal(0, 1, size=(3, 256)), rng.normal(0, 2, size=256))
        out = modulate(p, mod, TemperatureBounds())
        sums_ok = np.allclose(out.sum(axis=0), 1.0, atol=1e-9)
        # adding a constant to all three inputs must not change the output
        mod2 = Modulation(mod.delta + 0.37, mod.scale)
        return sums_ok and np.allclose(out, modulate(p, mod2, TemperatureBounds()))

    def entropy_monotone():
        for _ in range(200):
            x = rng.normal(0, 1, size=3)
            b1, b2 = sorted(rng.uniform(0.1, 6.0, size=2))
            if b2 - b1 < 1e-6:
                continue
            h1 = entropy_bits(_softmax(b1 * x))
            h2 = entropy_bits(_softmax(b2 * x))
            if h2 > h1 + 1e-12:
                return False
        return True

    def pipeline_round_trip():
        spec = SyntheticSpec(2, 12, 12, (0.9, 0.9), np.array([3.0, 9.0]), seed=7)
        config = CodecConfig(chunk_size=64, synthetic=spec)
        res = encode_source(config, seed=7)
        dec = decode_at(res.container.serialize())
        return np.array_equal(dec.latent, res.quantized.astype(float))

    def pipeline_monotone():
        spec = SyntheticSpec(2, 12, 12, (0.9, 0.9), np.array([3.0, 9.0]), seed=11)
        config = CodecConfig(chunk_size=64, synthetic=spec)
        y, _ = generate_latents(spec)
        res = encode_source(config, seed=11)
        errs = []
        for size in res.container.boundaries():
            dec = decode_at(res.container, budget=size)
            errs.append(frobenius_error(dec.latent, y))
        return all(a >= b - 1e-9 for a, b in zip(errs, errs[1:]))

    def bd_rate_tool():
        qual = np.linspace(30, 40, 6)
        rates = np.exp(qual / 8.0) / 100.0
        ref = RdCurve([RdPoint(r, q) for r, q in zip(rates, qual)])
        same = bd_rate(ref, ref)
        shifted = RdCurve([RdPoint(r * 0.9, q) for r, q in zip(rates, qual)])
        return abs(same) < 1e-9 and abs(bd_rate(ref, shifted) + 10.0) < 1e-6

    check("bin pmf normalization", pmf_normalization)
    check("trit slicing round trip", slicing_round_trip)
    check("rans chunk round trip", coder_round_trip)
    check("modulation validity and shift invariance", modulate_validity)
    check("temperature entropy monotonicity", entropy_monotone)
    check("encode/decode full-budget identity", pipeline_round_trip)
    check("progressive error monotonicity", pipeline_monotone)
    check("bd-rate identity and uniform shift", bd_rate_tool)

    lines = []
    passed = failed = 0
    for name, ok, detail in checks:
        if ok:
            passed += 1
            lines.append(f"PASS {name}")
        else:
            failed += 1
            suffix = f" ({detail})" if detail else ""
            lines.append(f"FAIL {name}{suffix}")
    return passed, failed, lines


def _softmax(z):
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()
