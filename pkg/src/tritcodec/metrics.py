"""Rate-distortion metrics, sweeps, and the ablation driver.

Quality is measured in PSNR (peak 255 for images; for latent assets the
grid half-range serves as the peak so curves stay comparable across
budgets).  Rates are bits per pixel over the full serialized stream,
header included.  Curve comparison uses the classic Bjontegaard delta:
cubic fits of log10-rate against quality, integrated over the shared
quality range.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParameterError
from .modelio import ModelBundle
from .pipeline import (
    SyntheticSpec,
    decode_at,
    encode_image,
    encode_source,
    generate_latents,
)
from .prior import grid_half

CSV_FLOAT = "%.10g"


@dataclass(frozen=True)
class RdPoint:
    rate: float     # bits per pixel
    quality: float  # PSNR dB

    def __post_init__(self):
        if self.rate < 0:
            raise ParameterError("rate must be nonnegative")


@dataclass
class RdCurve:
    points: list
    tag: str = ""

    def __post_init__(self):
        rates = [p.rate for p in self.points]
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ParameterError("curve rates must be strictly increasing")

    def rates(self):
        return np.array([p.rate for p in self.points])

    def qualities(self):
        return np.array([p.quality for p in self.points])


def mse(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ParameterError("shapes differ")
    return float(np.mean((a - b) ** 2))


def psnr(a, b, peak=255.0):
    """10*log10(peak^2 / MSE); +inf sentinel for identical inputs."""
    err = mse(a, b)
    if err == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / err)


def _fit_log_rate(curve):
    q = curve.qualities()
    r = curve.rates()
    if len(q) < 4:
        raise DataError("BD-rate needs at least 4 points per curve")
    if np.any(~np.isfinite(q)) or np.any(r <= 0):
        raise DataError("BD-rate needs finite qualities and positive rates")
    return np.polyfit(q, np.log10(r), 3)


def bd_rate(reference, test, integrator="analytic", samples=10000):
    """Average percent rate difference of ``test`` against ``reference``.

    ``integrator`` selects the analytic polynomial integral or a dense
    trapezoid evaluation of the same fitted cubics (used as an oracle).
    """
    p_ref = _fit_log_rate(reference)
    p_test = _fit_log_rate(test)
    lo = max(reference.qualities().min(), test.qualities().min())
    hi = min(reference.qualities().max(), test.qualities().max())
    if hi <= lo:
        raise DataError("curves share no quality range")
    if integrator == "analytic":
        int_ref = np.polyval(np.polyint(p_ref), [lo, hi])
        int_test = np.polyval(np.polyint(p_test), [lo, hi])
        avg = ((int_test[1] - int_test[0]) - (int_ref[1] - int_ref[0])) / (hi - lo)
    elif integrator == "trapezoid":
        xs = np.linspace(lo, hi, samples)
        diff = np.polyval(p_test, xs) - np.polyval(p_ref, xs)
        step = (hi - lo) / (samples - 1)
        total = step * (diff.sum() - 0.5 * (diff[0] + diff[-1]))
        avg = total / (hi - lo)
    else:
        raise ParameterError(f"unknown integrator {integrator!r}")
    return float((10.0 ** avg - 1.0) * 100.0)


def pixel_count(result):
    """Rate denominator: image pixels, or latent element count."""
    header = result.container.header
    c, h, w = header.shape
    if header.mode == 0:
        return c * h * w
    block = int(round(np.sqrt(c if header.mode == 1 else c // 3)))
    return (h * block) * (w * block)


@dataclass
class SweepRow:
    budget: object
    bytes_used: int
    bpp: float
    quality: float
    level: float
    err: float


@dataclass
class SweepResult:
    rows: list
    curve: RdCurve
    tag: str = ""


def log_budgets(container, count):
    """Chunk-aligned byte budgets, log-spaced from one chunk to full."""
    sizes = container.boundaries()
    if len(sizes) < 2:
        return [sizes[0]]
    lo, hi = sizes[1], sizes[-1]
    raw = np.geomspace(lo, hi, count)
    return [int(round(v)) for v in raw]


def sweep(result, reference, budgets, models=None, config=None):
    """One encode, many budget-limited decodes.

    ``reference`` is the original latent tensor (latent mode) or uint8
    image.  Returns rows (budget, bytes, bpp, quality, level) plus the
    deduplicated RD curve.
    """
    container = result.container
    header = result.container.header
    pixels = pixel_count(result)
    latent_mode = header.mode == 0
    peak = float(grid_half(header.depth)) if latent_mode else 255.0
    rows = []
    for budget in budgets:
        dec = decode_at(container, budget, models=models, config=config)
        if latent_mode:
            err = mse(dec.latent_uncentered, reference)
        else:
            err = mse(np.clip(dec.image, 0.0, 255.0), np.asarray(reference, dtype=np.float64))
        quality = float("inf") if err == 0.0 else 10.0 * np.log10(peak * peak / err)
        rows.append(
            SweepRow(
                budget=budget,
                bytes_used=dec.bytes_used,
                bpp=8.0 * dec.bytes_used / pixels,
                quality=quality,
                level=dec.level,
                err=err,
            )
        )
    seen = {}
    for row in rows:
        seen[row.bytes_used] = row
    pts = [
        RdPoint(r.bpp, r.quality)
        for r in sorted(seen.values(), key=lambda r: r.bytes_used)
        if np.isfinite(r.quality)
    ]
    return SweepResult(rows, RdCurve(pts), tag="")


def write_sweep_csv(path, rows):
    """Byte-stable CSV: budget,bytes,bpp,psnr,level."""
    lines = ["budget,bytes,bpp,psnr,level"]
    for r in rows:
        budget = r.budget if isinstance(r.budget, str) else str(int(r.budget))
        lines.append(
            ",".join(
                [
                    budget,
                    str(int(r.bytes_used)),
                    CSV_FLOAT % r.bpp,
                    CSV_FLOAT % r.quality,
                    CSV_FLOAT % r.level,
                ]
            )
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


ABLATION_METHODS = (
    ("baseline", False, False, False),
    ("rate-only", True, False, False),
    ("latent-only", False, True, False),
    ("rate+latent", True, True, False),
    ("latent+refit", False, True, True),
    ("full", True, True, True),
)


def _method_bundle(bundle, use_rate, use_latent, use_refit):
    if not (use_rate or use_latent or use_refit):
        return None
    sub = ModelBundle()
    if use_rate:
        sub.rate.models.update(bundle.rate.models)
    if use_latent:
        sub.latent.models.update(bundle.latent.models)
    if use_refit:
        sub.synthesis = bundle.synthesis
    return sub


@dataclass
class AblationResult:
    rows: list  # (method, mean BD-rate %, per-asset list)
    budget_count: int


def ablation(assets, config, bundle, budget_count=10, models_required=True):
    """BD-rates of the toggle grid against the all-off baseline.

    ``assets`` are uint8 images (image mode) or integer seeds for the
    config's synthetic latent source.  Encodes every asset once per
    distinct rate-model setting, sweeps a log-spaced budget ladder, and
    reports the mean per-asset BD-rate of each method relative to the
    baseline sweep.  Synthesis-refit methods only apply in image mode.
    """
    if models_required and (not bundle.rate.models or not bundle.latent.models):
        raise ParameterError("ablation needs trained rate and latent models")
    latent_mode = config.source == "latent"
    methods = [m for m in ABLATION_METHODS if not (latent_mode and m[3])]
    encodes = {name: _method_bundle(bundle, *flags) for name, *flags in methods}

    per_method = {name: [] for name, *_ in methods}
    for asset in assets:
        if latent_mode:
            spec = config.synthetic
            spec = SyntheticSpec(
                spec.channels, spec.height, spec.width, spec.rho,
                spec.sigma.copy(), int(asset),
            )
            reference, _ = generate_latents(spec)
        else:
            reference = asset
        cache = {}
        for name, use_rate, use_latent, use_refit in methods:
            sub = encodes[name]
            key = bool(use_rate)
            if key not in cache:
                models = sub if use_rate else None
                if latent_mode:
                    cache[key] = encode_source(config, models=models, seed=int(asset))
                else:
                    cache[key] = encode_image(asset, config, models)
            result = cache[key]
            budgets = log_budgets(result.container, budget_count)
            res = sweep(result, reference, budgets, models=sub, config=config)
            per_method[name].append(res.curve)

    rows = []
    for name, *_ in methods:
        deltas = []
        for ref_curve, test_curve in zip(per_method["baseline"], per_method[name]):
            deltas.append(bd_rate(ref_curve, test_curve))
        rows.append((name, float(np.mean(deltas)), deltas))
    return AblationResult(rows, budget_count)


def write_ablation_csv(path, result):
    lines = ["method,bd_rate_percent"]
    for name, mean_bd, _ in result.rows:
        lines.append(f"{name},{CSV_FLOAT % mean_bd}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def format_ablation_table(result):
    width = max(len(name) for name, *_ in result.rows)
    lines = [f"{'method'.ljust(width)}  bd-rate"]
    for name, mean_bd, _ in result.rows:
        lines.append(f"{name.ljust(width)}  {mean_bd:+8.2f}%")
    return "\n".join(lines)
