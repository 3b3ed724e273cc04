"""Gaussian prior arithmetic on the ternary quantization grid.

A latent element is modeled as a zero-mean Gaussian (after centering by the
field mean) and quantized to unit-width integer bins.  The grid for depth L
holds the 3**L integers in [-(3**L - 1)/2, +(3**L - 1)/2].  Bin masses come
from the Gaussian integrated over each bin and renormalized over the grid,
i.e. the prior is the Gaussian truncated to the clamp range.  All interval
statistics (mass, conditional mean, conditional second moment) are taken
under that discrete distribution.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import ParameterError

MAX_DEPTH = 11  # keeps 3**L comfortably inside int64


def grid_half(depth):
    """Largest bin index of the depth-L grid, (3**L - 1) / 2."""
    if depth < 1 or depth > MAX_DEPTH:
        raise ParameterError(f"depth must be in [1, {MAX_DEPTH}], got {depth}")
    return (3 ** depth - 1) // 2


@dataclass(frozen=True)
class GaussianField:
    """Per-channel or per-element entropy parameters (mean, scale).

    ``mean`` and ``scale`` are float64 arrays of shape (C,) for per-channel
    mode or (C, H, W) for per-element mode.  Scales must be strictly
    positive.  Per-channel is the serializable default.
    """

    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        scale = np.asarray(self.scale, dtype=np.float64)
        if mean.shape != scale.shape:
            raise ParameterError("mean and scale shapes differ")
        if mean.ndim not in (1, 3):
            raise ParameterError("field arrays must have shape (C,) or (C, H, W)")
        if not np.all(np.isfinite(mean)) or not np.all(np.isfinite(scale)):
            raise ParameterError("field parameters must be finite")
        if np.any(scale <= 0):
            raise ParameterError("every scale must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scale", scale)

    @property
    def per_channel(self):
        return self.mean.ndim == 1

    @property
    def channels(self):
        return self.mean.shape[0]

    def mean_map(self, shape):
        """Mean broadcast to a full (C, H, W) array."""
        return self._broadcast(self.mean, shape)

    def scale_map(self, shape):
        """Scale broadcast to a full (C, H, W) array."""
        return self._broadcast(self.scale, shape)

    def _broadcast(self, arr, shape):
        if arr.shape[0] != shape[0]:
            raise ParameterError(
                f"field has {arr.shape[0]} channels, tensor has {shape[0]}"
            )
        if arr.ndim == 1:
            return np.broadcast_to(arr[:, None, None], shape).copy()
        if arr.shape != tuple(shape):
            raise ParameterError("per-element field shape does not match tensor")
        return arr.copy()

    def rounded_f32(self):
        """Field with parameters rounded through float32.

        Streams carry parameters as float32; encoder and decoder must use
        bit-identical values, so the encoder rounds before any probability
        is computed.
        """
        return GaussianField(
            self.mean.astype(np.float32).astype(np.float64),
            self.scale.astype(np.float32).astype(np.float64),
        )


@dataclass(frozen=True)
class QuantizeResult:
    values: np.ndarray  # int64 (C, H, W)
    depth: int
    clamped: int  # number of elements clipped into the grid


@dataclass(frozen=True)
class IntervalStats:
    mass: np.ndarray
    mean: np.ndarray
    second_moment: np.ndarray
    degenerate: np.ndarray  # True where mass underflowed to zero


def round_half_away(x):
    """Round to nearest integer with ties away from zero."""
    x = np.asarray(x, dtype=np.float64)
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def choose_depth(y_centered, cap=MAX_DEPTH):
    """Smallest depth whose grid covers the centered tensor.

    Picks the least L >= 1 with 3**L >= 2*ceil(max|y|) + 1, capped at
    ``cap``.
    """
    y_centered = np.asarray(y_centered, dtype=np.float64)
    peak = float(np.max(np.abs(y_centered))) if y_centered.size else 0.0
    need = 2 * int(np.ceil(peak)) + 1
    depth = 1
    while 3 ** depth < need and depth < cap:
        depth += 1
    return depth


def quantize_center(y, field, depth=None, cap=MAX_DEPTH):
    """Center by the field mean, round, and clamp into the grid.

    Rounding is half-away-from-zero.  When ``depth`` is None it is chosen
    by :func:`choose_depth` on the centered tensor.  Clamping is silent;
    the count of clamped elements is reported in the result.
    """
    y = np.asarray(y, dtype=np.float64)
    centered = y - field.mean_map(y.shape)
    if depth is None:
        depth = choose_depth(centered, cap=cap)
    half = grid_half(depth)
    rounded = round_half_away(centered)
    clipped = np.clip(rounded, -half, half)
    clamped = int(np.count_nonzero(rounded != clipped))
    return QuantizeResult(clipped.astype(np.int64), depth, clamped)


def _signed_bin_mass(k, sigma):
    """Gaussian mass of unit bin k, computed tail-stably and sign-symmetric."""
    lo = (np.abs(k) - 0.5) / sigma
    hi = (np.abs(k) + 0.5) / sigma
    return ndtr(-lo) - ndtr(-hi)


def bin_pmf(k, sigma, depth):
    """Probability of bin ``k`` under the truncated discrete prior.

    The Gaussian bin integral Phi((k+1/2)/sigma) - Phi((k-1/2)/sigma) is
    renormalized by the total grid mass so the full grid sums to one.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ParameterError("sigma must be strictly positive")
    half = grid_half(depth)
    k = np.asarray(k)
    if np.any(np.abs(k) > half):
        raise ParameterError("bin index outside the grid")
    norm = 1.0 - 2.0 * ndtr(-(half + 0.5) / sigma)
    raw = _signed_bin_mass(k.astype(np.float64), sigma)
    # A fully underflowed norm means sigma is so large that the grid mass
    # is indistinguishable from zero; the limit distribution is uniform.
    uniform = 1.0 / (2 * half + 1)
    with np.errstate(invalid="ignore"):
        out = np.where(norm > 0.0, raw / np.where(norm > 0.0, norm, 1.0), uniform)
    return out if out.shape else float(out)


def interval_stats(lo, hi, sigma, depth):
    """Mass, conditional mean, and second moment of bins [lo, hi].

    Vectorized over broadcastable ``lo``, ``hi``, ``sigma``.  Intervals with
    fully underflowed mass are flagged degenerate and report the interval
    midpoint (zero second-moment contribution beyond midpoint**2).
    """
    lo = np.asarray(lo, dtype=np.int64)
    hi = np.asarray(hi, dtype=np.int64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ParameterError("sigma must be strictly positive")
    half = grid_half(depth)
    if np.any(lo > hi):
        raise ParameterError("interval must satisfy lo <= hi")
    if np.any(lo < -half) or np.any(hi > half):
        raise ParameterError("interval outside the grid")
    widths = hi - lo + 1
    if widths.size == 0:
        shape = np.broadcast_shapes(lo.shape, hi.shape, sigma.shape)
        empty = np.zeros(shape)
        return IntervalStats(empty, empty, empty, np.zeros(shape, dtype=bool))
    if int(widths.min()) != int(widths.max()):
        raise ParameterError("interval_stats requires a uniform interval width")
    width = int(widths.flat[0])

    shape = np.broadcast_shapes(lo.shape, hi.shape, sigma.shape)
    lo_b = np.broadcast_to(lo, shape).astype(np.float64)
    sig_b = np.broadcast_to(sigma, shape)
    norm = 1.0 - 2.0 * ndtr(-(half + 0.5) / sig_b)

    if width == 1:
        # Singletons reconstruct to the bin index exactly.
        mass = _signed_bin_mass(lo_b, sig_b)
        degenerate = mass <= 0.0
        with np.errstate(invalid="ignore"):
            mass_n = np.where(norm > 0.0, mass / np.where(norm > 0.0, norm, 1.0), 0.0)
        mass_n = np.where(degenerate, 0.0, mass_n)
        return IntervalStats(mass_n, lo_b.copy(), lo_b * lo_b, degenerate)

    mass = np.zeros(shape)
    s1 = np.zeros(shape)
    s2 = np.zeros(shape)
    for off in range(width):
        k = lo_b + off
        p = _signed_bin_mass(k, sig_b)
        mass += p
        s1 += k * p
        s2 += k * k * p

    degenerate = mass <= 0.0
    safe = np.where(degenerate, 1.0, mass)
    mid = (lo_b + np.broadcast_to(hi, shape)) / 2.0
    mean = np.where(degenerate, mid, s1 / safe)
    second = np.where(degenerate, mid * mid, s2 / safe)
    with np.errstate(invalid="ignore"):
        mass_n = np.where(norm > 0.0, mass / np.where(norm > 0.0, norm, 1.0), 0.0)
    mass_n = np.where(degenerate, 0.0, mass_n)
    return IntervalStats(mass_n, mean, second, degenerate)
