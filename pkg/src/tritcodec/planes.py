"""Ternary plane slicing, prefix intervals, and per-trit statistics.

A quantized tensor of depth L is sliced into L planes of base-3 digits,
most significant first.  After an element's first ``l`` trits are known its
value is confined to a prefix interval of 3**(L-l) bins; the three equal
thirds of that interval correspond to the three possible next trits.  This
module computes trit probability triples, hypothetical conditional means,
partial reconstructions at fractional decode positions, and the
rate-distortion priority order used to serialize trits within a plane.

All per-plane functions work on flat (N,) element arrays; callers reshape
to (C, H, W) at the edges.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParameterError
from .prior import IntervalStats, grid_half, interval_stats


def slice_planes(yhat, depth):
    """Base-3 digits of the shifted tensor, MST first: (L, C, H, W) int8."""
    yhat = np.asarray(yhat)
    half = grid_half(depth)
    if np.any(np.abs(yhat) > half):
        raise DataError(f"values exceed the depth-{depth} grid")
    shifted = yhat.astype(np.int64) + half
    planes = np.empty((depth,) + yhat.shape, dtype=np.int8)
    for l in range(depth):
        planes[l] = (shifted // 3 ** (depth - 1 - l)) % 3
    return planes

def reconstruct_exact(planes, depth):
    """Invert :func:`slice_planes`."""
    half = grid_half(depth)
    shifted = np.zeros(planes.shape[1:], dtype=np.int64)
    for l in range(depth):
        shifted += planes[l].astype(np.int64) * 3 ** (depth - 1 - l)
    return shifted - half


@dataclass
class DecodePosition:
    """Whole planes decoded plus a trit count into the next plane."""

    level: int
    trits: int = 0

    def validate(self, depth, plane_trits):
        if not 0 <= self.level <= depth:
            raise ParameterError(f"level must be in [0, {depth}]")
        if self.trits < 0 or (self.level < depth and self.trits > plane_trits):
            raise ParameterError("trit count exceeds the plane")
        if self.level == depth and self.trits != 0:
            raise ParameterError("no plane remains beyond full depth")

    def as_float(self, plane_trits):
        """Fractional level, e.g. 2.31 when 31% of plane 3 is decoded."""
        if plane_trits == 0:
            return float(self.level)
        return self.level + self.trits / plane_trits


class PrefixState:
    """Per-element prefix intervals implied by the trits consumed so far."""

    def __init__(self, count, depth):
        self.depth = depth
        self.lo = np.full(count, -grid_half(depth), dtype=np.int64)
        self.width = np.full(count, 3 ** depth, dtype=np.int64)

    @property
    def active(self):
        """Elements that still emit trits (interval not yet a singleton)."""
        return self.width > 1

    def descend(self, trits, idx=None):
        """Consume one trit per element (or per ``idx`` subset)."""
        if idx is None:
            idx = slice(None)
        w = self.width[idx] // 3
        self.lo[idx] = self.lo[idx] + np.asarray(trits, dtype=np.int64) * w
        self.width[idx] = w

    def copy(self):
        out = PrefixState(0, self.depth)
        out.lo = self.lo.copy()
        out.width = self.width.copy()
        return out


@dataclass
class PlaneStats:
    """Interval statistics for one plane: parent intervals and their thirds."""

    parent: IntervalStats  # arrays (N,)
    thirds: IntervalStats  # arrays (3, N)
    probs: np.ndarray      # (3, N) raw trit probabilities
    degenerate: np.ndarray  # (N,) True where the parent mass underflowed


def plane_stats(lo, width, sigma, depth):
    """Parent/third interval statistics for elements of uniform width."""
    lo = np.asarray(lo, dtype=np.int64)
    width = np.asarray(width, dtype=np.int64)
    if width.size == 0:
        raise ParameterError("no elements")
    w = int(width.flat[0])
    if np.any(width != w):
        raise ParameterError("plane_stats requires a uniform prefix width")
    if w < 3 or w % 3 != 0:
        raise ParameterError("prefix width must be a positive multiple of 3")
    third = w // 3
    parent = interval_stats(lo, lo + w - 1, sigma, depth)
    thirds = interval_stats(
        lo[None, :] + third * np.arange(3)[:, None],
        lo[None, :] + third * np.arange(1, 4)[:, None] - 1,
        np.broadcast_to(sigma, lo.shape)[None, :],
        depth,
    )
    total = thirds.mass.sum(axis=0)
    degenerate = total <= 0.0
    safe = np.where(degenerate, 1.0, total)
    probs = np.where(degenerate[None, :], 1.0 / 3.0, thirds.mass / safe)
    return PlaneStats(parent, thirds, probs, degenerate)


def trit_probabilities(lo, width, sigma, depth):
    """Probability triple of the next trit for each element: (3, N)."""
    stats = plane_stats(lo, width, sigma, depth)
    return stats.probs, stats.degenerate


def expected_values(lo, width, sigma, depth):
    """Hypothetical conditional means if the next trit were 0/1/2: (3, N)."""
    return plane_stats(lo, width, sigma, depth).thirds.mean


def entropy_bits(p, axis=0):
    """Shannon entropy in bits along ``axis``; zero entries contribute zero."""
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log2(np.where(p > 0.0, p, 1.0)), 0.0)
    return -terms.sum(axis=axis)


def rd_order(stats, p_refined=None):
    """Descending-priority permutation of a plane's trits.

    priority = dD / R where dD is the expected drop in conditional squared
    error when the trit is revealed (third variances weighted by the
    refined triple) and R is the entropy of the refined triple in bits.
    Zero-rate trits get +inf priority.  Ties break on the flat raster
    index, so encoder and decoder derive identical orders from shared
    state.
    """
    p = stats.probs if p_refined is None else np.asarray(p_refined, dtype=np.float64)
    var_parent = stats.parent.second_moment - stats.parent.mean ** 2
    var_thirds = stats.thirds.second_moment - stats.thirds.mean ** 2
    delta_d = var_parent - (p * var_thirds).sum(axis=0)
    rate = entropy_bits(p, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        priority = np.where(rate > 0.0, delta_d / np.where(rate > 0.0, rate, 1.0), np.inf)
    n = priority.shape[0]
    return np.lexsort((np.arange(n), -priority))


def conditional_mean(lo, width, sigma, depth):
    """Conditional-mean reconstruction of mixed-width prefix intervals."""
    lo = np.asarray(lo, dtype=np.int64)
    width = np.asarray(width, dtype=np.int64)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), lo.shape)
    out = np.empty(lo.shape, dtype=np.float64)
    for w in np.unique(width):
        m = width == w
        out[m] = interval_stats(lo[m], lo[m] + int(w) - 1, sigma[m], depth).mean
    return out


def reconstruct_partial(planes, pos, sigma, depth, use_priority=True):
    """Conditional-mean reconstruction at a decode position.

    ``planes`` is the (L, C, H, W) trit stack; elements beyond the first
    ``pos.trits`` entries of plane ``pos.level + 1`` (in serialization
    order) fall back to their level-``pos.level`` interval.
    """
    shape = planes.shape[1:]
    n = int(np.prod(shape))
    sig = np.broadcast_to(np.asarray(sigma, dtype=np.float64), shape).reshape(n)
    pos.validate(depth, n)
    state = PrefixState(n, depth)
    for l in range(pos.level):
        state.descend(planes[l].reshape(n))
    if pos.trits > 0:
        stats = plane_stats(state.lo, state.width, sig, depth)
        perm = rd_order(stats) if use_priority else np.arange(n)
        take = perm[: pos.trits]
        state.descend(planes[pos.level].reshape(n)[take], take)
    return conditional_mean(state.lo, state.width, sig, depth).reshape(shape)
