"""Residual refinement of partially decoded latent tensors.

After entropy decoding, a partial reconstruction still carries
quantization error whose scale is set by the surviving interval width.
A windowed perceptron regresses an additive correction per element from
the reconstruction and the entropy parameters (hypothetical means and
trit probabilities are deliberately not used: the decoded trits already
determined the reconstruction, so they add nothing).  Features and the
predicted correction are normalized by each element's interval width so
one model serves a whole band of fractional levels.

Bands mirror the plane routing: the top band (above L-1) is an exact
identity, and three models cover (L-2, L-1], (L-3, L-2], and everything
at or below L-3.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .mlp import Mlp, train_minibatch, window_view
from .planes import (
    DecodePosition,
    PrefixState,
    conditional_mean,
    plane_stats,
    rd_order,
    slice_planes,
)
from .prior import grid_half, round_half_away

BAND_TOP = "identity"   # (L-1, L]: no refinement
BAND_FINE = "fine"      # (L-2, L-1]
BAND_MID = "mid"        # (L-3, L-2]
BAND_LOW = "low"        # [0, L-3]
BANDS = (BAND_FINE, BAND_MID, BAND_LOW)


def band_for_level(level, depth):
    """Routing band for a (possibly fractional) decode level."""
    if level > depth - 1:
        return BAND_TOP
    if level > depth - 2:
        return BAND_FINE
    if level > depth - 3:
        return BAND_MID
    return BAND_LOW


def band_range(band, depth):
    """Integer (lo, hi) endpoint levels of a band."""
    if band == BAND_FINE:
        return max(depth - 2, 0), max(depth - 1, 1)
    if band == BAND_MID:
        return max(depth - 3, 0), max(depth - 2, 1)
    if band == BAND_LOW:
        return 0, max(depth - 3, 1)
    raise ParameterError(f"unknown band {band}")


def frobenius_error(y, ytilde):
    """Frobenius norm of the difference tensor."""
    y = np.asarray(y, dtype=np.float64)
    ytilde = np.asarray(ytilde, dtype=np.float64)
    if y.shape != ytilde.shape:
        raise ParameterError("tensor shapes differ")
    return float(np.sqrt(np.sum((y - ytilde) ** 2)))


class LatentRefiner:
    """Windowed perceptron predicting one width-scaled residual per element."""

    def __init__(self, radius=2, hidden=32, seed=0):
        self.radius = radius
        side = 2 * radius + 1
        # 3 window channels (recon, mean, sigma) + 3 center scalars.
        # Zero output start: the untrained refiner is an exact identity.
        self.net = Mlp(3 * side * side + 3, hidden, 1, seed=seed, zero_output=True)

    def features(self, recon, mean, sigma, widths):
        """Width-normalized windows plus center cues, (N, n_in)."""
        n = recon.size
        w = widths.reshape(n, 1).astype(np.float64)
        center = recon.reshape(n, 1)
        cols = [
            (window_view(recon, self.radius) - center) / w,
            (window_view(mean, self.radius) - mean.reshape(n, 1)) / w,
            window_view(sigma, self.radius) / w,
            center / sigma.reshape(n, 1),
            sigma.reshape(n, 1) / w,
            center / w,
        ]
        return np.concatenate(cols, axis=1)

    def refine(self, recon, mean, sigma, widths):
        """recon + width-scaled predicted residual, same shape as recon."""
        feats = self.features(recon, mean, sigma, widths)
        delta = self.net.forward(feats)[:, 0] * widths.reshape(-1).astype(np.float64)
        return recon + delta.reshape(recon.shape)


@dataclass
class RefineBands:
    """Routes a decode level to a latent refiner (identity above L-1)."""

    models: dict = field(default_factory=dict)  # band name -> LatentRefiner

    def model_for(self, level, depth):
        band = band_for_level(level, depth)
        if band == BAND_TOP:
            return None
        return self.models.get(band)

    def refine(self, recon, mean, sigma, widths, level, depth):
        model = self.model_for(level, depth)
        if model is None:
            return recon
        return model.refine(recon, mean, sigma, widths)


def sample_band_position(rng, band_lo, band_hi):
    """Uniform fractional level inside a band's open interior."""
    return float(rng.uniform(band_lo, band_hi))


@dataclass
class LatentTrainConfig:
    epochs: int = 20
    steps_per_epoch: int = 40
    lr: float = 1e-3
    seed: int = 0
    hidden: int = 32
    radius: int = 2


class _TensorCache:
    """Per-tensor decode replay: planes, orders, per-level prefix states."""

    def __init__(self, y_centered, sigma_map, mean_map, depth):
        self.y = np.asarray(y_centered, dtype=np.float64)
        self.shape = self.y.shape
        self.depth = depth
        self.sigma = sigma_map
        self.mean = mean_map
        n = self.y.size
        half = grid_half(depth)
        yhat = np.clip(round_half_away(self.y), -half, half).astype(np.int64)

        self.planes = slice_planes(yhat, depth).reshape(depth, n)
        sig = sigma_map.reshape(n)
        state = PrefixState(n, depth)
        self.states = [state.copy()]
        self.orders = []
        for l in range(depth):
            stats = plane_stats(state.lo, state.width, sig, depth)
            self.orders.append(rd_order(stats))
            state.descend(self.planes[l])
            self.states.append(state.copy())
        self.sig_flat = sig

    def at_position(self, pos):
        """(recon, widths) at a decode position, shaped like the tensor."""
        state = self.states[pos.level].copy()
        if pos.trits > 0:
            take = self.orders[pos.level][: pos.trits]
            state.descend(self.planes[pos.level][take], take)
        recon = conditional_mean(state.lo, state.width, self.sig_flat, self.depth)
        return recon.reshape(self.shape), state.width.reshape(self.shape)

    def position_for(self, lam):
        level = int(np.floor(lam))
        if level >= self.depth:
            return DecodePosition(self.depth, 0)
        frac = lam - level
        return DecodePosition(level, int(round(frac * self.y.size)))


def _position_loss_grads(model, cache, pos):
    """Frobenius loss at one position and its gradients."""
    recon, widths = cache.at_position(pos)
    feats = model.features(recon, cache.mean, cache.sigma, widths)
    out, h = model.net.forward(feats, keep_hidden=True)
    w = widths.reshape(-1).astype(np.float64)
    ytilde = recon.reshape(-1) + out[:, 0] * w
    resid = cache.y.reshape(-1) - ytilde
    loss = float(np.sqrt(np.sum(resid ** 2)))
    if loss == 0.0 or not np.isfinite(loss):
        return loss, [np.zeros_like(p) for p in model.net.params()]
    g_out = (-(resid * w) / loss)[:, None]
    return loss, model.net.backward(feats, h, g_out)


def _eval_positions(depth, band_lo, band_hi, n_elems):
    mid = (band_lo + band_hi) / 2.0
    out = []
    for lam in (band_hi, mid, band_lo):
        level = int(np.floor(lam))
        out.append(DecodePosition(level, int(round((lam - level) * n_elems))))
    return out


def train_latent_refiner(caches, band, config=LatentTrainConfig(), holdout=None):
    """Fit one band's refiner on cached tensors.

    Each step draws a tensor and evaluates the loss at the band's two
    integer endpoints plus one uniformly random fractional position
    (resampled per step), descending the summed loss.  Returns the model
    with the best held-out loss and the training curve.
    """
    if not caches:
        raise ParameterError("empty training dataset")
    if holdout is None:
        split = max(1, len(caches) // 5)
        if len(caches) > split:
            holdout, caches = caches[:split], caches[split:]
        else:
            holdout = caches
    model = LatentRefiner(radius=config.radius, hidden=config.hidden, seed=config.seed)

    draw = np.random.default_rng(config.seed + 1)

    def loss_grad(idx):
        total = 0.0
        grads = [np.zeros_like(p) for p in model.net.params()]
        cache = caches[int(draw.integers(len(caches)))]
        band_lo, band_hi = band_range(band, cache.depth)
        lam = sample_band_position(draw, band_lo, band_hi)
        positions = [
            DecodePosition(band_hi, 0),
            cache.position_for(lam),
            DecodePosition(band_lo, 0),
        ]
        for pos in positions:
            loss, g = _position_loss_grads(model, cache, pos)
            total += loss
            for acc, part in zip(grads, g):
                acc += part
        return total, grads

    def evaluate():
        total = 0.0
        for cache in holdout:
            lo, hi = band_range(band, cache.depth)
            for pos in _eval_positions(cache.depth, lo, hi, cache.y.size):
                recon, widths = cache.at_position(pos)
                refined = model.refine(recon, cache.mean, cache.sigma, widths)
                total += frobenius_error(cache.y, refined)
        return total / len(holdout)

    best_net, curve = train_minibatch(
        model.net, loss_grad, evaluate,
        n_train=config.steps_per_epoch, epochs=config.epochs,
        batch_size=1, seed=config.seed,
    )
    model.net = best_net
    return model, curve
