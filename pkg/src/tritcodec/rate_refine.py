"""Context-based refinement of trit probabilities before entropy coding.

A small windowed perceptron looks at decoder-visible context around each
trit (previous-plane reconstruction, entropy parameters, hypothetical
conditional means, raw probabilities) and emits an additive triple and a
raw temperature.  The triple is added to the raw probabilities and the sum
is pushed through a temperature-bounded softmax; a high temperature
sharpens the triple, a low one flattens it, and the entropy of the output
is monotone decreasing in the temperature.  Exact one-hot raw triples cost
no bits and are passed through untouched.

Three models are routed by distance from the deepest plane: one for the
last plane, one for the plane before it, and one shared by all coarser
planes.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .mlp import Mlp, sigmoid, train_minibatch, window_view
from .planes import entropy_bits

LN2 = float(np.log(2.0))
PROB_FLOOR = 2.0 ** -32  # matches the coder's minimum-frequency clamp

SLOT_TOP = "top"    # plane L
SLOT_PREV = "prev"  # plane L-1
SLOT_LOW = "low"    # planes <= L-2
SLOTS = (SLOT_TOP, SLOT_PREV, SLOT_LOW)


@dataclass(frozen=True)
class TemperatureBounds:
    """Open interval the softmax temperature is squashed into."""

    lo: float = 0.2
    hi: float = 5.0

    def __post_init__(self):
        if not 0.0 < self.lo < self.hi:
            raise ParameterError("bounds must satisfy 0 < lo < hi")

    def temperature(self, s):
        """Map a raw scale to (lo, hi) via a sigmoid."""
        return self.lo + (self.hi - self.lo) * sigmoid(np.asarray(s, dtype=np.float64))


@dataclass
class Modulation:
    """Additive triple and raw scale predicted for each trit."""

    delta: np.ndarray  # (3, N)
    scale: np.ndarray  # (N,)


def modulate(p, modulation, bounds):
    """Temperature softmax of (p + delta): the refined probability triple."""
    p = np.asarray(p, dtype=np.float64)
    beta = bounds.temperature(modulation.scale)
    z = beta * (p + modulation.delta)
    z = z - z.max(axis=0)  # overflow safety; softmax is shift invariant
    e = np.exp(z)
    return e / e.sum(axis=0)


def cross_entropy_bits(p_tilde, targets):
    """Per-trit code length in bits, floored at 2**-32 before the log."""
    p_tilde = np.asarray(p_tilde, dtype=np.float64)
    targets = np.asarray(targets)
    hit = p_tilde[targets, np.arange(targets.shape[0])]
    return -np.log2(np.maximum(hit, PROB_FLOOR))


def one_hot_mask(p):
    """Trits whose raw triple is exactly one-hot (they require no bits)."""
    return (np.asarray(p) == 0.0).sum(axis=0) == 2


def entropy_monotonicity_check(x, betas):
    """True iff the entropy of softmax(beta*x) is non-increasing in beta."""
    x = np.asarray(x, dtype=np.float64)
    betas = np.asarray(betas, dtype=np.float64)
    if np.any(betas <= 0):
        raise ParameterError("betas must be positive")
    if np.any(np.diff(betas) < 0):
        raise ParameterError("betas must be ascending")
    z = betas[:, None] * x[None, :]
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=1, keepdims=True)
    ent = entropy_bits(probs, axis=1)
    return bool(np.all(np.diff(ent) <= 1e-12))


@dataclass
class PlaneContext:
    """Decoder-visible inputs for refining one plane.

    Intervals are uniform within a plane, so the parent width is a scalar;
    ``midpoint`` holds each element's prefix-interval midpoint, used to
    normalize value-domain features.
    """

    recon_prev: np.ndarray  # (C, H, W) reconstruction from earlier planes
    mean: np.ndarray        # (C, H, W) field mean
    sigma: np.ndarray       # (C, H, W) field scale
    expected: np.ndarray    # (3, C, H, W) hypothetical conditional means
    probs: np.ndarray       # (3, C, H, W) raw trit probabilities
    midpoint: np.ndarray    # (C, H, W)
    width: int              # parent interval width (multiple of 3)


N_CONTEXT_CHANNELS = 9  # recon, mean, sigma, 3x expected, 3x probs


def plane_features(ctx, radius):
    """Scale-normalized context windows for every trit, (N, n_in).

    Value-domain channels are offset by the element's interval midpoint
    and divided by the parent width, so features stay O(1) across levels.
    """
    w = float(ctx.width)
    mid = ctx.midpoint.reshape(-1, 1)
    cols = []
    for ch in (ctx.recon_prev, ctx.mean, ctx.expected[0], ctx.expected[1], ctx.expected[2]):
        cols.append((window_view(ch, radius) - mid) / w)
    cols.append(window_view(ctx.sigma, radius) / w)
    for i in range(3):
        cols.append(window_view(ctx.probs[i], radius))
    return np.concatenate(cols, axis=1)


class ProbRefiner:
    """Windowed perceptron emitting (delta triple, raw scale) per trit."""

    def __init__(self, radius=2, hidden=32, bounds=TemperatureBounds(), seed=0, n_in=None):
        self.radius = radius
        # bounds travel as float32 in model blobs; round now so the
        # in-memory model and its serialized form modulate identically
        self.bounds = TemperatureBounds(
            float(np.float32(bounds.lo)), float(np.float32(bounds.hi))
        )
        side = 2 * radius + 1
        if n_in is None:
            n_in = N_CONTEXT_CHANNELS * side * side
        self.net = Mlp(n_in, hidden, 4, seed=seed)

    def features(self, ctx):
        return plane_features(ctx, self.radius)

    def modulation(self, feats):
        out = self.net.forward(feats)
        return Modulation(out[:, :3].T.copy(), out[:, 3].copy())

    def refine(self, ctx):
        """Refined triples for a plane, with one-hot passthrough: (3, N)."""
        p = ctx.probs.reshape(3, -1)
        refined = modulate(p, self.modulation(self.features(ctx)), self.bounds)
        skip = one_hot_mask(p)
        if skip.any():
            refined = np.where(skip[None, :], p, refined)
        return refined


def slot_for_level(level, depth):
    if level == depth:
        return SLOT_TOP
    if level == depth - 1:
        return SLOT_PREV
    return SLOT_LOW


@dataclass
class RefinerRouter:
    """Routes a plane level to one of the three refiner slots."""

    models: dict = field(default_factory=dict)  # slot name -> ProbRefiner

    def model_for(self, level, depth):
        return self.models.get(slot_for_level(level, depth))

    def refine_plane(self, ctx, level, depth):
        """Apply the routed model; raw probabilities when none is loaded."""
        model = self.model_for(level, depth)
        if model is None:
            return ctx.probs.reshape(3, -1).copy()
        return model.refine(ctx)


@dataclass
class RefinerTrainConfig:
    epochs: int = 30
    batch_size: int = 512
    lr: float = 1e-3
    seed: int = 0
    holdout_frac: float = 0.2
    hidden: int = 32
    radius: int = 2


def _loss_and_grads(model, feats, probs, targets):
    """Mean cross-entropy in bits and gradients for one batch."""
    n = feats.shape[0]
    out, h = model.net.forward(feats, keep_hidden=True)
    mod = Modulation(out[:, :3].T, out[:, 3])
    beta = model.bounds.temperature(mod.scale)
    x = probs + mod.delta
    z = beta * x
    z = z - z.max(axis=0)
    e = np.exp(z)
    p_tilde = e / e.sum(axis=0)

    hit = p_tilde[targets, np.arange(n)]
    loss = float(np.mean(-np.log2(np.maximum(hit, PROB_FLOOR))))

    g_z = p_tilde.copy()
    g_z[targets, np.arange(n)] -= 1.0
    g_z /= LN2 * n
    g_z[:, hit < PROB_FLOOR] = 0.0  # loss is constant where the floor binds

    sig = sigmoid(mod.scale)
    g_beta = (g_z * x).sum(axis=0)
    g_scale = g_beta * (model.bounds.hi - model.bounds.lo) * sig * (1.0 - sig)
    g_out = np.concatenate([(g_z * beta).T, g_scale[:, None]], axis=1)
    grads = model.net.backward(feats, h, g_out)
    return loss, grads


def holdout_loss(model, feats, probs, targets):
    """Mean refined cross-entropy in bits over a dataset."""
    mod = model.modulation(np.asarray(feats, dtype=np.float64))
    p_tilde = modulate(probs, mod, model.bounds)
    return float(np.mean(cross_entropy_bits(p_tilde, targets)))


def train_refiner(
    feats, probs, targets, config=RefinerTrainConfig(), bounds=TemperatureBounds(),
    groups=None,
):
    """Fit a probability refiner on (features, raw triples, true trits).

    The dataset must already exclude one-hot trits.  When ``groups`` maps
    samples to source tensors, whole tensors are held out, so neighboring
    windows never leak across the split.  Returns the model with the best
    held-out loss plus the training curve rows
    (epoch, train_bits, holdout_bits).
    """
    feats = np.asarray(feats)
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    n = feats.shape[0]
    if n == 0:
        raise ParameterError("empty training dataset")
    if probs.shape != (3, n):
        raise ParameterError("probs must be (3, n)")
    if groups is not None:
        groups = np.asarray(groups)
        uniq = np.unique(groups)
        n_hold_groups = max(1, int(round(len(uniq) * config.holdout_frac)))
        if n_hold_groups >= len(uniq):
            raise ParameterError("too few groups for a holdout split")
        hold_set = set(uniq[-n_hold_groups:].tolist())
        mask = np.array([g in hold_set for g in groups])
        hold = np.nonzero(mask)[0]
        train = np.nonzero(~mask)[0]
    else:
        rng = np.random.default_rng(config.seed)
        perm = rng.permutation(n)
        n_hold = max(1, int(n * config.holdout_frac))
        hold, train = perm[:n_hold], perm[n_hold:]
    if train.size == 0:
        raise ParameterError("dataset too small for a holdout split")

    model = ProbRefiner(
        radius=config.radius, hidden=config.hidden, bounds=bounds, seed=config.seed,
        n_in=feats.shape[1],
    )
    hold_feats = feats[hold].astype(np.float64)

    def loss_grad(idx):
        j = train[idx]
        return _loss_and_grads(
            model, feats[j].astype(np.float64), probs[:, j], targets[j]
        )

    def evaluate():
        return holdout_loss(model, hold_feats, probs[:, hold], targets[hold])

    best_net, curve = train_minibatch(
        model.net, loss_grad, evaluate, train.size,
        config.epochs, config.batch_size, config.seed,
    )
    model.net = best_net
    info = {
        "holdout_raw_bits": float(np.mean(cross_entropy_bits(probs[:, hold], targets[hold]))),
        "holdout_best_bits": float(min(row[2] for row in curve)),
        "holdout_size": int(hold.size),
    }
    info["beats_raw"] = info["holdout_best_bits"] < info["holdout_raw_bits"]
    return model, curve, info
