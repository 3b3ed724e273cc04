"""Dataset assembly for the context models.

Builders walk the encoder's plane schedule over a set of latent tensors
(synthetic or image-path) and collect per-trit feature windows, raw
probability triples, and ground-truth trits for the probability refiner,
or per-tensor decode caches for the latent refiner.  Tensors whose depth
differs from the dominant depth of the set are dropped so a slot always
trains on a consistent level geometry.
"""

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .latent_refine import _TensorCache
from .pipeline import SyntheticSpec, generate_latents, image_field
from .planes import PrefixState, plane_stats, slice_planes
from .prior import MAX_DEPTH, quantize_center
from .rate_refine import PlaneContext, one_hot_mask, plane_features, slot_for_level


@dataclass
class PreparedTensor:
    centered: np.ndarray   # y - mean, float
    planes: np.ndarray     # (L, N) int8
    mean_map: np.ndarray
    sigma_map: np.ndarray
    depth: int


def prepare_tensor(y, field, cap=MAX_DEPTH):
    field = field.rounded_f32()
    y = np.asarray(y, dtype=np.float64)
    qr = quantize_center(y, field, cap=cap)
    mean_map = field.mean_map(y.shape)
    sigma_map = field.scale_map(y.shape)
    planes = slice_planes(qr.values, qr.depth).reshape(qr.depth, y.size)
    return PreparedTensor(y - mean_map, planes, mean_map, sigma_map, qr.depth)


def dominant_depth(prepared):
    counts = Counter(p.depth for p in prepared)
    return counts.most_common(1)[0][0]


def synthetic_tensors(spec, count, seed0=0):
    """Seeded family of AR(1) tensors sharing the spec's geometry."""
    out = []
    for i in range(count):
        s = SyntheticSpec(
            spec.channels, spec.height, spec.width, spec.rho, spec.sigma.copy(),
            seed=seed0 + i,
        )
        out.append(generate_latents(s))
    return out


def image_tensors(images, config):
    """(latents, field) pairs for the linear image path."""
    transform = config.transform()
    out = []
    for image in images:
        latents = transform.analyze(np.asarray(image))
        out.append((latents, image_field(latents)))
    return out


def rate_training_arrays(
    tensors, slot, radius=2, cap=MAX_DEPTH, max_per_plane=None, seed=0,
    with_groups=False,
):
    """(features, probs, targets[, groups]) for one refiner slot.

    One-hot trits are excluded (they cost no bits and are passed through
    at inference).  ``max_per_plane`` subsamples each plane's collection
    deterministically to bound memory; ``with_groups`` also returns the
    source-tensor index per sample for leak-free holdout splits.
    """
    prepared = [prepare_tensor(y, f, cap) for y, f in tensors]
    depth = dominant_depth(prepared)
    prepared = [p for p in prepared if p.depth == depth]
    rng = np.random.default_rng(seed)
    feats, probs, targets, groups = [], [], [], []
    for tensor_index, prep in enumerate(prepared):
        shape = prep.mean_map.shape
        n = prep.planes.shape[1]
        sig = prep.sigma_map.reshape(n)
        state = PrefixState(n, depth)
        for level in range(1, depth + 1):
            if slot_for_level(level, depth) == slot:
                stats = plane_stats(state.lo, state.width, sig, depth)
                width = int(state.width[0])
                mid = (state.lo + (width - 1) / 2.0).reshape(shape)
                ctx = PlaneContext(
                    recon_prev=stats.parent.mean.reshape(shape),
                    mean=prep.mean_map,
                    sigma=prep.sigma_map,
                    expected=stats.thirds.mean.reshape((3,) + shape),
                    probs=stats.probs.reshape((3,) + shape),
                    midpoint=mid,
                    width=width,
                )
                keep = np.nonzero(~one_hot_mask(stats.probs))[0]
                if max_per_plane is not None and keep.size > max_per_plane:
                    keep = keep[rng.permutation(keep.size)[:max_per_plane]]
                    keep.sort()
                if keep.size:
                    f = plane_features(ctx, radius)[keep]
                    feats.append(f.astype(np.float32))
                    probs.append(stats.probs[:, keep])
                    targets.append(prep.planes[level - 1][keep])
                    groups.append(np.full(keep.size, tensor_index, dtype=np.int32))
            state.descend(prep.planes[level - 1])
    if not feats:
        raise ParameterError(f"slot {slot!r} collected no samples")
    out = (
        np.concatenate(feats),
        np.concatenate(probs, axis=1),
        np.concatenate(targets).astype(np.int64),
    )
    if with_groups:
        return out + (np.concatenate(groups),)
    return out


def latent_training_caches(tensors, cap=MAX_DEPTH):
    """Decode-replay caches for latent-refiner training."""
    prepared = [prepare_tensor(y, f, cap) for y, f in tensors]
    depth = dominant_depth(prepared)
    out = []
    for prep in prepared:
        if prep.depth != depth:
            continue
        out.append(
            _TensorCache(prep.centered, prep.sigma_map, prep.mean_map, prep.depth)
        )
    return out
