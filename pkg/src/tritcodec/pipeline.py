"""End-to-end encode and budget-limited decode.

The encoder quantizes a latent tensor against its Gaussian field, slices
trit planes, refines each plane's probability triples through the routed
context model, orders trits by rate-distortion priority, and entropy-codes
them into independently flushed chunks.  The decoder replays exactly the
same state machine from the header parameters and decoded planes, so any
whole-chunk prefix of the stream reconstructs deterministically; the
partial latent is then optionally refined by the distortion context model
and, in image mode, synthesized back to pixels.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import coder
from .config import KvReader, load_kv
from .container import (
    ChunkRecord,
    Container,
    MODE_IMAGE_GRAY,
    MODE_IMAGE_RGB,
    MODE_LATENT,
    StreamHeader,
)
from .errors import DataError, DecodeError, ModelMismatchError, ParameterError
from .planes import (
    DecodePosition,
    PrefixState,
    conditional_mean,
    plane_stats,
    rd_order,
    slice_planes,
)
from .prior import MAX_DEPTH, GaussianField, grid_half, quantize_center
from .rate_refine import PlaneContext, TemperatureBounds
from .transform import LinearTransform, refit_synthesis

ORDER_PRIORITY = "priority"
ORDER_RASTER = "raster"
PRIORITY_REFINED = "refined"
PRIORITY_RAW = "raw"


@dataclass
class SyntheticSpec:
    """Seeded separable AR(1) Gaussian latent source."""

    channels: int
    height: int
    width: int
    rho: tuple = (0.9, 0.9)
    sigma: np.ndarray = None
    seed: int = 0

    def __post_init__(self):
        if min(self.channels, self.height, self.width) < 1:
            raise ParameterError("dimensions must be positive")
        if any(abs(r) >= 1.0 for r in self.rho):
            raise ParameterError("|rho| must be < 1")
        if self.sigma is None:
            self.sigma = np.geomspace(2.0, 20.0, self.channels)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.sigma.shape != (self.channels,):
            raise ParameterError("sigma must hold one value per channel")
        if np.any(self.sigma <= 0):
            raise ParameterError("sigma must be positive")


def generate_latents(spec):
    """AR(1)-correlated Gaussian tensor plus its true per-channel field."""
    rng = np.random.default_rng(spec.seed)
    x = rng.standard_normal((spec.channels, spec.height, spec.width))
    for axis, rho in zip((1, 2), spec.rho):
        if rho == 0.0:
            continue
        mix = np.sqrt(1.0 - rho * rho)
        x = np.swapaxes(x, 1, axis)
        for i in range(1, x.shape[1]):
            x[:, i] = rho * x[:, i - 1] + mix * x[:, i]
        x = np.swapaxes(x, 1, axis)
    y = x * spec.sigma[:, None, None]
    field = GaussianField(np.zeros(spec.channels), spec.sigma.copy())
    return y, field


@dataclass
class CodecConfig:
    source: str = "latent"          # latent | image
    depth_cap: int = MAX_DEPTH
    chunk_size: int = coder.DEFAULT_CHUNK_SIZE
    bounds: TemperatureBounds = dc_field(default_factory=TemperatureBounds)
    order: str = ORDER_PRIORITY     # priority | raster
    priority_probs: str = PRIORITY_REFINED  # refined | raw
    block: int = 8
    step: float = 4.0
    synthetic: SyntheticSpec | None = None

    def __post_init__(self):
        if self.source not in ("latent", "image"):
            raise ParameterError("source must be latent or image")
        if self.order not in (ORDER_PRIORITY, ORDER_RASTER):
            raise ParameterError("order must be priority or raster")
        if self.priority_probs not in (PRIORITY_REFINED, PRIORITY_RAW):
            raise ParameterError("priority_probs must be refined or raw")
        if not 1 <= self.depth_cap <= MAX_DEPTH:
            raise ParameterError("depth_cap out of range")
        if self.chunk_size < 1:
            raise ParameterError("chunk_size must be positive")

    @classmethod
    def from_file(cls, path):
        kv = KvReader(load_kv(path))
        source = kv.get_choice("source", "latent", ("latent", "image"))
        synthetic = None
        if source == "latent":
            channels = kv.get_int("channels", 4)
            sigma = kv.get_floats("sigma", None)
            if sigma is None:
                sigma = np.geomspace(
                    kv.get_float("sigma_lo", 2.0),
                    kv.get_float("sigma_hi", 20.0),
                    channels,
                )
            synthetic = SyntheticSpec(
                channels=channels,
                height=kv.get_int("height", 24),
                width=kv.get_int("width", 24),
                rho=(kv.get_float("rho_h", 0.9), kv.get_float("rho_w", 0.9)),
                sigma=np.asarray(sigma, dtype=np.float64),
                seed=kv.get_int("seed", 0),
            )
        return cls(
            source=source,
            depth_cap=kv.get_int("depth_cap", MAX_DEPTH),
            chunk_size=kv.get_int("chunk_size", coder.DEFAULT_CHUNK_SIZE),
            bounds=TemperatureBounds(
                kv.get_float("temp_lo", 0.2), kv.get_float("temp_hi", 5.0)
            ),
            order=kv.get_choice("order", ORDER_PRIORITY, (ORDER_PRIORITY, ORDER_RASTER)),
            priority_probs=kv.get_choice(
                "priority_probs", PRIORITY_REFINED, (PRIORITY_REFINED, PRIORITY_RAW)
            ),
            block=kv.get_int("block", 8),
            step=kv.get_float("step", 4.0),
            synthetic=synthetic,
        )

    def transform(self):
        return LinearTransform(self.block, self.step)


@dataclass
class EncodeResult:
    container: Container
    quantized: np.ndarray  # centered integer tensor
    depth: int
    clamped: int
    plane_bits: list      # payload bits per plane
    total_bytes: int

    def plane_trits(self):
        return int(np.prod(self.quantized.shape))


def _plane_context(stats, state, field_maps, width, shape):
    mean_map, sigma_map = field_maps
    mid = (state.lo + (width - 1) / 2.0).reshape(shape)
    return PlaneContext(
        recon_prev=stats.parent.mean.reshape(shape),
        mean=mean_map,
        sigma=sigma_map,
        expected=stats.thirds.mean.reshape((3,) + shape),
        probs=stats.probs.reshape((3,) + shape),
        midpoint=mid,
        width=int(width),
    )


def _plane_schedule(stats, ctx, level, depth, config, models):
    """Refined triples and the serialization order for one plane."""
    if models is not None and models.has_rate_models:
        refined = models.rate.refine_plane(ctx, level, depth)
    else:
        refined = stats.probs.copy()
    n = refined.shape[1]
    if config.order == ORDER_RASTER:
        order = np.arange(n)
    else:
        probs = refined if config.priority_probs == PRIORITY_REFINED else stats.probs
        order = rd_order(stats, probs)
    return refined, order


def encode_latents(y, field, config, models=None, mode=MODE_LATENT):
    """Encode a real latent tensor under its Gaussian field."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 3:
        raise ParameterError("latent tensor must be (C, H, W)")
    if not field.per_channel:
        raise DataError("streams carry per-channel parameters only")
    field = field.rounded_f32()
    shape = y.shape
    n = int(np.prod(shape))
    qr = quantize_center(y, field, cap=config.depth_cap)
    depth = qr.depth
    planes = slice_planes(qr.values, depth).reshape(depth, n)
    mean_map = field.mean_map(shape)
    sigma_map = field.scale_map(shape)
    sig = sigma_map.reshape(n)

    checksum = 0
    if models is not None and models.has_rate_models:
        checksum = models.rate_checksum()

    state = PrefixState(n, depth)
    records = []
    payload = bytearray()
    plane_bits = []
    for level in range(1, depth + 1):
        stats = plane_stats(state.lo, state.width, sig, depth)
        width = int(state.width[0])
        ctx = _plane_context(stats, state, (mean_map, sigma_map), width, shape)
        refined, order = _plane_schedule(stats, ctx, level, depth, config, models)
        trits = planes[level - 1][order]
        freqs = coder.quantize_probs(refined[:, order]).T
        bits = 0
        for a, b in coder.chunk_spans(n, config.chunk_size):
            data = coder.encode_chunk(trits[a:b], freqs[a:b])
            records.append(
                ChunkRecord(level, b - a, len(data), coder.chunk_checksum(data))
            )
            payload += data
            bits += 8 * len(data)
        plane_bits.append(bits)
        state.descend(planes[level - 1])

    header = StreamHeader(
        mode=mode,
        shape=shape,
        depth=depth,
        chunk_size=config.chunk_size,
        params=np.stack([field.mean, field.scale], axis=1).astype(np.float32),
        model_checksum=checksum,
    )
    container = Container(header, records, bytes(payload))
    return EncodeResult(
        container, qr.values, depth, qr.clamped, plane_bits,
        container.serialized_size(),
    )


def image_field(latents):
    """Per-channel mean/scale estimated from image-path latents."""
    mean = latents.mean(axis=(1, 2))
    scale = np.maximum(latents.std(axis=(1, 2)), 1e-3)
    return GaussianField(mean, scale)


def encode_image(image, config, models=None):
    """Encode an 8-bit (1|3, H, W) image through the linear path."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise DataError("image must be (1, H, W) or (3, H, W)")
    mode = MODE_IMAGE_GRAY if image.shape[0] == 1 else MODE_IMAGE_RGB
    latents = config.transform().analyze(image)
    return encode_latents(latents, image_field(latents), config, models, mode=mode)


def encode_source(config, models=None, image=None, seed=None):
    """Encode per the config source: synthetic latents or a given image."""
    if config.source == "image":
        if image is None:
            raise ParameterError("image source requires an input image")
        return encode_image(image, config, models)
    spec = config.synthetic
    if spec is None:
        raise ParameterError("latent source requires a synthetic spec")
    if seed is not None:
        spec = SyntheticSpec(
            spec.channels, spec.height, spec.width, spec.rho, spec.sigma.copy(), seed
        )
    y, field = generate_latents(spec)
    return encode_latents(y, field, config, models)


@dataclass
class DecodeResult:
    latent: np.ndarray          # refined centered latent tensor
    position: DecodePosition
    level: float                # fractional decode level
    bytes_used: int             # serialized size of the decoded prefix
    image: np.ndarray | None = None   # float pixels, image modes only
    mean: np.ndarray | None = None    # per-channel field mean

    @property
    def latent_uncentered(self):
        return self.latent + self.mean[:, None, None]

    def image_u8(self):
        if self.image is None:
            raise DataError("not an image-mode stream")
        return np.clip(np.round(self.image), 0, 255).astype(np.uint8)


def _chunks_for_level(container, level):
    """Chunk count whose decoded position does not exceed a fractional level."""
    n = int(np.prod(container.header.shape))
    keep = 0
    done = 0
    for i, ch in enumerate(container.chunks):
        done = done + ch.trit_count if i and ch.plane == container.chunks[i - 1].plane else ch.trit_count
        pos = (ch.plane - 1) + done / n
        if pos <= level + 1e-12:
            keep = i + 1
    return keep


def resolve_budget(container, budget):
    """Normalize a byte/level/"full" budget to a chunk-truncated container."""
    if budget is None or budget == "full":
        return container
    if isinstance(budget, str):
        if budget.startswith("level:"):
            return container.truncate_chunks(
                _chunks_for_level(container, float(budget[6:]))
            )
        try:
            budget = int(budget)
        except ValueError as exc:
            raise ParameterError(f"cannot parse budget {budget!r}") from exc
    if isinstance(budget, float):
        return container.truncate_chunks(_chunks_for_level(container, budget))
    return container.truncate_bytes(int(budget))


def _verify_models(header, models):
    if header.model_checksum == 0:
        return None  # raw-probability stream; rate models are not consulted
    if models is None or not models.has_rate_models:
        raise ModelMismatchError(
            "stream was encoded with probability models; supply the bundle"
        )
    have = models.rate_checksum()
    if have != header.model_checksum:
        raise ModelMismatchError(
            f"model checksum {have:#x} does not match stream {header.model_checksum:#x}"
        )
    return models


def decode_at(stream, budget=None, models=None, config=None):
    """Decode whole chunks within a budget and reconstruct.

    ``stream`` is a Container or serialized bytes.  ``budget`` is None or
    "full" for everything, an int byte budget, a float fractional level,
    or "level:<x>".  The decode order flags must match the encoder's
    (``config`` defaults to priority order on refined probabilities).
    """
    container = stream if isinstance(stream, Container) else Container.parse(stream)
    config = config or CodecConfig(chunk_size=container.header.chunk_size)
    rate_models = _verify_models(container.header, models)
    cut = resolve_budget(container, budget)

    header = container.header
    shape = header.shape
    n = int(np.prod(shape))
    depth = header.depth
    field = GaussianField(
        header.params[:, 0].astype(np.float64), header.params[:, 1].astype(np.float64)
    )
    mean_map = field.mean_map(shape)
    sigma_map = field.scale_map(shape)
    sig = sigma_map.reshape(n)

    state = PrefixState(n, depth)
    chunk_iter = list(cut.chunk_payloads())
    idx = 0
    level_done = 0
    trailing = 0
    for level in range(1, depth + 1):
        if idx >= len(chunk_iter):
            break
        if chunk_iter[idx][0].plane != level:
            continue  # plane carried no chunks (cannot happen at n >= 1)
        stats = plane_stats(state.lo, state.width, sig, depth)
        width = int(state.width[0])
        ctx = _plane_context(stats, state, (mean_map, sigma_map), width, shape)
        refined, order = _plane_schedule(stats, ctx, level, depth, config, rate_models)
        freqs = coder.quantize_probs(refined[:, order]).T
        plane_trits = np.full(n, -1, dtype=np.int8)
        got = 0
        while idx < len(chunk_iter) and chunk_iter[idx][0].plane == level:
            rec, data = chunk_iter[idx]
            if coder.chunk_checksum(data) != rec.checksum:
                raise DecodeError(f"chunk {idx} failed its checksum")
            symbols = coder.decode_chunk(data, freqs[got : got + rec.trit_count])
            plane_trits[order[got : got + rec.trit_count]] = symbols
            got += rec.trit_count
            idx += 1
        if got == n:
            state.descend(plane_trits)
            level_done = level
        else:
            take = order[:got]
            state.descend(plane_trits[take], take)
            trailing = got
            break
    if trailing and idx < len(chunk_iter):
        raise DecodeError("chunks follow a partially covered plane")

    pos = DecodePosition(level_done, trailing)
    recon = conditional_mean(state.lo, state.width, sig, depth).reshape(shape)
    lam = pos.as_float(n)
    if models is not None:
        recon = models.latent.refine(
            recon, mean_map, sigma_map, state.width.reshape(shape), lam, depth
        )
    image = None
    if header.mode in (MODE_IMAGE_GRAY, MODE_IMAGE_RGB):
        transform = LinearTransform(config.block, config.step)
        weights = models.synthesis if models is not None else None
        image = transform.synthesize(recon + mean_map, weights)
    return DecodeResult(
        latent=recon,
        position=pos,
        level=lam,
        bytes_used=cut.serialized_size(),
        image=image,
        mean=field.mean,
    )


def replay_partial_latents(result, config, levels, models=None):
    """Encoder-side partial reconstructions at integer levels.

    Returns {level: refined centered latent}; used by decoder refitting
    and evaluation without paying for entropy decoding.
    """
    container = result.container
    shape = container.header.shape
    n = int(np.prod(shape))
    depth = container.header.depth
    field = GaussianField(
        container.header.params[:, 0].astype(np.float64),
        container.header.params[:, 1].astype(np.float64),
    )
    mean_map = field.mean_map(shape)
    sigma_map = field.scale_map(shape)
    sig = sigma_map.reshape(n)
    planes = slice_planes(result.quantized, depth).reshape(depth, n)

    wanted = sorted({int(l) for l in levels})
    out = {}
    state = PrefixState(n, depth)
    for level in range(0, depth + 1):
        if level > 0:
            state.descend(planes[level - 1])
        if level in wanted:
            recon = conditional_mean(state.lo, state.width, sig, depth).reshape(shape)
            if models is not None:
                recon = models.latent.refine(
                    recon, mean_map, sigma_map, state.width.reshape(shape),
                    float(level), depth,
                )
            out[level] = recon
    return out


DEFAULT_REFIT_WEIGHTS = (100.0, 100.0, 1.0, 1.0, 1.0)  # levels L, L-1, ..., L-4


def retrain_decoder(images, config, models=None, level_weights=DEFAULT_REFIT_WEIGHTS, ridge=1e-6):
    """Weighted least-squares refit of the synthesis matrix.

    ``images`` are (1|3, H, W) uint8 arrays.  For each, partial latents at
    the top ``len(level_weights)`` integer levels (refined when models are
    given) become synthesis inputs; the refit minimizes the level-weighted
    squared pixel error in closed form.  Returns (SynthesisWeights, info).
    """
    if config.source != "image":
        raise ParameterError("decoder refitting requires the image path")
    transform = config.transform()
    b2 = config.block ** 2
    by_offset = {}  # keyed by distance from the top level, aligning weights
    for image in images:
        image = np.asarray(image, dtype=np.float64)
        res = encode_image(image.astype(np.uint8), config, models)
        depth = res.depth
        levels = [max(depth - i, 0) for i in range(len(level_weights))]
        partials = replay_partial_latents(res, config, levels, models)
        field = GaussianField(
            res.container.header.params[:, 0].astype(np.float64),
            res.container.header.params[:, 1].astype(np.float64),
        )
        mean_map = field.mean_map(res.quantized.shape)
        n_colors = image.shape[0]
        x_rows = np.concatenate(
            [transform.block_vectors(image[p]) for p in range(n_colors)]
        )
        for offset, (weight, level) in enumerate(zip(level_weights, levels)):
            lat = (partials[level] + mean_map) * config.step
            z_rows = np.concatenate(
                [
                    lat[p * b2 : (p + 1) * b2].reshape(b2, -1).T
                    for p in range(n_colors)
                ]
            )
            if offset in by_offset:
                _, zs, xs = by_offset[offset]
                by_offset[offset] = (
                    weight,
                    np.concatenate([zs, z_rows]),
                    np.concatenate([xs, x_rows]),
                )
            else:
                by_offset[offset] = (weight, z_rows, x_rows)

    weights, condition = refit_synthesis(by_offset.values(), config.block, ridge)
    info = {"condition": condition, "offsets": sorted(by_offset)}
    return weights, info
