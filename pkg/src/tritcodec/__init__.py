"""Progressive trit-plane codec for Gaussian latent tensors.

A latent tensor under a Gaussian prior is quantized, sliced into base-3
digit planes, and entropy-coded most-significant plane first with
per-trit probability triples; the stream can be cut at any chunk boundary
and every prefix decodes to a conditional-mean reconstruction.  Small
trainable context models refine the probabilities before coding (fewer
bits) and the partial latents after decoding (less distortion), and a
linear image path with a refittable synthesis matrix turns the codec into
a progressive image coder at desk scale.
"""

from .container import Container, StreamHeader
from .errors import (
    DataError,
    DecodeError,
    ModelMismatchError,
    ParameterError,
    ParseError,
    TritcodecError,
)
from .latent_refine import LatentRefiner, RefineBands, frobenius_error
from .metrics import RdCurve, RdPoint, bd_rate, psnr, sweep
from .modelio import ModelBundle, load_bundle, save_bundle
from .pipeline import (
    CodecConfig,
    DecodeResult,
    EncodeResult,
    SyntheticSpec,
    decode_at,
    encode_image,
    encode_latents,
    encode_source,
    generate_latents,
    retrain_decoder,
)
from .planes import DecodePosition, reconstruct_partial, slice_planes
from .prior import GaussianField, bin_pmf, choose_depth, interval_stats, quantize_center
from .rate_refine import ProbRefiner, RefinerRouter, TemperatureBounds, modulate
from .transform import LinearTransform, SynthesisWeights, read_pnm, write_pnm

__version__ = "0.1.0"

__all__ = [
    "CodecConfig",
    "Container",
    "DataError",
    "DecodeError",
    "DecodePosition",
    "DecodeResult",
    "EncodeResult",
    "GaussianField",
    "LatentRefiner",
    "LinearTransform",
    "ModelBundle",
    "ModelMismatchError",
    "ParameterError",
    "ParseError",
    "ProbRefiner",
    "RdCurve",
    "RdPoint",
    "RefineBands",
    "RefinerRouter",
    "StreamHeader",
    "SyntheticSpec",
    "SynthesisWeights",
    "TemperatureBounds",
    "TritcodecError",
    "bd_rate",
    "bin_pmf",
    "choose_depth",
    "decode_at",
    "encode_image",
    "encode_latents",
    "encode_source",
    "frobenius_error",
    "generate_latents",
    "interval_stats",
    "load_bundle",
    "modulate",
    "psnr",
    "quantize_center",
    "read_pnm",
    "reconstruct_partial",
    "retrain_decoder",
    "save_bundle",
    "slice_planes",
    "sweep",
    "write_pnm",
    "__version__",
]
