"""Versioned binary blobs for trained models.

Layout (little-endian):

    magic       4 bytes, "TPM1"
    version     u8
    slot        u8   (1..3 probability refiners, 4..6 latent refiners,
                      7 synthesis matrix)
    radius      u8
    n_in        u16
    n_hidden    u16  (0 for the synthesis matrix)
    n_out       u16
    n_extra     u8
    extras      n_extra float32 (temperature bounds, refit level weights)
    n_weights   u32
    weights     n_weights float32
    crc32       u32 over everything above

A model bundle is a directory of these blobs under fixed file names.  The
stream header binds the probability-refiner set (it shapes the bitstream)
through a 64-bit checksum of the serialized blobs; latent refiners and the
synthesis matrix only shape reconstruction quality, so they are not bound.
"""

import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ParseError
from .latent_refine import BANDS, LatentRefiner, RefineBands
from .rate_refine import SLOTS, ProbRefiner, RefinerRouter, TemperatureBounds
from .transform import SynthesisWeights

MAGIC = b"TPM1"
VERSION = 1

_HEAD = struct.Struct("<4sBBBHHHB")

RATE_SLOT_IDS = {"top": 1, "prev": 2, "low": 3}
LATENT_SLOT_IDS = {"fine": 4, "mid": 5, "low": 6}
SYNTHESIS_SLOT_ID = 7

RATE_FILES = {slot: f"rate_{slot}.tpm" for slot in SLOTS}
LATENT_FILES = {band: f"latent_{band}.tpm" for band in BANDS}
SYNTHESIS_FILE = "synthesis.tpm"


@dataclass
class ModelBlob:
    slot: int
    radius: int
    dims: tuple  # (n_in, n_hidden, n_out)
    extras: np.ndarray
    weights: np.ndarray


def pack_blob(blob):
    extras = np.asarray(blob.extras, dtype="<f4")
    weights = np.asarray(blob.weights, dtype="<f4")
    if extras.size > 0xFF:
        raise ParameterError("too many extras")
    out = bytearray()
    out += _HEAD.pack(
        MAGIC, VERSION, blob.slot, blob.radius,
        blob.dims[0], blob.dims[1], blob.dims[2], extras.size,
    )
    out += extras.tobytes()
    out += struct.pack("<I", weights.size)
    out += weights.tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


def unpack_blob(data):
    if len(data) < _HEAD.size + 8:
        raise ParseError("model blob too short")
    magic, version, slot, radius, n_in, n_hidden, n_out, n_extra = _HEAD.unpack_from(
        data, 0
    )
    if magic != MAGIC:
        raise ParseError("bad model magic")
    if version != VERSION:
        raise ParseError(f"unsupported model version {version}")
    off = _HEAD.size
    if len(data) < off + 4 * n_extra + 4:
        raise ParseError("model blob truncated in extras")
    extras = np.frombuffer(data, dtype="<f4", count=n_extra, offset=off).copy()
    off += 4 * n_extra
    (n_weights,) = struct.unpack_from("<I", data, off)
    off += 4
    if len(data) != off + 4 * n_weights + 4:
        raise ParseError("model blob length mismatch")
    weights = np.frombuffer(data, dtype="<f4", count=n_weights, offset=off).copy()
    off += 4 * n_weights
    (crc,) = struct.unpack_from("<I", data, off)
    if crc != zlib.crc32(data[:off]):
        raise ParseError("model blob checksum mismatch")
    return ModelBlob(slot, radius, (n_in, n_hidden, n_out), extras, weights)


def prob_refiner_blob(slot_name, model):
    return ModelBlob(
        slot=RATE_SLOT_IDS[slot_name],
        radius=model.radius,
        dims=model.net.dims,
        extras=np.array([model.bounds.lo, model.bounds.hi], dtype=np.float32),
        weights=model.net.flat(),
    )


def latent_refiner_blob(band, model):
    return ModelBlob(
        slot=LATENT_SLOT_IDS[band],
        radius=model.radius,
        dims=model.net.dims,
        extras=np.zeros(0, dtype=np.float32),
        weights=model.net.flat(),
    )


def synthesis_blob(weights):
    m = np.asarray(weights.matrix)
    return ModelBlob(
        slot=SYNTHESIS_SLOT_ID,
        radius=0,
        dims=(m.shape[1], 0, m.shape[0]),
        extras=np.asarray(weights.level_weights, dtype=np.float32),
        weights=m.ravel(),
    )


def _prob_refiner_from(blob):
    bounds = TemperatureBounds(float(blob.extras[0]), float(blob.extras[1]))
    model = ProbRefiner(
        radius=blob.radius, hidden=blob.dims[1], bounds=bounds, n_in=blob.dims[0]
    )
    model.net.set_flat(blob.weights.astype(np.float64))
    return model


def _latent_refiner_from(blob):
    model = LatentRefiner(radius=blob.radius, hidden=blob.dims[1])
    if model.net.dims != blob.dims:
        raise ParseError("latent refiner dims disagree with radius")
    model.net.set_flat(blob.weights.astype(np.float64))
    return model


def _synthesis_from(blob):
    matrix = blob.weights.astype(np.float64).reshape(blob.dims[2], blob.dims[0])
    return SynthesisWeights(matrix, blob.extras.astype(np.float64))


@dataclass
class ModelBundle:
    """All trained models a codec run may use."""

    rate: RefinerRouter = field(default_factory=RefinerRouter)
    latent: RefineBands = field(default_factory=RefineBands)
    synthesis: SynthesisWeights | None = None

    def rate_checksum(self):
        """u64 binding of the probability-refiner set; 0 when empty.

        Hashes the blob bodies with their trailing CRC fields stripped:
        a CRC over self-checksummed blocks collapses to a constant.
        """
        blobs = b"".join(
            pack_blob(prob_refiner_blob(slot, self.rate.models[slot]))[:-4]
            for slot in SLOTS
            if slot in self.rate.models
        )
        if not blobs:
            return 0
        return (len(blobs) << 32) | zlib.crc32(blobs)

    @property
    def has_rate_models(self):
        return bool(self.rate.models)


def save_bundle(directory, bundle):
    os.makedirs(directory, exist_ok=True)
    written = []
    for slot, model in bundle.rate.models.items():
        path = os.path.join(directory, RATE_FILES[slot])
        with open(path, "wb") as fh:
            fh.write(pack_blob(prob_refiner_blob(slot, model)))
        written.append(path)
    for band, model in bundle.latent.models.items():
        path = os.path.join(directory, LATENT_FILES[band])
        with open(path, "wb") as fh:
            fh.write(pack_blob(latent_refiner_blob(band, model)))
        written.append(path)
    if bundle.synthesis is not None:
        path = os.path.join(directory, SYNTHESIS_FILE)
        with open(path, "wb") as fh:
            fh.write(pack_blob(synthesis_blob(bundle.synthesis)))
        written.append(path)
    return written


def load_bundle(directory):
    """Load whatever model files exist in a bundle directory."""
    if not os.path.isdir(directory):
        raise ParseError(f"model directory not found: {directory}")
    bundle = ModelBundle()
    for slot, name in RATE_FILES.items():
        path = os.path.join(directory, name)
        if os.path.exists(path):
            blob = _read(path)
            if blob.slot != RATE_SLOT_IDS[slot]:
                raise ParseError(f"{name} carries slot id {blob.slot}")
            bundle.rate.models[slot] = _prob_refiner_from(blob)
    for band, name in LATENT_FILES.items():
        path = os.path.join(directory, name)
        if os.path.exists(path):
            blob = _read(path)
            if blob.slot != LATENT_SLOT_IDS[band]:
                raise ParseError(f"{name} carries slot id {blob.slot}")
            bundle.latent.models[band] = _latent_refiner_from(blob)
    path = os.path.join(directory, SYNTHESIS_FILE)
    if os.path.exists(path):
        blob = _read(path)
        if blob.slot != SYNTHESIS_SLOT_ID:
            raise ParseError("synthesis file carries a wrong slot id")
        bundle.synthesis = _synthesis_from(blob)
    return bundle


def _read(path):
    with open(path, "rb") as fh:
        return unpack_blob(fh.read())
