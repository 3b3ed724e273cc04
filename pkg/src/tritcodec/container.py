"""Self-describing bitstream container: header, chunk table, payload.

Little-endian layout:

    magic          4 bytes, "CTC1"
    version        u8
    mode           u8   (0 latent, 1 grayscale image, 2 RGB image)
    C, H, W        u16 each
    L              u8   (trit-plane depth)
    chunk_size     u32  (trits per chunk)
    param block    C pairs of (mean f32, scale f32)
    model checksum u64  (0 when no probability models were used)
    chunk count    u32
    chunk table    per chunk: plane u8, trit-count u32, byte-length u32,
                   checksum u16
    payload        concatenated chunk bytes

Any prefix of the chunk sequence is decodable, so a stream can be cut at
any chunk boundary; :meth:`Container.truncate_bytes` rebuilds a valid
shorter container for a byte budget.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ParameterError, ParseError
from .prior import MAX_DEPTH

MAGIC = b"CTC1"
VERSION = 1

MODE_LATENT = 0
MODE_IMAGE_GRAY = 1
MODE_IMAGE_RGB = 2
_MODES = (MODE_LATENT, MODE_IMAGE_GRAY, MODE_IMAGE_RGB)

_FIXED = struct.Struct("<4sBBHHHBI")
_TAIL = struct.Struct("<QI")
_CHUNK = struct.Struct("<BIIH")


@dataclass
class ChunkRecord:
    plane: int        # 1-based trit-plane level
    trit_count: int
    byte_length: int
    checksum: int


@dataclass
class StreamHeader:
    mode: int
    shape: tuple     # (C, H, W)
    depth: int
    chunk_size: int
    params: np.ndarray  # (C, 2) float32: per-channel mean, scale
    model_checksum: int = 0
    version: int = VERSION

    def __post_init__(self):
        c, h, w = self.shape
        if self.mode not in _MODES:
            raise ParameterError(f"unknown mode {self.mode}")
        if min(c, h, w) < 1 or max(c, h, w) > 0xFFFF:
            raise ParameterError("dimensions must fit u16 and be positive")
        if not 1 <= self.depth <= MAX_DEPTH:
            raise ParameterError("depth out of range")
        if self.chunk_size < 1:
            raise ParameterError("chunk_size must be >= 1")
        params = np.asarray(self.params, dtype=np.float32)
        if params.shape != (c, 2):
            raise ParameterError("param block must be (C, 2)")
        if np.any(~np.isfinite(params)) or np.any(params[:, 1] <= 0):
            raise ParameterError("param block must be finite with positive scales")
        self.params = params


def header_size(channels):
    return _FIXED.size + 8 * channels + _TAIL.size


@dataclass
class Container:
    header: StreamHeader
    chunks: list = field(default_factory=list)
    payload: bytes = b""

    def serialized_size(self, n_chunks=None):
        """Byte length of the stream when keeping the first n chunks."""
        if n_chunks is None:
            n_chunks = len(self.chunks)
        body = sum(ch.byte_length for ch in self.chunks[:n_chunks])
        return header_size(self.header.shape[0]) + _CHUNK.size * n_chunks + body

    def serialize(self):
        h = self.header
        c, hh, w = h.shape
        out = bytearray()
        out += _FIXED.pack(MAGIC, h.version, h.mode, c, hh, w, h.depth, h.chunk_size)
        out += h.params.astype("<f4").tobytes()
        out += _TAIL.pack(h.model_checksum, len(self.chunks))
        for ch in self.chunks:
            out += _CHUNK.pack(ch.plane, ch.trit_count, ch.byte_length, ch.checksum)
        out += self.payload
        return bytes(out)

    @classmethod
    def parse(cls, data):
        if len(data) < _FIXED.size:
            raise ParseError("stream shorter than the fixed header")
        magic, version, mode, c, hh, w, depth, chunk_size = _FIXED.unpack_from(data, 0)
        if magic != MAGIC:
            raise ParseError("bad magic")
        if version != VERSION:
            raise ParseError(f"unsupported version {version}")
        if mode not in _MODES:
            raise ParseError(f"unknown mode {mode}")
        if min(c, hh, w) < 1:
            raise ParseError("zero dimension")
        if not 1 <= depth <= MAX_DEPTH:
            raise ParseError("depth out of range")
        if chunk_size < 1:
            raise ParseError("zero chunk size")
        off = _FIXED.size
        if len(data) < off + 8 * c + _TAIL.size:
            raise ParseError("stream truncated inside the header")
        params = np.frombuffer(data, dtype="<f4", count=2 * c, offset=off)
        params = params.reshape(c, 2).astype(np.float32)
        if np.any(~np.isfinite(params)) or np.any(params[:, 1] <= 0):
            raise ParseError("invalid entropy parameters")
        off += 8 * c
        model_checksum, n_chunks = _TAIL.unpack_from(data, off)
        off += _TAIL.size
        if len(data) < off + _CHUNK.size * n_chunks:
            raise ParseError("stream truncated inside the chunk table")
        n_elems = c * hh * w
        chunks = []
        plane_totals = {}
        for _ in range(n_chunks):
            plane, trit_count, byte_length, checksum = _CHUNK.unpack_from(data, off)
            off += _CHUNK.size
            if not 1 <= plane <= depth:
                raise ParseError("chunk plane outside the depth range")
            if trit_count > n_elems or trit_count == 0:
                raise ParseError("chunk trit count out of range")
            if chunks and plane < chunks[-1].plane:
                raise ParseError("chunk table planes out of order")
            plane_totals[plane] = plane_totals.get(plane, 0) + trit_count
            if plane_totals[plane] > n_elems:
                raise ParseError("plane trit total exceeds the tensor")
            chunks.append(ChunkRecord(plane, trit_count, byte_length, checksum))
        payload = data[off:]
        if len(payload) != sum(ch.byte_length for ch in chunks):
            raise ParseError("payload length disagrees with the chunk table")
        header = StreamHeader(
            mode=mode,
            shape=(c, hh, w),
            depth=depth,
            chunk_size=chunk_size,
            params=params,
            model_checksum=model_checksum,
            version=version,
        )
        return cls(header, chunks, payload)

    def chunk_payloads(self):
        """Iterate (record, bytes) pairs."""
        off = 0
        for ch in self.chunks:
            yield ch, self.payload[off : off + ch.byte_length]
            off += ch.byte_length

    def boundaries(self):
        """Serialized sizes at every chunk boundary, k = 0..n chunks."""
        return [self.serialized_size(k) for k in range(len(self.chunks) + 1)]

    def truncate_chunks(self, n_chunks):
        """Container holding only the first n chunks."""
        n_chunks = max(0, min(n_chunks, len(self.chunks)))
        body = sum(ch.byte_length for ch in self.chunks[:n_chunks])
        return Container(self.header, list(self.chunks[:n_chunks]), self.payload[:body])

    def truncate_bytes(self, budget):
        """Largest whole-chunk prefix whose serialized size fits ``budget``.

        The budget covers the full stream including header and table.  A
        budget below the header-only size raises, since no valid stream
        can be written.
        """
        sizes = self.boundaries()
        if budget < sizes[0]:
            raise DataError(
                f"budget {budget} is below the header-only size {sizes[0]}"
            )
        keep = max(k for k, size in enumerate(sizes) if size <= budget)
        return self.truncate_chunks(keep)
